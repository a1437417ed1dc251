//! Dynamic message values.
//!
//! Plans are interpreted at runtime, so messages are represented as a tree
//! of [`Value`]s shaped by their [`MessageSchema`]. The representation is
//! canonical per schema:
//!
//! - compound fields are [`Value::Message`] with one entry per field;
//! - variable-length arrays of fixed-length elements are [`Value::Packed`],
//!   holding the elements in their packed little-endian layout;
//! - every other array is [`Value::Array`], element by element.
//!
//! A `Packed` value borrows from shared memory on the subscriber side and
//! owns its bytes everywhere else.

use std::borrow::Cow;

use rand::Rng;

use crate::schema::{FieldType, MessageSchema, Primitive, TypeRef};

#[derive(Debug, Clone, PartialEq)]
pub enum Value<'a> {
    Bool(bool),
    Int8(i8),
    UInt8(u8),
    Int16(i16),
    UInt16(u16),
    Int32(i32),
    UInt32(u32),
    Int64(i64),
    UInt64(u64),
    Float32(f32),
    Float64(f64),
    String(String),
    Array(Vec<Value<'a>>),
    Packed(Cow<'a, [u8]>),
    Message(Vec<Value<'a>>),
}

impl<'a> Value<'a> {
    /// The all-zero message: numbers 0, strings and variable arrays empty.
    pub fn default_for(schema: &MessageSchema) -> Value<'static> {
        Value::Message(schema.fields().iter().map(|f| Self::default_field(&f.ty)).collect())
    }

    fn default_field(ty: &FieldType) -> Value<'static> {
        match ty {
            FieldType::Single(t) => Self::default_elem(t),
            FieldType::FixedArray(t, n) => Value::Array((0..*n).map(|_| Self::default_elem(t)).collect()),
            FieldType::VarArray(t) if t.fixed_size().is_some() => Value::Packed(Cow::Owned(Vec::new())),
            FieldType::VarArray(_) => Value::Array(Vec::new()),
        }
    }

    fn default_elem(t: &TypeRef) -> Value<'static> {
        match t {
            TypeRef::Primitive(p) => Value::zero(*p),
            TypeRef::String => Value::String(String::new()),
            TypeRef::Message(m) => Self::default_for(m),
        }
    }

    pub fn zero(p: Primitive) -> Value<'static> {
        match p {
            Primitive::Bool => Value::Bool(false),
            Primitive::Int8 => Value::Int8(0),
            Primitive::UInt8 => Value::UInt8(0),
            Primitive::Int16 => Value::Int16(0),
            Primitive::UInt16 => Value::UInt16(0),
            Primitive::Int32 => Value::Int32(0),
            Primitive::UInt32 => Value::UInt32(0),
            Primitive::Int64 => Value::Int64(0),
            Primitive::UInt64 => Value::UInt64(0),
            Primitive::Float32 => Value::Float32(0.0),
            Primitive::Float64 => Value::Float64(0.0),
        }
    }

    /// Deep copy that detaches the value from any borrowed memory.
    pub fn into_owned(self) -> Value<'static> {
        match self {
            Value::Bool(v) => Value::Bool(v),
            Value::Int8(v) => Value::Int8(v),
            Value::UInt8(v) => Value::UInt8(v),
            Value::Int16(v) => Value::Int16(v),
            Value::UInt16(v) => Value::UInt16(v),
            Value::Int32(v) => Value::Int32(v),
            Value::UInt32(v) => Value::UInt32(v),
            Value::Int64(v) => Value::Int64(v),
            Value::UInt64(v) => Value::UInt64(v),
            Value::Float32(v) => Value::Float32(v),
            Value::Float64(v) => Value::Float64(v),
            Value::String(s) => Value::String(s),
            Value::Array(items) => Value::Array(items.into_iter().map(Value::into_owned).collect()),
            Value::Packed(bytes) => Value::Packed(Cow::Owned(bytes.into_owned())),
            Value::Message(fields) => Value::Message(fields.into_iter().map(Value::into_owned).collect()),
        }
    }

    pub fn as_u64(&self) -> Option<u64> {
        match *self {
            Value::UInt8(v) => Some(v.into()),
            Value::UInt16(v) => Some(v.into()),
            Value::UInt32(v) => Some(v.into()),
            Value::UInt64(v) => Some(v),
            Value::Int8(v) => u64::try_from(v).ok(),
            Value::Int16(v) => u64::try_from(v).ok(),
            Value::Int32(v) => u64::try_from(v).ok(),
            Value::Int64(v) => u64::try_from(v).ok(),
            _ => None,
        }
    }

    pub fn as_str(&self) -> Option<&str> {
        match self {
            Value::String(s) => Some(s),
            _ => None,
        }
    }

    pub fn as_bytes(&self) -> Option<&[u8]> {
        match self {
            Value::Packed(b) => Some(b),
            _ => None,
        }
    }

    pub fn as_items(&self) -> Option<&[Value<'a>]> {
        match self {
            Value::Array(v) | Value::Message(v) => Some(v),
            _ => None,
        }
    }

    /// Follows a dotted field path (`header.frame_id`, `channels[1].name`).
    pub fn at_path(&self, schema: &MessageSchema, path: &str) -> Option<&Value<'a>> {
        let idx = resolve_path(schema, path)?;
        let mut cur = self;
        for i in idx {
            cur = cur.as_items()?.get(i)?;
        }
        Some(cur)
    }

    pub fn at_path_mut(&mut self, schema: &MessageSchema, path: &str) -> Option<&mut Value<'a>> {
        let idx = resolve_path(schema, path)?;
        let mut cur = self;
        for i in idx {
            cur = match cur {
                Value::Array(v) | Value::Message(v) => v.get_mut(i)?,
                _ => return None,
            };
        }
        Some(cur)
    }
}

/// Translates a field path into child indices for [`Value::at_path`].
/// Array bounds are not checked here; the value walk does that.
pub fn resolve_path(schema: &MessageSchema, path: &str) -> Option<Vec<usize>> {
    let mut out = Vec::new();
    let mut current = schema;
    let mut parts = path.split('.').peekable();
    while let Some(part) = parts.next() {
        let (name, index) = match part.split_once('[') {
            Some((name, rest)) => (name, Some(rest.strip_suffix(']')?.parse::<usize>().ok()?)),
            None => (part, None),
        };
        let (field_idx, field) = current.field(name)?;
        out.push(field_idx);
        let elem = match (&field.ty, index) {
            (FieldType::Single(t), None) => t,
            (FieldType::FixedArray(t, _) | FieldType::VarArray(t), Some(i)) => {
                out.push(i);
                t
            }
            (FieldType::FixedArray(..) | FieldType::VarArray(_), None) if parts.peek().is_none() => return Some(out),
            _ => return None,
        };
        if parts.peek().is_some() {
            current = match elem {
                TypeRef::Message(m) => m,
                _ => return None,
            };
        }
    }
    Some(out)
}

/// Size limits for [`random_value`].
#[derive(Debug, Clone, Copy)]
pub struct RandomLimits {
    pub max_array_len: usize,
    pub max_string_len: usize,
}

impl Default for RandomLimits {
    fn default() -> Self {
        RandomLimits { max_array_len: 6, max_string_len: 12 }
    }
}

/// Generates a random message conforming to `schema`. Floats are always
/// finite so values compare equal to themselves.
pub fn random_value<R: Rng + ?Sized>(schema: &MessageSchema, rng: &mut R, limits: RandomLimits) -> Value<'static> {
    Value::Message(schema.fields().iter().map(|f| random_field(&f.ty, rng, limits)).collect())
}

fn random_field<R: Rng + ?Sized>(ty: &FieldType, rng: &mut R, limits: RandomLimits) -> Value<'static> {
    match ty {
        FieldType::Single(t) => random_elem(t, rng, limits),
        FieldType::FixedArray(t, n) => Value::Array((0..*n).map(|_| random_elem(t, rng, limits)).collect()),
        FieldType::VarArray(t) => {
            let len = rng.gen_range(0..=limits.max_array_len);
            match t.fixed_size() {
                Some(size) => {
                    // Build element-wise so floats inside stay finite.
                    let mut bytes = Vec::with_capacity(len * size as usize);
                    for _ in 0..len {
                        random_packed_elem(t, rng, &mut bytes);
                    }
                    Value::Packed(Cow::Owned(bytes))
                }
                None => Value::Array((0..len).map(|_| random_elem(t, rng, limits)).collect()),
            }
        }
    }
}

fn random_elem<R: Rng + ?Sized>(t: &TypeRef, rng: &mut R, limits: RandomLimits) -> Value<'static> {
    match t {
        TypeRef::Primitive(p) => random_primitive(*p, rng),
        TypeRef::String => {
            let len = rng.gen_range(0..=limits.max_string_len);
            Value::String((0..len).map(|_| rng.gen_range('a'..='z')).collect())
        }
        TypeRef::Message(m) => random_value(m, rng, limits),
    }
}

fn random_primitive<R: Rng + ?Sized>(p: Primitive, rng: &mut R) -> Value<'static> {
    match p {
        Primitive::Bool => Value::Bool(rng.gen()),
        Primitive::Int8 => Value::Int8(rng.gen()),
        Primitive::UInt8 => Value::UInt8(rng.gen()),
        Primitive::Int16 => Value::Int16(rng.gen()),
        Primitive::UInt16 => Value::UInt16(rng.gen()),
        Primitive::Int32 => Value::Int32(rng.gen()),
        Primitive::UInt32 => Value::UInt32(rng.gen()),
        Primitive::Int64 => Value::Int64(rng.gen()),
        Primitive::UInt64 => Value::UInt64(rng.gen()),
        Primitive::Float32 => Value::Float32(rng.gen_range(-1.0e6..1.0e6)),
        Primitive::Float64 => Value::Float64(rng.gen_range(-1.0e12..1.0e12)),
    }
}

fn random_packed_elem<R: Rng + ?Sized>(t: &TypeRef, rng: &mut R, out: &mut Vec<u8>) {
    match t {
        TypeRef::Primitive(p) => match random_primitive(*p, rng) {
            Value::Bool(v) => out.push(v as u8),
            Value::Float32(v) => out.extend_from_slice(&v.to_le_bytes()),
            Value::Float64(v) => out.extend_from_slice(&v.to_le_bytes()),
            _ => {
                for _ in 0..p.size() {
                    out.push(rng.gen());
                }
            }
        },
        TypeRef::Message(m) => {
            for f in m.fields() {
                match &f.ty {
                    FieldType::Single(t) => random_packed_elem(t, rng, out),
                    FieldType::FixedArray(t, n) => {
                        for _ in 0..*n {
                            random_packed_elem(t, rng, out);
                        }
                    }
                    FieldType::VarArray(_) => unreachable!("fixed-length message with a variable array"),
                }
            }
        }
        TypeRef::String => unreachable!("strings are never packed"),
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::schema::SchemaRegistry;
    use rand::SeedableRng;

    fn registry() -> SchemaRegistry {
        let mut r = SchemaRegistry::new();
        r.add_source("std_msgs/Header", "uint32 seq\ntime stamp\nstring frame_id").unwrap();
        r.add_source("sensor_msgs/ChannelFloat32", "string name\nfloat32[] values").unwrap();
        r.add_source("p/Cloud", "Header header\nfloat32[3] origin\nChannelFloat32[] channels").unwrap();
        r
    }

    #[test]
    fn default_shape_follows_schema() {
        let r = registry();
        let s = r.get("p/Cloud").unwrap();
        let v = Value::default_for(s);
        let Value::Message(fields) = &v else { panic!() };
        assert_eq!(fields.len(), 3);
        assert_eq!(fields[1], Value::Array(vec![Value::Float32(0.0); 3]));
        assert_eq!(fields[2], Value::Array(vec![]));
        assert_eq!(v.at_path(s, "header.stamp.secs"), Some(&Value::UInt32(0)));
    }

    #[test]
    fn path_navigation() {
        let r = registry();
        let s = r.get("p/Cloud").unwrap();
        let mut v = Value::default_for(s);
        let Some(Value::Array(ch)) = v.at_path_mut(s, "channels") else { panic!() };
        ch.push(Value::default_for(r.get("sensor_msgs/ChannelFloat32").unwrap()));
        *v.at_path_mut(s, "channels[0].name").unwrap() = Value::String("rgb".into());
        assert_eq!(v.at_path(s, "channels[0].name").and_then(Value::as_str), Some("rgb"));
        assert_eq!(v.at_path(s, "origin[2]"), Some(&Value::Float32(0.0)));
        assert!(v.at_path(s, "channels[1].name").is_none());
        assert!(v.at_path(s, "nope").is_none());
        assert!(v.at_path(s, "header[0]").is_none());
    }

    #[test]
    fn random_packed_length_is_multiple_of_element() {
        let mut r = registry();
        r.add_source("geometry_msgs/Point32", "float32 x\nfloat32 y\nfloat32 z").unwrap();
        let s = r.add_source("p/Poly", "geometry_msgs/Point32[] points").unwrap();
        let mut rng = rand::rngs::StdRng::seed_from_u64(7);
        for _ in 0..50 {
            let v = random_value(&s, &mut rng, RandomLimits::default());
            let bytes = v.at_path(&s, "points").and_then(Value::as_bytes).unwrap();
            assert_eq!(bytes.len() % 12, 0);
        }
    }
}
