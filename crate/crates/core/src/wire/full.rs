//! Classic depth-first serialization of a whole message into one buffer.
//!
//! This is the reference encoding: the control-image codec must carry the
//! same information, and the copy baseline transports it verbatim.

use std::borrow::Cow;

use super::{put_u32_len, Reader, WireError};
use crate::instrument;
use crate::schema::{FieldType, MessageSchema, Primitive, TypeRef};
use crate::value::Value;

pub fn full_serialize(value: &Value<'_>, schema: &MessageSchema) -> Result<Vec<u8>, WireError> {
    let mut out = Vec::with_capacity(schema.fixed_size_bytes().unwrap_or(64) as usize);
    serialize_message(value, schema, "", &mut out)?;
    Ok(out)
}

pub fn full_deserialize(bytes: &[u8], schema: &MessageSchema) -> Result<Value<'static>, WireError> {
    let mut r = Reader::new(bytes);
    let v = deserialize_message(&mut r, schema)?;
    r.finish()?;
    Ok(v)
}

fn mismatch(path: &str, expected: impl ToString) -> WireError {
    WireError::TypeMismatch { path: path.to_owned(), expected: expected.to_string() }
}

pub(crate) fn serialize_message(
    value: &Value<'_>,
    schema: &MessageSchema,
    prefix: &str,
    out: &mut Vec<u8>,
) -> Result<(), WireError> {
    let Value::Message(fields) = value else {
        return Err(mismatch(prefix, schema.name()));
    };
    if fields.len() != schema.fields().len() {
        return Err(mismatch(prefix, schema.name()));
    }
    for (f, v) in schema.fields().iter().zip(fields) {
        serialize_field(v, &f.ty, &format!("{prefix}{}", f.name), out)?;
    }
    Ok(())
}

pub(crate) fn serialize_field(value: &Value<'_>, ty: &FieldType, path: &str, out: &mut Vec<u8>) -> Result<(), WireError> {
    match ty {
        FieldType::Single(t) => serialize_elem(value, t, path, out),
        FieldType::FixedArray(t, n) => {
            let items = match value {
                Value::Array(items) if items.len() == *n => items,
                _ => return Err(mismatch(path, ty)),
            };
            for (i, item) in items.iter().enumerate() {
                serialize_elem(item, t, &format!("{path}[{i}]"), out)?;
            }
            Ok(())
        }
        FieldType::VarArray(t) => match (t.fixed_size(), value) {
            (Some(size), Value::Packed(bytes)) => {
                let count = packed_count(bytes, size, path)?;
                put_u32_len(out, count)?;
                out.extend_from_slice(bytes);
                instrument::record_copy(bytes.len() as u64);
                Ok(())
            }
            (None, Value::Array(items)) => {
                put_u32_len(out, items.len())?;
                for (i, item) in items.iter().enumerate() {
                    serialize_elem(item, t, &format!("{path}[{i}]"), out)?;
                }
                Ok(())
            }
            _ => Err(mismatch(path, ty)),
        },
    }
}

pub(crate) fn packed_count(bytes: &[u8], element_size: u64, path: &str) -> Result<usize, WireError> {
    if element_size == 0 {
        // Arrays of empty messages carry no bytes; their count is not recoverable.
        return if bytes.is_empty() {
            Ok(0)
        } else {
            Err(WireError::PackedLength { path: path.to_owned(), len: bytes.len(), element_size })
        };
    }
    if !(bytes.len() as u64).is_multiple_of(element_size) {
        return Err(WireError::PackedLength { path: path.to_owned(), len: bytes.len(), element_size });
    }
    Ok((bytes.len() as u64 / element_size) as usize)
}

fn serialize_elem(value: &Value<'_>, t: &TypeRef, path: &str, out: &mut Vec<u8>) -> Result<(), WireError> {
    match (t, value) {
        (TypeRef::Primitive(p), v) => serialize_primitive(v, *p, path, out),
        (TypeRef::String, Value::String(s)) => {
            put_u32_len(out, s.len())?;
            out.extend_from_slice(s.as_bytes());
            Ok(())
        }
        (TypeRef::Message(m), v) => serialize_message(v, m, &format!("{path}."), out),
        _ => Err(mismatch(path, t)),
    }
}

fn serialize_primitive(value: &Value<'_>, p: Primitive, path: &str, out: &mut Vec<u8>) -> Result<(), WireError> {
    match (p, value) {
        (Primitive::Bool, Value::Bool(v)) => out.push(*v as u8),
        (Primitive::Int8, Value::Int8(v)) => out.extend_from_slice(&v.to_le_bytes()),
        (Primitive::UInt8, Value::UInt8(v)) => out.push(*v),
        (Primitive::Int16, Value::Int16(v)) => out.extend_from_slice(&v.to_le_bytes()),
        (Primitive::UInt16, Value::UInt16(v)) => out.extend_from_slice(&v.to_le_bytes()),
        (Primitive::Int32, Value::Int32(v)) => out.extend_from_slice(&v.to_le_bytes()),
        (Primitive::UInt32, Value::UInt32(v)) => out.extend_from_slice(&v.to_le_bytes()),
        (Primitive::Int64, Value::Int64(v)) => out.extend_from_slice(&v.to_le_bytes()),
        (Primitive::UInt64, Value::UInt64(v)) => out.extend_from_slice(&v.to_le_bytes()),
        (Primitive::Float32, Value::Float32(v)) => out.extend_from_slice(&v.to_le_bytes()),
        (Primitive::Float64, Value::Float64(v)) => out.extend_from_slice(&v.to_le_bytes()),
        _ => return Err(mismatch(path, p.name())),
    }
    Ok(())
}

pub(crate) fn deserialize_message(r: &mut Reader<'_>, schema: &MessageSchema) -> Result<Value<'static>, WireError> {
    let fields = schema.fields().iter().map(|f| deserialize_field(r, &f.ty)).collect::<Result<_, _>>()?;
    Ok(Value::Message(fields))
}

pub(crate) fn deserialize_field(r: &mut Reader<'_>, ty: &FieldType) -> Result<Value<'static>, WireError> {
    match ty {
        FieldType::Single(t) => deserialize_elem(r, t),
        FieldType::FixedArray(t, n) => Ok(Value::Array((0..*n).map(|_| deserialize_elem(r, t)).collect::<Result<_, _>>()?)),
        FieldType::VarArray(t) => {
            let count = r.u32()? as u64;
            match t.fixed_size() {
                Some(size) => {
                    let len = count.checked_mul(size).ok_or(WireError::LengthOverflow(count))?;
                    let len = usize::try_from(len).map_err(|_| WireError::LengthOverflow(len))?;
                    let bytes = r.take(len)?.to_vec();
                    instrument::record_copy(bytes.len() as u64);
                    Ok(Value::Packed(Cow::Owned(bytes)))
                }
                None => {
                    // Every variable-length element is at least 4 bytes on the
                    // wire, which bounds the pre-allocation for hostile counts.
                    let cap = (count as usize).min(r.remaining() / 4);
                    let mut items = Vec::with_capacity(cap);
                    for _ in 0..count {
                        items.push(deserialize_elem(r, t)?);
                    }
                    Ok(Value::Array(items))
                }
            }
        }
    }
}

fn deserialize_elem(r: &mut Reader<'_>, t: &TypeRef) -> Result<Value<'static>, WireError> {
    Ok(match t {
        TypeRef::Primitive(p) => match p {
            Primitive::Bool => Value::Bool(r.u8()? != 0),
            Primitive::Int8 => Value::Int8(i8::from_le_bytes(r.array()?)),
            Primitive::UInt8 => Value::UInt8(r.u8()?),
            Primitive::Int16 => Value::Int16(i16::from_le_bytes(r.array()?)),
            Primitive::UInt16 => Value::UInt16(u16::from_le_bytes(r.array()?)),
            Primitive::Int32 => Value::Int32(i32::from_le_bytes(r.array()?)),
            Primitive::UInt32 => Value::UInt32(r.u32()?),
            Primitive::Int64 => Value::Int64(i64::from_le_bytes(r.array()?)),
            Primitive::UInt64 => Value::UInt64(r.u64()?),
            Primitive::Float32 => Value::Float32(f32::from_le_bytes(r.array()?)),
            Primitive::Float64 => Value::Float64(f64::from_le_bytes(r.array()?)),
        },
        TypeRef::String => Value::String(r.string()?),
        TypeRef::Message(m) => deserialize_message(r, m)?,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::schema::SchemaRegistry;
    use crate::value::{random_value, RandomLimits};
    use proptest::prelude::*;
    use rand::SeedableRng;

    fn registry() -> SchemaRegistry {
        let mut r = SchemaRegistry::new();
        r.add_source("std_msgs/Header", "uint32 seq\ntime stamp\nstring frame_id").unwrap();
        r.add_source("geometry_msgs/Point32", "float32 x\nfloat32 y\nfloat32 z").unwrap();
        r.add_source("sensor_msgs/ChannelFloat32", "string name\nfloat32[] values").unwrap();
        r.add_source("sensor_msgs/PointCloud", "Header header\ngeometry_msgs/Point32[] points\nChannelFloat32[] channels")
            .unwrap();
        r.add_source(
            "p/Everything",
            "bool b\nint8 i8\nuint8 u8\nint16 i16\nuint16 u16\nint32 i32\nuint32 u32\nint64 i64\nuint64 u64\n\
             float32 f32\nfloat64 f64\nstring s\nstring[] names\nint16[3] triple\nstring[2] pair\n\
             sensor_msgs/PointCloud cloud\nbool[] flags",
        )
        .unwrap();
        r
    }

    #[test]
    fn point32_layout() {
        let r = registry();
        let s = r.get("geometry_msgs/Point32").unwrap();
        let v = Value::Message(vec![Value::Float32(1.0), Value::Float32(2.0), Value::Float32(3.0)]);
        let bytes = full_serialize(&v, s).unwrap();
        let mut expected = Vec::new();
        for f in [1.0f32, 2.0, 3.0] {
            expected.extend_from_slice(&f.to_le_bytes());
        }
        assert_eq!(bytes, expected);
        assert_eq!(full_deserialize(&bytes, s).unwrap(), v);
    }

    #[test]
    fn empty_message_is_empty() {
        let mut r = SchemaRegistry::new();
        let s = r.add_source("std_msgs/Empty", "").unwrap();
        assert!(full_serialize(&Value::Message(vec![]), &s).unwrap().is_empty());
        assert_eq!(full_deserialize(&[], &s).unwrap(), Value::Message(vec![]));
    }

    #[test]
    fn type_mismatch_is_reported_with_path() {
        let r = registry();
        let s = r.get("geometry_msgs/Point32").unwrap();
        let v = Value::Message(vec![Value::Float32(1.0), Value::Int32(2), Value::Float32(3.0)]);
        assert_eq!(
            full_serialize(&v, s),
            Err(WireError::TypeMismatch { path: "y".into(), expected: "float32".into() })
        );
    }

    #[test]
    fn truncated_and_trailing_input() {
        let r = registry();
        let s = r.get("geometry_msgs/Point32").unwrap();
        assert!(matches!(full_deserialize(&[0u8; 11], s), Err(WireError::Truncated { .. })));
        assert_eq!(full_deserialize(&[0u8; 13], s), Err(WireError::TrailingBytes(1)));
    }

    #[test]
    fn hostile_count_does_not_allocate() {
        let r = registry();
        let s = r.get("sensor_msgs/ChannelFloat32").unwrap();
        let mut bytes = vec![0, 0, 0, 0];
        bytes.extend_from_slice(&u32::MAX.to_le_bytes());
        assert!(matches!(full_deserialize(&bytes, s), Err(WireError::Truncated { .. })));
    }

    #[test]
    fn packed_bytes_count_as_copies() {
        let r = registry();
        let s = r.get("sensor_msgs/ChannelFloat32").unwrap();
        let v = Value::Message(vec![Value::String("x".into()), Value::Packed(Cow::Owned(vec![0; 40]))]);
        let (bytes, copied) = instrument::measure(|| full_serialize(&v, s).unwrap());
        assert_eq!(copied, 40);
        let (_, copied) = instrument::measure(|| full_deserialize(&bytes, s).unwrap());
        assert_eq!(copied, 40);
    }

    proptest! {
        #[test]
        fn round_trip_random_messages(seed in any::<u64>()) {
            let r = registry();
            let mut rng = rand::rngs::StdRng::seed_from_u64(seed);
            for name in ["sensor_msgs/PointCloud", "p/Everything"] {
                let s = r.get(name).unwrap();
                let v = random_value(s, &mut rng, RandomLimits::default());
                let bytes = full_serialize(&v, s).unwrap();
                prop_assert_eq!(full_deserialize(&bytes, s).unwrap(), v);
            }
        }
    }
}
