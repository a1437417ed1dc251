//! Control-image codec.
//!
//! Image layout: every CONTROL field serialized in plan order (nested
//! arrays of compounds contribute their `u32` count followed by each
//! element's control fields), then one `u32` element count per DATA
//! instance, in the same depth-first order. DATA bytes never appear.

use std::borrow::Cow;

use super::full::{deserialize_field, packed_count, serialize_field};
use super::{put_u32_len, Reader, WireError};
use crate::schema::{plan_layout, ClassificationPlan, DataInstance, DataSegment, Repeat, Step, StepClass};
use crate::value::Value;

/// The serialized control part of one message.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ControlImage {
    bytes: Vec<u8>,
    instances: Vec<DataInstance>,
}

impl ControlImage {
    pub fn as_bytes(&self) -> &[u8] {
        &self.bytes
    }

    pub fn into_bytes(self) -> Vec<u8> {
        self.bytes
    }

    pub fn len(&self) -> usize {
        self.bytes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.bytes.is_empty()
    }

    /// The DATA instances whose counts were written, in image order.
    pub fn instances(&self) -> &[DataInstance] {
        &self.instances
    }
}

enum Lengths<'l> {
    /// Counts come from the `Packed` values in the message.
    FromValue,
    /// Counts were declared up front; DATA fields of the value are ignored.
    Declared { lengths: &'l [u64], next: usize },
}

struct Encoder<'l> {
    out: Vec<u8>,
    instances: Vec<DataInstance>,
    lengths: Lengths<'l>,
}

fn mismatch(path: &str, expected: &str) -> WireError {
    WireError::TypeMismatch { path: path.to_owned(), expected: expected.to_owned() }
}

impl Encoder<'_> {
    fn steps(&mut self, steps: &[Step], value: &Value<'_>, prefix: &str) -> Result<(), WireError> {
        let Value::Message(fields) = value else {
            return Err(mismatch(prefix.trim_end_matches('.'), "message"));
        };
        if fields.len() != steps.len() {
            return Err(mismatch(prefix.trim_end_matches('.'), "message"));
        }
        for step in steps {
            let v = &fields[step.field_index];
            let path = format!("{prefix}{}", step.field.name);
            match &step.class {
                StepClass::Control => serialize_field(v, &step.field.ty, &path, &mut self.out)?,
                StepClass::Data { element_size } => {
                    let count = match &mut self.lengths {
                        Lengths::FromValue => match v {
                            Value::Packed(bytes) => packed_count(bytes, *element_size, &path)? as u64,
                            _ => return Err(mismatch(&path, &step.field.ty.to_string())),
                        },
                        Lengths::Declared { lengths, next } => {
                            let n = *lengths.get(*next).ok_or(WireError::LengthCount {
                                expected: *next + 1,
                                actual: lengths.len(),
                            })?;
                            *next += 1;
                            n
                        }
                    };
                    self.instances.push(DataInstance { path, element_size: *element_size, count });
                }
                StepClass::Nested { repeat, steps: sub } => match repeat {
                    Repeat::Once => self.steps(sub, v, &format!("{path}."))?,
                    Repeat::Fixed(n) => {
                        let items = match v {
                            Value::Array(items) if items.len() == *n => items,
                            _ => return Err(mismatch(&path, &step.field.ty.to_string())),
                        };
                        for (i, item) in items.iter().enumerate() {
                            self.steps(sub, item, &format!("{path}[{i}]."))?;
                        }
                    }
                    Repeat::Var => {
                        let Value::Array(items) = v else {
                            return Err(mismatch(&path, &step.field.ty.to_string()));
                        };
                        put_u32_len(&mut self.out, items.len())?;
                        for (i, item) in items.iter().enumerate() {
                            self.steps(sub, item, &format!("{path}[{i}]."))?;
                        }
                    }
                },
            }
        }
        Ok(())
    }

    fn finish(mut self) -> Result<ControlImage, WireError> {
        if let Lengths::Declared { lengths, next } = self.lengths {
            if next != lengths.len() {
                return Err(WireError::LengthCount { expected: next, actual: lengths.len() });
            }
        }
        for inst in &self.instances {
            let n = u32::try_from(inst.count).map_err(|_| WireError::LengthOverflow(inst.count))?;
            inst.byte_len().ok_or(WireError::LengthOverflow(inst.count))?;
            self.out.extend_from_slice(&n.to_le_bytes());
        }
        Ok(ControlImage { bytes: self.out, instances: self.instances })
    }
}

/// Serializes the control part of `value`; DATA counts come from its
/// `Packed` fields. No DATA byte is read.
pub fn encode_control(value: &Value<'_>, plan: &ClassificationPlan) -> Result<ControlImage, WireError> {
    let mut enc = Encoder { out: Vec::new(), instances: Vec::new(), lengths: Lengths::FromValue };
    enc.steps(plan.steps(), value, "")?;
    enc.finish()
}

/// Like [`encode_control`], but DATA counts are taken from `lengths` (one
/// per instance, depth-first) and the value's DATA fields are ignored.
pub fn encode_control_with_lengths(
    value: &Value<'_>,
    plan: &ClassificationPlan,
    lengths: &[u64],
) -> Result<ControlImage, WireError> {
    let mut enc = Encoder { out: Vec::new(), instances: Vec::new(), lengths: Lengths::Declared { lengths, next: 0 } };
    enc.steps(plan.steps(), value, "")?;
    enc.finish()
}

/// DATA instances of `value` with their counts taken from `Packed` fields.
pub fn data_instances(value: &Value<'_>, plan: &ClassificationPlan) -> Result<Vec<DataInstance>, WireError> {
    Ok(encode_control(value, plan)?.instances)
}

/// Rebuilds a message from its control image. DATA fields become borrowed
/// views into `payload`, which must be exactly the block payload the image
/// describes.
pub fn decode_control<'a>(image: &[u8], plan: &ClassificationPlan, payload: &'a [u8]) -> Result<Value<'a>, WireError> {
    let mut r = Reader::new(image);
    let mut instances = Vec::new();
    let skeleton = decode_steps(plan.steps(), &mut r, "", &mut instances)?;
    for inst in &mut instances {
        inst.count = r.u32()?.into();
    }
    r.finish()?;
    let layout = plan_layout(&instances)?;
    if layout.total_payload_bytes != payload.len() as u64 {
        return Err(WireError::LayoutMismatch { expected: layout.total_payload_bytes, actual: payload.len() as u64 });
    }
    let mut value: Value<'a> = skeleton;
    let mut segments = layout.segments.iter();
    fill_steps(plan.steps(), &mut value, &mut segments, payload);
    Ok(value)
}

fn decode_steps(
    steps: &[Step],
    r: &mut Reader<'_>,
    prefix: &str,
    instances: &mut Vec<DataInstance>,
) -> Result<Value<'static>, WireError> {
    let mut fields = Vec::with_capacity(steps.len());
    for step in steps {
        let path = format!("{prefix}{}", step.field.name);
        let v = match &step.class {
            StepClass::Control => deserialize_field(r, &step.field.ty)?,
            StepClass::Data { element_size } => {
                instances.push(DataInstance { path, element_size: *element_size, count: 0 });
                Value::Packed(Cow::Borrowed(&[]))
            }
            StepClass::Nested { repeat, steps: sub } => match repeat {
                Repeat::Once => decode_steps(sub, r, &format!("{path}."), instances)?,
                Repeat::Fixed(n) => Value::Array(
                    (0..*n)
                        .map(|i| decode_steps(sub, r, &format!("{path}[{i}]."), instances))
                        .collect::<Result<_, _>>()?,
                ),
                Repeat::Var => {
                    let count = r.u32()? as usize;
                    let mut items = Vec::with_capacity(count.min(r.remaining()));
                    for i in 0..count {
                        items.push(decode_steps(sub, r, &format!("{path}[{i}]."), instances)?);
                    }
                    Value::Array(items)
                }
            },
        };
        fields.push(v);
    }
    Ok(Value::Message(fields))
}

fn fill_steps<'a>(
    steps: &[Step],
    value: &mut Value<'a>,
    segments: &mut std::slice::Iter<'_, DataSegment>,
    payload: &'a [u8],
) {
    let Value::Message(fields) = value else { unreachable!("decoder builds messages") };
    for step in steps {
        let v = &mut fields[step.field_index];
        match &step.class {
            StepClass::Control => {}
            StepClass::Data { .. } => {
                let seg = segments.next().expect("one segment per instance");
                let start = seg.offset as usize;
                *v = Value::Packed(Cow::Borrowed(&payload[start..start + seg.length as usize]));
            }
            StepClass::Nested { repeat: Repeat::Once, steps: sub } => fill_steps(sub, v, segments, payload),
            StepClass::Nested { steps: sub, .. } => {
                let Value::Array(items) = v else { unreachable!("decoder builds arrays") };
                for item in items {
                    fill_steps(sub, item, segments, payload);
                }
            }
        }
    }
}
