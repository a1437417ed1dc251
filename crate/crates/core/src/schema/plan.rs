//! Partial-serialization classification and data-part layout.

use std::fmt;
use std::sync::Arc;

use thiserror::Error;

use super::{FieldDef, FieldType, MessageSchema, TypeRef};

/// Alignment of every segment offset inside a block's payload.
pub const SEGMENT_ALIGN: u64 = 8;

/// How many times a nested sub-program runs.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Repeat {
    /// A single compound field.
    Once,
    /// A fixed-size array of compounds.
    Fixed(usize),
    /// A variable-length array of compounds; the count is a control field.
    Var,
}

#[derive(Debug, Clone, PartialEq)]
pub enum StepClass {
    /// The whole field is serialized into the control image.
    Control,
    /// A variable-length array of fixed-length elements. Only the element
    /// count enters the control image; the bytes live in the data part.
    Data { element_size: u64 },
    /// A control step over a compound (or array of compounds) that has DATA
    /// descendants. `steps` runs once per element.
    Nested { repeat: Repeat, steps: Vec<Step> },
}

#[derive(Debug, Clone, PartialEq)]
pub struct Step {
    /// Schema-level path, e.g. `channels[].values`.
    pub path: String,
    /// Index of the field in its enclosing message.
    pub field_index: usize,
    pub field: FieldDef,
    pub class: StepClass,
}

impl Step {
    pub fn is_control(&self) -> bool {
        !matches!(self.class, StepClass::Data { .. })
    }
}

/// The traversal program produced by [`classify`].
///
/// Steps are in field-declaration order and there is exactly one step per
/// field of the message at each level.
#[derive(Debug, Clone, PartialEq)]
pub struct ClassificationPlan {
    schema: Arc<MessageSchema>,
    steps: Vec<Step>,
}

impl ClassificationPlan {
    pub fn schema(&self) -> &Arc<MessageSchema> {
        &self.schema
    }

    pub fn steps(&self) -> &[Step] {
        &self.steps
    }

    /// DATA steps at any depth (schema level, not per instance).
    pub fn data_step_count(&self) -> usize {
        fn count(steps: &[Step]) -> usize {
            steps
                .iter()
                .map(|s| match &s.class {
                    StepClass::Control => 0,
                    StepClass::Data { .. } => 1,
                    StepClass::Nested { steps, .. } => count(steps),
                })
                .sum()
        }
        count(&self.steps)
    }

    /// Every step in depth-first order, flattened.
    pub fn walk(&self) -> Vec<&Step> {
        fn go<'a>(steps: &'a [Step], out: &mut Vec<&'a Step>) {
            for s in steps {
                out.push(s);
                if let StepClass::Nested { steps, .. } = &s.class {
                    go(steps, out);
                }
            }
        }
        let mut out = Vec::new();
        go(&self.steps, &mut out);
        out
    }
}

impl fmt::Display for ClassificationPlan {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        fn go(steps: &[Step], depth: usize, f: &mut fmt::Formatter<'_>) -> fmt::Result {
            for s in steps {
                let pad = "  ".repeat(depth);
                match &s.class {
                    StepClass::Control => writeln!(f, "{pad}CONTROL {} : {}", s.path, s.field.ty)?,
                    StepClass::Data { element_size } => {
                        writeln!(f, "{pad}DATA    {} : {} ({element_size} B/elem)", s.path, s.field.ty)?
                    }
                    StepClass::Nested { repeat, steps } => {
                        writeln!(f, "{pad}CONTROL {} : {} {repeat:?} {{", s.path, s.field.ty)?;
                        go(steps, depth + 1, f)?;
                        writeln!(f, "{pad}}}")?;
                    }
                }
            }
            Ok(())
        }
        writeln!(f, "{}", self.schema.name())?;
        go(&self.steps, 1, f)
    }
}

/// Classifies every field of `schema` into the control or data part.
pub fn classify(schema: &Arc<MessageSchema>) -> ClassificationPlan {
    ClassificationPlan { schema: Arc::clone(schema), steps: classify_fields(schema, "") }
}

fn classify_fields(schema: &MessageSchema, prefix: &str) -> Vec<Step> {
    schema
        .fields()
        .iter()
        .enumerate()
        .map(|(field_index, field)| {
            let path = format!("{prefix}{}", field.name);
            let class = match &field.ty {
                FieldType::VarArray(elem) => match elem.fixed_size() {
                    Some(element_size) => StepClass::Data { element_size },
                    None => nested(elem, Repeat::Var, &format!("{path}[].")),
                },
                FieldType::FixedArray(elem, n) if elem.fixed_size().is_none() => {
                    nested(elem, Repeat::Fixed(*n), &format!("{path}[]."))
                }
                FieldType::Single(elem) if elem.fixed_size().is_none() => nested(elem, Repeat::Once, &format!("{path}.")),
                _ => StepClass::Control,
            };
            Step { path, field_index, field: field.clone(), class }
        })
        .collect()
}

/// Recurses into a variable-length compound. If nothing below it lands in
/// the data part the whole field stays a plain CONTROL step.
fn nested(elem: &TypeRef, repeat: Repeat, prefix: &str) -> StepClass {
    let TypeRef::Message(inner) = elem else {
        return StepClass::Control;
    };
    let steps = classify_fields(inner, prefix);
    let has_data = steps.iter().any(|s| !matches!(s.class, StepClass::Control));
    if has_data {
        StepClass::Nested { repeat, steps }
    } else {
        StepClass::Control
    }
}

/// One concrete DATA array of a message instance.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct DataInstance {
    /// Instance path such as `channels[0].values`.
    pub path: String,
    pub element_size: u64,
    pub count: u64,
}

impl DataInstance {
    pub fn byte_len(&self) -> Option<u64> {
        self.count.checked_mul(self.element_size)
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct DataSegment {
    pub path: String,
    pub offset: u64,
    pub length: u64,
}

/// Placement of a message's DATA instances inside its block payload.
#[derive(Debug, Clone, PartialEq, Eq, Default)]
pub struct DataLayout {
    pub segments: Vec<DataSegment>,
    pub total_payload_bytes: u64,
}

impl DataLayout {
    pub fn segment(&self, path: &str) -> Option<&DataSegment> {
        self.segments.iter().find(|s| s.path == path)
    }
}

#[derive(Debug, Error, Clone, PartialEq, Eq)]
pub enum LayoutError {
    #[error("data segment `{0}` overflows the byte-count range")]
    Overflow(String),
}

/// Lays out DATA instances back to back, each starting at the next
/// [`SEGMENT_ALIGN`]-aligned offset. Zero-length segments take no space.
pub fn plan_layout(instances: &[DataInstance]) -> Result<DataLayout, LayoutError> {
    let mut segments = Vec::with_capacity(instances.len());
    let mut cursor = 0u64;
    let mut total = 0u64;
    for inst in instances {
        let overflow = || LayoutError::Overflow(inst.path.clone());
        let length = inst.byte_len().ok_or_else(overflow)?;
        let offset = align_up(cursor).ok_or_else(overflow)?;
        let end = offset.checked_add(length).ok_or_else(overflow)?;
        segments.push(DataSegment { path: inst.path.clone(), offset, length });
        cursor = end;
        total = end;
    }
    Ok(DataLayout { segments, total_payload_bytes: total })
}

fn align_up(n: u64) -> Option<u64> {
    Some(n.checked_add(SEGMENT_ALIGN - 1)? & !(SEGMENT_ALIGN - 1))
}
