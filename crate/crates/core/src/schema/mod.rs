//! Message definitions and the partial-serialization classifier.
//!
//! A [`MessageSchema`] is the resolved type tree of one `.msg` file. Every
//! type is either fixed-length (its encoded size is a constant) or
//! variable-length. [`classify`] walks the tree and produces a
//! [`ClassificationPlan`] that puts every variable-length array of
//! fixed-length elements into the data part and everything else into the
//! control part.

mod parse;
mod plan;

use std::collections::{BTreeMap, HashMap};
use std::fmt;
use std::path::{Path, PathBuf};
use std::sync::Arc;

use thiserror::Error;

pub use parse::parse_schema;
pub use plan::{
    classify, plan_layout, ClassificationPlan, DataInstance, DataLayout, DataSegment, LayoutError, Repeat, Step,
    StepClass, SEGMENT_ALIGN,
};

#[derive(Debug, Error, Clone, PartialEq, Eq)]
pub enum SchemaError {
    #[error("{schema}:{line}:{column}: {message}")]
    Syntax { schema: String, line: usize, column: usize, message: String },
    #[error("{schema}:{line}:{column}: unknown type `{type_name}`")]
    UnknownType { schema: String, line: usize, column: usize, type_name: String },
    #[error("{schema}:{line}: duplicate field `{field}`")]
    DuplicateField { schema: String, line: usize, field: String },
    #[error("{path}: {message}")]
    Io { path: PathBuf, message: String },
    #[error("unresolvable schemas in corpus: {}", .0.join(", "))]
    Unresolved(Vec<String>),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Primitive {
    Bool,
    Int8,
    UInt8,
    Int16,
    UInt16,
    Int32,
    UInt32,
    Int64,
    UInt64,
    Float32,
    Float64,
}

impl Primitive {
    pub fn size(self) -> u64 {
        match self {
            Primitive::Bool | Primitive::Int8 | Primitive::UInt8 => 1,
            Primitive::Int16 | Primitive::UInt16 => 2,
            Primitive::Int32 | Primitive::UInt32 | Primitive::Float32 => 4,
            Primitive::Int64 | Primitive::UInt64 | Primitive::Float64 => 8,
        }
    }

    /// Looks up a primitive by its `.msg` spelling. `byte` and `char` are the
    /// legacy ROS aliases for `int8` and `uint8`.
    pub fn from_name(name: &str) -> Option<Self> {
        Some(match name {
            "bool" => Primitive::Bool,
            "int8" | "byte" => Primitive::Int8,
            "uint8" | "char" => Primitive::UInt8,
            "int16" => Primitive::Int16,
            "uint16" => Primitive::UInt16,
            "int32" => Primitive::Int32,
            "uint32" => Primitive::UInt32,
            "int64" => Primitive::Int64,
            "uint64" => Primitive::UInt64,
            "float32" => Primitive::Float32,
            "float64" => Primitive::Float64,
            _ => return None,
        })
    }

    pub fn name(self) -> &'static str {
        match self {
            Primitive::Bool => "bool",
            Primitive::Int8 => "int8",
            Primitive::UInt8 => "uint8",
            Primitive::Int16 => "int16",
            Primitive::UInt16 => "uint16",
            Primitive::Int32 => "int32",
            Primitive::UInt32 => "uint32",
            Primitive::Int64 => "int64",
            Primitive::UInt64 => "uint64",
            Primitive::Float32 => "float32",
            Primitive::Float64 => "float64",
        }
    }
}

/// A non-array type: the element type of arrays and the type of scalar fields.
#[derive(Debug, Clone, PartialEq)]
pub enum TypeRef {
    Primitive(Primitive),
    String,
    Message(Arc<MessageSchema>),
}

impl TypeRef {
    /// Packed encoded size, or `None` for variable-length types.
    pub fn fixed_size(&self) -> Option<u64> {
        match self {
            TypeRef::Primitive(p) => Some(p.size()),
            TypeRef::String => None,
            TypeRef::Message(m) => m.fixed_size_bytes(),
        }
    }
}

impl fmt::Display for TypeRef {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            TypeRef::Primitive(p) => f.write_str(p.name()),
            TypeRef::String => f.write_str("string"),
            TypeRef::Message(m) => f.write_str(m.name()),
        }
    }
}

/// Arrays of arrays are not expressible; they need a wrapper message.
#[derive(Debug, Clone, PartialEq)]
pub enum FieldType {
    Single(TypeRef),
    FixedArray(TypeRef, usize),
    VarArray(TypeRef),
}

impl FieldType {
    pub fn element(&self) -> &TypeRef {
        match self {
            FieldType::Single(t) | FieldType::FixedArray(t, _) | FieldType::VarArray(t) => t,
        }
    }

    pub fn fixed_size(&self) -> Option<u64> {
        match self {
            FieldType::Single(t) => t.fixed_size(),
            FieldType::FixedArray(t, n) => t.fixed_size()?.checked_mul(*n as u64),
            FieldType::VarArray(_) => None,
        }
    }

    /// True for the fields the classifier sends to the data part.
    pub fn is_data_array(&self) -> bool {
        matches!(self, FieldType::VarArray(t) if t.fixed_size().is_some())
    }
}

impl fmt::Display for FieldType {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            FieldType::Single(t) => write!(f, "{t}"),
            FieldType::FixedArray(t, n) => write!(f, "{t}[{n}]"),
            FieldType::VarArray(t) => write!(f, "{t}[]"),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct FieldDef {
    pub name: String,
    pub ty: FieldType,
}

#[derive(Debug, Clone, PartialEq)]
pub struct MessageSchema {
    name: String,
    fields: Vec<FieldDef>,
    fixed_size: Option<u64>,
}

impl MessageSchema {
    /// Builds a schema from already-resolved fields. Field names must be
    /// unique; [`parse_schema`] enforces that for parsed input.
    pub fn new(name: impl Into<String>, fields: Vec<FieldDef>) -> Self {
        let fixed_size = fields
            .iter()
            .try_fold(0u64, |acc, f| f.ty.fixed_size().and_then(|s| acc.checked_add(s)));
        MessageSchema { name: name.into(), fields, fixed_size }
    }

    pub fn name(&self) -> &str {
        &self.name
    }

    /// The part after the last `/`, e.g. `PointCloud` for `sensor_msgs/PointCloud`.
    pub fn short_name(&self) -> &str {
        self.name.rsplit('/').next().unwrap_or(&self.name)
    }

    pub fn fields(&self) -> &[FieldDef] {
        &self.fields
    }

    pub fn field(&self, name: &str) -> Option<(usize, &FieldDef)> {
        self.fields.iter().enumerate().find(|(_, f)| f.name == name)
    }

    pub fn fixed_length(&self) -> bool {
        self.fixed_size.is_some()
    }

    pub fn fixed_size_bytes(&self) -> Option<u64> {
        self.fixed_size
    }

    /// True if any field, at any depth, is a variable-length array.
    pub fn has_var_array(&self) -> bool {
        self.fields.iter().any(|f| match &f.ty {
            FieldType::VarArray(_) => true,
            FieldType::Single(TypeRef::Message(m)) | FieldType::FixedArray(TypeRef::Message(m), _) => {
                m.has_var_array()
            }
            _ => false,
        })
    }
}

/// Known message types, keyed by full name (`pkg/Name`).
///
/// The ROS `time` and `duration` builtins are pre-registered as fixed
/// two-field messages.
#[derive(Debug, Clone)]
pub struct SchemaRegistry {
    by_name: BTreeMap<String, Arc<MessageSchema>>,
}

impl Default for SchemaRegistry {
    fn default() -> Self {
        Self::new()
    }
}

impl SchemaRegistry {
    pub fn new() -> Self {
        let mut reg = SchemaRegistry { by_name: BTreeMap::new() };
        let prim = |name: &str, p| FieldDef { name: name.into(), ty: FieldType::Single(TypeRef::Primitive(p)) };
        reg.insert(MessageSchema::new("time", vec![prim("secs", Primitive::UInt32), prim("nsecs", Primitive::UInt32)]));
        reg.insert(MessageSchema::new(
            "duration",
            vec![prim("secs", Primitive::Int32), prim("nsecs", Primitive::Int32)],
        ));
        reg
    }

    pub fn insert(&mut self, schema: MessageSchema) -> Arc<MessageSchema> {
        let schema = Arc::new(schema);
        self.by_name.insert(schema.name.clone(), Arc::clone(&schema));
        schema
    }

    pub fn get(&self, full_name: &str) -> Option<&Arc<MessageSchema>> {
        self.by_name.get(full_name)
    }

    /// Resolves a type reference as written in a `.msg` file of package
    /// `package`. Bare names try the same package first, then `Header` maps
    /// to `std_msgs/Header`, then any unique match by short name.
    pub fn resolve(&self, name: &str, package: Option<&str>) -> Option<&Arc<MessageSchema>> {
        if let Some(s) = self.by_name.get(name) {
            return Some(s);
        }
        if name.contains('/') {
            return None;
        }
        if let Some(pkg) = package {
            if let Some(s) = self.by_name.get(&format!("{pkg}/{name}")) {
                return Some(s);
            }
        }
        if name == "Header" {
            if let Some(s) = self.by_name.get("std_msgs/Header") {
                return Some(s);
            }
        }
        let mut matches = self.by_name.values().filter(|s| s.short_name() == name && s.name != name);
        match (matches.next(), matches.next()) {
            (Some(s), None) => Some(s),
            _ => None,
        }
    }

    pub fn len(&self) -> usize {
        self.by_name.len()
    }

    pub fn is_empty(&self) -> bool {
        self.by_name.is_empty()
    }

    pub fn iter(&self) -> impl Iterator<Item = &Arc<MessageSchema>> {
        self.by_name.values()
    }

    /// Parses `text` as type `full_name` and registers it.
    pub fn add_source(&mut self, full_name: &str, text: &str) -> Result<Arc<MessageSchema>, SchemaError> {
        let schema = parse_schema(full_name, text, self)?;
        Ok(self.insert(schema))
    }

    /// Loads a corpus directory laid out as `<root>/<package>/<Name>.msg`
    /// (an optional `msg/` level under each package is accepted). Files may
    /// reference each other in any order. Returns the names loaded, sorted.
    pub fn load_corpus(&mut self, root: &Path) -> Result<Vec<String>, SchemaError> {
        let mut pending: HashMap<String, String> = HashMap::new();
        let io_err = |path: &Path, e: std::io::Error| SchemaError::Io { path: path.to_owned(), message: e.to_string() };
        let mut packages: Vec<_> = std::fs::read_dir(root)
            .map_err(|e| io_err(root, e))?
            .filter_map(Result::ok)
            .filter(|e| e.path().is_dir())
            .collect();
        packages.sort_by_key(|e| e.file_name());
        for pkg in packages {
            let pkg_name = pkg.file_name().to_string_lossy().into_owned();
            let mut dir = pkg.path();
            if dir.join("msg").is_dir() {
                dir = dir.join("msg");
            }
            for entry in std::fs::read_dir(&dir).map_err(|e| io_err(&dir, e))? {
                let path = entry.map_err(|e| io_err(&dir, e))?.path();
                if path.extension().and_then(|e| e.to_str()) != Some("msg") {
                    continue;
                }
                let stem = path.file_stem().unwrap().to_string_lossy().into_owned();
                let text = std::fs::read_to_string(&path).map_err(|e| io_err(&path, e))?;
                pending.insert(format!("{pkg_name}/{stem}"), text);
            }
        }

        let mut loaded = Vec::new();
        // Dependency order is unknown up front: parse whatever resolves and
        // repeat until a round makes no progress.
        loop {
            let mut progressed = false;
            let mut names: Vec<_> = pending.keys().cloned().collect();
            names.sort();
            let mut last_err = None;
            for name in names {
                match parse_schema(&name, &pending[&name], self) {
                    Ok(schema) => {
                        self.insert(schema);
                        pending.remove(&name);
                        loaded.push(name);
                        progressed = true;
                    }
                    Err(SchemaError::UnknownType { .. }) => {}
                    Err(e) => last_err = Some(e),
                }
            }
            if let Some(e) = last_err {
                return Err(e);
            }
            if pending.is_empty() {
                break;
            }
            if !progressed {
                // Report the first real resolution failure.
                let mut names: Vec<_> = pending.keys().cloned().collect();
                names.sort();
                if names.len() == 1 {
                    return Err(parse_schema(&names[0], &pending[&names[0]], self).unwrap_err());
                }
                return Err(SchemaError::Unresolved(names));
            }
        }
        loaded.sort();
        Ok(loaded)
    }
}

/// Path of the schema corpus bundled with this crate.
pub fn bundled_corpus_dir() -> PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR")).join("corpus")
}

/// Table of how a set of schemas splits under classification.
#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct CompatibilityReport {
    pub total: usize,
    /// Schemas with at least one variable-length array anywhere in the tree.
    pub need_support: usize,
    /// Schemas whose plan has at least one DATA step.
    pub supported: usize,
    pub unsupported: Vec<String>,
}

impl CompatibilityReport {
    pub fn from_registry(registry: &SchemaRegistry) -> Self {
        let mut report = CompatibilityReport::default();
        for schema in registry.iter() {
            if schema.name() == "time" || schema.name() == "duration" {
                continue;
            }
            report.total += 1;
            if !schema.has_var_array() {
                continue;
            }
            report.need_support += 1;
            if classify(schema).data_step_count() > 0 {
                report.supported += 1;
            } else {
                report.unsupported.push(schema.name().to_owned());
            }
        }
        report
    }

    pub fn supported_percent(&self) -> f64 {
        if self.need_support == 0 {
            return 100.0;
        }
        100.0 * self.supported as f64 / self.need_support as f64
    }
}

impl fmt::Display for CompatibilityReport {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let pct = |n: usize, d: usize| if d == 0 { 0.0 } else { 100.0 * n as f64 / d as f64 };
        writeln!(f, "{:<18}{:>8}{:>14}{:>12}{:>16}", "", "total", "need support", "supported", "not supported")?;
        writeln!(
            f,
            "{:<18}{:>8}{:>14}{:>12}{:>16}",
            "number",
            self.total,
            self.need_support,
            self.supported,
            self.unsupported.len()
        )?;
        writeln!(
            f,
            "{:<18}{:>7.1}%{:>13.1}%{:>11.1}%{:>15.1}%",
            "percent (/total)",
            100.0,
            pct(self.need_support, self.total),
            pct(self.supported, self.total),
            pct(self.unsupported.len(), self.total)
        )?;
        write!(
            f,
            "{:<18}{:>8}{:>13.1}%{:>11.1}%{:>15.1}%",
            "percent (/need)",
            "-",
            100.0,
            pct(self.supported, self.need_support),
            pct(self.unsupported.len(), self.need_support)
        )
    }
}
