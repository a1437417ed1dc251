//! `.msg` grammar.
//!
//! ```text
//! line     := blank | comment | field | constant
//! comment  := '#' any*
//! field    := type WS ident [WS] [comment]
//! constant := type WS ident [WS] '=' any*
//! type     := base | base '[' ']' | base '[' digits ']'
//! base     := primitive | 'string' | 'time' | 'duration' | [pkg '/'] Name
//! ```
//!
//! Constants are validated for shape and otherwise ignored.

use std::collections::HashSet;

use super::{FieldDef, FieldType, MessageSchema, Primitive, SchemaError, SchemaRegistry, TypeRef};

/// Parses one `.msg` definition. `full_name` is the type name (`pkg/Name`
/// or bare `Name`); its package scopes bare compound references.
pub fn parse_schema(full_name: &str, text: &str, registry: &SchemaRegistry) -> Result<MessageSchema, SchemaError> {
    let package = full_name.rsplit_once('/').map(|(p, _)| p);
    let mut fields = Vec::new();
    let mut seen = HashSet::new();

    for (idx, raw) in text.lines().enumerate() {
        let line_no = idx + 1;
        let syntax = |column: usize, message: String| SchemaError::Syntax {
            schema: full_name.to_owned(),
            line: line_no,
            column,
            message,
        };

        let indent = raw.len() - raw.trim_start().len();
        let line = raw.trim();
        if line.is_empty() || line.starts_with('#') {
            continue;
        }

        let type_end = line.find(char::is_whitespace).unwrap_or(line.len());
        let type_tok = &line[..type_end];
        let rest = &line[type_end..];
        let name_col = indent + type_end + (rest.len() - rest.trim_start().len()) + 1;
        let rest = rest.trim_start();

        let (base, array) = split_array(type_tok).map_err(|(off, msg)| syntax(indent + off + 1, msg))?;

        // `=` before any `#` makes this a constant; string constants may
        // legitimately contain `#` in their value.
        let eq = rest.find('=');
        let hash = rest.find('#');
        let is_constant = matches!((eq, hash), (Some(_), None)) || matches!((eq, hash), (Some(e), Some(h)) if e < h);
        let name = if is_constant {
            rest[..eq.unwrap()].trim_end()
        } else {
            rest[..hash.unwrap_or(rest.len())].trim_end()
        };
        if name.is_empty() {
            return Err(syntax(name_col, format!("expected a field name after `{type_tok}`")));
        }
        if let Some(bad) = name.find(|c: char| c.is_whitespace()) {
            return Err(syntax(name_col + bad, format!("unexpected token after field name in `{line}`")));
        }
        if !is_identifier(name) {
            return Err(syntax(name_col, format!("invalid identifier `{name}`")));
        }

        let elem = resolve_base(base, package, registry).ok_or_else(|| {
            if is_identifier_path(base) {
                SchemaError::UnknownType {
                    schema: full_name.to_owned(),
                    line: line_no,
                    column: indent + 1,
                    type_name: base.to_owned(),
                }
            } else {
                syntax(indent + 1, format!("invalid type `{base}`"))
            }
        })?;

        if is_constant {
            if array.is_some() || matches!(elem, TypeRef::Message(_)) {
                return Err(syntax(indent + 1, "constants must have a primitive or string type".into()));
            }
            continue;
        }

        if !seen.insert(name.to_owned()) {
            return Err(SchemaError::DuplicateField { schema: full_name.to_owned(), line: line_no, field: name.to_owned() });
        }
        let ty = match array {
            None => FieldType::Single(elem),
            Some(None) => FieldType::VarArray(elem),
            Some(Some(n)) => {
                let ty = FieldType::FixedArray(elem, n);
                if ty.element().fixed_size().is_some() && ty.fixed_size().is_none() {
                    return Err(syntax(indent + 1, format!("array `{type_tok}` is too large")));
                }
                ty
            }
        };
        fields.push(FieldDef { name: name.to_owned(), ty });
    }

    let schema = MessageSchema::new(full_name, fields);
    if schema.fields().iter().all(|f| f.ty.fixed_size().is_some()) && !schema.fixed_length() {
        return Err(SchemaError::Syntax {
            schema: full_name.to_owned(),
            line: 0,
            column: 0,
            message: "fixed-length message size overflows u64".into(),
        });
    }
    Ok(schema)
}

type ArraySpec = Option<Option<usize>>;

/// Splits `T`, `T[]`, `T[N]`. Errors carry a byte offset into the token.
fn split_array(tok: &str) -> Result<(&str, ArraySpec), (usize, String)> {
    let Some(open) = tok.find('[') else {
        if let Some(close) = tok.find(']') {
            return Err((close, format!("unbalanced `]` in `{tok}`")));
        }
        return Ok((tok, None));
    };
    let base = &tok[..open];
    if base.is_empty() {
        return Err((0, format!("missing element type in `{tok}`")));
    }
    let inner_and_rest = &tok[open + 1..];
    let Some(close) = inner_and_rest.find(']') else {
        return Err((open, format!("unterminated `[` in `{tok}`")));
    };
    let after = &inner_and_rest[close + 1..];
    if !after.is_empty() {
        let off = open + 1 + close + 1;
        if after.starts_with('[') {
            return Err((off, "arrays of arrays need a wrapper message type".into()));
        }
        return Err((off, format!("unexpected `{after}` after array brackets")));
    }
    let inner = &inner_and_rest[..close];
    if inner.is_empty() {
        return Ok((base, Some(None)));
    }
    match inner.parse::<usize>() {
        Ok(n) if inner.bytes().all(|b| b.is_ascii_digit()) => Ok((base, Some(Some(n)))),
        _ => Err((open + 1, format!("invalid array length `{inner}`"))),
    }
}

fn resolve_base(base: &str, package: Option<&str>, registry: &SchemaRegistry) -> Option<TypeRef> {
    if let Some(p) = Primitive::from_name(base) {
        return Some(TypeRef::Primitive(p));
    }
    if base == "string" {
        return Some(TypeRef::String);
    }
    if !is_identifier_path(base) {
        return None;
    }
    registry.resolve(base, package).map(|s| TypeRef::Message(s.clone()))
}

fn is_identifier(s: &str) -> bool {
    let mut chars = s.chars();
    matches!(chars.next(), Some(c) if c.is_ascii_alphabetic()) && chars.all(|c| c.is_ascii_alphanumeric() || c == '_')
}

fn is_identifier_path(s: &str) -> bool {
    match s.split_once('/') {
        Some((pkg, name)) => is_identifier(pkg) && is_identifier(name),
        None => is_identifier(s),
    }
}
