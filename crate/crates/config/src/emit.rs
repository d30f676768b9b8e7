use std::fmt::Write as _;

use crate::node::{ConfigNode, Entry, NodeKind, Scalar};
use crate::parser::infer_atom;

const INDENT: usize = 2;

/// Emits a tree in canonical form: two-space indentation, tags as `!Name`,
/// `!Ref` nodes as single-line flow mappings. Strings are quoted only when
/// a plain rendering would not read back as the same string.
pub fn serialize_config(root: &ConfigNode) -> String {
    let mut out = String::new();
    match &root.kind {
        NodeKind::Mapping(entries) if !entries.is_empty() => {
            let props = properties(root);
            if !props.is_empty() {
                out.push_str(props.trim_start());
                out.push('\n');
            }
            for e in entries {
                emit_entry(e, 0, &mut out);
            }
        }
        NodeKind::Sequence(items) if !items.is_empty() => {
            let props = properties(root);
            if !props.is_empty() {
                out.push_str(props.trim_start());
                out.push('\n');
            }
            for item in items {
                emit_item(item, 0, &mut out);
            }
        }
        _ => {
            let mut line = String::new();
            emit_inline_tail(root, 0, &mut line);
            out.push_str(line.trim_start());
        }
    }
    out
}

fn pad(n: usize) -> String {
    " ".repeat(n)
}

fn properties(node: &ConfigNode) -> String {
    let mut s = String::new();
    if let Some(tag) = &node.tag {
        write!(s, " !{tag}").unwrap();
    }
    if let Some(anchor) = &node.anchor {
        write!(s, " &{anchor}").unwrap();
    }
    s
}

fn emit_entry(entry: &Entry, indent: usize, out: &mut String) {
    out.push_str(&pad(indent));
    out.push_str(&format_key(&entry.key, false));
    out.push(':');
    emit_inline_tail(&entry.value, indent, out);
}

/// Writes whatever follows `key:` or `-` on the current line, the newline,
/// and any block content beneath it.
fn emit_inline_tail(node: &ConfigNode, indent: usize, out: &mut String) {
    out.push_str(&properties(node));
    match &node.kind {
        NodeKind::Alias(name) => {
            write!(out, " *{name}").unwrap();
            out.push('\n');
        }
        NodeKind::Scalar(s) => {
            out.push(' ');
            out.push_str(&format_scalar(s, false));
            out.push('\n');
        }
        NodeKind::Mapping(entries) if entries.is_empty() => out.push_str(" {}\n"),
        NodeKind::Sequence(items) if items.is_empty() => out.push_str(" []\n"),
        NodeKind::Mapping(entries) if is_flow_candidate(node) => {
            out.push_str(" { ");
            let parts: Vec<String> = entries
                .iter()
                .map(|e| {
                    let value = match &e.value.kind {
                        NodeKind::Scalar(s) => format_scalar(s, true),
                        _ => unreachable!("flow candidates hold scalars only"),
                    };
                    format!("{}: {}", format_key(&e.key, true), value)
                })
                .collect();
            out.push_str(&parts.join(", "));
            out.push_str(" }\n");
        }
        NodeKind::Mapping(entries) => {
            out.push('\n');
            for e in entries {
                emit_entry(e, indent + INDENT, out);
            }
        }
        NodeKind::Sequence(items) => {
            out.push('\n');
            for item in items {
                emit_item(item, indent + INDENT, out);
            }
        }
    }
}

fn emit_item(node: &ConfigNode, indent: usize, out: &mut String) {
    let bare = node.tag.is_none() && node.anchor.is_none();
    let compact = bare
        && match &node.kind {
            NodeKind::Mapping(entries) => !entries.is_empty(),
            NodeKind::Sequence(items) => !items.is_empty(),
            _ => false,
        };
    if compact {
        // Render the block one level deeper, then fold the dash into the
        // first line's indentation.
        let mut block = String::new();
        match &node.kind {
            NodeKind::Mapping(entries) => {
                for e in entries {
                    emit_entry(e, indent + INDENT, &mut block);
                }
            }
            NodeKind::Sequence(items) => {
                for item in items {
                    emit_item(item, indent + INDENT, &mut block);
                }
            }
            _ => unreachable!(),
        }
        out.push_str(&pad(indent));
        out.push_str("- ");
        out.push_str(&block[indent + INDENT..]);
    } else {
        out.push_str(&pad(indent));
        out.push('-');
        emit_inline_tail(node, indent, out);
    }
}

fn is_flow_candidate(node: &ConfigNode) -> bool {
    node.tag.as_deref() == Some("Ref")
        && node.entries().is_some_and(|entries| {
            entries.iter().all(|e| {
                e.value.tag.is_none()
                    && e.value.anchor.is_none()
                    && matches!(e.value.kind, NodeKind::Scalar(_))
            })
        })
}

fn format_scalar(s: &Scalar, flow: bool) -> String {
    match s {
        Scalar::Null => "null".into(),
        Scalar::Bool(b) => b.to_string(),
        Scalar::Int(i) => i.to_string(),
        Scalar::Float(x) if x.is_nan() => ".nan".into(),
        Scalar::Float(x) if x.is_infinite() => {
            if *x > 0.0 {
                ".inf".into()
            } else {
                "-.inf".into()
            }
        }
        Scalar::Float(x) => format!("{x:?}"),
        Scalar::Str(s) => {
            if plain_safe(s, flow) && infer_atom(s) == Scalar::Str(s.clone()) {
                s.clone()
            } else {
                quote(s)
            }
        }
    }
}

fn format_key(key: &str, flow: bool) -> String {
    if plain_safe(key, flow) && !(flow && key.contains(':')) {
        key.to_string()
    } else {
        quote(key)
    }
}

fn plain_safe(s: &str, flow: bool) -> bool {
    let Some(first) = s.chars().next() else {
        return false;
    };
    if first.is_whitespace() || s.ends_with(char::is_whitespace) {
        return false;
    }
    if matches!(
        first,
        '!' | '&' | '*' | '{' | '}' | '[' | ']' | '|' | '>' | '\'' | '"' | '%' | '@' | '`' | ','
            | '?' | ':' | '-' | '<' | '#' | '~'
    ) {
        return false;
    }
    if s.contains(": ") || s.ends_with(':') || s.contains(['#', '"', '\'']) {
        return false;
    }
    if s.chars().any(char::is_control) {
        return false;
    }
    if flow && s.contains([',', '{', '}', '[', ']']) {
        return false;
    }
    true
}

fn quote(s: &str) -> String {
    let mut out = String::with_capacity(s.len() + 2);
    out.push('"');
    for ch in s.chars() {
        match ch {
            '"' => out.push_str("\\\""),
            '\\' => out.push_str("\\\\"),
            '\n' => out.push_str("\\n"),
            '\t' => out.push_str("\\t"),
            '\r' => out.push_str("\\r"),
            c if c.is_control() && (c as u32) < 0x10000 => {
                write!(out, "\\u{:04x}", c as u32).unwrap();
            }
            c => out.push(c),
        }
    }
    out.push('"');
    out
}
