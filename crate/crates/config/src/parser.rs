//! Indentation-driven parser for the configuration subset.
//!
//! Works on logical lines (comments stripped, blank lines dropped). A
//! sequence item whose content opens a mapping (`- key: v`) is handled by
//! rewriting the current line in place so that the mapping starts at the
//! column of `key`.

use crate::error::ParseError;
use crate::node::{ConfigNode, Entry, Loc, NodeKind, Scalar};

type Result<T> = std::result::Result<T, ParseError>;

/// Parses a configuration document into a tree. Aliases are kept as
/// [`NodeKind::Alias`] nodes; see [`crate::resolve_anchors`].
pub fn parse_config(text: &str) -> Result<ConfigNode> {
    let lines = logical_lines(text)?;
    let mut docs: Vec<Vec<Line>> = vec![Vec::new()];
    for line in lines {
        if line.indent == 0 && line.text == "---" {
            docs.push(Vec::new());
        } else {
            docs.last_mut().expect("nonempty").push(line);
        }
    }

    let mut roots = Vec::new();
    for doc in docs {
        if doc.is_empty() {
            continue;
        }
        let mut parser = Parser { lines: doc, pos: 0 };
        roots.push(parser.parse_document()?);
    }

    match roots.len() {
        0 => Ok(ConfigNode::new(NodeKind::Mapping(Vec::new()), Loc::new(1, 1))),
        1 => Ok(roots.pop().expect("one root")),
        _ => merge_documents(roots),
    }
}

fn merge_documents(roots: Vec<ConfigNode>) -> Result<ConfigNode> {
    let loc = roots[0].loc;
    let mut merged: Vec<Entry> = Vec::new();
    for root in roots {
        let root_loc = root.loc;
        match root.kind {
            NodeKind::Mapping(entries) => {
                for e in entries {
                    if merged.iter().any(|m| m.key == e.key) {
                        return Err(ParseError::new(
                            e.key_loc,
                            format!("duplicate key `{}`", e.key),
                        ));
                    }
                    merged.push(e);
                }
            }
            _ => {
                return Err(ParseError::new(
                    root_loc,
                    "every document of a multi-document file must be a mapping",
                ))
            }
        }
    }
    Ok(ConfigNode::new(NodeKind::Mapping(merged), loc))
}

#[derive(Debug, Clone)]
struct Line {
    no: usize,
    indent: usize,
    text: String,
}

impl Line {
    fn loc_at(&self, byte: usize) -> Loc {
        Loc::new(self.no, self.indent + 1 + self.text[..byte].chars().count())
    }
}

fn logical_lines(text: &str) -> Result<Vec<Line>> {
    let mut out = Vec::new();
    for (i, raw) in text.lines().enumerate() {
        let no = i + 1;
        let mut indent = 0;
        for (col, ch) in raw.chars().enumerate() {
            match ch {
                ' ' => indent += 1,
                '\t' => {
                    return Err(ParseError::new(
                        Loc::new(no, col + 1),
                        "tab character in indentation",
                    ))
                }
                _ => break,
            }
        }
        let content = strip_comment(&raw[indent..]);
        let content = content.trim_end();
        if content.is_empty() {
            continue;
        }
        out.push(Line {
            no,
            indent,
            text: content.to_string(),
        });
    }
    Ok(out)
}

/// Cuts a trailing `# comment`, ignoring `#` inside quotes or glued to a
/// preceding non-space character.
fn strip_comment(s: &str) -> &str {
    let mut in_double = false;
    let mut in_single = false;
    let mut escaped = false;
    let mut prev_space = true;
    for (i, ch) in s.char_indices() {
        if in_double {
            if escaped {
                escaped = false;
            } else if ch == '\\' {
                escaped = true;
            } else if ch == '"' {
                in_double = false;
            }
        } else if in_single {
            if ch == '\'' {
                in_single = false;
            }
        } else {
            match ch {
                '#' if prev_space => return &s[..i],
                '"' if prev_space || is_flow_open(s, i) => in_double = true,
                '\'' if prev_space || is_flow_open(s, i) => in_single = true,
                _ => {}
            }
        }
        prev_space = ch.is_whitespace();
    }
    s
}

fn is_flow_open(s: &str, i: usize) -> bool {
    matches!(s[..i].chars().last(), Some('{' | ',' | ':'))
}

struct Parser {
    lines: Vec<Line>,
    pos: usize,
}

impl Parser {
    fn current(&self) -> Option<&Line> {
        self.lines.get(self.pos)
    }

    fn parse_document(&mut self) -> Result<ConfigNode> {
        let indent = self.lines[0].indent;
        let root = self.parse_block(indent, true)?;
        if let Some(line) = self.current() {
            return Err(ParseError::new(
                line.loc_at(0),
                "inconsistent indentation",
            ));
        }
        Ok(root)
    }

    /// Parses the block starting at the current line, which sits at
    /// `indent`.
    fn parse_block(&mut self, indent: usize, top: bool) -> Result<ConfigNode> {
        let line = self.current().expect("block start").clone();
        if is_seq_item(&line.text) {
            self.parse_sequence(indent)
        } else if mapping_key(&line.text)?.is_some() {
            self.parse_mapping(indent)
        } else {
            // A lone value line: a scalar document, or properties whose
            // content follows on the next lines.
            self.pos += 1;
            let nested_min = if top { indent } else { indent + 1 };
            self.parse_value(&line, 0, nested_min, false)
        }
    }

    fn parse_mapping(&mut self, indent: usize) -> Result<ConfigNode> {
        let start = self.current().expect("mapping start").loc_at(0);
        let mut entries: Vec<Entry> = Vec::new();
        while let Some(line) = self.current() {
            if line.indent < indent {
                break;
            }
            if line.indent > indent {
                return Err(ParseError::new(line.loc_at(0), "inconsistent indentation"));
            }
            if is_seq_item(&line.text) {
                return Err(ParseError::new(
                    line.loc_at(0),
                    "sequence item where a mapping key was expected",
                ));
            }
            let line = line.clone();
            let Some((key, value_start)) = mapping_key(&line.text)? else {
                return Err(ParseError::new(line.loc_at(0), "expected `key: value`"));
            };
            let key_loc = line.loc_at(0);
            if key == "<<" {
                return Err(ParseError::new(key_loc, "merge keys are not supported"));
            }
            if entries.iter().any(|e| e.key == key) {
                return Err(ParseError::new(key_loc, format!("duplicate key `{key}`")));
            }
            self.pos += 1;
            let value = self.parse_value(&line, value_start, indent + 1, true)?;
            entries.push(Entry {
                key,
                key_loc,
                value,
            });
        }
        Ok(ConfigNode::new(NodeKind::Mapping(entries), start))
    }

    fn parse_sequence(&mut self, indent: usize) -> Result<ConfigNode> {
        let start = self.current().expect("sequence start").loc_at(0);
        let mut items = Vec::new();
        while let Some(line) = self.current() {
            if line.indent < indent {
                break;
            }
            if line.indent > indent {
                return Err(ParseError::new(line.loc_at(0), "inconsistent indentation"));
            }
            if !is_seq_item(&line.text) {
                break;
            }
            let line = line.clone();
            let after_dash = &line.text[1..];
            let rest = after_dash.trim_start();
            let offset = 1 + (after_dash.len() - rest.len());
            if !rest.is_empty() && (is_seq_item(rest) || mapping_key(rest)?.is_some()) {
                // Compact nested block: re-anchor the line at the content.
                let inner = indent + offset;
                self.lines[self.pos] = Line {
                    no: line.no,
                    indent: inner,
                    text: rest.to_string(),
                };
                items.push(self.parse_block(inner, false)?);
            } else {
                self.pos += 1;
                items.push(self.parse_value(&line, offset, indent + 1, false)?);
            }
        }
        Ok(ConfigNode::new(NodeKind::Sequence(items), start))
    }

    /// Parses the value text of `line` starting at byte `start`. Block
    /// content, if any, must be indented at least `nested_min`; a mapping
    /// value may also own a sequence at the mapping's own indentation.
    fn parse_value(
        &mut self,
        line: &Line,
        start: usize,
        nested_min: usize,
        compact_seq: bool,
    ) -> Result<ConfigNode> {
        let text = &line.text;
        let mut cursor = skip_spaces(text, start);
        let props_loc = line.loc_at(cursor);
        let mut tag = None;
        let mut anchor = None;
        loop {
            let rest = &text[cursor..];
            if let Some(r) = rest.strip_prefix('!') {
                let name = property_name(r);
                if name.is_empty() {
                    return Err(ParseError::new(line.loc_at(cursor), "empty tag"));
                }
                if tag.replace(name.to_string()).is_some() {
                    return Err(ParseError::new(line.loc_at(cursor), "node has two tags"));
                }
                cursor = skip_spaces(text, cursor + 1 + name.len());
            } else if let Some(r) = rest.strip_prefix('&') {
                let name = property_name(r);
                if name.is_empty() {
                    return Err(ParseError::new(line.loc_at(cursor), "empty anchor"));
                }
                if anchor.replace(name.to_string()).is_some() {
                    return Err(ParseError::new(line.loc_at(cursor), "node has two anchors"));
                }
                cursor = skip_spaces(text, cursor + 1 + name.len());
            } else {
                break;
            }
        }
        let has_props = tag.is_some() || anchor.is_some();
        let rest = &text[cursor..];
        let rest_loc = line.loc_at(cursor);

        let mut node = if rest.is_empty() {
            let nested = match self.current() {
                Some(next) if next.indent >= nested_min => {
                    let ind = next.indent;
                    Some(self.parse_block(ind, false)?)
                }
                Some(next)
                    if compact_seq && next.indent + 1 == nested_min && is_seq_item(&next.text) =>
                {
                    let ind = next.indent;
                    Some(self.parse_sequence(ind)?)
                }
                _ => None,
            };
            match nested {
                Some(n) => {
                    if n.tag.is_some() || n.anchor.is_some() {
                        if has_props {
                            return Err(ParseError::new(n.loc, "node has two sets of properties"));
                        }
                    }
                    let mut n = n;
                    if has_props {
                        n.loc = props_loc;
                    }
                    n
                }
                None => ConfigNode::new(NodeKind::Scalar(Scalar::Null), props_loc),
            }
        } else {
            let mut flow = FlowCursor::new(line, cursor);
            let node = flow.value(false)?;
            flow.skip_ws();
            if !flow.at_end() {
                return Err(ParseError::new(
                    flow.loc(),
                    "unexpected trailing content after value",
                ));
            }
            if matches!(node.kind, NodeKind::Alias(_)) && has_props {
                return Err(ParseError::new(rest_loc, "an alias cannot carry a tag or anchor"));
            }
            let mut node = node;
            if has_props {
                node.loc = props_loc;
            }
            node
        };
        if has_props {
            if node.tag.is_none() {
                node.tag = tag;
            }
            if node.anchor.is_none() {
                node.anchor = anchor;
            }
        }
        Ok(node)
    }
}

fn skip_spaces(text: &str, mut i: usize) -> usize {
    let bytes = text.as_bytes();
    while i < bytes.len() && bytes[i] == b' ' {
        i += 1;
    }
    i
}

fn property_name(s: &str) -> &str {
    let end = s
        .find(|c: char| c.is_whitespace() || matches!(c, '{' | '}' | ',' | '[' | ']'))
        .unwrap_or(s.len());
    &s[..end]
}

fn is_seq_item(text: &str) -> bool {
    text == "-" || text.starts_with("- ")
}

/// If `text` opens with `key:` returns the key and the byte offset just
/// past the colon.
fn mapping_key(text: &str) -> Result<Option<(String, usize)>> {
    let first = match text.chars().next() {
        Some(c) => c,
        None => return Ok(None),
    };
    if first == '"' || first == '\'' {
        let Ok((key, end)) = read_quoted(text, 0) else {
            return Ok(None);
        };
        let after = &text[end..];
        let trimmed = after.trim_start_matches(' ');
        if let Some(r) = trimmed.strip_prefix(':') {
            if r.is_empty() || r.starts_with(' ') {
                return Ok(Some((key, text.len() - r.len())));
            }
        }
        return Ok(None);
    }
    if matches!(
        first,
        '!' | '&' | '*' | '{' | '}' | '[' | ']' | '|' | '>' | '#' | '%' | '@' | '`' | ','
    ) || is_seq_item(text)
    {
        return Ok(None);
    }
    let bytes = text.as_bytes();
    for (i, &b) in bytes.iter().enumerate() {
        if b == b':' && (i + 1 == bytes.len() || bytes[i + 1] == b' ') {
            let key = text[..i].trim_end();
            if key.is_empty() {
                return Ok(None);
            }
            return Ok(Some((key.to_string(), i + 1)));
        }
    }
    Ok(None)
}

/// Reads a quoted scalar starting at byte `start` (which holds the quote).
/// Returns the unescaped string and the byte offset after the closing quote.
fn read_quoted(text: &str, start: usize) -> std::result::Result<(String, usize), &'static str> {
    let quote = text[start..].chars().next().ok_or("missing quote")?;
    let mut out = String::new();
    let mut chars = text[start + 1..].char_indices().peekable();
    while let Some((i, ch)) = chars.next() {
        let abs = start + 1 + i;
        if quote == '\'' {
            if ch == '\'' {
                if matches!(chars.peek(), Some((_, '\''))) {
                    chars.next();
                    out.push('\'');
                } else {
                    return Ok((out, abs + 1));
                }
            } else {
                out.push(ch);
            }
            continue;
        }
        match ch {
            '"' => return Ok((out, abs + 1)),
            '\\' => {
                let (_, esc) = chars.next().ok_or("unterminated escape")?;
                match esc {
                    'n' => out.push('\n'),
                    't' => out.push('\t'),
                    'r' => out.push('\r'),
                    '0' => out.push('\0'),
                    '\\' => out.push('\\'),
                    '"' => out.push('"'),
                    '/' => out.push('/'),
                    'u' => {
                        let mut code = 0u32;
                        for _ in 0..4 {
                            let (_, h) = chars.next().ok_or("short \\u escape")?;
                            code = code * 16 + h.to_digit(16).ok_or("bad \\u escape")?;
                        }
                        out.push(char::from_u32(code).ok_or("invalid code point")?);
                    }
                    _ => return Err("unknown escape sequence"),
                }
            }
            _ => out.push(ch),
        }
    }
    Err("unterminated quoted string")
}

/// Infers the atom type of an unquoted scalar.
pub(crate) fn infer_atom(s: &str) -> Scalar {
    match s {
        "" | "~" | "null" | "Null" | "NULL" => return Scalar::Null,
        "true" | "True" | "TRUE" => return Scalar::Bool(true),
        "false" | "False" | "FALSE" => return Scalar::Bool(false),
        ".inf" | ".Inf" | "+.inf" => return Scalar::Float(f64::INFINITY),
        "-.inf" | "-.Inf" => return Scalar::Float(f64::NEG_INFINITY),
        ".nan" | ".NaN" => return Scalar::Float(f64::NAN),
        _ => {}
    }
    if is_int_literal(s) {
        if let Ok(i) = s.parse::<i64>() {
            return Scalar::Int(i);
        }
    }
    if is_float_literal(s) {
        if let Ok(x) = s.parse::<f64>() {
            return Scalar::Float(x);
        }
    }
    Scalar::Str(s.to_string())
}

fn is_int_literal(s: &str) -> bool {
    let digits = s.strip_prefix(['-', '+']).unwrap_or(s);
    !digits.is_empty() && digits.bytes().all(|b| b.is_ascii_digit())
}

fn is_float_literal(s: &str) -> bool {
    let body = s.strip_prefix(['-', '+']).unwrap_or(s);
    let (mantissa, exponent) = match body.find(['e', 'E']) {
        Some(i) => (&body[..i], Some(&body[i + 1..])),
        None => (body, None),
    };
    let mantissa_ok = match mantissa.split_once('.') {
        Some((a, b)) => {
            (!a.is_empty() || !b.is_empty())
                && a.bytes().all(|c| c.is_ascii_digit())
                && b.bytes().all(|c| c.is_ascii_digit())
        }
        None => !mantissa.is_empty() && mantissa.bytes().all(|c| c.is_ascii_digit()),
    };
    let exponent_ok = match exponent {
        Some(e) => is_int_literal(e),
        None => true,
    };
    mantissa_ok && exponent_ok && (exponent.is_some() || mantissa.contains('.'))
}

/// Cursor over the remainder of one line, parsing inline values and flow
/// mappings.
struct FlowCursor<'a> {
    line: &'a Line,
    pos: usize,
}

impl<'a> FlowCursor<'a> {
    fn new(line: &'a Line, pos: usize) -> Self {
        Self { line, pos }
    }

    fn text(&self) -> &'a str {
        &self.line.text
    }

    fn rest(&self) -> &'a str {
        &self.line.text[self.pos..]
    }

    fn loc(&self) -> Loc {
        self.line.loc_at(self.pos)
    }

    fn at_end(&self) -> bool {
        self.pos >= self.text().len()
    }

    fn peek(&self) -> Option<char> {
        self.rest().chars().next()
    }

    fn skip_ws(&mut self) {
        self.pos = skip_spaces(self.text(), self.pos);
    }

    /// One value, with optional properties. Inside a flow mapping plain
    /// scalars stop at `,` and `}`.
    fn value(&mut self, in_flow: bool) -> Result<ConfigNode> {
        self.skip_ws();
        let start = self.loc();
        let mut tag = None;
        let mut anchor = None;
        loop {
            match self.peek() {
                Some('!') => {
                    let name = property_name(&self.rest()[1..]).to_string();
                    if name.is_empty() {
                        return Err(ParseError::new(self.loc(), "empty tag"));
                    }
                    self.pos += 1 + name.len();
                    tag = Some(name);
                    self.skip_ws();
                }
                Some('&') => {
                    let name = property_name(&self.rest()[1..]).to_string();
                    if name.is_empty() {
                        return Err(ParseError::new(self.loc(), "empty anchor"));
                    }
                    self.pos += 1 + name.len();
                    anchor = Some(name);
                    self.skip_ws();
                }
                _ => break,
            }
        }
        let has_props = tag.is_some() || anchor.is_some();
        let here = self.loc();
        let kind = match self.peek() {
            None => NodeKind::Scalar(Scalar::Null),
            Some(',' | '}') if in_flow => NodeKind::Scalar(Scalar::Null),
            Some('{') => return self.flow_mapping(start, tag, anchor),
            Some('[') => {
                if self.rest().starts_with("[]") {
                    self.pos += 2;
                    NodeKind::Sequence(Vec::new())
                } else {
                    return Err(ParseError::new(
                        here,
                        "flow sequences are not supported; use a block sequence",
                    ));
                }
            }
            Some('*') => {
                if has_props {
                    return Err(ParseError::new(start, "an alias cannot carry a tag or anchor"));
                }
                let name = property_name(&self.rest()[1..]).to_string();
                if name.is_empty() {
                    return Err(ParseError::new(here, "empty alias"));
                }
                self.pos += 1 + name.len();
                NodeKind::Alias(name)
            }
            Some('"' | '\'') => {
                let (s, end) =
                    read_quoted(self.text(), self.pos).map_err(|m| ParseError::new(here, m))?;
                self.pos = end;
                NodeKind::Scalar(Scalar::Str(s))
            }
            Some('|' | '>') => {
                return Err(ParseError::new(here, "multi-line block scalars are not supported"))
            }
            Some(_) => {
                let rest = self.rest();
                let end = if in_flow {
                    rest.find([',', '}']).unwrap_or(rest.len())
                } else {
                    rest.len()
                };
                let raw = rest[..end].trim_end();
                if raw.starts_with("<<") {
                    return Err(ParseError::new(here, "merge keys are not supported"));
                }
                self.pos += end;
                NodeKind::Scalar(infer_atom(raw))
            }
        };
        Ok(ConfigNode {
            kind,
            tag,
            anchor,
            loc: start,
        })
    }

    fn flow_mapping(
        &mut self,
        start: Loc,
        tag: Option<String>,
        anchor: Option<String>,
    ) -> Result<ConfigNode> {
        let open = self.loc();
        self.pos += 1;
        let mut entries: Vec<Entry> = Vec::new();
        loop {
            self.skip_ws();
            match self.peek() {
                None => return Err(ParseError::new(open, "unterminated flow mapping")),
                Some('}') => {
                    self.pos += 1;
                    break;
                }
                _ => {}
            }
            let key_loc = self.loc();
            let key = self.flow_key()?;
            if entries.iter().any(|e| e.key == key) {
                return Err(ParseError::new(key_loc, format!("duplicate key `{key}`")));
            }
            let value = self.value(true)?;
            entries.push(Entry {
                key,
                key_loc,
                value,
            });
            self.skip_ws();
            match self.peek() {
                Some(',') => self.pos += 1,
                Some('}') => {
                    self.pos += 1;
                    break;
                }
                None => return Err(ParseError::new(open, "unterminated flow mapping")),
                Some(c) => {
                    return Err(ParseError::new(
                        self.loc(),
                        format!("expected `,` or `}}` in flow mapping, found `{c}`"),
                    ))
                }
            }
        }
        Ok(ConfigNode {
            kind: NodeKind::Mapping(entries),
            tag,
            anchor,
            loc: start,
        })
    }

    fn flow_key(&mut self) -> Result<String> {
        let here = self.loc();
        let key = match self.peek() {
            Some('"' | '\'') => {
                let (s, end) =
                    read_quoted(self.text(), self.pos).map_err(|m| ParseError::new(here, m))?;
                self.pos = end;
                s
            }
            _ => {
                let rest = self.rest();
                let end = rest.find([':', ',', '}']).unwrap_or(rest.len());
                let key = rest[..end].trim_end().to_string();
                self.pos += end;
                key
            }
        };
        self.skip_ws();
        if self.peek() != Some(':') {
            if self.at_end() {
                return Err(ParseError::new(here, "unterminated flow mapping"));
            }
            return Err(ParseError::new(here, "expected `key: value` in flow mapping"));
        }
        if key.is_empty() {
            return Err(ParseError::new(here, "empty key in flow mapping"));
        }
        self.pos += 1;
        Ok(key)
    }
}
