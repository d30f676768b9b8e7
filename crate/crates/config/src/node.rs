use std::fmt;

/// One-based source position.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Default)]
pub struct Loc {
    pub line: usize,
    pub column: usize,
}

impl Loc {
    pub fn new(line: usize, column: usize) -> Self {
        Self { line, column }
    }
}

impl fmt::Display for Loc {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "line {}, column {}", self.line, self.column)
    }
}

/// A typed atom. Inference happens once, at parse time.
#[derive(Debug, Clone)]
pub enum Scalar {
    Null,
    Bool(bool),
    Int(i64),
    Float(f64),
    Str(String),
}

impl PartialEq for Scalar {
    fn eq(&self, other: &Self) -> bool {
        match (self, other) {
            (Scalar::Null, Scalar::Null) => true,
            (Scalar::Bool(a), Scalar::Bool(b)) => a == b,
            (Scalar::Int(a), Scalar::Int(b)) => a == b,
            (Scalar::Float(a), Scalar::Float(b)) => a.to_bits() == b.to_bits(),
            (Scalar::Str(a), Scalar::Str(b)) => a == b,
            _ => false,
        }
    }
}

impl Scalar {
    pub fn type_name(&self) -> &'static str {
        match self {
            Scalar::Null => "null",
            Scalar::Bool(_) => "bool",
            Scalar::Int(_) => "int",
            Scalar::Float(_) => "float",
            Scalar::Str(_) => "string",
        }
    }
}

impl fmt::Display for Scalar {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Scalar::Null => f.write_str("null"),
            Scalar::Bool(b) => write!(f, "{b}"),
            Scalar::Int(i) => write!(f, "{i}"),
            Scalar::Float(x) => write!(f, "{x:?}"),
            Scalar::Str(s) => f.write_str(s),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub enum NodeKind {
    Scalar(Scalar),
    Sequence(Vec<ConfigNode>),
    Mapping(Vec<Entry>),
    /// `*name`; removed by [`crate::resolve_anchors`].
    Alias(String),
}

/// A mapping entry. Keys are always strings.
#[derive(Debug, Clone)]
pub struct Entry {
    pub key: String,
    pub key_loc: Loc,
    pub value: ConfigNode,
}

impl PartialEq for Entry {
    fn eq(&self, other: &Self) -> bool {
        self.key == other.key && self.value == other.value
    }
}

/// Parse-tree node. Equality is deep and ignores source locations.
#[derive(Debug, Clone)]
pub struct ConfigNode {
    pub kind: NodeKind,
    pub tag: Option<String>,
    pub anchor: Option<String>,
    pub loc: Loc,
}

impl PartialEq for ConfigNode {
    fn eq(&self, other: &Self) -> bool {
        self.tag == other.tag && self.anchor == other.anchor && self.kind == other.kind
    }
}

impl ConfigNode {
    pub fn new(kind: NodeKind, loc: Loc) -> Self {
        Self {
            kind,
            tag: None,
            anchor: None,
            loc,
        }
    }

    pub fn scalar(value: Scalar) -> Self {
        Self::new(NodeKind::Scalar(value), Loc::default())
    }

    pub fn null() -> Self {
        Self::scalar(Scalar::Null)
    }

    pub fn string(s: impl Into<String>) -> Self {
        Self::scalar(Scalar::Str(s.into()))
    }

    pub fn int(i: i64) -> Self {
        Self::scalar(Scalar::Int(i))
    }

    pub fn float(x: f64) -> Self {
        Self::scalar(Scalar::Float(x))
    }

    pub fn bool(b: bool) -> Self {
        Self::scalar(Scalar::Bool(b))
    }

    pub fn mapping(entries: impl IntoIterator<Item = (String, ConfigNode)>) -> Self {
        let entries = entries
            .into_iter()
            .map(|(key, value)| Entry {
                key,
                key_loc: value.loc,
                value,
            })
            .collect();
        Self::new(NodeKind::Mapping(entries), Loc::default())
    }

    pub fn sequence(items: Vec<ConfigNode>) -> Self {
        Self::new(NodeKind::Sequence(items), Loc::default())
    }

    pub fn with_tag(mut self, tag: impl Into<String>) -> Self {
        self.tag = Some(tag.into());
        self
    }

    pub fn with_loc(mut self, loc: Loc) -> Self {
        self.loc = loc;
        self
    }

    pub fn tag(&self) -> Option<&str> {
        self.tag.as_deref()
    }

    pub fn as_scalar(&self) -> Option<&Scalar> {
        match &self.kind {
            NodeKind::Scalar(s) => Some(s),
            _ => None,
        }
    }

    pub fn as_str(&self) -> Option<&str> {
        match &self.kind {
            NodeKind::Scalar(Scalar::Str(s)) => Some(s),
            _ => None,
        }
    }

    pub fn is_null(&self) -> bool {
        matches!(self.kind, NodeKind::Scalar(Scalar::Null))
    }

    pub fn entries(&self) -> Option<&[Entry]> {
        match &self.kind {
            NodeKind::Mapping(e) => Some(e),
            _ => None,
        }
    }

    pub fn entries_mut(&mut self) -> Option<&mut Vec<Entry>> {
        match &mut self.kind {
            NodeKind::Mapping(e) => Some(e),
            _ => None,
        }
    }

    pub fn items(&self) -> Option<&[ConfigNode]> {
        match &self.kind {
            NodeKind::Sequence(items) => Some(items),
            _ => None,
        }
    }

    pub fn get(&self, key: &str) -> Option<&ConfigNode> {
        self.entries()?
            .iter()
            .find(|e| e.key == key)
            .map(|e| &e.value)
    }

    pub fn get_mut(&mut self, key: &str) -> Option<&mut ConfigNode> {
        self.entries_mut()?
            .iter_mut()
            .find(|e| e.key == key)
            .map(|e| &mut e.value)
    }

    /// Child by path segment: a key for mappings, a zero-based index for
    /// sequences.
    pub fn child(&self, segment: &str) -> Option<&ConfigNode> {
        match &self.kind {
            NodeKind::Mapping(_) => self.get(segment),
            NodeKind::Sequence(items) => segment.parse::<usize>().ok().and_then(|i| items.get(i)),
            _ => None,
        }
    }

    pub fn child_mut(&mut self, segment: &str) -> Option<&mut ConfigNode> {
        match &mut self.kind {
            NodeKind::Mapping(entries) => entries
                .iter_mut()
                .find(|e| e.key == segment)
                .map(|e| &mut e.value),
            NodeKind::Sequence(items) => segment
                .parse::<usize>()
                .ok()
                .and_then(move |i| items.get_mut(i)),
            _ => None,
        }
    }

    /// Inserts or replaces `key` in a mapping node. Returns false if the
    /// node is not a mapping.
    pub fn set(&mut self, key: &str, value: ConfigNode) -> bool {
        let Some(entries) = self.entries_mut() else {
            return false;
        };
        if let Some(e) = entries.iter_mut().find(|e| e.key == key) {
            e.value = value;
        } else {
            entries.push(Entry {
                key: key.to_string(),
                key_loc: value.loc,
                value,
            });
        }
        true
    }

    /// Visits every node in document order.
    pub fn walk<'a>(&'a self, f: &mut impl FnMut(&'a ConfigNode)) {
        f(self);
        match &self.kind {
            NodeKind::Mapping(entries) => entries.iter().for_each(|e| e.value.walk(f)),
            NodeKind::Sequence(items) => items.iter().for_each(|n| n.walk(f)),
            _ => {}
        }
    }

    pub fn walk_mut(&mut self, f: &mut impl FnMut(&mut ConfigNode)) {
        f(self);
        match &mut self.kind {
            NodeKind::Mapping(entries) => entries.iter_mut().for_each(|e| e.value.walk_mut(f)),
            NodeKind::Sequence(items) => items.iter_mut().for_each(|n| n.walk_mut(f)),
            _ => {}
        }
    }
}
