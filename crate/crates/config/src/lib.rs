//! Tagged YAML-subset configuration language.
//!
//! The accepted subset covers everything an experiment file needs:
//!
//! * block mappings and block sequences (a sequence may sit at the same
//!   indentation as the key that owns it),
//! * flow mappings `{k: v, ...}` on a single line, and the empty flow
//!   sequence `[]`,
//! * plain, single-quoted and double-quoted scalars with atom inference
//!   (`1` is an int, `0.3` a float, `True`/`true` a bool, `null`/`~` null,
//!   quoted forms are always strings),
//! * `#` comments, `!Tag` component tags, `&anchor` / `*alias` reuse,
//! * several `---`-separated documents whose top-level mappings are merged.
//!
//! Multi-line strings, merge keys, non-empty flow sequences and tab
//! indentation are rejected with a located [`ParseError`].

mod anchors;
mod emit;
mod error;
mod node;
mod parser;

pub use anchors::resolve_anchors;
pub use emit::serialize_config;
pub use error::ParseError;
pub use node::{ConfigNode, Entry, Loc, NodeKind, Scalar};
pub use parser::parse_config;

/// Parses `text` and resolves all aliases in one go.
pub fn load_config(text: &str) -> Result<ConfigNode, ParseError> {
    resolve_anchors(parse_config(text)?)
}
