use std::collections::HashMap;

use crate::error::ParseError;
use crate::node::{ConfigNode, NodeKind};

/// Replaces every alias with a deep copy of the most recent node carrying
/// that anchor. Anchors are file-scoped; an alias must follow its anchor in
/// document order. Copies are independent nodes.
pub fn resolve_anchors(root: ConfigNode) -> Result<ConfigNode, ParseError> {
    let mut anchors = HashMap::new();
    resolve(root, &mut anchors)
}

fn resolve(
    node: ConfigNode,
    anchors: &mut HashMap<String, ConfigNode>,
) -> Result<ConfigNode, ParseError> {
    let ConfigNode {
        kind,
        tag,
        anchor,
        loc,
    } = node;
    let kind = match kind {
        NodeKind::Alias(name) => {
            let Some(target) = anchors.get(&name) else {
                return Err(ParseError::new(loc, format!("undefined anchor `{name}`")));
            };
            let mut copy = target.clone();
            copy.loc = loc;
            return Ok(copy);
        }
        NodeKind::Mapping(entries) => NodeKind::Mapping(
            entries
                .into_iter()
                .map(|mut e| {
                    e.value = resolve(e.value, anchors)?;
                    Ok(e)
                })
                .collect::<Result<_, ParseError>>()?,
        ),
        NodeKind::Sequence(items) => NodeKind::Sequence(
            items
                .into_iter()
                .map(|n| resolve(n, anchors))
                .collect::<Result<_, _>>()?,
        ),
        scalar @ NodeKind::Scalar(_) => scalar,
    };
    let node = ConfigNode {
        kind,
        tag,
        anchor,
        loc,
    };
    if let Some(name) = &node.anchor {
        anchors.insert(name.clone(), node.clone());
    }
    Ok(node)
}
