//! Schema checking and default filling.

use seqex_config::{ConfigNode, NodeKind};

use crate::error::ResolveError;
use crate::resolver::registry::{join_path, ArgDefault, DefaultCtx, Registry, EXP_GLOBAL_TAG, REF_TAG};

pub const EXPERIMENT_TAG: &str = "Experiment";

/// Tagged nulls (`key: !Tag` with nothing after) become empty mappings.
fn normalize(node: &mut ConfigNode) {
    node.walk_mut(&mut |n| {
        if n.tag.is_some() && n.is_null() {
            n.kind = NodeKind::Mapping(Vec::new());
        }
    });
}

/// Checks a `!Ref` node's shape.
pub(crate) fn ref_target<'a>(node: &'a ConfigNode, path: &str) -> Result<&'a str, ResolveError> {
    let bad = || ResolveError::new(path, Some(node.loc), "!Ref needs exactly one string argument 'path'");
    let entries = node.entries().ok_or_else(bad)?;
    match entries {
        [e] if e.key == "path" => e.value.as_str().filter(|s| !s.is_empty()).ok_or_else(bad),
        _ => Err(bad()),
    }
}

/// Returns the experiment tree with every component's arguments checked
/// against its schema and every omitted argument made explicit.
/// `ExpGlobal` is filled first so that global defaults can be copied from
/// it. Filling an already filled tree changes nothing.
pub fn fill_defaults(root: &ConfigNode, registry: &Registry) -> Result<ConfigNode, ResolveError> {
    if root.tag() != Some(EXPERIMENT_TAG) {
        return Err(ResolveError::new(
            "",
            Some(root.loc),
            format!(
                "an experiment must be tagged !{EXPERIMENT_TAG}, found {}",
                root.tag().map_or("no tag".to_string(), |t| format!("!{t}"))
            ),
        ));
    }
    let mut root = root.clone();
    normalize(&mut root);
    if root.entries().is_none() {
        return Err(ResolveError::new("", Some(root.loc), "an experiment must be a mapping"));
    }
    let exp_schema = registry
        .get(EXPERIMENT_TAG)
        .ok_or_else(|| ResolveError::new("", None, "no Experiment schema registered"))?;
    let eg = match root.get("exp_global") {
        Some(eg) => eg.clone(),
        None => match exp_schema.arg("exp_global").map(|a| &a.default) {
            Some(ArgDefault::Value(v)) => v.clone(),
            _ => return Err(ResolveError::new("exp_global", Some(root.loc), "missing exp_global")),
        },
    };
    if eg.tag() != Some(EXP_GLOBAL_TAG) {
        return Err(ResolveError::new(
            "exp_global",
            Some(eg.loc),
            format!("exp_global must be tagged !{EXP_GLOBAL_TAG}"),
        ));
    }
    let empty = ConfigNode::mapping([]);
    let eg = expand(eg, "exp_global", registry, &empty)?;
    root.set("exp_global", eg.clone());
    expand(root, "", registry, &eg)
}

fn expand(mut node: ConfigNode, path: &str, registry: &Registry, eg: &ConfigNode) -> Result<ConfigNode, ResolveError> {
    match node.tag().map(str::to_string).as_deref() {
        Some(REF_TAG) => {
            ref_target(&node, path)?;
            return Ok(node);
        }
        Some(tag) => {
            let schema = registry
                .get(tag)
                .ok_or_else(|| ResolveError::new(path, Some(node.loc), format!("unregistered tag {tag}")))?;
            let Some(entries) = node.entries() else {
                return Err(ResolveError::new(
                    path,
                    Some(node.loc),
                    format!("!{tag} must be a mapping of arguments"),
                ));
            };
            if let Some(e) = entries.iter().find(|e| schema.arg(&e.key).is_none()) {
                return Err(ResolveError::new(
                    join_path(path, &e.key),
                    Some(e.key_loc),
                    format!("unknown argument '{}' for !{tag}", e.key),
                ));
            }
            for spec in &schema.args {
                if node.get(spec.name).is_some() {
                    continue;
                }
                let value = match &spec.default {
                    ArgDefault::Required => {
                        return Err(ResolveError::new(
                            path,
                            Some(node.loc),
                            format!("missing required argument '{}' of !{tag}", spec.name),
                        ))
                    }
                    ArgDefault::Value(v) => v.clone(),
                    ArgDefault::Global(key) => eg.get(key).cloned().ok_or_else(|| {
                        ResolveError::new(path, Some(node.loc), format!("exp_global has no setting '{key}'"))
                    })?,
                    ArgDefault::Contextual(f) => f(&DefaultCtx {
                        path,
                        node: &node,
                        exp_global: eg,
                    }),
                };
                let loc = node.loc;
                node.set(spec.name, value.with_loc(loc));
            }
        }
        None => {}
    }
    match &mut node.kind {
        NodeKind::Mapping(entries) => {
            for e in entries.iter_mut() {
                let child = std::mem::replace(&mut e.value, ConfigNode::null());
                e.value = expand(child, &join_path(path, &e.key), registry, eg)?;
            }
        }
        NodeKind::Sequence(items) => {
            for (i, item) in items.iter_mut().enumerate() {
                let child = std::mem::replace(item, ConfigNode::null());
                *item = expand(child, &join_path(path, &i.to_string()), registry, eg)?;
            }
        }
        NodeKind::Scalar(_) => {}
        NodeKind::Alias(name) => {
            return Err(ResolveError::new(path, Some(node.loc), format!("unresolved alias *{name}")));
        }
    }
    Ok(node)
}
