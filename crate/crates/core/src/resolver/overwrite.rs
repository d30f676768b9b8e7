//! `{EXP}` substitution and path overwrites.

use seqex_config::{ConfigNode, NodeKind, Scalar};

use crate::error::ResolveError;

pub const PLACEHOLDER: &str = "{EXP}";

/// Replaces every `{EXP}` in every string scalar.
pub fn substitute_placeholders(root: &ConfigNode, exp_name: &str) -> ConfigNode {
    let mut out = root.clone();
    out.walk_mut(&mut |n| {
        if let NodeKind::Scalar(Scalar::Str(s)) = &mut n.kind {
            if s.contains(PLACEHOLDER) {
                *s = s.replace(PLACEHOLDER, exp_name);
            }
        }
    });
    out
}

#[derive(Debug, Clone, PartialEq)]
pub struct Overwrite {
    pub path: String,
    pub val: ConfigNode,
}

/// Reads an `overwrite:` list of `{path: ..., val: ...}` mappings.
pub fn parse_overwrites(node: &ConfigNode, at: &str) -> Result<Vec<Overwrite>, ResolveError> {
    if node.is_null() {
        return Ok(Vec::new());
    }
    let items = node
        .items()
        .ok_or_else(|| ResolveError::new(at, Some(node.loc), "overwrite must be a list"))?;
    items
        .iter()
        .enumerate()
        .map(|(i, item)| {
            let here = format!("{at}.{i}");
            let bad = |m: &str| ResolveError::new(here.clone(), Some(item.loc), m);
            let entries = item.entries().ok_or_else(|| bad("expected a mapping with 'path' and 'val'"))?;
            if let Some(e) = entries.iter().find(|e| e.key != "path" && e.key != "val") {
                return Err(bad(&format!("unexpected key '{}'", e.key)));
            }
            let path = item
                .get("path")
                .and_then(ConfigNode::as_str)
                .ok_or_else(|| bad("missing string 'path'"))?;
            let val = item.get("val").ok_or_else(|| bad("missing 'val'"))?;
            Ok(Overwrite {
                path: path.to_string(),
                val: val.clone(),
            })
        })
        .collect()
}

/// Applies overwrites in order. Each path must name an existing node or a
/// new key directly under an existing mapping.
pub fn apply_overwrites(root: &ConfigNode, overwrites: &[Overwrite]) -> Result<ConfigNode, ResolveError> {
    let mut out = root.clone();
    for ow in overwrites {
        let segs: Vec<&str> = ow.path.split('.').collect();
        if ow.path.is_empty() || segs.iter().any(|s| s.is_empty()) {
            return Err(ResolveError::new(&ow.path, Some(ow.val.loc), "invalid overwrite path"));
        }
        let (last, prefix) = segs.split_last().expect("nonempty path");
        let mut cur = &mut out;
        for (i, seg) in prefix.iter().enumerate() {
            cur = cur.child_mut(seg).ok_or_else(|| {
                ResolveError::new(
                    &ow.path,
                    Some(ow.val.loc),
                    format!("overwrite path prefix '{}' does not exist", segs[..=i].join(".")),
                )
            })?;
        }
        if let Some(target) = cur.child_mut(last) {
            *target = ow.val.clone();
        } else if !cur.set(last, ow.val.clone()) {
            return Err(ResolveError::new(
                &ow.path,
                Some(ow.val.loc),
                format!("overwrite path prefix '{}' is not a mapping", prefix.join(".")),
            ));
        }
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use seqex_config::load_config;

    #[test]
    fn placeholders() {
        let t = load_config("a: examples/output/{EXP}.mod\nb: '{EXP}-{EXP}'\nc: 3\nd: plain\n").unwrap();
        let s = substitute_placeholders(&t, "mini_experiment");
        assert_eq!(s.get("a").unwrap().as_str(), Some("examples/output/mini_experiment.mod"));
        assert_eq!(s.get("b").unwrap().as_str(), Some("mini_experiment-mini_experiment"));
        assert_eq!(s.get("c").unwrap(), &ConfigNode::int(3));
        assert_eq!(s.get("d").unwrap().as_str(), Some("plain"));
        assert_eq!(substitute_placeholders(&s, "x"), s);
    }

    #[test]
    fn overwrite_paths() {
        let t = load_config("exp_global: !ExpGlobal\n  seed: 1\nevaluate:\n- !X\n  a: 1\n").unwrap();
        let ows = vec![
            Overwrite {
                path: "exp_global.eval_only".into(),
                val: ConfigNode::bool(true),
            },
            Overwrite {
                path: "evaluate.0.a".into(),
                val: ConfigNode::int(2),
            },
        ];
        let o = apply_overwrites(&t, &ows).unwrap();
        assert_eq!(o.get("exp_global").unwrap().get("eval_only"), Some(&ConfigNode::bool(true)));
        assert_eq!(o.child("evaluate").unwrap().child("0").unwrap().get("a"), Some(&ConfigNode::int(2)));
        assert_eq!(apply_overwrites(&t, &[]).unwrap(), t);
        let bad = |p: &str| {
            apply_overwrites(
                &t,
                &[Overwrite {
                    path: p.into(),
                    val: ConfigNode::null(),
                }],
            )
        };
        assert!(bad("nope.x").is_err());
        assert!(bad("exp_global.seed.x").is_err());
        assert!(bad("evaluate.7").is_err());
        assert!(bad("").is_err());
    }

    #[test]
    fn parses_overwrite_lists() {
        let t = load_config("o:\n- path: a.b\n  val: !T {x: 1}\n").unwrap();
        let o = parse_overwrites(t.get("o").unwrap(), "overwrite").unwrap();
        assert_eq!(o[0].path, "a.b");
        assert_eq!(o[0].val.tag(), Some("T"));
        let t = load_config("o:\n- path: a\n  value: 1\n").unwrap();
        assert!(parse_overwrites(t.get("o").unwrap(), "overwrite").is_err());
    }
}
