//! `!Ref` resolution and construction order.

use std::collections::HashMap;

use indexmap::IndexMap;
use seqex_config::{ConfigNode, NodeKind};

use crate::error::ResolveError;
use crate::resolver::expand::ref_target;
use crate::resolver::registry::{join_path, REF_TAG};

const MAX_REF_DEPTH: usize = 64;

pub(crate) fn is_component(node: &ConfigNode) -> bool {
    node.tag().is_some_and(|t| t != REF_TAG)
}

fn is_ref(node: &ConfigNode) -> bool {
    node.tag() == Some(REF_TAG)
}

/// Follows a dotted path from the experiment root, jumping through any
/// `!Ref` met on the way (including at the end). Returns the canonical
/// path of the node reached.
pub fn navigate<'a>(root: &'a ConfigNode, path: &str) -> Result<(String, &'a ConfigNode), String> {
    navigate_depth(root, path, 0)
}

fn navigate_depth<'a>(root: &'a ConfigNode, path: &str, depth: usize) -> Result<(String, &'a ConfigNode), String> {
    if depth > MAX_REF_DEPTH {
        return Err(format!("reference cycle through '{path}'"));
    }
    if path.is_empty() {
        return Err("empty reference path".into());
    }
    let mut canon = String::new();
    let mut cur = root;
    for seg in path.split('.') {
        let next = cur
            .child(seg)
            .ok_or_else(|| format!("reference path '{path}' does not exist (no '{seg}' under '{canon}')"))?;
        canon = join_path(&canon, seg);
        cur = next;
        if is_ref(cur) {
            let target = ref_target(cur, &canon).map_err(|e| e.message)?;
            (canon, cur) = navigate_depth(root, target, depth + 1)?;
        }
    }
    Ok((canon, cur))
}

/// Construction schedule for one experiment tree.
#[derive(Debug, Clone, PartialEq)]
pub struct Plan {
    /// Component paths, dependencies first. The experiment root (`""`)
    /// comes last.
    pub order: Vec<String>,
    /// `(ref path, canonical target path)` for every `!Ref`, in document
    /// order.
    pub aliases: Vec<(String, String)>,
}

fn collect_nodes<'a>(
    node: &'a ConfigNode,
    path: &str,
    comps: &mut IndexMap<String, &'a ConfigNode>,
    refs: &mut Vec<(String, &'a ConfigNode)>,
) {
    if is_ref(node) {
        refs.push((path.to_string(), node));
        return;
    }
    if is_component(node) {
        comps.insert(path.to_string(), node);
    }
    match &node.kind {
        NodeKind::Mapping(entries) => {
            for e in entries {
                collect_nodes(&e.value, &join_path(path, &e.key), comps, refs);
            }
        }
        NodeKind::Sequence(items) => {
            for (i, n) in items.iter().enumerate() {
                collect_nodes(n, &join_path(path, &i.to_string()), comps, refs);
            }
        }
        _ => {}
    }
}

struct Deps<'a> {
    root: &'a ConfigNode,
}

impl<'a> Deps<'a> {
    /// Components that must exist before the value at `path` can be built.
    fn of_value(
        &self,
        node: &'a ConfigNode,
        path: &str,
        out: &mut Vec<String>,
        plain: &mut Vec<String>,
    ) -> Result<(), ResolveError> {
        if is_ref(node) {
            let target = ref_target(node, path)?;
            let (tp, tn) = navigate(self.root, target).map_err(|m| ResolveError::new(path, Some(node.loc), m))?;
            if is_component(tn) {
                out.push(tp);
            } else if matches!(tn.kind, NodeKind::Mapping(_) | NodeKind::Sequence(_)) {
                if plain.contains(&tp) {
                    return Err(ResolveError::new(
                        path,
                        Some(node.loc),
                        format!("reference cycle through '{tp}'"),
                    ));
                }
                plain.push(tp.clone());
                self.of_value(tn, &tp, out, plain)?;
                plain.pop();
            }
            return Ok(());
        }
        if is_component(node) {
            out.push(path.to_string());
            return Ok(());
        }
        match &node.kind {
            NodeKind::Mapping(entries) => {
                for e in entries {
                    self.of_value(&e.value, &join_path(path, &e.key), out, plain)?;
                }
            }
            NodeKind::Sequence(items) => {
                for (i, n) in items.iter().enumerate() {
                    self.of_value(n, &join_path(path, &i.to_string()), out, plain)?;
                }
            }
            _ => {}
        }
        Ok(())
    }

    fn of_component(&self, node: &'a ConfigNode, path: &str) -> Result<Vec<String>, ResolveError> {
        let mut out = Vec::new();
        for e in node.entries().unwrap_or(&[]) {
            self.of_value(&e.value, &join_path(path, &e.key), &mut out, &mut Vec::new())?;
        }
        Ok(out)
    }
}

#[derive(Clone, Copy, PartialEq)]
enum Mark {
    Visiting,
    Done,
}

/// Orders construction so every component comes after everything it
/// references or contains. References may point forward or backward;
/// only true cycles are errors.
pub fn resolve_references(root: &ConfigNode) -> Result<Plan, ResolveError> {
    let mut comps = IndexMap::new();
    let mut refs = Vec::new();
    collect_nodes(root, "", &mut comps, &mut refs);
    let mut aliases = Vec::with_capacity(refs.len());
    for (path, node) in &refs {
        let target = ref_target(node, path)?;
        let (tp, _) = navigate(root, target).map_err(|m| ResolveError::new(path.clone(), Some(node.loc), m))?;
        aliases.push((path.clone(), tp));
    }
    let deps = Deps { root };
    let mut marks: HashMap<String, Mark> = HashMap::new();
    let mut order = Vec::with_capacity(comps.len());
    let mut stack: Vec<String> = Vec::new();
    for start in comps.keys() {
        visit(start, &comps, &deps, &mut marks, &mut stack, &mut order)?;
    }
    Ok(Plan { order, aliases })
}

fn visit<'a>(
    path: &str,
    comps: &IndexMap<String, &'a ConfigNode>,
    deps: &Deps<'a>,
    marks: &mut HashMap<String, Mark>,
    stack: &mut Vec<String>,
    order: &mut Vec<String>,
) -> Result<(), ResolveError> {
    match marks.get(path) {
        Some(Mark::Done) => return Ok(()),
        Some(Mark::Visiting) => {
            let start = stack.iter().position(|p| p == path).unwrap_or(0);
            let mut cycle: Vec<&str> = stack[start..].iter().map(|p| display(p)).collect();
            cycle.push(display(path));
            let node = comps[path];
            return Err(ResolveError::new(
                path,
                Some(node.loc),
                format!("reference cycle: {}", cycle.join(" -> ")),
            ));
        }
        None => {}
    }
    let node = comps[path];
    marks.insert(path.to_string(), Mark::Visiting);
    stack.push(path.to_string());
    for dep in deps.of_component(node, path)? {
        visit(&dep, comps, deps, marks, stack, order)?;
    }
    stack.pop();
    marks.insert(path.to_string(), Mark::Done);
    order.push(path.to_string());
    Ok(())
}

fn display(path: &str) -> &str {
    if path.is_empty() {
        "<experiment>"
    } else {
        path
    }
}
