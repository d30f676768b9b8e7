//! The full resolution pipeline and the resulting experiment object.

use std::path::PathBuf;
use std::rc::Rc;

use indexmap::IndexMap;
use seqex_autodiff::{ParamStore, Rng, SeedableRng};
use seqex_config::{ConfigNode, Loc, NodeKind};

use crate::error::{Error, ResolveError, Result};
use crate::inference::EvalTask;
use crate::nn::DefaultTranslator;
use crate::resolver::expand::{fill_defaults, ref_target};
use crate::resolver::overwrite::{apply_overwrites, parse_overwrites, substitute_placeholders};
use crate::resolver::refs::{is_component, navigate, resolve_references, Plan};
use crate::resolver::registry::{join_path, BuildCtx, Registry, REF_TAG};
use crate::resolver::value::{Args, Instance, Value};
use crate::training::{read_spec, TrainingRegimen};

/// Experiment-wide settings.
#[derive(Debug, Clone, PartialEq)]
pub struct ExpGlobal {
    pub model_file: PathBuf,
    pub log_file: PathBuf,
    pub default_layer_dim: usize,
    pub dropout: f64,
    pub eval_only: bool,
    pub seed: u64,
}

/// What an `!Experiment` node constructs.
pub struct ExperimentParts {
    pub exp_global: Rc<ExpGlobal>,
    pub model: Rc<DefaultTranslator>,
    pub train: Option<Rc<dyn TrainingRegimen>>,
    pub evaluate: Vec<Rc<dyn EvalTask>>,
}

/// Constructed components by config path, plus the reference aliases.
#[derive(Debug, Clone, Default)]
pub struct ComponentGraph {
    pub instances: IndexMap<String, Instance>,
    pub aliases: Vec<(String, String)>,
}

impl ComponentGraph {
    /// The instance at `path`, looking through references.
    pub fn get(&self, path: &str) -> Option<&Instance> {
        self.instances.get(path).or_else(|| {
            self.aliases
                .iter()
                .find(|(from, _)| from == path)
                .and_then(|(_, to)| self.instances.get(to))
        })
    }
}

/// An experiment tree after default filling, substitution and planning.
#[derive(Debug, Clone)]
pub struct Prepared {
    pub name: String,
    /// Defaults filled, `{EXP}` kept: the form that is dumped.
    pub expanded: ConfigNode,
    /// `expanded` with `{EXP}` substituted.
    pub tree: ConfigNode,
    pub plan: Plan,
}

impl Prepared {
    /// The substituted string setting of `exp_global`.
    pub fn global_str(&self, key: &str) -> Option<&str> {
        self.tree.get("exp_global")?.get(key)?.as_str()
    }

    /// Every `hyp_file` setting in the tree.
    pub fn hyp_files(&self) -> Vec<PathBuf> {
        let mut out = Vec::new();
        self.tree.walk(&mut |n| {
            if n.tag() == Some("AccuracyEvalTask") {
                if let Some(p) = n.get("hyp_file").and_then(ConfigNode::as_str) {
                    out.push(PathBuf::from(p));
                }
            }
        });
        out
    }
}

pub fn prepare(tree: &ConfigNode, registry: &Registry, name: &str) -> Result<Prepared, ResolveError> {
    let expanded = fill_defaults(tree, registry)?;
    let substituted = substitute_placeholders(&expanded, name);
    let plan = resolve_references(&substituted)?;
    Ok(Prepared {
        name: name.to_string(),
        expanded,
        tree: substituted,
        plan,
    })
}

/// How the experiment's random stream is seeded: `seed_override` (or
/// `exp_global.seed`) plus `index`.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq)]
pub struct Seeding {
    pub seed_override: Option<u64>,
    pub index: u64,
}

pub struct Experiment {
    pub name: String,
    pub exp_global: Rc<ExpGlobal>,
    pub model: Rc<DefaultTranslator>,
    pub train: Option<Rc<dyn TrainingRegimen>>,
    pub evaluate: Vec<Rc<dyn EvalTask>>,
    pub store: ParamStore,
    pub rng: Rng,
    pub seed: u64,
    pub graph: ComponentGraph,
    pub prepared: Prepared,
}

impl Experiment {
    /// `{<name>: <expanded tree>}`, as written to checkpoints.
    pub fn dump_spec(&self) -> ConfigNode {
        dump_spec(&self.prepared)
    }

    pub fn instance(&self, path: &str) -> Option<&Instance> {
        self.graph.get(path)
    }
}

pub fn dump_spec(p: &Prepared) -> ConfigNode {
    ConfigNode::mapping([(p.name.clone(), p.expanded.clone())])
}

fn node_at<'a>(root: &'a ConfigNode, path: &str) -> Option<&'a ConfigNode> {
    if path.is_empty() {
        return Some(root);
    }
    path.split('.').try_fold(root, |n, seg| n.child(seg))
}

fn to_value(root: &ConfigNode, node: &ConfigNode, path: &str, built: &IndexMap<String, Instance>) -> Result<Value> {
    if node.tag() == Some(REF_TAG) {
        let target = ref_target(node, path)?;
        let (tp, tn) = navigate(root, target).map_err(|m| ResolveError::new(path, Some(node.loc), m))?;
        if is_component(tn) {
            return built
                .get(&tp)
                .cloned()
                .map(Value::Component)
                .ok_or_else(|| ResolveError::new(path, Some(node.loc), format!("'{tp}' is not built yet")).into());
        }
        return to_value(root, tn, &tp, built);
    }
    if is_component(node) {
        return built
            .get(path)
            .cloned()
            .map(Value::Component)
            .ok_or_else(|| ResolveError::new(path, Some(node.loc), "component is not built yet").into());
    }
    Ok(match &node.kind {
        NodeKind::Scalar(s) => Value::from_scalar(s),
        NodeKind::Mapping(entries) => Value::Map(
            entries
                .iter()
                .map(|e| Ok((e.key.clone(), to_value(root, &e.value, &join_path(path, &e.key), built)?)))
                .collect::<Result<_>>()?,
        ),
        NodeKind::Sequence(items) => Value::List(
            items
                .iter()
                .enumerate()
                .map(|(i, n)| to_value(root, n, &join_path(path, &i.to_string()), built))
                .collect::<Result<_>>()?,
        ),
        NodeKind::Alias(a) => {
            return Err(ResolveError::new(path, Some(node.loc), format!("unresolved alias *{a}")).into());
        }
    })
}

fn annotate(e: Error, path: &str, tag: &str, loc: Loc) -> Error {
    match e {
        Error::Resolve(_) => e,
        other => {
            ResolveError::new(path, Some(loc), format!("cannot build !{tag}: {other}")).into()
        }
    }
}

/// Expands, substitutes, plans and constructs one experiment tree.
pub fn instantiate_graph(tree: &ConfigNode, registry: &Registry, name: &str, seeding: Seeding) -> Result<Experiment> {
    let prepared = prepare(tree, registry, name)?;
    let base_seed = match seeding.seed_override {
        Some(s) => s,
        None => {
            let node = prepared
                .tree
                .get("exp_global")
                .and_then(|g| g.get("seed"))
                .cloned()
                .unwrap_or_else(|| ConfigNode::int(0));
            match node.as_scalar() {
                Some(seqex_config::Scalar::Int(i)) if *i >= 0 => *i as u64,
                _ => {
                    return Err(ResolveError::new(
                        "exp_global.seed",
                        Some(node.loc),
                        "seed must be a nonnegative integer",
                    )
                    .into())
                }
            }
        }
    };
    let seed = base_seed.wrapping_add(seeding.index);
    let mut rng = Rng::seed_from_u64(seed);
    let mut store = ParamStore::new();
    let mut built: IndexMap<String, Instance> = IndexMap::new();
    for path in &prepared.plan.order {
        let node = node_at(&prepared.tree, path).expect("planned paths exist");
        let tag = node.tag().expect("planned nodes are tagged");
        let schema = registry.get(tag).expect("tags were checked while filling defaults");
        let mut values = IndexMap::new();
        for e in node.entries().unwrap_or(&[]) {
            let v = to_value(&prepared.tree, &e.value, &join_path(path, &e.key), &built)?;
            values.insert(e.key.clone(), (v, e.value.loc));
        }
        let args = Args::new(path.clone(), node.loc, values);
        let mut ctx = BuildCtx {
            store: &mut store,
            rng: &mut rng,
            path: path.clone(),
        };
        let inst = (schema.build)(&mut ctx, &args).map_err(|e| annotate(e, path, tag, node.loc))?;
        built.insert(path.clone(), inst);
    }
    let root = built.get("").expect("the experiment root is planned last");
    let parts = root
        .get::<ExperimentParts>()
        .ok_or_else(|| ResolveError::new("", None, "root did not build an experiment"))?;
    let graph = ComponentGraph {
        aliases: prepared.plan.aliases.clone(),
        instances: built,
    };
    Ok(Experiment {
        name: name.to_string(),
        exp_global: parts.exp_global.clone(),
        model: parts.model.clone(),
        train: parts.train.clone(),
        evaluate: parts.evaluate.clone(),
        store,
        rng,
        seed,
        graph,
        prepared,
    })
}

/// An experiment node that may be a `load:`/`overwrite:` stub. Returns
/// the tree to instantiate and, for a stub, the checkpoint directory
/// whose weights must be loaded afterwards.
pub fn resolve_load(node: &ConfigNode) -> Result<(ConfigNode, Option<PathBuf>)> {
    let Some(load) = node.get("load") else {
        return Ok((node.clone(), None));
    };
    if let Some(e) = node
        .entries()
        .unwrap_or(&[])
        .iter()
        .find(|e| e.key != "load" && e.key != "overwrite")
    {
        return Err(ResolveError::new(
            &e.key,
            Some(e.key_loc),
            "an experiment with 'load' may only have 'overwrite' besides it",
        )
        .into());
    }
    let dir = PathBuf::from(
        load.as_str()
            .ok_or_else(|| ResolveError::new("load", Some(load.loc), "load must be a path string"))?,
    );
    let spec = read_spec(&dir)?;
    let loaded = match spec.entries() {
        Some([only]) => only.value.clone(),
        _ => {
            return Err(Error::Checkpoint(format!(
                "{} must hold exactly one experiment",
                dir.join(crate::training::SPEC_FILE).display()
            )))
        }
    };
    let ows = parse_overwrites(node.get("overwrite").unwrap_or(&ConfigNode::null()), "overwrite")?;
    Ok((apply_overwrites(&loaded, &ows)?, Some(dir)))
}
