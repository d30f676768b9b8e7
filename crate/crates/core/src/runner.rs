//! Running the experiments of a config file, and random search over them.

use std::collections::HashMap;
use std::fs;
use std::path::{Path, PathBuf};
use std::thread;

use rand::RngCore;
use seqex_autodiff::{Rng, SeedableRng};
use seqex_config::{load_config, ConfigNode};

use crate::error::{Error, ResolveError, Result};
use crate::inference::Score;
use crate::log::{fmt_float, Logger};
use crate::resolver::{
    apply_overwrites, builtin_registry, instantiate_graph, prepare, resolve_load, Experiment, Overwrite, Registry,
    Seeding,
};
use crate::training::{load_weights, read_weights, CheckpointTarget, RunCtx};

#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct RunOptions {
    /// Run only these experiments, in this order.
    pub selection: Option<Vec<String>>,
    pub seed_override: Option<u64>,
    /// Mirror log lines to stdout.
    pub echo: bool,
    pub parallel: bool,
}

#[derive(Debug, Clone, PartialEq)]
pub enum Status {
    Ok,
    Failed(String),
}

#[derive(Debug, Clone, PartialEq)]
pub struct ExperimentResult {
    pub name: String,
    pub status: Status,
    /// Final evaluation scores in task order; empty unless `Ok`.
    pub metrics: Vec<Score>,
    pub log_file: Option<PathBuf>,
    pub model_file: Option<PathBuf>,
    pub hyp_files: Vec<PathBuf>,
    /// Every line written to the log.
    pub log_lines: Vec<String>,
}

impl ExperimentResult {
    pub fn is_ok(&self) -> bool {
        self.status == Status::Ok
    }

    pub fn metric(&self, name: &str) -> Option<f64> {
        self.metrics.iter().find(|s| s.metric == name).map(|s| s.value)
    }

    fn failed(name: &str, msg: String) -> Self {
        Self {
            name: name.to_string(),
            status: Status::Failed(msg),
            metrics: Vec::new(),
            log_file: None,
            model_file: None,
            hyp_files: Vec::new(),
            log_lines: Vec::new(),
        }
    }
}

/// The experiments of a document in file order, with their indices.
fn select<'a>(doc: &'a ConfigNode, selection: Option<&[String]>) -> Result<Vec<(usize, &'a str, &'a ConfigNode)>> {
    let entries = doc
        .entries()
        .ok_or_else(|| ResolveError::new("", Some(doc.loc), "a config file must map experiment names to experiments"))?;
    let all: Vec<(usize, &str, &ConfigNode)> = entries
        .iter()
        .enumerate()
        .map(|(i, e)| (i, e.key.as_str(), &e.value))
        .collect();
    let Some(names) = selection else {
        return Ok(all);
    };
    names
        .iter()
        .map(|n| {
            all.iter()
                .find(|(_, name, _)| name == n)
                .copied()
                .ok_or_else(|| Error::Config(format!("no experiment named '{n}'")))
        })
        .collect()
}

pub fn run_experiments(config_path: &Path, opts: &RunOptions) -> Result<Vec<ExperimentResult>> {
    let text = fs::read_to_string(config_path).map_err(|e| Error::io(config_path, e))?;
    let doc = load_config(&text).map_err(|e| Error::from(e).context(config_path.display().to_string()))?;
    run_document(&doc, &config_path.display().to_string(), opts)
}

/// Runs the experiments of a parsed document. Only a malformed document
/// or an unknown selected name is an error; experiment failures are
/// reported in the results.
pub fn run_document(doc: &ConfigNode, config_label: &str, opts: &RunOptions) -> Result<Vec<ExperimentResult>> {
    let chosen = select(doc, opts.selection.as_deref())?;
    if !opts.parallel {
        let registry = builtin_registry();
        return Ok(chosen
            .into_iter()
            .map(|(i, name, node)| run_one(&registry, name, node, i as u64, config_label, opts))
            .collect());
    }
    check_disjoint_outputs(&chosen)?;
    thread::scope(|s| {
        let handles: Vec<_> = chosen
            .iter()
            .map(|&(i, name, node)| {
                s.spawn(move || run_one(&builtin_registry(), name, node, i as u64, config_label, opts))
            })
            .collect();
        Ok(handles
            .into_iter()
            .zip(&chosen)
            .map(|(h, (_, name, _))| {
                h.join()
                    .unwrap_or_else(|_| ExperimentResult::failed(name, "experiment thread panicked".into()))
            })
            .collect())
    })
}

/// Output files of an experiment, when its config can be resolved.
fn output_paths(registry: &Registry, name: &str, node: &ConfigNode) -> Option<Vec<PathBuf>> {
    let (tree, _) = resolve_load(node).ok()?;
    let p = prepare(&tree, registry, name).ok()?;
    let mut out: Vec<PathBuf> = ["log_file", "model_file"]
        .iter()
        .filter_map(|k| p.global_str(k).map(PathBuf::from))
        .collect();
    out.extend(p.hyp_files());
    Some(out)
}

fn check_disjoint_outputs(chosen: &[(usize, &str, &ConfigNode)]) -> Result<()> {
    let registry = builtin_registry();
    let mut owner: HashMap<PathBuf, &str> = HashMap::new();
    for &(_, name, node) in chosen {
        for p in output_paths(&registry, name, node).unwrap_or_default() {
            if let Some(other) = owner.insert(p.clone(), name) {
                if other != name {
                    return Err(Error::Config(format!(
                        "experiments '{other}' and '{name}' both write {}; cannot run them in parallel",
                        p.display()
                    )));
                }
            }
        }
    }
    Ok(())
}

fn run_one(
    registry: &Registry,
    name: &str,
    node: &ConfigNode,
    index: u64,
    config_label: &str,
    opts: &RunOptions,
) -> ExperimentResult {
    let seeding = Seeding {
        seed_override: opts.seed_override,
        index,
    };
    let setup = resolve_load(node)
        .and_then(|(tree, load)| Ok((instantiate_graph(&tree, registry, name, seeding)?, load)));
    let (mut exp, load) = match setup {
        Ok(x) => x,
        Err(e) => {
            let msg = e.to_string();
            eprintln!("[{name}] failed: {msg}");
            return ExperimentResult::failed(name, msg);
        }
    };
    let mut log = Logger::open(name, &exp.exp_global.log_file, opts.echo);
    log.log(format!("start config={config_label}"));
    let outcome = execute(&mut exp, load.as_deref(), &mut log);
    let status = match &outcome {
        Ok(_) => Status::Ok,
        Err(e) => {
            log.log(format!("failed error={e}"));
            Status::Failed(e.to_string())
        }
    };
    ExperimentResult {
        name: name.to_string(),
        status,
        metrics: outcome.unwrap_or_default(),
        log_file: Some(exp.exp_global.log_file.clone()),
        model_file: Some(exp.exp_global.model_file.clone()),
        hyp_files: exp.evaluate.iter().flat_map(|t| t.outputs()).collect(),
        log_lines: log.lines().to_vec(),
    }
}

/// Loads or trains, then evaluates.
fn execute(exp: &mut Experiment, load: Option<&Path>, log: &mut Logger) -> Result<Vec<Score>> {
    if let Some(dir) = load {
        load_weights(&mut exp.store, read_weights(dir)?)?;
        log.log(format!("loaded model={}", dir.display()));
    }
    if !exp.exp_global.eval_only {
        if let Some(train) = exp.train.clone() {
            let target = CheckpointTarget {
                dir: exp.exp_global.model_file.clone(),
                spec: exp.dump_spec(),
            };
            let summary = train.run(&mut RunCtx {
                store: &mut exp.store,
                rng: &mut exp.rng,
                log,
                checkpoint: Some(&target),
            })?;
            if summary.checkpoints > 0 {
                load_weights(&mut exp.store, read_weights(&target.dir)?)?;
            }
        }
    }
    let mut metrics = Vec::new();
    for (i, task) in exp.evaluate.iter().enumerate() {
        let scores = task
            .evaluate(&exp.store, &mut exp.rng)
            .map_err(|e| e.context(format!("evaluate task {i}")))?;
        for s in &scores {
            log.log(format!("test {}={}", s.metric, fmt_float(s.value)));
        }
        metrics.extend(scores);
    }
    Ok(metrics)
}

/// One named slot of a search space.
#[derive(Debug, Clone, PartialEq)]
pub struct SearchSlot {
    pub name: String,
    pub path: String,
    pub values: Vec<ConfigNode>,
}

/// Slots in declaration order. The file maps slot names to
/// `{path: <dotted path>, values: [...]}`.
pub fn parse_search_space(doc: &ConfigNode) -> Result<Vec<SearchSlot>> {
    let entries = doc
        .entries()
        .ok_or_else(|| ResolveError::new("", Some(doc.loc), "a search space maps slot names to slots"))?;
    if entries.is_empty() {
        return Err(ResolveError::new("", Some(doc.loc), "empty search space").into());
    }
    entries
        .iter()
        .map(|e| {
            let bad = |m: &str| Error::from(ResolveError::new(&e.key, Some(e.value.loc), m));
            let path = e
                .value
                .get("path")
                .and_then(ConfigNode::as_str)
                .ok_or_else(|| bad("missing string 'path'"))?;
            let values = e
                .value
                .get("values")
                .and_then(ConfigNode::items)
                .ok_or_else(|| bad("missing list 'values'"))?;
            if values.is_empty() {
                return Err(bad("'values' is empty"));
            }
            if let Some(k) = e
                .value
                .entries()
                .and_then(|es| es.iter().find(|k| k.key != "path" && k.key != "values"))
            {
                return Err(bad(&format!("unexpected key '{}'", k.key)));
            }
            Ok(SearchSlot {
                name: e.key.clone(),
                path: path.to_string(),
                values: values.to_vec(),
            })
        })
        .collect()
}

/// Value indices per trial: for each trial, one `next_u64() % n` draw per
/// slot in declaration order from a ChaCha8 stream seeded with `seed`.
pub fn sample_assignments(slots: &[SearchSlot], trials: usize, seed: u64) -> Vec<Vec<usize>> {
    let mut rng = Rng::seed_from_u64(seed);
    (0..trials)
        .map(|_| {
            slots
                .iter()
                .map(|s| (rng.next_u64() % s.values.len() as u64) as usize)
                .collect()
        })
        .collect()
}

#[derive(Debug, Clone, PartialEq)]
pub struct Trial {
    pub name: String,
    /// `(slot name, chosen value)` in slot order.
    pub assignment: Vec<(String, ConfigNode)>,
    pub result: ExperimentResult,
}

impl Trial {
    /// The first evaluation score, the quantity trials are ranked by.
    pub fn score(&self) -> Option<&Score> {
        self.result.metrics.first()
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct SearchReport {
    pub trials: Vec<Trial>,
}

impl SearchReport {
    /// Trial indices from best to worst; failed trials last.
    pub fn ranking(&self) -> Vec<usize> {
        let mut idx: Vec<usize> = (0..self.trials.len()).collect();
        idx.sort_by(|&a, &b| {
            match (self.trials[a].score(), self.trials[b].score()) {
                (Some(x), Some(y)) => {
                    let ord = x.value.total_cmp(&y.value);
                    if x.higher_is_better {
                        ord.reverse()
                    } else {
                        ord
                    }
                }
                (Some(_), None) => std::cmp::Ordering::Less,
                (None, Some(_)) => std::cmp::Ordering::Greater,
                (None, None) => std::cmp::Ordering::Equal,
            }
        });
        idx
    }

    pub fn summary(&self) -> String {
        let mut out = String::from("rank trial metric assignment\n");
        for (r, &i) in self.ranking().iter().enumerate() {
            let t = &self.trials[i];
            let metric = match (t.score(), &t.result.status) {
                (Some(s), _) => format!("{}={}", s.metric, fmt_float(s.value)),
                (None, Status::Failed(_)) => "failed".into(),
                (None, Status::Ok) => "-".into(),
            };
            let assignment: Vec<String> = t
                .assignment
                .iter()
                .map(|(k, v)| format!("{k}={}", v.as_scalar().map_or_else(|| "<tree>".into(), |s| s.to_string())))
                .collect();
            out.push_str(&format!("{} {} {} {}\n", r + 1, t.name, metric, assignment.join(",")));
        }
        out
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct SearchOptions {
    pub trials: usize,
    pub seed: u64,
    /// The base experiment; defaults to the first in the file.
    pub base: Option<String>,
    pub seed_override: Option<u64>,
    pub echo: bool,
}

/// Random search over `slots` applied to one experiment of `doc`. Every
/// trial uses the base experiment's seed, so trials differ only in the
/// sampled settings.
pub fn random_search(doc: &ConfigNode, slots: &[SearchSlot], opts: &SearchOptions) -> Result<SearchReport> {
    if opts.trials == 0 {
        return Err(Error::Config("trials must be at least 1".into()));
    }
    let selection = opts.base.clone().map(|b| vec![b]);
    let &(index, base, node) = select(doc, selection.as_deref())?
        .first()
        .ok_or_else(|| Error::Config("the config holds no experiments".into()))?;
    let registry = builtin_registry();
    let (tree, load) = resolve_load(node)?;
    if load.is_some() {
        return Err(Error::Config(format!("cannot search over the load experiment '{base}'")));
    }
    let base_tree = prepare(&tree, &registry, base)?.expanded;
    for slot in slots {
        for v in &slot.values {
            let ow = Overwrite {
                path: slot.path.clone(),
                val: v.clone(),
            };
            let t = apply_overwrites(&base_tree, &[ow]).map_err(|e| Error::from(e).context(format!("slot {}", slot.name)))?;
            prepare(&t, &registry, base).map_err(|e| Error::from(e).context(format!("slot {}", slot.name)))?;
        }
    }
    let run_opts = RunOptions {
        seed_override: opts.seed_override,
        echo: opts.echo,
        ..RunOptions::default()
    };
    let label = format!("search:{base}");
    let trials = sample_assignments(slots, opts.trials, opts.seed)
        .into_iter()
        .enumerate()
        .map(|(i, picks)| {
            let name = format!("{base}_trial{}", i + 1);
            let assignment: Vec<(String, ConfigNode)> = slots
                .iter()
                .zip(&picks)
                .map(|(s, &k)| (s.name.clone(), s.values[k].clone()))
                .collect();
            let ows: Vec<Overwrite> = slots
                .iter()
                .zip(&picks)
                .map(|(s, &k)| Overwrite {
                    path: s.path.clone(),
                    val: s.values[k].clone(),
                })
                .collect();
            let result = match apply_overwrites(&base_tree, &ows) {
                Ok(t) => run_one(&registry, &name, &t, index as u64, &label, &run_opts),
                Err(e) => ExperimentResult::failed(&name, e.to_string()),
            };
            Trial {
                name,
                assignment,
                result,
            }
        })
        .collect();
    Ok(SearchReport { trials })
}
