//! `<model_file>/spec.yaml` plus `<model_file>/weights.txt`.

use std::fmt::Write as _;
use std::fs;
use std::path::Path;

use seqex_autodiff::{ParamStore, Tensor};
use seqex_config::{load_config, serialize_config, ConfigNode};

use crate::error::{Error, Result};

pub const SPEC_FILE: &str = "spec.yaml";
pub const WEIGHTS_FILE: &str = "weights.txt";

/// Text form: `param <name> <rank> <dims...>` followed by one line per row
/// of the last axis, values at 17 significant digits.
pub fn format_weights(store: &ParamStore) -> String {
    let mut out = String::new();
    for (_, p) in store.iter() {
        let shape = p.value.shape();
        let _ = write!(out, "param {} {}", p.name, shape.len());
        for d in shape {
            let _ = write!(out, " {d}");
        }
        out.push('\n');
        for r in 0..p.value.outer_rows() {
            let row: Vec<String> = p.value.row(r).iter().map(|x| format!("{x:.16e}")).collect();
            out.push_str(&row.join(" "));
            out.push('\n');
        }
    }
    out
}

/// Parses weights text into `(name, tensor)` blocks.
pub fn parse_weights(text: &str) -> Result<Vec<(String, Tensor)>> {
    let bad = |line: usize, msg: &str| Error::Checkpoint(format!("weights line {line}: {msg}"));
    let mut out = Vec::new();
    let mut lines = text.lines().enumerate().filter(|(_, l)| !l.trim().is_empty());
    while let Some((i, header)) = lines.next() {
        let mut fields = header.split_whitespace();
        if fields.next() != Some("param") {
            return Err(bad(i + 1, "expected a 'param' header"));
        }
        let name = fields.next().ok_or_else(|| bad(i + 1, "missing name"))?.to_string();
        let rank: usize = fields
            .next()
            .and_then(|r| r.parse().ok())
            .ok_or_else(|| bad(i + 1, "bad rank"))?;
        let shape: Vec<usize> = fields
            .map(|d| d.parse().map_err(|_| bad(i + 1, "bad dimension")))
            .collect::<Result<_>>()?;
        if shape.len() != rank {
            return Err(bad(i + 1, "rank does not match dimensions"));
        }
        let numel: usize = shape.iter().product();
        let mut data = Vec::with_capacity(numel);
        while data.len() < numel {
            let (j, line) = lines.next().ok_or_else(|| bad(i + 1, "truncated values"))?;
            for v in line.split_whitespace() {
                data.push(v.parse::<f64>().map_err(|_| bad(j + 1, "bad value"))?);
            }
        }
        if data.len() != numel {
            return Err(bad(i + 1, "too many values"));
        }
        let t = Tensor::new(shape, data).map_err(|e| bad(i + 1, &e.to_string()))?;
        out.push((name, t));
    }
    Ok(out)
}

/// Copies weights into `store`. Every parameter must be present with the
/// same shape, and no extra parameters are allowed.
pub fn load_weights(store: &mut ParamStore, weights: Vec<(String, Tensor)>) -> Result<()> {
    if weights.len() != store.len() {
        for (_, p) in store.iter() {
            if !weights.iter().any(|(n, _)| *n == p.name) {
                return Err(Error::Checkpoint(format!("parameter {} missing from checkpoint", p.name)));
            }
        }
    }
    for (name, t) in weights {
        let id = store
            .id(&name)
            .ok_or_else(|| Error::Checkpoint(format!("checkpoint parameter {name} not in model")))?;
        if store.value(id).shape() != t.shape() {
            return Err(Error::Checkpoint(format!(
                "parameter {name}: checkpoint shape {:?} vs model shape {:?}",
                t.shape(),
                store.value(id).shape()
            )));
        }
        *store.value_mut(id) = t;
    }
    Ok(())
}

pub fn save_checkpoint(dir: &Path, spec: &ConfigNode, store: &ParamStore) -> Result<()> {
    fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    let spec_path = dir.join(SPEC_FILE);
    fs::write(&spec_path, serialize_config(spec)).map_err(|e| Error::io(&spec_path, e))?;
    let w = dir.join(WEIGHTS_FILE);
    fs::write(&w, format_weights(store)).map_err(|e| Error::io(&w, e))
}

pub fn read_spec(dir: &Path) -> Result<ConfigNode> {
    let p = dir.join(SPEC_FILE);
    let text = fs::read_to_string(&p).map_err(|e| Error::io(&p, e))?;
    load_config(&text).map_err(|e| Error::from(e).context(p.display().to_string()))
}

pub fn read_weights(dir: &Path) -> Result<Vec<(String, Tensor)>> {
    let p = dir.join(WEIGHTS_FILE);
    let text = fs::read_to_string(&p).map_err(|e| Error::io(&p, e))?;
    parse_weights(&text).map_err(|e| e.context(p.display().to_string()))
}
