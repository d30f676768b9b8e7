//! Central finite-difference check of analytic gradients.

use crate::error::TensorError;
use crate::graph::{Graph, NodeId};
use crate::params::{ParamId, ParamStore};

#[derive(Debug, Clone, Copy)]
pub struct GradCheckOptions {
    pub step: f64,
    /// Check at most this many evenly spaced entries per parameter.
    pub max_per_param: Option<usize>,
}

impl Default for GradCheckOptions {
    fn default() -> Self {
        Self {
            step: 1e-5,
            max_per_param: None,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct GradCheckEntry {
    pub param: String,
    pub index: usize,
    pub analytic: f64,
    pub numeric: f64,
}

impl GradCheckEntry {
    /// `|a - n| / max(|a|, |n|, 1e-3)`
    pub fn rel_error(&self) -> f64 {
        let denom = self.analytic.abs().max(self.numeric.abs()).max(1e-3);
        (self.analytic - self.numeric).abs() / denom
    }
}

#[derive(Debug, Clone, Default)]
pub struct GradCheckReport {
    pub entries: Vec<GradCheckEntry>,
}

impl GradCheckReport {
    pub fn max_rel_error(&self) -> f64 {
        self.entries.iter().map(GradCheckEntry::rel_error).fold(0.0, f64::max)
    }

    pub fn worst(&self) -> Option<&GradCheckEntry> {
        self.entries
            .iter()
            .max_by(|a, b| a.rel_error().total_cmp(&b.rel_error()))
    }
}

/// Compares backward gradients of the scalar built by `loss` against
/// `(f(w + h) - f(w - h)) / 2h` for every checked entry of every parameter.
/// `loss` must be deterministic; it is called on inference graphs.
pub fn check<F>(store: &mut ParamStore, mut loss: F, opts: GradCheckOptions) -> Result<GradCheckReport, TensorError>
where
    F: FnMut(&mut Graph<'_>) -> Result<NodeId, TensorError>,
{
    let grads = {
        let mut g = Graph::new(store);
        let l = loss(&mut g)?;
        g.backward(l)?
    };
    let mut eval = |store: &ParamStore| -> Result<f64, TensorError> {
        let mut g = Graph::new(store);
        let l = loss(&mut g)?;
        Ok(g.value(l).item())
    };
    let ids: Vec<ParamId> = store.ids().collect();
    let mut report = GradCheckReport::default();
    for id in ids {
        let analytic = grads.dense(id, store);
        let n = analytic.numel();
        let indices: Vec<usize> = match opts.max_per_param {
            Some(k) if k < n => (0..k).map(|i| i * n / k).collect(),
            _ => (0..n).collect(),
        };
        for i in indices {
            let orig = store.value(id).data()[i];
            store.value_mut(id).data_mut()[i] = orig + opts.step;
            let plus = eval(store);
            store.value_mut(id).data_mut()[i] = orig - opts.step;
            let minus = eval(store);
            store.value_mut(id).data_mut()[i] = orig;
            let numeric = (plus? - minus?) / (2.0 * opts.step);
            report.entries.push(GradCheckEntry {
                param: store.get(id).name.clone(),
                index: i,
                analytic: analytic.data()[i],
                numeric,
            });
        }
    }
    Ok(report)
}
