use seqex_autodiff::Tensor;

use crate::data::corpus::SrcSeq;
use crate::data::vocab::ES;
use crate::error::{config_err, Result};

/// Time-major source data of one batch.
#[derive(Debug, Clone, PartialEq)]
pub enum SrcBatch {
    /// `[T][B]` ids, padded with `</s>`.
    Tokens(Vec<Vec<usize>>),
    /// `T` matrices of shape `[B, d]`, padded with zero frames.
    Features(Vec<Tensor>),
}

/// A padded mini-batch. Masks are `[T][B]` with 1.0 on real positions and
/// 0.0 on padding.
#[derive(Debug, Clone, PartialEq)]
pub struct Batch {
    pub src: SrcBatch,
    pub src_mask: Vec<Vec<f64>>,
    /// `[T][B]` target ids (including `</s>`), padded with `</s>`.
    pub trg: Vec<Vec<usize>>,
    pub trg_mask: Vec<Vec<f64>>,
    /// Corpus positions of the batch members.
    pub indices: Vec<usize>,
}

fn lengths_mask(lens: &[usize], t_max: usize) -> Vec<Vec<f64>> {
    (0..t_max)
        .map(|t| lens.iter().map(|&l| if t < l { 1.0 } else { 0.0 }).collect())
        .collect()
}

impl Batch {
    /// Pads `srcs` (and `trgs`, which may be empty for decode-only batches)
    /// into one batch.
    pub fn new(srcs: &[&SrcSeq], trgs: &[&[usize]], indices: Vec<usize>) -> Result<Self> {
        if srcs.is_empty() {
            return config_err("empty batch");
        }
        if !trgs.is_empty() && trgs.len() != srcs.len() {
            return config_err(format!("{} sources but {} targets", srcs.len(), trgs.len()));
        }
        let b = srcs.len();
        let src_lens: Vec<usize> = srcs.iter().map(|s| s.len()).collect();
        let t_src = src_lens.iter().copied().max().unwrap_or(0);
        let src = match srcs[0] {
            SrcSeq::Tokens(_) => {
                let mut steps = vec![vec![ES; b]; t_src];
                for (j, s) in srcs.iter().enumerate() {
                    let SrcSeq::Tokens(ids) = s else {
                        return config_err("batch mixes token and feature sources");
                    };
                    for (t, &id) in ids.iter().enumerate() {
                        steps[t][j] = id;
                    }
                }
                SrcBatch::Tokens(steps)
            }
            SrcSeq::Features(first) => {
                let d = first.shape()[1];
                let mut steps = vec![vec![0.0; b * d]; t_src];
                for (j, s) in srcs.iter().enumerate() {
                    let SrcSeq::Features(m) = s else {
                        return config_err("batch mixes token and feature sources");
                    };
                    if m.shape()[1] != d {
                        return config_err(format!("feature dims {} and {d} in one batch", m.shape()[1]));
                    }
                    for (t, step) in steps.iter_mut().enumerate().take(m.shape()[0]) {
                        step[j * d..(j + 1) * d].copy_from_slice(m.row(t));
                    }
                }
                SrcBatch::Features(
                    steps
                        .into_iter()
                        .map(|data| Tensor::new(vec![b, d], data))
                        .collect::<std::result::Result<_, _>>()?,
                )
            }
        };
        let trg_lens: Vec<usize> = trgs.iter().map(|t| t.len()).collect();
        let t_trg = trg_lens.iter().copied().max().unwrap_or(0);
        let mut trg = vec![vec![ES; b]; t_trg];
        for (j, t) in trgs.iter().enumerate() {
            for (k, &id) in t.iter().enumerate() {
                trg[k][j] = id;
            }
        }
        Ok(Batch {
            src,
            src_mask: lengths_mask(&src_lens, t_src),
            trg,
            trg_mask: lengths_mask(&trg_lens, t_trg),
            indices,
        })
    }

    pub fn size(&self) -> usize {
        self.indices.len()
    }

    pub fn src_len(&self) -> usize {
        self.src_mask.len()
    }

    /// Number of real (unpadded) target tokens.
    pub fn trg_words(&self) -> usize {
        self.trg_mask.iter().flatten().filter(|&&m| m > 0.0).count()
    }

    /// Real length of each member's source.
    pub fn src_lengths(&self) -> Vec<usize> {
        (0..self.size())
            .map(|j| self.src_mask.iter().filter(|m| m[j] > 0.0).count())
            .collect()
    }

    /// Unpadded target sequence of member `j`.
    pub fn trg_seq(&self, j: usize) -> Vec<usize> {
        self.trg
            .iter()
            .zip(&self.trg_mask)
            .filter(|(_, m)| m[j] > 0.0)
            .map(|(t, _)| t[j])
            .collect()
    }

    /// The same batch with extra all-padding steps appended on both sides.
    pub fn with_extra_padding(&self, src_steps: usize, trg_steps: usize) -> Batch {
        let b = self.size();
        let mut out = self.clone();
        for _ in 0..src_steps {
            out.src_mask.push(vec![0.0; b]);
            match &mut out.src {
                SrcBatch::Tokens(s) => s.push(vec![ES; b]),
                SrcBatch::Features(f) => {
                    let d = f[0].shape()[1];
                    f.push(Tensor::zeros(&[b, d]));
                }
            }
        }
        for _ in 0..trg_steps {
            out.trg_mask.push(vec![0.0; b]);
            out.trg.push(vec![ES; b]);
        }
        out
    }
}

/// Stable sort of positions by length, cut into consecutive groups of
/// `batch_size` (the last may be smaller).
pub fn sort_and_chunk(lens: &[usize], batch_size: usize) -> Vec<Vec<usize>> {
    let mut order: Vec<usize> = (0..lens.len()).collect();
    order.sort_by_key(|&i| lens[i]);
    order.chunks(batch_size.max(1)).map(<[usize]>::to_vec).collect()
}

/// Length-sorted, padded batches over a parallel corpus, in sorted order.
/// Callers shuffle the batch order per epoch.
pub fn src_batcher(srcs: &[SrcSeq], trgs: &[Vec<usize>], batch_size: usize) -> Result<Vec<Batch>> {
    if srcs.is_empty() {
        return config_err("empty corpus");
    }
    if batch_size == 0 {
        return config_err("batch_size must be at least 1");
    }
    if !trgs.is_empty() && trgs.len() != srcs.len() {
        return config_err(format!(
            "source has {} sentences but target has {}",
            srcs.len(),
            trgs.len()
        ));
    }
    let lens: Vec<usize> = srcs.iter().map(SrcSeq::len).collect();
    sort_and_chunk(&lens, batch_size)
        .into_iter()
        .map(|idx| {
            let s: Vec<&SrcSeq> = idx.iter().map(|&i| &srcs[i]).collect();
            let t: Vec<&[usize]> = if trgs.is_empty() {
                Vec::new()
            } else {
                idx.iter().map(|&i| trgs[i].as_slice()).collect()
            };
            Batch::new(&s, &t, idx)
        })
        .collect()
}

/// Sorts by source length and packs into batches of `batch_size`.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct SrcBatcher {
    pub batch_size: usize,
}

impl SrcBatcher {
    pub fn pack(&self, srcs: &[SrcSeq], trgs: &[Vec<usize>]) -> Result<Vec<Batch>> {
        src_batcher(srcs, trgs, self.batch_size)
    }
}
