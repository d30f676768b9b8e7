//! Synthetic corpora for desk-scale experiments.

use std::fs;
use std::path::{Path, PathBuf};

use rand::{Rng as _, SeedableRng};
use rand_distr::{Distribution, Normal};
use seqex_autodiff::{Rng, Tensor};

use crate::data::corpus::format_features;
use crate::error::{config_err, Error, Result};

/// Number of reserved vocab entries (`<s>`, `</s>`, `<unk>`).
const RESERVED: usize = 3;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum SynthTask {
    /// Target equals source.
    Copy,
    /// Target is the source reversed.
    Reverse,
    /// Target token `i` is the running sum of source tokens `0..=i`,
    /// modulo the number of real tokens.
    SumCoded,
}

impl std::str::FromStr for SynthTask {
    type Err = String;

    fn from_str(s: &str) -> std::result::Result<Self, String> {
        match s {
            "copy" => Ok(SynthTask::Copy),
            "reverse" => Ok(SynthTask::Reverse),
            "sum-coded" => Ok(SynthTask::SumCoded),
            _ => Err(format!("unknown task {s:?} (expected copy, reverse or sum-coded)")),
        }
    }
}

#[derive(Debug, Clone)]
pub struct SynthSpec {
    pub task: SynthTask,
    /// Total vocab size, reserved tokens included.
    pub vocab_size: usize,
    pub min_len: usize,
    pub max_len: usize,
    pub n: usize,
    pub seed: u64,
}

pub fn token_name(i: usize) -> String {
    format!("t{i}")
}

fn check_common(vocab_size: usize, min_len: usize, max_len: usize, n: usize) -> Result<()> {
    if vocab_size < RESERVED + 1 {
        return config_err(format!("vocab_size must be at least {}, got {vocab_size}", RESERVED + 1));
    }
    if min_len == 0 || min_len > max_len {
        return config_err(format!("invalid length range {min_len}..={max_len}"));
    }
    if n == 0 {
        return config_err("n must be at least 1");
    }
    Ok(())
}

/// Pairs of token indices in `0..vocab_size - 3`.
pub fn gen_pairs(spec: &SynthSpec) -> Result<Vec<(Vec<usize>, Vec<usize>)>> {
    check_common(spec.vocab_size, spec.min_len, spec.max_len, spec.n)?;
    let real = spec.vocab_size - RESERVED;
    let mut rng = Rng::seed_from_u64(spec.seed);
    Ok((0..spec.n)
        .map(|_| {
            let len = rng.random_range(spec.min_len..=spec.max_len);
            let src: Vec<usize> = (0..len).map(|_| rng.random_range(0..real)).collect();
            let trg = match spec.task {
                SynthTask::Copy => src.clone(),
                SynthTask::Reverse => src.iter().rev().copied().collect(),
                SynthTask::SumCoded => src
                    .iter()
                    .scan(0, |acc, &x| {
                        *acc = (*acc + x) % real;
                        Some(*acc)
                    })
                    .collect(),
            };
            (src, trg)
        })
        .collect())
}

#[derive(Debug, Clone)]
pub struct SynthFiles {
    pub src: PathBuf,
    pub trg: PathBuf,
    pub vocab: PathBuf,
}

fn with_ext(prefix: &Path, ext: &str) -> PathBuf {
    let mut s = prefix.as_os_str().to_owned();
    s.push(".");
    s.push(ext);
    PathBuf::from(s)
}

fn write(path: &Path, text: &str) -> Result<()> {
    if let Some(dir) = path.parent().filter(|d| !d.as_os_str().is_empty()) {
        fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    }
    fs::write(path, text).map_err(|e| Error::io(path, e))
}

fn lines(seqs: impl Iterator<Item = Vec<usize>>) -> String {
    let mut out = String::new();
    for s in seqs {
        let toks: Vec<String> = s.into_iter().map(token_name).collect();
        out.push_str(&toks.join(" "));
        out.push('\n');
    }
    out
}

fn vocab_text(vocab_size: usize) -> String {
    (0..vocab_size - RESERVED).map(|i| token_name(i) + "\n").collect()
}

/// Writes `<prefix>.src`, `<prefix>.trg` and `<prefix>.vocab`. The vocab
/// depends only on `vocab_size`, so train and dev splits share it.
pub fn write_synthetic(spec: &SynthSpec, prefix: &Path) -> Result<SynthFiles> {
    let pairs = gen_pairs(spec)?;
    let files = SynthFiles {
        src: with_ext(prefix, "src"),
        trg: with_ext(prefix, "trg"),
        vocab: with_ext(prefix, "vocab"),
    };
    write(&files.src, &lines(pairs.iter().map(|p| p.0.clone())))?;
    write(&files.trg, &lines(pairs.iter().map(|p| p.1.clone())))?;
    write(&files.vocab, &vocab_text(spec.vocab_size))?;
    Ok(files)
}

/// A feature-to-token task: each token has a fixed random prototype
/// vector, and an utterance renders every token of its label sequence as
/// `frames_per_token` noisy copies of the prototype.
#[derive(Debug, Clone)]
pub struct FeatureSpec {
    pub vocab_size: usize,
    pub feat_dim: usize,
    pub min_len: usize,
    pub max_len: usize,
    pub frames_per_token: usize,
    pub noise: f64,
    pub n: usize,
    pub seed: u64,
    /// Seeds the prototypes; keep it fixed across splits.
    pub proto_seed: u64,
}

pub fn gen_features(spec: &FeatureSpec) -> Result<Vec<(Tensor, Vec<usize>)>> {
    check_common(spec.vocab_size, spec.min_len, spec.max_len, spec.n)?;
    if spec.feat_dim == 0 || spec.frames_per_token == 0 {
        return config_err("feat_dim and frames_per_token must be positive");
    }
    if !(spec.noise >= 0.0 && spec.noise.is_finite()) {
        return config_err(format!("invalid noise {}", spec.noise));
    }
    let real = spec.vocab_size - RESERVED;
    let mut proto_rng = Rng::seed_from_u64(spec.proto_seed);
    let protos: Vec<Vec<f64>> = (0..real)
        .map(|_| (0..spec.feat_dim).map(|_| proto_rng.random_range(-1.0..1.0)).collect())
        .collect();
    let normal = Normal::new(0.0, spec.noise).map_err(|e| Error::Config(e.to_string()))?;
    let mut rng = Rng::seed_from_u64(spec.seed);
    Ok((0..spec.n)
        .map(|_| {
            let len = rng.random_range(spec.min_len..=spec.max_len);
            let labels: Vec<usize> = (0..len).map(|_| rng.random_range(0..real)).collect();
            let mut data = Vec::with_capacity(len * spec.frames_per_token * spec.feat_dim);
            for &l in &labels {
                for _ in 0..spec.frames_per_token {
                    data.extend(protos[l].iter().map(|&p| p + normal.sample(&mut rng)));
                }
            }
            let frames = Tensor::new(vec![len * spec.frames_per_token, spec.feat_dim], data)
                .expect("frame shape");
            (frames, labels)
        })
        .collect())
}

/// Writes `<prefix>.feat`, `<prefix>.trg` and `<prefix>.vocab`.
pub fn write_feature_task(spec: &FeatureSpec, prefix: &Path) -> Result<SynthFiles> {
    let data = gen_features(spec)?;
    let files = SynthFiles {
        src: with_ext(prefix, "feat"),
        trg: with_ext(prefix, "trg"),
        vocab: with_ext(prefix, "vocab"),
    };
    let utts: Vec<(String, Tensor)> = data
        .iter()
        .enumerate()
        .map(|(i, (m, _))| (format!("u{i}"), m.clone()))
        .collect();
    write(&files.src, &format_features(&utts))?;
    write(&files.trg, &lines(data.into_iter().map(|d| d.1)))?;
    write(&files.vocab, &vocab_text(spec.vocab_size))?;
    Ok(files)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn spec(task: SynthTask) -> SynthSpec {
        SynthSpec {
            task,
            vocab_size: 10,
            min_len: 1,
            max_len: 6,
            n: 50,
            seed: 3,
        }
    }

    #[test]
    fn task_definitions() {
        for (s, t) in gen_pairs(&spec(SynthTask::Copy)).unwrap() {
            assert_eq!(s, t);
            assert!((1..=6).contains(&s.len()));
        }
        for (s, t) in gen_pairs(&spec(SynthTask::Reverse)).unwrap() {
            assert_eq!(s.iter().rev().copied().collect::<Vec<_>>(), t);
        }
        for (s, t) in gen_pairs(&spec(SynthTask::SumCoded)).unwrap() {
            let mut acc = 0;
            for (x, y) in s.iter().zip(&t) {
                acc = (acc + x) % 7;
                assert_eq!(*y, acc);
            }
        }
    }

    #[test]
    fn deterministic_files() {
        let dir = tempfile::tempdir().unwrap();
        let a = write_synthetic(&spec(SynthTask::Copy), &dir.path().join("a")).unwrap();
        let b = write_synthetic(&spec(SynthTask::Copy), &dir.path().join("b")).unwrap();
        assert_eq!(fs::read(&a.src).unwrap(), fs::read(&b.src).unwrap());
        assert_eq!(fs::read(&a.trg).unwrap(), fs::read(&b.trg).unwrap());
        assert_eq!(fs::read_to_string(&a.vocab).unwrap().lines().count(), 7);
    }

    #[test]
    fn invalid_ranges() {
        let mut s = spec(SynthTask::Copy);
        s.vocab_size = 3;
        assert!(gen_pairs(&s).is_err());
        let mut s = spec(SynthTask::Copy);
        s.min_len = 5;
        s.max_len = 2;
        assert!(gen_pairs(&s).is_err());
    }

    #[test]
    fn feature_frames() {
        let spec = FeatureSpec {
            vocab_size: 8,
            feat_dim: 4,
            min_len: 2,
            max_len: 3,
            frames_per_token: 3,
            noise: 0.0,
            n: 5,
            seed: 1,
            proto_seed: 0,
        };
        for (m, labels) in gen_features(&spec).unwrap() {
            assert_eq!(m.shape(), &[labels.len() * 3, 4]);
            assert_eq!(m.row(0), m.row(2));
        }
    }
}
