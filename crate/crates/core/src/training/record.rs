use crate::error::{config_err, Result};
use crate::inference::Score;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum DevOutcome {
    Improved,
    NoImprovement,
    /// No improvement for `patience` checks in a row; the counter was reset.
    Decay,
}

/// Dev-score history driving checkpointing and learning-rate decay.
#[derive(Debug, Clone)]
pub struct DevRecord {
    pub history: Vec<f64>,
    pub best: Option<f64>,
    pub since_improvement: usize,
    patience: usize,
}

impl DevRecord {
    pub fn new(patience: usize) -> Result<Self> {
        if patience == 0 {
            return config_err("lr_decay_patience must be at least 1");
        }
        Ok(Self {
            history: Vec::new(),
            best: None,
            since_improvement: 0,
            patience,
        })
    }

    pub fn record(&mut self, score: &Score) -> DevOutcome {
        self.history.push(score.value);
        let improved = self.best.is_none_or(|b| score.better_than(b));
        if improved {
            self.best = Some(score.value);
            self.since_improvement = 0;
            return DevOutcome::Improved;
        }
        self.since_improvement += 1;
        if self.since_improvement >= self.patience {
            self.since_improvement = 0;
            DevOutcome::Decay
        } else {
            DevOutcome::NoImprovement
        }
    }
}
