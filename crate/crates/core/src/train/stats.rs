//! Running advantage statistics that set the oversampling weight `η`.

use serde::{Deserialize, Serialize};

/// Momentum-weighted means of positive advantages and of the advantages of
/// oversampled episodes.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct RunningStats {
    pub beta: f64,
    pub a_pos: f64,
    pub b_pos: f64,
    /// `None` until the first oversampled batch is seen.
    pub a_po: Option<f64>,
    pub b_po: f64,
}

impl Default for RunningStats {
    fn default() -> Self {
        Self::new(0.95)
    }
}

/// Size-weighted momentum update of a running mean.
pub fn momentum_update(beta: f64, mean: f64, size: f64, batch_mean: f64, batch_size: f64) -> (f64, f64) {
    let new_size = beta * size + (1.0 - beta) * batch_size;
    if new_size <= 0.0 {
        return (mean, new_size);
    }
    let new_mean = (beta * size * mean + (1.0 - beta) * batch_size * batch_mean) / new_size;
    (new_mean, new_size)
}

/// Mean of the positive entries and their count.
pub fn positive_part(advantages: &[f64]) -> (f64, f64) {
    let pos: Vec<f64> = advantages.iter().copied().filter(|&a| a > 0.0).collect();
    if pos.is_empty() {
        (0.0, 0.0)
    } else {
        (pos.iter().sum::<f64>() / pos.len() as f64, pos.len() as f64)
    }
}

impl RunningStats {
    pub fn new(beta: f64) -> Self {
        Self {
            beta,
            a_pos: 0.0,
            b_pos: 0.0,
            a_po: None,
            b_po: 0.0,
        }
    }

    /// Folds in the positive-advantage part of a training batch.
    pub fn update_positive(&mut self, batch_mean: f64, batch_size: f64) {
        (self.a_pos, self.b_pos) = momentum_update(self.beta, self.a_pos, self.b_pos, batch_mean, batch_size);
    }

    /// Folds in the advantages of the episodes selected for oversampling.
    pub fn update_po(&mut self, batch_mean: f64, batch_size: f64) {
        let (a, b) = momentum_update(self.beta, self.a_po.unwrap_or(0.0), self.b_po, batch_mean, batch_size);
        self.a_po = Some(a);
        self.b_po = b;
    }

    /// `max(min(1 - a⁺/a^PO, 1), 0.5)`; 0.5 while `a^PO` is unset or zero.
    pub fn eta(&self) -> f64 {
        match self.a_po {
            Some(a_po) if a_po != 0.0 && a_po.is_finite() => (1.0 - self.a_pos / a_po).clamp(0.5, 1.0),
            _ => 0.5,
        }
    }
}
