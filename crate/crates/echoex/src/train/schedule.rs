//! Plateau learning-rate halving and early stopping.

use serde::{Deserialize, Serialize};

/// Reduce-on-plateau state; one [`observe`](PlateauScheduler::observe) per
/// epoch.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PlateauScheduler {
    pub patience: usize,
    pub factor: f64,
    /// Best validation loss seen so far (None before the first epoch).
    pub best: Option<f64>,
    /// Epochs since the last improvement or halving.
    pub since_event: usize,
}

impl PlateauScheduler {
    pub fn new(patience: usize, factor: f64) -> PlateauScheduler {
        PlateauScheduler { patience, factor, best: None, since_event: 0 }
    }

    /// Feeds one epoch's validation loss; returns the updated learning
    /// rate. The patience counter resets on improvement and on halving.
    pub fn observe(&mut self, val_loss: f64, lr: f64) -> f64 {
        if self.best.is_none_or(|b| val_loss < b) {
            self.best = Some(val_loss);
            self.since_event = 0;
            return lr;
        }
        self.since_event += 1;
        if self.since_event >= self.patience {
            self.since_event = 0;
            return lr * self.factor;
        }
        lr
    }
}

/// True when the best validation loss is at least `patience` epochs old.
pub fn early_stop(val_history: &[f64], patience: usize) -> bool {
    if val_history.is_empty() {
        return false;
    }
    let best_idx = val_history
        .iter()
        .enumerate()
        .min_by(|a, b| a.1.partial_cmp(b.1).unwrap())
        .map(|(i, _)| i)
        .unwrap();
    val_history.len() - 1 - best_idx >= patience
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn decreasing_history_keeps_lr() {
        let mut s = PlateauScheduler::new(10, 0.5);
        let mut lr = 1e-3;
        for i in 0..30 {
            lr = s.observe(1.0 - i as f64 * 0.01, lr);
        }
        assert_eq!(lr, 1e-3);
    }

    #[test]
    fn ten_flat_epochs_halve() {
        let mut s = PlateauScheduler::new(10, 0.5);
        let mut lr = 1e-3;
        lr = s.observe(1.0, lr); // improvement (from +inf)
        for _ in 0..9 {
            lr = s.observe(1.0, lr);
            assert_eq!(lr, 1e-3);
        }
        lr = s.observe(1.0, lr); // tenth flat epoch
        assert_eq!(lr, 5e-4);
    }

    #[test]
    fn twenty_five_flat_epochs_halve_twice() {
        let mut s = PlateauScheduler::new(10, 0.5);
        let mut lr = 1e-3;
        lr = s.observe(1.0, lr);
        let mut halvings = Vec::new();
        for epoch in 1..=25 {
            let before = lr;
            lr = s.observe(1.0, lr);
            if lr != before {
                halvings.push(epoch);
            }
        }
        assert_eq!(halvings, vec![10, 20]);
        assert!((lr - 2.5e-4).abs() < 1e-18);
    }

    #[test]
    fn early_stop_rules() {
        // improvement then 19 flat epochs: keep going
        let mut h = vec![1.0];
        h.extend(std::iter::repeat_n(1.0, 19));
        assert!(!early_stop(&h, 20));
        // one more flat epoch: stop
        h.push(1.0);
        assert!(early_stop(&h, 20));

        // alternating improvement never stops
        let alt: Vec<f64> = (0..100).map(|i| 1.0 - (i / 2) as f64 * 0.001).collect();
        assert!(!early_stop(&alt, 20));
    }
}
