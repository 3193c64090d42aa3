/// Absolute margin a validation loss must beat the best by to count as an
/// improvement.
pub const MIN_IMPROVEMENT: f64 = 1e-6;

/// What happened after observing one epoch's validation loss.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct Decision {
    pub improved: bool,
    pub decay_lr: bool,
    pub stop: bool,
}

/// Learning-rate halving on plateau combined with early stopping.
#[derive(Clone, Debug, PartialEq)]
pub struct PlateauSchedule {
    pub lr: f64,
    pub factor: f64,
    pub lr_patience: usize,
    pub stop_patience: usize,
    pub best: f64,
    /// Epochs since the last improvement.
    pub stale: usize,
    /// Epochs since the last improvement or LR decay.
    pub stale_lr: usize,
}

impl PlateauSchedule {
    pub fn new(lr: f64, factor: f64, lr_patience: usize, stop_patience: usize) -> Self {
        Self { lr, factor, lr_patience, stop_patience, best: f64::INFINITY, stale: 0, stale_lr: 0 }
    }

    pub fn observe(&mut self, val_loss: f64) -> Decision {
        let improved = val_loss < self.best - MIN_IMPROVEMENT;
        if improved {
            self.best = val_loss;
            self.stale = 0;
            self.stale_lr = 0;
            return Decision { improved, decay_lr: false, stop: false };
        }
        self.stale += 1;
        self.stale_lr += 1;
        if self.stale >= self.stop_patience {
            return Decision { improved, decay_lr: false, stop: true };
        }
        let decay_lr = self.stale_lr >= self.lr_patience;
        if decay_lr {
            self.lr *= self.factor;
            self.stale_lr = 0;
        }
        Decision { improved, decay_lr, stop: false }
    }
}
