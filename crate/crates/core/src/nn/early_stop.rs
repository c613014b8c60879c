use crate::error::{Error, Result};

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum StopVerdict {
    Continue,
    Stop,
}

/// Tracks the best validation loss and a snapshot taken at that point.
///
/// Training stops once the number of consecutive epochs without a strict
/// improvement exceeds `patience`.
#[derive(Clone, Debug)]
pub struct EarlyStopState<T> {
    best_loss: f64,
    epochs_since_improvement: usize,
    patience: usize,
    epoch: usize,
    best_epoch: Option<usize>,
    best: Option<T>,
}

impl<T> EarlyStopState<T> {
    pub fn new(patience: usize) -> Self {
        Self {
            best_loss: f64::INFINITY,
            epochs_since_improvement: 0,
            patience,
            epoch: 0,
            best_epoch: None,
            best: None,
        }
    }

    /// Records one validation loss. `snapshot` is only invoked on improvement.
    pub fn update(&mut self, loss: f64, snapshot: impl FnOnce() -> T) -> Result<StopVerdict> {
        let epoch = self.epoch;
        self.epoch += 1;
        if !loss.is_finite() {
            return Err(Error::Diverged {
                epoch,
                reason: format!("validation loss is {loss}"),
            });
        }
        if loss < self.best_loss {
            self.best_loss = loss;
            self.epochs_since_improvement = 0;
            self.best_epoch = Some(epoch);
            self.best = Some(snapshot());
            return Ok(StopVerdict::Continue);
        }
        self.epochs_since_improvement += 1;
        if self.epochs_since_improvement > self.patience {
            Ok(StopVerdict::Stop)
        } else {
            Ok(StopVerdict::Continue)
        }
    }

    pub fn best_loss(&self) -> f64 {
        self.best_loss
    }

    pub fn best_epoch(&self) -> Option<usize> {
        self.best_epoch
    }

    pub fn epochs_since_improvement(&self) -> usize {
        self.epochs_since_improvement
    }

    pub fn patience(&self) -> usize {
        self.patience
    }

    pub fn best_snapshot(&self) -> Option<&T> {
        self.best.as_ref()
    }

    pub fn into_best(self) -> Option<T> {
        self.best
    }
}
