use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::evaluator::TransitionSample;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum BufferMode {
    /// Filled once and reused by every offline policy update.
    OfflineFixed,
    /// Refilled with fresh on-policy samples and emptied after each update.
    OnlineBatch,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ReplayBuffer {
    capacity: usize,
    samples: Vec<TransitionSample>,
    mode: BufferMode,
}

impl ReplayBuffer {
    pub fn new(capacity: usize, mode: BufferMode) -> Self {
        Self {
            capacity,
            samples: Vec::with_capacity(capacity.min(4096)),
            mode,
        }
    }

    /// Offline buffer sized to hold exactly `samples`.
    pub fn from_samples(samples: Vec<TransitionSample>) -> Self {
        Self {
            capacity: samples.len(),
            samples,
            mode: BufferMode::OfflineFixed,
        }
    }

    pub fn push(&mut self, sample: TransitionSample) -> Result<()> {
        if self.samples.len() >= self.capacity {
            return Err(Error::InvalidInput(format!(
                "replay buffer is full ({} samples)",
                self.capacity
            )));
        }
        self.samples.push(sample);
        Ok(())
    }

    pub fn clear(&mut self) {
        self.samples.clear();
    }

    pub fn samples(&self) -> &[TransitionSample] {
        &self.samples
    }

    pub fn len(&self) -> usize {
        self.samples.len()
    }

    pub fn is_empty(&self) -> bool {
        self.samples.is_empty()
    }

    pub fn is_full(&self) -> bool {
        self.samples.len() >= self.capacity
    }

    pub fn capacity(&self) -> usize {
        self.capacity
    }

    pub fn mode(&self) -> BufferMode {
        self.mode
    }

    pub fn into_samples(self) -> Vec<TransitionSample> {
        self.samples
    }
}
