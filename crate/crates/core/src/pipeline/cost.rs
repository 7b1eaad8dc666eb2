//! Multiply-accumulate bookkeeping split into work shared by every output
//! frame and work repeated per interpolated frame.

use crate::error::{Error, Result};

#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct CostLedger {
    shared: u64,
    per_frame: Vec<u64>,
}

impl CostLedger {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn add_shared(&mut self, macs: u64) {
        self.shared += macs;
    }

    pub fn push_frame(&mut self, macs: u64) {
        self.per_frame.push(macs);
    }

    pub fn shared(&self) -> u64 {
        self.shared
    }

    pub fn frames(&self) -> &[u64] {
        &self.per_frame
    }

    /// The per-frame cost, if every frame cost the same.
    pub fn unshared(&self) -> Result<u64> {
        match self.per_frame.split_first() {
            None => Ok(0),
            Some((&first, rest)) if rest.iter().all(|&v| v == first) => Ok(first),
            Some(_) => Err(Error::invalid(format!(
                "per-frame costs differ: {:?}",
                self.per_frame
            ))),
        }
    }

    pub fn total(&self) -> u64 {
        self.shared + self.per_frame.iter().sum::<u64>()
    }

    /// `shared + n * unshared`.
    pub fn model_total(&self, n: u64) -> Result<u64> {
        Ok(self.shared + n * self.unshared()?)
    }
}
