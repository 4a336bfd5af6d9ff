//! Split-access accounting used to prove test-split isolation.

use std::sync::atomic::{AtomicUsize, Ordering};

use crate::eeg::Split;

/// Why a stage touched a split's data.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Purpose {
    /// Gradient steps, aggregation targets, regressor fitting.
    Fit,
    /// Model or hyperparameter selection.
    Select,
    /// Read-only scoring for the report.
    Report,
}

impl Purpose {
    fn index(self) -> usize {
        match self {
            Purpose::Fit => 0,
            Purpose::Select => 1,
            Purpose::Report => 2,
        }
    }
}

fn split_index(s: Split) -> usize {
    match s {
        Split::Train => 0,
        Split::Val => 1,
        Split::Test => 2,
    }
}

#[derive(Debug, Default)]
pub struct AccessAudit {
    counts: [[AtomicUsize; 3]; 3],
}

impl AccessAudit {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn record(&self, split: Split, purpose: Purpose, items: usize) {
        self.counts[split_index(split)][purpose.index()].fetch_add(items, Ordering::Relaxed);
    }

    pub fn count(&self, split: Split, purpose: Purpose) -> usize {
        self.counts[split_index(split)][purpose.index()].load(Ordering::Relaxed)
    }

    /// Test-split items read for fitting or selection. Must stay zero.
    pub fn test_leaks(&self) -> usize {
        self.count(Split::Test, Purpose::Fit) + self.count(Split::Test, Purpose::Select)
    }
}
