use std::sync::atomic::{AtomicU64, Ordering};

use serde::{Deserialize, Serialize};

/// Operation kinds tallied by a [`CostMeter`].
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum OpKind {
    Add,
    MultCt,
    MultPt,
    Rotate,
    Rescale,
    Encrypt,
    Decrypt,
}

impl OpKind {
    const ALL: [OpKind; 7] = [
        OpKind::Add,
        OpKind::MultCt,
        OpKind::MultPt,
        OpKind::Rotate,
        OpKind::Rescale,
        OpKind::Encrypt,
        OpKind::Decrypt,
    ];

    fn index(self) -> usize {
        self as usize
    }
}

/// Thread-safe operation counters. Counts only ever go up until [`CostMeter::reset`].
#[derive(Debug, Default)]
pub struct CostMeter {
    counts: [AtomicU64; 7],
    depth_used: AtomicU64,
}

impl CostMeter {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn record(&self, kind: OpKind) {
        self.counts[kind.index()].fetch_add(1, Ordering::Relaxed);
    }

    /// Notes that a ciphertext reached `depth` consumed levels.
    pub fn record_depth(&self, depth: usize) {
        self.depth_used.fetch_max(depth as u64, Ordering::Relaxed);
    }

    pub fn count(&self, kind: OpKind) -> u64 {
        self.counts[kind.index()].load(Ordering::Relaxed)
    }

    pub fn snapshot(&self) -> CostCounts {
        let c = |k| self.count(k);
        CostCounts {
            add: c(OpKind::Add),
            mult_ct: c(OpKind::MultCt),
            mult_pt: c(OpKind::MultPt),
            rotate: c(OpKind::Rotate),
            rescale: c(OpKind::Rescale),
            encrypt: c(OpKind::Encrypt),
            decrypt: c(OpKind::Decrypt),
            depth_used: self.depth_used.load(Ordering::Relaxed),
        }
    }

    pub fn reset(&self) {
        for k in OpKind::ALL {
            self.counts[k.index()].store(0, Ordering::Relaxed);
        }
        self.depth_used.store(0, Ordering::Relaxed);
    }
}

/// A frozen copy of the meter.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct CostCounts {
    pub add: u64,
    pub mult_ct: u64,
    pub mult_pt: u64,
    pub rotate: u64,
    pub rescale: u64,
    pub encrypt: u64,
    pub decrypt: u64,
    pub depth_used: u64,
}

impl CostCounts {
    /// Counts accumulated since `earlier`. `depth_used` keeps the later maximum.
    pub fn since(&self, earlier: &CostCounts) -> CostCounts {
        CostCounts {
            add: self.add - earlier.add,
            mult_ct: self.mult_ct - earlier.mult_ct,
            mult_pt: self.mult_pt - earlier.mult_pt,
            rotate: self.rotate - earlier.rotate,
            rescale: self.rescale - earlier.rescale,
            encrypt: self.encrypt - earlier.encrypt,
            decrypt: self.decrypt - earlier.decrypt,
            depth_used: self.depth_used,
        }
    }

    pub fn multiplications(&self) -> u64 {
        self.mult_ct + self.mult_pt
    }

    /// Multiplications plus rotations: the structural cost used to order blocks.
    pub fn heavy_ops(&self) -> u64 {
        self.multiplications() + self.rotate
    }
}
