use std::ops::Sub;
use std::sync::atomic::{AtomicU64, Ordering};

/// Application counts for the expensive operators: forward projection `R`,
/// backprojection `Rᵀ`, and batched evaluations of the nonlinear forward
/// model `f(·)` over a full sinogram.
#[derive(Debug, Default)]
pub struct OpCounters {
    forward: AtomicU64,
    backward: AtomicU64,
    fwd_model: AtomicU64,
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq)]
pub struct OpCount {
    pub forward: u64,
    pub backward: u64,
    pub fwd_model: u64,
}

impl OpCounters {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn snapshot(&self) -> OpCount {
        OpCount {
            forward: self.forward.load(Ordering::SeqCst),
            backward: self.backward.load(Ordering::SeqCst),
            fwd_model: self.fwd_model.load(Ordering::SeqCst),
        }
    }

    pub(crate) fn add_forward(&self) {
        self.forward.fetch_add(1, Ordering::SeqCst);
    }

    pub(crate) fn add_backward(&self) {
        self.backward.fetch_add(1, Ordering::SeqCst);
    }

    pub fn add_fwd_model(&self, batches: u64) {
        self.fwd_model.fetch_add(batches, Ordering::SeqCst);
    }
}

impl Sub for OpCount {
    type Output = OpCount;

    fn sub(self, rhs: OpCount) -> OpCount {
        OpCount {
            forward: self.forward - rhs.forward,
            backward: self.backward - rhs.backward,
            fwd_model: self.fwd_model - rhs.fwd_model,
        }
    }
}
