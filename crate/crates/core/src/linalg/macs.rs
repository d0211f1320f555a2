//! Multiply-accumulate instrumentation.
//!
//! Every dense kernel in the engine reports the MACs it executes to a
//! thread-local tally. Backbone work (projections, attention products, FFN,
//! patch embedding, classifier) and reduction overhead (graph construction,
//! scoring, propagation, matching) are tallied separately.

use std::cell::Cell;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum MacKind {
    Backbone,
    Overhead,
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, serde::Serialize)]
pub struct MacCount {
    pub backbone: u64,
    pub overhead: u64,
}

impl MacCount {
    pub fn total(&self) -> u64 {
        self.backbone + self.overhead
    }
}

thread_local! {
    static TALLY: Cell<MacCount> = const { Cell::new(MacCount { backbone: 0, overhead: 0 }) };
}

pub fn record(kind: MacKind, macs: u64) {
    TALLY.with(|t| {
        let mut c = t.get();
        match kind {
            MacKind::Backbone => c.backbone += macs,
            MacKind::Overhead => c.overhead += macs,
        }
        t.set(c);
    });
}

/// Run `f` and return its result together with the MACs it executed on this
/// thread. Nests: an enclosing measurement still sees the inner work.
pub fn measure<R>(f: impl FnOnce() -> R) -> (R, MacCount) {
    let outer = TALLY.with(|t| t.replace(MacCount::default()));
    let out = f();
    let inner = TALLY.with(|t| t.get());
    TALLY.with(|t| {
        t.set(MacCount {
            backbone: outer.backbone + inner.backbone,
            overhead: outer.overhead + inner.overhead,
        })
    });
    (out, inner)
}
