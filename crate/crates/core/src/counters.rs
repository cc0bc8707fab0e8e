//! FLOP and storage instrumentation for one measured region.
//!
//! Every [`crate::Graph`] owns a ledger. Kernels add their analytic FLOP
//! count to it and every buffer the graph allocates registers its element
//! bytes until it is dropped. Parameter storage shared into the graph is not
//! counted: it was allocated outside the region.

use alloc::collections::BTreeMap;
use alloc::vec::Vec;
use core::cell::{Cell, RefCell};

use serde::{Deserialize, Serialize};

/// Which part of the model a node belongs to. Used to attribute FLOPs and
/// gradient storage.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub enum Scope {
    #[default]
    Other,
    /// Decoder work; `Some(l)` inside block `l`.
    Decoder(Option<usize>),
    /// Work of the encoder attached to decoder layer `l`.
    Encoder(usize),
}

impl Scope {
    pub fn is_decoder(self) -> bool {
        matches!(self, Scope::Decoder(_))
    }

    pub fn is_encoder(self) -> bool {
        matches!(self, Scope::Encoder(_))
    }
}

/// Snapshot of a region's counters.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct OpCounters {
    /// Scalar FLOPs, one multiply-add counted as 2.
    pub flops: u64,
    pub decoder_flops: u64,
    pub encoder_flops: u64,
    pub live_bytes: u64,
    pub peak_live_bytes: u64,
    pub allocations: u64,
    /// Buffers allocated to hold gradients.
    pub grad_allocations: u64,
    pub grad_bytes: u64,
    pub decoder_grad_bytes: u64,
    pub encoder_grad_bytes: u64,
}

#[derive(Default)]
pub(crate) struct Ledger {
    counters: Cell<OpCounters>,
    nodes_by_scope: RefCell<BTreeMap<Scope, u64>>,
    attention_lengths: RefCell<Vec<(Scope, usize)>>,
}

impl Ledger {
    pub(crate) fn snapshot(&self) -> OpCounters {
        self.counters.get()
    }

    fn update(&self, f: impl FnOnce(&mut OpCounters)) {
        let mut c = self.counters.get();
        f(&mut c);
        self.counters.set(c);
    }

    pub(crate) fn add_flops(&self, scope: Scope, flops: u64) {
        self.update(|c| {
            c.flops += flops;
            match scope {
                Scope::Decoder(_) => c.decoder_flops += flops,
                Scope::Encoder(_) => c.encoder_flops += flops,
                Scope::Other => {}
            }
        });
    }

    pub(crate) fn alloc(&self, bytes: u64) {
        self.update(|c| {
            c.allocations += 1;
            c.live_bytes += bytes;
            c.peak_live_bytes = c.peak_live_bytes.max(c.live_bytes);
        });
    }

    pub(crate) fn alloc_grad(&self, scope: Scope, bytes: u64) {
        self.alloc(bytes);
        self.update(|c| {
            c.grad_allocations += 1;
            c.grad_bytes += bytes;
            match scope {
                Scope::Decoder(_) => c.decoder_grad_bytes += bytes,
                Scope::Encoder(_) => c.encoder_grad_bytes += bytes,
                Scope::Other => {}
            }
        });
    }

    pub(crate) fn release(&self, bytes: u64) {
        self.update(|c| c.live_bytes -= bytes);
    }

    pub(crate) fn record_node(&self, scope: Scope) {
        *self.nodes_by_scope.borrow_mut().entry(scope).or_insert(0) += 1;
    }

    pub(crate) fn nodes_by_scope(&self) -> BTreeMap<Scope, u64> {
        self.nodes_by_scope.borrow().clone()
    }

    pub(crate) fn record_attention(&self, scope: Scope, len: usize) {
        self.attention_lengths.borrow_mut().push((scope, len));
    }

    pub(crate) fn attention_lengths(&self) -> Vec<(Scope, usize)> {
        self.attention_lengths.borrow().clone()
    }

    pub(crate) fn reset(&self) {
        let live = self.counters.get().live_bytes;
        self.counters.set(OpCounters { live_bytes: live, peak_live_bytes: live, ..OpCounters::default() });
        self.nodes_by_scope.borrow_mut().clear();
        self.attention_lengths.borrow_mut().clear();
    }
}
