use std::sync::atomic::{AtomicU64, Ordering};
use std::sync::Arc;

/// Shared counter of bytes held in large pipeline buffers.
///
/// Buffers register a [`Charge`] for their lifetime; the tracker records the
/// running total and its high-water mark.
#[derive(Debug, Clone, Default)]
pub struct MemoryTracker {
    inner: Arc<Counters>,
}

#[derive(Debug, Default)]
struct Counters {
    current: AtomicU64,
    peak: AtomicU64,
}

impl MemoryTracker {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn charge(&self, bytes: u64) -> Charge {
        let now = self.inner.current.fetch_add(bytes, Ordering::SeqCst) + bytes;
        self.inner.peak.fetch_max(now, Ordering::SeqCst);
        Charge {
            tracker: self.clone(),
            bytes,
        }
    }

    pub fn current(&self) -> u64 {
        self.inner.current.load(Ordering::SeqCst)
    }

    pub fn peak(&self) -> u64 {
        self.inner.peak.load(Ordering::SeqCst)
    }

    /// Restarts high-water tracking from the current level.
    pub fn reset_peak(&self) {
        self.inner.peak.store(self.current(), Ordering::SeqCst);
    }
}

/// Releases its bytes from the tracker on drop.
#[derive(Debug)]
pub struct Charge {
    tracker: MemoryTracker,
    bytes: u64,
}

impl Charge {
    pub fn bytes(&self) -> u64 {
        self.bytes
    }
}

impl Drop for Charge {
    fn drop(&mut self) {
        self.tracker
            .inner
            .current
            .fetch_sub(self.bytes, Ordering::SeqCst);
    }
}
