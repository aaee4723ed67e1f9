use serde::Serialize;

/// Tracks bytes held by parameters and activation buffers.
///
/// The engine reports every allocation and release here, so `peak_bytes`
/// is the high-water mark of what a forward pass actually held. Scratch
/// buffers internal to a layer (the im2col patch) are not counted.
#[derive(Clone, Debug, Default, PartialEq, Eq, Serialize)]
pub struct MemoryMeter {
    current: usize,
    peak: usize,
    allocations: u64,
    conversions: u64,
}

impl MemoryMeter {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn alloc(&mut self, bytes: usize) {
        self.current += bytes;
        self.allocations += 1;
        self.peak = self.peak.max(self.current);
    }

    /// Releases bytes. Releasing more than is held is a bookkeeping bug.
    pub fn free(&mut self, bytes: usize) {
        assert!(bytes <= self.current, "freeing {bytes} bytes with only {} held", self.current);
        self.current -= bytes;
    }

    pub fn record_conversions(&mut self, elements: u64) {
        self.conversions += elements;
    }

    pub fn current_bytes(&self) -> usize {
        self.current
    }

    pub fn peak_bytes(&self) -> usize {
        self.peak
    }

    pub fn allocation_count(&self) -> u64 {
        self.allocations
    }

    /// Elements converted between dtypes.
    pub fn conversion_count(&self) -> u64 {
        self.conversions
    }
}
