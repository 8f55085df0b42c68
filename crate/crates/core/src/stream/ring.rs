use super::SampleFrame;
use std::collections::VecDeque;
use std::ops::Range;
use thiserror::Error;

#[derive(Debug, Error, Clone, PartialEq, Eq)]
#[error("frames {from}..{} not retained (history holds {retained:?})", from + len)]
pub struct RangeUnavailable {
    pub from: u64,
    pub len: u64,
    pub retained: Option<Range<u64>>,
}

/// Bounded history of the most recent frames, addressable by absolute index.
///
/// Retained frames always have consecutive indices. Appending a frame that
/// does not follow the newest one (after a dropout) restarts the history.
#[derive(Debug, Clone)]
pub struct RingBuffer {
    frames: VecDeque<SampleFrame>,
    capacity: usize,
}

impl RingBuffer {
    pub fn new(capacity: usize) -> Self {
        assert!(capacity > 0, "ring capacity must be positive");
        RingBuffer {
            frames: VecDeque::with_capacity(capacity),
            capacity,
        }
    }

    pub fn capacity(&self) -> usize {
        self.capacity
    }

    pub fn len(&self) -> usize {
        self.frames.len()
    }

    pub fn is_empty(&self) -> bool {
        self.frames.is_empty()
    }

    pub fn append(&mut self, frame: SampleFrame) {
        if let Some(back) = self.frames.back() {
            if frame.index != back.index + 1 {
                self.frames.clear();
            }
        }
        if self.frames.len() == self.capacity {
            self.frames.pop_front();
        }
        self.frames.push_back(frame);
    }

    pub fn clear(&mut self) {
        self.frames.clear();
    }

    /// Half-open range of indices currently held.
    pub fn retained(&self) -> Option<Range<u64>> {
        let first = self.frames.front()?.index;
        Some(first..first + self.frames.len() as u64)
    }

    pub fn get(&self, index: u64) -> Option<&SampleFrame> {
        let first = self.frames.front()?.index;
        let offset = index.checked_sub(first)?;
        self.frames.get(offset as usize)
    }

    pub fn latest(&self) -> Option<&SampleFrame> {
        self.frames.back()
    }

    /// `len` frames starting at absolute index `from`.
    pub fn slice(&self, from: u64, len: usize) -> Result<impl Iterator<Item = &SampleFrame>, RangeUnavailable> {
        let unavailable = || RangeUnavailable {
            from,
            len: len as u64,
            retained: self.retained(),
        };
        let retained = self.retained().ok_or_else(unavailable)?;
        if from < retained.start || from + len as u64 > retained.end {
            return Err(unavailable());
        }
        let offset = (from - retained.start) as usize;
        Ok(self.frames.range(offset..offset + len))
    }

    /// The newest `len` frames, oldest first.
    pub fn tail(&self, len: usize) -> impl Iterator<Item = &SampleFrame> {
        let skip = self.frames.len().saturating_sub(len);
        self.frames.iter().skip(skip)
    }
}
