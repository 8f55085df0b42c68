//! Software stimulation tags and their placement on the sample index.

use std::collections::VecDeque;
use std::time::Duration;
use thiserror::Error;

/// Link between the daemon clock and the sample index, captured when the
/// first frame of a streaming segment is decoded.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Anchor {
    pub monotonic: Duration,
    pub wall: std::time::SystemTime,
    /// Index of that first frame.
    pub first_index: u64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct StimulationTag {
    pub tag_id: u64,
    pub label: String,
    /// Opaque client timestamp, echoed back only.
    pub client_time: f64,
    pub received_monotonic: Duration,
    pub resolved_index: Option<u64>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Error)]
pub enum TagError {
    #[error("no stream anchor: acquisition is not running")]
    TagRejected,
}

/// `first_index + round((received - anchor - compensation) * rate)`, never
/// before the anchor.
pub fn resolve_tag(
    received_monotonic: Duration,
    anchor: Option<&Anchor>,
    rate: f64,
    latency_compensation_ms: f64,
) -> Result<u64, TagError> {
    let anchor = anchor.ok_or(TagError::TagRejected)?;
    let dt = received_monotonic.as_secs_f64() - anchor.monotonic.as_secs_f64() - latency_compensation_ms / 1000.0;
    let offset = (dt * rate).round().max(0.0) as u64;
    Ok(anchor.first_index + offset)
}

/// Bounded store of resolved tags, oldest evicted first.
#[derive(Debug)]
pub struct TagRegistry {
    tags: VecDeque<StimulationTag>,
    next_id: u64,
    capacity: usize,
}

impl TagRegistry {
    pub fn new(capacity: usize) -> Self {
        TagRegistry {
            tags: VecDeque::new(),
            next_id: 1,
            capacity: capacity.max(1),
        }
    }

    /// Resolve and store a tag. Rejected tags do not consume an id.
    pub fn register(
        &mut self,
        label: String,
        client_time: f64,
        received_monotonic: Duration,
        anchor: Option<&Anchor>,
        rate: f64,
        latency_compensation_ms: f64,
    ) -> Result<&StimulationTag, TagError> {
        let index = resolve_tag(received_monotonic, anchor, rate, latency_compensation_ms)?;
        if self.tags.len() == self.capacity {
            self.tags.pop_front();
        }
        self.tags.push_back(StimulationTag {
            tag_id: self.next_id,
            label,
            client_time,
            received_monotonic,
            resolved_index: Some(index),
        });
        self.next_id += 1;
        Ok(self.tags.back().unwrap())
    }

    pub fn get(&self, tag_id: u64) -> Option<&StimulationTag> {
        // ids are assigned in order, so the deque is sorted by id
        self.tags
            .binary_search_by_key(&tag_id, |t| t.tag_id)
            .ok()
            .map(|i| &self.tags[i])
    }

    pub fn with_label<'a>(&'a self, label: &'a str) -> impl Iterator<Item = &'a StimulationTag> + 'a {
        self.tags.iter().filter(move |t| t.label == label)
    }

    pub fn len(&self) -> usize {
        self.tags.len()
    }

    pub fn is_empty(&self) -> bool {
        self.tags.is_empty()
    }
}
