use crate::codec::{RawPacket, CHANNELS_PER_PACKET};

/// One 16-channel board sample assembled from a daisy packet pair.
///
/// Even counters carry channels 1-8, the following odd counter channels 9-16.
/// A half is `None` when its packet never arrived.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct DaisySample {
    /// Counter of the pair, `counter / 2` (0..=127).
    pub pair_seq: u8,
    pub lower: Option<[i32; CHANNELS_PER_PACKET]>,
    pub upper: Option<[i32; CHANNELS_PER_PACKET]>,
}

impl DaisySample {
    pub fn is_complete(&self) -> bool {
        self.lower.is_some() && self.upper.is_some()
    }

    /// All 16 channels, or `None` for an orphan half.
    pub fn channels(&self) -> Option<[i32; 2 * CHANNELS_PER_PACKET]> {
        let (lower, upper) = (self.lower?, self.upper?);
        let mut out = [0; 2 * CHANNELS_PER_PACKET];
        out[..CHANNELS_PER_PACKET].copy_from_slice(&lower);
        out[CHANNELS_PER_PACKET..].copy_from_slice(&upper);
        Some(out)
    }
}

/// Pairs interleaved main-board / daisy packets. A lower half is held until
/// its partner arrives; anything that breaks the pairing is emitted as an
/// orphan with the missing half set to `None`.
#[derive(Debug, Clone, Default)]
pub struct DaisyMerger {
    held: Option<RawPacket>,
}

impl DaisyMerger {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn reset(&mut self) {
        self.held = None;
    }

    pub fn push(&mut self, p: &RawPacket, out: &mut Vec<DaisySample>) {
        if p.seq.is_multiple_of(2) {
            if let Some(held) = self.held.take() {
                if held.seq == p.seq {
                    // repeated lower half, keep the first one
                    self.held = Some(held);
                    return;
                }
                out.push(orphan_lower(&held));
            }
            self.held = Some(*p);
        } else {
            match self.held.take() {
                Some(held) if held.seq == p.seq.wrapping_sub(1) => out.push(DaisySample {
                    pair_seq: held.seq / 2,
                    lower: Some(held.channels),
                    upper: Some(p.channels),
                }),
                other => {
                    if let Some(held) = other {
                        out.push(orphan_lower(&held));
                    }
                    out.push(DaisySample {
                        pair_seq: p.seq / 2,
                        lower: None,
                        upper: Some(p.channels),
                    });
                }
            }
        }
    }

    /// Release a held lower half as an orphan (e.g. when a gap is declared).
    pub fn flush(&mut self, out: &mut Vec<DaisySample>) {
        if let Some(held) = self.held.take() {
            out.push(orphan_lower(&held));
        }
    }
}

fn orphan_lower(p: &RawPacket) -> DaisySample {
    DaisySample {
        pair_seq: p.seq / 2,
        lower: Some(p.channels),
        upper: None,
    }
}

/// Merge a packet sequence. The trailing unpaired lower half, if any, stays
/// out of the result (it is still waiting for its partner).
pub fn merge_daisy(packets: &[RawPacket]) -> Vec<DaisySample> {
    let mut m = DaisyMerger::new();
    let mut out = Vec::new();
    for p in packets {
        m.push(p, &mut out);
    }
    out
}
