use crate::stream::RingBuffer;
use serde::{Deserialize, Serialize};
use thiserror::Error;

/// Window around a tag, in milliseconds relative to the tag.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct EpochWindow {
    pub start_ms: f64,
    pub end_ms: f64,
}

impl Default for EpochWindow {
    fn default() -> Self {
        EpochWindow {
            start_ms: 0.0,
            end_ms: 800.0,
        }
    }
}

impl EpochWindow {
    pub fn new(start_ms: f64, end_ms: f64) -> Result<Self, EpochError> {
        let w = EpochWindow { start_ms, end_ms };
        w.validate()?;
        Ok(w)
    }

    pub fn validate(&self) -> Result<(), EpochError> {
        if self.start_ms.is_finite() && self.end_ms.is_finite() && self.start_ms < self.end_ms {
            Ok(())
        } else {
            Err(EpochError::InvalidWindow {
                start_ms: self.start_ms,
                end_ms: self.end_ms,
            })
        }
    }

    /// Offset of the first sample relative to the tag.
    pub fn start_offset(&self, rate: f64) -> i64 {
        ms_to_samples(self.start_ms, rate)
    }

    pub fn sample_count(&self, rate: f64) -> usize {
        ms_to_samples(self.end_ms - self.start_ms, rate).max(0) as usize
    }
}

/// Milliseconds to samples, rounding half away from zero.
pub fn ms_to_samples(ms: f64, rate: f64) -> i64 {
    (ms * rate / 1000.0).round() as i64
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Epoch {
    pub tag_id: u64,
    pub start_index: u64,
    pub rate: f64,
    /// `data[channel][sample]`, µV.
    pub data: Vec<Vec<f64>>,
}

impl Epoch {
    pub fn channels(&self) -> usize {
        self.data.len()
    }

    pub fn samples(&self) -> usize {
        self.data.first().map_or(0, Vec::len)
    }
}

#[derive(Debug, Error, Clone, PartialEq)]
pub enum EpochError {
    #[error("epoch extends to index {needed_until}, data only reaches {available_until}")]
    Pending { needed_until: u64, available_until: u64 },
    #[error("epoch starts before the retained history")]
    Expired,
    #[error("invalid epoch window [{start_ms}, {end_ms}) ms")]
    InvalidWindow { start_ms: f64, end_ms: f64 },
    #[error("no epochs to average")]
    Empty,
    #[error("epochs differ in shape or rate")]
    ShapeMismatch,
}

pub fn extract_epoch(
    buf: &RingBuffer,
    tag_id: u64,
    tag_index: u64,
    window: &EpochWindow,
    rate: f64,
) -> Result<Epoch, EpochError> {
    window.validate()?;
    let start = tag_index as i64 + window.start_offset(rate);
    let len = window.sample_count(rate);
    if start < 0 {
        return Err(EpochError::Expired);
    }
    let start = start as u64;
    let end = start + len as u64;
    let retained = match buf.retained() {
        Some(r) => r,
        None => {
            return Err(EpochError::Pending {
                needed_until: end,
                available_until: 0,
            })
        }
    };
    if start < retained.start {
        return Err(EpochError::Expired);
    }
    if end > retained.end {
        return Err(EpochError::Pending {
            needed_until: end,
            available_until: retained.end,
        });
    }
    let frames = buf.slice(start, len).map_err(|_| EpochError::Expired)?;
    let channels = buf.latest().map_or(0, |f| f.values.len());
    let mut data = vec![Vec::with_capacity(len); channels];
    for frame in frames {
        for (ch, v) in frame.values.iter().enumerate() {
            data[ch].push(*v);
        }
    }
    Ok(Epoch {
        tag_id,
        start_index: start,
        rate,
        data,
    })
}

/// Pointwise mean. The result carries the first epoch's tag and start index.
pub fn average_epochs(epochs: &[Epoch]) -> Result<Epoch, EpochError> {
    let first = epochs.first().ok_or(EpochError::Empty)?;
    let shape_ok = epochs.iter().all(|e| {
        e.rate == first.rate
            && e.data.len() == first.data.len()
            && e.data.iter().zip(&first.data).all(|(a, b)| a.len() == b.len())
    });
    if !shape_ok {
        return Err(EpochError::ShapeMismatch);
    }
    let n = epochs.len() as f64;
    let data = first
        .data
        .iter()
        .enumerate()
        .map(|(ch, row)| {
            (0..row.len())
                .map(|i| epochs.iter().map(|e| e.data[ch][i]).sum::<f64>() / n)
                .collect()
        })
        .collect();
    Ok(Epoch {
        data,
        ..first.clone()
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::stream::SampleFrame;

    fn ring(from: u64, to: u64) -> RingBuffer {
        let mut r = RingBuffer::new(4096);
        for i in from..to {
            r.append(SampleFrame {
                index: i,
                values: vec![i as f64, -(i as f64)],
                interpolated: false,
            });
        }
        r
    }

    #[test]
    fn default_window_at_256() {
        let e = extract_epoch(&ring(0, 2000), 7, 1000, &EpochWindow::default(), 256.0).unwrap();
        assert_eq!(e.start_index, 1000);
        assert_eq!(e.samples(), 205);
        assert_eq!(e.data[0][0], 1000.0);
        assert_eq!(e.data[0][204], 1204.0);
        assert_eq!(e.data[1][204], -1204.0);
        assert_eq!(e.tag_id, 7);
    }

    #[test]
    fn p300_window_offsets() {
        // 0.24 * 256 = 61.44 and 0.36 * 256 = 92.16
        let w = EpochWindow::new(240.0, 600.0).unwrap();
        assert_eq!(w.start_offset(256.0), 61);
        assert_eq!(w.sample_count(256.0), 92);
        let e = extract_epoch(&ring(0, 2000), 0, 1000, &w, 256.0).unwrap();
        assert_eq!(e.start_index, 1061);
        assert_eq!(e.samples(), 92);
    }

    #[test]
    fn rounding_is_half_away_from_zero() {
        // 2 ms at 250 Hz is exactly half a sample
        assert_eq!(ms_to_samples(2.0, 250.0), 1);
        assert_eq!(ms_to_samples(-2.0, 250.0), -1);
        assert_eq!(ms_to_samples(6.0, 250.0), 2);
    }

    #[test]
    fn pending_and_expired() {
        let r = ring(500, 1100);
        let w = EpochWindow::default();
        assert!(matches!(
            extract_epoch(&r, 0, 1099, &w, 250.0),
            Err(EpochError::Pending { needed_until: 1299, available_until: 1100 })
        ));
        assert_eq!(extract_epoch(&r, 0, 400, &w, 250.0), Err(EpochError::Expired));
        let neg = EpochWindow::new(-100.0, 100.0).unwrap();
        assert_eq!(extract_epoch(&r, 0, 10, &neg, 250.0), Err(EpochError::Expired));
        assert!(matches!(
            extract_epoch(&RingBuffer::new(4), 0, 0, &w, 250.0),
            Err(EpochError::Pending { .. })
        ));
        assert!(EpochWindow::new(5.0, 5.0).is_err());
    }

    #[test]
    fn averaging() {
        let e = extract_epoch(&ring(0, 400), 1, 10, &EpochWindow::default(), 250.0).unwrap();
        assert_eq!(average_epochs(&[e.clone(), e.clone()]).unwrap(), e);
        let mut neg = e.clone();
        neg.data.iter_mut().flatten().for_each(|v| *v = -*v);
        let z = average_epochs(&[e.clone(), neg]).unwrap();
        assert!(z.data.iter().flatten().all(|v| *v == 0.0));
        assert_eq!(average_epochs(&[]), Err(EpochError::Empty));
        let mut short = e.clone();
        short.data[0].pop();
        assert_eq!(average_epochs(&[e, short]), Err(EpochError::ShapeMismatch));
    }
}
