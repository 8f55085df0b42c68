use super::DspError;

/// Minimum window accepted by [`estimate_bpm`], in seconds.
pub const BPM_MIN_WINDOW_S: f64 = 5.0;
/// Minimum spacing between two detected beats, in seconds.
pub const REFRACTORY_S: f64 = 0.25;

/// Sample positions of beats: upward crossings of mean + 2 SD, each resolved
/// to the maximum within the refractory period that follows it. A beat whose
/// maximum sits on the last sample is still rising and is dropped.
pub fn detect_peaks(window: &[f64], rate: f64) -> Vec<usize> {
    let n = window.len();
    if n < 2 {
        return Vec::new();
    }
    let mean = window.iter().sum::<f64>() / n as f64;
    let var = window.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / n as f64;
    let threshold = mean + 2.0 * var.sqrt();
    let refractory = ((REFRACTORY_S * rate).round() as usize).max(1);

    let mut peaks = Vec::new();
    let mut i = 1;
    while i < n {
        if window[i] > threshold && window[i - 1] <= threshold {
            let end = (i + refractory).min(n);
            let mut best = i;
            for j in i..end {
                if window[j] > window[best] {
                    best = j;
                }
            }
            if best + 1 < n {
                peaks.push(best);
            }
            i = best + refractory;
        } else {
            i += 1;
        }
    }
    peaks
}

pub fn estimate_bpm(window: &[f64], rate: f64) -> Result<f64, DspError> {
    if !(rate > 0.0) {
        return Err(DspError::InvalidParameter("rate must be positive"));
    }
    let needed = (BPM_MIN_WINDOW_S * rate).ceil() as usize;
    if window.len() < needed {
        return Err(DspError::WindowTooShort {
            needed,
            got: window.len(),
        });
    }
    let peaks = detect_peaks(window, rate);
    match (peaks.first(), peaks.last()) {
        (Some(&first), Some(&last)) if peaks.len() >= 2 => {
            let span = (last - first) as f64 / rate;
            Ok(60.0 * (peaks.len() - 1) as f64 / span)
        }
        _ => Err(DspError::NoBeats),
    }
}
