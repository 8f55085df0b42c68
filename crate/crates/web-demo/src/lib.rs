//! WebAssembly bindings for three interactive views of the signal chain:
//! the filter response, the alpha-band detector and the 250 → 256 Hz
//! resampler. See `www/index.html`.

use cyton_core::dsp::{detect_alpha, design_bandpass, FilterSpec, MainsNotch, Periodogram, Resampler};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use std::f64::consts::PI;
use wasm_bindgen::prelude::*;

fn notch_from_hz(hz: f64) -> Result<MainsNotch, String> {
    match hz as u32 {
        0 => Ok(MainsNotch::Off),
        50 => Ok(MainsNotch::Hz50),
        60 => Ok(MainsNotch::Hz60),
        _ => Err(format!("notch must be 0, 50 or 60 Hz, got {hz}")),
    }
}

/// Evenly spaced frequencies from 0 to just below Nyquist.
#[wasm_bindgen]
pub fn response_frequencies(rate: f64, points: usize) -> Vec<f64> {
    let nyquist = rate / 2.0;
    (0..points).map(|i| nyquist * i as f64 / points as f64).collect()
}

/// Magnitude response in dB of notch followed by bandpass, at the
/// frequencies of [`response_frequencies`].
#[wasm_bindgen]
pub fn filter_response(low: f64, high: f64, notch_hz: f64, order: usize, rate: f64, points: usize) -> Result<Vec<f64>, String> {
    let spec = FilterSpec {
        bandpass_low: low,
        bandpass_high: high,
        notch: notch_from_hz(notch_hz)?,
        order,
        ..FilterSpec::default()
    };
    spec.validate(rate).map_err(|e| e.to_string())?;
    let bandpass = design_bandpass(&spec, rate).map_err(|e| e.to_string())?;
    let notch = spec.notch.design(spec.notch_q, rate).map_err(|e| e.to_string())?;
    Ok(response_frequencies(rate, points)
        .into_iter()
        .map(|f| (notch.gain_db(f, rate) + bandpass.gain_db(f, rate)).max(-120.0))
        .collect())
}

/// A synthetic second of EEG and what the alpha detector makes of it.
#[wasm_bindgen]
pub struct AlphaReport {
    ratio: f64,
    bin_hz: f64,
    signal: Vec<f64>,
    spectrum: Vec<f64>,
}

#[wasm_bindgen]
impl AlphaReport {
    #[wasm_bindgen(getter)]
    pub fn ratio(&self) -> f64 {
        self.ratio
    }

    #[wasm_bindgen(getter)]
    pub fn bin_hz(&self) -> f64 {
        self.bin_hz
    }

    #[wasm_bindgen(getter)]
    pub fn signal(&self) -> Vec<f64> {
        self.signal.clone()
    }

    /// Power per frequency bin, µV².
    #[wasm_bindgen(getter)]
    pub fn spectrum(&self) -> Vec<f64> {
        self.spectrum.clone()
    }
}

/// One second at `rate` of a 10 Hz rhythm of `alpha_uv`, a 4 Hz rhythm of
/// `theta_uv` and white noise of `noise_uv`.
#[wasm_bindgen]
pub fn alpha_demo(alpha_uv: f64, theta_uv: f64, noise_uv: f64, rate: f64, seed: u64) -> Result<AlphaReport, String> {
    let noise = Normal::new(0.0, noise_uv.max(0.0)).map_err(|e| e.to_string())?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let signal: Vec<f64> = (0..rate.round() as usize)
        .map(|i| {
            let t = i as f64 / rate;
            alpha_uv * (2.0 * PI * 10.0 * t).sin() + theta_uv * (2.0 * PI * 4.0 * t).sin() + noise.sample(&mut rng)
        })
        .collect();
    let p = Periodogram::new(&signal, rate).map_err(|e| e.to_string())?;
    Ok(AlphaReport {
        ratio: detect_alpha(&signal, rate).map_err(|e| e.to_string())?,
        bin_hz: p.bin_hz(),
        spectrum: p.bins().to_vec(),
        signal,
    })
}

/// Input and output of the 250 → 256 Hz resampler for a sine.
#[wasm_bindgen]
pub struct ResampleReport {
    input: Vec<f64>,
    output: Vec<f64>,
}

#[wasm_bindgen]
impl ResampleReport {
    #[wasm_bindgen(getter)]
    pub fn input(&self) -> Vec<f64> {
        self.input.clone()
    }

    #[wasm_bindgen(getter)]
    pub fn output(&self) -> Vec<f64> {
        self.output.clone()
    }

    /// Output delay, in input samples, to line the traces up.
    #[wasm_bindgen(getter)]
    pub fn delay(&self) -> f64 {
        Resampler::delay_input_samples()
    }
}

#[wasm_bindgen]
pub fn resample_sine(freq: f64, samples: usize) -> ResampleReport {
    let input: Vec<f64> = (0..samples).map(|i| (2.0 * PI * freq * i as f64 / 250.0).sin()).collect();
    let output = Resampler::new(1).process_block(std::slice::from_ref(&input)).remove(0);
    ResampleReport { input, output }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn response_has_a_notch_and_a_passband() {
        let f = response_frequencies(250.0, 250);
        let db = filter_response(1.0, 50.0, 60.0, 4, 250.0, 250).unwrap();
        let at = |hz: f64| db[f.iter().position(|&x| x >= hz).unwrap()];
        assert!(at(25.0).abs() < 1.0);
        assert!(at(60.0) < -40.0);
        assert!(filter_response(1.0, 50.0, 55.0, 4, 250.0, 10).is_err());
    }

    #[test]
    fn alpha_ratio_follows_the_mix() {
        assert!(alpha_demo(20.0, 5.0, 1.0, 250.0, 1).unwrap().ratio > 0.5);
        assert!(alpha_demo(0.0, 5.0, 1.0, 250.0, 1).unwrap().ratio < 0.2);
        let r = alpha_demo(10.0, 0.0, 0.0, 250.0, 1).unwrap();
        assert_eq!(r.spectrum.len(), r.signal.len() / 2 + 1);
    }

    #[test]
    fn resampled_sine_is_longer_by_the_rate_ratio() {
        let r = resample_sine(10.0, 1250);
        assert_eq!(r.output.len(), 1280);
    }
}
