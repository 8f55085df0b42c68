use super::DspError;
use rustfft::num_complex::Complex;
use rustfft::FftPlanner;
use std::f64::consts::PI;

pub const ALPHA_BAND: (f64, f64) = (8.0, 12.0);
pub const ALPHA_REFERENCE_BAND: (f64, f64) = (1.0, 40.0);

/// One-sided, Hann-windowed periodogram of a mean-removed window, scaled so
/// that the bins sum to the mean square of the signal.
#[derive(Debug, Clone)]
pub struct Periodogram {
    bin_hz: f64,
    power: Vec<f64>,
}

impl Periodogram {
    pub fn new(window: &[f64], rate: f64) -> Result<Self, DspError> {
        let n = window.len();
        let needed = rate.floor() as usize;
        if n < needed.max(2) {
            return Err(DspError::WindowTooShort { needed, got: n });
        }
        let mean = window.iter().sum::<f64>() / n as f64;
        let taper: Vec<f64> = (0..n)
            .map(|i| 0.5 - 0.5 * (2.0 * PI * i as f64 / n as f64).cos())
            .collect();
        let taper_energy: f64 = taper.iter().map(|w| w * w).sum();
        let mut buf: Vec<Complex<f64>> = window
            .iter()
            .zip(&taper)
            .map(|(x, w)| Complex::new((x - mean) * w, 0.0))
            .collect();
        FftPlanner::new().plan_fft_forward(n).process(&mut buf);

        let scale = 1.0 / (n as f64 * taper_energy);
        let power = (0..=n / 2)
            .map(|k| {
                let p = buf[k].norm_sqr() * scale;
                // fold the negative-frequency half in, except at DC and Nyquist
                if k == 0 || (n.is_multiple_of(2) && k == n / 2) {
                    p
                } else {
                    2.0 * p
                }
            })
            .collect();
        Ok(Periodogram {
            bin_hz: rate / n as f64,
            power,
        })
    }

    pub fn bin_hz(&self) -> f64 {
        self.bin_hz
    }

    pub fn bins(&self) -> &[f64] {
        &self.power
    }

    pub fn nyquist(&self) -> f64 {
        (self.power.len() - 1) as f64 * self.bin_hz
    }

    /// Sum of the bins whose centre lies in `[low, high]`.
    pub fn band(&self, (low, high): (f64, f64)) -> Result<f64, DspError> {
        if !(low >= 0.0 && low < high) {
            return Err(DspError::InvalidBand { low, high });
        }
        let nyquist = self.bin_hz * (self.power.len() - 1) as f64;
        if high > nyquist + 1e-9 {
            return Err(DspError::AboveNyquist {
                what: "band edge",
                freq: high,
                nyquist,
            });
        }
        let eps = 1e-9 * self.bin_hz;
        Ok(self
            .power
            .iter()
            .enumerate()
            .filter(|(k, _)| {
                let f = *k as f64 * self.bin_hz;
                f >= low - eps && f <= high + eps
            })
            .map(|(_, p)| p)
            .sum())
    }
}

/// Mean squared amplitude (µV²) of `window` inside `band`.
pub fn band_power(window: &[f64], rate: f64, band: (f64, f64)) -> Result<f64, DspError> {
    Periodogram::new(window, rate)?.band(band)
}

/// Share of 1-40 Hz power that falls in the 8-12 Hz alpha band. Zero for a
/// silent window.
pub fn detect_alpha(window: &[f64], rate: f64) -> Result<f64, DspError> {
    let p = Periodogram::new(window, rate)?;
    let total = p.band(ALPHA_REFERENCE_BAND)?;
    if total <= 0.0 {
        return Ok(0.0);
    }
    Ok(p.band(ALPHA_BAND)? / total)
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;
    use rand_distr::{Distribution, StandardNormal};

    const RATE: f64 = 250.0;

    fn sine(freq: f64, secs: f64) -> Vec<f64> {
        (0..(secs * RATE) as usize)
            .map(|i| (2.0 * PI * freq * i as f64 / RATE).sin())
            .collect()
    }

    // Direct O(n^2) DFT band power with the same taper and scaling.
    fn dft_band_power(x: &[f64], band: (f64, f64)) -> f64 {
        let n = x.len();
        let mean = x.iter().sum::<f64>() / n as f64;
        let w: Vec<f64> = (0..n)
            .map(|i| 0.5 - 0.5 * (2.0 * PI * i as f64 / n as f64).cos())
            .collect();
        let u: f64 = w.iter().map(|v| v * v).sum();
        let mut total = 0.0;
        for k in 0..=n / 2 {
            let f = k as f64 * RATE / n as f64;
            if f < band.0 || f > band.1 {
                continue;
            }
            let (mut re, mut im) = (0.0, 0.0);
            for i in 0..n {
                let a = -2.0 * PI * (k * i) as f64 / n as f64;
                let v = (x[i] - mean) * w[i];
                re += v * a.cos();
                im += v * a.sin();
            }
            let p = (re * re + im * im) / (n as f64 * u);
            total += if k == 0 || k == n / 2 { p } else { 2.0 * p };
        }
        total
    }

    #[test]
    fn sine_power_is_half() {
        let x = sine(10.0, 1.0);
        let p = band_power(&x, RATE, (8.0, 12.0)).unwrap();
        assert!((p - 0.5).abs() < 1e-3, "{p}");
        assert!((p - dft_band_power(&x, (8.0, 12.0))).abs() < 1e-9);
        let out = band_power(&x, RATE, (20.0, 30.0)).unwrap();
        assert!(out < 0.005, "{out}");
    }

    #[test]
    fn matches_direct_dft_on_noise() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let x: Vec<f64> = (0..300).map(|_| StandardNormal.sample(&mut rng)).collect();
        for band in [(1.0, 40.0), (8.0, 12.0), (0.0, 125.0)] {
            let a = band_power(&x, RATE, band).unwrap();
            let b = dft_band_power(&x, band);
            assert!((a - b).abs() < 1e-9 * b.max(1.0), "{band:?}: {a} vs {b}");
        }
    }

    #[test]
    fn zeros_have_no_power() {
        assert_eq!(band_power(&[0.0; 250], RATE, (1.0, 40.0)).unwrap(), 0.0);
        assert_eq!(detect_alpha(&[0.0; 250], RATE).unwrap(), 0.0);
    }

    #[test]
    fn rejects_bad_arguments() {
        assert!(matches!(
            band_power(&[0.0; 100], RATE, (1.0, 2.0)),
            Err(DspError::WindowTooShort { .. })
        ));
        assert!(band_power(&[0.0; 250], RATE, (100.0, 130.0)).is_err());
        assert!(band_power(&[0.0; 250], RATE, (12.0, 8.0)).is_err());
    }

    #[test]
    fn pure_alpha_ratio_is_one() {
        let r = detect_alpha(&sine(10.0, 2.0), RATE).unwrap();
        assert!((r - 1.0).abs() < 1e-3, "{r}");
    }

    #[test]
    fn white_noise_alpha_ratio() {
        // Flat spectrum: 5 of 40 one-hertz bins, i.e. about 4/39 of the reference band.
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        let expected = 4.0 / 39.0;
        let mut sum = 0.0;
        for _ in 0..100 {
            let x: Vec<f64> = (0..250).map(|_| StandardNormal.sample(&mut rng)).collect();
            sum += detect_alpha(&x, RATE).unwrap();
        }
        let mean = sum / 100.0;
        assert!((mean - expected).abs() < 0.5 * expected, "{mean}");
    }
}
