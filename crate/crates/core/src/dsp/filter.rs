use super::DspError;
use num_complex::Complex64;
use serde::{Deserialize, Serialize};
use std::f64::consts::PI;

/// Mains interference notch setting.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Default, Serialize, Deserialize)]
#[serde(try_from = "serde_notch::Repr", into = "serde_notch::Repr")]
pub enum MainsNotch {
    Off,
    Hz50,
    #[default]
    Hz60,
}

impl MainsNotch {
    pub fn freq(self) -> Option<f64> {
        match self {
            MainsNotch::Off => None,
            MainsNotch::Hz50 => Some(50.0),
            MainsNotch::Hz60 => Some(60.0),
        }
    }
}

impl std::str::FromStr for MainsNotch {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s.trim().to_ascii_lowercase().as_str() {
            "off" | "none" => Ok(MainsNotch::Off),
            "50" => Ok(MainsNotch::Hz50),
            "60" => Ok(MainsNotch::Hz60),
            other => Err(format!("notch must be 50, 60 or off, got {other:?}")),
        }
    }
}

mod serde_notch {
    use super::MainsNotch;
    use serde::{Deserialize, Serialize};

    // Accepts 50, 60, "50", "60" or "off".
    #[derive(Serialize, Deserialize)]
    #[serde(untagged)]
    pub enum Repr {
        Num(f64),
        Text(String),
    }

    impl TryFrom<Repr> for MainsNotch {
        type Error = String;

        fn try_from(r: Repr) -> Result<Self, Self::Error> {
            match r {
                Repr::Num(50.0) => Ok(MainsNotch::Hz50),
                Repr::Num(60.0) => Ok(MainsNotch::Hz60),
                Repr::Num(f) => Err(format!("notch must be 50, 60 or off, got {f}")),
                Repr::Text(s) => s.parse(),
            }
        }
    }

    impl From<MainsNotch> for Repr {
        fn from(n: MainsNotch) -> Self {
            match n.freq() {
                Some(f) => Repr::Num(f),
                None => Repr::Text("off".into()),
            }
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct FilterSpec {
    pub bandpass_low: f64,
    pub bandpass_high: f64,
    pub notch: MainsNotch,
    pub notch_q: f64,
    pub order: usize,
}

impl Default for FilterSpec {
    fn default() -> Self {
        FilterSpec {
            bandpass_low: 1.0,
            bandpass_high: 50.0,
            notch: MainsNotch::Hz60,
            notch_q: 30.0,
            order: 4,
        }
    }
}

impl FilterSpec {
    pub fn validate(&self, rate: f64) -> Result<(), DspError> {
        let nyquist = rate / 2.0;
        if !(self.bandpass_low > 0.0 && self.bandpass_low < self.bandpass_high) {
            return Err(DspError::InvalidBand {
                low: self.bandpass_low,
                high: self.bandpass_high,
            });
        }
        if self.bandpass_high >= nyquist {
            return Err(DspError::AboveNyquist {
                what: "bandpass corner",
                freq: self.bandpass_high,
                nyquist,
            });
        }
        if let Some(f) = self.notch.freq() {
            if f >= nyquist {
                return Err(DspError::AboveNyquist {
                    what: "notch",
                    freq: f,
                    nyquist,
                });
            }
        }
        if self.order == 0 {
            return Err(DspError::InvalidParameter("order must be at least 1"));
        }
        if !(self.notch_q > 0.0) {
            return Err(DspError::InvalidParameter("notch Q must be positive"));
        }
        Ok(())
    }
}

/// Second-order section, `a0` normalized to 1.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Biquad {
    pub b0: f64,
    pub b1: f64,
    pub b2: f64,
    pub a1: f64,
    pub a2: f64,
}

impl Biquad {
    pub fn response(&self, freq: f64, rate: f64) -> Complex64 {
        let z1 = Complex64::from_polar(1.0, -2.0 * PI * freq / rate);
        let z2 = z1 * z1;
        (self.b0 + self.b1 * z1 + self.b2 * z2) / (1.0 + self.a1 * z1 + self.a2 * z2)
    }

    /// Roots of `z^2 + a1 z + a2`.
    pub fn poles(&self) -> [Complex64; 2] {
        let disc = Complex64::new(self.a1 * self.a1 - 4.0 * self.a2, 0.0).sqrt();
        [(-self.a1 + disc) / 2.0, (-self.a1 - disc) / 2.0]
    }

    fn scaled(self, g: f64) -> Self {
        Biquad {
            b0: self.b0 * g,
            b1: self.b1 * g,
            b2: self.b2 * g,
            ..self
        }
    }
}

/// Cascade of biquads with independent delay state per channel
/// (transposed direct form II).
#[derive(Debug, Clone, PartialEq)]
pub struct BiquadCascade {
    sections: Vec<Biquad>,
    channels: usize,
    state: Vec<[f64; 2]>,
}

impl BiquadCascade {
    pub fn new(sections: Vec<Biquad>) -> Self {
        let state = vec![[0.0; 2]; sections.len()];
        BiquadCascade {
            sections,
            channels: 1,
            state,
        }
    }

    /// Pass-through filter (no sections).
    pub fn identity() -> Self {
        Self::new(Vec::new())
    }

    /// Resize the delay state for `channels` channels (state is cleared).
    pub fn with_channels(mut self, channels: usize) -> Self {
        self.channels = channels;
        self.state = vec![[0.0; 2]; channels * self.sections.len()];
        self
    }

    pub fn channels(&self) -> usize {
        self.channels
    }

    pub fn sections(&self) -> &[Biquad] {
        &self.sections
    }

    pub fn reset(&mut self) {
        self.state.iter_mut().for_each(|s| *s = [0.0; 2]);
    }

    pub fn response(&self, freq: f64, rate: f64) -> Complex64 {
        self.sections
            .iter()
            .map(|s| s.response(freq, rate))
            .product()
    }

    pub fn gain_db(&self, freq: f64, rate: f64) -> f64 {
        20.0 * self.response(freq, rate).norm().log10()
    }

    pub fn max_pole_magnitude(&self) -> f64 {
        self.sections
            .iter()
            .flat_map(|s| s.poles())
            .map(|p| p.norm())
            .fold(0.0, f64::max)
    }

    pub fn is_stable(&self) -> bool {
        self.max_pole_magnitude() < 1.0
    }

    #[inline]
    fn step(sections: &[Biquad], state: &mut [[f64; 2]], x: f64) -> f64 {
        let mut v = x;
        for (s, z) in sections.iter().zip(state.iter_mut()) {
            let y = s.b0 * v + z[0];
            z[0] = s.b1 * v - s.a1 * y + z[1];
            z[1] = s.b2 * v - s.a2 * y;
            v = y;
        }
        v
    }

    /// Filter one multichannel sample in place.
    pub fn process_frame(&mut self, values: &mut [f64]) -> Result<(), DspError> {
        if values.len() != self.channels {
            return Err(DspError::ChannelMismatch {
                expected: self.channels,
                got: values.len(),
            });
        }
        let n = self.sections.len();
        for (ch, v) in values.iter_mut().enumerate() {
            *v = Self::step(&self.sections, &mut self.state[ch * n..(ch + 1) * n], *v);
        }
        Ok(())
    }

    /// Filter a block laid out as `block[channel][sample]`, in place.
    pub fn process_block(&mut self, block: &mut [Vec<f64>]) -> Result<(), DspError> {
        if block.len() != self.channels {
            return Err(DspError::ChannelMismatch {
                expected: self.channels,
                got: block.len(),
            });
        }
        let n = self.sections.len();
        for (ch, samples) in block.iter_mut().enumerate() {
            let state = &mut self.state[ch * n..(ch + 1) * n];
            for x in samples.iter_mut() {
                *x = Self::step(&self.sections, state, *x);
            }
        }
        Ok(())
    }
}

/// Butterworth bandpass of `spec.order` (the lowpass prototype order, so
/// `order` biquads) via bilinear transform with pre-warped corners.
pub fn design_bandpass(spec: &FilterSpec, rate: f64) -> Result<BiquadCascade, DspError> {
    spec.validate(rate)?;
    let n = spec.order;
    let fs2 = 2.0 * rate;
    let warp = |f: f64| fs2 * (PI * f / rate).tan();
    let (wl, wh) = (warp(spec.bandpass_low), warp(spec.bandpass_high));
    let bw = wh - wl;
    let w0 = (wl * wh).sqrt();

    let mut upper = Vec::new();
    let mut real = Vec::new();
    for k in 0..n {
        let theta = PI * (2 * k + n + 1) as f64 / (2 * n) as f64;
        let proto = Complex64::from_polar(1.0, theta);
        let half = proto * bw / 2.0;
        let disc = (half * half - w0 * w0).sqrt();
        for s in [half + disc, half - disc] {
            let z = (fs2 + s) / (fs2 - s);
            if z.im.abs() < 1e-12 {
                real.push(z.re);
            } else if z.im > 0.0 {
                upper.push(z);
            }
        }
    }
    real.sort_by(|a, b| a.partial_cmp(b).unwrap());

    let mut sections: Vec<Biquad> = upper
        .iter()
        .map(|p| Biquad {
            b0: 1.0,
            b1: 0.0,
            b2: -1.0,
            a1: -2.0 * p.re,
            a2: p.norm_sqr(),
        })
        .collect();
    for pair in real.chunks(2) {
        let (p1, p2) = (pair[0], *pair.get(1).unwrap_or(&0.0));
        sections.push(Biquad {
            b0: 1.0,
            b1: 0.0,
            b2: -1.0,
            a1: -(p1 + p2),
            a2: p1 * p2,
        });
    }
    sections.sort_by(|a, b| a.a2.abs().partial_cmp(&b.a2.abs()).unwrap());

    // Analog magnitude at w0 is exactly 1; the bilinear map sends w0 here.
    let center = rate / PI * (w0 / fs2).atan();
    let sections = sections
        .into_iter()
        .map(|s| s.scaled(1.0 / s.response(center, rate).norm()))
        .collect();
    Ok(BiquadCascade::new(sections))
}

/// Second-order notch (RBJ cookbook form).
pub fn design_notch(freq: f64, q: f64, rate: f64) -> Result<BiquadCascade, DspError> {
    let nyquist = rate / 2.0;
    if !(freq > 0.0) || freq >= nyquist {
        return Err(DspError::AboveNyquist {
            what: "notch",
            freq,
            nyquist,
        });
    }
    if !(q > 0.0) {
        return Err(DspError::InvalidParameter("notch Q must be positive"));
    }
    let w0 = 2.0 * PI * freq / rate;
    let alpha = w0.sin() / (2.0 * q);
    let a0 = 1.0 + alpha;
    let c = -2.0 * w0.cos();
    Ok(BiquadCascade::new(vec![Biquad {
        b0: 1.0 / a0,
        b1: c / a0,
        b2: 1.0 / a0,
        a1: c / a0,
        a2: (1.0 - alpha) / a0,
    }]))
}

impl MainsNotch {
    /// The notch cascade for this setting, identity when off.
    pub fn design(self, q: f64, rate: f64) -> Result<BiquadCascade, DspError> {
        match self.freq() {
            Some(f) => design_notch(f, q, rate),
            None => Ok(BiquadCascade::identity()),
        }
    }
}
