use std::f64::consts::PI;

const UP: usize = 128;
const DOWN: usize = 125;
const TAPS: usize = 64;
const CUTOFF_HZ_AT_250: f64 = 117.0;
const KAISER_BETA: f64 = 8.0;

/// Streaming rational resampler, 250 Hz -> 256 Hz (128/125), polyphase
/// Kaiser-windowed sinc.
///
/// Output `m` estimates the input signal at input time
/// `m * 125 / 128 - delay` samples, where `delay` is half the kernel span
/// (32 input samples). It is produced as soon as the input sample at
/// `floor(m * 125 / 128)` has arrived, so after `n` inputs exactly
/// `ceil(n * 128 / 125)` outputs exist. The history is primed with the first
/// input sample to avoid a start-up transient.
#[derive(Debug, Clone)]
pub struct Resampler {
    table: Vec<f64>,
    channels: usize,
    /// `history[ch * TAPS + k]` is a circular buffer of recent inputs.
    history: Vec<f64>,
    newest: usize,
    n_in: u64,
    n_out: u64,
}

impl Resampler {
    pub fn new(channels: usize) -> Self {
        Resampler {
            table: build_table(),
            channels,
            history: vec![0.0; channels * TAPS],
            newest: 0,
            n_in: 0,
            n_out: 0,
        }
    }

    pub const RATIO_UP: usize = UP;
    pub const RATIO_DOWN: usize = DOWN;

    pub fn channels(&self) -> usize {
        self.channels
    }

    pub fn input_count(&self) -> u64 {
        self.n_in
    }

    pub fn output_count(&self) -> u64 {
        self.n_out
    }

    /// Group delay in input samples.
    pub fn delay_input_samples() -> f64 {
        (TAPS / 2) as f64
    }

    /// Kernel length in input samples.
    pub fn span_input_samples() -> usize {
        TAPS
    }

    /// Output index whose estimate refers to (fractional) input index `i`.
    pub fn output_position_of_input(i: f64) -> f64 {
        (i + Self::delay_input_samples()) * UP as f64 / DOWN as f64
    }

    /// Input position (fractional) that output index `m` estimates.
    pub fn input_position_of_output(m: u64) -> f64 {
        m as f64 * DOWN as f64 / UP as f64 - Self::delay_input_samples()
    }

    pub fn reset(&mut self) {
        self.history.iter_mut().for_each(|v| *v = 0.0);
        self.newest = 0;
        self.n_in = 0;
        self.n_out = 0;
    }

    /// Feed one multichannel input sample; each completed output frame is
    /// passed to `emit` together with its output index.
    pub fn push_frame(&mut self, input: &[f64], mut emit: impl FnMut(u64, Vec<f64>)) {
        assert_eq!(input.len(), self.channels, "resampler channel count");
        if self.n_in == 0 {
            for (ch, &v) in input.iter().enumerate() {
                self.history[ch * TAPS..(ch + 1) * TAPS].fill(v);
            }
        }
        self.newest = (self.newest + 1) % TAPS;
        for (ch, &v) in input.iter().enumerate() {
            self.history[ch * TAPS + self.newest] = v;
        }
        self.n_in += 1;

        while self.n_out * (DOWN as u64) < self.n_in * (UP as u64) {
            let phase = ((self.n_out * DOWN as u64) % UP as u64) as usize;
            let coeffs = &self.table[phase * TAPS..(phase + 1) * TAPS];
            let frame = (0..self.channels)
                .map(|ch| {
                    let hist = &self.history[ch * TAPS..(ch + 1) * TAPS];
                    coeffs
                        .iter()
                        .enumerate()
                        .map(|(k, c)| c * hist[(self.newest + TAPS - k) % TAPS])
                        .sum()
                })
                .collect();
            emit(self.n_out, frame);
            self.n_out += 1;
        }
    }

    /// Resample a block laid out as `block[channel][sample]`.
    pub fn process_block(&mut self, block: &[Vec<f64>]) -> Vec<Vec<f64>> {
        assert_eq!(block.len(), self.channels, "resampler channel count");
        let n = block.first().map_or(0, Vec::len);
        let mut out = vec![Vec::with_capacity(n * UP / DOWN + 1); self.channels];
        let mut frame = vec![0.0; self.channels];
        for i in 0..n {
            for (ch, samples) in block.iter().enumerate() {
                frame[ch] = samples[i];
            }
            self.push_frame(&frame, |_, y| {
                for (ch, v) in y.into_iter().enumerate() {
                    out[ch].push(v);
                }
            });
        }
        out
    }
}

fn bessel_i0(x: f64) -> f64 {
    let mut sum = 1.0;
    let mut term = 1.0;
    let q = x * x / 4.0;
    for k in 1..64 {
        term *= q / (k * k) as f64;
        sum += term;
        if term < sum * 1e-17 {
            break;
        }
    }
    sum
}

fn build_table() -> Vec<f64> {
    let half = (TAPS / 2) as f64;
    let fc = CUTOFF_HZ_AT_250 / 250.0;
    let i0_beta = bessel_i0(KAISER_BETA);
    let kernel = |t: f64| {
        let r = t / half;
        if r.abs() >= 1.0 {
            return 0.0;
        }
        let x = 2.0 * fc * t;
        let sinc = if x.abs() < 1e-12 { 1.0 } else { (PI * x).sin() / (PI * x) };
        2.0 * fc * sinc * bessel_i0(KAISER_BETA * (1.0 - r * r).sqrt()) / i0_beta
    };
    let mut table = vec![0.0; UP * TAPS];
    for phase in 0..UP {
        let row = &mut table[phase * TAPS..(phase + 1) * TAPS];
        for (k, c) in row.iter_mut().enumerate() {
            *c = kernel(k as f64 - half + phase as f64 / UP as f64);
        }
        // unity DC gain in every phase
        let sum: f64 = row.iter().sum();
        row.iter_mut().for_each(|c| *c /= sum);
    }
    table
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn bessel_matches_known_values() {
        assert!((bessel_i0(0.0) - 1.0).abs() < 1e-15);
        // I0(1) = 1.2660658777520082, I0(8) = 427.56411572180474
        assert!((bessel_i0(1.0) - 1.266_065_877_752_008_2).abs() < 1e-12);
        assert!((bessel_i0(8.0) - 427.564_115_721_804_74).abs() < 1e-9);
    }

    #[test]
    fn output_count_tracks_ratio() {
        let mut r = Resampler::new(1);
        let mut produced = 0u64;
        for i in 1..=1000u64 {
            r.push_frame(&[0.0], |_, _| produced += 1);
            let ideal = i as f64 * 128.0 / 125.0;
            assert!((produced as f64 - ideal).abs() <= 1.0);
            assert_eq!(produced, (i * 128).div_ceil(125));
        }
    }

    #[test]
    fn steady_state_block_of_125_gives_128() {
        let mut r = Resampler::new(1);
        let warm = r.process_block(&[vec![0.0; 125]]);
        assert_eq!(warm[0].len(), 128);
        let out = r.process_block(&[vec![0.0; 125]]);
        assert_eq!(out[0].len(), 128);
    }

    #[test]
    fn constant_input_stays_constant() {
        let mut r = Resampler::new(2);
        let out = r.process_block(&[vec![1.0; 12500], vec![-3.0; 12500]]);
        assert_eq!(out[0].len(), 12800);
        assert!(out[0].iter().all(|v| (v - 1.0).abs() < 1e-3));
        assert!(out[1].iter().all(|v| (v + 3.0).abs() < 1e-3));
    }

    #[test]
    fn chunking_is_exact() {
        let x: Vec<f64> = (0..777).map(|i| ((i * 7919) % 211) as f64).collect();
        let mut a = Resampler::new(1);
        let whole = a.process_block(std::slice::from_ref(&x));
        let mut b = Resampler::new(1);
        let mut pieces = Vec::new();
        for chunk in x.chunks(13) {
            pieces.extend(b.process_block(&[chunk.to_vec()]).remove(0));
        }
        assert_eq!(whole[0], pieces);
    }

    #[test]
    fn tracks_a_sine_with_known_delay() {
        let f = 10.0;
        let x: Vec<f64> = (0..2500)
            .map(|i| (2.0 * PI * f * i as f64 / 250.0).sin())
            .collect();
        let mut r = Resampler::new(1);
        let y = r.process_block(&[x]).remove(0);
        for (m, v) in y.iter().enumerate().skip(200) {
            let t = Resampler::input_position_of_output(m as u64) / 250.0;
            let want = (2.0 * PI * f * t).sin();
            assert!((v - want).abs() < 2e-3, "output {m}: {v} vs {want}");
        }
    }
}
