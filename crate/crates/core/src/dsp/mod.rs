//! Signal processing stage: mains notch, EEG bandpass, 250 -> 256 Hz
//! resampling, band power, heart rate and tag-locked epochs.

mod epoch;
mod filter;
mod heart;
mod resample;
mod spectral;

pub use epoch::{average_epochs, extract_epoch, Epoch, EpochError, EpochWindow};
pub use filter::{design_bandpass, design_notch, Biquad, BiquadCascade, FilterSpec, MainsNotch};
pub use heart::{detect_peaks, estimate_bpm, BPM_MIN_WINDOW_S, REFRACTORY_S};
pub use resample::Resampler;
pub use spectral::{band_power, detect_alpha, Periodogram, ALPHA_BAND, ALPHA_REFERENCE_BAND};

use thiserror::Error;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum DspError {
    #[error("{what} at {freq} Hz is not below the Nyquist frequency {nyquist} Hz")]
    AboveNyquist {
        what: &'static str,
        freq: f64,
        nyquist: f64,
    },
    #[error("invalid band [{low}, {high}] Hz")]
    InvalidBand { low: f64, high: f64 },
    #[error("invalid filter parameter: {0}")]
    InvalidParameter(&'static str),
    #[error("filter state has {expected} channels, block has {got}")]
    ChannelMismatch { expected: usize, got: usize },
    #[error("window of {got} samples is shorter than the required {needed}")]
    WindowTooShort { needed: usize, got: usize },
    #[error("fewer than two beats detected")]
    NoBeats,
}
