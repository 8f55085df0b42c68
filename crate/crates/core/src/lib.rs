//! Acquisition core for the OpenBCI Cyton board: serial codec, stream
//! repair, signal processing and a device simulator.

pub mod clock;
pub mod codec;
pub mod dsp;
pub mod sim;
pub mod spsc;
pub mod stream;
pub mod transport;
