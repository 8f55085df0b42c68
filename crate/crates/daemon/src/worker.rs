//! Worker stage for the heavier spectral and averaging jobs, so that they
//! never hold up the processing stage.

use crate::messages::{Job, Outbound};
use crate::protocol::{ErrorCode, ServerMessage};
use cyton_core::dsp::{average_epochs, band_power};
use cyton_core::spsc::{Consumer, Producer};

pub struct Worker {
    jobs: Consumer<Job>,
    out: Producer<Outbound>,
    dropped: u64,
}

impl Worker {
    pub fn new(jobs: Consumer<Job>, out: Producer<Outbound>) -> Self {
        Worker { jobs, out, dropped: 0 }
    }

    pub fn dropped(&self) -> u64 {
        self.dropped
    }

    /// Run every queued job. Returns whether there was any.
    pub fn step(&mut self) -> bool {
        let mut busy = false;
        while let Some(job) = self.jobs.pop() {
            busy = true;
            let msg = run(job);
            if self.out.push(msg).is_err() {
                self.dropped += 1;
            }
        }
        busy
    }
}

pub fn run(job: Job) -> Outbound {
    match job {
        Job::BandPower {
            client,
            band,
            window_s,
            stream,
            rate,
            data,
        } => {
            let values: Result<Vec<f64>, _> = data.iter().map(|ch| band_power(ch, rate, band)).collect();
            let msg = match values {
                Ok(values) => ServerMessage::BandPower {
                    band,
                    window_s,
                    stream,
                    values,
                },
                Err(e) => ServerMessage::error(ErrorCode::InvalidRequest, e.to_string()),
            };
            Outbound::To { client, msg }
        }
        Job::Average {
            client,
            label,
            stream,
            epochs,
        } => {
            let msg = match average_epochs(&epochs) {
                Ok(avg) => ServerMessage::Average {
                    label,
                    count: epochs.len(),
                    stream,
                    rate: avg.rate,
                    data: avg.data,
                },
                Err(e) => ServerMessage::error(ErrorCode::InsufficientData, e.to_string()),
            };
            Outbound::To { client, msg }
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::protocol::StreamKind;
    use cyton_core::dsp::Epoch;
    use std::f64::consts::PI;

    #[test]
    fn band_power_job_reports_each_channel() {
        let sine: Vec<f64> = (0..500).map(|i| (2.0 * PI * 10.0 * i as f64 / 250.0).sin()).collect();
        let job = Job::BandPower {
            client: 7,
            band: (8.0, 12.0),
            window_s: 2.0,
            stream: StreamKind::Filtered,
            rate: 250.0,
            data: vec![sine.clone(), sine.iter().map(|v| 2.0 * v).collect()],
        };
        let Outbound::To { client: 7, msg: ServerMessage::BandPower { values, .. } } = run(job) else {
            panic!("unexpected reply");
        };
        assert!((values[0] - 0.5).abs() < 1e-3);
        assert!((values[1] - 2.0).abs() < 4e-3);
    }

    #[test]
    fn average_job_means_pointwise() {
        let e = |tag_id, v: f64| Epoch {
            tag_id,
            start_index: 0,
            rate: 250.0,
            data: vec![vec![v; 4]],
        };
        let job = Job::Average {
            client: 1,
            label: "a".into(),
            stream: StreamKind::Raw,
            epochs: vec![e(1, 1.0), e(2, 3.0)],
        };
        let Outbound::To { msg: ServerMessage::Average { count, data, .. }, .. } = run(job) else {
            panic!("unexpected reply");
        };
        assert_eq!(count, 2);
        assert_eq!(data, vec![vec![2.0; 4]]);
    }
}
