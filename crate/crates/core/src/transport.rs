//! Byte transport between the host and a board (real serial port, pseudo
//! terminal, in-memory pipe or the in-process simulator).

use std::collections::VecDeque;
use std::sync::{Arc, Condvar, Mutex};
use std::time::{Duration, Instant};
use thiserror::Error;

#[derive(Debug, Error)]
pub enum TransportError {
    #[error("transport closed")]
    Closed,
    #[error("transport unavailable: {0}")]
    Unavailable(String),
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

pub trait Transport: Send {
    fn send(&mut self, bytes: &[u8]) -> Result<(), TransportError>;

    /// Append whatever bytes are available to `buf`, waiting at most
    /// `timeout` for the first one. Returns the number appended; zero means
    /// the wait timed out.
    fn recv(&mut self, buf: &mut Vec<u8>, timeout: Duration) -> Result<usize, TransportError>;
}

/// Opens (and re-opens after a loss) a [`Transport`].
pub trait Connector: Send {
    fn connect(&mut self) -> Result<Box<dyn Transport>, TransportError>;
    fn describe(&self) -> String;
}

#[derive(Default)]
struct Lane {
    bytes: VecDeque<u8>,
    closed: bool,
}

struct LaneShared {
    lane: Mutex<Lane>,
    ready: Condvar,
}

impl LaneShared {
    fn new() -> Arc<Self> {
        Arc::new(LaneShared {
            lane: Mutex::new(Lane::default()),
            ready: Condvar::new(),
        })
    }

    fn close(&self) {
        self.lane.lock().unwrap().closed = true;
        self.ready.notify_all();
    }
}

/// One end of an in-memory duplex byte pipe.
pub struct PipeEnd {
    incoming: Arc<LaneShared>,
    outgoing: Arc<LaneShared>,
}

/// Create a connected pair of pipe ends. Dropping or closing either end
/// makes the other observe [`TransportError::Closed`] once drained.
pub fn pipe() -> (PipeEnd, PipeEnd) {
    let a = LaneShared::new();
    let b = LaneShared::new();
    (
        PipeEnd {
            incoming: a.clone(),
            outgoing: b.clone(),
        },
        PipeEnd {
            incoming: b,
            outgoing: a,
        },
    )
}

impl PipeEnd {
    pub fn close(&self) {
        self.outgoing.close();
        self.incoming.close();
    }
}

impl Drop for PipeEnd {
    fn drop(&mut self) {
        self.close();
    }
}

impl Transport for PipeEnd {
    fn send(&mut self, bytes: &[u8]) -> Result<(), TransportError> {
        let mut lane = self.outgoing.lane.lock().unwrap();
        if lane.closed {
            return Err(TransportError::Closed);
        }
        lane.bytes.extend(bytes);
        drop(lane);
        self.outgoing.ready.notify_all();
        Ok(())
    }

    fn recv(&mut self, buf: &mut Vec<u8>, timeout: Duration) -> Result<usize, TransportError> {
        let deadline = Instant::now() + timeout;
        let mut lane = self.incoming.lane.lock().unwrap();
        loop {
            if !lane.bytes.is_empty() {
                let n = lane.bytes.len();
                buf.extend(lane.bytes.drain(..));
                return Ok(n);
            }
            if lane.closed {
                return Err(TransportError::Closed);
            }
            let now = Instant::now();
            if now >= deadline {
                return Ok(0);
            }
            lane = self.incoming.ready.wait_timeout(lane, deadline - now).unwrap().0;
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn pipe_is_duplex() {
        let (mut a, mut b) = pipe();
        a.send(b"bv").unwrap();
        b.send(&[0xA0]).unwrap();
        let mut buf = Vec::new();
        assert_eq!(b.recv(&mut buf, Duration::from_millis(10)).unwrap(), 2);
        assert_eq!(buf, b"bv");
        buf.clear();
        assert_eq!(a.recv(&mut buf, Duration::from_millis(10)).unwrap(), 1);
        assert_eq!(a.recv(&mut buf, Duration::from_millis(1)).unwrap(), 0);
    }

    #[test]
    fn closing_one_end_is_seen_by_the_other() {
        let (mut a, b) = pipe();
        drop(b);
        let mut buf = Vec::new();
        assert!(matches!(a.recv(&mut buf, Duration::from_millis(1)), Err(TransportError::Closed)));
        assert!(matches!(a.send(b"s"), Err(TransportError::Closed)));
    }

    #[test]
    fn recv_wakes_on_data_from_another_thread() {
        let (mut a, mut b) = pipe();
        let t = std::thread::spawn(move || {
            std::thread::sleep(Duration::from_millis(20));
            b.send(b"x").unwrap();
            b
        });
        let mut buf = Vec::new();
        assert_eq!(a.recv(&mut buf, Duration::from_secs(5)).unwrap(), 1);
        t.join().unwrap();
    }
}
