//! Serial port and pseudo-terminal transports on top of raw termios.

use cyton_core::transport::{Connector, Transport, TransportError};
use std::ffi::{CStr, CString};
use std::io;
use std::os::fd::{AsRawFd, FromRawFd, OwnedFd, RawFd};
use std::os::unix::ffi::OsStrExt;
use std::path::{Path, PathBuf};
use std::time::{Duration, Instant};

pub const CYTON_BAUD: u32 = 115_200;

fn cvt(ret: libc::c_int) -> io::Result<libc::c_int> {
    if ret < 0 {
        Err(io::Error::last_os_error())
    } else {
        Ok(ret)
    }
}

fn baud_constant(baud: u32) -> io::Result<libc::speed_t> {
    Ok(match baud {
        9600 => libc::B9600,
        19200 => libc::B19200,
        38400 => libc::B38400,
        57600 => libc::B57600,
        115_200 => libc::B115200,
        230_400 => libc::B230400,
        _ => return Err(io::Error::new(io::ErrorKind::InvalidInput, format!("unsupported baud rate {baud}"))),
    })
}

/// Raw 8N1 mode, non-blocking reads handled by `poll`.
fn make_raw(fd: RawFd, baud: Option<u32>) -> io::Result<()> {
    // SAFETY: termios is plain data and `fd` is an open descriptor.
    unsafe {
        let mut t: libc::termios = std::mem::zeroed();
        cvt(libc::tcgetattr(fd, &mut t))?;
        libc::cfmakeraw(&mut t);
        t.c_cflag |= libc::CLOCAL | libc::CREAD;
        t.c_cc[libc::VMIN] = 0;
        t.c_cc[libc::VTIME] = 0;
        if let Some(baud) = baud {
            let speed = baud_constant(baud)?;
            cvt(libc::cfsetispeed(&mut t, speed))?;
            cvt(libc::cfsetospeed(&mut t, speed))?;
        }
        cvt(libc::tcsetattr(fd, libc::TCSANOW, &t))?;
    }
    Ok(())
}

fn open_path(path: &Path) -> io::Result<OwnedFd> {
    let c = CString::new(path.as_os_str().as_bytes()).map_err(|_| io::Error::from(io::ErrorKind::InvalidInput))?;
    // SAFETY: valid C string; the returned descriptor is owned below.
    let fd = cvt(unsafe { libc::open(c.as_ptr(), libc::O_RDWR | libc::O_NOCTTY | libc::O_NONBLOCK | libc::O_CLOEXEC) })?;
    Ok(unsafe { OwnedFd::from_raw_fd(fd) })
}

/// Wait until `fd` is ready for `events`. False on timeout.
fn wait(fd: RawFd, events: libc::c_short, timeout: Duration) -> io::Result<bool> {
    let mut p = libc::pollfd { fd, events, revents: 0 };
    let ms = timeout.as_millis().min(i32::MAX as u128) as libc::c_int;
    loop {
        // SAFETY: one valid pollfd.
        let n = unsafe { libc::poll(&mut p, 1, ms) };
        if n < 0 {
            let e = io::Error::last_os_error();
            if e.kind() == io::ErrorKind::Interrupted {
                continue;
            }
            return Err(e);
        }
        if n > 0 && p.revents & (libc::POLLERR | libc::POLLNVAL) != 0 {
            return Err(io::Error::from(io::ErrorKind::BrokenPipe));
        }
        return Ok(n > 0);
    }
}

/// A byte transport over a terminal file descriptor.
pub struct FdTransport {
    fd: OwnedFd,
}

impl FdTransport {
    pub fn from_fd(fd: OwnedFd) -> Self {
        FdTransport { fd }
    }
}

fn closed_or(e: io::Error) -> TransportError {
    match e.raw_os_error() {
        Some(libc::EIO) | Some(libc::ENXIO) | Some(libc::ENODEV) | Some(libc::EPIPE) => TransportError::Closed,
        _ if e.kind() == io::ErrorKind::BrokenPipe => TransportError::Closed,
        _ => TransportError::Io(e),
    }
}

impl Transport for FdTransport {
    fn send(&mut self, mut bytes: &[u8]) -> Result<(), TransportError> {
        let deadline = Instant::now() + Duration::from_secs(1);
        while !bytes.is_empty() {
            // SAFETY: pointer and length come from a live slice.
            let n = unsafe { libc::write(self.fd.as_raw_fd(), bytes.as_ptr().cast(), bytes.len()) };
            if n >= 0 {
                bytes = &bytes[n as usize..];
                continue;
            }
            let e = io::Error::last_os_error();
            match e.kind() {
                io::ErrorKind::Interrupted => {}
                io::ErrorKind::WouldBlock => {
                    let left = deadline.saturating_duration_since(Instant::now());
                    if left.is_zero() || !wait(self.fd.as_raw_fd(), libc::POLLOUT, left).map_err(closed_or)? {
                        return Err(TransportError::Io(io::Error::from(io::ErrorKind::TimedOut)));
                    }
                }
                _ => return Err(closed_or(e)),
            }
        }
        Ok(())
    }

    fn recv(&mut self, buf: &mut Vec<u8>, timeout: Duration) -> Result<usize, TransportError> {
        if !wait(self.fd.as_raw_fd(), libc::POLLIN, timeout).map_err(closed_or)? {
            return Ok(0);
        }
        let mut total = 0;
        let mut chunk = [0u8; 4096];
        loop {
            // SAFETY: writes at most `chunk.len()` bytes into `chunk`.
            let n = unsafe { libc::read(self.fd.as_raw_fd(), chunk.as_mut_ptr().cast(), chunk.len()) };
            if n > 0 {
                buf.extend_from_slice(&chunk[..n as usize]);
                total += n as usize;
                if (n as usize) < chunk.len() {
                    return Ok(total);
                }
                continue;
            }
            if n == 0 {
                // readable but empty: the other side hung up
                return if total > 0 { Ok(total) } else { Err(TransportError::Closed) };
            }
            let e = io::Error::last_os_error();
            match e.kind() {
                io::ErrorKind::Interrupted => {}
                io::ErrorKind::WouldBlock => return Ok(total),
                _ if total > 0 => return Ok(total),
                _ => return Err(closed_or(e)),
            }
        }
    }
}

/// Opens a serial device (or the slave side of a pseudo-terminal) at the
/// Cyton's 115200 baud.
pub struct SerialConnector {
    path: PathBuf,
    baud: u32,
}

impl SerialConnector {
    pub fn new(path: impl Into<PathBuf>) -> Self {
        SerialConnector {
            path: path.into(),
            baud: CYTON_BAUD,
        }
    }
}

impl Connector for SerialConnector {
    fn connect(&mut self) -> Result<Box<dyn Transport>, TransportError> {
        let unavailable = |e: io::Error| TransportError::Unavailable(format!("{}: {e}", self.path.display()));
        let fd = open_path(&self.path).map_err(unavailable)?;
        make_raw(fd.as_raw_fd(), Some(self.baud)).map_err(unavailable)?;
        // drop whatever the line buffered before we arrived
        // SAFETY: valid descriptor.
        unsafe { libc::tcflush(fd.as_raw_fd(), libc::TCIOFLUSH) };
        Ok(Box::new(FdTransport::from_fd(fd)))
    }

    fn describe(&self) -> String {
        format!("serial:{}", self.path.display())
    }
}

/// A pseudo-terminal: the master end as a transport and the slave's path.
/// The slave is held open so that the master survives clients coming and
/// going.
pub struct Pty {
    pub master: FdTransport,
    pub slave_path: PathBuf,
    _slave: OwnedFd,
}

pub fn open_pty() -> io::Result<Pty> {
    // SAFETY: standard posix_openpt sequence; descriptors are owned below.
    unsafe {
        let m = cvt(libc::posix_openpt(libc::O_RDWR | libc::O_NOCTTY | libc::O_CLOEXEC))?;
        let master = OwnedFd::from_raw_fd(m);
        cvt(libc::grantpt(m))?;
        cvt(libc::unlockpt(m))?;
        let mut name = [0 as libc::c_char; 128];
        let r = libc::ptsname_r(m, name.as_mut_ptr(), name.len());
        if r != 0 {
            return Err(io::Error::from_raw_os_error(r));
        }
        let slave_path = PathBuf::from(std::ffi::OsStr::from_bytes(CStr::from_ptr(name.as_ptr()).to_bytes()));
        let slave = open_path(&slave_path)?;
        make_raw(slave.as_raw_fd(), None)?;
        make_raw(m, None)?;
        let flags = cvt(libc::fcntl(m, libc::F_GETFL))?;
        cvt(libc::fcntl(m, libc::F_SETFL, flags | libc::O_NONBLOCK))?;
        Ok(Pty {
            master: FdTransport::from_fd(master),
            slave_path,
            _slave: slave,
        })
    }
}
