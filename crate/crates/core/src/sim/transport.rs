//! Byte sinks the simulated node writes frames to.

use std::fs::{File, OpenOptions};
use std::io::Write;
use std::net::{SocketAddr, TcpStream, ToSocketAddrs};
use std::path::Path;
use std::time::{Duration, Instant};

use thiserror::Error;

use crate::domain::Millis;

#[derive(Debug, Error)]
pub enum TransportError {
    #[error("transport i/o: {0}")]
    Io(#[from] std::io::Error),
    #[error("cannot resolve {0}")]
    Resolve(String),
    #[error("gave up after {attempts} attempts: {last}")]
    Exhausted { attempts: u32, last: std::io::Error },
}

pub trait TransportSink {
    /// `at_ms` is the virtual time of the chunk from the start of the run.
    fn send(&mut self, at_ms: Millis, bytes: &[u8]) -> Result<(), TransportError>;

    fn flush(&mut self) -> Result<(), TransportError> {
        Ok(())
    }
}

impl TransportSink for Vec<u8> {
    fn send(&mut self, _at_ms: Millis, bytes: &[u8]) -> Result<(), TransportError> {
        self.extend_from_slice(bytes);
        Ok(())
    }
}

impl<T: TransportSink + ?Sized> TransportSink for &mut T {
    fn send(&mut self, at_ms: Millis, bytes: &[u8]) -> Result<(), TransportError> {
        (**self).send(at_ms, bytes)
    }

    fn flush(&mut self) -> Result<(), TransportError> {
        (**self).flush()
    }
}

/// Appends every chunk to a file.
pub struct FileSink {
    file: File,
}

impl FileSink {
    pub fn append(path: &Path) -> Result<FileSink, TransportError> {
        let file = OpenOptions::new().create(true).append(true).open(path)?;
        Ok(FileSink { file })
    }
}

impl TransportSink for FileSink {
    fn send(&mut self, _at_ms: Millis, bytes: &[u8]) -> Result<(), TransportError> {
        self.file.write_all(bytes)?;
        Ok(())
    }

    fn flush(&mut self) -> Result<(), TransportError> {
        self.file.flush()?;
        self.file.sync_data()?;
        Ok(())
    }
}

#[derive(Debug, Clone, Copy)]
pub struct RetryPolicy {
    pub attempts: u32,
    pub initial_backoff: Duration,
}

impl Default for RetryPolicy {
    fn default() -> Self {
        RetryPolicy {
            attempts: 5,
            initial_backoff: Duration::from_millis(100),
        }
    }
}

/// Stream socket to a gateway. With a speed factor, each chunk waits until
/// `at_ms / speed` of wall time has passed since the first send.
pub struct TcpSink {
    addr: SocketAddr,
    stream: Option<TcpStream>,
    speed: Option<f64>,
    started: Option<Instant>,
    retry: RetryPolicy,
    reconnects: u32,
}

impl TcpSink {
    pub fn connect(addr: &str, speed: Option<f64>, retry: RetryPolicy) -> Result<TcpSink, TransportError> {
        let addr = addr
            .to_socket_addrs()
            .map_err(|_| TransportError::Resolve(addr.to_string()))?
            .next()
            .ok_or_else(|| TransportError::Resolve(addr.to_string()))?;
        let mut sink = TcpSink {
            addr,
            stream: None,
            speed: speed.filter(|s| *s > 0.0),
            started: None,
            retry,
            reconnects: 0,
        };
        sink.ensure_connected()?;
        Ok(sink)
    }

    /// Reconnections made after the initial connect.
    pub fn reconnects(&self) -> u32 {
        self.reconnects
    }

    fn ensure_connected(&mut self) -> Result<&mut TcpStream, TransportError> {
        if self.stream.is_none() {
            let mut backoff = self.retry.initial_backoff;
            let mut last = None;
            for attempt in 0..self.retry.attempts.max(1) {
                if attempt > 0 {
                    std::thread::sleep(backoff);
                    backoff *= 2;
                }
                match TcpStream::connect_timeout(&self.addr, Duration::from_secs(2)) {
                    Ok(stream) => {
                        stream.set_nodelay(true).ok();
                        self.stream = Some(stream);
                        last = None;
                        break;
                    }
                    Err(e) => last = Some(e),
                }
            }
            if let Some(last) = last {
                return Err(TransportError::Exhausted {
                    attempts: self.retry.attempts.max(1),
                    last,
                });
            }
        }
        Ok(self.stream.as_mut().expect("connected above"))
    }

    fn pace(&mut self, at_ms: Millis) {
        let Some(speed) = self.speed else { return };
        let started = *self.started.get_or_insert_with(Instant::now);
        let due = started + Duration::from_secs_f64(at_ms.max(0) as f64 / 1000.0 / speed);
        let now = Instant::now();
        if due > now {
            std::thread::sleep(due - now);
        }
    }
}

impl TransportSink for TcpSink {
    fn send(&mut self, at_ms: Millis, bytes: &[u8]) -> Result<(), TransportError> {
        self.pace(at_ms);
        let mut failures = 0;
        loop {
            let stream = self.ensure_connected()?;
            match stream.write_all(bytes) {
                Ok(()) => return Ok(()),
                Err(e) => {
                    self.stream = None;
                    failures += 1;
                    if failures >= self.retry.attempts.max(1) {
                        return Err(TransportError::Exhausted {
                            attempts: failures,
                            last: e,
                        });
                    }
                    self.reconnects += 1;
                }
            }
        }
    }

    fn flush(&mut self) -> Result<(), TransportError> {
        if let Some(stream) = self.stream.as_mut() {
            stream.flush()?;
        }
        Ok(())
    }
}
