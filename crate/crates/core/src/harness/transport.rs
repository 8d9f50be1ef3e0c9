//! Length-prefixed, versioned frames between terminals and the edge.
//!
//! Frame layout (little-endian): `len: u32` (bytes after this field),
//! `version: u8`, `kind: u8`, `seq: u64`, then a JSON payload. Each direction
//! numbers its frames from 0. A receiver drops a frame it has already seen and
//! rejects a frame that skips ahead.

use std::io::{ErrorKind, Read, Write};
use std::net::TcpStream;
use std::sync::mpsc::{self, Receiver, RecvTimeoutError, Sender};
use std::time::Duration;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::fusion::RiskVector;
use crate::tracegen::sensing::SENSING_FIELDS;

pub const FRAME_VERSION: u8 = 1;
const HEADER_LEN: usize = 1 + 1 + 8;
pub const MAX_FRAME_LEN: usize = 16 << 20;
/// Extra waits after the first receive timeout before giving up.
pub const MAX_RETRIES: usize = 3;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct NoisyRecord {
    pub terminal: u32,
    pub round: u32,
    pub eps: f64,
    pub risk: RiskVector,
    pub r_risk: f64,
    /// Index of the first row in the terminal's sensing stream.
    pub first_row: u64,
    pub rows: Vec<[f64; SENSING_FIELDS]>,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Feedback {
    pub alpha: f64,
    pub beta: f64,
    pub mia_auc: f64,
    pub privacy_strength: f64,
    pub pia_advantage: f64,
    pub f1: f64,
    pub clean_f1: f64,
    pub relative_utility: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "type", rename_all = "snake_case")]
pub enum Message {
    Hello { terminal: u32 },
    Task { terminal: u32, round: u32 },
    Record(NoisyRecord),
    Ack { terminal: u32, round: u32, feedback: Option<Feedback> },
    Echo { payload: Vec<u8> },
    Shutdown,
}

impl Message {
    pub fn kind(&self) -> u8 {
        match self {
            Message::Hello { .. } => 0,
            Message::Task { .. } => 1,
            Message::Record(_) => 2,
            Message::Ack { .. } => 3,
            Message::Echo { .. } => 4,
            Message::Shutdown => 5,
        }
    }
}

pub fn encode_frame(seq: u64, msg: &Message) -> Result<Vec<u8>> {
    let payload = serde_json::to_vec(msg)?;
    let len = HEADER_LEN + payload.len();
    if len > MAX_FRAME_LEN {
        return Err(Error::Protocol(format!("frame of {len} bytes exceeds the limit")));
    }
    let mut out = Vec::with_capacity(4 + len);
    out.extend_from_slice(&(len as u32).to_le_bytes());
    out.push(FRAME_VERSION);
    out.push(msg.kind());
    out.extend_from_slice(&seq.to_le_bytes());
    out.extend_from_slice(&payload);
    Ok(out)
}

pub fn decode_frame(frame: &[u8]) -> Result<(u64, Message)> {
    if frame.len() < 4 + HEADER_LEN {
        return Err(Error::Protocol(format!("frame of {} bytes is truncated", frame.len())));
    }
    let len = u32::from_le_bytes(frame[..4].try_into().expect("4 bytes")) as usize;
    if len != frame.len() - 4 {
        return Err(Error::Protocol(format!(
            "length prefix {len} disagrees with {} body bytes",
            frame.len() - 4
        )));
    }
    if frame[4] != FRAME_VERSION {
        return Err(Error::Protocol(format!("unsupported frame version {}", frame[4])));
    }
    let kind = frame[5];
    let seq = u64::from_le_bytes(frame[6..14].try_into().expect("8 bytes"));
    let msg: Message = serde_json::from_slice(&frame[14..])
        .map_err(|e| Error::Protocol(format!("malformed payload: {e}")))?;
    if msg.kind() != kind {
        return Err(Error::Protocol(format!(
            "frame kind {kind} does not match payload kind {}",
            msg.kind()
        )));
    }
    Ok((seq, msg))
}

/// Reads one whole frame from a byte stream; `None` at a clean end of stream.
pub fn read_frame<R: Read>(r: &mut R) -> Result<Option<Vec<u8>>> {
    let mut prefix = [0u8; 4];
    match r.read_exact(&mut prefix) {
        Ok(()) => {}
        Err(e) if e.kind() == ErrorKind::UnexpectedEof => return Ok(None),
        Err(e) => return Err(e.into()),
    }
    let len = u32::from_le_bytes(prefix) as usize;
    if !(HEADER_LEN..=MAX_FRAME_LEN).contains(&len) {
        return Err(Error::Protocol(format!("invalid frame length {len}")));
    }
    let mut frame = vec![0u8; 4 + len];
    frame[..4].copy_from_slice(&prefix);
    r.read_exact(&mut frame[4..])?;
    Ok(Some(frame))
}

/// Inbound sequence check for one direction of one session.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq)]
pub struct SeqWindow {
    expected: u64,
}

impl SeqWindow {
    /// `Ok(true)` for the next frame, `Ok(false)` for a duplicate.
    pub fn accept(&mut self, seq: u64) -> Result<bool> {
        if seq < self.expected {
            return Ok(false);
        }
        if seq > self.expected {
            return Err(Error::Protocol(format!(
                "out-of-order frame: got sequence {seq}, expected {}",
                self.expected
            )));
        }
        self.expected += 1;
        Ok(true)
    }

    pub fn expected(&self) -> u64 {
        self.expected
    }
}

#[derive(Debug)]
enum Sink {
    Channel(Sender<Vec<u8>>),
    Stream(TcpStream),
}

/// One side of a session: sends numbered frames, receives and checks them.
#[derive(Debug)]
pub struct Endpoint {
    sink: Sink,
    source: Receiver<Vec<u8>>,
    next_seq: u64,
    window: SeqWindow,
    timeout: Duration,
    sent: u64,
    received: u64,
    duplicates: u64,
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct LinkStats {
    pub sent: u64,
    pub received: u64,
    pub duplicates: u64,
}

impl Endpoint {
    fn new(sink: Sink, source: Receiver<Vec<u8>>, timeout: Duration) -> Self {
        Self {
            sink,
            source,
            next_seq: 0,
            window: SeqWindow::default(),
            timeout,
            sent: 0,
            received: 0,
            duplicates: 0,
        }
    }

    /// Two connected in-process endpoints.
    pub fn pair(timeout: Duration) -> (Self, Self) {
        let (a_tx, a_rx) = mpsc::channel();
        let (b_tx, b_rx) = mpsc::channel();
        (
            Self::new(Sink::Channel(a_tx), b_rx, timeout),
            Self::new(Sink::Channel(b_tx), a_rx, timeout),
        )
    }

    /// Wraps a connected socket. A pump thread turns the byte stream into
    /// whole frames so timeouts never split a frame.
    pub fn from_stream(stream: TcpStream, timeout: Duration) -> Result<Self> {
        stream.set_nodelay(true)?;
        let mut reader = stream.try_clone()?;
        let (tx, rx) = mpsc::channel();
        std::thread::spawn(move || {
            while let Ok(Some(frame)) = read_frame(&mut reader) {
                if tx.send(frame).is_err() {
                    break;
                }
            }
        });
        Ok(Self::new(Sink::Stream(stream), rx, timeout))
    }

    pub fn send(&mut self, msg: &Message) -> Result<u64> {
        let seq = self.next_seq;
        let frame = encode_frame(seq, msg)?;
        self.send_raw(&frame)?;
        self.next_seq += 1;
        Ok(seq)
    }

    /// Sends pre-encoded bytes without touching the sequence counter.
    pub fn send_raw(&mut self, frame: &[u8]) -> Result<()> {
        match &mut self.sink {
            Sink::Channel(tx) => tx.send(frame.to_vec()).map_err(|_| Error::Transport {
                attempts: 1,
                reason: "peer hung up".into(),
            })?,
            Sink::Stream(s) => s.write_all(frame)?,
        }
        self.sent += 1;
        Ok(())
    }

    /// Next in-order message. Duplicates are dropped; a receive timeout is
    /// retried up to [`MAX_RETRIES`] times before failing.
    pub fn recv(&mut self) -> Result<Message> {
        let mut timeouts = 0;
        loop {
            match self.source.recv_timeout(self.timeout) {
                Ok(frame) => {
                    let (seq, msg) = decode_frame(&frame)?;
                    if self.window.accept(seq)? {
                        self.received += 1;
                        return Ok(msg);
                    }
                    self.duplicates += 1;
                }
                Err(RecvTimeoutError::Timeout) => {
                    timeouts += 1;
                    if timeouts > MAX_RETRIES {
                        return Err(Error::Transport {
                            attempts: timeouts,
                            reason: format!("no frame within {:?}", self.timeout),
                        });
                    }
                    log::warn!("receive timed out, retry {timeouts} of {MAX_RETRIES}");
                }
                Err(RecvTimeoutError::Disconnected) => {
                    return Err(Error::Transport {
                        attempts: timeouts + 1,
                        reason: "peer hung up".into(),
                    })
                }
            }
        }
    }

    pub fn stats(&self) -> LinkStats {
        LinkStats {
            sent: self.sent,
            received: self.received,
            duplicates: self.duplicates,
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn echo_round_trip_is_byte_identical() {
        let (mut a, mut b) = Endpoint::pair(Duration::from_secs(1));
        let payload: Vec<u8> = (0..=255).collect();
        a.send(&Message::Echo { payload: payload.clone() }).unwrap();
        let Message::Echo { payload: got } = b.recv().unwrap() else {
            panic!("wrong kind")
        };
        b.send(&Message::Echo { payload: got }).unwrap();
        assert_eq!(a.recv().unwrap(), Message::Echo { payload });
    }

    #[test]
    fn duplicates_dropped_and_gaps_rejected() {
        let (mut a, mut b) = Endpoint::pair(Duration::from_millis(50));
        let f0 = encode_frame(0, &Message::Shutdown).unwrap();
        a.send_raw(&f0).unwrap();
        a.send_raw(&f0).unwrap();
        a.send_raw(&encode_frame(1, &Message::Hello { terminal: 2 }).unwrap()).unwrap();
        assert_eq!(b.recv().unwrap(), Message::Shutdown);
        assert_eq!(b.recv().unwrap(), Message::Hello { terminal: 2 });
        assert_eq!(b.stats().duplicates, 1);
        a.send_raw(&encode_frame(5, &Message::Shutdown).unwrap()).unwrap();
        assert!(matches!(b.recv(), Err(Error::Protocol(_))));
    }

    #[test]
    fn malformed_frames_are_protocol_errors() {
        let good = encode_frame(0, &Message::Shutdown).unwrap();
        let mut wrong_kind = good.clone();
        wrong_kind[5] = 1;
        let mut wrong_version = good.clone();
        wrong_version[4] = 9;
        for bad in [&good[..6], &wrong_kind[..], &wrong_version[..], &good[..good.len() - 1]] {
            assert!(matches!(decode_frame(bad), Err(Error::Protocol(_))));
        }
    }

    #[test]
    fn timeout_retries_then_fails() {
        let (_a, mut b) = Endpoint::pair(Duration::from_millis(5));
        match b.recv() {
            Err(Error::Transport { attempts, .. }) => assert_eq!(attempts, MAX_RETRIES + 1),
            other => panic!("{other:?}"),
        }
    }
}
