//! Participant UI wire protocol.
//!
//! Each message is a frame: a 4-byte big-endian payload length followed by
//! that many bytes of UTF-8 JSON. Every payload is an object with a `type`
//! field. `show` carries only the gap directions to draw, never whether
//! the display contains the target.

use std::io::{self, Read, Write};
use std::net::TcpStream;
use std::sync::mpsc::{self, Receiver, RecvTimeoutError, TryRecvError};
use std::time::Duration;

use serde::{Deserialize, Serialize};

use super::clock::Clock;
use super::{ParticipantPort, PortError};
use crate::protocol::{GapDirection, HandCondition, StimulusCondition};

/// Largest accepted frame payload.
pub const MAX_FRAME: usize = 64 * 1024;

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "type", rename_all = "snake_case", deny_unknown_fields)]
pub enum ServerMessage {
    Cue {
        direction: GapDirection,
        hand: HandCondition,
        condition: StimulusCondition,
    },
    Show {
        directions: Vec<GapDirection>,
    },
    Clear,
    Rest {
        duration_s: u32,
    },
    End {
        aborted: bool,
    },
    /// Reply to the first leg of a clock-sync exchange.
    Sync {
        t0: i64,
        t1: i64,
        t2: i64,
    },
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "type", rename_all = "snake_case", deny_unknown_fields)]
pub enum ClientMessage {
    Ready,
    Response {
        client_t_us: i64,
        hand: HandCondition,
    },
    /// `t0` alone opens an exchange; all four timestamps close it.
    Sync {
        t0: i64,
        #[serde(default, skip_serializing_if = "Option::is_none")]
        t1: Option<i64>,
        #[serde(default, skip_serializing_if = "Option::is_none")]
        t2: Option<i64>,
        #[serde(default, skip_serializing_if = "Option::is_none")]
        t3: Option<i64>,
    },
}

pub fn encode<T: Serialize>(msg: &T) -> Vec<u8> {
    let body = serde_json::to_vec(msg).expect("wire messages serialize");
    let mut frame = Vec::with_capacity(body.len() + 4);
    frame.extend_from_slice(&(body.len() as u32).to_be_bytes());
    frame.extend_from_slice(&body);
    frame
}

pub fn write_frame<T: Serialize>(w: &mut impl Write, msg: &T) -> io::Result<()> {
    w.write_all(&encode(msg))?;
    w.flush()
}

/// Read one frame. `Ok(None)` on clean end of stream at a frame boundary.
pub fn read_frame<T: for<'de> Deserialize<'de>>(r: &mut impl Read) -> io::Result<Option<T>> {
    let mut len = [0u8; 4];
    match r.read_exact(&mut len) {
        Ok(()) => {}
        Err(e) if e.kind() == io::ErrorKind::UnexpectedEof => return Ok(None),
        Err(e) => return Err(e),
    }
    let len = u32::from_be_bytes(len) as usize;
    if len > MAX_FRAME {
        return Err(io::Error::new(io::ErrorKind::InvalidData, format!("frame of {len} bytes")));
    }
    let mut body = vec![0u8; len];
    r.read_exact(&mut body)?;
    serde_json::from_slice(&body)
        .map(Some)
        .map_err(|e| io::Error::new(io::ErrorKind::InvalidData, e))
}

/// Server side of a TCP connection. A reader thread forwards client
/// messages, in arrival order, over a channel to the session task.
pub struct TcpPort {
    writer: TcpStream,
    rx: Receiver<ClientMessage>,
}

impl TcpPort {
    pub fn new(stream: TcpStream) -> io::Result<Self> {
        stream.set_nodelay(true)?;
        let mut reader = stream.try_clone()?;
        let (tx, rx) = mpsc::channel();
        std::thread::spawn(move || {
            while let Ok(Some(msg)) = read_frame::<ClientMessage>(&mut reader) {
                if tx.send(msg).is_err() {
                    break;
                }
            }
        });
        Ok(Self { writer: stream, rx })
    }
}

impl ParticipantPort for TcpPort {
    fn send(&mut self, msg: &ServerMessage, _t_us: i64) -> Result<(), PortError> {
        write_frame(&mut self.writer, msg).map_err(|_| PortError::Disconnected)
    }

    fn recv_until(
        &mut self,
        clock: &mut dyn Clock,
        deadline_us: Option<i64>,
    ) -> Result<Option<ClientMessage>, PortError> {
        const SPIN_US: i64 = 1_500;
        let Some(deadline) = deadline_us else {
            return self.rx.recv().map(Some).map_err(|_| PortError::Disconnected);
        };
        let coarse = deadline - SPIN_US - clock.now_us();
        if coarse > 0 {
            match self.rx.recv_timeout(Duration::from_micros(coarse as u64)) {
                Ok(m) => return Ok(Some(m)),
                Err(RecvTimeoutError::Timeout) => {}
                Err(RecvTimeoutError::Disconnected) => return Err(PortError::Disconnected),
            }
        }
        loop {
            match self.rx.try_recv() {
                Ok(m) => return Ok(Some(m)),
                Err(TryRecvError::Disconnected) => return Err(PortError::Disconnected),
                Err(TryRecvError::Empty) => {}
            }
            if clock.now_us() >= deadline {
                return Ok(None);
            }
            std::hint::spin_loop();
        }
    }
}

/// Minimal blocking client, enough to drive a session headlessly.
pub struct WireClient {
    stream: TcpStream,
}

impl WireClient {
    pub fn connect(addr: impl std::net::ToSocketAddrs) -> io::Result<Self> {
        let stream = TcpStream::connect(addr)?;
        stream.set_nodelay(true)?;
        Ok(Self { stream })
    }

    pub fn send(&mut self, msg: &ClientMessage) -> io::Result<()> {
        write_frame(&mut self.stream, msg)
    }

    pub fn recv(&mut self) -> io::Result<Option<ServerMessage>> {
        read_frame(&mut self.stream)
    }

    pub fn set_read_timeout(&self, d: Option<Duration>) -> io::Result<()> {
        self.stream.set_read_timeout(d)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn show_payload_has_no_target_field() {
        let msg = ServerMessage::Show {
            directions: vec![GapDirection::new(1).unwrap(), GapDirection::new(6).unwrap()],
        };
        let frame = encode(&msg);
        let body = std::str::from_utf8(&frame[4..]).unwrap();
        assert_eq!(body, r#"{"type":"show","directions":[1,6]}"#);
        assert_eq!(u32::from_be_bytes(frame[..4].try_into().unwrap()) as usize, body.len());
    }

    #[test]
    fn frames_round_trip() {
        let msgs = vec![
            ClientMessage::Ready,
            ClientMessage::Response {
                client_t_us: 42,
                hand: HandCondition::Right,
            },
            ClientMessage::Sync {
                t0: 1,
                t1: None,
                t2: None,
                t3: None,
            },
            ClientMessage::Sync {
                t0: 1,
                t1: Some(2),
                t2: Some(3),
                t3: Some(4),
            },
        ];
        let mut buf = Vec::new();
        for m in &msgs {
            write_frame(&mut buf, m).unwrap();
        }
        let mut r = io::Cursor::new(buf);
        let mut back = Vec::new();
        while let Some(m) = read_frame::<ClientMessage>(&mut r).unwrap() {
            back.push(m);
        }
        assert_eq!(back, msgs);
    }

    #[test]
    fn oversized_frame_rejected() {
        let mut buf = ((MAX_FRAME + 1) as u32).to_be_bytes().to_vec();
        buf.extend(std::iter::repeat(b' ').take(8));
        let err = read_frame::<ClientMessage>(&mut io::Cursor::new(buf)).unwrap_err();
        assert_eq!(err.kind(), io::ErrorKind::InvalidData);
    }

    #[test]
    fn client_sync_first_leg_omits_missing_fields() {
        let s = serde_json::to_string(&ClientMessage::Sync {
            t0: 7,
            t1: None,
            t2: None,
            t3: None,
        })
        .unwrap();
        assert_eq!(s, r#"{"type":"sync","t0":7}"#);
    }
}
