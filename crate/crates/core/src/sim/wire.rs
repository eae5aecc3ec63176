//! Links between simulated peers.
//!
//! Both transports carry the same encoded frames and decode them with the
//! same [`FrameDecoder`]. In-process links hand the bytes over directly;
//! socket links write them into a real loopback TCP connection when sent and
//! read them back out when the scripted clock reaches the delivery time.

use std::io::{self, Read, Write};
use std::net::{TcpListener, TcpStream};

use crate::protocol::{encode_frame, FrameDecoder, Message, ProtocolError};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Transport {
    InProcess,
    Sockets,
}

impl Transport {
    pub fn as_str(self) -> &'static str {
        match self {
            Transport::InProcess => "in-process",
            Transport::Sockets => "sockets",
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord)]
pub enum Dir {
    ToServer,
    ToClient,
}

/// What travels in the event queue for one frame.
#[derive(Debug, Clone, PartialEq, Eq)]
pub enum InFlight {
    Bytes(Vec<u8>),
    /// Length of a frame already written to the socket.
    Written(usize),
}

#[derive(Debug)]
enum Pipe {
    InProcess,
    Socket {
        client: TcpStream,
        server: TcpStream,
    },
}

/// One connection between a client (edge or owner) and the server.
#[derive(Debug)]
pub struct Link {
    pipe: Pipe,
    to_server: FrameDecoder,
    to_client: FrameDecoder,
    /// Latest scheduled delivery per direction; keeps frames in order.
    horizon: [u64; 2],
}

#[derive(Debug, thiserror::Error)]
pub enum WireError {
    #[error("socket: {0}")]
    Io(#[from] io::Error),
    #[error("frame: {0}")]
    Protocol(#[from] ProtocolError),
}

impl Link {
    pub fn open(transport: Transport, listener: Option<&TcpListener>) -> Result<Link, WireError> {
        let pipe = match transport {
            Transport::InProcess => Pipe::InProcess,
            Transport::Sockets => {
                let listener = listener.expect("socket transport needs a listener");
                let client = TcpStream::connect(listener.local_addr()?)?;
                let (server, _) = listener.accept()?;
                client.set_nodelay(true)?;
                server.set_nodelay(true)?;
                Pipe::Socket { client, server }
            }
        };
        Ok(Link {
            pipe,
            to_server: FrameDecoder::new(),
            to_client: FrameDecoder::new(),
            horizon: [0, 0],
        })
    }

    /// Delivery time for a frame sent at `now` with `delay_ms`, never earlier
    /// than the previous frame in the same direction.
    pub fn schedule(&mut self, dir: Dir, now: u64, delay_ms: u64) -> u64 {
        let slot = &mut self.horizon[dir as usize];
        *slot = (*slot).max(now + delay_ms);
        *slot
    }

    pub fn send(&mut self, dir: Dir, message: &Message) -> Result<InFlight, WireError> {
        let frame = encode_frame(message)?;
        match &mut self.pipe {
            Pipe::InProcess => Ok(InFlight::Bytes(frame)),
            Pipe::Socket { client, server } => {
                let stream = match dir {
                    Dir::ToServer => client,
                    Dir::ToClient => server,
                };
                stream.write_all(&frame)?;
                Ok(InFlight::Written(frame.len()))
            }
        }
    }

    pub fn receive(&mut self, dir: Dir, frame: InFlight) -> Result<Message, WireError> {
        let bytes = match (&mut self.pipe, frame) {
            (_, InFlight::Bytes(b)) => b,
            (Pipe::Socket { client, server }, InFlight::Written(len)) => {
                let stream = match dir {
                    Dir::ToServer => server,
                    Dir::ToClient => client,
                };
                let mut buf = vec![0; len];
                stream.read_exact(&mut buf)?;
                buf
            }
            (Pipe::InProcess, InFlight::Written(_)) => {
                unreachable!("in-process links never write to sockets")
            }
        };
        let decoder = match dir {
            Dir::ToServer => &mut self.to_server,
            Dir::ToClient => &mut self.to_client,
        };
        decoder.push(&bytes);
        let message = decoder.next_message()?;
        Ok(message.expect("one whole frame was pushed"))
    }
}
