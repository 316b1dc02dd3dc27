//! Length-prefixed framing (4-byte big-endian length, JSON payload) over a
//! byte stream, plus an in-memory pipe for single-process runs.

use std::io::{self, Read, Write};
use std::net::{TcpListener, TcpStream, ToSocketAddrs};
use std::sync::mpsc::{self, Receiver, Sender};
use std::time::{Duration, Instant};

use super::wire::Message;

pub const MAX_FRAME_BYTES: usize = 64 << 20;

#[derive(Debug, thiserror::Error)]
pub enum TransportError {
    #[error("i/o error: {0}")]
    Io(#[from] io::Error),
    #[error("frame of {0} bytes exceeds limit")]
    FrameTooLarge(usize),
    #[error("malformed message: {0}")]
    Decode(#[from] serde_json::Error),
    #[error("peer closed the connection")]
    Closed,
}

pub trait Transport {
    fn send(&mut self, msg: &Message) -> Result<(), TransportError>;
    fn recv(&mut self) -> Result<Message, TransportError>;
}

impl<T: Transport + ?Sized> Transport for &mut T {
    fn send(&mut self, msg: &Message) -> Result<(), TransportError> {
        (**self).send(msg)
    }

    fn recv(&mut self) -> Result<Message, TransportError> {
        (**self).recv()
    }
}

impl<T: Transport + ?Sized> Transport for Box<T> {
    fn send(&mut self, msg: &Message) -> Result<(), TransportError> {
        (**self).send(msg)
    }

    fn recv(&mut self) -> Result<Message, TransportError> {
        (**self).recv()
    }
}

pub fn encode_frame(msg: &Message) -> Result<Vec<u8>, TransportError> {
    let payload = serde_json::to_vec(msg)?;
    if payload.len() > MAX_FRAME_BYTES {
        return Err(TransportError::FrameTooLarge(payload.len()));
    }
    let mut frame = Vec::with_capacity(4 + payload.len());
    frame.extend_from_slice(&(payload.len() as u32).to_be_bytes());
    frame.extend_from_slice(&payload);
    Ok(frame)
}

pub struct FramedTransport<S> {
    stream: S,
}

impl<S: Read + Write> FramedTransport<S> {
    pub fn new(stream: S) -> Self {
        Self { stream }
    }

    pub fn into_inner(self) -> S {
        self.stream
    }
}

impl<S: Read + Write> Transport for FramedTransport<S> {
    fn send(&mut self, msg: &Message) -> Result<(), TransportError> {
        self.stream.write_all(&encode_frame(msg)?)?;
        self.stream.flush()?;
        Ok(())
    }

    fn recv(&mut self) -> Result<Message, TransportError> {
        let mut len = [0u8; 4];
        if let Err(e) = self.stream.read_exact(&mut len) {
            return Err(match e.kind() {
                io::ErrorKind::UnexpectedEof => TransportError::Closed,
                _ => e.into(),
            });
        }
        let len = u32::from_be_bytes(len) as usize;
        if len > MAX_FRAME_BYTES {
            return Err(TransportError::FrameTooLarge(len));
        }
        let mut payload = vec![0u8; len];
        self.stream.read_exact(&mut payload)?;
        Ok(serde_json::from_slice(&payload)?)
    }
}

pub type TcpTransport = FramedTransport<TcpStream>;

/// Accept exactly one peer.
pub fn listen(addr: impl ToSocketAddrs) -> Result<TcpTransport, TransportError> {
    let listener = TcpListener::bind(addr)?;
    let (stream, _) = listener.accept()?;
    stream.set_nodelay(true)?;
    Ok(FramedTransport::new(stream))
}

/// Connect, retrying until `timeout` so the two ends can start in any order.
pub fn connect(addr: impl ToSocketAddrs + Clone, timeout: Duration) -> Result<TcpTransport, TransportError> {
    let deadline = Instant::now() + timeout;
    loop {
        match TcpStream::connect(addr.clone()) {
            Ok(stream) => {
                stream.set_nodelay(true)?;
                return Ok(FramedTransport::new(stream));
            }
            Err(e) if Instant::now() >= deadline => return Err(e.into()),
            Err(_) => std::thread::sleep(Duration::from_millis(100)),
        }
    }
}

/// One end of an in-process pipe. Messages still go through the frame codec.
pub struct MemoryTransport {
    tx: Sender<Vec<u8>>,
    rx: Receiver<Vec<u8>>,
}

pub fn memory_pair() -> (MemoryTransport, MemoryTransport) {
    let (tx_a, rx_b) = mpsc::channel();
    let (tx_b, rx_a) = mpsc::channel();
    (MemoryTransport { tx: tx_a, rx: rx_a }, MemoryTransport { tx: tx_b, rx: rx_b })
}

impl Transport for MemoryTransport {
    fn send(&mut self, msg: &Message) -> Result<(), TransportError> {
        self.tx.send(encode_frame(msg)?).map_err(|_| TransportError::Closed)
    }

    fn recv(&mut self) -> Result<Message, TransportError> {
        let frame = self.rx.recv().map_err(|_| TransportError::Closed)?;
        let len = u32::from_be_bytes(frame[..4].try_into().expect("frame header")) as usize;
        Ok(serde_json::from_slice(&frame[4..4 + len])?)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use std::io::Cursor;

    #[test]
    fn frame_layout() {
        let f = encode_frame(&Message::Bye).unwrap();
        assert_eq!(&f[..4], &[0, 0, 0, 14]);
        assert_eq!(&f[4..], br#"{"type":"BYE"}"#);
    }

    #[test]
    fn framed_round_trip_and_eof() {
        let mut buf = Vec::new();
        buf.extend(encode_frame(&Message::Bye).unwrap());
        buf.extend(encode_frame(&Message::KeyDone { bits: 7, qber: None }).unwrap());
        let mut t = FramedTransport::new(Cursor::new(buf));
        assert_eq!(t.recv().unwrap(), Message::Bye);
        assert_eq!(t.recv().unwrap(), Message::KeyDone { bits: 7, qber: None });
        assert!(matches!(t.recv(), Err(TransportError::Closed)));
    }

    #[test]
    fn oversized_frame_rejected() {
        let mut buf = ((MAX_FRAME_BYTES + 1) as u32).to_be_bytes().to_vec();
        buf.extend([0; 8]);
        let mut t = FramedTransport::new(Cursor::new(buf));
        assert!(matches!(t.recv(), Err(TransportError::FrameTooLarge(_))));
    }

    #[test]
    fn memory_pipe_and_tcp() {
        let (mut a, mut b) = memory_pair();
        a.send(&Message::Bye).unwrap();
        assert_eq!(b.recv().unwrap(), Message::Bye);
        drop(a);
        assert!(matches!(b.recv(), Err(TransportError::Closed)));

        let listener = TcpListener::bind("127.0.0.1:0").unwrap();
        let addr = listener.local_addr().unwrap();
        let server = std::thread::spawn(move || {
            let (s, _) = listener.accept().unwrap();
            let mut t = FramedTransport::new(s);
            let m = t.recv().unwrap();
            t.send(&m).unwrap();
        });
        let mut c = connect(addr, Duration::from_secs(5)).unwrap();
        c.send(&Message::KeyDone { bits: 42, qber: Some(0.5) }).unwrap();
        assert_eq!(c.recv().unwrap(), Message::KeyDone { bits: 42, qber: Some(0.5) });
        server.join().unwrap();
    }
}
