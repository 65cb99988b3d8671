//! Duplex message transports between the roadside and vehicle endpoints.
//! Each message is one encoded frame.

use std::io::{ErrorKind, Write};
use std::net::{Ipv4Addr, SocketAddr, TcpListener, TcpStream};
use std::sync::mpsc::{self, Receiver, RecvTimeoutError, Sender};
use std::time::Duration;

use super::frame::{read_frame, FrameError};
use super::LinkError;

pub trait Transport: Send {
    fn send(&mut self, frame: &[u8]) -> Result<(), LinkError>;
    /// Blocks for at most `deadline` waiting for one frame.
    fn recv(&mut self, deadline: Duration) -> Result<Vec<u8>, LinkError>;
}

/// In-process queue binding.
#[derive(Debug)]
pub struct ChannelTransport {
    tx: Sender<Vec<u8>>,
    rx: Receiver<Vec<u8>>,
}

/// Two connected in-process endpoints.
pub fn channel_pair() -> (ChannelTransport, ChannelTransport) {
    let (a_tx, b_rx) = mpsc::channel();
    let (b_tx, a_rx) = mpsc::channel();
    (
        ChannelTransport { tx: a_tx, rx: a_rx },
        ChannelTransport { tx: b_tx, rx: b_rx },
    )
}

impl Transport for ChannelTransport {
    fn send(&mut self, frame: &[u8]) -> Result<(), LinkError> {
        self.tx.send(frame.to_vec()).map_err(|_| LinkError::PeerDisconnected)
    }

    fn recv(&mut self, deadline: Duration) -> Result<Vec<u8>, LinkError> {
        self.rx.recv_timeout(deadline).map_err(|e| match e {
            RecvTimeoutError::Timeout => LinkError::PeerTimeout(deadline),
            RecvTimeoutError::Disconnected => LinkError::PeerDisconnected,
        })
    }
}

/// Loopback TCP binding.
#[derive(Debug)]
pub struct TcpTransport {
    stream: TcpStream,
}

impl TcpTransport {
    pub fn new(stream: TcpStream) -> Result<Self, LinkError> {
        stream.set_nodelay(true)?;
        Ok(Self { stream })
    }

    pub fn connect(addr: SocketAddr) -> Result<Self, LinkError> {
        Self::new(TcpStream::connect(addr)?)
    }
}

/// Binds `127.0.0.1:port` (0 picks a free port) and returns the listener
/// with its actual address.
pub fn listen_loopback(port: u16) -> Result<(TcpListener, SocketAddr), LinkError> {
    let listener = TcpListener::bind((Ipv4Addr::LOCALHOST, port))?;
    let addr = listener.local_addr()?;
    Ok((listener, addr))
}

/// A connected pair over loopback TCP: `(server side, client side)`.
pub fn tcp_pair(port: u16) -> Result<(TcpTransport, TcpTransport), LinkError> {
    let (listener, addr) = listen_loopback(port)?;
    let client = TcpTransport::connect(addr)?;
    let (server, _) = listener.accept()?;
    Ok((TcpTransport::new(server)?, client))
}

impl Transport for TcpTransport {
    fn send(&mut self, frame: &[u8]) -> Result<(), LinkError> {
        self.stream.write_all(frame)?;
        self.stream.flush()?;
        Ok(())
    }

    fn recv(&mut self, deadline: Duration) -> Result<Vec<u8>, LinkError> {
        self.stream.set_read_timeout(Some(deadline.max(Duration::from_millis(1))))?;
        read_frame(&mut self.stream).map_err(|e| match e.kind() {
            ErrorKind::WouldBlock | ErrorKind::TimedOut => LinkError::PeerTimeout(deadline),
            ErrorKind::UnexpectedEof => LinkError::PeerDisconnected,
            _ => match e.get_ref().and_then(|inner| inner.downcast_ref::<FrameError>()) {
                Some(f) => LinkError::DecodeFailure(f.clone()),
                None => LinkError::Io(e),
            },
        })
    }
}
