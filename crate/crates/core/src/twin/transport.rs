//! Message links between the actors: an in-process ordered queue, or a TCP
//! stream carrying one JSON envelope per line.

use std::io::{BufRead, BufReader, BufWriter, Write};
use std::net::{TcpStream, ToSocketAddrs};
use std::sync::mpsc;

use serde::{Deserialize, Serialize};

use super::message::Envelope;
use super::TwinError;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Transport {
    #[default]
    Inproc,
    Socket,
}

/// One end of a reliable, ordered, bidirectional message link.
pub trait Link: Send {
    fn send(&mut self, msg: &Envelope) -> Result<(), TwinError>;
    fn recv(&mut self) -> Result<Envelope, TwinError>;
}

pub struct ChannelLink {
    tx: mpsc::Sender<Envelope>,
    rx: mpsc::Receiver<Envelope>,
}

/// Two connected in-process link ends.
pub fn channel_pair() -> (ChannelLink, ChannelLink) {
    let (a_tx, b_rx) = mpsc::channel();
    let (b_tx, a_rx) = mpsc::channel();
    (
        ChannelLink { tx: a_tx, rx: a_rx },
        ChannelLink { tx: b_tx, rx: b_rx },
    )
}

impl Link for ChannelLink {
    fn send(&mut self, msg: &Envelope) -> Result<(), TwinError> {
        self.tx
            .send(msg.clone())
            .map_err(|_| TwinError::Disconnected)
    }

    fn recv(&mut self) -> Result<Envelope, TwinError> {
        self.rx.recv().map_err(|_| TwinError::Disconnected)
    }
}

pub struct TcpLink {
    reader: BufReader<TcpStream>,
    writer: BufWriter<TcpStream>,
    line: String,
}

impl TcpLink {
    pub fn new(stream: TcpStream) -> Result<Self, TwinError> {
        stream.set_nodelay(true)?;
        Ok(Self {
            reader: BufReader::new(stream.try_clone()?),
            writer: BufWriter::new(stream),
            line: String::new(),
        })
    }

    pub fn connect(addr: impl ToSocketAddrs) -> Result<Self, TwinError> {
        Self::new(TcpStream::connect(addr)?)
    }
}

impl Link for TcpLink {
    fn send(&mut self, msg: &Envelope) -> Result<(), TwinError> {
        serde_json::to_writer(&mut self.writer, msg).map_err(std::io::Error::from)?;
        self.writer.write_all(b"\n")?;
        self.writer.flush()?;
        Ok(())
    }

    fn recv(&mut self) -> Result<Envelope, TwinError> {
        self.line.clear();
        if self.reader.read_line(&mut self.line)? == 0 {
            return Err(TwinError::Disconnected);
        }
        Envelope::from_line(self.line.trim_end())
    }
}
