//! Worker/orchestrator links: in-process channels or framed TCP loopback.
//!
//! Both transports carry the same logical protocol. Each round a worker
//! sends its port-waveform messages followed by a round-done marker (or an
//! error marker); the orchestrator answers with routed deliveries followed
//! by a decision marker. The orchestrator releases no decision until every
//! worker's round has arrived, which is the per-window barrier.

use crate::message::{
    encode_frame, read_frame, Frame, FrameError, FrameKind, PortWaveformMessage,
};
use std::io::Write;
use std::net::{TcpListener, TcpStream};
use std::sync::mpsc::{Receiver, Sender};
use std::time::Duration;

/// Transport selection.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum TransportKind {
    #[default]
    InProcess,
    Tcp,
}

/// Transport failure.
#[derive(Debug)]
pub enum TransportError {
    Io(std::io::Error),
    Frame(FrameError),
    /// Peer went away or a channel closed.
    Disconnected,
}

impl std::fmt::Display for TransportError {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            TransportError::Io(e) if e.kind() == std::io::ErrorKind::WouldBlock
                || e.kind() == std::io::ErrorKind::TimedOut =>
            {
                write!(f, "transport timeout: {e}")
            }
            TransportError::Io(e) => write!(f, "transport i/o error: {e}"),
            TransportError::Frame(e) => write!(f, "{e}"),
            TransportError::Disconnected => write!(f, "peer disconnected"),
        }
    }
}

impl std::error::Error for TransportError {}

impl From<std::io::Error> for TransportError {
    fn from(e: std::io::Error) -> Self {
        TransportError::Io(e)
    }
}

/// One worker's transmission for one round: its port messages plus the
/// local Newton-iteration total, or a failure marker.
#[derive(Debug, Clone)]
pub struct WorkerRound {
    pub messages: Vec<PortWaveformMessage>,
    pub nr_iterations: u64,
    pub failed: bool,
}

/// Orchestrator verdict ending a round.
#[derive(Debug, Clone)]
pub enum Decision {
    /// Deliver these messages and move to the next window.
    Accept(Vec<PortWaveformMessage>),
    /// Re-solve the same window (waveform relaxation).
    Iterate,
    /// Stop; another worker failed.
    Abort,
}

/// Orchestrator-side handle to one worker.
pub trait OrchestratorLink: Send {
    fn recv_round(&mut self) -> Result<WorkerRound, TransportError>;
    fn send_decision(&mut self, decision: &Decision) -> Result<(), TransportError>;
}

/// Worker-side handle to the orchestrator.
pub trait WorkerLink: Send {
    fn send_round(
        &mut self,
        messages: &[PortWaveformMessage],
        nr_iterations: u64,
    ) -> Result<(), TransportError>;
    fn send_error(&mut self) -> Result<(), TransportError>;
    fn recv_decision(&mut self) -> Result<Decision, TransportError>;
}

// ---------------------------------------------------------------------------
// In-process transport.

enum UpMsg {
    Round(WorkerRound),
}

pub struct InProcOrchLink {
    up: Receiver<UpMsg>,
    down: Sender<Decision>,
}

pub struct InProcWorkerLink {
    up: Sender<UpMsg>,
    down: Receiver<Decision>,
}

/// Channel pair for one worker.
pub fn in_process_pair() -> (InProcOrchLink, InProcWorkerLink) {
    let (up_tx, up_rx) = std::sync::mpsc::channel();
    let (down_tx, down_rx) = std::sync::mpsc::channel();
    (
        InProcOrchLink {
            up: up_rx,
            down: down_tx,
        },
        InProcWorkerLink {
            up: up_tx,
            down: down_rx,
        },
    )
}

impl OrchestratorLink for InProcOrchLink {
    fn recv_round(&mut self) -> Result<WorkerRound, TransportError> {
        match self.up.recv() {
            Ok(UpMsg::Round(r)) => Ok(r),
            Err(_) => Err(TransportError::Disconnected),
        }
    }

    fn send_decision(&mut self, decision: &Decision) -> Result<(), TransportError> {
        self.down
            .send(decision.clone())
            .map_err(|_| TransportError::Disconnected)
    }
}

impl WorkerLink for InProcWorkerLink {
    fn send_round(
        &mut self,
        messages: &[PortWaveformMessage],
        nr_iterations: u64,
    ) -> Result<(), TransportError> {
        self.up
            .send(UpMsg::Round(WorkerRound {
                messages: messages.to_vec(),
                nr_iterations,
                failed: false,
            }))
            .map_err(|_| TransportError::Disconnected)
    }

    fn send_error(&mut self) -> Result<(), TransportError> {
        self.up
            .send(UpMsg::Round(WorkerRound {
                messages: Vec::new(),
                nr_iterations: 0,
                failed: true,
            }))
            .map_err(|_| TransportError::Disconnected)
    }

    fn recv_decision(&mut self) -> Result<Decision, TransportError> {
        self.down.recv().map_err(|_| TransportError::Disconnected)
    }
}

// ---------------------------------------------------------------------------
// TCP transport.

/// Default socket read timeout; a worker or orchestrator silent for this
/// long is treated as failed.
pub const TCP_READ_TIMEOUT: Duration = Duration::from_secs(30);

fn control_frame(kind: FrameKind, window: u32) -> Vec<u8> {
    encode_frame(
        kind,
        &PortWaveformMessage {
            window,
            wire: 0,
            port: 0,
            samples: Vec::new(),
        },
    )
}

fn read_ok(stream: &mut TcpStream) -> Result<Frame, TransportError> {
    match read_frame(stream) {
        Ok(Ok(f)) => Ok(f),
        Ok(Err(e)) => Err(TransportError::Frame(e)),
        Err(e) if e.kind() == std::io::ErrorKind::UnexpectedEof => {
            Err(TransportError::Disconnected)
        }
        Err(e) => Err(TransportError::Io(e)),
    }
}

pub struct TcpOrchLink {
    stream: TcpStream,
}

pub struct TcpWorkerLink {
    stream: TcpStream,
}

/// Loopback listener whose address is known before workers connect.
pub struct TcpAcceptor {
    listener: TcpListener,
}

impl TcpAcceptor {
    pub fn bind() -> Result<(std::net::SocketAddr, TcpAcceptor), TransportError> {
        let listener = TcpListener::bind(("127.0.0.1", 0))?;
        let addr = listener.local_addr()?;
        Ok((addr, TcpAcceptor { listener }))
    }

    /// Accept `n` workers; links come back indexed by worker id. Workers
    /// identify themselves with a round-done frame whose window field
    /// carries their id.
    pub fn accept_workers(&self, n: usize) -> Result<Vec<TcpOrchLink>, TransportError> {
        let mut links: Vec<Option<TcpOrchLink>> = (0..n).map(|_| None).collect();
        for _ in 0..n {
            let (mut stream, _) = self.listener.accept()?;
            stream.set_nodelay(true)?;
            stream.set_read_timeout(Some(TCP_READ_TIMEOUT))?;
            let hello = read_ok(&mut stream)?;
            if hello.kind != FrameKind::RoundDone {
                return Err(TransportError::Frame(FrameError::UnknownFlags(
                    hello.kind as u8,
                )));
            }
            let id = hello.message.window as usize;
            if id >= n || links[id].is_some() {
                return Err(TransportError::Frame(FrameError::UnknownFlags(0)));
            }
            links[id] = Some(TcpOrchLink { stream });
        }
        Ok(links.into_iter().map(|l| l.unwrap()).collect())
    }
}

/// Worker side: connect to the orchestrator and identify as `id`.
pub fn tcp_connect(addr: std::net::SocketAddr, id: usize) -> Result<TcpWorkerLink, TransportError> {
    let mut stream = TcpStream::connect(addr)?;
    stream.set_nodelay(true)?;
    stream.set_read_timeout(Some(TCP_READ_TIMEOUT))?;
    stream.write_all(&control_frame(FrameKind::RoundDone, id as u32))?;
    Ok(TcpWorkerLink { stream })
}

impl OrchestratorLink for TcpOrchLink {
    fn recv_round(&mut self) -> Result<WorkerRound, TransportError> {
        let mut messages = Vec::new();
        loop {
            let frame = read_ok(&mut self.stream)?;
            match frame.kind {
                FrameKind::Data => messages.push(frame.message),
                FrameKind::RoundDone => {
                    // The round-done frame carries the NR total in its
                    // window field... it does not fit; see worker side:
                    // the count rides in the wire/port-free sample slot.
                    let nr = frame
                        .message
                        .samples
                        .first()
                        .map(|&(u, _)| u as u64)
                        .unwrap_or(0);
                    return Ok(WorkerRound {
                        messages,
                        nr_iterations: nr,
                        failed: false,
                    });
                }
                FrameKind::Error => {
                    return Ok(WorkerRound {
                        messages: Vec::new(),
                        nr_iterations: 0,
                        failed: true,
                    })
                }
                other => {
                    return Err(TransportError::Frame(FrameError::UnknownFlags(other as u8)))
                }
            }
        }
    }

    fn send_decision(&mut self, decision: &Decision) -> Result<(), TransportError> {
        match decision {
            Decision::Accept(deliveries) => {
                for msg in deliveries {
                    self.stream.write_all(&encode_frame(FrameKind::Data, msg))?;
                }
                self.stream
                    .write_all(&control_frame(FrameKind::Accept, 0))?;
            }
            Decision::Iterate => {
                self.stream
                    .write_all(&control_frame(FrameKind::Iterate, 0))?;
            }
            Decision::Abort => {
                self.stream.write_all(&control_frame(FrameKind::Abort, 0))?;
            }
        }
        Ok(())
    }
}

impl WorkerLink for TcpWorkerLink {
    fn send_round(
        &mut self,
        messages: &[PortWaveformMessage],
        nr_iterations: u64,
    ) -> Result<(), TransportError> {
        for msg in messages {
            self.stream.write_all(&encode_frame(FrameKind::Data, msg))?;
        }
        let done = PortWaveformMessage {
            window: 0,
            wire: 0,
            port: 0,
            samples: vec![(nr_iterations as f64, 0.0)],
        };
        self.stream
            .write_all(&encode_frame(FrameKind::RoundDone, &done))?;
        Ok(())
    }

    fn send_error(&mut self) -> Result<(), TransportError> {
        self.stream.write_all(&control_frame(FrameKind::Error, 0))?;
        Ok(())
    }

    fn recv_decision(&mut self) -> Result<Decision, TransportError> {
        let mut deliveries = Vec::new();
        loop {
            let frame = read_ok(&mut self.stream)?;
            match frame.kind {
                FrameKind::Data => deliveries.push(frame.message),
                FrameKind::Accept => return Ok(Decision::Accept(deliveries)),
                FrameKind::Iterate => return Ok(Decision::Iterate),
                FrameKind::Abort => return Ok(Decision::Abort),
                other => {
                    return Err(TransportError::Frame(FrameError::UnknownFlags(other as u8)))
                }
            }
        }
    }
}
