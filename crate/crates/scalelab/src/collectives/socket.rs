//! Ring all-reduce over stream sockets.
//!
//! Rank 0 listens on the configured port; every other rank connects to
//! it. There is no handshake message type: the first regular frame on a
//! connection carries the sender's rank, which fixes the ordering. The
//! ring is logical — each frame a rank emits is destined for its
//! successor, and rank 0 relays frames between peers.
//!
//! The ring result is identical on every rank but, unlike the in-memory
//! tree reducer, its association order differs, so agreement with the
//! canonical reducer is elementwise (relative 1e-12), not bitwise.

use std::io::Write;
use std::net::{TcpListener, TcpStream};
use std::sync::mpsc::{channel, Receiver, RecvTimeoutError, Sender};
use std::sync::{Arc, Mutex};
use std::time::{Duration, Instant};

use crate::collectives::frame::{Frame, MsgType};
use crate::error::{Error, Result};
use crate::numerics::Tensor;

#[derive(Clone, Debug)]
pub struct SocketConfig {
    pub n: usize,
    pub rank: usize,
    /// Port rank 0 listens on, loopback.
    pub port: u16,
    pub timeout: Duration,
}

impl SocketConfig {
    pub fn new(n: usize, rank: usize, port: u16) -> Self {
        SocketConfig {
            n,
            rank,
            port,
            timeout: Duration::from_secs(30),
        }
    }
}

/// Split `len` slots into `n` chunks: the first len % n chunks get one
/// extra element. Chunks may be empty when len < n.
pub fn chunk_bounds(len: usize, n: usize) -> Vec<(usize, usize)> {
    let q = len / n;
    let r = len % n;
    let mut out = Vec::with_capacity(n);
    let mut start = 0;
    for i in 0..n {
        let size = if i < r { q + 1 } else { q };
        out.push((start, start + size));
        start += size;
    }
    out
}

enum Outbound {
    /// Rank 0 writes straight into each peer's stream.
    Hub { peers: Arc<Vec<Mutex<TcpStream>>> },
    /// Other ranks write to rank 0, which relays to the successor.
    Leaf { stream: Mutex<TcpStream> },
}

pub struct SocketGroup {
    n: usize,
    rank: usize,
    timeout: Duration,
    inbox: Receiver<Frame>,
    out: Outbound,
}

fn spawn_reader(stream: TcpStream, on_frame: impl Fn(Frame) -> bool + Send + 'static) {
    std::thread::spawn(move || {
        let mut reader = std::io::BufReader::new(stream);
        while let Ok(frame) = Frame::decode(&mut reader) {
            if !on_frame(frame) {
                break;
            }
        }
    });
}

impl SocketGroup {
    /// Join the group; blocks until all N ranks are connected.
    pub fn connect(cfg: &SocketConfig) -> Result<SocketGroup> {
        if cfg.rank >= cfg.n {
            return Err(Error::InvalidParameter(format!(
                "rank {} out of range for group of {}",
                cfg.rank, cfg.n
            )));
        }
        if cfg.rank == 0 {
            Self::connect_hub(cfg)
        } else {
            Self::connect_leaf(cfg)
        }
    }

    fn connect_hub(cfg: &SocketConfig) -> Result<SocketGroup> {
        let listener = TcpListener::bind(("127.0.0.1", cfg.port))?;
        listener.set_nonblocking(true)?;
        let deadline = Instant::now() + cfg.timeout;
        let mut streams: Vec<Option<TcpStream>> = (0..cfg.n).map(|_| None).collect();
        let mut joined = 1; // rank 0 itself
        while joined < cfg.n {
            match listener.accept() {
                Ok((stream, _)) => {
                    stream.set_nodelay(true).ok();
                    // the first frame on the connection identifies the peer
                    stream.set_read_timeout(Some(cfg.timeout))?;
                    let mut peek = stream.try_clone()?;
                    let frame = Frame::decode(&mut peek)?;
                    if frame.msg_type != MsgType::Barrier {
                        return Err(Error::Wire(format!(
                            "expected join barrier, got {:?}",
                            frame.msg_type
                        )));
                    }
                    let r = frame.rank as usize;
                    if r == 0 || r >= cfg.n || streams[r].is_some() {
                        return Err(Error::Wire(format!("invalid or duplicate rank {r}")));
                    }
                    stream.set_read_timeout(None)?;
                    streams[r] = Some(stream);
                    joined += 1;
                }
                Err(ref e) if e.kind() == std::io::ErrorKind::WouldBlock => {
                    if Instant::now() > deadline {
                        let missing =
                            (1..cfg.n).filter(|&r| streams[r].is_none()).collect();
                        return Err(Error::CollectiveTimeout { missing });
                    }
                    std::thread::sleep(Duration::from_millis(2));
                }
                Err(e) => return Err(e.into()),
            }
        }
        // release every leaf, then start relaying
        for s in streams.iter_mut().flatten() {
            let release = Frame {
                msg_type: MsgType::Barrier,
                rank: 0,
                chunk_index: 0,
                payload: vec![],
            };
            release.encode(s)?;
            s.flush()?;
        }

        let readers: Vec<TcpStream> = streams
            .iter()
            .map(|s| s.as_ref().map(|st| st.try_clone()).transpose())
            .collect::<std::io::Result<Vec<_>>>()?
            .into_iter()
            .flatten()
            .collect();
        let peers: Arc<Vec<Mutex<TcpStream>>> = Arc::new(
            streams
                .into_iter()
                .flatten()
                .map(Mutex::new)
                .collect(),
        );
        // peers[i] corresponds to rank i + 1

        let (tx, rx) = channel::<Frame>();
        for stream in readers {
            let peers = Arc::clone(&peers);
            let tx: Sender<Frame> = tx.clone();
            let n = cfg.n;
            spawn_reader(stream, move |frame| {
                let dest = (frame.rank as usize + 1) % n;
                if dest == 0 {
                    tx.send(frame).is_ok()
                } else {
                    let mut guard = peers[dest - 1].lock().expect("peer stream lock");
                    frame.encode(&mut *guard).is_ok() && guard.flush().is_ok()
                }
            });
        }
        drop(tx);
        Ok(SocketGroup {
            n: cfg.n,
            rank: 0,
            timeout: cfg.timeout,
            inbox: rx,
            out: Outbound::Hub { peers },
        })
    }

    fn connect_leaf(cfg: &SocketConfig) -> Result<SocketGroup> {
        let deadline = Instant::now() + cfg.timeout;
        let mut stream = loop {
            match TcpStream::connect(("127.0.0.1", cfg.port)) {
                Ok(s) => break s,
                Err(e) => {
                    if Instant::now() > deadline {
                        return Err(Error::LinkBroken {
                            from: cfg.rank,
                            to: 0,
                            detail: format!("connect failed: {e}"),
                        });
                    }
                    std::thread::sleep(Duration::from_millis(5));
                }
            }
        };
        stream.set_nodelay(true).ok();
        let join = Frame {
            msg_type: MsgType::Barrier,
            rank: cfg.rank as u16,
            chunk_index: 0,
            payload: vec![],
        };
        join.encode(&mut stream)?;
        stream.flush()?;
        stream.set_read_timeout(Some(cfg.timeout))?;
        let release = Frame::decode(&mut stream.try_clone()?)?;
        if release.msg_type != MsgType::Barrier || release.rank != 0 {
            return Err(Error::Wire("malformed join release".into()));
        }
        stream.set_read_timeout(None)?;

        let (tx, rx) = channel::<Frame>();
        spawn_reader(stream.try_clone()?, move |frame| tx.send(frame).is_ok());
        Ok(SocketGroup {
            n: cfg.n,
            rank: cfg.rank,
            timeout: cfg.timeout,
            inbox: rx,
            out: Outbound::Leaf {
                stream: Mutex::new(stream),
            },
        })
    }

    pub fn rank(&self) -> usize {
        self.rank
    }

    pub fn size(&self) -> usize {
        self.n
    }

    fn pred(&self) -> usize {
        (self.rank + self.n - 1) % self.n
    }

    /// Send a frame to the ring successor.
    fn send(&self, msg_type: MsgType, chunk_index: u32, payload: Vec<f64>) -> Result<()> {
        let frame = Frame {
            msg_type,
            rank: self.rank as u16,
            chunk_index,
            payload,
        };
        match &self.out {
            Outbound::Hub { peers } => {
                // successor of rank 0 is rank 1 = peers[0]
                let mut guard = peers[0].lock().expect("peer stream lock");
                frame.encode(&mut *guard).map_err(|e| self.broken(1, e))?;
                guard.flush().map_err(|e| self.broken(1, e.into()))?;
            }
            Outbound::Leaf { stream } => {
                let mut guard = stream.lock().expect("stream lock");
                frame.encode(&mut *guard).map_err(|e| self.broken(0, e))?;
                guard.flush().map_err(|e| self.broken(0, e.into()))?;
            }
        }
        Ok(())
    }

    fn broken(&self, to: usize, e: Error) -> Error {
        Error::LinkBroken {
            from: self.rank,
            to,
            detail: e.to_string(),
        }
    }

    /// Receive the next frame from the ring predecessor, validating its
    /// provenance and kind.
    fn recv(&self, expect_type: MsgType, expect_chunk: u32) -> Result<Frame> {
        let frame = match self.inbox.recv_timeout(self.timeout) {
            Ok(f) => f,
            Err(RecvTimeoutError::Timeout) => {
                return Err(Error::CollectiveTimeout {
                    missing: vec![self.pred()],
                })
            }
            Err(RecvTimeoutError::Disconnected) => {
                return Err(Error::LinkBroken {
                    from: self.pred(),
                    to: self.rank,
                    detail: "connection closed".into(),
                })
            }
        };
        if frame.rank as usize != self.pred()
            || frame.msg_type != expect_type
            || frame.chunk_index != expect_chunk
        {
            return Err(Error::Wire(format!(
                "unexpected frame: type {:?} chunk {} from rank {}, wanted {:?} chunk {} from {}",
                frame.msg_type,
                frame.chunk_index,
                frame.rank,
                expect_type,
                expect_chunk,
                self.pred()
            )));
        }
        Ok(frame)
    }

    /// Reduce-scatter then all-gather around the ring; returns the mean.
    pub fn ring_allreduce_mean(&mut self, contribution: &Tensor) -> Result<Tensor> {
        let n = self.n;
        if n == 1 {
            return Ok(contribution.clone());
        }
        let mut buf = contribution.clone();
        let len = buf.len();
        let bounds = chunk_bounds(len, n);

        // reduce-scatter: after n-1 steps rank i holds the fully reduced
        // chunk (i + 1) mod n
        for step in 0..n - 1 {
            let send_chunk = (self.rank + n - step) % n;
            let recv_chunk = (self.rank + 2 * n - step - 1) % n;
            let (s, e) = bounds[send_chunk];
            self.send(
                MsgType::ReduceChunk,
                send_chunk as u32,
                buf.data()[s..e].to_vec(),
            )?;
            let frame = self.recv(MsgType::ReduceChunk, recv_chunk as u32)?;
            let (rs, re) = bounds[recv_chunk];
            if frame.payload.len() != re - rs {
                return Err(Error::Wire(format!(
                    "chunk {} has {} values, expected {}",
                    recv_chunk,
                    frame.payload.len(),
                    re - rs
                )));
            }
            for (slot, v) in buf.data_mut()[rs..re].iter_mut().zip(&frame.payload) {
                *slot += v;
            }
        }

        // all-gather the reduced chunks
        for step in 0..n - 1 {
            let send_chunk = (self.rank + 1 + n - step) % n;
            let recv_chunk = (self.rank + n - step) % n;
            let (s, e) = bounds[send_chunk];
            self.send(
                MsgType::BcastChunk,
                send_chunk as u32,
                buf.data()[s..e].to_vec(),
            )?;
            let frame = self.recv(MsgType::BcastChunk, recv_chunk as u32)?;
            let (rs, re) = bounds[recv_chunk];
            buf.data_mut()[rs..re].copy_from_slice(&frame.payload);
        }

        let nf = n as f64;
        for v in buf.data_mut() {
            *v /= nf;
        }
        Ok(buf)
    }

    /// Two token passes around the ring: entry collection, then release.
    pub fn barrier(&mut self) -> Result<()> {
        if self.n == 1 {
            return Ok(());
        }
        for round in 0..2u32 {
            if self.rank == 0 {
                self.send(MsgType::Barrier, round, vec![])?;
                self.recv(MsgType::Barrier, round)?;
            } else {
                self.recv(MsgType::Barrier, round)?;
                self.send(MsgType::Barrier, round, vec![])?;
            }
        }
        Ok(())
    }

    /// Pass every rank's value around the ring; true when all agree.
    pub fn check_uniform(&mut self, value: u64) -> Result<bool> {
        if self.n == 1 {
            return Ok(true);
        }
        let encode = |v: u64| vec![(v & 0xFFFF_FFFF) as f64, (v >> 32) as f64];
        let decode = |p: &[f64]| -> u64 { (p[0] as u64) | ((p[1] as u64) << 32) };
        let mut all_equal = true;
        let mut holding = value;
        for step in 0..self.n - 1 {
            self.send(MsgType::BcastChunk, u32::MAX - step as u32, encode(holding))?;
            let frame = self.recv(MsgType::BcastChunk, u32::MAX - step as u32)?;
            if frame.payload.len() != 2 {
                return Err(Error::Wire("malformed uniform-check frame".into()));
            }
            holding = decode(&frame.payload);
            all_equal &= holding == value;
        }
        Ok(all_equal)
    }
}
