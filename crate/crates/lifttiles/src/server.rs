//! The running service: one sim-loop thread owns the [`Session`];
//! connections talk to it only through a command queue and per-connection
//! outboxes.
//!
//! Two transports carry the same frames. The stream socket speaks
//! newline-delimited JSON; the WebSocket endpoint carries one frame per
//! text message.

use std::io::{self, BufRead, BufReader, ErrorKind, Write};
use std::net::{Shutdown, SocketAddr, TcpListener, TcpStream, ToSocketAddrs};
use std::sync::atomic::{AtomicBool, AtomicU64, Ordering};
use std::sync::mpsc::{self, Receiver, RecvTimeoutError, Sender};
use std::sync::Arc;
use std::thread::{self, JoinHandle};
use std::time::{Duration, Instant};

use lifttiles_core::model::Layout;
use lifttiles_core::{ControlConfig, SimConfig};
use tungstenite::{Message, WebSocket};

use crate::protocol::{Frame, FrameKind};
use crate::session::{ClientId, Session, SessionError};

const POLL: Duration = Duration::from_millis(20);

#[derive(Debug, Clone)]
pub struct ServiceConfig {
    pub layout: Layout,
    pub sim: SimConfig,
    pub control: ControlConfig,
    /// Wall-clock time per simulation step; zero runs as fast as possible.
    pub tick: Duration,
    pub listen: SocketAddr,
    pub ws_listen: Option<SocketAddr>,
}

#[derive(Debug, thiserror::Error)]
pub enum ServeError {
    #[error("cannot bind {addr}: {source}")]
    Bind {
        addr: SocketAddr,
        #[source]
        source: io::Error,
    },
    #[error(transparent)]
    Session(#[from] SessionError),
}

enum Event {
    Connect(ClientId, Sender<String>),
    Line(ClientId, String),
    Disconnect(ClientId),
}

pub struct ServiceHandle {
    addr: SocketAddr,
    ws_addr: Option<SocketAddr>,
    stop: Arc<AtomicBool>,
    threads: Vec<JoinHandle<()>>,
}

impl ServiceHandle {
    pub fn addr(&self) -> SocketAddr {
        self.addr
    }

    pub fn ws_addr(&self) -> Option<SocketAddr> {
        self.ws_addr
    }

    /// Stops accepting, closes the sim loop and waits for the service
    /// threads.
    pub fn shutdown(mut self) {
        self.stop.store(true, Ordering::SeqCst);
        for t in self.threads.drain(..) {
            let _ = t.join();
        }
    }

    /// Blocks until the service stops.
    pub fn wait(mut self) {
        for t in self.threads.drain(..) {
            let _ = t.join();
        }
    }
}

impl Drop for ServiceHandle {
    fn drop(&mut self) {
        self.stop.store(true, Ordering::SeqCst);
    }
}

fn bind(addr: SocketAddr) -> Result<TcpListener, ServeError> {
    let l = TcpListener::bind(addr).map_err(|source| ServeError::Bind { addr, source })?;
    l.set_nonblocking(true).map_err(|source| ServeError::Bind { addr, source })?;
    Ok(l)
}

pub fn serve(config: ServiceConfig) -> Result<ServiceHandle, ServeError> {
    let session = Session::new(config.layout, config.sim, config.control)?;
    let listener = bind(config.listen)?;
    let ws = config.ws_listen.map(bind).transpose()?;
    let addr = listener.local_addr().map_err(|source| ServeError::Bind {
        addr: config.listen,
        source,
    })?;
    let ws_addr = ws.as_ref().and_then(|l| l.local_addr().ok());

    let stop = Arc::new(AtomicBool::new(false));
    let next_client = Arc::new(AtomicU64::new(1));
    let (tx, rx) = mpsc::channel();

    let mut threads = Vec::new();
    {
        let stop = stop.clone();
        let tick = config.tick;
        threads.push(thread::spawn(move || sim_loop(session, rx, tick, &stop)));
    }
    {
        let (stop, next, tx) = (stop.clone(), next_client.clone(), tx.clone());
        threads.push(thread::spawn(move || accept_loop(listener, tx, next, stop, Transport::Lines)));
    }
    if let Some(ws) = ws {
        let (stop, next, tx) = (stop.clone(), next_client, tx);
        threads.push(thread::spawn(move || accept_loop(ws, tx, next, stop, Transport::WebSocket)));
    }
    Ok(ServiceHandle {
        addr,
        ws_addr,
        stop,
        threads,
    })
}

fn sim_loop(mut session: Session, rx: Receiver<Event>, tick: Duration, stop: &AtomicBool) {
    let mut outboxes: std::collections::BTreeMap<ClientId, Sender<String>> = Default::default();
    let mut deadline = Instant::now() + tick;
    while !stop.load(Ordering::SeqCst) {
        // drain everything that arrived before the next step
        loop {
            let wait = deadline.saturating_duration_since(Instant::now()).min(POLL);
            let event = if wait.is_zero() {
                match rx.try_recv() {
                    Ok(e) => e,
                    Err(_) => break,
                }
            } else {
                match rx.recv_timeout(wait) {
                    Ok(e) => e,
                    Err(RecvTimeoutError::Timeout) => {
                        if Instant::now() >= deadline || stop.load(Ordering::SeqCst) {
                            break;
                        }
                        continue;
                    }
                    Err(RecvTimeoutError::Disconnected) => return,
                }
            };
            match event {
                Event::Connect(c, out) => {
                    outboxes.insert(c, out);
                }
                Event::Line(c, line) => {
                    let response = session.handle_line(c, &line);
                    if let Some(out) = outboxes.get(&c) {
                        let _ = out.send(response.to_line());
                    }
                }
                Event::Disconnect(c) => {
                    session.disconnect(c);
                    outboxes.remove(&c);
                }
            }
        }
        if stop.load(Ordering::SeqCst) {
            break;
        }
        if session.tick() {
            for (c, frame) in session.publish() {
                if let Some(out) = outboxes.get(&c) {
                    let _ = out.send(frame.to_line());
                }
            }
        }
        deadline += tick;
        let now = Instant::now();
        if deadline < now {
            // fell behind; do not try to catch up in a burst
            deadline = now;
        }
    }
}

#[derive(Clone, Copy)]
enum Transport {
    Lines,
    WebSocket,
}

fn accept_loop(
    listener: TcpListener,
    tx: Sender<Event>,
    next: Arc<AtomicU64>,
    stop: Arc<AtomicBool>,
    transport: Transport,
) {
    let mut workers = Vec::new();
    while !stop.load(Ordering::SeqCst) {
        match listener.accept() {
            Ok((stream, _)) => {
                let id = ClientId(next.fetch_add(1, Ordering::SeqCst));
                let (tx, stop) = (tx.clone(), stop.clone());
                workers.push(thread::spawn(move || {
                    let _ = match transport {
                        Transport::Lines => serve_lines(stream, id, tx, &stop),
                        Transport::WebSocket => serve_ws(stream, id, tx, &stop),
                    };
                }));
            }
            Err(e) if e.kind() == ErrorKind::WouldBlock => thread::sleep(POLL),
            Err(_) => thread::sleep(POLL),
        }
        workers.retain(|w| !w.is_finished());
    }
    for w in workers {
        let _ = w.join();
    }
}

fn serve_lines(stream: TcpStream, id: ClientId, tx: Sender<Event>, stop: &AtomicBool) -> io::Result<()> {
    stream.set_nonblocking(false)?;
    stream.set_read_timeout(Some(POLL * 5))?;
    let _ = stream.set_nodelay(true);
    let (out_tx, out_rx) = mpsc::channel::<String>();
    let mut writer_stream = stream.try_clone()?;
    let writer = thread::spawn(move || {
        for line in out_rx {
            if writer_stream
                .write_all(line.as_bytes())
                .and_then(|_| writer_stream.write_all(b"\n"))
                .is_err()
            {
                break;
            }
        }
    });
    if tx.send(Event::Connect(id, out_tx)).is_err() {
        return Ok(());
    }
    let mut reader = BufReader::new(stream.try_clone()?);
    let mut buf = Vec::new();
    while !stop.load(Ordering::SeqCst) {
        match reader.read_until(b'\n', &mut buf) {
            Ok(0) => break,
            Ok(_) => {
                if buf.last() == Some(&b'\n') {
                    let line = String::from_utf8_lossy(&buf).trim_end_matches(['\n', '\r']).to_owned();
                    buf.clear();
                    if !line.trim().is_empty() && tx.send(Event::Line(id, line)).is_err() {
                        break;
                    }
                } else {
                    break;
                }
            }
            Err(e) if matches!(e.kind(), ErrorKind::WouldBlock | ErrorKind::TimedOut | ErrorKind::Interrupted) => {}
            Err(_) => break,
        }
    }
    let _ = tx.send(Event::Disconnect(id));
    let _ = stream.shutdown(Shutdown::Both);
    let _ = writer.join();
    Ok(())
}

fn serve_ws(stream: TcpStream, id: ClientId, tx: Sender<Event>, stop: &AtomicBool) -> io::Result<()> {
    stream.set_nonblocking(false)?;
    let _ = stream.set_nodelay(true);
    let mut ws = tungstenite::accept(stream).map_err(|e| io::Error::other(e.to_string()))?;
    ws.get_mut().set_read_timeout(Some(Duration::from_millis(5)))?;
    let (out_tx, out_rx) = mpsc::channel::<String>();
    if tx.send(Event::Connect(id, out_tx)).is_err() {
        return Ok(());
    }
    let result = ws_pump(&mut ws, id, &tx, &out_rx, stop);
    let _ = tx.send(Event::Disconnect(id));
    let _ = ws.close(None);
    let _ = ws.flush();
    result
}

fn ws_pump(
    ws: &mut WebSocket<TcpStream>,
    id: ClientId,
    tx: &Sender<Event>,
    out_rx: &Receiver<String>,
    stop: &AtomicBool,
) -> io::Result<()> {
    use tungstenite::Error as WsError;
    while !stop.load(Ordering::SeqCst) {
        match ws.read() {
            Ok(Message::Text(text)) => {
                for line in text.lines().filter(|l| !l.trim().is_empty()) {
                    if tx.send(Event::Line(id, line.to_owned())).is_err() {
                        return Ok(());
                    }
                }
            }
            Ok(Message::Binary(bytes)) => {
                let text = String::from_utf8_lossy(&bytes).into_owned();
                if tx.send(Event::Line(id, text)).is_err() {
                    return Ok(());
                }
            }
            Ok(Message::Close(_)) => return Ok(()),
            Ok(_) => {}
            Err(WsError::Io(e)) if matches!(e.kind(), ErrorKind::WouldBlock | ErrorKind::TimedOut) => {}
            Err(WsError::ConnectionClosed | WsError::AlreadyClosed) => return Ok(()),
            Err(e) => return Err(io::Error::other(e.to_string())),
        }
        let mut wrote = false;
        while let Ok(line) = out_rx.try_recv() {
            ws.write(Message::Text(line))
                .map_err(|e| io::Error::other(e.to_string()))?;
            wrote = true;
        }
        if wrote {
            ws.flush().map_err(|e| io::Error::other(e.to_string()))?;
        }
    }
    Ok(())
}

/// Blocking line-protocol client.
pub struct Client {
    writer: TcpStream,
    reader: BufReader<TcpStream>,
    /// Snapshots received while waiting for a response.
    pending: std::collections::VecDeque<Frame>,
    partial: Vec<u8>,
    next_id: u64,
}

#[derive(Debug, thiserror::Error)]
pub enum ClientError {
    #[error(transparent)]
    Io(#[from] io::Error),
    #[error("service sent a line that is not a frame: {0}")]
    BadFrame(String),
    #[error("connection closed")]
    Closed,
    #[error("timed out")]
    Timeout,
}

impl Client {
    pub fn connect(addr: impl ToSocketAddrs) -> Result<Self, ClientError> {
        let stream = TcpStream::connect(addr)?;
        let _ = stream.set_nodelay(true);
        Ok(Self {
            reader: BufReader::new(stream.try_clone()?),
            writer: stream,
            pending: Default::default(),
            partial: Vec::new(),
            next_id: 1,
        })
    }

    pub fn fresh_id(&mut self) -> String {
        let id = format!("c{}", self.next_id);
        self.next_id += 1;
        id
    }

    pub fn send_line(&mut self, line: &str) -> Result<(), ClientError> {
        self.writer.write_all(line.as_bytes())?;
        self.writer.write_all(b"\n")?;
        Ok(())
    }

    pub fn send(&mut self, frame: &Frame) -> Result<(), ClientError> {
        self.send_line(&frame.to_line())
    }

    /// Next frame from the service, waiting at most `timeout`.
    pub fn recv(&mut self, timeout: Duration) -> Result<Frame, ClientError> {
        if let Some(f) = self.pending.pop_front() {
            return Ok(f);
        }
        self.read_frame(timeout)
    }

    fn read_frame(&mut self, timeout: Duration) -> Result<Frame, ClientError> {
        let deadline = Instant::now() + timeout;
        loop {
            let left = deadline.saturating_duration_since(Instant::now());
            if left.is_zero() {
                return Err(ClientError::Timeout);
            }
            self.reader.get_ref().set_read_timeout(Some(left))?;
            match self.reader.read_until(b'\n', &mut self.partial) {
                Ok(0) => return Err(ClientError::Closed),
                Ok(_) if self.partial.last() == Some(&b'\n') => {
                    let buf = std::mem::take(&mut self.partial);
                    let line = String::from_utf8_lossy(&buf);
                    let line = line.trim_end();
                    return Frame::parse(line).map_err(|_| ClientError::BadFrame(line.to_owned()));
                }
                Ok(_) => return Err(ClientError::Closed),
                Err(e) if matches!(e.kind(), ErrorKind::WouldBlock | ErrorKind::TimedOut) => {}
                Err(e) => return Err(e.into()),
            }
        }
    }

    /// Sends a frame and waits for its `Ack` or `Err`; snapshots that arrive
    /// meanwhile are kept for [`Client::recv`].
    pub fn request(&mut self, frame: &Frame, timeout: Duration) -> Result<Frame, ClientError> {
        self.send(frame)?;
        self.response_to(&frame.id, timeout)
    }

    pub fn response_to(&mut self, id: &str, timeout: Duration) -> Result<Frame, ClientError> {
        let deadline = Instant::now() + timeout;
        loop {
            let left = deadline.saturating_duration_since(Instant::now());
            let f = self.read_frame(left)?;
            if matches!(f.kind, FrameKind::Ack | FrameKind::Err) && f.id == id {
                return Ok(f);
            }
            self.pending.push_back(f);
        }
    }
}
