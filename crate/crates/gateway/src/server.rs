//! TCP front end. Each connection gets its own session and thread. A
//! connection whose first bytes are `GET ` is upgraded to a WebSocket and
//! carries the same messages as text frames; anything else is treated as
//! newline-delimited JSON.

use std::collections::HashMap;
use std::io::{self, BufRead, BufReader, Read, Write};
use std::net::{Shutdown, SocketAddr, TcpListener, TcpStream, ToSocketAddrs};
use std::sync::atomic::{AtomicBool, AtomicU64, Ordering};
use std::sync::{Arc, Mutex};
use std::thread::JoinHandle;
use std::time::Duration;

use tungstenite::Message;

use trileg_core::config::Config;

use crate::protocol::ServerMessage;
use crate::session::Session;

/// Longest accepted NDJSON line, bytes.
const MAX_LINE: usize = 1 << 20;
const SNIFF_TIMEOUT: Duration = Duration::from_millis(200);

#[derive(Default)]
struct Shared {
    stopping: AtomicBool,
    next_id: AtomicU64,
    live: Mutex<HashMap<u64, TcpStream>>,
}

pub struct Server {
    listener: TcpListener,
    config: Arc<Config>,
    shared: Arc<Shared>,
}

/// Stops a running [`Server`] from another thread.
#[derive(Clone)]
pub struct ShutdownHandle {
    addr: SocketAddr,
    shared: Arc<Shared>,
}

impl ShutdownHandle {
    pub fn shutdown(&self) {
        if !self.shared.stopping.swap(true, Ordering::SeqCst) {
            // wake the accept loop
            let _ = TcpStream::connect(self.addr);
        }
    }
}

impl Server {
    pub fn bind(addr: impl ToSocketAddrs, config: Config) -> io::Result<Self> {
        let listener = TcpListener::bind(addr)?;
        Ok(Self { listener, config: Arc::new(config), shared: Arc::default() })
    }

    pub fn local_addr(&self) -> io::Result<SocketAddr> {
        self.listener.local_addr()
    }

    pub fn shutdown_handle(&self) -> io::Result<ShutdownHandle> {
        Ok(ShutdownHandle { addr: self.local_addr()?, shared: self.shared.clone() })
    }

    /// Serves until shut down, then closes every connection and waits for
    /// their sessions to flush.
    pub fn run(self) -> io::Result<()> {
        let mut workers: Vec<JoinHandle<()>> = Vec::new();
        for stream in self.listener.incoming() {
            if self.shared.stopping.load(Ordering::SeqCst) {
                break;
            }
            let stream = match stream {
                Ok(s) => s,
                Err(e) => {
                    log::warn!("accept failed: {e}");
                    continue;
                }
            };
            let id = self.shared.next_id.fetch_add(1, Ordering::SeqCst);
            match stream.try_clone() {
                Ok(clone) => {
                    self.shared.live.lock().expect("connection table").insert(id, clone);
                }
                Err(e) => {
                    log::warn!("connection {id}: {e}");
                    continue;
                }
            }
            let config = self.config.clone();
            let shared = self.shared.clone();
            workers.push(std::thread::spawn(move || {
                if let Err(e) = serve_connection(stream, id, config) {
                    log::info!("connection {id} closed: {e}");
                }
                shared.live.lock().expect("connection table").remove(&id);
            }));
            workers.retain(|w| !w.is_finished());
        }
        for (_, s) in self.shared.live.lock().expect("connection table").drain() {
            let _ = s.shutdown(Shutdown::Both);
        }
        for w in workers {
            let _ = w.join();
        }
        Ok(())
    }

    /// Runs the server on a background thread.
    pub fn spawn(self) -> io::Result<RunningServer> {
        let handle = self.shutdown_handle()?;
        let thread = std::thread::spawn(move || self.run());
        Ok(RunningServer { handle, thread: Some(thread) })
    }
}

pub struct RunningServer {
    handle: ShutdownHandle,
    thread: Option<JoinHandle<io::Result<()>>>,
}

impl RunningServer {
    pub fn addr(&self) -> SocketAddr {
        self.handle.addr
    }

    /// Shuts down and waits until every open recording is flushed.
    pub fn stop(mut self) -> io::Result<()> {
        self.join()
    }

    fn join(&mut self) -> io::Result<()> {
        self.handle.shutdown();
        match self.thread.take() {
            Some(t) => t.join().unwrap_or_else(|_| Err(io::Error::other("server thread panicked"))),
            None => Ok(()),
        }
    }
}

impl Drop for RunningServer {
    fn drop(&mut self) {
        let _ = self.join();
    }
}

fn serve_connection(stream: TcpStream, id: u64, config: Arc<Config>) -> anyhow::Result<()> {
    let mut session = Session::new(id, config)?;
    log::info!("connection {id} from {:?}, seed {}", stream.peer_addr().ok(), session.seed());
    if is_http_upgrade(&stream)? {
        serve_websocket(stream, &mut session)
    } else {
        serve_ndjson(stream, &mut session)
    }
}

/// Peeks at the first bytes without consuming them. NDJSON clients may wait
/// for the initial observation before writing, so silence past
/// [`SNIFF_TIMEOUT`] means NDJSON.
fn is_http_upgrade(stream: &TcpStream) -> io::Result<bool> {
    let mut buf = [0u8; 4];
    stream.set_read_timeout(Some(SNIFF_TIMEOUT))?;
    let verdict = loop {
        let n = match stream.peek(&mut buf) {
            Ok(n) => n,
            Err(e) if matches!(e.kind(), io::ErrorKind::WouldBlock | io::ErrorKind::TimedOut) => break false,
            Err(e) => return Err(e),
        };
        if n == 0 || buf[..n] != b"GET "[..n] {
            break false;
        }
        if n == 4 {
            break true;
        }
        std::thread::sleep(Duration::from_millis(1));
    };
    stream.set_read_timeout(None)?;
    Ok(verdict)
}

fn serve_ndjson(stream: TcpStream, session: &mut Session) -> anyhow::Result<()> {
    let mut writer = io::BufWriter::new(stream.try_clone()?);
    let mut reader = BufReader::new(stream);
    send_line(&mut writer, &session.observe())?;
    let mut line = Vec::new();
    loop {
        line.clear();
        let n = reader.by_ref().take(MAX_LINE as u64 + 1).read_until(b'\n', &mut line)?;
        if n == 0 {
            return Ok(());
        }
        let reply = if line.len() > MAX_LINE {
            // skip the rest of the oversized line
            while !line.ends_with(b"\n") {
                line.clear();
                if reader.by_ref().take(MAX_LINE as u64).read_until(b'\n', &mut line)? == 0 {
                    return Ok(());
                }
            }
            ServerMessage::error(format!("line exceeds {MAX_LINE} bytes"))
        } else {
            match std::str::from_utf8(&line) {
                Ok(text) if text.trim().is_empty() => continue,
                Ok(text) => session.handle_line(text.trim()),
                Err(_) => ServerMessage::error("line is not UTF-8"),
            }
        };
        send_line(&mut writer, &reply)?;
    }
}

fn send_line(w: &mut impl Write, msg: &ServerMessage) -> io::Result<()> {
    w.write_all(msg.to_line().as_bytes())?;
    w.write_all(b"\n")?;
    w.flush()
}

fn serve_websocket(stream: TcpStream, session: &mut Session) -> anyhow::Result<()> {
    let mut ws = tungstenite::accept(stream).map_err(|e| anyhow::anyhow!("websocket handshake: {e}"))?;
    ws.send(Message::text(session.observe().to_line()))?;
    loop {
        let reply = match ws.read() {
            Ok(Message::Text(text)) => session.handle_line(text.as_str()),
            Ok(Message::Binary(_)) => ServerMessage::error("binary frames are not supported"),
            Ok(Message::Close(_)) | Err(tungstenite::Error::ConnectionClosed) => return Ok(()),
            Ok(_) => continue,
            Err(e) => return Err(e.into()),
        };
        ws.send(Message::text(reply.to_line()))?;
    }
}
