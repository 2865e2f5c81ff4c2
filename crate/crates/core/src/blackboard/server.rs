use std::collections::HashMap;
use std::fs::{File, OpenOptions};
use std::io::{self, BufWriter, Write};
use std::net::{Shutdown, SocketAddr, TcpListener, TcpStream};
use std::path::{Path, PathBuf};
use std::sync::atomic::{AtomicBool, AtomicUsize, Ordering};
use std::sync::mpsc::{sync_channel, Receiver, SyncSender};
use std::sync::{Arc, Mutex};
use std::thread::{self, JoinHandle};

use log::{debug, info, warn};

use super::registry::{AuditRecord, Delivery, SessionRegistry};
use crate::federation::frame::{read_frame, write_frame, SenderId};

/// Frames buffered per receiving connection before senders block.
pub const DEFAULT_QUEUE_DEPTH: usize = 1024;

#[derive(Debug, Clone)]
pub struct BlackboardConfig {
    pub bind: String,
    pub expected_agents: usize,
    pub audit_path: Option<PathBuf>,
    pub queue_depth: usize,
    /// Stop after this many complete sessions have ended. `None` runs forever.
    pub max_sessions: Option<usize>,
}

impl BlackboardConfig {
    pub fn new(bind: impl Into<String>, expected_agents: usize) -> Self {
        Self {
            bind: bind.into(),
            expected_agents,
            audit_path: None,
            queue_depth: DEFAULT_QUEUE_DEPTH,
            max_sessions: None,
        }
    }
}

struct Shared {
    registry: SessionRegistry,
    outboxes: HashMap<SenderId, SyncSender<Vec<u8>>>,
    audit_file: Option<BufWriter<File>>,
    audit_written: usize,
}

impl Shared {
    /// Pushes deliveries while the caller holds the lock, so every receiver
    /// sees frames in seq order.
    fn dispatch(&mut self, deliveries: Vec<Delivery>) {
        for d in deliveries {
            if let Some(tx) = self.outboxes.get(&d.to) {
                if tx.send(d.bytes).is_err() {
                    warn!("receiver {} went away", d.to);
                }
            }
        }
        self.flush_audit();
    }

    fn flush_audit(&mut self) {
        let records = &self.registry.audit()[self.audit_written..];
        if let Some(f) = self.audit_file.as_mut() {
            for r in records {
                if let Err(e) = writeln!(f, "{r}") {
                    warn!("audit write failed: {e}");
                }
            }
            let _ = f.flush();
        }
        self.audit_written = self.registry.audit().len();
    }
}

/// Keyless forwarder. Assigns a single global seq to every frame and fans it
/// out to all other members of the session.
pub struct Blackboard {
    listener: TcpListener,
    config: BlackboardConfig,
    shared: Arc<Mutex<Shared>>,
    stop: Arc<AtomicBool>,
    sessions_done: Arc<AtomicUsize>,
}

impl Blackboard {
    pub fn bind(config: BlackboardConfig) -> io::Result<Self> {
        if config.expected_agents < 2 {
            return Err(io::Error::new(
                io::ErrorKind::InvalidInput,
                "a session needs at least 2 agents",
            ));
        }
        let listener = TcpListener::bind(&config.bind)?;
        let audit_file = match &config.audit_path {
            Some(p) => Some(open_audit(p)?),
            None => None,
        };
        Ok(Self {
            listener,
            shared: Arc::new(Mutex::new(Shared {
                registry: SessionRegistry::new(config.expected_agents),
                outboxes: HashMap::new(),
                audit_file,
                audit_written: 0,
            })),
            config,
            stop: Arc::new(AtomicBool::new(false)),
            sessions_done: Arc::new(AtomicUsize::new(0)),
        })
    }

    pub fn local_addr(&self) -> io::Result<SocketAddr> {
        self.listener.local_addr()
    }

    /// Accept loop. Returns once `max_sessions` sessions have ended or the
    /// handle requested shutdown.
    pub fn serve(self) -> io::Result<()> {
        let addr = self.local_addr()?;
        info!(
            "blackboard listening on {addr}, {} agents per session",
            self.config.expected_agents
        );
        let mut workers = Vec::new();
        for conn in self.listener.incoming() {
            if self.stop.load(Ordering::SeqCst) {
                break;
            }
            let stream = match conn {
                Ok(s) => s,
                Err(e) => {
                    warn!("accept failed: {e}");
                    continue;
                }
            };
            let shared = Arc::clone(&self.shared);
            let stop = Arc::clone(&self.stop);
            let done = Arc::clone(&self.sessions_done);
            let depth = self.config.queue_depth;
            let max_sessions = self.config.max_sessions;
            workers.push(thread::spawn(move || {
                handle_connection(stream, shared, depth, &done);
                if let Some(max) = max_sessions {
                    if done.load(Ordering::SeqCst) >= max {
                        stop.store(true, Ordering::SeqCst);
                        let _ = TcpStream::connect(addr);
                    }
                }
            }));
            workers.retain(|w: &JoinHandle<()>| !w.is_finished());
        }
        // Connection threads still running belong to agents that never
        // disconnected; they are detached.
        for w in workers.into_iter().filter(|w| w.is_finished()) {
            let _ = w.join();
        }
        Ok(())
    }

    /// Runs the accept loop on a background thread.
    pub fn spawn(self) -> io::Result<BlackboardHandle> {
        let addr = self.local_addr()?;
        let stop = Arc::clone(&self.stop);
        let shared = Arc::clone(&self.shared);
        let join = thread::spawn(move || self.serve());
        Ok(BlackboardHandle {
            addr,
            stop,
            shared,
            join: Some(join),
        })
    }
}

fn open_audit(path: &Path) -> io::Result<BufWriter<File>> {
    Ok(BufWriter::new(
        OpenOptions::new().create(true).append(true).open(path)?,
    ))
}

pub struct BlackboardHandle {
    addr: SocketAddr,
    stop: Arc<AtomicBool>,
    shared: Arc<Mutex<Shared>>,
    join: Option<JoinHandle<io::Result<()>>>,
}

impl BlackboardHandle {
    pub fn addr(&self) -> SocketAddr {
        self.addr
    }

    /// Snapshot of every header forwarded so far.
    pub fn audit(&self) -> Vec<AuditRecord> {
        self.shared.lock().unwrap().registry.audit().to_vec()
    }

    pub fn shutdown(mut self) -> io::Result<()> {
        self.stop_and_join()
    }

    fn stop_and_join(&mut self) -> io::Result<()> {
        self.stop.store(true, Ordering::SeqCst);
        let _ = TcpStream::connect(self.addr);
        match self.join.take() {
            Some(j) => j
                .join()
                .map_err(|_| io::Error::other("blackboard thread panicked"))?,
            None => Ok(()),
        }
    }
}

impl Drop for BlackboardHandle {
    fn drop(&mut self) {
        let _ = self.stop_and_join();
    }
}

fn handle_connection(
    stream: TcpStream,
    shared: Arc<Mutex<Shared>>,
    depth: usize,
    sessions_done: &AtomicUsize,
) {
    let peer = stream.peer_addr().ok();
    let _ = stream.set_nodelay(true);
    let mut reader = match stream.try_clone() {
        Ok(s) => s,
        Err(_) => return,
    };

    let hello = match read_frame(&mut reader) {
        Ok(Some(b)) => b,
        _ => return,
    };

    let (tx, rx) = sync_channel::<Vec<u8>>(depth);
    let id = {
        let mut g = shared.lock().unwrap();
        match g.registry.join(&hello) {
            Ok((id, released)) => {
                info!("agent {id} joined from {peer:?}");
                g.outboxes.insert(id, tx);
                g.dispatch(released);
                id
            }
            Err(e) => {
                warn!("rejecting connection from {peer:?}: {e}");
                let _ = stream.shutdown(Shutdown::Both);
                return;
            }
        }
    };

    let writer = {
        let stream = match stream.try_clone() {
            Ok(s) => s,
            Err(_) => return,
        };
        thread::spawn(move || write_loop(stream, rx))
    };

    loop {
        match read_frame(&mut reader) {
            Ok(Some(bytes)) => {
                let mut g = shared.lock().unwrap();
                match g.registry.ingest(id, &bytes) {
                    Ok(deliveries) => {
                        debug!("frame from {id}: {} deliveries", deliveries.len());
                        g.dispatch(deliveries);
                    }
                    Err(e) => {
                        warn!("dropping {id}: {e}");
                        break;
                    }
                }
            }
            Ok(None) => break,
            Err(e) => {
                warn!("read from {id} failed: {e}");
                break;
            }
        }
    }

    {
        let mut g = shared.lock().unwrap();
        g.outboxes.remove(&id);
        if g.registry.leave(id) {
            info!("session ended");
            sessions_done.fetch_add(1, Ordering::SeqCst);
        }
    }
    // Writer exits once its channel closes, then shuts the socket down so the
    // agent observes EOF only after the registry processed the disconnect.
    let _ = writer.join();
}

fn write_loop(mut stream: TcpStream, rx: Receiver<Vec<u8>>) {
    for bytes in rx {
        if write_frame(&mut stream, &bytes).is_err() {
            break;
        }
    }
    let _ = stream.shutdown(Shutdown::Both);
}
