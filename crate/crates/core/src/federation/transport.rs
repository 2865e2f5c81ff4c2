use std::collections::{HashMap, VecDeque};
use std::io;
use std::net::{Shutdown, TcpStream, ToSocketAddrs};
use std::sync::{Arc, Mutex};
use std::time::Duration;

use super::frame::{read_frame, write_frame, GradientFrame, MsgType, SenderId};
use super::FederationError;
use crate::blackboard::{AuditRecord, SessionRegistry};

/// Carries encoded frames between an agent and the forwarder.
pub trait Transport: Send {
    fn send(&mut self, frame: &[u8]) -> Result<(), FederationError>;

    /// Next frame addressed to this agent, in seq order.
    fn recv(&mut self) -> Result<Vec<u8>, FederationError>;

    /// Leaves the session. The default does nothing.
    fn close(&mut self) -> Result<(), FederationError> {
        Ok(())
    }
}

#[derive(Debug)]
struct BusInner {
    registry: SessionRegistry,
    queues: HashMap<SenderId, VecDeque<Vec<u8>>>,
    observed: Option<Vec<Vec<u8>>>,
}

/// Forwarder living in the same process. Routing goes through the same
/// [`SessionRegistry`] as the networked Black Board.
#[derive(Debug, Clone)]
pub struct InProcessBus {
    inner: Arc<Mutex<BusInner>>,
}

impl InProcessBus {
    pub fn new(expected_agents: usize) -> Self {
        Self::build(expected_agents, None)
    }

    /// Like [`InProcessBus::new`] but keeps a copy of every byte string
    /// entering or leaving the forwarder.
    pub fn recording(expected_agents: usize) -> Self {
        Self::build(expected_agents, Some(Vec::new()))
    }

    fn build(expected: usize, observed: Option<Vec<Vec<u8>>>) -> Self {
        Self {
            inner: Arc::new(Mutex::new(BusInner {
                registry: SessionRegistry::new(expected),
                queues: HashMap::new(),
                observed,
            })),
        }
    }

    pub fn endpoint(&self) -> InProcessEndpoint {
        InProcessEndpoint {
            bus: self.clone(),
            id: None,
        }
    }

    pub fn observed(&self) -> Vec<Vec<u8>> {
        self.inner
            .lock()
            .unwrap()
            .observed
            .clone()
            .unwrap_or_default()
    }

    pub fn audit(&self) -> Vec<AuditRecord> {
        self.inner.lock().unwrap().registry.audit().to_vec()
    }
}

#[derive(Debug)]
pub struct InProcessEndpoint {
    bus: InProcessBus,
    id: Option<SenderId>,
}

impl Transport for InProcessEndpoint {
    fn send(&mut self, frame: &[u8]) -> Result<(), FederationError> {
        let mut g = self.bus.inner.lock().unwrap();
        if let Some(obs) = g.observed.as_mut() {
            obs.push(frame.to_vec());
        }
        let deliveries = match self.id {
            None => {
                let (id, released) = g
                    .registry
                    .join(frame)
                    .map_err(|e| FederationError::Transport(e.to_string()))?;
                self.id = Some(id);
                g.queues.entry(id).or_default();
                released
            }
            Some(id) => g
                .registry
                .ingest(id, frame)
                .map_err(|e| FederationError::Transport(e.to_string()))?,
        };
        for d in deliveries {
            if let Some(obs) = g.observed.as_mut() {
                obs.push(d.bytes.clone());
            }
            g.queues.entry(d.to).or_default().push_back(d.bytes);
        }
        Ok(())
    }

    fn recv(&mut self) -> Result<Vec<u8>, FederationError> {
        let id = self
            .id
            .ok_or_else(|| FederationError::Transport("endpoint has not joined".into()))?;
        let mut g = self.bus.inner.lock().unwrap();
        g.queues
            .get_mut(&id)
            .and_then(VecDeque::pop_front)
            .ok_or_else(|| FederationError::Transport("no frame pending".into()))
    }

    fn close(&mut self) -> Result<(), FederationError> {
        if let Some(id) = self.id.take() {
            let mut g = self.bus.inner.lock().unwrap();
            g.registry.leave(id);
            g.queues.remove(&id);
        }
        Ok(())
    }
}

/// TCP connection to a Black Board.
#[derive(Debug)]
pub struct TcpTransport {
    stream: TcpStream,
}

impl TcpTransport {
    pub fn connect<A: ToSocketAddrs>(addr: A, timeout: Duration) -> Result<Self, FederationError> {
        let transport_err = |e: io::Error| FederationError::Transport(e.to_string());
        let addr = addr
            .to_socket_addrs()
            .map_err(transport_err)?
            .next()
            .ok_or_else(|| FederationError::Transport("address did not resolve".into()))?;
        let stream = TcpStream::connect_timeout(&addr, timeout).map_err(transport_err)?;
        stream.set_nodelay(true).map_err(transport_err)?;
        stream
            .set_read_timeout(Some(timeout))
            .map_err(transport_err)?;
        Ok(Self { stream })
    }
}

impl Transport for TcpTransport {
    fn send(&mut self, frame: &[u8]) -> Result<(), FederationError> {
        write_frame(&mut self.stream, frame).map_err(|e| FederationError::Transport(e.to_string()))
    }

    fn recv(&mut self) -> Result<Vec<u8>, FederationError> {
        match read_frame(&mut self.stream) {
            Ok(Some(b)) => Ok(b),
            Ok(None) => Err(FederationError::Transport(
                "forwarder closed the connection".into(),
            )),
            Err(e) => Err(FederationError::Transport(e.to_string())),
        }
    }

    /// Half-closes and waits for the forwarder to close its side, which it
    /// does only after it has processed the departure.
    fn close(&mut self) -> Result<(), FederationError> {
        let _ = self.stream.shutdown(Shutdown::Write);
        loop {
            match read_frame(&mut self.stream) {
                Ok(Some(bytes)) => {
                    let kind = GradientFrame::decode(&bytes).map(|f| f.msg_type).ok();
                    log::warn!("discarding {kind:?} frame received while closing");
                }
                Ok(None) => return Ok(()),
                Err(e) if e.kind() == io::ErrorKind::ConnectionReset => return Ok(()),
                Err(e) => return Err(FederationError::Transport(e.to_string())),
            }
        }
    }
}

/// HELLO frame for `id`, encoded.
pub(crate) fn hello_bytes(id: SenderId) -> Vec<u8> {
    let f = GradientFrame::hello(id);
    debug_assert_eq!(f.msg_type, MsgType::Hello);
    f.encode()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::federation::crypto::{seal, SharedKey};
    use crate::nn::ParamTensors;

    fn id(n: &str) -> SenderId {
        SenderId::from_name(n).unwrap()
    }

    #[test]
    fn in_process_routes_to_others_only() {
        let bus = InProcessBus::recording(2);
        let mut a = bus.endpoint();
        let mut b = bus.endpoint();
        a.send(&hello_bytes(id("A"))).unwrap();
        b.send(&hello_bytes(id("B"))).unwrap();
        let key = SharedKey::generate();
        let frame = seal(&ParamTensors::zeros(2, 2), "2", &key, 0, id("A"));
        a.send(&frame.encode()).unwrap();
        assert!(a.recv().is_err());
        let got = GradientFrame::decode(&b.recv().unwrap()).unwrap();
        assert_eq!(got.seq, 1);
        assert_eq!(bus.observed().len(), 4);
        assert_eq!(bus.audit().len(), 1);
    }

    #[test]
    fn recv_before_join_fails() {
        let bus = InProcessBus::new(2);
        assert!(bus.endpoint().recv().is_err());
    }
}
