//! Replication of the global layer across cooperating agents.
//!
//! Each agent trains locally, then broadcasts the summed additive delta of its
//! global layer as an encrypted [`GradientFrame`]. Receivers authenticate,
//! decrypt and add the delta in seq order. The sender commits the same delta
//! to the same base weights, so every replica stays bit-identical.
//!
//! Epoch schedule for agents in turn order `[A, B, ...]`:
//!
//! 1. every agent rolls out one episode;
//! 2. every agent in turn applies the deltas broadcast before it in this
//!    epoch, trains offline, commits and broadcasts its own delta;
//! 3. barrier: every agent applies the remaining deltas of this epoch.

pub mod crypto;
pub mod frame;
pub mod transport;

pub use crypto::{open, seal, SharedKey};
pub use frame::{GradientFrame, MsgType, SenderId};
pub use transport::{InProcessBus, InProcessEndpoint, TcpTransport, Transport};

use thiserror::Error;

use crate::dqn::{derive_seed, Agent, AgentError};
use crate::envs::EnvConfig;
use crate::nn::{NnError, ParamTensors, SplitModel};

#[derive(Debug, Error, PartialEq)]
pub enum FederationError {
    #[error("frame failed authentication")]
    Authentication,
    #[error("frame decode failed: {0}")]
    Decode(String),
    #[error("protocol violation: {0}")]
    Protocol(String),
    #[error("transport failure: {0}")]
    Transport(String),
    #[error(transparent)]
    Agent(#[from] AgentError),
}

impl FederationError {
    /// Transport failures abort the epoch but leave every model untouched, so
    /// the epoch can be retried.
    pub fn is_retriable(&self) -> bool {
        matches!(self, FederationError::Transport(_))
    }
}

impl From<NnError> for FederationError {
    fn from(e: NnError) -> Self {
        FederationError::Agent(AgentError::Nn(e))
    }
}

/// Adds a remote delta to the model's global layer.
pub fn apply_remote(model: &mut SplitModel, delta: &ParamTensors) -> Result<(), FederationError> {
    let global = model.global_layer_mut();
    if delta.weights.shape() != global.weights.shape() || delta.bias.len() != global.bias.len() {
        return Err(FederationError::Protocol(format!(
            "delta shape {:?} does not match global layer {:?}",
            delta.weights.shape(),
            global.weights.shape()
        )));
    }
    for (w, d) in global
        .weights
        .as_mut_slice()
        .iter_mut()
        .zip(delta.weights.as_slice())
    {
        *w += d;
    }
    for (b, d) in global.bias.iter_mut().zip(&delta.bias) {
        *b += d;
    }
    Ok(())
}

/// Sets the global layer to `base + delta`, the exact value every receiver
/// holding `base` will compute.
pub fn commit_local(
    model: &mut SplitModel,
    base: ParamTensors,
    delta: &ParamTensors,
) -> Result<(), FederationError> {
    let id = model.global_layer().layer_id.clone();
    model.set_params(&id, base)?;
    apply_remote(model, delta)
}

#[derive(Debug, Clone, PartialEq)]
pub enum SessionEvent {
    Broadcast {
        epoch: u32,
    },
    Applied {
        seq: u64,
        from: SenderId,
        epoch: u32,
    },
    Trained {
        epoch: u32,
    },
}

pub struct FederationSession {
    agent_id: String,
    sender: SenderId,
    key: SharedKey,
    transport: Box<dyn Transport>,
    last_applied_seq: u64,
    events: Vec<SessionEvent>,
}

impl std::fmt::Debug for FederationSession {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("FederationSession")
            .field("agent_id", &self.agent_id)
            .field("last_applied_seq", &self.last_applied_seq)
            .finish_non_exhaustive()
    }
}

impl FederationSession {
    /// Announces the agent to the forwarder.
    pub fn join(
        agent_id: &str,
        key: SharedKey,
        mut transport: Box<dyn Transport>,
    ) -> Result<Self, FederationError> {
        let sender = SenderId::from_name(agent_id)?;
        transport.send(&transport::hello_bytes(sender))?;
        Ok(Self {
            agent_id: agent_id.to_string(),
            sender,
            key,
            transport,
            last_applied_seq: 0,
            events: Vec::new(),
        })
    }

    pub fn agent_id(&self) -> &str {
        &self.agent_id
    }

    pub fn sender(&self) -> SenderId {
        self.sender
    }

    pub fn last_applied_seq(&self) -> u64 {
        self.last_applied_seq
    }

    pub fn events(&self) -> &[SessionEvent] {
        &self.events
    }

    pub fn broadcast(
        &mut self,
        epoch: u32,
        layer_id: &str,
        delta: &ParamTensors,
    ) -> Result<(), FederationError> {
        let frame = seal(delta, layer_id, &self.key, epoch, self.sender);
        self.transport.send(&frame.encode())?;
        self.events.push(SessionEvent::Broadcast { epoch });
        Ok(())
    }

    /// Receives exactly `count` deltas and applies them in seq order. Nothing
    /// is applied unless all of them arrive and verify.
    pub fn receive_and_apply(
        &mut self,
        model: &mut SplitModel,
        count: usize,
    ) -> Result<(), FederationError> {
        let global_id = model.global_layer().layer_id.clone();
        let mut pending = Vec::with_capacity(count);
        let mut last = self.last_applied_seq;
        while pending.len() < count {
            let frame = GradientFrame::decode(&self.transport.recv()?)?;
            match frame.msg_type {
                MsgType::Delta => {}
                MsgType::EpochDone => continue,
                MsgType::Hello => {
                    return Err(FederationError::Protocol("HELLO forwarded to agent".into()))
                }
            }
            if frame.sender_id == self.sender {
                return Err(FederationError::Protocol("received own broadcast".into()));
            }
            if frame.seq <= last {
                return Err(FederationError::Protocol(format!(
                    "seq {} not above {}",
                    frame.seq, last
                )));
            }
            if frame.layer_id != global_id {
                return Err(FederationError::Protocol(format!(
                    "delta for layer {:?}, global layer is {:?}",
                    frame.layer_id, global_id
                )));
            }
            let delta = open(&frame, &self.key)?;
            last = frame.seq;
            pending.push((frame, delta));
        }
        let global = model.global_layer();
        if let Some((_, d)) = pending.iter().find(|(_, d)| {
            d.weights.shape() != global.weights.shape() || d.bias.len() != global.bias.len()
        }) {
            return Err(FederationError::Protocol(format!(
                "delta shape {:?} does not match global layer",
                d.weights.shape()
            )));
        }
        for (frame, delta) in pending {
            apply_remote(model, &delta)?;
            self.last_applied_seq = frame.seq;
            self.events.push(SessionEvent::Applied {
                seq: frame.seq,
                from: frame.sender_id,
                epoch: frame.epoch,
            });
        }
        Ok(())
    }

    pub fn close(&mut self) -> Result<(), FederationError> {
        self.transport.close()
    }
}

/// One cooperating agent: its learner, its private environment, and its
/// connection to the forwarder.
#[derive(Debug)]
pub struct Participant {
    pub agent: Agent,
    pub env: EnvConfig,
    /// Seed from which per-epoch environment seeds are derived.
    pub seed: u64,
    pub session: FederationSession,
}

pub fn env_seed(agent_seed: u64, epoch: u32) -> u64 {
    derive_seed(agent_seed, &format!("env/{epoch}"))
}

/// Runs one epoch of the turn-based schedule. Returns each participant's
/// episode return, in turn order.
pub fn run_epoch(
    participants: &mut [Participant],
    epoch: u32,
) -> Result<Vec<f64>, FederationError> {
    let n = participants.len();
    let mut returns = Vec::with_capacity(n);
    for p in participants.iter_mut() {
        let r = p.agent.rollout(&p.env, env_seed(p.seed, epoch))?;
        returns.push(r.episode_return);
    }
    for (i, p) in participants.iter_mut().enumerate() {
        p.session.receive_and_apply(&mut p.agent.model, i)?;
        let base = p.agent.model.global_layer().params();
        let global_id = p.agent.model.global_layer().layer_id.clone();
        let report = p.agent.train_offline()?;
        p.session.events.push(SessionEvent::Trained { epoch });
        commit_local(&mut p.agent.model, base, &report.global_delta)?;
        p.session
            .broadcast(epoch, &global_id, &report.global_delta)?;
    }
    for (i, p) in participants.iter_mut().enumerate() {
        p.session.receive_and_apply(&mut p.agent.model, n - 1 - i)?;
        p.agent.end_epoch();
    }
    Ok(returns)
}

/// True when every participant's global layer matches the first one bit for bit.
pub fn globals_identical<'a, I>(models: I) -> bool
where
    I: IntoIterator<Item = &'a SplitModel>,
{
    let mut iter = models.into_iter();
    let first: Vec<u64> = match iter.next() {
        Some(m) => m
            .global_layer()
            .params()
            .values()
            .map(f64::to_bits)
            .collect(),
        None => return true,
    };
    iter.all(|m| {
        m.global_layer()
            .params()
            .values()
            .map(f64::to_bits)
            .eq(first.iter().copied())
    })
}
