use std::fmt;

use thiserror::Error;

use crate::federation::frame::{patch_seq, GradientFrame, MsgType, SenderId};

#[derive(Debug, Error, PartialEq)]
pub enum ForwardError {
    #[error("malformed frame: {0}")]
    Malformed(String),
    #[error("sender {0} is already connected")]
    DuplicateSender(SenderId),
    #[error("session already has all expected agents")]
    SessionFull,
    #[error("expected HELLO as first frame")]
    ExpectedHello,
    #[error("unexpected HELLO on an established connection")]
    UnexpectedHello,
    #[error("frame sender {claimed} does not match connection {actual}")]
    SenderMismatch { claimed: SenderId, actual: SenderId },
    #[error("sender {0} is not registered")]
    NotRegistered(SenderId),
}

/// Header-only record of one forwarded frame.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct AuditRecord {
    pub seq: u64,
    pub epoch: u32,
    pub sender: SenderId,
    pub msg_type: MsgType,
    pub payload_len: usize,
}

impl fmt::Display for AuditRecord {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(
            f,
            "{} {} {} {} {}",
            self.seq,
            self.epoch,
            self.sender,
            self.msg_type.name(),
            self.payload_len
        )
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Delivery {
    pub to: SenderId,
    pub bytes: Vec<u8>,
}

/// Forwarding state of one session: membership, the global seq counter, and
/// the audit trail. Holds no key material and never inspects payloads beyond
/// their length.
#[derive(Debug)]
pub struct SessionRegistry {
    expected: usize,
    members: Vec<SenderId>,
    next_seq: u64,
    held: Vec<(SenderId, Vec<u8>)>,
    audit: Vec<AuditRecord>,
    /// Set once a complete session loses a member; no joins until empty.
    draining: bool,
}

impl SessionRegistry {
    pub fn new(expected_agents: usize) -> Self {
        Self {
            expected: expected_agents,
            members: Vec::new(),
            next_seq: 1,
            held: Vec::new(),
            audit: Vec::new(),
            draining: false,
        }
    }

    pub fn expected(&self) -> usize {
        self.expected
    }

    pub fn members(&self) -> &[SenderId] {
        &self.members
    }

    pub fn is_complete(&self) -> bool {
        self.members.len() == self.expected
    }

    pub fn next_seq(&self) -> u64 {
        self.next_seq
    }

    pub fn audit(&self) -> &[AuditRecord] {
        &self.audit
    }

    /// Registers the sender of a HELLO frame. Frames held while the session
    /// was incomplete are released once the last agent joins.
    pub fn join(&mut self, hello: &[u8]) -> Result<(SenderId, Vec<Delivery>), ForwardError> {
        let frame =
            GradientFrame::decode(hello).map_err(|e| ForwardError::Malformed(e.to_string()))?;
        if frame.msg_type != MsgType::Hello {
            return Err(ForwardError::ExpectedHello);
        }
        let id = frame.sender_id;
        if self.members.contains(&id) {
            return Err(ForwardError::DuplicateSender(id));
        }
        if self.is_complete() || self.draining {
            return Err(ForwardError::SessionFull);
        }
        self.members.push(id);
        let mut out = Vec::new();
        if self.is_complete() {
            for (from, bytes) in std::mem::take(&mut self.held) {
                out.extend(self.forward(from, bytes)?);
            }
        }
        Ok((id, out))
    }

    /// Accepts a frame from an established connection and returns the copies
    /// to deliver, in seq order.
    pub fn ingest(&mut self, from: SenderId, bytes: &[u8]) -> Result<Vec<Delivery>, ForwardError> {
        if !self.members.contains(&from) {
            return Err(ForwardError::NotRegistered(from));
        }
        let frame =
            GradientFrame::decode(bytes).map_err(|e| ForwardError::Malformed(e.to_string()))?;
        if frame.msg_type == MsgType::Hello {
            return Err(ForwardError::UnexpectedHello);
        }
        if frame.sender_id != from {
            return Err(ForwardError::SenderMismatch {
                claimed: frame.sender_id,
                actual: from,
            });
        }
        // A session that was complete keeps forwarding between the agents
        // still connected after one of them dropped out.
        if !self.is_complete() && !self.draining {
            self.held.push((from, bytes.to_vec()));
            return Ok(Vec::new());
        }
        self.forward(from, bytes.to_vec())
    }

    fn forward(
        &mut self,
        from: SenderId,
        mut bytes: Vec<u8>,
    ) -> Result<Vec<Delivery>, ForwardError> {
        let frame =
            GradientFrame::decode(&bytes).map_err(|e| ForwardError::Malformed(e.to_string()))?;
        let seq = self.next_seq;
        self.next_seq += 1;
        patch_seq(&mut bytes, seq);
        self.audit.push(AuditRecord {
            seq,
            epoch: frame.epoch,
            sender: from,
            msg_type: frame.msg_type,
            payload_len: frame.payload_len(),
        });
        Ok(self
            .members
            .iter()
            .filter(|&&m| m != from)
            .map(|&to| Delivery {
                to,
                bytes: bytes.clone(),
            })
            .collect())
    }

    /// Removes a member. Returns true when this ended a complete session, in
    /// which case the registry is reset for the next one.
    pub fn leave(&mut self, id: SenderId) -> bool {
        if !self.members.contains(&id) {
            return false;
        }
        if self.is_complete() {
            self.draining = true;
        }
        self.members.retain(|&m| m != id);
        self.held.retain(|(from, _)| *from != id);
        if self.draining && self.members.is_empty() {
            self.draining = false;
            self.next_seq = 1;
            self.held.clear();
            return true;
        }
        false
    }
}
