//! Wire encoding of [`GradientFrame`].
//!
//! ```text
//! u32 LE length of everything after this field
//! u8  version (= 1)
//! u8  msg_type
//! 16B sender_id
//! u32 LE epoch
//! u64 LE seq (0 on send, filled in by the forwarder)
//! u16 LE layer_id length + bytes
//! u16 LE nonce length + bytes
//! remaining: ciphertext || 16-byte tag (empty for HELLO)
//! ```

use std::fmt;
use std::io::{self, Read, Write};

use super::FederationError;

pub const FRAME_VERSION: u8 = 1;
pub const TAG_LEN: usize = 16;
/// Byte offset of the seq field, counted from the start of the length prefix.
pub const SEQ_OFFSET: usize = 4 + 1 + 1 + 16 + 4;
pub const MAX_FRAME_LEN: usize = 16 * 1024 * 1024;

const FIXED_HEADER_LEN: usize = SEQ_OFFSET + 8;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum MsgType {
    Hello = 1,
    Delta = 2,
    EpochDone = 3,
}

impl MsgType {
    pub fn from_byte(b: u8) -> Option<Self> {
        match b {
            1 => Some(MsgType::Hello),
            2 => Some(MsgType::Delta),
            3 => Some(MsgType::EpochDone),
            _ => None,
        }
    }

    pub fn name(self) -> &'static str {
        match self {
            MsgType::Hello => "HELLO",
            MsgType::Delta => "DELTA",
            MsgType::EpochDone => "EPOCH_DONE",
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct SenderId(pub [u8; 16]);

impl SenderId {
    /// Agent name, UTF-8, zero padded. Names longer than 16 bytes are rejected.
    pub fn from_name(name: &str) -> Result<Self, FederationError> {
        let bytes = name.as_bytes();
        if bytes.is_empty() || bytes.len() > 16 {
            return Err(FederationError::Protocol(format!(
                "agent name {name:?} must be 1..=16 bytes"
            )));
        }
        let mut id = [0u8; 16];
        id[..bytes.len()].copy_from_slice(bytes);
        Ok(SenderId(id))
    }

    pub fn to_hex(&self) -> String {
        hex::encode(self.0)
    }
}

impl fmt::Display for SenderId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.to_hex())
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct GradientFrame {
    pub version: u8,
    pub msg_type: MsgType,
    pub sender_id: SenderId,
    pub epoch: u32,
    pub seq: u64,
    pub layer_id: String,
    pub nonce: Vec<u8>,
    pub ciphertext: Vec<u8>,
    pub auth_tag: Vec<u8>,
}

impl GradientFrame {
    pub fn hello(sender_id: SenderId) -> Self {
        Self {
            version: FRAME_VERSION,
            msg_type: MsgType::Hello,
            sender_id,
            epoch: 0,
            seq: 0,
            layer_id: String::new(),
            nonce: Vec::new(),
            ciphertext: Vec::new(),
            auth_tag: Vec::new(),
        }
    }

    /// Bytes bound into the AEAD tag. The seq field is excluded because the
    /// forwarder rewrites it.
    pub fn associated_data(&self) -> Vec<u8> {
        let mut aad = Vec::with_capacity(22 + 4 + self.layer_id.len());
        aad.push(self.version);
        aad.push(self.msg_type as u8);
        aad.extend_from_slice(&self.sender_id.0);
        aad.extend_from_slice(&self.epoch.to_le_bytes());
        aad.extend_from_slice(self.layer_id.as_bytes());
        aad
    }

    pub fn payload_len(&self) -> usize {
        self.ciphertext.len() + self.auth_tag.len()
    }

    pub fn encode(&self) -> Vec<u8> {
        let body_len = FIXED_HEADER_LEN - 4
            + 2
            + self.layer_id.len()
            + 2
            + self.nonce.len()
            + self.payload_len();
        let mut out = Vec::with_capacity(body_len + 4);
        out.extend_from_slice(&(body_len as u32).to_le_bytes());
        out.push(self.version);
        out.push(self.msg_type as u8);
        out.extend_from_slice(&self.sender_id.0);
        out.extend_from_slice(&self.epoch.to_le_bytes());
        out.extend_from_slice(&self.seq.to_le_bytes());
        out.extend_from_slice(&(self.layer_id.len() as u16).to_le_bytes());
        out.extend_from_slice(self.layer_id.as_bytes());
        out.extend_from_slice(&(self.nonce.len() as u16).to_le_bytes());
        out.extend_from_slice(&self.nonce);
        out.extend_from_slice(&self.ciphertext);
        out.extend_from_slice(&self.auth_tag);
        out
    }

    /// Parses one complete frame, length prefix included. Trailing bytes are
    /// an error.
    pub fn decode(bytes: &[u8]) -> Result<Self, FederationError> {
        let bad = |m: &str| FederationError::Decode(m.to_string());
        if bytes.len() < FIXED_HEADER_LEN + 4 {
            return Err(bad("frame shorter than fixed header"));
        }
        let declared = u32::from_le_bytes(bytes[0..4].try_into().unwrap()) as usize;
        if declared != bytes.len() - 4 {
            return Err(FederationError::Decode(format!(
                "length prefix {declared} but {} bytes follow",
                bytes.len() - 4
            )));
        }
        let version = bytes[4];
        if version != FRAME_VERSION {
            return Err(FederationError::Decode(format!(
                "unsupported version {version}"
            )));
        }
        let msg_type = MsgType::from_byte(bytes[5]).ok_or_else(|| bad("unknown message type"))?;
        let sender_id = SenderId(bytes[6..22].try_into().unwrap());
        let epoch = u32::from_le_bytes(bytes[22..26].try_into().unwrap());
        let seq = u64::from_le_bytes(bytes[26..34].try_into().unwrap());

        let mut pos = FIXED_HEADER_LEN;
        let take_prefixed = |pos: &mut usize| -> Result<&[u8], FederationError> {
            if bytes.len() < *pos + 2 {
                return Err(bad("truncated length field"));
            }
            let n = u16::from_le_bytes([bytes[*pos], bytes[*pos + 1]]) as usize;
            *pos += 2;
            if bytes.len() < *pos + n {
                return Err(bad("truncated field"));
            }
            let s = &bytes[*pos..*pos + n];
            *pos += n;
            Ok(s)
        };
        let layer_id = std::str::from_utf8(take_prefixed(&mut pos)?)
            .map_err(|_| bad("layer_id is not UTF-8"))?
            .to_string();
        let nonce = take_prefixed(&mut pos)?.to_vec();
        let rest = &bytes[pos..];
        let (ciphertext, auth_tag) = match msg_type {
            MsgType::Hello => (rest.to_vec(), Vec::new()),
            _ => {
                if rest.len() < TAG_LEN {
                    return Err(bad("payload shorter than auth tag"));
                }
                let split = rest.len() - TAG_LEN;
                (rest[..split].to_vec(), rest[split..].to_vec())
            }
        };
        Ok(Self {
            version,
            msg_type,
            sender_id,
            epoch,
            seq,
            layer_id,
            nonce,
            ciphertext,
            auth_tag,
        })
    }
}

/// Overwrites the seq field of an encoded frame in place.
pub fn patch_seq(bytes: &mut [u8], seq: u64) {
    bytes[SEQ_OFFSET..SEQ_OFFSET + 8].copy_from_slice(&seq.to_le_bytes());
}

/// Reads one length-prefixed frame, returning it with the prefix attached.
/// `Ok(None)` on clean EOF before any byte of a new frame.
pub fn read_frame<R: Read>(r: &mut R) -> io::Result<Option<Vec<u8>>> {
    let mut prefix = [0u8; 4];
    let mut filled = 0;
    while filled < 4 {
        match r.read(&mut prefix[filled..]) {
            Ok(0) if filled == 0 => return Ok(None),
            Ok(0) => return Err(io::ErrorKind::UnexpectedEof.into()),
            Ok(n) => filled += n,
            Err(e) if e.kind() == io::ErrorKind::Interrupted => {}
            Err(e) => return Err(e),
        }
    }
    let len = u32::from_le_bytes(prefix) as usize;
    if len > MAX_FRAME_LEN {
        return Err(io::Error::new(
            io::ErrorKind::InvalidData,
            format!("frame length {len} exceeds limit"),
        ));
    }
    let mut buf = vec![0u8; len + 4];
    buf[..4].copy_from_slice(&prefix);
    r.read_exact(&mut buf[4..])?;
    Ok(Some(buf))
}

pub fn write_frame<W: Write>(w: &mut W, bytes: &[u8]) -> io::Result<()> {
    w.write_all(bytes)?;
    w.flush()
}
