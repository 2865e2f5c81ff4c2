//! Sealing global-layer deltas into frames with XChaCha20-Poly1305.
//!
//! Plaintext layout: `u32 rows | u32 cols | rows*cols f64 | u32 bias_len | bias f64`,
//! all little-endian.

use chacha20poly1305::aead::{Aead, KeyInit, Payload};
use chacha20poly1305::{XChaCha20Poly1305, XNonce};
use rand::RngCore;

use super::frame::{GradientFrame, MsgType, SenderId, FRAME_VERSION, TAG_LEN};
use super::FederationError;
use crate::nn::{Matrix, ParamTensors};

pub const KEY_LEN: usize = 32;
pub const NONCE_LEN: usize = 24;

/// Symmetric key shared by the agents. The forwarder never holds one.
#[derive(Clone, PartialEq, Eq)]
pub struct SharedKey([u8; KEY_LEN]);

impl std::fmt::Debug for SharedKey {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str("SharedKey(..)")
    }
}

impl SharedKey {
    pub fn from_bytes(bytes: [u8; KEY_LEN]) -> Self {
        Self(bytes)
    }

    pub fn from_hex(text: &str) -> Result<Self, FederationError> {
        let mut key = [0u8; KEY_LEN];
        hex::decode_to_slice(text.trim(), &mut key).map_err(|_| {
            FederationError::Protocol(format!("key must be {} hex characters", KEY_LEN * 2))
        })?;
        Ok(Self(key))
    }

    pub fn generate() -> Self {
        let mut key = [0u8; KEY_LEN];
        rand::rngs::OsRng.fill_bytes(&mut key);
        Self(key)
    }

    fn cipher(&self) -> XChaCha20Poly1305 {
        XChaCha20Poly1305::new((&self.0).into())
    }
}

pub fn encode_delta(delta: &ParamTensors) -> Vec<u8> {
    let (rows, cols) = delta.weights.shape();
    let mut out = Vec::with_capacity(12 + 8 * (rows * cols + delta.bias.len()));
    out.extend_from_slice(&(rows as u32).to_le_bytes());
    out.extend_from_slice(&(cols as u32).to_le_bytes());
    for v in delta.weights.as_slice() {
        out.extend_from_slice(&v.to_le_bytes());
    }
    out.extend_from_slice(&(delta.bias.len() as u32).to_le_bytes());
    for v in &delta.bias {
        out.extend_from_slice(&v.to_le_bytes());
    }
    out
}

pub fn decode_delta(bytes: &[u8]) -> Result<ParamTensors, FederationError> {
    let bad = |m: &str| FederationError::Decode(m.to_string());
    let mut pos = 0;
    let u32_at = |pos: &mut usize| -> Result<usize, FederationError> {
        let b = bytes
            .get(*pos..*pos + 4)
            .ok_or_else(|| bad("truncated delta"))?;
        *pos += 4;
        Ok(u32::from_le_bytes(b.try_into().unwrap()) as usize)
    };
    let rows = u32_at(&mut pos)?;
    let cols = u32_at(&mut pos)?;
    let n = rows
        .checked_mul(cols)
        .filter(|n| n.saturating_mul(8) <= bytes.len())
        .ok_or_else(|| bad("delta dimensions exceed payload"))?;
    let read_f64s = |pos: &mut usize, n: usize| -> Result<Vec<f64>, FederationError> {
        let end = pos.checked_add(n * 8).ok_or_else(|| bad("overflow"))?;
        let slice = bytes.get(*pos..end).ok_or_else(|| bad("truncated delta"))?;
        *pos = end;
        Ok(slice
            .chunks_exact(8)
            .map(|c| f64::from_le_bytes(c.try_into().unwrap()))
            .collect())
    };
    let weights = read_f64s(&mut pos, n)?;
    let bias_len = u32_at(&mut pos)?;
    let bias = read_f64s(&mut pos, bias_len)?;
    if pos != bytes.len() {
        return Err(bad("trailing bytes after delta"));
    }
    Ok(ParamTensors {
        weights: Matrix::from_vec(rows, cols, weights).map_err(|e| bad(&e.to_string()))?,
        bias,
    })
}

/// Encrypts `delta` into a DELTA frame under a fresh random nonce.
pub fn seal(
    delta: &ParamTensors,
    layer_id: &str,
    key: &SharedKey,
    epoch: u32,
    sender: SenderId,
) -> GradientFrame {
    let mut nonce = [0u8; NONCE_LEN];
    rand::rngs::OsRng.fill_bytes(&mut nonce);
    seal_with_nonce(delta, layer_id, key, epoch, sender, nonce)
}

/// Deterministic variant of [`seal`]. Reusing a nonce under the same key
/// breaks confidentiality; use only for fixed test vectors.
pub fn seal_with_nonce(
    delta: &ParamTensors,
    layer_id: &str,
    key: &SharedKey,
    epoch: u32,
    sender: SenderId,
    nonce: [u8; NONCE_LEN],
) -> GradientFrame {
    let mut frame = GradientFrame {
        version: FRAME_VERSION,
        msg_type: MsgType::Delta,
        sender_id: sender,
        epoch,
        seq: 0,
        layer_id: layer_id.to_string(),
        nonce: nonce.to_vec(),
        ciphertext: Vec::new(),
        auth_tag: Vec::new(),
    };
    let aad = frame.associated_data();
    let plaintext = encode_delta(delta);
    let mut sealed = key
        .cipher()
        .encrypt(
            XNonce::from_slice(&nonce),
            Payload {
                msg: &plaintext,
                aad: &aad,
            },
        )
        .expect("in-memory encryption does not fail");
    frame.auth_tag = sealed.split_off(sealed.len() - TAG_LEN);
    frame.ciphertext = sealed;
    frame
}

/// Authenticates and decrypts a DELTA frame.
pub fn open(frame: &GradientFrame, key: &SharedKey) -> Result<ParamTensors, FederationError> {
    if frame.msg_type != MsgType::Delta {
        return Err(FederationError::Protocol(format!(
            "expected DELTA, got {}",
            frame.msg_type.name()
        )));
    }
    if frame.nonce.len() != NONCE_LEN || frame.auth_tag.len() != TAG_LEN {
        return Err(FederationError::Decode("bad nonce or tag length".into()));
    }
    let mut sealed = frame.ciphertext.clone();
    sealed.extend_from_slice(&frame.auth_tag);
    let aad = frame.associated_data();
    let plaintext = key
        .cipher()
        .decrypt(
            XNonce::from_slice(&frame.nonce),
            Payload {
                msg: &sealed,
                aad: &aad,
            },
        )
        .map_err(|_| FederationError::Authentication)?;
    decode_delta(&plaintext)
}
