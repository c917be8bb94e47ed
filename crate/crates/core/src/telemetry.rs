//! Encrypted telemetry framing between garment, phone and cloud.
//!
//! Frame layout (all integers big-endian):
//!
//! ```text
//! offset  size  field
//!      0     1  version (1)
//!      1     8  device_id
//!      9     8  seq
//!     17    12  nonce = device_id[0..4] || seq
//!     29     1  channel
//!     30     4  payload_len
//!     34     n  ciphertext
//!   34+n    16  authentication tag
//! ```
//!
//! The 34 header bytes are bound as associated data. Payloads are arrays of
//! little-endian `(t_ms: i64, value: f32)` records, or `(t_ms: i64, ax, ay,
//! az: f32)` for the IMU channel.

use std::collections::BTreeMap;
use std::fmt;
use std::io::{self, Read, Write};
use std::path::Path;
use std::str::FromStr;

use aes_gcm::aead::AeadInPlace;
use aes_gcm::{Aes128Gcm, KeyInit, Nonce, Tag};
use rand::{CryptoRng, RngCore};
use serde::{Deserialize, Deserializer, Serialize, Serializer};
use thiserror::Error;

use crate::signal::{Channel, ImuSample};

pub const FRAME_VERSION: u8 = 1;
pub const HEADER_LEN: usize = 34;
pub const TAG_LEN: usize = 16;
pub const NONCE_LEN: usize = 12;
pub const MAX_PAYLOAD: usize = 64 * 1024;
/// Largest length-prefixed message accepted from the wire.
pub const MAX_MESSAGE: usize = HEADER_LEN + MAX_PAYLOAD + TAG_LEN;

const SAMPLE_RECORD: usize = 12;
const IMU_RECORD: usize = 20;

#[derive(Debug, Error)]
pub enum TelemetryError {
    #[error("random source failed: {0}")]
    RngFailure(String),
    #[error("device {0} is already paired")]
    DuplicateDevice(DeviceId),
    #[error("device {0} is not paired")]
    UnknownDevice(DeviceId),
    #[error("sequence {seq} does not advance past {last}")]
    NonceReuse { seq: u64, last: u64 },
    #[error("payload of {0} bytes exceeds the {MAX_PAYLOAD} byte cap")]
    OversizePayload(usize),
    #[error("frame failed authentication")]
    AuthenticationFailure,
    #[error("malformed frame: {0}")]
    MalformedFrame(String),
    #[error("sequence {seq} already accepted (last {last})")]
    ReplayedSequence { seq: u64, last: u64 },
    #[error("malformed payload: {0}")]
    MalformedPayload(String),
    #[error("key file: {0}")]
    KeyFile(String),
    #[error(transparent)]
    Io(#[from] io::Error),
}

/// Eight-byte garment identifier, written as 16 hex digits.
#[derive(Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct DeviceId(pub [u8; 8]);

impl DeviceId {
    pub fn from_u64(v: u64) -> Self {
        Self(v.to_be_bytes())
    }
}

impl fmt::Display for DeviceId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&hex::encode(self.0))
    }
}

impl fmt::Debug for DeviceId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "DeviceId({self})")
    }
}

impl FromStr for DeviceId {
    type Err = TelemetryError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        let bytes = hex::decode(s).map_err(|e| TelemetryError::KeyFile(format!("device id {s:?}: {e}")))?;
        let arr: [u8; 8] = bytes
            .try_into()
            .map_err(|_| TelemetryError::KeyFile(format!("device id {s:?} must be 8 bytes")))?;
        Ok(Self(arr))
    }
}

impl Serialize for DeviceId {
    fn serialize<S: Serializer>(&self, s: S) -> Result<S::Ok, S::Error> {
        s.serialize_str(&self.to_string())
    }
}

impl<'de> Deserialize<'de> for DeviceId {
    fn deserialize<D: Deserializer<'de>>(d: D) -> Result<Self, D::Error> {
        let s = String::deserialize(d)?;
        s.parse().map_err(serde::de::Error::custom)
    }
}

/// A 128-bit key bound to one garment.
#[derive(Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct DeviceKey {
    #[serde(with = "hex_key")]
    pub key: [u8; 16],
    pub device_id: DeviceId,
    pub issued_at_ms: i64,
}

impl fmt::Debug for DeviceKey {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("DeviceKey")
            .field("key", &"<redacted>")
            .field("device_id", &self.device_id)
            .field("issued_at_ms", &self.issued_at_ms)
            .finish()
    }
}

mod hex_key {
    use serde::{Deserialize, Deserializer, Serializer};

    pub fn serialize<S: Serializer>(k: &[u8; 16], s: S) -> Result<S::Ok, S::Error> {
        s.serialize_str(&hex::encode(k))
    }

    pub fn deserialize<'de, D: Deserializer<'de>>(d: D) -> Result<[u8; 16], D::Error> {
        let s = String::deserialize(d)?;
        let v = hex::decode(&s).map_err(serde::de::Error::custom)?;
        v.try_into()
            .map_err(|_| serde::de::Error::custom("key must be 16 bytes"))
    }
}

/// Paired keys, one per device.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct KeyStore {
    devices: BTreeMap<DeviceId, DeviceKey>,
}

impl KeyStore {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn pair<R: RngCore + CryptoRng>(
        &mut self,
        device_id: DeviceId,
        rng: &mut R,
        now_ms: i64,
    ) -> Result<DeviceKey, TelemetryError> {
        if self.devices.contains_key(&device_id) {
            return Err(TelemetryError::DuplicateDevice(device_id));
        }
        let mut key = [0u8; 16];
        rng.try_fill_bytes(&mut key)
            .map_err(|e| TelemetryError::RngFailure(e.to_string()))?;
        let dk = DeviceKey {
            key,
            device_id,
            issued_at_ms: now_ms,
        };
        self.devices.insert(device_id, dk.clone());
        Ok(dk)
    }

    pub fn revoke(&mut self, device_id: &DeviceId) -> Option<DeviceKey> {
        self.devices.remove(device_id)
    }

    pub fn get(&self, device_id: &DeviceId) -> Option<&DeviceKey> {
        self.devices.get(device_id)
    }

    pub fn len(&self) -> usize {
        self.devices.len()
    }

    pub fn is_empty(&self) -> bool {
        self.devices.is_empty()
    }

    pub fn keys(&self) -> impl Iterator<Item = &DeviceKey> {
        self.devices.values()
    }

    pub fn save(&self, path: &Path) -> Result<(), TelemetryError> {
        let text = serde_json::to_string_pretty(self).map_err(|e| TelemetryError::KeyFile(e.to_string()))?;
        std::fs::write(path, text)?;
        Ok(())
    }

    pub fn load(path: &Path) -> Result<Self, TelemetryError> {
        let text = std::fs::read_to_string(path)?;
        let store: Self = serde_json::from_str(&text).map_err(|e| TelemetryError::KeyFile(e.to_string()))?;
        for (id, k) in &store.devices {
            if *id != k.device_id {
                return Err(TelemetryError::KeyFile(format!("entry {id} holds key for {}", k.device_id)));
            }
        }
        Ok(store)
    }
}

/// Channel tag carried in the frame header.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum FrameChannel {
    Ecg,
    EmgBicep,
    EmgChest,
    Temperature,
    Imu,
}

impl FrameChannel {
    pub fn to_byte(self) -> u8 {
        match self {
            FrameChannel::Ecg => 0,
            FrameChannel::EmgBicep => 1,
            FrameChannel::EmgChest => 2,
            FrameChannel::Temperature => 3,
            FrameChannel::Imu => 4,
        }
    }

    pub fn from_byte(b: u8) -> Option<Self> {
        Some(match b {
            0 => FrameChannel::Ecg,
            1 => FrameChannel::EmgBicep,
            2 => FrameChannel::EmgChest,
            3 => FrameChannel::Temperature,
            4 => FrameChannel::Imu,
            _ => return None,
        })
    }

    pub fn series_channel(self) -> Option<Channel> {
        match self {
            FrameChannel::Ecg => Some(Channel::Ecg),
            FrameChannel::EmgBicep => Some(Channel::EmgBicep),
            FrameChannel::EmgChest => Some(Channel::EmgChest),
            FrameChannel::Temperature => Some(Channel::Temperature),
            FrameChannel::Imu => None,
        }
    }
}

impl From<Channel> for FrameChannel {
    fn from(c: Channel) -> Self {
        match c {
            Channel::Ecg => FrameChannel::Ecg,
            Channel::EmgBicep => FrameChannel::EmgBicep,
            Channel::EmgChest => FrameChannel::EmgChest,
            Channel::Temperature => FrameChannel::Temperature,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct TelemetryFrame {
    pub version: u8,
    pub device_id: DeviceId,
    pub seq: u64,
    pub nonce: [u8; NONCE_LEN],
    pub channel: FrameChannel,
    pub ciphertext: Vec<u8>,
    pub tag: [u8; TAG_LEN],
}

pub fn derive_nonce(device_id: &DeviceId, seq: u64) -> [u8; NONCE_LEN] {
    let mut n = [0u8; NONCE_LEN];
    n[..4].copy_from_slice(&device_id.0[..4]);
    n[4..].copy_from_slice(&seq.to_be_bytes());
    n
}

impl TelemetryFrame {
    pub fn header_bytes(&self) -> [u8; HEADER_LEN] {
        let mut h = [0u8; HEADER_LEN];
        h[0] = self.version;
        h[1..9].copy_from_slice(&self.device_id.0);
        h[9..17].copy_from_slice(&self.seq.to_be_bytes());
        h[17..29].copy_from_slice(&self.nonce);
        h[29] = self.channel.to_byte();
        h[30..34].copy_from_slice(&(self.ciphertext.len() as u32).to_be_bytes());
        h
    }

    pub fn to_bytes(&self) -> Vec<u8> {
        let mut out = Vec::with_capacity(HEADER_LEN + self.ciphertext.len() + TAG_LEN);
        out.extend_from_slice(&self.header_bytes());
        out.extend_from_slice(&self.ciphertext);
        out.extend_from_slice(&self.tag);
        out
    }

    /// Parses the wire form. Structural checks only; nothing is authenticated here.
    pub fn from_bytes(bytes: &[u8]) -> Result<Self, TelemetryError> {
        let bad = |m: &str| TelemetryError::MalformedFrame(m.to_string());
        if bytes.len() < HEADER_LEN + TAG_LEN {
            return Err(bad("shorter than header and tag"));
        }
        if bytes[0] != FRAME_VERSION {
            return Err(TelemetryError::MalformedFrame(format!("unsupported version {}", bytes[0])));
        }
        let device_id = DeviceId(bytes[1..9].try_into().unwrap());
        let seq = u64::from_be_bytes(bytes[9..17].try_into().unwrap());
        let nonce: [u8; NONCE_LEN] = bytes[17..29].try_into().unwrap();
        let channel = FrameChannel::from_byte(bytes[29]).ok_or_else(|| bad("unknown channel"))?;
        let len = u32::from_be_bytes(bytes[30..34].try_into().unwrap()) as usize;
        if len > MAX_PAYLOAD {
            return Err(bad("payload length above cap"));
        }
        if bytes.len() != HEADER_LEN + len + TAG_LEN {
            return Err(bad("length field disagrees with frame size"));
        }
        if nonce != derive_nonce(&device_id, seq) {
            return Err(bad("nonce does not match device and sequence"));
        }
        Ok(Self {
            version: bytes[0],
            device_id,
            seq,
            nonce,
            channel,
            ciphertext: bytes[HEADER_LEN..HEADER_LEN + len].to_vec(),
            tag: bytes[HEADER_LEN + len..].try_into().unwrap(),
        })
    }
}

fn cipher(key: &DeviceKey) -> Aes128Gcm {
    Aes128Gcm::new(&key.key.into())
}

/// Stateless encryption. Callers must never reuse `seq` under one key;
/// [`Sealer`] enforces that.
pub fn encrypt_frame(
    key: &DeviceKey,
    seq: u64,
    channel: FrameChannel,
    plaintext: &[u8],
) -> Result<TelemetryFrame, TelemetryError> {
    if plaintext.len() > MAX_PAYLOAD {
        return Err(TelemetryError::OversizePayload(plaintext.len()));
    }
    let mut frame = TelemetryFrame {
        version: FRAME_VERSION,
        device_id: key.device_id,
        seq,
        nonce: derive_nonce(&key.device_id, seq),
        channel,
        ciphertext: plaintext.to_vec(),
        tag: [0; TAG_LEN],
    };
    let aad = frame.header_bytes();
    let tag = cipher(key)
        .encrypt_in_place_detached(Nonce::from_slice(&frame.nonce), &aad, &mut frame.ciphertext)
        .map_err(|_| TelemetryError::OversizePayload(plaintext.len()))?;
    frame.tag.copy_from_slice(&tag);
    Ok(frame)
}

/// Stateless decryption. Replay protection lives in [`Opener`].
pub fn decrypt_frame(key: &DeviceKey, frame: &TelemetryFrame) -> Result<(FrameChannel, Vec<u8>), TelemetryError> {
    if frame.version != FRAME_VERSION {
        return Err(TelemetryError::MalformedFrame(format!("unsupported version {}", frame.version)));
    }
    if frame.nonce != derive_nonce(&frame.device_id, frame.seq) {
        return Err(TelemetryError::MalformedFrame("nonce does not match device and sequence".into()));
    }
    if frame.device_id != key.device_id {
        return Err(TelemetryError::AuthenticationFailure);
    }
    let aad = frame.header_bytes();
    let mut buf = frame.ciphertext.clone();
    cipher(key)
        .decrypt_in_place_detached(Nonce::from_slice(&frame.nonce), &aad, &mut buf, Tag::from_slice(&frame.tag))
        .map_err(|_| TelemetryError::AuthenticationFailure)?;
    Ok((frame.channel, buf))
}

/// Sending side; refuses to move the sequence counter backwards.
#[derive(Debug)]
pub struct Sealer {
    key: DeviceKey,
    last_seq: Option<u64>,
}

impl Sealer {
    pub fn new(key: DeviceKey) -> Self {
        Self { key, last_seq: None }
    }

    pub fn device_id(&self) -> DeviceId {
        self.key.device_id
    }

    /// Continues a counter that already reached `last`.
    pub fn resume_after(&mut self, last: u64) {
        self.last_seq = Some(last);
    }

    pub fn seal(&mut self, seq: u64, channel: FrameChannel, plaintext: &[u8]) -> Result<TelemetryFrame, TelemetryError> {
        if let Some(last) = self.last_seq {
            if seq <= last {
                return Err(TelemetryError::NonceReuse { seq, last });
            }
        }
        let frame = encrypt_frame(&self.key, seq, channel, plaintext)?;
        self.last_seq = Some(seq);
        Ok(frame)
    }

    /// Seals with the next sequence number.
    pub fn seal_next(&mut self, channel: FrameChannel, plaintext: &[u8]) -> Result<TelemetryFrame, TelemetryError> {
        let seq = self.last_seq.map_or(0, |s| s + 1);
        self.seal(seq, channel, plaintext)
    }
}

/// Receiving side; accepts only strictly increasing sequence numbers.
#[derive(Debug)]
pub struct Opener {
    key: DeviceKey,
    last_seq: Option<u64>,
}

impl Opener {
    pub fn new(key: DeviceKey) -> Self {
        Self { key, last_seq: None }
    }

    pub fn last_seq(&self) -> Option<u64> {
        self.last_seq
    }

    /// Continues after a sequence number accepted in an earlier session.
    pub fn resume_after(&mut self, last: u64) {
        self.last_seq = Some(last);
    }

    pub fn open(&mut self, frame: &TelemetryFrame) -> Result<(FrameChannel, Vec<u8>), TelemetryError> {
        let out = decrypt_frame(&self.key, frame)?;
        if let Some(last) = self.last_seq {
            if frame.seq <= last {
                return Err(TelemetryError::ReplayedSequence { seq: frame.seq, last });
            }
        }
        self.last_seq = Some(frame.seq);
        Ok(out)
    }

    pub fn open_bytes(&mut self, bytes: &[u8]) -> Result<(FrameChannel, Vec<u8>), TelemetryError> {
        self.open(&TelemetryFrame::from_bytes(bytes)?)
    }
}

pub fn encode_samples(samples: &[(i64, f32)]) -> Vec<u8> {
    let mut out = Vec::with_capacity(samples.len() * SAMPLE_RECORD);
    for &(t, v) in samples {
        out.extend_from_slice(&t.to_le_bytes());
        out.extend_from_slice(&v.to_le_bytes());
    }
    out
}

pub fn decode_samples(bytes: &[u8]) -> Result<Vec<(i64, f32)>, TelemetryError> {
    if bytes.len() % SAMPLE_RECORD != 0 {
        return Err(TelemetryError::MalformedPayload(format!(
            "{} bytes is not a multiple of {SAMPLE_RECORD}",
            bytes.len()
        )));
    }
    Ok(bytes
        .chunks_exact(SAMPLE_RECORD)
        .map(|c| {
            (
                i64::from_le_bytes(c[..8].try_into().unwrap()),
                f32::from_le_bytes(c[8..].try_into().unwrap()),
            )
        })
        .collect())
}

pub fn encode_imu(samples: &[ImuSample]) -> Vec<u8> {
    let mut out = Vec::with_capacity(samples.len() * IMU_RECORD);
    for s in samples {
        out.extend_from_slice(&s.t_ms.to_le_bytes());
        for v in [s.ax, s.ay, s.az] {
            out.extend_from_slice(&(v as f32).to_le_bytes());
        }
    }
    out
}

pub fn decode_imu(bytes: &[u8]) -> Result<Vec<ImuSample>, TelemetryError> {
    if bytes.len() % IMU_RECORD != 0 {
        return Err(TelemetryError::MalformedPayload(format!(
            "{} bytes is not a multiple of {IMU_RECORD}",
            bytes.len()
        )));
    }
    bytes
        .chunks_exact(IMU_RECORD)
        .map(|c| {
            let f = |o: usize| f32::from_le_bytes(c[o..o + 4].try_into().unwrap()) as f64;
            ImuSample::new(i64::from_le_bytes(c[..8].try_into().unwrap()), f(8), f(12), f(16))
                .map_err(|e| TelemetryError::MalformedPayload(e.to_string()))
        })
        .collect()
}

/// Writes one message prefixed by its length as a big-endian u32.
pub fn write_message<W: Write>(w: &mut W, msg: &[u8]) -> io::Result<()> {
    let len = u32::try_from(msg.len()).map_err(|_| io::Error::new(io::ErrorKind::InvalidInput, "message too long"))?;
    w.write_all(&len.to_be_bytes())?;
    w.write_all(msg)?;
    w.flush()
}

/// Reads one length-prefixed message. `Ok(None)` on a clean end of stream.
pub fn read_message<R: Read>(r: &mut R) -> io::Result<Option<Vec<u8>>> {
    let mut len = [0u8; 4];
    match r.read_exact(&mut len) {
        Ok(()) => {}
        Err(e) if e.kind() == io::ErrorKind::UnexpectedEof => return Ok(None),
        Err(e) => return Err(e),
    }
    let len = u32::from_be_bytes(len) as usize;
    if len > MAX_MESSAGE {
        return Err(io::Error::new(io::ErrorKind::InvalidData, format!("message of {len} bytes exceeds cap")));
    }
    let mut buf = vec![0u8; len];
    r.read_exact(&mut buf)?;
    Ok(Some(buf))
}
