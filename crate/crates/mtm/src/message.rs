//! Port-waveform messages and their binary frame format.
//!
//! One frame per (wire, port, window):
//!
//! ```text
//! offset  size  field
//!      0     4  magic 0x4D544D31 ("MTM1"), big-endian
//!      4     4  window index, big-endian
//!      8     2  wire id, big-endian
//!     10     1  sending port (1 or 2; 0 in control frames)
//!     11     1  flags (0 data, 1 round-done, 2 accept, 3 error,
//!               4 iterate, 5 abort)
//!     12     4  sample count K, big-endian
//!     16   16K  K pairs of IEEE-754 binary64 little-endian (u, i)
//! 16+16K     4  CRC32C (Castagnoli) of bytes 4..16+16K, big-endian
//! ```

/// Waveform samples of one port over one window.
#[derive(Debug, Clone, PartialEq)]
pub struct PortWaveformMessage {
    /// Window index, strictly increasing per (wire, port) stream.
    pub window: u32,
    /// Interfacial wire id (index into the partition's wire list).
    pub wire: u16,
    /// Sending port, 1 or 2.
    pub port: u8,
    /// (voltage, current) pairs on the window grid.
    pub samples: Vec<(f64, f64)>,
}

/// Frame discriminator.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum FrameKind {
    Data = 0,
    RoundDone = 1,
    Accept = 2,
    Error = 3,
    Iterate = 4,
    Abort = 5,
}

impl FrameKind {
    fn from_u8(v: u8) -> Option<FrameKind> {
        Some(match v {
            0 => FrameKind::Data,
            1 => FrameKind::RoundDone,
            2 => FrameKind::Accept,
            3 => FrameKind::Error,
            4 => FrameKind::Iterate,
            5 => FrameKind::Abort,
            _ => return None,
        })
    }
}

/// A decoded frame: a control marker or a data message.
#[derive(Debug, Clone, PartialEq)]
pub struct Frame {
    pub kind: FrameKind,
    pub message: PortWaveformMessage,
}

pub const FRAME_MAGIC: u32 = 0x4D54_4D31;

/// Codec failure.
#[derive(Debug, Clone, PartialEq)]
pub enum FrameError {
    BadMagic(u32),
    BadChecksum { stored: u32, computed: u32 },
    UnknownFlags(u8),
    Truncated,
}

impl std::fmt::Display for FrameError {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            FrameError::BadMagic(m) => write!(f, "bad frame magic {m:#010x}"),
            FrameError::BadChecksum { stored, computed } => {
                write!(f, "frame checksum {stored:#010x} != computed {computed:#010x}")
            }
            FrameError::UnknownFlags(v) => write!(f, "unknown frame flags {v}"),
            FrameError::Truncated => write!(f, "truncated frame"),
        }
    }
}

impl std::error::Error for FrameError {}

const CRC32C_TABLE: [u32; 256] = build_crc32c_table();

const fn build_crc32c_table() -> [u32; 256] {
    // Reflected Castagnoli polynomial.
    const POLY: u32 = 0x82F6_3B78;
    let mut table = [0u32; 256];
    let mut i = 0;
    while i < 256 {
        let mut crc = i as u32;
        let mut bit = 0;
        while bit < 8 {
            crc = if crc & 1 != 0 { (crc >> 1) ^ POLY } else { crc >> 1 };
            bit += 1;
        }
        table[i] = crc;
        i += 1;
    }
    table
}

/// CRC32C (Castagnoli) checksum.
pub fn crc32c(data: &[u8]) -> u32 {
    let mut crc = !0u32;
    for &b in data {
        crc = (crc >> 8) ^ CRC32C_TABLE[((crc ^ b as u32) & 0xFF) as usize];
    }
    !crc
}

/// Encode a frame to bytes.
pub fn encode_frame(kind: FrameKind, msg: &PortWaveformMessage) -> Vec<u8> {
    let k = msg.samples.len();
    let mut out = Vec::with_capacity(20 + 16 * k);
    out.extend_from_slice(&FRAME_MAGIC.to_be_bytes());
    out.extend_from_slice(&msg.window.to_be_bytes());
    out.extend_from_slice(&msg.wire.to_be_bytes());
    out.push(msg.port);
    out.push(kind as u8);
    out.extend_from_slice(&(k as u32).to_be_bytes());
    for &(u, i) in &msg.samples {
        out.extend_from_slice(&u.to_le_bytes());
        out.extend_from_slice(&i.to_le_bytes());
    }
    let crc = crc32c(&out[4..]);
    out.extend_from_slice(&crc.to_be_bytes());
    out
}

/// Read one frame from a byte stream.
pub fn read_frame(reader: &mut impl std::io::Read) -> std::io::Result<Result<Frame, FrameError>> {
    let mut head = [0u8; 16];
    reader.read_exact(&mut head)?;
    let magic = u32::from_be_bytes(head[0..4].try_into().unwrap());
    if magic != FRAME_MAGIC {
        return Ok(Err(FrameError::BadMagic(magic)));
    }
    let window = u32::from_be_bytes(head[4..8].try_into().unwrap());
    let wire = u16::from_be_bytes(head[8..10].try_into().unwrap());
    let port = head[10];
    let flags = head[11];
    let count = u32::from_be_bytes(head[12..16].try_into().unwrap()) as usize;
    let mut body = vec![0u8; 16 * count + 4];
    reader.read_exact(&mut body)?;
    let computed = {
        let mut crc_input = Vec::with_capacity(12 + 16 * count);
        crc_input.extend_from_slice(&head[4..]);
        crc_input.extend_from_slice(&body[..16 * count]);
        crc32c(&crc_input)
    };
    let stored = u32::from_be_bytes(body[16 * count..].try_into().unwrap());
    if stored != computed {
        return Ok(Err(FrameError::BadChecksum { stored, computed }));
    }
    let Some(kind) = FrameKind::from_u8(flags) else {
        return Ok(Err(FrameError::UnknownFlags(flags)));
    };
    let mut samples = Vec::with_capacity(count);
    for k in 0..count {
        let off = 16 * k;
        let u = f64::from_le_bytes(body[off..off + 8].try_into().unwrap());
        let i = f64::from_le_bytes(body[off + 8..off + 16].try_into().unwrap());
        samples.push((u, i));
    }
    Ok(Ok(Frame {
        kind,
        message: PortWaveformMessage {
            window,
            wire,
            port,
            samples,
        },
    }))
}

/// Decode a frame from a complete byte slice.
pub fn decode_frame(bytes: &[u8]) -> Result<Frame, FrameError> {
    let mut cursor = bytes;
    match read_frame(&mut cursor) {
        Ok(r) => r,
        Err(_) => Err(FrameError::Truncated),
    }
}

/// Per-stream window-order bookkeeping for delivered messages.
///
/// Every (wire, port) stream must advance one window at a time with the
/// configured sample count; anything else is a protocol error.
#[derive(Debug, Clone)]
pub struct StreamOrder {
    expected_window: Vec<[u32; 2]>,
    samples_per_window: usize,
}

/// Ordering/shape violation in a message stream.
#[derive(Debug, Clone, PartialEq)]
pub struct ProtocolError(pub String);

impl std::fmt::Display for ProtocolError {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        write!(f, "protocol error: {}", self.0)
    }
}

impl std::error::Error for ProtocolError {}

impl StreamOrder {
    pub fn new(wires: usize, samples_per_window: usize) -> Self {
        StreamOrder {
            expected_window: vec![[0, 0]; wires],
            samples_per_window,
        }
    }

    /// Validate and account one message; call exactly once per delivery.
    pub fn check(&mut self, msg: &PortWaveformMessage) -> Result<(), ProtocolError> {
        let wire = msg.wire as usize;
        if wire >= self.expected_window.len() {
            return Err(ProtocolError(format!("unknown wire id {}", msg.wire)));
        }
        if msg.port != 1 && msg.port != 2 {
            return Err(ProtocolError(format!("bad port id {}", msg.port)));
        }
        let slot = &mut self.expected_window[wire][(msg.port - 1) as usize];
        if msg.window != *slot {
            return Err(ProtocolError(format!(
                "wire {} port {}: expected window {}, got {}",
                msg.wire, msg.port, slot, msg.window
            )));
        }
        if msg.samples.len() != self.samples_per_window {
            return Err(ProtocolError(format!(
                "wire {} port {}: expected {} samples, got {}",
                msg.wire,
                msg.port,
                self.samples_per_window,
                msg.samples.len()
            )));
        }
        *slot += 1;
        Ok(())
    }
}
