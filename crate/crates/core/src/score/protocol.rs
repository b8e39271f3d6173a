//! Binary request/response framing shared with the score server.
//!
//! Every frame is `b"SDS1" | type: u8 | payload_len: u64 | payload`, all
//! little-endian. Tensors are `ndim: u32 | dims: [u64] | data: [f32]`.

use std::io::{self, Read, Write};

use super::ScoreError;
use crate::gradtape::Tensor;

pub const MAGIC: [u8; 4] = *b"SDS1";
/// Frames above this size are rejected before allocation.
pub const MAX_PAYLOAD: u64 = 1 << 30;

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
#[repr(u8)]
pub enum MessageType {
    EpsRequest = 1,
    EpsResponse = 2,
    Hello = 3,
    Error = 4,
}

impl TryFrom<u8> for MessageType {
    type Error = ScoreError;

    fn try_from(v: u8) -> Result<Self, ScoreError> {
        Ok(match v {
            1 => Self::EpsRequest,
            2 => Self::EpsResponse,
            3 => Self::Hello,
            4 => Self::Error,
            _ => return Err(ScoreError::Protocol(format!("unknown message type {v}"))),
        })
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct Frame {
    pub kind: MessageType,
    pub payload: Vec<u8>,
}

/// Distinguishes a broken transport from a malformed frame.
#[derive(Debug)]
pub enum ReadError {
    Io(io::Error),
    Malformed(String),
}

impl From<io::Error> for ReadError {
    fn from(e: io::Error) -> Self {
        ReadError::Io(e)
    }
}

pub fn write_frame(w: &mut impl Write, kind: MessageType, payload: &[u8]) -> io::Result<()> {
    let mut head = [0u8; 13];
    head[..4].copy_from_slice(&MAGIC);
    head[4] = kind as u8;
    head[5..].copy_from_slice(&(payload.len() as u64).to_le_bytes());
    w.write_all(&head)?;
    w.write_all(payload)?;
    w.flush()
}

pub fn read_frame(r: &mut impl Read) -> Result<Frame, ReadError> {
    let mut head = [0u8; 13];
    r.read_exact(&mut head)?;
    if head[..4] != MAGIC {
        return Err(ReadError::Malformed(format!("bad magic {:?}", &head[..4])));
    }
    let kind = MessageType::try_from(head[4]).map_err(|e| ReadError::Malformed(e.to_string()))?;
    let len = u64::from_le_bytes(head[5..].try_into().expect("8 bytes"));
    if len > MAX_PAYLOAD {
        return Err(ReadError::Malformed(format!("payload length {len} exceeds limit")));
    }
    let mut payload = vec![0u8; len as usize];
    r.read_exact(&mut payload)?;
    Ok(Frame { kind, payload })
}

/// Cursor over a payload that reports truncation as a protocol error.
pub struct Reader<'a> {
    buf: &'a [u8],
    pos: usize,
}

impl<'a> Reader<'a> {
    pub fn new(buf: &'a [u8]) -> Self {
        Self { buf, pos: 0 }
    }

    fn take(&mut self, n: usize) -> Result<&'a [u8], ScoreError> {
        let end = self
            .pos
            .checked_add(n)
            .filter(|e| *e <= self.buf.len())
            .ok_or_else(|| ScoreError::Protocol(format!("payload truncated at byte {} (need {n} more)", self.pos)))?;
        let s = &self.buf[self.pos..end];
        self.pos = end;
        Ok(s)
    }

    pub fn u8(&mut self) -> Result<u8, ScoreError> {
        Ok(self.take(1)?[0])
    }

    pub fn u32(&mut self) -> Result<u32, ScoreError> {
        Ok(u32::from_le_bytes(self.take(4)?.try_into().expect("4 bytes")))
    }

    pub fn u64(&mut self) -> Result<u64, ScoreError> {
        Ok(u64::from_le_bytes(self.take(8)?.try_into().expect("8 bytes")))
    }

    pub fn f32(&mut self) -> Result<f32, ScoreError> {
        Ok(f32::from_le_bytes(self.take(4)?.try_into().expect("4 bytes")))
    }

    pub fn string(&mut self) -> Result<String, ScoreError> {
        let n = self.u32()? as usize;
        String::from_utf8(self.take(n)?.to_vec()).map_err(|_| ScoreError::Protocol("string is not UTF-8".into()))
    }

    pub fn tensor(&mut self) -> Result<Tensor, ScoreError> {
        let ndim = self.u32()? as usize;
        if ndim > 8 {
            return Err(ScoreError::Protocol(format!("tensor rank {ndim} exceeds 8")));
        }
        let mut dims = Vec::with_capacity(ndim);
        for _ in 0..ndim {
            dims.push(self.u64()? as usize);
        }
        let count = dims
            .iter()
            .try_fold(1usize, |acc, d| acc.checked_mul(*d))
            .filter(|c| c.checked_mul(4).is_some_and(|b| b <= self.buf.len() - self.pos))
            .ok_or_else(|| ScoreError::Protocol(format!("tensor shape {dims:?} does not match payload length")))?;
        let bytes = self.take(count * 4)?;
        let data = bytes
            .chunks_exact(4)
            .map(|c| f32::from_le_bytes(c.try_into().expect("4 bytes")))
            .collect();
        Tensor::new(dims, data).map_err(|e| ScoreError::Protocol(e.to_string()))
    }

    pub fn finish(self) -> Result<(), ScoreError> {
        if self.pos == self.buf.len() {
            Ok(())
        } else {
            Err(ScoreError::Protocol(format!(
                "{} trailing bytes",
                self.buf.len() - self.pos
            )))
        }
    }
}

pub fn put_string(out: &mut Vec<u8>, s: &str) {
    out.extend_from_slice(&(s.len() as u32).to_le_bytes());
    out.extend_from_slice(s.as_bytes());
}

pub fn put_tensor(out: &mut Vec<u8>, t: &Tensor) {
    out.extend_from_slice(&(t.shape().len() as u32).to_le_bytes());
    for d in t.shape() {
        out.extend_from_slice(&(*d as u64).to_le_bytes());
    }
    for v in t.data() {
        out.extend_from_slice(&v.to_le_bytes());
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct EpsRequest {
    pub x_t: Tensor,
    /// Continuous time or integer step, depending on the model.
    pub t_or_step: f32,
    pub prompt: String,
    pub cond: Option<Tensor>,
    pub guidance: f32,
    pub seed: u64,
}

impl EpsRequest {
    pub fn encode(&self) -> Vec<u8> {
        let mut out = Vec::with_capacity(self.x_t.len() * 4 + 64);
        put_tensor(&mut out, &self.x_t);
        out.extend_from_slice(&self.t_or_step.to_le_bytes());
        put_string(&mut out, &self.prompt);
        match &self.cond {
            Some(c) => {
                out.push(1);
                put_tensor(&mut out, c);
            }
            None => out.push(0),
        }
        out.extend_from_slice(&self.guidance.to_le_bytes());
        out.extend_from_slice(&self.seed.to_le_bytes());
        out
    }

    pub fn decode(payload: &[u8]) -> Result<Self, ScoreError> {
        let mut r = Reader::new(payload);
        let x_t = r.tensor()?;
        let t_or_step = r.f32()?;
        let prompt = r.string()?;
        let cond = match r.u8()? {
            0 => None,
            1 => Some(r.tensor()?),
            v => return Err(ScoreError::Protocol(format!("has_cond flag {v}"))),
        };
        let guidance = r.f32()?;
        let seed = r.u64()?;
        r.finish()?;
        Ok(Self {
            x_t,
            t_or_step,
            prompt,
            cond,
            guidance,
            seed,
        })
    }
}

/// Server capabilities returned in reply to a hello frame.
#[derive(Clone, Debug, PartialEq)]
pub struct Hello {
    pub model: String,
    pub schedule: Vec<f32>,
    pub max_height: u32,
    pub max_width: u32,
}

impl Hello {
    pub fn encode(&self) -> Vec<u8> {
        let mut out = Vec::new();
        put_string(&mut out, &self.model);
        out.extend_from_slice(&(self.schedule.len() as u32).to_le_bytes());
        for v in &self.schedule {
            out.extend_from_slice(&v.to_le_bytes());
        }
        out.extend_from_slice(&self.max_height.to_le_bytes());
        out.extend_from_slice(&self.max_width.to_le_bytes());
        out
    }

    pub fn decode(payload: &[u8]) -> Result<Self, ScoreError> {
        let mut r = Reader::new(payload);
        let model = r.string()?;
        let n = r.u32()? as usize;
        if n > payload.len() / 4 {
            return Err(ScoreError::Protocol(format!("schedule length {n} exceeds payload")));
        }
        let schedule = (0..n).map(|_| r.f32()).collect::<Result<_, _>>()?;
        let max_height = r.u32()?;
        let max_width = r.u32()?;
        r.finish()?;
        Ok(Self {
            model,
            schedule,
            max_height,
            max_width,
        })
    }
}

pub fn encode_error(message: &str) -> Vec<u8> {
    let mut out = Vec::new();
    put_string(&mut out, message);
    out
}

pub fn decode_error(payload: &[u8]) -> String {
    Reader::new(payload)
        .string()
        .unwrap_or_else(|_| String::from_utf8_lossy(payload).into_owned())
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    #[test]
    fn frame_roundtrip() {
        let mut buf = Vec::new();
        write_frame(&mut buf, MessageType::Hello, &[1, 2, 3]).unwrap();
        assert_eq!(&buf[..4], b"SDS1");
        assert_eq!(buf[4], 3);
        assert_eq!(u64::from_le_bytes(buf[5..13].try_into().unwrap()), 3);
        let f = read_frame(&mut buf.as_slice()).unwrap();
        assert_eq!(f.kind, MessageType::Hello);
        assert_eq!(f.payload, vec![1, 2, 3]);
    }

    #[test]
    fn bad_magic_and_type() {
        let mut buf = Vec::new();
        write_frame(&mut buf, MessageType::Hello, &[]).unwrap();
        let mut bad = buf.clone();
        bad[0] = b'X';
        assert!(matches!(read_frame(&mut bad.as_slice()), Err(ReadError::Malformed(_))));
        let mut bad = buf.clone();
        bad[4] = 9;
        assert!(matches!(read_frame(&mut bad.as_slice()), Err(ReadError::Malformed(_))));
        assert!(matches!(read_frame(&mut &buf[..7]), Err(ReadError::Io(_))));
    }

    #[test]
    fn tensor_shape_mismatch_is_protocol_error() {
        let mut out = Vec::new();
        put_tensor(&mut out, &Tensor::zeros(vec![2, 2, 3]));
        out.truncate(out.len() - 4);
        assert!(matches!(Reader::new(&out).tensor(), Err(ScoreError::Protocol(_))));
        let mut huge = Vec::new();
        huge.extend_from_slice(&2u32.to_le_bytes());
        huge.extend_from_slice(&u64::MAX.to_le_bytes());
        huge.extend_from_slice(&4u64.to_le_bytes());
        assert!(matches!(Reader::new(&huge).tensor(), Err(ScoreError::Protocol(_))));
    }

    #[test]
    fn hello_roundtrip() {
        let h = Hello {
            model: "mock".into(),
            schedule: vec![1.0, 0.5, 0.1],
            max_height: 256,
            max_width: 256,
        };
        assert_eq!(Hello::decode(&h.encode()).unwrap(), h);
    }

    proptest! {
        #[test]
        fn request_roundtrip_is_bit_exact(
            h in 1usize..6, w in 1usize..6,
            bits in proptest::collection::vec(any::<u32>(), 108),
            t in any::<f32>(), g in any::<f32>(), seed in any::<u64>(),
            prompt in ".{0,20}", with_cond in any::<bool>(),
        ) {
            let data: Vec<f32> = bits.iter().take(h * w * 3).map(|b| f32::from_bits(*b)).collect();
            let x_t = Tensor::new(vec![h, w, 3], data.clone()).unwrap();
            let cond = with_cond.then(|| Tensor::new(vec![h * w * 3], data.clone()).unwrap());
            let req = EpsRequest { x_t, t_or_step: t, prompt, cond, guidance: g, seed };
            let back = EpsRequest::decode(&req.encode()).unwrap();
            prop_assert_eq!(back.encode(), req.encode());
        }
    }
}
