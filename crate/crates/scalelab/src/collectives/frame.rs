//! Wire format for the socket transport.
//!
//! Layout, all integers little-endian:
//! magic "SLAB" | version u8 | msg_type u8 | rank u16 | chunk_index u32 |
//! payload_len u32 | payload (f64 LE x count), payload_len = 8 * count.

use std::io::{Read, Write};

use crate::error::{Error, Result};

pub const MAGIC: &[u8; 4] = b"SLAB";
pub const VERSION: u8 = 1;

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
#[repr(u8)]
pub enum MsgType {
    ReduceChunk = 1,
    BcastChunk = 2,
    Barrier = 3,
}

impl MsgType {
    fn from_u8(v: u8) -> Result<Self> {
        match v {
            1 => Ok(MsgType::ReduceChunk),
            2 => Ok(MsgType::BcastChunk),
            3 => Ok(MsgType::Barrier),
            other => Err(Error::Wire(format!("unknown message type {other}"))),
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct Frame {
    pub msg_type: MsgType,
    /// Sender rank; the receiver in a ring is implicitly rank + 1 mod N.
    pub rank: u16,
    pub chunk_index: u32,
    pub payload: Vec<f64>,
}

impl Frame {
    pub fn encode<W: Write>(&self, out: &mut W) -> Result<()> {
        out.write_all(MAGIC)?;
        out.write_all(&[VERSION, self.msg_type as u8])?;
        out.write_all(&self.rank.to_le_bytes())?;
        out.write_all(&self.chunk_index.to_le_bytes())?;
        let payload_len = (self.payload.len() * 8) as u32;
        out.write_all(&payload_len.to_le_bytes())?;
        for v in &self.payload {
            out.write_all(&v.to_le_bytes())?;
        }
        Ok(())
    }

    pub fn decode<R: Read>(input: &mut R) -> Result<Frame> {
        let mut magic = [0u8; 4];
        input.read_exact(&mut magic)?;
        if &magic != MAGIC {
            return Err(Error::Wire(format!(
                "bad frame magic {magic:?}, expected {MAGIC:?}"
            )));
        }
        let mut head = [0u8; 2];
        input.read_exact(&mut head)?;
        if head[0] != VERSION {
            return Err(Error::Wire(format!("unsupported frame version {}", head[0])));
        }
        let msg_type = MsgType::from_u8(head[1])?;
        let mut rank = [0u8; 2];
        input.read_exact(&mut rank)?;
        let mut chunk = [0u8; 4];
        input.read_exact(&mut chunk)?;
        let mut plen = [0u8; 4];
        input.read_exact(&mut plen)?;
        let payload_len = u32::from_le_bytes(plen) as usize;
        if payload_len % 8 != 0 {
            return Err(Error::Wire(format!(
                "payload length {payload_len} is not a multiple of 8"
            )));
        }
        let mut bytes = vec![0u8; payload_len];
        input.read_exact(&mut bytes).map_err(|e| {
            Error::Wire(format!(
                "truncated payload: expected {payload_len} bytes ({e})"
            ))
        })?;
        let payload = bytes
            .chunks_exact(8)
            .map(|c| f64::from_le_bytes(c.try_into().unwrap()))
            .collect();
        Ok(Frame {
            msg_type,
            rank: u16::from_le_bytes(rank),
            chunk_index: u32::from_le_bytes(chunk),
            payload,
        })
    }

    pub fn to_bytes(&self) -> Vec<u8> {
        let mut out = Vec::with_capacity(16 + self.payload.len() * 8);
        self.encode(&mut out).expect("vec write cannot fail");
        out
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Frame> {
        let mut cursor = bytes;
        let frame = Frame::decode(&mut cursor)?;
        if !cursor.is_empty() {
            return Err(Error::Wire(format!(
                "{} trailing bytes after frame",
                cursor.len()
            )));
        }
        Ok(frame)
    }
}
