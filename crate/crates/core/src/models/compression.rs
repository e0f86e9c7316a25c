use thiserror::Error;

use crate::leakage::{LeakageClause, Observation, Tag};
use crate::machine::{MachineState, MicroOp, UopContext};

pub const LINE_BYTES: usize = 64;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Error)]
#[error("cache line must be {LINE_BYTES} bytes, got {0}")]
pub struct LineLengthError(pub usize);

fn check(line: &[u8]) -> Result<(), LineLengthError> {
    if line.len() == LINE_BYTES {
        Ok(())
    } else {
        Err(LineLengthError(line.len()))
    }
}

const FPC_PREFIX: u32 = 3;
const FPC_MAX_ZERO_RUN: usize = 8;

/// Size in bits of a non-zero-run word encoding, minimum over the patterns.
fn fpc_word_bits(w: u32) -> u32 {
    let s = w as i32;
    let halves = [(w & 0xffff) as u16 as i16, (w >> 16) as u16 as i16];
    let bytes = w.to_le_bytes();
    let data = if (-8..8).contains(&s) {
        4
    } else if (-128..128).contains(&s) || bytes.iter().all(|&b| b == bytes[0]) {
        8
    } else if (-32768..32768).contains(&s) || w & 0xffff == 0 || halves.iter().all(|h| (-128..128).contains(h)) {
        16
    } else {
        32
    };
    FPC_PREFIX + data
}

/// Frequent-pattern compressed size of a 64-byte line, in bits.
pub fn fpc_size(line: &[u8]) -> Result<u32, LineLengthError> {
    check(line)?;
    let words: Vec<u32> = line
        .chunks_exact(4)
        .map(|c| u32::from_le_bytes(c.try_into().unwrap()))
        .collect();
    let mut bits = 0;
    let mut i = 0;
    while i < words.len() {
        if words[i] == 0 {
            let run = words[i..]
                .iter()
                .take(FPC_MAX_ZERO_RUN)
                .take_while(|&&w| w == 0)
                .count();
            bits += FPC_PREFIX + 3;
            i += run;
        } else {
            bits += fpc_word_bits(words[i]);
            i += 1;
        }
    }
    Ok(bits)
}

fn segments(line: &[u8], width: usize) -> Vec<u64> {
    line.chunks_exact(width)
        .map(|c| {
            let mut b = [0u8; 8];
            b[..width].copy_from_slice(c);
            u64::from_le_bytes(b)
        })
        .collect()
}

/// Whether every segment's delta from the first fits `delta` signed bytes.
fn base_delta_fits(line: &[u8], base: usize, delta: usize) -> bool {
    let segs = segments(line, base);
    let shift = 64 - 8 * base as u32;
    let dshift = 64 - 8 * delta as u32;
    segs.iter().all(|&s| {
        // delta in the segment's own width, sign-extended to 64 bits
        let d = ((s.wrapping_sub(segs[0]) << shift) as i64) >> shift;
        (d << dshift) >> dshift == d
    })
}

/// Base-delta-immediate compressed size of a 64-byte line, in bytes.
pub fn bdi_size(line: &[u8]) -> Result<u32, LineLengthError> {
    check(line)?;
    if line.iter().all(|&b| b == 0) {
        return Ok(1);
    }
    let segs = segments(line, 8);
    if segs.iter().all(|&s| s == segs[0]) {
        return Ok(8);
    }
    const ENCODINGS: [(usize, usize, u32); 6] =
        [(8, 1, 16), (8, 2, 24), (8, 4, 40), (4, 1, 20), (4, 2, 36), (2, 1, 34)];
    Ok(ENCODINGS
        .iter()
        .filter(|&&(b, d, _)| base_delta_fits(line, b, d))
        .map(|&(_, _, size)| size)
        .min()
        .unwrap_or(LINE_BYTES as u32))
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum CompressionScheme {
    Fpc,
    Bdi,
}

/// Leaks the compressed size of the line touched by each memory access.
#[derive(Clone, Debug)]
pub struct CacheCompression {
    scheme: CompressionScheme,
}

impl CacheCompression {
    pub fn new(scheme: CompressionScheme) -> Self {
        CacheCompression { scheme }
    }
}

impl LeakageClause for CacheCompression {
    fn name(&self) -> &str {
        match self.scheme {
            CompressionScheme::Fpc => "cc-fpc",
            CompressionScheme::Bdi => "cc-bdi",
        }
    }

    fn observe(&mut self, uop: &MicroOp, _: &UopContext<'_>, st: &MachineState) -> Option<Observation> {
        let (addr, store) = match *uop {
            MicroOp::Load { addr, .. } => (addr, None),
            MicroOp::Store { addr, size, value } => (addr, Some((size, value))),
            _ => return None,
        };
        let base = addr & !(LINE_BYTES as u64 - 1);
        let mut line = [0u8; LINE_BYTES];
        st.mem.read_bytes(base, &mut line);
        if let Some((size, value)) = store {
            let off = (addr - base) as usize;
            let n = (size as usize).min(LINE_BYTES - off);
            line[off..off + n].copy_from_slice(&value.to_le_bytes()[..n]);
        }
        let size = match self.scheme {
            CompressionScheme::Fpc => fpc_size(&line),
            CompressionScheme::Bdi => bdi_size(&line),
        }
        .expect("line is 64 bytes");
        Some(Observation::new(Tag::Compression, [u64::from(size)]))
    }

    fn box_clone(&self) -> Box<dyn LeakageClause> {
        Box::new(self.clone())
    }
}
