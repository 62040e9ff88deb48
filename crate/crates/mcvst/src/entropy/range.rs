//! Byte-oriented range coder with 32-bit frequency tables, plus the
//! bitstream container format.
//!
//! Probabilities are frozen into cumulative 32-bit integer frequencies
//! (total exactly 2^32) by deterministic rounding, so encoder and decoder
//! build bit-identical tables from the same model parameters. The coder
//! keeps a 64-bit range with byte renormalization and explicit carry
//! propagation; flush overhead is at most 8 bytes.

use crate::error::{Error, Result};

const TOTAL_BITS: u32 = 32;
const TOTAL: u64 = 1u64 << TOTAL_BITS;
// Renormalize while the range is below 2^48: keeping range >> total
// frequency bounds the per-symbol truncation loss by 2^-16 relative.
const RANGE_BOTTOM: u64 = 1u64 << 48;

/// Quantized CDF over the contiguous integer support [lo, lo + n).
#[derive(Debug, Clone)]
pub struct SymbolTable {
    lo: i32,
    /// cum[k] = scaled CDF before symbol k; cum[n] = 2^32.
    cum: Vec<u64>,
}

impl SymbolTable {
    /// Freeze floating-point probabilities to integer frequencies.
    ///
    /// Each probability is rounded to freq = round(p * 2^32) clamped to a
    /// minimum of 1; the rounding surplus/deficit is absorbed by the
    /// largest-frequency symbol. Deterministic given identical inputs.
    pub fn from_probs(lo: i32, probs: &[f64]) -> Result<Self> {
        if probs.is_empty() {
            return Err(Error::InvalidParams("empty probability table".into()));
        }
        if probs.iter().any(|&p| !(p > 0.0) || p > 1.0) {
            return Err(Error::InvalidParams(
                "probabilities must be in (0, 1]".into(),
            ));
        }
        let n = probs.len() as u64;
        if n >= TOTAL / 2 {
            return Err(Error::InvalidParams("table support too large".into()));
        }
        let mut freqs: Vec<u64> = probs
            .iter()
            .map(|&p| ((p * TOTAL as f64).round() as u64).max(1))
            .collect();
        let sum: u64 = freqs.iter().sum();
        let (argmax, _) = freqs
            .iter()
            .enumerate()
            .max_by_key(|(_, &f)| f)
            .expect("non-empty");
        if sum <= TOTAL {
            freqs[argmax] += TOTAL - sum;
        } else {
            let excess = sum - TOTAL;
            if freqs[argmax] <= excess {
                return Err(Error::InvalidParams(
                    "probability mass too concentrated to renormalize".into(),
                ));
            }
            freqs[argmax] -= excess;
        }
        let mut cum = Vec::with_capacity(freqs.len() + 1);
        let mut acc = 0u64;
        cum.push(0);
        for f in &freqs {
            acc += f;
            cum.push(acc);
        }
        debug_assert_eq!(acc, TOTAL);
        Ok(Self { lo, cum })
    }

    pub fn lo(&self) -> i32 {
        self.lo
    }

    pub fn hi(&self) -> i32 {
        self.lo + self.cum.len() as i32 - 2
    }

    fn span(&self, symbol: i32) -> Result<(u64, u64)> {
        let idx = symbol as i64 - self.lo as i64;
        if idx < 0 || idx as usize >= self.cum.len() - 1 {
            return Err(Error::SymbolOutOfRange {
                symbol,
                lo: self.lo,
                hi: self.hi(),
            });
        }
        let idx = idx as usize;
        Ok((self.cum[idx], self.cum[idx + 1] - self.cum[idx]))
    }

    /// Quantized probability of a symbol (for rate diagnostics).
    pub fn quantized_prob(&self, symbol: i32) -> Result<f64> {
        let (_, freq) = self.span(symbol)?;
        Ok(freq as f64 / TOTAL as f64)
    }

    fn lookup(&self, value: u64) -> usize {
        // Largest k with cum[k] <= value.
        let mut lo = 0usize;
        let mut hi = self.cum.len() - 1;
        while hi - lo > 1 {
            let mid = (lo + hi) / 2;
            if self.cum[mid] <= value {
                lo = mid;
            } else {
                hi = mid;
            }
        }
        lo
    }
}

#[derive(Debug)]
pub struct RangeEncoder {
    low: u128,
    range: u64,
    cache: u8,
    has_cache: bool,
    pending: u64,
    out: Vec<u8>,
}

impl Default for RangeEncoder {
    fn default() -> Self {
        Self::new()
    }
}

impl RangeEncoder {
    pub fn new() -> Self {
        Self {
            low: 0,
            range: u64::MAX,
            cache: 0,
            has_cache: false,
            pending: 0,
            out: Vec::new(),
        }
    }

    fn shift_low(&mut self) {
        let low = self.low;
        if low < 0xFF00_0000_0000_0000 || low >= (1u128 << 64) {
            let carry = (low >> 64) as u8;
            if self.has_cache {
                self.out.push(self.cache.wrapping_add(carry));
            }
            while self.pending > 0 {
                self.out.push(0xFFu8.wrapping_add(carry));
                self.pending -= 1;
            }
            self.cache = (low >> 56) as u8;
            self.has_cache = true;
        } else {
            self.pending += 1;
        }
        self.low = (low << 8) & ((1u128 << 64) - 1);
    }

    pub fn encode_symbol(&mut self, table: &SymbolTable, symbol: i32) -> Result<()> {
        let (cum, freq) = table.span(symbol)?;
        let r = self.range >> TOTAL_BITS;
        self.low += (r * cum) as u128;
        self.range = r * freq;
        while self.range < RANGE_BOTTOM {
            self.shift_low();
            self.range <<= 8;
        }
        Ok(())
    }

    /// Flush the final state; at most 8 bytes of overhead plus the cache.
    pub fn finish(mut self) -> Vec<u8> {
        for _ in 0..9 {
            self.shift_low();
        }
        self.out
    }
}

#[derive(Debug)]
pub struct RangeDecoder<'a> {
    code: u64,
    range: u64,
    buf: &'a [u8],
    pos: usize,
}

impl<'a> RangeDecoder<'a> {
    pub fn new(buf: &'a [u8]) -> Self {
        let mut d = Self {
            code: 0,
            range: u64::MAX,
            buf,
            pos: 0,
        };
        for _ in 0..8 {
            d.code = (d.code << 8) | d.next_byte() as u64;
        }
        d
    }

    fn next_byte(&mut self) -> u8 {
        // Past-the-end reads return 0; a corrupted stream then decodes to
        // arbitrary in-support symbols instead of failing.
        let b = self.buf.get(self.pos).copied().unwrap_or(0);
        self.pos += 1;
        b
    }

    pub fn decode_symbol(&mut self, table: &SymbolTable) -> i32 {
        let r = self.range >> TOTAL_BITS;
        let dv = (self.code / r).min(TOTAL - 1);
        let idx = table.lookup(dv);
        let cum = table.cum[idx];
        let freq = table.cum[idx + 1] - cum;
        self.code -= r * cum;
        self.range = r * freq;
        while self.range < RANGE_BOTTOM {
            self.code = (self.code << 8) | self.next_byte() as u64;
            self.range <<= 8;
        }
        table.lo + idx as i32
    }
}

/// Stream kinds carried in the bitstream container.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum StreamKind {
    Context = 0,
    Motion = 1,
    HyperContext = 2,
    HyperMotion = 3,
}

impl StreamKind {
    pub fn from_byte(b: u8) -> Result<Self> {
        match b {
            0 => Ok(Self::Context),
            1 => Ok(Self::Motion),
            2 => Ok(Self::HyperContext),
            3 => Ok(Self::HyperMotion),
            _ => Err(Error::Decoding(format!("unknown stream kind {b}"))),
        }
    }
}

pub const BITSTREAM_MAGIC: &[u8; 8] = b"MCVSTBS1";

/// One framed bitstream: magic, u32 LE [L, H', W'], stream-kind byte,
/// then the payload (i32 LE symbol bounds, u32 LE length, coder bytes).
#[derive(Debug, Clone)]
pub struct Container {
    pub kind: StreamKind,
    pub channels: u32,
    pub h: u32,
    pub w: u32,
    pub lo: i32,
    pub hi: i32,
    pub payload: Vec<u8>,
}

pub fn write_container(c: &Container) -> Vec<u8> {
    let mut out = Vec::with_capacity(c.payload.len() + 33);
    out.extend_from_slice(BITSTREAM_MAGIC);
    for v in [c.channels, c.h, c.w] {
        out.extend_from_slice(&v.to_le_bytes());
    }
    out.push(c.kind as u8);
    out.extend_from_slice(&c.lo.to_le_bytes());
    out.extend_from_slice(&c.hi.to_le_bytes());
    out.extend_from_slice(&(c.payload.len() as u32).to_le_bytes());
    out.extend_from_slice(&c.payload);
    out
}

/// Parse one container, returning it and the remaining bytes.
pub fn parse_container(buf: &[u8]) -> Result<(Container, &[u8])> {
    let need = |n: usize| -> Result<()> {
        if buf.len() < n {
            Err(Error::Decoding("truncated container".into()))
        } else {
            Ok(())
        }
    };
    need(33)?;
    if &buf[..8] != BITSTREAM_MAGIC {
        return Err(Error::Decoding("bad bitstream magic".into()));
    }
    let rd_u32 = |o: usize| u32::from_le_bytes(buf[o..o + 4].try_into().unwrap());
    let channels = rd_u32(8);
    let h = rd_u32(12);
    let w = rd_u32(16);
    let kind = StreamKind::from_byte(buf[20])?;
    let lo = i32::from_le_bytes(buf[21..25].try_into().unwrap());
    let hi = i32::from_le_bytes(buf[25..29].try_into().unwrap());
    let len = rd_u32(29) as usize;
    need(33 + len)?;
    Ok((
        Container {
            kind,
            channels,
            h,
            w,
            lo,
            hi,
            payload: buf[33..33 + len].to_vec(),
        },
        &buf[33 + len..],
    ))
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha12Rng;

    #[test]
    fn empty_stream_round_trips() {
        let bytes = RangeEncoder::new().finish();
        assert!(bytes.len() <= 9);
        let table = SymbolTable::from_probs(0, &[0.5, 0.5]).unwrap();
        // Nothing was encoded; the decoder can still be constructed.
        let mut dec = RangeDecoder::new(&bytes);
        let _ = dec.decode_symbol(&table);
    }

    #[test]
    fn uniform_quaternary_hits_entropy_bound() {
        let table = SymbolTable::from_probs(0, &[0.25; 4]).unwrap();
        let mut rng = ChaCha12Rng::seed_from_u64(1);
        let syms: Vec<i32> = (0..10_000).map(|_| rng.gen_range(0..4)).collect();
        let mut enc = RangeEncoder::new();
        for &s in &syms {
            enc.encode_symbol(&table, s).unwrap();
        }
        let bytes = enc.finish();
        let bits = bytes.len() * 8;
        assert!(
            (20_000..=20_128).contains(&bits),
            "coded length {bits} bits"
        );
        let mut dec = RangeDecoder::new(&bytes);
        for &s in &syms {
            assert_eq!(dec.decode_symbol(&table), s);
        }
    }

    #[test]
    fn skewed_table_round_trip() {
        let probs = [0.9, 0.05, 0.03, 0.015, 0.005];
        let table = SymbolTable::from_probs(-2, &probs).unwrap();
        let mut rng = ChaCha12Rng::seed_from_u64(2);
        let syms: Vec<i32> = (0..5_000)
            .map(|_| {
                let u: f64 = rng.gen();
                let mut acc = 0.0;
                for (k, &p) in probs.iter().enumerate() {
                    acc += p;
                    if u < acc {
                        return k as i32 - 2;
                    }
                }
                2
            })
            .collect();
        let mut enc = RangeEncoder::new();
        for &s in &syms {
            enc.encode_symbol(&table, s).unwrap();
        }
        let bytes = enc.finish();
        let mut dec = RangeDecoder::new(&bytes);
        for &s in &syms {
            assert_eq!(dec.decode_symbol(&table), s);
        }
    }

    #[test]
    fn per_symbol_tables_round_trip() {
        // Each position uses its own table, as the latent coder does.
        let mut rng = ChaCha12Rng::seed_from_u64(3);
        let tables: Vec<SymbolTable> = (0..2_000)
            .map(|_| {
                let n = rng.gen_range(2..10);
                let raw: Vec<f64> = (0..n).map(|_| rng.gen_range(0.01..1.0)).collect();
                let sum: f64 = raw.iter().sum();
                let probs: Vec<f64> = raw.iter().map(|v| v / sum).collect();
                SymbolTable::from_probs(rng.gen_range(-50..50), &probs).unwrap()
            })
            .collect();
        let syms: Vec<i32> = tables
            .iter()
            .map(|t| rng.gen_range(t.lo()..=t.hi()))
            .collect();
        let mut enc = RangeEncoder::new();
        for (t, &s) in tables.iter().zip(&syms) {
            enc.encode_symbol(t, s).unwrap();
        }
        let bytes = enc.finish();
        let mut dec = RangeDecoder::new(&bytes);
        for (t, &s) in tables.iter().zip(&syms) {
            assert_eq!(dec.decode_symbol(t), s);
        }
    }

    #[test]
    fn out_of_support_symbol_is_an_error() {
        let table = SymbolTable::from_probs(0, &[0.5, 0.5]).unwrap();
        let mut enc = RangeEncoder::new();
        assert!(matches!(
            enc.encode_symbol(&table, 7),
            Err(Error::SymbolOutOfRange { symbol: 7, .. })
        ));
    }

    #[test]
    fn container_round_trip() {
        let c = Container {
            kind: StreamKind::Motion,
            channels: 64,
            h: 4,
            w: 4,
            lo: -12,
            hi: 12,
            payload: vec![1, 2, 3, 4, 5],
        };
        let bytes = write_container(&c);
        assert_eq!(&bytes[..8], BITSTREAM_MAGIC);
        let (back, rest) = parse_container(&bytes).unwrap();
        assert!(rest.is_empty());
        assert_eq!(back.kind, StreamKind::Motion);
        assert_eq!((back.channels, back.h, back.w), (64, 4, 4));
        assert_eq!((back.lo, back.hi), (-12, 12));
        assert_eq!(back.payload, c.payload);
    }

    #[test]
    fn container_rejects_garbage() {
        assert!(parse_container(b"short").is_err());
        let mut bytes = write_container(&Container {
            kind: StreamKind::Context,
            channels: 1,
            h: 1,
            w: 1,
            lo: 0,
            hi: 0,
            payload: vec![],
        });
        bytes[0] = b'X';
        assert!(parse_container(&bytes).is_err());
    }
}
