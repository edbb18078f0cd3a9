//! Byte-oriented range coder with 32-bit range and carry propagation through
//! a one-byte cache (the LZMA construction).

use super::cdf::{CdfTable, PRECISION};
use super::EntropyError;

const TOP: u32 = 1 << 24;

pub struct RangeEncoder {
    low: u64,
    range: u32,
    cache: u8,
    cache_size: u64,
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
            range: u32::MAX,
            cache: 0,
            cache_size: 1,
            out: Vec::new(),
        }
    }

    /// Codes the interval `[start, start + freq)` out of `2^PRECISION`.
    pub fn encode(&mut self, start: u32, freq: u32) {
        debug_assert!(freq > 0 && start + freq <= 1 << PRECISION);
        let r = self.range >> PRECISION;
        self.low += r as u64 * start as u64;
        self.range = r * freq;
        while self.range < TOP {
            self.range <<= 8;
            self.shift_low();
        }
    }

    fn shift_low(&mut self) {
        if (self.low as u32) < 0xFF00_0000 || (self.low >> 32) != 0 {
            let carry = (self.low >> 32) as u8;
            let mut byte = self.cache;
            loop {
                self.out.push(byte.wrapping_add(carry));
                byte = 0xFF;
                self.cache_size -= 1;
                if self.cache_size == 0 {
                    break;
                }
            }
            self.cache = ((self.low >> 24) & 0xFF) as u8;
        }
        self.cache_size += 1;
        self.low = (self.low & 0x00FF_FFFF) << 8;
    }

    pub fn finish(mut self) -> Vec<u8> {
        for _ in 0..5 {
            self.shift_low();
        }
        self.out
    }
}

pub struct RangeDecoder<'a> {
    code: u32,
    range: u32,
    input: &'a [u8],
    pos: usize,
}

impl<'a> RangeDecoder<'a> {
    pub fn new(input: &'a [u8]) -> Result<Self, EntropyError> {
        if input.len() < 5 {
            return Err(EntropyError::Truncated);
        }
        let mut d = Self {
            code: 0,
            range: u32::MAX,
            input,
            pos: 0,
        };
        // The first byte is the encoder's initial empty cache.
        if d.next_byte()? != 0 {
            return Err(EntropyError::Corrupt("nonzero leading byte".into()));
        }
        for _ in 0..4 {
            d.code = (d.code << 8) | d.next_byte()? as u32;
        }
        Ok(d)
    }

    fn next_byte(&mut self) -> Result<u8, EntropyError> {
        let b = *self.input.get(self.pos).ok_or(EntropyError::Truncated)?;
        self.pos += 1;
        Ok(b)
    }

    /// Returns the target frequency; must be followed by [`Self::consume`].
    pub fn peek(&mut self) -> Result<u32, EntropyError> {
        let r = self.range >> PRECISION;
        let v = self.code / r;
        if v >= 1 << PRECISION {
            return Err(EntropyError::Corrupt("code value outside the model".into()));
        }
        Ok(v)
    }

    pub fn consume(&mut self, start: u32, freq: u32) -> Result<(), EntropyError> {
        let r = self.range >> PRECISION;
        self.code -= r * start;
        self.range = r * freq;
        while self.range < TOP {
            self.range <<= 8;
            self.code = (self.code << 8) | self.next_byte()? as u32;
        }
        Ok(())
    }

    /// Every byte must have been read exactly once.
    pub fn finish(self) -> Result<(), EntropyError> {
        if self.pos == self.input.len() {
            Ok(())
        } else {
            Err(EntropyError::LengthMismatch {
                expected: self.pos,
                actual: self.input.len(),
            })
        }
    }
}

fn put_symbol(enc: &mut RangeEncoder, table: &CdfTable, value: i32) {
    let c = table.cumulative();
    match table.symbol_of(value) {
        Some(s) => enc.encode(c[s], c[s + 1] - c[s]),
        None => {
            let t = table.tail_symbol();
            enc.encode(c[t], c[t + 1] - c[t]);
            let raw = value as u32;
            enc.encode(raw >> 16, 1);
            enc.encode(raw & 0xFFFF, 1);
        }
    }
}

fn get_symbol(dec: &mut RangeDecoder<'_>, table: &CdfTable) -> Result<i32, EntropyError> {
    let c = table.cumulative();
    let s = table.lookup(dec.peek()?);
    dec.consume(c[s], c[s + 1] - c[s])?;
    if s != table.tail_symbol() {
        return Ok(table.symbol_offset() + s as i32);
    }
    let hi = dec.peek()?;
    dec.consume(hi, 1)?;
    let lo = dec.peek()?;
    dec.consume(lo, 1)?;
    let value = ((hi << 16) | lo) as i32;
    if table.symbol_of(value).is_some() {
        return Err(EntropyError::Corrupt(format!("escaped in-range value {value}")));
    }
    Ok(value)
}

/// Range-codes `values[i]` under `tables[i]`.
pub fn encode_symbols(values: &[i32], tables: &[&CdfTable]) -> Vec<u8> {
    assert_eq!(values.len(), tables.len(), "one table per value");
    let mut enc = RangeEncoder::new();
    for (&v, t) in values.iter().zip(tables) {
        put_symbol(&mut enc, t, v);
    }
    enc.finish()
}

/// Exact inverse of [`encode_symbols`]; rejects streams that are truncated,
/// carry trailing bytes, or decode outside the model.
pub fn decode_symbols(bytes: &[u8], tables: &[&CdfTable]) -> Result<Vec<i32>, EntropyError> {
    let mut dec = RangeDecoder::new(bytes)?;
    let values = tables
        .iter()
        .map(|t| get_symbol(&mut dec, t))
        .collect::<Result<Vec<_>, _>>()?;
    dec.finish()?;
    Ok(values)
}

/// Ideal code length of `values` under the quantized tables, in bits.
pub fn model_bits(values: &[i32], tables: &[&CdfTable]) -> f64 {
    values.iter().zip(tables).map(|(&v, t)| t.cost_bits(v)).sum()
}
