//! Carry-less range coder with 32-bit state and byte-wise renormalization.
//!
//! Payload layout: the coder emits the top byte of `low` whenever the
//! interval `[low, low + range)` agrees in its top 8 bits, or when `range`
//! drops below 2^16 (the interval is then truncated to the next 2^16
//! boundary so no carry can ever propagate). `finish` flushes the four bytes
//! of `low`, most significant first. The decoder mirrors every step and
//! consumes exactly the bytes the encoder produced.

use crate::entropy::gg::{PmfTable, PROB_BITS};
use crate::error::{Error, Result};

const TOP: u32 = 1 << 24;
const BOT: u32 = 1 << 16;

#[derive(Debug)]
pub struct RangeEncoder {
    low: u32,
    range: u32,
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
            out: Vec::new(),
        }
    }

    pub fn encode(&mut self, symbol: i32, pmf: &PmfTable) -> Result<()> {
        let (cum, freq) = pmf
            .interval(symbol)
            .ok_or_else(|| Error::invalid(format!("symbol {symbol} outside support [{}, {}]", pmf.lo(), pmf.hi())))?;
        let r = self.range >> PROB_BITS;
        self.low = self.low.wrapping_add(r * cum);
        self.range = r * freq;
        self.normalize();
        Ok(())
    }

    fn normalize(&mut self) {
        loop {
            if (self.low ^ self.low.wrapping_add(self.range)) >= TOP {
                if self.range >= BOT {
                    break;
                }
                self.range = self.low.wrapping_neg() & (BOT - 1);
            }
            self.out.push((self.low >> 24) as u8);
            self.low <<= 8;
            self.range <<= 8;
        }
    }

    /// Bytes emitted so far, excluding the final flush.
    pub fn bytes_written(&self) -> usize {
        self.out.len()
    }

    pub fn finish(mut self) -> Vec<u8> {
        for _ in 0..4 {
            self.out.push((self.low >> 24) as u8);
            self.low <<= 8;
        }
        self.out
    }
}

#[derive(Debug)]
pub struct RangeDecoder<'a> {
    data: &'a [u8],
    pos: usize,
    low: u32,
    range: u32,
    code: u32,
}

impl<'a> RangeDecoder<'a> {
    pub fn new(data: &'a [u8]) -> Result<Self> {
        let mut dec = Self {
            data,
            pos: 0,
            low: 0,
            range: u32::MAX,
            code: 0,
        };
        for _ in 0..4 {
            dec.code = (dec.code << 8) | dec.next_byte()? as u32;
        }
        Ok(dec)
    }

    fn next_byte(&mut self) -> Result<u8> {
        let b = *self
            .data
            .get(self.pos)
            .ok_or_else(|| Error::decode(format!("payload truncated after {} bytes", self.pos)))?;
        self.pos += 1;
        Ok(b)
    }

    pub fn decode(&mut self, pmf: &PmfTable) -> Result<i32> {
        let r = self.range >> PROB_BITS;
        let target = self.code.wrapping_sub(self.low) / r;
        let (symbol, cum, freq) = pmf
            .lookup(target)
            .ok_or_else(|| Error::decode("corrupt payload: code value outside the model"))?;
        self.low = self.low.wrapping_add(r * cum);
        self.range = r * freq;
        loop {
            if (self.low ^ self.low.wrapping_add(self.range)) >= TOP {
                if self.range >= BOT {
                    break;
                }
                self.range = self.low.wrapping_neg() & (BOT - 1);
            }
            self.code = (self.code << 8) | self.next_byte()? as u32;
            self.low <<= 8;
            self.range <<= 8;
        }
        Ok(symbol)
    }

    /// Fails unless every payload byte has been consumed.
    pub fn finish(self) -> Result<()> {
        if self.pos != self.data.len() {
            return Err(Error::decode(format!(
                "{} trailing payload bytes",
                self.data.len() - self.pos
            )));
        }
        Ok(())
    }
}

/// Encodes `symbols[i]` under `pmfs[i]`.
pub fn range_encode<P: AsRef<PmfTable>>(symbols: &[i32], pmfs: &[P]) -> Result<Vec<u8>> {
    if symbols.len() != pmfs.len() {
        return Err(Error::invalid(format!(
            "{} symbols but {} pmfs",
            symbols.len(),
            pmfs.len()
        )));
    }
    let mut enc = RangeEncoder::new();
    for (&s, pmf) in symbols.iter().zip(pmfs) {
        enc.encode(s, pmf.as_ref())?;
    }
    Ok(enc.finish())
}

/// Decodes one symbol per pmf and checks that the payload is fully consumed.
pub fn range_decode<P: AsRef<PmfTable>>(payload: &[u8], pmfs: &[P]) -> Result<Vec<i32>> {
    let mut dec = RangeDecoder::new(payload)?;
    let out = pmfs
        .iter()
        .map(|pmf| dec.decode(pmf.as_ref()))
        .collect::<Result<Vec<_>>>()?;
    dec.finish()?;
    Ok(out)
}

impl AsRef<PmfTable> for PmfTable {
    fn as_ref(&self) -> &PmfTable {
        self
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn table(probs: &[f64]) -> PmfTable {
        PmfTable::from_probabilities(-(probs.len() as i32 / 2), probs).unwrap()
    }

    #[test]
    fn empty_sequence() {
        let pmfs: Vec<PmfTable> = Vec::new();
        let bytes = range_encode(&[], &pmfs).unwrap();
        assert!(bytes.len() <= 8);
        assert!(range_decode(&bytes, &pmfs).unwrap().is_empty());
    }

    #[test]
    fn roundtrip_small() {
        let t = table(&[0.1, 0.2, 0.4, 0.2, 0.1]);
        let symbols = [0, -2, 2, 1, 0, 0, -1, 2, -2];
        let pmfs = vec![t; symbols.len()];
        let bytes = range_encode(&symbols, &pmfs).unwrap();
        assert_eq!(range_decode(&bytes, &pmfs).unwrap(), symbols);
    }

    #[test]
    fn out_of_support_refused() {
        let t = table(&[0.3, 0.4, 0.3]);
        assert!(range_encode(&[2], &[t]).is_err());
    }

    #[test]
    fn truncation_and_trailing_bytes_detected() {
        let t = table(&[0.05, 0.15, 0.6, 0.15, 0.05]);
        let symbols: Vec<i32> = (0..200).map(|i| (i * 7 % 5) - 2).collect();
        let pmfs = vec![t; symbols.len()];
        let bytes = range_encode(&symbols, &pmfs).unwrap();
        assert!(range_decode(&bytes[..bytes.len() - 1], &pmfs).is_err());
        let mut longer = bytes.clone();
        longer.push(0);
        assert!(range_decode(&longer, &pmfs).is_err());
    }

    #[test]
    fn near_deterministic_pmf_is_cheap() {
        let width = 511usize;
        let mut counts = vec![1u16; width];
        counts[255] = (65536 - (width as u32 - 1)) as u16;
        let t = PmfTable::from_counts(-255, counts).unwrap();
        let symbols = vec![0; 10_000];
        let pmfs = vec![&t; symbols.len()];
        let pmfs: Vec<PmfTable> = pmfs.into_iter().cloned().collect();
        let bytes = range_encode(&symbols, &pmfs).unwrap();
        let ideal: f64 = symbols.iter().map(|&s| t.bits(s)).sum();
        assert!(
            (bytes.len() * 8) as f64 <= ideal * 1.01 + 32.0 + 8.0,
            "{} bytes, ideal {ideal} bits",
            bytes.len()
        );
    }
}
