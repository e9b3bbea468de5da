//! Stochastic uniform quantization.
//!
//! A vector is mapped onto `s = 2^bits - 1` equal bins spanning its own
//! `[min, max]`. Each coordinate is rounded to the lower or upper edge of
//! its bin with probabilities that make the result unbiased:
//!
//! ```text
//! Q(v) = h'   with probability (h'' - v) / (h'' - h')
//!        h''  otherwise
//! ```
//!
//! The random draw for coordinate `j` is `unit_f64(seed, j)`, so a
//! quantization is a pure function of `(v, bits, seed)`.

use crate::bitpack;
use crate::rng::unit_f64;
use crate::{Error, ParamVector, Result};

/// Bytes in the serialized header: d (u32) + bits (u8) + min, max (f64) + seed (u64).
pub const HEADER_LEN: usize = 4 + 1 + 8 + 8 + 8;

/// Bit width of a quantizer; the number of bins is `2^bits - 1`.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct QuantizerSpec {
    bits: u8,
}

impl QuantizerSpec {
    pub fn new(bits: u8) -> Result<Self> {
        if !(1..=32).contains(&bits) {
            return Err(Error::invalid(format!(
                "bits must be in 1..=32, got {bits}"
            )));
        }
        Ok(QuantizerSpec { bits })
    }

    pub fn bits(&self) -> u8 {
        self.bits
    }

    /// `s = 2^bits - 1`.
    pub fn bins(&self) -> u64 {
        (1u64 << self.bits) - 1
    }
}

/// The wire object for both links.
#[derive(Debug, Clone, PartialEq)]
pub struct QuantizedTensor {
    min: f64,
    max: f64,
    bits: u8,
    d: usize,
    payload: Vec<u8>,
    seed: u64,
}

impl QuantizedTensor {
    /// Assembles a tensor from already-packed parts, validating the invariants.
    pub fn from_parts(
        min: f64,
        max: f64,
        bits: u8,
        d: usize,
        payload: Vec<u8>,
        seed: u64,
    ) -> Result<Self> {
        QuantizerSpec::new(bits)?;
        if d == 0 || d > u32::MAX as usize {
            return Err(Error::invalid(format!("element count {d} out of range")));
        }
        if !(min.is_finite() && max.is_finite()) || min > max {
            return Err(Error::invalid(format!("bad range [{min}, {max}]")));
        }
        let expected = bitpack::packed_len(d, bits);
        if payload.len() != expected {
            return Err(Error::format(
                HEADER_LEN + payload.len().min(expected),
                format!("payload is {} bytes, expected {expected}", payload.len()),
            ));
        }
        Ok(QuantizedTensor {
            min,
            max,
            bits,
            d,
            payload,
            seed,
        })
    }

    pub fn min(&self) -> f64 {
        self.min
    }

    pub fn max(&self) -> f64 {
        self.max
    }

    pub fn bits(&self) -> u8 {
        self.bits
    }

    pub fn len(&self) -> usize {
        self.d
    }

    pub fn is_empty(&self) -> bool {
        self.d == 0
    }

    pub fn seed(&self) -> u64 {
        self.seed
    }

    pub fn payload(&self) -> &[u8] {
        &self.payload
    }

    pub fn bins(&self) -> u64 {
        (1u64 << self.bits) - 1
    }

    /// Unpacked level indices.
    pub fn levels(&self) -> Result<Vec<u32>> {
        bitpack::unpack(&self.payload, self.bits, self.d)
    }

    /// Bits on the wire for the payload alone (`d * bits`).
    pub fn payload_bits(&self) -> u64 {
        self.d as u64 * self.bits as u64
    }

    /// Header followed by the packed payload, all little-endian.
    pub fn to_bytes(&self) -> Vec<u8> {
        let mut out = Vec::with_capacity(HEADER_LEN + self.payload.len());
        out.extend_from_slice(&(self.d as u32).to_le_bytes());
        out.push(self.bits);
        out.extend_from_slice(&self.min.to_le_bytes());
        out.extend_from_slice(&self.max.to_le_bytes());
        out.extend_from_slice(&self.seed.to_le_bytes());
        out.extend_from_slice(&self.payload);
        out
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self> {
        if bytes.len() < HEADER_LEN {
            return Err(Error::format(
                bytes.len(),
                format!("truncated header: {} of {HEADER_LEN} bytes", bytes.len()),
            ));
        }
        let word = |at: usize, n: usize| &bytes[at..at + n];
        let d = u32::from_le_bytes(word(0, 4).try_into().unwrap()) as usize;
        let bits = bytes[4];
        let min = f64::from_le_bytes(word(5, 8).try_into().unwrap());
        let max = f64::from_le_bytes(word(13, 8).try_into().unwrap());
        let seed = u64::from_le_bytes(word(21, 8).try_into().unwrap());
        if !(1..=32).contains(&bits) {
            return Err(Error::format(4, format!("bit width {bits} outside 1..=32")));
        }
        let payload = bytes[HEADER_LEN..].to_vec();
        let tensor = Self::from_parts(min, max, bits, d, payload, seed)?;
        // Reject bad padding now rather than at dequantization.
        tensor.levels().map_err(|e| match e {
            Error::Format { offset, message } => Error::Format {
                offset: offset + HEADER_LEN,
                message,
            },
            other => other,
        })?;
        Ok(tensor)
    }
}

/// Level index for one coordinate given the scaled position `x` in `[0, s]`.
#[inline]
fn stochastic_level(x: f64, bins: u64, u: f64) -> u64 {
    // x >= 0, so truncation is floor
    let lower = x as u64;
    let frac = x - lower as f64;
    if lower >= bins {
        return bins;
    }
    // frac == 0 (edge hit) never rounds up. Branch-free: the comparison is a coin flip.
    lower + u64::from(u < frac)
}

/// Level indices for `values` under `spec` and `seed`, without packing.
pub fn quantize_levels(
    values: &[f64],
    spec: QuantizerSpec,
    seed: u64,
) -> Result<(f64, f64, Vec<u32>)> {
    let stat = crate::RangeStat::of(values)?;
    let bins = spec.bins();
    if stat.range == 0.0 {
        return Ok((stat.min, stat.max, vec![0; values.len()]));
    }
    let scale = bins as f64 / stat.range;
    let levels = values
        .iter()
        .enumerate()
        .map(|(j, &v)| {
            let level = if v == stat.min {
                0
            } else if v == stat.max {
                bins
            } else {
                let x = ((v - stat.min) * scale).clamp(0.0, bins as f64);
                stochastic_level(x, bins, unit_f64(seed, j as u64))
            };
            level as u32
        })
        .collect();
    Ok((stat.min, stat.max, levels))
}

/// Value of level `level` on the grid spanning `[min, max]` with `bins` bins.
#[inline]
pub fn level_value(min: f64, max: f64, bins: u64, level: u64) -> f64 {
    if level >= bins {
        max
    } else {
        min + (level as f64 * (max - min)) / bins as f64
    }
}

pub fn quantize(v: &ParamVector, spec: QuantizerSpec, seed: u64) -> Result<QuantizedTensor> {
    let (min, max, levels) = quantize_levels(v.as_slice(), spec, seed)?;
    let payload = bitpack::pack(&levels, spec.bits());
    QuantizedTensor::from_parts(min, max, spec.bits(), v.len(), payload, seed)
}

pub fn dequantize(q: &QuantizedTensor) -> Result<ParamVector> {
    let bins = q.bins();
    let values = q
        .levels()?
        .into_iter()
        .map(|l| level_value(q.min, q.max, bins, l as u64))
        .collect();
    ParamVector::new(values)
}

/// `‖dequantize(quantize(v)) - v‖²`.
pub fn quantization_error_sq(v: &ParamVector, spec: QuantizerSpec, seed: u64) -> Result<f64> {
    let (min, max, levels) = quantize_levels(v.as_slice(), spec, seed)?;
    let bins = spec.bins();
    Ok(v.as_slice()
        .iter()
        .zip(levels)
        .map(|(&x, l)| {
            let e = level_value(min, max, bins, l as u64) - x;
            e * e
        })
        .sum())
}
