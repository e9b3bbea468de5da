//! Flat parameter vectors.
//!
//! Models, model updates and dequantized payloads are all carried as a
//! [`ParamVector`]: a non-empty, finite, double precision vector. Every
//! constructor and arithmetic operation rejects non-finite values so the
//! quantizer's range arithmetic never sees NaN.

use std::ops::Index;

use crate::{Error, Result};

/// Coordinatewise minimum, maximum and range (`max - min`) of a vector.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct RangeStat {
    pub min: f64,
    pub max: f64,
    pub range: f64,
}

impl RangeStat {
    /// Range statistics of a slice. Fails on an empty slice or non-finite entries.
    pub fn of(values: &[f64]) -> Result<Self> {
        let first = *values
            .first()
            .ok_or_else(|| Error::invalid("range of an empty vector"))?;
        let mut min = first;
        let mut max = first;
        for &v in values {
            if !v.is_finite() {
                return Err(Error::Numeric(format!("non-finite value {v}")));
            }
            if v < min {
                min = v;
            }
            if v > max {
                max = v;
            }
        }
        Ok(RangeStat {
            min,
            max,
            range: max - min,
        })
    }
}

/// A non-empty vector of finite reals.
#[derive(Debug, Clone, PartialEq)]
pub struct ParamVector(Vec<f64>);

impl ParamVector {
    pub fn new(values: Vec<f64>) -> Result<Self> {
        if values.is_empty() {
            return Err(Error::invalid("parameter vector must have d >= 1"));
        }
        if let Some((j, v)) = values.iter().enumerate().find(|(_, v)| !v.is_finite()) {
            return Err(Error::Numeric(format!("non-finite value {v} at index {j}")));
        }
        Ok(ParamVector(values))
    }

    pub fn zeros(d: usize) -> Result<Self> {
        Self::new(vec![0.0; d])
    }

    pub fn len(&self) -> usize {
        self.0.len()
    }

    /// Always false; kept for API symmetry with `len`.
    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }

    pub fn as_slice(&self) -> &[f64] {
        &self.0
    }

    pub fn into_inner(self) -> Vec<f64> {
        self.0
    }

    pub fn range(&self) -> RangeStat {
        // Non-empty and finite by construction.
        RangeStat::of(&self.0).expect("ParamVector invariants")
    }

    /// `ca * a + cb * b`, elementwise.
    pub fn combine(a: &ParamVector, b: &ParamVector, ca: f64, cb: f64) -> Result<ParamVector> {
        if a.len() != b.len() {
            return Err(Error::invalid(format!(
                "length mismatch: {} vs {}",
                a.len(),
                b.len()
            )));
        }
        if !ca.is_finite() || !cb.is_finite() {
            return Err(Error::Numeric(format!(
                "non-finite coefficients ({ca}, {cb})"
            )));
        }
        let out = a.0.iter().zip(&b.0).map(|(x, y)| ca * x + cb * y).collect();
        ParamVector::new(out)
    }

    /// `self - other`.
    pub fn sub(&self, other: &ParamVector) -> Result<ParamVector> {
        Self::combine(self, other, 1.0, -1.0)
    }

    /// `self + c * other`.
    pub fn axpy(&self, c: f64, other: &ParamVector) -> Result<ParamVector> {
        Self::combine(self, other, 1.0, c)
    }

    /// Adds a constant to every coordinate.
    pub fn shift(&self, c: f64) -> Result<ParamVector> {
        ParamVector::new(self.0.iter().map(|v| v + c).collect())
    }

    pub fn l2_norm_sq(&self) -> f64 {
        self.0.iter().map(|v| v * v).sum()
    }
}

impl Index<usize> for ParamVector {
    type Output = f64;

    fn index(&self, j: usize) -> &f64 {
        &self.0[j]
    }
}

impl TryFrom<Vec<f64>> for ParamVector {
    type Error = Error;

    fn try_from(values: Vec<f64>) -> Result<Self> {
        ParamVector::new(values)
    }
}
