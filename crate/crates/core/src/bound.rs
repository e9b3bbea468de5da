//! Right-hand sides of the convergence bounds for non-convex losses.
//!
//! For `K` rounds of `τ` local steps with learning rate `η`, the averaged
//! squared gradient norm is bounded by
//!
//! ```text
//!   (Ld / (n²Kτη)) ΣΣ (R_up / s_up)²        uplink quantization
//! + (2Ld / (Kτη))  Σ  (R_dn / s_dn)²        downlink quantization
//! + 2 (f(w0) - f*) / (Kτη)                  initialization
//! + [Lησ² + L²η²(n+1)(τ-1)σ²] / n           SGD noise
//! ```
//!
//! The uplink-only and downlink-only variants drop the other link's term.

use crate::allocation::RangeTrace;
use crate::{Error, Result};

/// The constants that scale the quantization terms.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ObjectiveConstants {
    /// Smoothness constant `L`.
    pub l: f64,
    /// Local steps per round.
    pub tau: usize,
    /// Learning rate.
    pub eta: f64,
}

impl ObjectiveConstants {
    pub fn validate(&self) -> Result<()> {
        if !(self.l.is_finite() && self.l > 0.0) {
            return Err(Error::invalid(format!(
                "L must be positive, got {}",
                self.l
            )));
        }
        if !(self.eta.is_finite() && self.eta > 0.0) {
            return Err(Error::invalid(format!(
                "eta must be positive, got {}",
                self.eta
            )));
        }
        if self.tau == 0 {
            return Err(Error::invalid("tau must be at least 1"));
        }
        Ok(())
    }

    /// `(Ld / (n²Kτη), 2Ld / (Kτη))`.
    pub fn term_scales(&self, d: usize, n: usize, k: usize) -> (f64, f64) {
        let base = self.l * d as f64 / (k as f64 * self.tau as f64 * self.eta);
        (base / (n as f64 * n as f64), 2.0 * base)
    }
}

fn check_bins(s: f64) -> Result<()> {
    if s.is_finite() && s >= 1.0 {
        Ok(())
    } else {
        Err(Error::invalid(format!("bin count must be >= 1, got {s}")))
    }
}

/// The uplink and downlink quantization terms for the given bin counts.
pub fn quantization_terms(
    trace: &RangeTrace,
    d: usize,
    consts: &ObjectiveConstants,
    s_up: &[Vec<f64>],
    s_dn: &[f64],
) -> Result<(f64, f64)> {
    let (k, n) = (trace.rounds(), trace.clients());
    if s_up.len() != k || s_up.iter().any(|row| row.len() != n) || s_dn.len() != k {
        return Err(Error::invalid(
            "bin matrix does not match the trace dimensions",
        ));
    }
    let (cu, cd) = consts.term_scales(d, n, k);
    let mut up = 0.0;
    for (rrow, srow) in trace.uplink().iter().zip(s_up) {
        for (r, &s) in rrow.iter().zip(srow) {
            check_bins(s)?;
            up += (r / s).powi(2);
        }
    }
    let mut dn = 0.0;
    for (r, &s) in trace.downlink().iter().zip(s_dn) {
        check_bins(s)?;
        dn += (r / s).powi(2);
    }
    Ok((cu * up, cd * dn))
}

/// Product-form lower bound on the two quantization terms:
/// `(2√2 Ld / (n√n K²τη)) (Σ R_dn/s_dn) (ΣΣ R_up/s_up)`.
/// Attained exactly when every `R_up/s_up = α` and every `R_dn/s_dn = α/√(2n)`.
pub fn product_lower_bound(
    trace: &RangeTrace,
    d: usize,
    consts: &ObjectiveConstants,
    s_up: &[Vec<f64>],
    s_dn: &[f64],
) -> f64 {
    let (k, n) = (trace.rounds() as f64, trace.clients() as f64);
    let dn: f64 = trace.downlink().iter().zip(s_dn).map(|(r, s)| r / s).sum();
    let up: f64 = trace
        .uplink()
        .iter()
        .zip(s_up)
        .flat_map(|(rr, ss)| rr.iter().zip(ss).map(|(r, s)| r / s))
        .sum();
    let scale = 2.0 * 2f64.sqrt() * consts.l * d as f64
        / (n * n.sqrt() * k * k * consts.tau as f64 * consts.eta);
    scale * dn * up
}

/// Inputs of the bound evaluators.
#[derive(Debug, Clone, PartialEq)]
pub struct BoundInputs {
    pub l: f64,
    pub eta: f64,
    pub sigma_sq: f64,
    pub f0_minus_fstar: f64,
    pub d: usize,
    pub tau: usize,
    pub trace: RangeTrace,
    /// Uplink bins `s_m^i`, K rows of n.
    pub s_up: Vec<Vec<f64>>,
    /// Downlink bins `s_m`.
    pub s_dn: Vec<f64>,
}

/// The four terms of the bound and their sum.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct BoundTerms {
    pub uplink_term: f64,
    pub downlink_term: f64,
    pub init_term: f64,
    pub sgd_term: f64,
    pub total: f64,
}

impl BoundInputs {
    fn consts(&self) -> ObjectiveConstants {
        ObjectiveConstants {
            l: self.l,
            tau: self.tau,
            eta: self.eta,
        }
    }

    fn validate(&self) -> Result<()> {
        self.consts().validate()?;
        if !(self.sigma_sq >= 0.0 && self.sigma_sq.is_finite()) {
            return Err(Error::invalid("sigma^2 must be finite and non-negative"));
        }
        if !(self.f0_minus_fstar >= 0.0 && self.f0_minus_fstar.is_finite()) {
            return Err(Error::invalid("f(w0) - f* must be finite and non-negative"));
        }
        if self.d == 0 {
            return Err(Error::invalid("d must be at least 1"));
        }
        Ok(())
    }

    fn shared_terms(&self) -> (f64, f64) {
        let k = self.trace.rounds() as f64;
        let n = self.trace.clients() as f64;
        let tau = self.tau as f64;
        let init = 2.0 * self.f0_minus_fstar / (k * tau * self.eta);
        let sgd = (self.l * self.eta * self.sigma_sq
            + self.l * self.l * self.eta * self.eta * (n + 1.0) * (tau - 1.0) * self.sigma_sq)
            / n;
        (init, sgd)
    }
}

/// Joint uplink/downlink bound, decomposed.
pub fn joint_bound(b: &BoundInputs) -> Result<BoundTerms> {
    b.validate()?;
    let (uplink_term, downlink_term) =
        quantization_terms(&b.trace, b.d, &b.consts(), &b.s_up, &b.s_dn)?;
    let (init_term, sgd_term) = b.shared_terms();
    Ok(BoundTerms {
        uplink_term,
        downlink_term,
        init_term,
        sgd_term,
        total: uplink_term + downlink_term + init_term + sgd_term,
    })
}

/// Uplink-only bound (downlink assumed perfect).
pub fn uplink_only_bound(b: &BoundInputs) -> Result<f64> {
    let t = joint_bound(b)?;
    Ok(t.uplink_term + t.init_term + t.sgd_term)
}

/// Downlink-only bound (uplink assumed perfect).
pub fn downlink_only_bound(b: &BoundInputs) -> Result<f64> {
    let t = joint_bound(b)?;
    Ok(t.downlink_term + t.init_term + t.sgd_term)
}

/// Step-size condition `1 - Lη - 2τ(τ-1)L²η² >= 0`.
pub fn eta_condition_ok(l: f64, eta: f64, tau: usize) -> bool {
    let tau = tau as f64;
    1.0 - l * eta - 2.0 * tau * (tau - 1.0) * l * l * eta * eta >= 0.0
}
