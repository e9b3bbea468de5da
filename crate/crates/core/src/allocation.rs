//! Per-round, per-link bit allocation.
//!
//! The joint policy keeps `R / s` constant across every uplink tensor
//! (`= alpha`) and every downlink tensor (`= beta = alpha / sqrt(2n)`), which
//! gives the bit rules
//!
//! ```text
//! uplink:   bits = ceil(log2(R_up / alpha))
//! downlink: bits = ceil(log2(sqrt(2n) * R_dn / alpha))
//! ```
//!
//! `alpha` either comes from configuration (online mode) or from the
//! closed form [`alpha_joint`] applied to a recorded [`RangeTrace`] and an
//! energy budget (oracle mode). [`brute_force_allocation`] solves the integer
//! problem exactly on tiny instances and serves as an independent check on
//! the closed form.

use std::ops::RangeInclusive;

use crate::bound::{quantization_terms, ObjectiveConstants};
use crate::{Error, Result};

/// Bits charged for a lossless (unquantized) link.
pub const LOSSLESS_BITS: u8 = 32;
pub const MIN_BITS: u8 = 1;
pub const MAX_BITS: u8 = 32;

/// Uplink ranges `R_m^i(Δw)` (K rows of n clients) and downlink ranges `R_m(w)`.
#[derive(Debug, Clone, PartialEq)]
pub struct RangeTrace {
    uplink: Vec<Vec<f64>>,
    downlink: Vec<f64>,
}

impl RangeTrace {
    /// Builds a trace; every range must be finite and strictly positive.
    pub fn new(uplink: Vec<Vec<f64>>, downlink: Vec<f64>) -> Result<Self> {
        if uplink.is_empty() {
            return Err(Error::invalid("trace needs at least one round"));
        }
        if uplink.len() != downlink.len() {
            return Err(Error::invalid(format!(
                "trace has {} uplink rounds but {} downlink rounds",
                uplink.len(),
                downlink.len()
            )));
        }
        let n = uplink[0].len();
        if n == 0 || uplink.iter().any(|row| row.len() != n) {
            return Err(Error::invalid(
                "every round needs the same non-zero client count",
            ));
        }
        let bad = uplink
            .iter()
            .flatten()
            .chain(&downlink)
            .find(|r| !(r.is_finite() && **r > 0.0));
        if let Some(r) = bad {
            return Err(Error::invalid(format!(
                "trace ranges must be positive, found {r}"
            )));
        }
        Ok(RangeTrace { uplink, downlink })
    }

    /// Builds a trace from observed ranges, replacing zero ranges with the
    /// smallest positive range observed on the same link.
    pub fn from_observed(mut uplink: Vec<Vec<f64>>, mut downlink: Vec<f64>) -> Result<Self> {
        fn smallest_positive<'a>(it: impl Iterator<Item = &'a f64>) -> Option<f64> {
            it.copied().filter(|r| *r > 0.0).reduce(f64::min)
        }
        let up_floor = smallest_positive(uplink.iter().flatten())
            .ok_or_else(|| Error::invalid("uplink trace has no positive range"))?;
        let dn_floor = smallest_positive(downlink.iter())
            .ok_or_else(|| Error::invalid("downlink trace has no positive range"))?;
        for r in uplink.iter_mut().flatten() {
            if *r == 0.0 {
                *r = up_floor;
            }
        }
        for r in downlink.iter_mut() {
            if *r == 0.0 {
                *r = dn_floor;
            }
        }
        Self::new(uplink, downlink)
    }

    pub fn rounds(&self) -> usize {
        self.downlink.len()
    }

    pub fn clients(&self) -> usize {
        self.uplink[0].len()
    }

    pub fn uplink(&self) -> &[Vec<f64>] {
        &self.uplink
    }

    pub fn downlink(&self) -> &[f64] {
        &self.downlink
    }

    /// Same trace with every range multiplied by `c > 0`.
    pub fn scaled(&self, c: f64) -> Result<Self> {
        Self::new(
            self.uplink
                .iter()
                .map(|row| row.iter().map(|r| r * c).collect())
                .collect(),
            self.downlink.iter().map(|r| r * c).collect(),
        )
    }
}

/// Per-bit energies, total budget and problem dimensions.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct EnergyParams {
    /// Uplink energy per bit (pJ/b).
    pub e1: f64,
    /// Downlink energy per bit (pJ/b).
    pub e2: f64,
    /// Budget (pJ).
    pub budget: f64,
    pub d: usize,
    pub n: usize,
    pub k: usize,
}

impl EnergyParams {
    pub fn validate(&self) -> Result<()> {
        for (name, v) in [("e1", self.e1), ("e2", self.e2), ("budget", self.budget)] {
            if !(v.is_finite() && v > 0.0) {
                return Err(Error::invalid(format!("{name} must be positive, got {v}")));
            }
        }
        if self.d == 0 || self.n == 0 || self.k == 0 {
            return Err(Error::invalid("d, n and K must be at least 1"));
        }
        Ok(())
    }

    fn check_against(&self, trace: &RangeTrace) -> Result<()> {
        self.validate()?;
        if trace.rounds() != self.k || trace.clients() != self.n {
            return Err(Error::invalid(format!(
                "trace is {}x{} but parameters say K={}, n={}",
                trace.rounds(),
                trace.clients(),
                self.k,
                self.n
            )));
        }
        Ok(())
    }
}

/// A bit width together with whether the raw formula had to be clamped.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct AllocatedBits {
    pub bits: u8,
    pub clamped: bool,
}

/// `ceil(log2(ratio))` clamped to `[1, 32]`.
pub fn bits_for_ratio(ratio: f64) -> AllocatedBits {
    let raw = ratio.log2().ceil();
    if raw < MIN_BITS as f64 || raw.is_nan() {
        AllocatedBits {
            bits: MIN_BITS,
            clamped: true,
        }
    } else if raw > MAX_BITS as f64 {
        AllocatedBits {
            bits: MAX_BITS,
            clamped: true,
        }
    } else {
        AllocatedBits {
            bits: raw as u8,
            clamped: false,
        }
    }
}

fn check_positive(name: &str, v: f64) -> Result<()> {
    if v.is_finite() && v > 0.0 {
        Ok(())
    } else {
        Err(Error::invalid(format!("{name} must be positive, got {v}")))
    }
}

/// Uplink bits `ceil(log2(R / alpha))`, clamped to `[1, 32]`.
pub fn bits_uplink(range: f64, alpha: f64) -> Result<AllocatedBits> {
    check_positive("range", range)?;
    check_positive("alpha", alpha)?;
    Ok(bits_for_ratio(range / alpha))
}

/// Downlink bits `ceil(log2(sqrt(2n) * R / alpha))`, clamped to `[1, 32]`.
pub fn bits_downlink(range: f64, alpha: f64, n: usize) -> Result<AllocatedBits> {
    check_positive("range", range)?;
    check_positive("alpha", alpha)?;
    if n == 0 {
        return Err(Error::invalid("n must be at least 1"));
    }
    Ok(bits_for_ratio((2.0 * n as f64).sqrt() * range / alpha))
}

fn sum_log2_uplink(trace: &RangeTrace) -> f64 {
    trace.uplink.iter().flatten().map(|r| r.log2()).sum()
}

/// Closed-form `alpha` for the joint problem: with `s_up = R_up / alpha` and
/// `s_dn = sqrt(2n) R_dn / alpha`, the continuous energy
/// `e1 ΣΣ d log2 s_up + e2 Σ n d log2 s_dn` equals the budget.
pub fn alpha_joint(trace: &RangeTrace, ep: &EnergyParams) -> Result<f64> {
    ep.check_against(trace)?;
    let (k, n, d) = (ep.k as f64, ep.n as f64, ep.d as f64);
    let esum = ep.e1 + ep.e2;
    let root = (2.0 * n).sqrt();
    let up = ep.e1 * sum_log2_uplink(trace) / (k * n * esum);
    let dn = ep.e2
        * trace
            .downlink
            .iter()
            .map(|r| (root * r).log2())
            .sum::<f64>()
        / (k * esum);
    let budget = ep.budget / (k * n * d * esum);
    Ok((up + dn - budget).exp2())
}

/// Closed-form `alpha` when only the uplink is quantized; `ep.budget` is the
/// uplink budget.
pub fn alpha_uplink_only(trace: &RangeTrace, ep: &EnergyParams) -> Result<f64> {
    ep.check_against(trace)?;
    let (k, n, d) = (ep.k as f64, ep.n as f64, ep.d as f64);
    Ok((sum_log2_uplink(trace) / (k * n) - ep.budget / (k * n * d * ep.e1)).exp2())
}

/// Closed-form `beta` when only the downlink is quantized; `ep.budget` is the
/// downlink budget.
pub fn beta_downlink_only(trace: &RangeTrace, ep: &EnergyParams) -> Result<f64> {
    ep.check_against(trace)?;
    let (k, n, d) = (ep.k as f64, ep.n as f64, ep.d as f64);
    let mean_log = trace.downlink.iter().map(|r| r.log2()).sum::<f64>() / k;
    Ok((mean_log - ep.budget / (k * n * d * ep.e2)).exp2())
}

/// Unrounded bin counts for every uplink and downlink tensor.
#[derive(Debug, Clone, PartialEq)]
pub struct ContinuousAllocation {
    pub uplink: Vec<Vec<f64>>,
    pub downlink: Vec<f64>,
}

/// `s_up = R_up / alpha`, `s_dn = sqrt(2n) R_dn / alpha`.
pub fn continuous_joint(trace: &RangeTrace, alpha: f64) -> ContinuousAllocation {
    let root = (2.0 * trace.clients() as f64).sqrt();
    ContinuousAllocation {
        uplink: trace
            .uplink
            .iter()
            .map(|row| row.iter().map(|r| r / alpha).collect())
            .collect(),
        downlink: trace.downlink.iter().map(|r| root * r / alpha).collect(),
    }
}

/// `e1 ΣΣ d log2 s_up + e2 Σ n d log2 s_dn` for unrounded bin counts.
pub fn continuous_energy(ep: &EnergyParams, s: &ContinuousAllocation) -> f64 {
    let d = ep.d as f64;
    let n = ep.n as f64;
    let up: f64 = s.uplink.iter().flatten().map(|v| v.log2()).sum();
    let dn: f64 = s.downlink.iter().map(|v| v.log2()).sum();
    ep.e1 * d * up + ep.e2 * n * d * dn
}

/// Integer bit widths for every uplink and downlink tensor.
#[derive(Debug, Clone, PartialEq)]
pub struct IntegerAllocation {
    pub uplink_bits: Vec<Vec<u8>>,
    pub downlink_bits: Vec<u8>,
}

impl IntegerAllocation {
    /// Bin counts `s = 2^bits - 1`.
    pub fn bins(&self) -> ContinuousAllocation {
        let s = |b: &u8| ((1u64 << *b) - 1) as f64;
        ContinuousAllocation {
            uplink: self
                .uplink_bits
                .iter()
                .map(|row| row.iter().map(s).collect())
                .collect(),
            downlink: self.downlink_bits.iter().map(s).collect(),
        }
    }

    /// Energy actually spent: `e1 ΣΣ d bits_up + e2 Σ n d bits_dn`.
    pub fn energy(&self, ep: &EnergyParams) -> f64 {
        let up: u64 = self.uplink_bits.iter().flatten().map(|&b| b as u64).sum();
        let dn: u64 = self.downlink_bits.iter().map(|&b| b as u64).sum();
        ep.e1 * (ep.d as u64 * up) as f64 + ep.e2 * (ep.n as u64 * ep.d as u64 * dn) as f64
    }
}

/// The bit rules applied to every tensor of a trace for a given `alpha`.
pub fn ceiling_allocation(trace: &RangeTrace, alpha: f64) -> Result<IntegerAllocation> {
    let n = trace.clients();
    let uplink_bits = trace
        .uplink
        .iter()
        .map(|row| {
            row.iter()
                .map(|&r| bits_uplink(r, alpha).map(|b| b.bits))
                .collect::<Result<Vec<_>>>()
        })
        .collect::<Result<Vec<_>>>()?;
    let downlink_bits = trace
        .downlink
        .iter()
        .map(|&r| bits_downlink(r, alpha, n).map(|b| b.bits))
        .collect::<Result<Vec<_>>>()?;
    Ok(IntegerAllocation {
        uplink_bits,
        downlink_bits,
    })
}

/// Quantization part of the convergence bound for the given bin counts:
/// `(Ld/(n²Kτη)) ΣΣ (R_up/s_up)² + (2Ld/(Kτη)) Σ (R_dn/s_dn)²`.
pub fn objective(
    trace: &RangeTrace,
    d: usize,
    consts: &ObjectiveConstants,
    s: &ContinuousAllocation,
) -> Result<f64> {
    let (up, dn) = quantization_terms(trace, d, consts, &s.uplink, &s.downlink)?;
    Ok(up + dn)
}

/// Result of the exhaustive integer search.
#[derive(Debug, Clone, PartialEq)]
pub struct BruteForceResult {
    pub allocation: IntegerAllocation,
    pub objective: f64,
}

/// Maximum number of tensors (`K n + K`) the exhaustive search accepts.
pub const BRUTE_FORCE_MAX_SLOTS: usize = 12;

/// Best assignment of `n` same-cost slots per total bit count.
///
/// `table[t]` holds the minimum of `Σ c_j / (2^b_j - 1)²` over assignments
/// with `Σ b_j = t`, together with the argmin.
fn link_table(coeffs: &[f64], grid: &RangeInclusive<u8>) -> Vec<Option<(f64, Vec<u8>)>> {
    let (lo, hi) = (*grid.start() as usize, *grid.end() as usize);
    let mut table: Vec<Option<(f64, Vec<u8>)>> = vec![None; coeffs.len() * hi + 1];
    table[0] = Some((0.0, Vec::new()));
    for &c in coeffs {
        let mut next: Vec<Option<(f64, Vec<u8>)>> = vec![None; table.len()];
        for (t, entry) in table.iter().enumerate() {
            let Some((val, bits)) = entry else { continue };
            for b in lo..=hi {
                let s = ((1u64 << b) - 1) as f64;
                let cand = val + c / (s * s);
                let slot = &mut next[t + b];
                if slot.as_ref().is_none_or(|(best, _)| cand < *best) {
                    let mut v = bits.clone();
                    v.push(b as u8);
                    *slot = Some((cand, v));
                }
            }
        }
        table = next;
    }
    table
}

/// Exact minimizer of [`objective`] over integer bit assignments in `grid`
/// whose realized energy does not exceed the budget.
///
/// The objective is separable and all tensors on a link cost the same per
/// bit, so the search enumerates every feasible pair of per-link bit totals
/// and, for each, the best split of those totals across tensors. This visits
/// the same feasible set as a nested enumeration of all `|grid|^(Kn+K)`
/// assignments.
pub fn brute_force_allocation(
    trace: &RangeTrace,
    ep: &EnergyParams,
    consts: &ObjectiveConstants,
    grid: RangeInclusive<u8>,
) -> Result<BruteForceResult> {
    ep.check_against(trace)?;
    consts.validate()?;
    let (k, n) = (ep.k, ep.n);
    if k * n + k > BRUTE_FORCE_MAX_SLOTS {
        return Err(Error::invalid(format!(
            "{} tensors exceed the exhaustive-search limit of {BRUTE_FORCE_MAX_SLOTS}",
            k * n + k
        )));
    }
    if grid.is_empty() || *grid.start() < 1 || *grid.end() > 12 {
        return Err(Error::invalid(
            "bit grid must be a non-empty subset of 1..=12",
        ));
    }
    let (cu, cd) = consts.term_scales(ep.d, n, k);
    let up_coeffs: Vec<f64> = trace.uplink.iter().flatten().map(|r| cu * r * r).collect();
    let dn_coeffs: Vec<f64> = trace.downlink.iter().map(|r| cd * r * r).collect();
    let up_table = link_table(&up_coeffs, &grid);
    let dn_table = link_table(&dn_coeffs, &grid);

    let w_up = ep.e1 * ep.d as f64;
    let w_dn = ep.e2 * (ep.n * ep.d) as f64;
    let limit = ep.budget * (1.0 + 1e-12);
    let mut best: Option<(f64, &Vec<u8>, &Vec<u8>)> = None;
    for (tu, up) in up_table.iter().enumerate() {
        let Some((vu, bu)) = up else { continue };
        for (td, dn) in dn_table.iter().enumerate() {
            let Some((vd, bd)) = dn else { continue };
            if w_up * tu as f64 + w_dn * td as f64 > limit {
                continue;
            }
            let total = vu + vd;
            if best.is_none_or(|(b, _, _)| total < b) {
                best = Some((total, bu, bd));
            }
        }
    }
    let (objective, bu, bd) = best.ok_or_else(|| {
        Error::InfeasibleBudget(format!(
            "no assignment with bits in {grid:?} fits a budget of {}",
            ep.budget
        ))
    })?;
    Ok(BruteForceResult {
        allocation: IntegerAllocation {
            uplink_bits: bu.chunks(n).map(<[u8]>::to_vec).collect(),
            downlink_bits: bd.clone(),
        },
        objective,
    })
}

/// Where a policy sends a link in a given round.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum LinkBits {
    Lossless,
    Quantized(AllocatedBits),
}

impl LinkBits {
    /// Bits charged per element.
    pub fn charged_bits(&self) -> u8 {
        match self {
            LinkBits::Lossless => LOSSLESS_BITS,
            LinkBits::Quantized(b) => b.bits,
        }
    }

    pub fn clamped(&self) -> bool {
        matches!(
            self,
            LinkBits::Quantized(AllocatedBits { clamped: true, .. })
        )
    }
}

/// Strategy producing per-round, per-link bit widths.
#[derive(Debug, Clone, PartialEq)]
pub enum AllocationPolicy {
    /// No quantization on either link.
    Lossless,
    Fixed {
        bits: u8,
    },
    JointAdaptive {
        alpha: f64,
    },
    /// Adaptive uplink, lossless downlink.
    UplinkOnlyAdaptive {
        alpha: f64,
    },
    /// Lossless uplink, adaptive downlink with `bits = ceil(log2(R / beta))`.
    DownlinkOnlyAdaptive {
        beta: f64,
    },
    Schedule {
        uplink_bits: Vec<u8>,
        downlink_bits: Vec<u8>,
    },
}

fn fixed(bits: u8) -> LinkBits {
    LinkBits::Quantized(AllocatedBits {
        bits,
        clamped: false,
    })
}

/// Adaptive width for an observed range; zero ranges cost the minimum width.
fn adaptive(ratio_range: f64, scale: f64) -> LinkBits {
    if ratio_range == 0.0 {
        return LinkBits::Quantized(AllocatedBits {
            bits: MIN_BITS,
            clamped: true,
        });
    }
    LinkBits::Quantized(bits_for_ratio(ratio_range / scale))
}

impl AllocationPolicy {
    /// Checks parameters; schedules must cover `rounds` rounds.
    pub fn validate(&self, rounds: usize) -> Result<()> {
        let bits_ok = |b: u8| (MIN_BITS..=MAX_BITS).contains(&b);
        match self {
            AllocationPolicy::Lossless => Ok(()),
            AllocationPolicy::Fixed { bits } if bits_ok(*bits) => Ok(()),
            AllocationPolicy::Fixed { bits } => {
                Err(Error::invalid(format!("fixed bits {bits} outside 1..=32")))
            }
            AllocationPolicy::JointAdaptive { alpha }
            | AllocationPolicy::UplinkOnlyAdaptive { alpha } => check_positive("alpha", *alpha),
            AllocationPolicy::DownlinkOnlyAdaptive { beta } => check_positive("beta", *beta),
            AllocationPolicy::Schedule {
                uplink_bits,
                downlink_bits,
            } => {
                if uplink_bits.len() < rounds || downlink_bits.len() < rounds {
                    return Err(Error::invalid(format!(
                        "schedule covers {} uplink / {} downlink rounds, need {rounds}",
                        uplink_bits.len(),
                        downlink_bits.len()
                    )));
                }
                match uplink_bits
                    .iter()
                    .chain(downlink_bits)
                    .find(|b| !bits_ok(**b))
                {
                    Some(b) => Err(Error::invalid(format!("schedule bits {b} outside 1..=32"))),
                    None => Ok(()),
                }
            }
        }
    }

    /// Bits for the broadcast of a global model with range `range` to `n` clients.
    pub fn downlink(&self, round: usize, range: f64, n: usize) -> LinkBits {
        match self {
            AllocationPolicy::Lossless | AllocationPolicy::UplinkOnlyAdaptive { .. } => {
                LinkBits::Lossless
            }
            AllocationPolicy::Fixed { bits } => fixed(*bits),
            AllocationPolicy::JointAdaptive { alpha } => {
                adaptive((2.0 * n as f64).sqrt() * range, *alpha)
            }
            AllocationPolicy::DownlinkOnlyAdaptive { beta } => adaptive(range, *beta),
            AllocationPolicy::Schedule { downlink_bits, .. } => fixed(downlink_bits[round]),
        }
    }

    /// Bits for a client update with range `range`.
    pub fn uplink(&self, round: usize, range: f64) -> LinkBits {
        match self {
            AllocationPolicy::Lossless | AllocationPolicy::DownlinkOnlyAdaptive { .. } => {
                LinkBits::Lossless
            }
            AllocationPolicy::Fixed { bits } => fixed(*bits),
            AllocationPolicy::JointAdaptive { alpha }
            | AllocationPolicy::UplinkOnlyAdaptive { alpha } => adaptive(range, *alpha),
            AllocationPolicy::Schedule { uplink_bits, .. } => fixed(uplink_bits[round]),
        }
    }
}
