//! Communication energy accounting.
//!
//! Every transmitted tensor appends one entry charging
//! `bits_per_element * element_count * e` picojoules, with `e = e1` on the
//! uplink and `e = e2` on the downlink. Broadcasts are charged once per
//! receiving client.

use std::fmt;
use std::io::{self, Write};

use crate::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Link {
    Uplink,
    Downlink,
}

impl fmt::Display for Link {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Link::Uplink => "uplink",
            Link::Downlink => "downlink",
        })
    }
}

/// Which client an entry belongs to.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ClientRef {
    Client(usize),
    All,
}

impl fmt::Display for ClientRef {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            ClientRef::Client(i) => write!(f, "{i}"),
            ClientRef::All => f.write_str("all"),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct LedgerEntry {
    pub round: usize,
    pub link: Link,
    pub client: ClientRef,
    pub element_count: usize,
    pub bits_per_element: u8,
    /// Picojoules.
    pub energy: f64,
}

/// Uplink, downlink and combined energy in picojoules.
#[derive(Debug, Clone, Copy, Default, PartialEq)]
pub struct EnergyTotals {
    pub uplink: f64,
    pub downlink: f64,
    pub total: f64,
}

/// Append-only record of transmissions.
#[derive(Debug, Clone, PartialEq)]
pub struct EnergyLedger {
    e1: f64,
    e2: f64,
    entries: Vec<LedgerEntry>,
}

impl EnergyLedger {
    pub fn new(e1: f64, e2: f64) -> Result<Self> {
        if !(e1.is_finite() && e1 > 0.0 && e2.is_finite() && e2 > 0.0) {
            return Err(Error::invalid(format!(
                "per-bit energies must be positive, got e1={e1}, e2={e2}"
            )));
        }
        Ok(EnergyLedger {
            e1,
            e2,
            entries: Vec::new(),
        })
    }

    pub fn e1(&self) -> f64 {
        self.e1
    }

    pub fn e2(&self) -> f64 {
        self.e2
    }

    pub fn entries(&self) -> &[LedgerEntry] {
        &self.entries
    }

    /// Appends one transmission of `d` elements at `bits` bits each.
    pub fn record(
        &mut self,
        round: usize,
        link: Link,
        client: ClientRef,
        d: usize,
        bits: u8,
    ) -> Result<()> {
        if !(1..=32).contains(&bits) {
            return Err(Error::invalid(format!(
                "bits must be in 1..=32, got {bits}"
            )));
        }
        if d == 0 {
            return Err(Error::invalid("element count must be at least 1"));
        }
        if let Some(last) = self.entries.last() {
            if round < last.round {
                return Err(Error::InvalidState(format!(
                    "round {round} recorded after round {}",
                    last.round
                )));
            }
        }
        let per_bit = match link {
            Link::Uplink => self.e1,
            Link::Downlink => self.e2,
        };
        self.entries.push(LedgerEntry {
            round,
            link,
            client,
            element_count: d,
            bits_per_element: bits,
            energy: (bits as u64 * d as u64) as f64 * per_bit,
        });
        Ok(())
    }

    /// Sums over all entries, or over rounds `<= up_to_round`.
    pub fn total(&self, up_to_round: Option<usize>) -> EnergyTotals {
        let mut t = EnergyTotals::default();
        for e in &self.entries {
            if up_to_round.is_some_and(|r| e.round > r) {
                continue;
            }
            match e.link {
                Link::Uplink => t.uplink += e.energy,
                Link::Downlink => t.downlink += e.energy,
            }
        }
        t.total = t.uplink + t.downlink;
        t
    }

    /// Energy of a single round.
    pub fn round_total(&self, round: usize) -> EnergyTotals {
        let mut t = EnergyTotals::default();
        for e in self.entries.iter().filter(|e| e.round == round) {
            match e.link {
                Link::Uplink => t.uplink += e.energy,
                Link::Downlink => t.downlink += e.energy,
            }
        }
        t.total = t.uplink + t.downlink;
        t
    }

    /// CSV with columns `round,link,client,d,bits,energy_pj`.
    pub fn write_csv<W: Write>(&self, mut w: W) -> io::Result<()> {
        writeln!(w, "round,link,client,d,bits,energy_pj")?;
        for e in &self.entries {
            writeln!(
                w,
                "{},{},{},{},{},{}",
                e.round, e.link, e.client, e.element_count, e.bits_per_element, e.energy
            )?;
        }
        Ok(())
    }
}

/// Direction in which a metric must cross its threshold.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Crossing {
    /// Metric `>=` threshold (accuracy).
    AtLeast,
    /// Metric `<=` threshold (loss).
    AtMost,
}

/// Cumulative total energy at the first round whose metric crosses the
/// threshold; `metric[m]` is the value after round `m`.
pub fn energy_to_reach(
    ledger: &EnergyLedger,
    metric: &[f64],
    threshold: f64,
    crossing: Crossing,
) -> Option<f64> {
    let round = metric.iter().position(|&v| match crossing {
        Crossing::AtLeast => v >= threshold,
        Crossing::AtMost => v <= threshold,
    })?;
    Some(ledger.total(Some(round)).total)
}
