//! Clock distribution: derived clocks from a 10 MHz reference, 12x3
//! fan-out boards, OCXO fine-frequency compensation and the 62.5 kHz
//! global time counters of each unit.

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::schedule::{NS_PER_S, SYNC_CLOCK_HZ};

/// Offsets at or beyond this magnitude are rejected.
pub const MAX_FRACTIONAL_OFFSET: f64 = 1e-6;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum ClockError {
    #[error("clock {node}: expected a {expected} reference, got {got}")]
    WrongReference { node: String, expected: NominalFreq, got: NominalFreq },
    #[error("clock {node}: fractional offset {offset:e} outside (-1e-6, 1e-6)")]
    Offset { node: String, offset: f64 },
    #[error("compensator gain {0} outside (0, 1]")]
    Gain(f64),
    #[error("trim step {0} must be finite and >= 0")]
    TrimStep(f64),
    #[error("need at least 2 units, got {0}")]
    TooFewUnits(usize),
    #[error("distributor needs at least one channel")]
    NoChannels,
    #[error("discipline interval must be positive")]
    Interval,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum NominalFreq {
    Ref10M,
    Sys100M,
    Conv250M,
    Sync62k5,
}

impl NominalFreq {
    pub fn hz_u64(self) -> u64 {
        match self {
            NominalFreq::Ref10M => 10_000_000,
            NominalFreq::Sys100M => 100_000_000,
            NominalFreq::Conv250M => 250_000_000,
            NominalFreq::Sync62k5 => SYNC_CLOCK_HZ,
        }
    }

    pub fn hz(self) -> f64 {
        self.hz_u64() as f64
    }
}

impl std::fmt::Display for NominalFreq {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        let s = match self {
            NominalFreq::Ref10M => "10 MHz",
            NominalFreq::Sys100M => "100 MHz",
            NominalFreq::Conv250M => "250 MHz",
            NominalFreq::Sync62k5 => "62.5 kHz",
        };
        f.write_str(s)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ClockNode {
    pub node_id: String,
    pub nominal: NominalFreq,
    pub fractional_offset: f64,
    /// Accumulated cycles.
    pub phase_accum: f64,
}

fn check_offset(node: &str, offset: f64) -> Result<(), ClockError> {
    if !offset.is_finite() || offset.abs() >= MAX_FRACTIONAL_OFFSET {
        return Err(ClockError::Offset {
            node: node.to_string(),
            offset,
        });
    }
    Ok(())
}

impl ClockNode {
    pub fn new(node_id: impl Into<String>, nominal: NominalFreq, fractional_offset: f64) -> Result<Self, ClockError> {
        let node_id = node_id.into();
        check_offset(&node_id, fractional_offset)?;
        Ok(Self {
            node_id,
            nominal,
            fractional_offset,
            phase_accum: 0.0,
        })
    }

    pub fn frequency(&self) -> f64 {
        self.nominal.hz() * (1.0 + self.fractional_offset)
    }

    pub fn advance(&mut self, dt: f64) {
        self.phase_accum += self.frequency() * dt;
    }

    fn derived(&self, suffix: &str, nominal: NominalFreq) -> ClockNode {
        ClockNode {
            node_id: format!("{}/{}", self.node_id, suffix),
            nominal,
            fractional_offset: self.fractional_offset,
            phase_accum: 0.0,
        }
    }
}

/// Frequency ratio `a / b`. Clocks sharing an offset give the exact
/// nominal ratio.
pub fn frequency_ratio(a: &ClockNode, b: &ClockNode) -> f64 {
    if a.fractional_offset == b.fractional_offset {
        a.nominal.hz_u64() as f64 / b.nominal.hz_u64() as f64
    } else {
        a.frequency() / b.frequency()
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct DerivedClocks {
    pub sys: ClockNode,
    pub conv: ClockNode,
    pub sync: ClockNode,
}

pub fn derive_clocks(reference: &ClockNode) -> Result<DerivedClocks, ClockError> {
    if reference.nominal != NominalFreq::Ref10M {
        return Err(ClockError::WrongReference {
            node: reference.node_id.clone(),
            expected: NominalFreq::Ref10M,
            got: reference.nominal,
        });
    }
    check_offset(&reference.node_id, reference.fractional_offset)?;
    Ok(DerivedClocks {
        sys: reference.derived("100M", NominalFreq::Sys100M),
        conv: reference.derived("250M", NominalFreq::Conv250M),
        sync: reference.derived("62k5", NominalFreq::Sync62k5),
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum DistributorKind {
    Primary,
    Secondary,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct DistributorConfig {
    pub kind: DistributorKind,
    pub channels: usize,
}

impl DistributorConfig {
    pub fn new(kind: DistributorKind, channels: usize) -> Result<Self, ClockError> {
        if channels == 0 {
            return Err(ClockError::NoChannels);
        }
        Ok(Self { kind, channels })
    }

    pub fn standard(kind: DistributorKind) -> Self {
        Self { kind, channels: 12 }
    }

    /// Three clock types per channel.
    pub fn outputs(&self) -> usize {
        self.channels * 3
    }

    /// Every channel receives copies of the three derived clocks.
    pub fn distribute(&self, input: &DerivedClocks) -> Vec<DerivedClocks> {
        (0..self.channels)
            .map(|ch| {
                let tag = |n: &ClockNode| ClockNode {
                    node_id: format!("{}@{:?}{}", n.node_id, self.kind, ch),
                    ..n.clone()
                };
                DerivedClocks {
                    sys: tag(&input.sys),
                    conv: tag(&input.conv),
                    sync: tag(&input.sync),
                }
            })
            .collect()
    }
}

/// Integral-style OCXO trim against the rubidium reference.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Compensator {
    pub gain: f64,
    /// Trim resolution in fractional frequency; 0 means continuous.
    #[serde(default)]
    pub trim_step: f64,
}

impl Compensator {
    pub fn new(gain: f64, trim_step: f64) -> Result<Self, ClockError> {
        if !(gain > 0.0 && gain <= 1.0) {
            return Err(ClockError::Gain(gain));
        }
        if !trim_step.is_finite() || trim_step < 0.0 {
            return Err(ClockError::TrimStep(trim_step));
        }
        Ok(Self { gain, trim_step })
    }

    /// Applies one correction of `gain * measured`, rounded to the trim
    /// resolution.
    pub fn compensate(&self, ocxo_offset: f64, measured_vs_rb: f64) -> f64 {
        let mut correction = self.gain * measured_vs_rb;
        if self.trim_step > 0.0 {
            correction = (correction / self.trim_step).round() * self.trim_step;
        }
        ocxo_offset - correction
    }

    /// Residual floor imposed by the trim resolution.
    pub fn quantization_floor(&self) -> f64 {
        self.trim_step / (2.0 * self.gain)
    }

    /// Iterates the loop `n` times with an ideal measurement.
    pub fn settle(&self, initial: f64, n: usize) -> f64 {
        (0..n).fold(initial, |o, _| self.compensate(o, o))
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct GlobalCounter {
    pub unit_id: u8,
    pub count: u64,
}

/// One unit's sync clock as seen by its counter.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct UnitClock {
    pub unit_id: u8,
    pub offset: f64,
    /// Counter reset time.
    #[serde(default)]
    pub reset_epoch_ns: u64,
}

impl UnitClock {
    /// `floor(62500 (1 + offset) (t - epoch))`, 0 before the reset.
    pub fn counter_at(&self, t_ns: u64) -> GlobalCounter {
        GlobalCounter {
            unit_id: self.unit_id,
            count: count_ticks(t_ns.saturating_sub(self.reset_epoch_ns), self.offset * elapsed_s(t_ns, self.reset_epoch_ns)),
        }
    }
}

fn elapsed_s(t_ns: u64, epoch_ns: u64) -> f64 {
    t_ns.saturating_sub(epoch_ns) as f64 / NS_PER_S as f64
}

/// Ticks after `elapsed_ns` at nominal rate plus `extra_s` seconds'
/// worth of offset-induced cycles. The nominal part is exact.
fn count_ticks(elapsed_ns: u64, extra_s: f64) -> u64 {
    let num = elapsed_ns as u128 * SYNC_CLOCK_HZ as u128;
    let whole = (num / NS_PER_S as u128) as i128;
    let frac = (num % NS_PER_S as u128) as f64 / NS_PER_S as f64;
    let extra = extra_s * SYNC_CLOCK_HZ as f64 + frac;
    (whole + extra.floor() as i128).max(0) as u64
}

/// Max pairwise counter difference at `t_ns`.
pub fn counter_skew(units: &[UnitClock], t_ns: u64) -> Result<u64, ClockError> {
    if units.len() < 2 {
        return Err(ClockError::TooFewUnits(units.len()));
    }
    let counts = units.iter().map(|u| u.counter_at(t_ns).count);
    let (lo, hi) = counts.fold((u64::MAX, 0), |(lo, hi), c| (lo.min(c), hi.max(c)));
    Ok(hi - lo)
}

/// Skew trace of units whose OCXOs are disciplined every interval.
#[derive(Debug, Clone, PartialEq)]
pub struct SkewSimulation {
    units: Vec<UnitClock>,
    compensator: Option<Compensator>,
    interval_ns: u64,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct SkewSample {
    pub t_s: f64,
    pub max_skew_ticks: u64,
}

impl SkewSimulation {
    pub fn new(units: Vec<UnitClock>, compensator: Option<Compensator>, interval_ns: u64) -> Result<Self, ClockError> {
        if units.len() < 2 {
            return Err(ClockError::TooFewUnits(units.len()));
        }
        if interval_ns == 0 {
            return Err(ClockError::Interval);
        }
        for u in &units {
            check_offset(&format!("unit{}", u.unit_id), u.offset)?;
        }
        Ok(Self {
            units,
            compensator,
            interval_ns,
        })
    }

    /// One sample per discipline interval up to `duration_ns`.
    pub fn run(&self, duration_ns: u64) -> Vec<SkewSample> {
        let n = self.units.len();
        let mut offsets: Vec<f64> = self.units.iter().map(|u| u.offset).collect();
        // Offset-induced seconds accumulated since each unit's reset.
        let mut extra = vec![0.0f64; n];
        let mut out = Vec::new();
        let mut t = 0u64;
        while t < duration_ns {
            let next = (t + self.interval_ns).min(duration_ns);
            for i in 0..n {
                let epoch = self.units[i].reset_epoch_ns;
                let live = next.saturating_sub(t.max(epoch));
                extra[i] += offsets[i] * live as f64 / NS_PER_S as f64;
            }
            t = next;
            let counts = (0..n).map(|i| count_ticks(t.saturating_sub(self.units[i].reset_epoch_ns), extra[i]));
            let (lo, hi) = counts.fold((u64::MAX, 0), |(lo, hi), c| (lo.min(c), hi.max(c)));
            out.push(SkewSample {
                t_s: t as f64 / NS_PER_S as f64,
                max_skew_ticks: hi - lo,
            });
            if let Some(c) = &self.compensator {
                for o in offsets.iter_mut() {
                    *o = c.compensate(*o, *o);
                }
            }
        }
        out
    }
}
