//! Time-multiplexed measurement plan and per-pulse envelope capture.
//!
//! All plan times are held as integer nanoseconds so that slot arithmetic
//! over a 24 h campaign is exact.

use num_complex::Complex64;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::rfchain::{ChannelId, ComplexEnvelope};

#[derive(Debug, Error, Clone, PartialEq)]
pub enum ScheduleError {
    #[error("{0}")]
    InvalidPlan(String),
    #[error("plan violates (pulse_duration + pulse_gap) * {slots} <= round_period: {lhs_ns} ns > {rhs_ns} ns")]
    RoundOverflow { slots: u64, lhs_ns: u64, rhs_ns: u64 },
    #[error("capture: guards of {guard} samples per edge leave nothing of a {len}-sample window")]
    EmptyCapture { guard: usize, len: usize },
    #[error("capture: {0}")]
    Capture(String),
}

pub const NS_PER_S: u64 = 1_000_000_000;
/// Global time counter rate.
pub const SYNC_CLOCK_HZ: u64 = 62_500;

pub(crate) fn seconds_to_ns(what: &str, s: f64) -> Result<u64, ScheduleError> {
    if !(s.is_finite() && s >= 0.0) {
        return Err(ScheduleError::InvalidPlan(format!("{what} must be finite and >= 0, got {s}")));
    }
    let ns = (s * 1e9).round();
    if ns >= u64::MAX as f64 {
        return Err(ScheduleError::InvalidPlan(format!("{what} = {s:e} s is out of range")));
    }
    if (s * 1e9 - ns).abs() > 1e-3 {
        return Err(ScheduleError::InvalidPlan(format!(
            "{what} = {s} s is not a whole number of nanoseconds"
        )));
    }
    Ok(ns as u64)
}

/// Measurement plan; construct via [`MeasurementPlan::new`] or
/// [`MeasurementPlan::from_seconds`].
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct MeasurementPlan {
    pub units: u8,
    pub channels_per_unit: u8,
    pub pulse_duration_ns: u64,
    pub pulse_gap_ns: u64,
    pub round_period_ns: u64,
    pub total_duration_ns: u64,
    /// Carrier in integer Hz.
    pub carrier_hz: u64,
}

impl MeasurementPlan {
    pub fn new(
        units: u8,
        channels_per_unit: u8,
        pulse_duration_ns: u64,
        pulse_gap_ns: u64,
        round_period_ns: u64,
        total_duration_ns: u64,
        carrier_hz: u64,
    ) -> Result<Self, ScheduleError> {
        let plan = Self {
            units,
            channels_per_unit,
            pulse_duration_ns,
            pulse_gap_ns,
            round_period_ns,
            total_duration_ns,
            carrier_hz,
        };
        plan.validate()?;
        Ok(plan)
    }

    pub fn from_seconds(
        units: u8,
        channels_per_unit: u8,
        pulse_duration: f64,
        pulse_gap: f64,
        round_period: f64,
        total_duration: f64,
        carrier: f64,
    ) -> Result<Self, ScheduleError> {
        if !(carrier.is_finite() && carrier >= 0.0 && carrier.fract() == 0.0) {
            return Err(ScheduleError::InvalidPlan(format!(
                "carrier must be a whole number of Hz, got {carrier}"
            )));
        }
        Self::new(
            units,
            channels_per_unit,
            seconds_to_ns("pulse_duration", pulse_duration)?,
            seconds_to_ns("pulse_gap", pulse_gap)?,
            seconds_to_ns("round_period", round_period)?,
            seconds_to_ns("total_duration", total_duration)?,
            carrier as u64,
        )
    }

    /// The measurement described for the 15-channel, 24 h stability run.
    pub fn reference() -> Self {
        Self::new(3, 5, 100_000, 100_000, 1_300_000_000, 86_400 * NS_PER_S, 5_000_000_000)
            .expect("reference plan is valid")
    }

    pub fn validate(&self) -> Result<(), ScheduleError> {
        if self.units == 0 || self.channels_per_unit == 0 {
            return Err(ScheduleError::InvalidPlan("units and channels_per_unit must be >= 1".into()));
        }
        if self.pulse_duration_ns == 0 {
            return Err(ScheduleError::InvalidPlan("pulse_duration must be > 0".into()));
        }
        if self.round_period_ns == 0 {
            return Err(ScheduleError::InvalidPlan("round_period must be > 0".into()));
        }
        let slots = self.slots();
        let lhs = (self.pulse_duration_ns + self.pulse_gap_ns).checked_mul(slots);
        match lhs {
            Some(lhs) if lhs <= self.round_period_ns => Ok(()),
            _ => Err(ScheduleError::RoundOverflow {
                slots,
                lhs_ns: lhs.unwrap_or(u64::MAX),
                rhs_ns: self.round_period_ns,
            }),
        }
    }

    pub fn slots(&self) -> u64 {
        self.units as u64 * self.channels_per_unit as u64
    }

    pub fn slot_of(&self, ch: ChannelId) -> u64 {
        ch.unit as u64 * self.channels_per_unit as u64 + ch.ch as u64
    }

    pub fn channel_of(&self, slot: u64) -> ChannelId {
        let cpu = self.channels_per_unit as u64;
        ChannelId::new((slot / cpu) as u8, (slot % cpu) as u8)
    }

    /// Channels in slot order.
    pub fn channels(&self) -> impl Iterator<Item = ChannelId> + '_ {
        (0..self.slots()).map(|s| self.channel_of(s))
    }

    pub fn slot_pitch_ns(&self) -> u64 {
        self.pulse_duration_ns + self.pulse_gap_ns
    }

    /// Start of `slot` relative to its round.
    pub fn slot_offset_ns(&self, slot: u64) -> u64 {
        slot * self.slot_pitch_ns()
    }

    /// `floor(total_duration / round_period)`.
    pub fn rounds(&self) -> u64 {
        self.total_duration_ns / self.round_period_ns
    }

    pub fn round_start_ns(&self, round: u64) -> u64 {
        round * self.round_period_ns
    }

    /// Round period in 62.5 kHz sync ticks, when it is a whole number.
    pub fn sync_ticks_per_round(&self) -> Option<u64> {
        let num = self.round_period_ns as u128 * SYNC_CLOCK_HZ as u128;
        num.is_multiple_of(NS_PER_S as u128).then(|| (num / NS_PER_S as u128) as u64)
    }

    pub fn with_total_duration_ns(&self, total_duration_ns: u64) -> Self {
        Self {
            total_duration_ns,
            ..self.clone()
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct ScheduledPulse {
    pub channel: ChannelId,
    pub round: u64,
    pub start_ns: u64,
}

impl ScheduledPulse {
    pub fn start_time(&self) -> f64 {
        self.start_ns as f64 * 1e-9
    }
}

/// Lazily enumerates every pulse of a validated plan in time order.
#[derive(Debug, Clone)]
pub struct Schedule {
    plan: MeasurementPlan,
}

impl Schedule {
    pub fn new(plan: MeasurementPlan) -> Result<Self, ScheduleError> {
        plan.validate()?;
        Ok(Self { plan })
    }

    pub fn plan(&self) -> &MeasurementPlan {
        &self.plan
    }

    pub fn round(&self, round: u64) -> impl Iterator<Item = ScheduledPulse> + '_ {
        let origin = self.plan.round_start_ns(round);
        (0..self.plan.slots()).map(move |slot| ScheduledPulse {
            channel: self.plan.channel_of(slot),
            round,
            start_ns: origin + self.plan.slot_offset_ns(slot),
        })
    }

    pub fn pulses(&self) -> impl Iterator<Item = ScheduledPulse> + '_ {
        (0..self.plan.rounds()).flat_map(move |r| self.round(r))
    }
}

/// Every scheduled pulse as a list.
pub fn build_schedule(plan: &MeasurementPlan) -> Result<Vec<ScheduledPulse>, ScheduleError> {
    let schedule = Schedule::new(plan.clone())?;
    Ok(schedule.pulses().collect())
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PulseRecord {
    pub channel: ChannelId,
    pub round: u64,
    pub timestamp_ns: u64,
    pub mean_amplitude: f64,
    /// Degrees in (-180, 180].
    pub mean_phase: f64,
}

impl PulseRecord {
    pub fn timestamp(&self) -> f64 {
        self.timestamp_ns as f64 * 1e-9
    }
}

/// Maps any angle in degrees to (-180, 180].
pub fn wrap_degrees(deg: f64) -> f64 {
    let r = deg.rem_euclid(360.0);
    if r > 180.0 {
        r - 360.0
    } else {
        r
    }
}

pub const DEFAULT_GUARD_FRACTION: f64 = 0.05;

/// Demodulates at `demod_hz`, drops `floor(len * guard_fraction)` samples
/// at each edge and returns `(|mean|, arg(mean) in degrees)`.
pub fn capture_pulse(
    env: &ComplexEnvelope,
    demod_hz: f64,
    guard_fraction: f64,
) -> Result<(f64, f64), ScheduleError> {
    if env.is_empty() {
        return Err(ScheduleError::Capture("empty envelope".into()));
    }
    if !(0.0..0.5).contains(&guard_fraction) && guard_fraction != 0.5 {
        return Err(ScheduleError::Capture(format!(
            "guard fraction must be in [0, 0.5], got {guard_fraction}"
        )));
    }
    let len = env.len();
    let guard = (len as f64 * guard_fraction).floor() as usize;
    if 2 * guard >= len {
        return Err(ScheduleError::EmptyCapture { guard, len });
    }
    let kept = len - 2 * guard;
    let sum: Complex64 = env.demodulated(demod_hz).skip(guard).take(kept).sum();
    let mean = sum / kept as f64;
    Ok((mean.norm(), wrap_degrees(mean.arg().to_degrees())))
}
