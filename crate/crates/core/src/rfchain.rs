//! Complex-baseband signal chain: pulse synthesis, LO up/down conversion,
//! stream combining and the additive noise floor.
//!
//! Envelopes are simulated at a decimated rate (1-10 MS/s). Each envelope
//! keeps its samples in the frame of the NCO that synthesized it and carries
//! the conversions applied since then as a pending rotation: a phase in
//! degrees plus the shift between its current center frequency and that
//! frame. Rotations are materialized only when samples are read, combined
//! or captured. Because a conversion and its inverse cancel in the pending
//! state before any sample is touched, shared-LO loopback is exact.

use std::f64::consts::TAU;
use std::fmt;

use num_complex::Complex64;
use rand::Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::coupling::PathPerturbation;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum RfError {
    #[error("path {channel}: {what}")]
    InvalidPath { channel: ChannelId, what: String },
    #[error("pulse of {duration} s at {sample_rate} S/s is not a whole number of samples")]
    FractionalSamples { duration: f64, sample_rate: f64 },
    #[error("invalid sample rate {0}")]
    SampleRate(f64),
    #[error("combine: {0}")]
    Combine(String),
    #[error("window [{start}, {end}) out of range for {len} samples")]
    Window { start: usize, end: usize, len: usize },
}

/// `(unit, channel)` pair; slot index is `unit * channels_per_unit + ch`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub struct ChannelId {
    pub unit: u8,
    pub ch: u8,
}

impl ChannelId {
    pub fn new(unit: u8, ch: u8) -> Self {
        Self { unit, ch }
    }
}

impl fmt::Display for ChannelId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "unit{}/ch{}", self.unit, self.ch)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum PortKind {
    Ctrl,
    Rout,
    Pump,
    Rin,
    Monitor,
}

impl PortKind {
    pub fn is_input(self) -> bool {
        matches!(self, PortKind::Rin | PortKind::Monitor)
    }

    pub fn needs_lo(self) -> bool {
        self != PortKind::Ctrl
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct SignalPath {
    pub channel: ChannelId,
    pub port: PortKind,
    pub nco_freq: f64,
    pub lo: Option<String>,
    pub devices: Vec<String>,
    pub baseline_gain: f64,
    pub baseline_phase: f64,
}

impl SignalPath {
    pub fn validate(&self) -> Result<(), RfError> {
        let bad = |what: &str| RfError::InvalidPath {
            channel: self.channel,
            what: what.to_string(),
        };
        match (self.port.needs_lo(), &self.lo) {
            (false, Some(_)) => return Err(bad("ctrl paths are direct DAC outputs and take no LO")),
            (true, None) => return Err(bad("upconverted/downconverted paths need an LO binding")),
            _ => {}
        }
        if !(self.baseline_gain.is_finite() && self.baseline_gain > 0.0) {
            return Err(bad("baseline_gain must be > 0"));
        }
        if !(self.baseline_phase.is_finite() && self.nco_freq.is_finite()) {
            return Err(bad("baseline_phase and nco_freq must be finite"));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct LoState {
    pub id: String,
    pub frequency: f64,
    /// Degrees.
    pub phase: f64,
}

/// Complex-baseband samples on an absolute nanosecond time base.
#[derive(Debug, Clone, PartialEq)]
pub struct ComplexEnvelope {
    samples: Vec<Complex64>,
    sample_rate: f64,
    start_ns: u64,
    frame_freq: f64,
    /// Pending frequency rotation relative to the frame. Kept apart from
    /// the frame so a matched up/down pair cancels exactly.
    shift: f64,
    phase: f64,
}

impl ComplexEnvelope {
    /// Wraps raw samples whose frame is at `center_freq`.
    pub fn from_samples(
        samples: Vec<Complex64>,
        sample_rate: f64,
        start_ns: u64,
        center_freq: f64,
    ) -> Result<Self, RfError> {
        check_rate(sample_rate)?;
        Ok(Self {
            samples,
            sample_rate,
            start_ns,
            frame_freq: center_freq,
            shift: 0.0,
            phase: 0.0,
        })
    }

    pub fn len(&self) -> usize {
        self.samples.len()
    }

    pub fn is_empty(&self) -> bool {
        self.samples.is_empty()
    }

    pub fn sample_rate(&self) -> f64 {
        self.sample_rate
    }

    pub fn start_ns(&self) -> u64 {
        self.start_ns
    }

    pub fn start_time(&self) -> f64 {
        self.start_ns as f64 * 1e-9
    }

    pub fn center_freq(&self) -> f64 {
        self.frame_freq + self.shift
    }

    /// Pending rotation phase in degrees.
    pub fn pending_phase(&self) -> f64 {
        self.phase
    }

    /// Absolute time of sample `k` in seconds.
    pub fn sample_time(&self, k: usize) -> f64 {
        self.start_time() + k as f64 / self.sample_rate
    }

    /// Samples with all pending conversions applied.
    pub fn samples(&self) -> Vec<Complex64> {
        self.rotated(self.shift).collect()
    }

    /// Samples as seen after mixing down by a tone at absolute frequency
    /// `demod_hz` with the `e^{-iωt}` convention.
    pub fn demodulated(&self, demod_hz: f64) -> impl Iterator<Item = Complex64> + '_ {
        self.rotated((self.frame_freq - demod_hz) + self.shift)
    }

    fn rotated(&self, residual_hz: f64) -> impl Iterator<Item = Complex64> + '_ {
        let base = self.phase.to_radians();
        let constant = (residual_hz == 0.0).then(|| Complex64::from_polar(1.0, base));
        self.samples.iter().enumerate().map(move |(k, s)| {
            let rot = constant.unwrap_or_else(|| {
                let cycles = frac_cycles(residual_hz, self.start_ns, k as u64, self.sample_rate);
                Complex64::from_polar(1.0, base + TAU * cycles)
            });
            s * rot
        })
    }

    /// Scales the raw samples and adds to the pending phase.
    pub fn apply_perturbation(&mut self, pert: PathPerturbation) {
        if pert.gain_multiplier != 1.0 {
            for s in self.samples.iter_mut() {
                *s *= pert.gain_multiplier;
            }
        }
        self.phase += pert.phase_offset;
    }

    /// Sub-range `[start, start + len)` as its own envelope, keeping the
    /// pending rotation and absolute time base.
    pub fn window(&self, start: usize, len: usize) -> Result<ComplexEnvelope, RfError> {
        let end = start + len;
        if end > self.samples.len() {
            return Err(RfError::Window {
                start,
                end,
                len: self.samples.len(),
            });
        }
        let offset_ns = offset_to_ns(start, self.sample_rate)?;
        Ok(ComplexEnvelope {
            samples: self.samples[start..end].to_vec(),
            start_ns: self.start_ns + offset_ns,
            ..self.empty_like()
        })
    }

    /// Same metadata, no samples.
    fn empty_like(&self) -> ComplexEnvelope {
        ComplexEnvelope {
            samples: Vec::new(),
            sample_rate: self.sample_rate,
            start_ns: self.start_ns,
            frame_freq: self.frame_freq,
            shift: self.shift,
            phase: self.phase,
        }
    }
}

fn check_rate(sample_rate: f64) -> Result<(), RfError> {
    if sample_rate.is_finite() && sample_rate > 0.0 {
        Ok(())
    } else {
        Err(RfError::SampleRate(sample_rate))
    }
}

fn offset_to_ns(samples: usize, sample_rate: f64) -> Result<u64, RfError> {
    let ns = samples as f64 * 1e9 / sample_rate;
    let rounded = ns.round();
    if (ns - rounded).abs() > 1e-6 {
        return Err(RfError::SampleRate(sample_rate));
    }
    Ok(rounded as u64)
}

/// Fractional cycles in (-1, 1) of a tone at `freq_hz` at absolute time
/// `start_ns + k / sample_rate`.
///
/// The integer part of the frequency is reduced modulo the time base in
/// integer arithmetic, so phases stay exact over a 24 h timeline even for
/// GHz tones.
pub fn frac_cycles(freq_hz: f64, start_ns: u64, k: u64, sample_rate: f64) -> f64 {
    if freq_hz == 0.0 {
        return 0.0;
    }
    let f = freq_hz.abs();
    let f_int = f.trunc();
    let f_frac = f - f_int;
    let whole = f_int as u128;
    let a = ((whole * start_ns as u128) % 1_000_000_000) as f64 * 1e-9;
    let b = if sample_rate.fract() == 0.0 && sample_rate < 1e18 {
        let fs = sample_rate as u128;
        ((whole * k as u128) % fs) as f64 / sample_rate
    } else {
        (f_int * k as f64 / sample_rate).fract()
    };
    let c = (f_frac * (start_ns as f64 * 1e-9 + k as f64 / sample_rate)).fract();
    let total = (a + b + c).fract();
    if freq_hz < 0.0 {
        -total
    } else {
        total
    }
}

/// Number of samples spanned by `duration` seconds, which must be integral.
pub fn sample_count(duration: f64, sample_rate: f64) -> Result<usize, RfError> {
    check_rate(sample_rate)?;
    let n = duration * sample_rate;
    let rounded = n.round();
    if duration.is_nan() || duration <= 0.0 || (n - rounded).abs() > 1e-6 * rounded.max(1.0) || rounded < 1.0 {
        return Err(RfError::FractionalSamples {
            duration,
            sample_rate,
        });
    }
    Ok(rounded as usize)
}

/// Rectangular pulse at the path's NCO frequency, scaled and rotated by the
/// baseline and thermal perturbation.
pub fn synthesize_pulse(
    path: &SignalPath,
    duration: f64,
    sample_rate: f64,
    start_ns: u64,
    perturbation: PathPerturbation,
) -> Result<ComplexEnvelope, RfError> {
    let n = sample_count(duration, sample_rate)?;
    let amp = path.baseline_gain * perturbation.gain_multiplier;
    let phase = (path.baseline_phase + perturbation.phase_offset).to_radians();
    let value = Complex64::from_polar(amp, phase);
    Ok(ComplexEnvelope {
        samples: vec![value; n],
        sample_rate,
        start_ns,
        frame_freq: path.nco_freq,
        shift: 0.0,
        phase: 0.0,
    })
}

/// Mixes up by the LO: rotation by `lo.phase + 360°·f·t`.
pub fn upconvert(mut env: ComplexEnvelope, lo: &LoState) -> ComplexEnvelope {
    env.shift += lo.frequency;
    env.phase += lo.phase;
    env
}

/// Exact inverse of [`upconvert`].
pub fn downconvert(mut env: ComplexEnvelope, lo: &LoState) -> ComplexEnvelope {
    env.shift -= lo.frequency;
    env.phase -= lo.phase;
    env
}

/// Sums envelopes into one stream starting at `origin_ns`, each placed at
/// its offset in seconds. Gaps are exact zeros; overlaps add linearly. The
/// output frame is the first envelope's current center frequency.
pub fn combine(
    envelopes: &[ComplexEnvelope],
    offsets: &[f64],
    origin_ns: u64,
) -> Result<ComplexEnvelope, RfError> {
    let first = envelopes
        .first()
        .ok_or_else(|| RfError::Combine("no envelopes".into()))?;
    if envelopes.len() != offsets.len() {
        return Err(RfError::Combine(format!(
            "{} envelopes but {} offsets",
            envelopes.len(),
            offsets.len()
        )));
    }
    let fs = first.sample_rate;
    let mut placements = Vec::with_capacity(envelopes.len());
    let mut total = 0usize;
    for (env, &offset) in envelopes.iter().zip(offsets) {
        if env.sample_rate != fs {
            return Err(RfError::Combine("sample rates differ".into()));
        }
        let pos = offset * fs;
        let idx = pos.round();
        if offset.is_nan() || offset < 0.0 || (pos - idx).abs() > 1e-6 {
            return Err(RfError::Combine(format!(
                "offset {offset} s is not on the {fs} S/s sample grid"
            )));
        }
        let idx = idx as usize;
        total = total.max(idx + env.len());
        placements.push(idx);
    }
    let mut out = ComplexEnvelope {
        samples: vec![Complex64::new(0.0, 0.0); total],
        start_ns: origin_ns,
        phase: 0.0,
        frame_freq: first.center_freq(),
        shift: 0.0,
        ..first.empty_like()
    };
    for (env, idx) in envelopes.iter().zip(placements) {
        let placed_start = origin_ns + offset_to_ns(idx, fs)?;
        let residual = (env.frame_freq - first.frame_freq) + (env.shift - first.shift);
        let base = env.phase.to_radians();
        let dst = &mut out.samples[idx..idx + env.len()];
        if residual == 0.0 {
            let rot = Complex64::from_polar(1.0, base);
            for (d, s) in dst.iter_mut().zip(&env.samples) {
                *d += s * rot;
            }
        } else {
            for (k, (d, s)) in dst.iter_mut().zip(&env.samples).enumerate() {
                let cycles = frac_cycles(residual, placed_start, k as u64, fs);
                *d += s * Complex64::from_polar(1.0, base + TAU * cycles);
            }
        }
    }
    Ok(out)
}

/// Per-sample complex noise standard deviation for a density in dBm/Hz over
/// `bandwidth` Hz, relative to a 0 dBm unit-amplitude full-scale tone.
pub fn noise_sigma(density_dbm_per_hz: f64, bandwidth: f64) -> f64 {
    if density_dbm_per_hz == f64::NEG_INFINITY {
        return 0.0;
    }
    let dbm = density_dbm_per_hz + 10.0 * bandwidth.log10();
    10f64.powf(dbm / 20.0)
}

/// Adds circular Gaussian noise; the simulated bandwidth is the sample rate.
pub fn add_noise_floor<R: Rng + ?Sized>(
    mut env: ComplexEnvelope,
    density_dbm_per_hz: f64,
    rng: &mut R,
) -> ComplexEnvelope {
    let sigma = noise_sigma(density_dbm_per_hz, env.sample_rate);
    if sigma == 0.0 {
        return env;
    }
    let per_axis = sigma / std::f64::consts::SQRT_2;
    for s in env.samples.iter_mut() {
        let re: f64 = rng.sample(StandardNormal);
        let im: f64 = rng.sample(StandardNormal);
        *s += Complex64::new(re * per_axis, im * per_axis);
    }
    env
}
