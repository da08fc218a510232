//! Device temperature to RF gain/phase perturbation.
//!
//! Small-signal linear model: each device contributes a fractional gain
//! change `amp_coeff * dT` (multiplied along the path) and a phase shift
//! `phase_coeff * dT` in degrees (summed along the path).

use std::collections::HashMap;

use serde::{Deserialize, Serialize};
use thiserror::Error;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum CouplingError {
    #[error("device `{0}`: amplifiers couple to amplitude only, phase_coeff must be 0")]
    AmplifierPhase(String),
    #[error("device `{id}`: {what}")]
    InvalidDevice { id: String, what: String },
    #[error("gain multiplier {gain} <= 0 is outside the small-signal regime")]
    NonPositiveGain { gain: f64 },
    #[error("non-finite temperature {temp} for device `{id}`")]
    NonFiniteTemperature { id: String, temp: f64 },
    #[error("duplicate device `{0}` in sensitivity table")]
    Duplicate(String),
    #[error("calibration did not converge for {quantity}: target {target}, reached {reached} after {iterations} iterations")]
    Calibration {
        quantity: &'static str,
        target: f64,
        reached: f64,
        iterations: usize,
    },
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum DeviceKind {
    Amplifier,
    Pll,
    Mixer,
    /// Unregulated passive run (cabling, combiner) at room temperature.
    Passive,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DeviceSensitivity {
    pub device_id: String,
    pub kind: DeviceKind,
    /// Fractional gain change per °C.
    pub amp_coeff: f64,
    /// Degrees per °C.
    #[serde(default)]
    pub phase_coeff: f64,
    #[serde(rename = "reference_temp_c")]
    pub reference_temp: f64,
}

impl DeviceSensitivity {
    pub fn new(
        device_id: impl Into<String>,
        kind: DeviceKind,
        amp_coeff: f64,
        phase_coeff: f64,
        reference_temp: f64,
    ) -> Result<Self, CouplingError> {
        let s = Self {
            device_id: device_id.into(),
            kind,
            amp_coeff,
            phase_coeff,
            reference_temp,
        };
        s.validate()?;
        Ok(s)
    }

    pub fn validate(&self) -> Result<(), CouplingError> {
        if !(self.amp_coeff.is_finite() && self.phase_coeff.is_finite() && self.reference_temp.is_finite()) {
            return Err(CouplingError::InvalidDevice {
                id: self.device_id.clone(),
                what: "coefficients and reference_temp must be finite".into(),
            });
        }
        if self.kind == DeviceKind::Amplifier && self.phase_coeff != 0.0 {
            return Err(CouplingError::AmplifierPhase(self.device_id.clone()));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PathPerturbation {
    pub gain_multiplier: f64,
    /// Degrees.
    pub phase_offset: f64,
}

impl PathPerturbation {
    pub const IDENTITY: PathPerturbation = PathPerturbation {
        gain_multiplier: 1.0,
        phase_offset: 0.0,
    };

    /// Cascade of two independent perturbations.
    pub fn then(self, other: PathPerturbation) -> PathPerturbation {
        PathPerturbation {
            gain_multiplier: self.gain_multiplier * other.gain_multiplier,
            phase_offset: self.phase_offset + other.phase_offset,
        }
    }
}

impl Default for PathPerturbation {
    fn default() -> Self {
        Self::IDENTITY
    }
}

pub fn perturbation_for<'a, I>(path_devices: I) -> Result<PathPerturbation, CouplingError>
where
    I: IntoIterator<Item = (&'a DeviceSensitivity, f64)>,
{
    let mut gain = 1.0;
    let mut phase = 0.0;
    for (dev, temp) in path_devices {
        if !temp.is_finite() {
            return Err(CouplingError::NonFiniteTemperature {
                id: dev.device_id.clone(),
                temp,
            });
        }
        let dt = temp - dev.reference_temp;
        gain *= 1.0 + dev.amp_coeff * dt;
        phase += dev.phase_coeff * dt;
    }
    if gain <= 0.0 {
        return Err(CouplingError::NonPositiveGain { gain });
    }
    Ok(PathPerturbation {
        gain_multiplier: gain,
        phase_offset: phase,
    })
}

/// Validated set of device sensitivities with lookup by id.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct SensitivityTable {
    devices: Vec<DeviceSensitivity>,
    index: HashMap<String, usize>,
}

impl SensitivityTable {
    pub fn new(devices: Vec<DeviceSensitivity>) -> Result<Self, CouplingError> {
        let mut index = HashMap::with_capacity(devices.len());
        for (i, d) in devices.iter().enumerate() {
            d.validate()?;
            if index.insert(d.device_id.clone(), i).is_some() {
                return Err(CouplingError::Duplicate(d.device_id.clone()));
            }
        }
        Ok(Self { devices, index })
    }

    pub fn get(&self, id: &str) -> Option<&DeviceSensitivity> {
        self.index.get(id).map(|&i| &self.devices[i])
    }

    pub fn devices(&self) -> &[DeviceSensitivity] {
        &self.devices
    }

    pub fn into_devices(self) -> Vec<DeviceSensitivity> {
        self.devices
    }

    /// Copy with every amplitude coefficient multiplied by `amp_scale` and
    /// every phase coefficient by `phase_scale`.
    pub fn scaled(&self, amp_scale: f64, phase_scale: f64) -> Self {
        let devices = self
            .devices
            .iter()
            .map(|d| DeviceSensitivity {
                amp_coeff: d.amp_coeff * amp_scale,
                phase_coeff: d.phase_coeff * phase_scale,
                ..d.clone()
            })
            .collect();
        Self {
            devices,
            index: self.index.clone(),
        }
    }
}

/// Mean per-channel standard deviations a calibration aims for.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct CalibrationTargets {
    pub amp_std_pct: f64,
    pub phase_std_deg: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Calibration {
    pub table: SensitivityTable,
    pub amp_scale: f64,
    pub phase_scale: f64,
    /// Metrics of the returned table as reported by the evaluator.
    pub achieved: CalibrationTargets,
    pub iterations: usize,
}

const MAX_ITERATIONS: usize = 200;
const REL_TOL: f64 = 1e-6;

/// Scales `seed` so that `evaluate` reports the requested mean standard
/// deviations.
///
/// `evaluate` simulates the campaign for a candidate table and returns the
/// mean amplitude std (percent) and mean phase std (degrees) across
/// channels. Amplitude statistics depend only on amplitude coefficients and
/// phase statistics only on phase coefficients, so each scale is found by
/// its own bisection on `[0, hi]`, with `hi` bracketed by doubling.
pub fn calibrate_sensitivities<F>(
    targets: CalibrationTargets,
    seed: &SensitivityTable,
    mut evaluate: F,
) -> Result<Calibration, CouplingError>
where
    F: FnMut(&SensitivityTable) -> CalibrationTargets,
{
    let mut iterations = 0;
    let amp_scale = bisect_scale("amplitude std", targets.amp_std_pct, &mut iterations, |s| {
        evaluate(&seed.scaled(s, 0.0)).amp_std_pct
    })?;
    let phase_scale = bisect_scale("phase std", targets.phase_std_deg, &mut iterations, |s| {
        evaluate(&seed.scaled(0.0, s)).phase_std_deg
    })?;
    let table = seed.scaled(amp_scale, phase_scale);
    let achieved = evaluate(&table);
    Ok(Calibration {
        table,
        amp_scale,
        phase_scale,
        achieved,
        iterations,
    })
}

fn bisect_scale(
    quantity: &'static str,
    target: f64,
    iterations: &mut usize,
    mut metric: impl FnMut(f64) -> f64,
) -> Result<f64, CouplingError> {
    if target <= 0.0 {
        return Ok(0.0);
    }
    let close = |v: f64| (v - target).abs() <= REL_TOL * target;
    let mut lo = 0.0;
    let mut hi = 1.0;
    let mut reached = metric(hi);
    let mut n = 1;
    while reached < target {
        if close(reached) {
            *iterations += n;
            return Ok(hi);
        }
        if n >= MAX_ITERATIONS || !reached.is_finite() {
            return Err(CouplingError::Calibration {
                quantity,
                target,
                reached,
                iterations: n,
            });
        }
        lo = hi;
        hi *= 2.0;
        reached = metric(hi);
        n += 1;
    }
    loop {
        let mid = 0.5 * (lo + hi);
        let v = metric(mid);
        n += 1;
        if close(v) {
            *iterations += n;
            return Ok(mid);
        }
        if n >= MAX_ITERATIONS {
            return Err(CouplingError::Calibration {
                quantity,
                target,
                reached: v,
                iterations: n,
            });
        }
        if v < target {
            lo = mid;
        } else {
            hi = mid;
        }
    }
}
