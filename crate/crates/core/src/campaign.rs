//! Campaign loop: thermal network stepped along the measurement schedule,
//! every round's pulses synthesized, combined onto the shared capture path
//! and reduced to per-pulse records.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use thiserror::Error;

use crate::analysis::{compute_stats, AnalysisError, ChannelSeries, StabilityStats};
use crate::coupling::{
    calibrate_sensitivities, perturbation_for, Calibration, CalibrationTargets, CouplingError, PathPerturbation,
    SensitivityTable,
};
use crate::rfchain::{
    add_noise_floor, combine, downconvert, sample_count, synthesize_pulse, upconvert, ChannelId, ComplexEnvelope,
    LoState, SignalPath,
};
use crate::schedule::{capture_pulse, wrap_degrees, MeasurementPlan, PulseRecord, NS_PER_S};
use crate::thermal::{ControlMode, ThermalNetwork};

const THERMAL_STREAM: u64 = 0;
const RF_STREAM: u64 = 1;

#[derive(Debug, Error)]
pub enum CampaignError {
    #[error("campaign setup: {0}")]
    Setup(String),
    #[error("round {round}, {context}: {what}")]
    At {
        round: u64,
        context: String,
        what: String,
    },
    #[error(transparent)]
    Analysis(#[from] AnalysisError),
}

fn at(round: u64, context: impl Into<String>) -> impl FnOnce(String) -> CampaignError {
    move |what| CampaignError::At {
        round,
        context: context.into(),
        what,
    }
}

/// A device on a path: its row in the sensitivity table and the thermal node
/// whose temperature it sees.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct DeviceBinding {
    pub sensitivity: usize,
    pub node: usize,
}

#[derive(Debug, Clone, PartialEq)]
pub struct PathBinding {
    pub path: SignalPath,
    pub devices: Vec<DeviceBinding>,
    /// Index into [`CampaignSetup::los`].
    pub lo: Option<usize>,
}

/// An LO and the synthesizer devices whose temperature perturbs it.
#[derive(Debug, Clone, PartialEq)]
pub struct LoBinding {
    pub state: LoState,
    pub devices: Vec<DeviceBinding>,
}

#[derive(Debug, Clone)]
pub struct CampaignSetup {
    pub network: ThermalNetwork,
    pub table: SensitivityTable,
    /// One per plan channel, in slot order.
    pub outputs: Vec<PathBinding>,
    pub capture: PathBinding,
    pub los: Vec<LoBinding>,
    pub plan: MeasurementPlan,
    pub sample_rate: f64,
    pub noise_density: f64,
    pub guard_fraction: f64,
    /// Settling time at constant room temperature before t = 0.
    pub warmup_ns: u64,
}

impl CampaignSetup {
    /// Checks the wiring that later stages rely on.
    pub fn validate(&self) -> Result<(), CampaignError> {
        let bad = |s: String| Err(CampaignError::Setup(s));
        self.plan
            .validate()
            .map_err(|e| CampaignError::Setup(e.to_string()))?;
        if self.outputs.len() as u64 != self.plan.slots() {
            return bad(format!(
                "{} output paths for {} schedule slots",
                self.outputs.len(),
                self.plan.slots()
            ));
        }
        for (slot, b) in self.outputs.iter().enumerate() {
            let want = self.plan.channel_of(slot as u64);
            if b.path.channel != want {
                return bad(format!("slot {slot} expects channel {want}, got {}", b.path.channel));
            }
            if b.path.port.is_input() {
                return bad(format!("channel {} is an input port", b.path.channel));
            }
            let center = b.path.nco_freq + b.lo.map_or(0.0, |i| self.los[i].state.frequency);
            if center != self.plan.carrier_hz as f64 {
                return bad(format!(
                    "channel {} emits at {center} Hz, plan carrier is {} Hz",
                    b.path.channel, self.plan.carrier_hz
                ));
            }
        }
        if !self.capture.path.port.is_input() {
            return bad("capture path must be an input port".into());
        }
        if self.capture.lo.is_none() {
            return bad("capture path needs an LO".into());
        }
        let n_dev = self.table.devices().len();
        let n_node = self.network.nodes().len();
        for b in self.outputs.iter().chain(std::iter::once(&self.capture)) {
            b.path
                .validate()
                .map_err(|e| CampaignError::Setup(e.to_string()))?;
            if b.lo.is_some_and(|i| i >= self.los.len()) {
                return bad(format!("{}: LO index out of range", b.path.channel));
            }
        }
        let all_devices = self
            .outputs
            .iter()
            .chain(std::iter::once(&self.capture))
            .flat_map(|b| b.devices.iter())
            .chain(self.los.iter().flat_map(|l| l.devices.iter()));
        for d in all_devices {
            if d.sensitivity >= n_dev || d.node >= n_node {
                return bad("device binding out of range".into());
            }
        }
        sample_count(self.plan.pulse_duration_ns as f64 / NS_PER_S as f64, self.sample_rate)
            .map_err(|e| CampaignError::Setup(e.to_string()))?;
        let pitch = self.plan.slot_pitch_ns() as f64 * self.sample_rate / NS_PER_S as f64;
        if (pitch - pitch.round()).abs() > 1e-9 {
            return bad("slot pitch is not a whole number of samples".into());
        }
        Ok(())
    }

    pub fn channels(&self) -> Vec<ChannelId> {
        self.outputs.iter().map(|b| b.path.channel).collect()
    }

    /// Copy using a different sensitivity table with the same row order.
    pub fn with_table(&self, table: SensitivityTable) -> Self {
        Self {
            table,
            ..self.clone()
        }
    }

    pub fn with_plan(&self, plan: MeasurementPlan) -> Self {
        Self { plan, ..self.clone() }
    }

    fn demod_hz(&self) -> f64 {
        let lo = self.capture.lo.map_or(0.0, |i| self.los[i].state.frequency);
        self.plan.carrier_hz as f64 - lo
    }
}

fn devices_perturbation(
    table: &SensitivityTable,
    devices: &[DeviceBinding],
    temps: &[f64],
) -> Result<PathPerturbation, CouplingError> {
    let rows = table.devices();
    perturbation_for(devices.iter().map(|d| (&rows[d.sensitivity], temps[d.node])))
}

/// LO state and gain after its synthesizer's thermal perturbation.
fn perturbed_lo(table: &SensitivityTable, lo: &LoBinding, temps: &[f64]) -> Result<(LoState, f64), CouplingError> {
    let p = devices_perturbation(table, &lo.devices, temps)?;
    let state = LoState {
        phase: lo.state.phase + p.phase_offset,
        ..lo.state.clone()
    };
    Ok((state, p.gain_multiplier))
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ThermalSample {
    pub t_s: f64,
    pub node: usize,
    pub temp_c: f64,
    pub duty: Option<f64>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct CampaignOptions {
    pub mode: ControlMode,
    pub seed: u64,
    /// Keep every node's temperature at every round start.
    pub keep_node_temps: bool,
    /// Thermal trace sampling interval; None disables the trace.
    pub trace_interval_ns: Option<u64>,
}

impl CampaignOptions {
    pub fn new(mode: ControlMode, seed: u64) -> Self {
        Self {
            mode,
            seed,
            keep_node_temps: false,
            trace_interval_ns: None,
        }
    }
}

/// Node temperatures at each round start, round-major.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct NodeTempLog {
    pub nodes: usize,
    pub temps: Vec<f64>,
}

impl NodeTempLog {
    pub fn rounds(&self) -> usize {
        self.temps.len().checked_div(self.nodes).unwrap_or(0)
    }

    pub fn round(&self, r: usize) -> &[f64] {
        &self.temps[r * self.nodes..(r + 1) * self.nodes]
    }
}

#[derive(Debug, Clone, Default)]
pub struct CampaignOutput {
    /// Round-major, slot order within a round.
    pub records: Vec<PulseRecord>,
    pub node_temps: NodeTempLog,
    pub thermal_trace: Vec<ThermalSample>,
}

impl CampaignOutput {
    pub fn series(&self, channels: &[ChannelId]) -> Result<Vec<ChannelSeries>, AnalysisError> {
        series_by_channel(&self.records, channels)
    }
}

/// Splits round-major records into per-channel series.
pub fn series_by_channel(records: &[PulseRecord], channels: &[ChannelId]) -> Result<Vec<ChannelSeries>, AnalysisError> {
    channels
        .iter()
        .map(|&c| {
            let mine: Vec<PulseRecord> = records.iter().filter(|r| r.channel == c).copied().collect();
            ChannelSeries::from_records(c, &mine)
        })
        .collect()
}

pub fn channel_stats(series: &[ChannelSeries]) -> Result<Vec<StabilityStats>, AnalysisError> {
    series.iter().map(compute_stats).collect()
}

/// Receives every captured slot window together with its demodulation
/// frequency.
pub type WindowSink<'a> = dyn FnMut(ChannelId, u64, &ComplexEnvelope, f64) -> Result<(), String> + 'a;

fn warm_up(setup: &CampaignSetup, net: &mut ThermalNetwork, mode: ControlMode, rng: &mut ChaCha8Rng) {
    let room0 = net.ambient().at(0.0);
    net.initialize_steady(room0);
    let dt_ns = (net.dt() * NS_PER_S as f64).round() as u64;
    let steps = setup.warmup_ns / dt_ns.max(1);
    for _ in 0..steps {
        net.step(mode, rng, Some(room0));
    }
}

pub fn run_campaign(
    setup: &CampaignSetup,
    opts: CampaignOptions,
    mut sink: Option<&mut WindowSink<'_>>,
) -> Result<CampaignOutput, CampaignError> {
    setup.validate()?;
    let plan = &setup.plan;
    let mut thermal_rng = ChaCha8Rng::seed_from_u64(opts.seed);
    thermal_rng.set_stream(THERMAL_STREAM);
    let mut rf_rng = ChaCha8Rng::seed_from_u64(opts.seed);
    rf_rng.set_stream(RF_STREAM);

    let mut net = setup.network.clone();
    warm_up(setup, &mut net, opts.mode, &mut thermal_rng);

    let fs = setup.sample_rate;
    let pulse_s = plan.pulse_duration_ns as f64 / NS_PER_S as f64;
    let pulse_len = sample_count(pulse_s, fs).map_err(|e| CampaignError::Setup(e.to_string()))?;
    let offsets: Vec<f64> = (0..plan.slots())
        .map(|s| plan.slot_offset_ns(s) as f64 / NS_PER_S as f64)
        .collect();
    let starts: Vec<usize> = offsets.iter().map(|o| (o * fs).round() as usize).collect();
    let demod = setup.demod_hz();
    let capture_lo = &setup.los[setup.capture.lo.expect("validated")];

    let rounds = plan.rounds();
    let mut out = CampaignOutput {
        records: Vec::with_capacity((rounds * plan.slots()) as usize),
        node_temps: NodeTempLog {
            nodes: net.nodes().len(),
            temps: Vec::new(),
        },
        thermal_trace: Vec::new(),
    };
    let mut next_trace = 0u64;
    let mut temps = Vec::with_capacity(net.nodes().len());
    let mut pulses = Vec::with_capacity(setup.outputs.len());

    for round in 0..rounds {
        let t0 = plan.round_start_ns(round);
        net.advance_to(t0, opts.mode, &mut thermal_rng, |_| {});
        temps.clear();
        temps.extend(net.temperatures());
        if opts.keep_node_temps {
            out.node_temps.temps.extend_from_slice(&temps);
        }
        if let Some(every) = opts.trace_interval_ns {
            if t0 >= next_trace {
                let duties = net.node_duties();
                for (node, (&temp_c, duty)) in temps.iter().zip(duties).enumerate() {
                    out.thermal_trace.push(ThermalSample {
                        t_s: t0 as f64 / NS_PER_S as f64,
                        node,
                        temp_c,
                        duty,
                    });
                }
                next_trace = t0 + every.max(1);
            }
        }

        pulses.clear();
        for (slot, b) in setup.outputs.iter().enumerate() {
            let ctx = || format!("channel {}", b.path.channel);
            let pert = devices_perturbation(&setup.table, &b.devices, &temps).map_err(|e| at(round, ctx())(e.to_string()))?;
            let start_ns = t0 + plan.slot_offset_ns(slot as u64);
            let mut env = synthesize_pulse(&b.path, pulse_s, fs, start_ns, pert).map_err(|e| at(round, ctx())(e.to_string()))?;
            if let Some(i) = b.lo {
                let (lo, gain) = perturbed_lo(&setup.table, &setup.los[i], &temps).map_err(|e| at(round, ctx())(e.to_string()))?;
                env = upconvert(env, &lo);
                env.apply_perturbation(PathPerturbation {
                    gain_multiplier: gain,
                    phase_offset: 0.0,
                });
            }
            pulses.push(env);
        }

        let stream = combine(&pulses, &offsets, t0).map_err(|e| at(round, "combine")(e.to_string()))?;
        let mut stream = add_noise_floor(stream, setup.noise_density, &mut rf_rng);
        let cap = devices_perturbation(&setup.table, &setup.capture.devices, &temps)
            .map_err(|e| at(round, "capture path")(e.to_string()))?;
        stream.apply_perturbation(cap);
        let (lo, lo_gain) = perturbed_lo(&setup.table, capture_lo, &temps).map_err(|e| at(round, "capture LO")(e.to_string()))?;
        let mut stream = downconvert(stream, &lo);
        stream.apply_perturbation(PathPerturbation {
            gain_multiplier: lo_gain,
            phase_offset: 0.0,
        });

        for (slot, b) in setup.outputs.iter().enumerate() {
            let ch = b.path.channel;
            let win = stream
                .window(starts[slot], pulse_len)
                .map_err(|e| at(round, format!("channel {ch}"))(e.to_string()))?;
            if let Some(s) = sink.as_mut() {
                s(ch, round, &win, demod).map_err(at(round, format!("channel {ch} dump")))?;
            }
            let (amp, phase) =
                capture_pulse(&win, demod, setup.guard_fraction).map_err(|e| at(round, format!("channel {ch}"))(e.to_string()))?;
            out.records.push(PulseRecord {
                channel: ch,
                round,
                timestamp_ns: win.start_ns(),
                mean_amplitude: amp,
                mean_phase: phase,
            });
        }
    }
    Ok(out)
}

/// Records the noiseless pipeline would produce for the logged node
/// temperatures, evaluated in closed form.
pub fn predict_records(
    setup: &CampaignSetup,
    table: &SensitivityTable,
    log: &NodeTempLog,
) -> Result<Vec<PulseRecord>, CampaignError> {
    let plan = &setup.plan;
    let capture_lo = &setup.los[setup.capture.lo.ok_or_else(|| CampaignError::Setup("capture path needs an LO".into()))?];
    let mut out = Vec::with_capacity(log.rounds() * setup.outputs.len());
    for r in 0..log.rounds() {
        let round = r as u64;
        let temps = log.round(r);
        let fail = |e: CouplingError| at(round, "prediction")(e.to_string());
        let cap = devices_perturbation(table, &setup.capture.devices, temps).map_err(fail)?;
        let (lo, lo_gain) = perturbed_lo(table, capture_lo, temps).map_err(fail)?;
        for (slot, b) in setup.outputs.iter().enumerate() {
            let p = devices_perturbation(table, &b.devices, temps).map_err(fail)?;
            let (up_phase, up_gain) = match b.lo {
                Some(i) => {
                    let (l, g) = perturbed_lo(table, &setup.los[i], temps).map_err(fail)?;
                    (l.phase, g)
                }
                None => (0.0, 1.0),
            };
            let amp = b.path.baseline_gain * p.gain_multiplier * up_gain * cap.gain_multiplier * lo_gain;
            let phase = b.path.baseline_phase + p.phase_offset + up_phase + cap.phase_offset - lo.phase;
            out.push(PulseRecord {
                channel: b.path.channel,
                round,
                timestamp_ns: plan.round_start_ns(round) + plan.slot_offset_ns(slot as u64),
                mean_amplitude: amp,
                mean_phase: wrap_degrees(phase),
            });
        }
    }
    Ok(out)
}

/// Mean amplitude std (percent) and phase std (degrees) across channels.
pub fn mean_stds(stats: &[StabilityStats]) -> CalibrationTargets {
    let n = stats.len().max(1) as f64;
    CalibrationTargets {
        amp_std_pct: stats.iter().map(|s| s.amp_std_pct).sum::<f64>() / n,
        phase_std_deg: stats.iter().map(|s| s.phase_std_deg).sum::<f64>() / n,
    }
}

/// Scales the setup's sensitivities so that a control-on campaign hits the
/// requested mean standard deviations.
///
/// Device temperatures do not depend on the coefficients, so one thermal
/// run is logged and every bisection step is evaluated in closed form on
/// that log.
pub fn calibrate_setup(
    setup: &CampaignSetup,
    targets: CalibrationTargets,
    seed: u64,
) -> Result<Calibration, CampaignError> {
    let mut opts = CampaignOptions::new(ControlMode::On, seed);
    opts.keep_node_temps = true;
    let quiet = CampaignSetup {
        noise_density: f64::NEG_INFINITY,
        table: setup.table.scaled(0.0, 0.0),
        ..setup.clone()
    };
    let log = run_campaign(&quiet, opts, None)?.node_temps;
    let channels = setup.channels();
    let mut failure = None;
    let evaluate = |table: &SensitivityTable| {
        let stats = predict_records(setup, table, &log)
            .map_err(|e| e.to_string())
            .and_then(|r| series_by_channel(&r, &channels).map_err(|e| e.to_string()))
            .and_then(|s| channel_stats(&s).map_err(|e| e.to_string()));
        match stats {
            Ok(s) => mean_stds(&s),
            Err(e) => {
                failure.get_or_insert(e);
                CalibrationTargets {
                    amp_std_pct: f64::NAN,
                    phase_std_deg: f64::NAN,
                }
            }
        }
    };
    let result = calibrate_sensitivities(targets, &setup.table, evaluate);
    if let Some(e) = failure {
        return Err(CampaignError::Setup(format!("calibration: {e}")));
    }
    result.map_err(|e| CampaignError::Setup(e.to_string()))
}
