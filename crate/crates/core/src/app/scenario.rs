//! Scenario files: TOML schema, validation that reports every problem with
//! its config path, content hash, and assembly into a [`CampaignSetup`].

use std::collections::{HashMap, HashSet};
use std::fmt;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};
use thiserror::Error;

use crate::campaign::{CampaignSetup, DeviceBinding, LoBinding, PathBinding};
use crate::clocktree::{Compensator, UnitClock, MAX_FRACTIONAL_OFFSET};
use crate::coupling::{CalibrationTargets, DeviceKind, DeviceSensitivity, SensitivityTable};
use crate::rfchain::{sample_count, ChannelId, LoState, PortKind, SignalPath};
use crate::schedule::{seconds_to_ns, MeasurementPlan, NS_PER_S, SYNC_CLOCK_HZ};
use crate::thermal::{
    Actuator, AmbientProfile, ControlLoop, ControlMode, CouplingTarget, FanModel, NetworkNode, PiLoop, Polarity,
    SensorModel, ThermalNetwork, ThermalNode,
};

/// Headroom of default setpoints above the warmest uncontrolled temperature.
pub const SETPOINT_MARGIN_C: f64 = 3.0;
/// Size limits that keep a valid scenario runnable in memory and time.
pub const MAX_ROUND_SAMPLES: u64 = 10_000_000;
pub const MAX_THERMAL_STEPS: u64 = 1_000_000_000;
pub const MAX_DISCIPLINE_STEPS: u64 = 10_000_000;

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Diagnostic {
    pub path: String,
    pub message: String,
}

impl fmt::Display for Diagnostic {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}: {}", self.path, self.message)
    }
}

#[derive(Debug, Error)]
pub enum ScenarioError {
    #[error("cannot read {path}: {source}")]
    Io {
        path: PathBuf,
        source: std::io::Error,
    },
    #[error("{path}:{line}:{column}: {message}")]
    Parse {
        path: PathBuf,
        line: usize,
        column: usize,
        message: String,
    },
    #[error("{} invalid scenario ({} problem{}):\n{}", .path.display(), .diagnostics.len(),
        if .diagnostics.len() == 1 { "" } else { "s" },
        .diagnostics.iter().map(|d| format!("  {d}")).collect::<Vec<_>>().join("\n"))]
    Invalid {
        path: PathBuf,
        diagnostics: Vec<Diagnostic>,
    },
}

fn default_control() -> ControlMode {
    ControlMode::On
}
fn default_room() -> String {
    "room".into()
}
fn default_one() -> f64 {
    1.0
}
fn default_true() -> bool {
    true
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ScenarioFile {
    pub name: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub description: Option<String>,
    pub seed: u64,
    /// Not part of the scenario hash.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub output_dir: Option<String>,
    /// Default control mode; not part of the scenario hash.
    #[serde(default = "default_control")]
    pub control: ControlMode,
    pub plan: PlanConfig,
    #[serde(default)]
    pub rf: RfConfig,
    pub thermal: ThermalConfig,
    #[serde(default)]
    pub devices: Vec<DeviceConfig>,
    #[serde(default)]
    pub los: Vec<LoConfig>,
    #[serde(default)]
    pub paths: Vec<PathConfig>,
    #[serde(default)]
    pub clock: ClockConfig,
    #[serde(default)]
    pub calibration: CalibrationConfig,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PlanConfig {
    pub units: u8,
    pub channels_per_unit: u8,
    pub pulse_duration_s: f64,
    pub pulse_gap_s: f64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub round_period_s: Option<f64>,
    /// Alternative to `round_period_s`, in 62.5 kHz ticks.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub round_period_sync_ticks: Option<u64>,
    pub total_duration_s: f64,
    pub carrier_hz: u64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RfConfig {
    pub sample_rate_hz: f64,
    /// `-inf` disables the noise floor.
    pub noise_density_dbm_per_hz: f64,
    pub guard_fraction: f64,
}

impl Default for RfConfig {
    fn default() -> Self {
        Self {
            sample_rate_hz: 1e6,
            noise_density_dbm_per_hz: -148.0,
            guard_fraction: crate::schedule::DEFAULT_GUARD_FRACTION,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ThermalConfig {
    #[serde(default = "ThermalConfig::default_dt")]
    pub dt_s: f64,
    #[serde(default = "ThermalConfig::default_warmup")]
    pub warmup_s: f64,
    /// 0 disables the thermal trace.
    #[serde(default = "ThermalConfig::default_trace")]
    pub trace_interval_s: f64,
    pub ambient: AmbientConfig,
    pub nodes: Vec<NodeConfig>,
    #[serde(default)]
    pub loops: Vec<LoopConfig>,
}

impl ThermalConfig {
    fn default_dt() -> f64 {
        0.1
    }
    fn default_warmup() -> f64 {
        3600.0
    }
    fn default_trace() -> f64 {
        60.0
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "lowercase")]
pub enum AmbientConfig {
    Sinusoid { mean_c: f64, amplitude_c: f64, period_s: f64 },
    Recorded { samples: Vec<[f64; 2]> },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct NodeConfig {
    pub id: String,
    pub heat_capacity: f64,
    pub ambient_coupling: f64,
    #[serde(default)]
    pub heater_max_power: f64,
    #[serde(default)]
    pub self_heating: f64,
    /// `room` or the id of the enclosing node.
    #[serde(default = "default_room")]
    pub couples_to: String,
    /// Present on fan-cooled enclosures.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub fan_gain: Option<f64>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ActuatorConfig {
    Heater,
    Fan,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum PolarityConfig {
    Heating,
    Cooling,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct LoopConfig {
    pub id: String,
    pub node: String,
    pub actuator: ActuatorConfig,
    /// Defaults to heating for heaters and cooling for fans.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub polarity: Option<PolarityConfig>,
    /// Defaults to the warmest uncontrolled temperature plus a margin.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub setpoint_c: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub kp: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub ki: Option<f64>,
    /// Closed-loop time constant used when gains are omitted; defaults to a
    /// third of the plant time constant.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub lambda_s: Option<f64>,
    #[serde(default)]
    pub duty_min: f64,
    #[serde(default = "default_one")]
    pub duty_max: f64,
    pub off_duty: f64,
    #[serde(default)]
    pub sensor: SensorModel,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum DeviceKindConfig {
    Amplifier,
    Pll,
    Mixer,
    Passive,
}

impl From<DeviceKindConfig> for DeviceKind {
    fn from(k: DeviceKindConfig) -> Self {
        match k {
            DeviceKindConfig::Amplifier => DeviceKind::Amplifier,
            DeviceKindConfig::Pll => DeviceKind::Pll,
            DeviceKindConfig::Mixer => DeviceKind::Mixer,
            DeviceKindConfig::Passive => DeviceKind::Passive,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DeviceConfig {
    pub id: String,
    pub kind: DeviceKindConfig,
    /// Thermal node the device sits on; defaults to `id`.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub node: Option<String>,
    pub amp_coeff: f64,
    #[serde(default)]
    pub phase_coeff: f64,
    pub reference_temp_c: f64,
}

impl DeviceConfig {
    pub fn node_id(&self) -> &str {
        self.node.as_deref().unwrap_or(&self.id)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct LoConfig {
    pub id: String,
    pub frequency_hz: f64,
    #[serde(default)]
    pub phase_deg: f64,
    #[serde(default)]
    pub devices: Vec<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PathConfig {
    pub unit: u8,
    pub ch: u8,
    pub port: PortKind,
    pub nco_freq_hz: f64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub lo: Option<String>,
    #[serde(default)]
    pub devices: Vec<String>,
    #[serde(default = "default_one")]
    pub baseline_gain: f64,
    #[serde(default)]
    pub baseline_phase_deg: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ClockConfig {
    /// OCXO fractional offset of each unit; empty means all zero.
    #[serde(default)]
    pub unit_offsets: Vec<f64>,
    /// Counter reset time of each unit; empty means a common reset at 0.
    #[serde(default)]
    pub reset_epochs_ns: Vec<u64>,
    #[serde(default = "default_true")]
    pub compensate: bool,
    #[serde(default = "ClockConfig::default_gain")]
    pub compensator_gain: f64,
    #[serde(default)]
    pub trim_step: f64,
    #[serde(default = "default_one")]
    pub discipline_interval_s: f64,
    /// Defaults to the plan duration.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub duration_s: Option<f64>,
}

impl ClockConfig {
    fn default_gain() -> f64 {
        0.5
    }
}

impl Default for ClockConfig {
    fn default() -> Self {
        Self {
            unit_offsets: Vec::new(),
            reset_epochs_ns: Vec::new(),
            compensate: true,
            compensator_gain: 0.5,
            trim_step: 0.0,
            discipline_interval_s: 1.0,
            duration_s: None,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CalibrationConfig {
    pub amp_std_pct: f64,
    pub phase_std_deg: f64,
}

impl Default for CalibrationConfig {
    fn default() -> Self {
        Self {
            amp_std_pct: 0.15,
            phase_std_deg: 0.39,
        }
    }
}

/// Clock-tree part of a scenario, ready to simulate.
#[derive(Debug, Clone, PartialEq)]
pub struct ClockSetup {
    pub units: Vec<UnitClock>,
    pub compensator: Option<Compensator>,
    pub interval_ns: u64,
    pub duration_ns: u64,
}

/// A validated scenario.
#[derive(Debug, Clone)]
pub struct Scenario {
    pub file: ScenarioFile,
    pub source: Option<PathBuf>,
    pub hash: String,
    pub setup: CampaignSetup,
    pub clock: ClockSetup,
}

impl Scenario {
    pub fn calibration_targets(&self) -> CalibrationTargets {
        CalibrationTargets {
            amp_std_pct: self.file.calibration.amp_std_pct,
            phase_std_deg: self.file.calibration.phase_std_deg,
        }
    }
}

/// SHA-256 of the canonical JSON form, ignoring the default control mode
/// and output directory.
pub fn scenario_hash(file: &ScenarioFile) -> String {
    let canonical = ScenarioFile {
        control: ControlMode::On,
        output_dir: None,
        ..file.clone()
    };
    let json = serde_json::to_vec(&canonical).expect("scenario serializes");
    hex::encode(Sha256::digest(&json))
}

fn line_col(text: &str, offset: usize) -> (usize, usize) {
    let offset = offset.min(text.len());
    let before = &text[..offset];
    let line = before.matches('\n').count() + 1;
    let column = before.rsplit('\n').next().map_or(0, |l| l.chars().count()) + 1;
    (line, column)
}

pub fn parse_scenario(text: &str, path: &Path) -> Result<ScenarioFile, ScenarioError> {
    toml::from_str(text).map_err(|e| {
        let (line, column) = e.span().map_or((1, 1), |s| line_col(text, s.start));
        ScenarioError::Parse {
            path: path.to_path_buf(),
            line,
            column,
            message: e.message().to_string(),
        }
    })
}

pub fn load_scenario(path: &Path) -> Result<Scenario, ScenarioError> {
    let text = std::fs::read_to_string(path).map_err(|source| ScenarioError::Io {
        path: path.to_path_buf(),
        source,
    })?;
    let file = parse_scenario(&text, path)?;
    let mut s = build_scenario(file).map_err(|diagnostics| ScenarioError::Invalid {
        path: path.to_path_buf(),
        diagnostics,
    })?;
    s.source = Some(path.to_path_buf());
    Ok(s)
}

pub fn to_toml(file: &ScenarioFile) -> String {
    toml::to_string(file).expect("scenario serializes to TOML")
}

#[derive(Default)]
struct Diags(Vec<Diagnostic>);

impl Diags {
    fn push(&mut self, path: impl Into<String>, message: impl Into<String>) {
        self.0.push(Diagnostic {
            path: path.into(),
            message: message.into(),
        });
    }

    fn check(&mut self, ok: bool, path: impl Into<String>, message: impl Into<String>) -> bool {
        if !ok {
            self.push(path, message);
        }
        ok
    }
}

fn positive(x: f64) -> bool {
    x.is_finite() && x > 0.0
}

fn non_negative(x: f64) -> bool {
    x.is_finite() && x >= 0.0
}

fn build_plan(cfg: &PlanConfig, d: &mut Diags) -> Option<MeasurementPlan> {
    let round_ns = match (cfg.round_period_s, cfg.round_period_sync_ticks) {
        (Some(s), None) => seconds_to_ns("round_period_s", s)
            .map_err(|e| d.push("plan.round_period_s", e.to_string()))
            .ok(),
        (None, Some(ticks)) => {
            let num = ticks as u128 * NS_PER_S as u128;
            if !num.is_multiple_of(SYNC_CLOCK_HZ as u128) {
                d.push("plan.round_period_sync_ticks", "not a whole number of nanoseconds");
                None
            } else {
                Some((num / SYNC_CLOCK_HZ as u128) as u64)
            }
        }
        (Some(_), Some(_)) => {
            d.push("plan", "set only one of round_period_s and round_period_sync_ticks");
            None
        }
        (None, None) => {
            d.push("plan", "missing round_period_s or round_period_sync_ticks");
            None
        }
    };
    let ns = |name: &str, s: f64, d: &mut Diags| {
        seconds_to_ns(name, s)
            .map_err(|e| d.push(format!("plan.{name}"), e.to_string()))
            .ok()
    };
    let pulse = ns("pulse_duration_s", cfg.pulse_duration_s, d);
    let gap = ns("pulse_gap_s", cfg.pulse_gap_s, d);
    let total = ns("total_duration_s", cfg.total_duration_s, d);
    let (pulse, gap, total, round) = (pulse?, gap?, total?, round_ns?);
    MeasurementPlan::new(cfg.units, cfg.channels_per_unit, pulse, gap, round, total, cfg.carrier_hz)
        .map_err(|e| d.push("plan", e.to_string()))
        .ok()
}

fn build_rf(cfg: &RfConfig, plan: Option<&MeasurementPlan>, d: &mut Diags) {
    d.check(positive(cfg.sample_rate_hz), "rf.sample_rate_hz", "must be > 0");
    d.check(
        cfg.noise_density_dbm_per_hz.is_finite() || cfg.noise_density_dbm_per_hz == f64::NEG_INFINITY,
        "rf.noise_density_dbm_per_hz",
        "must be finite or -inf",
    );
    d.check(
        (0.0..0.5).contains(&cfg.guard_fraction),
        "rf.guard_fraction",
        "must be in [0, 0.5)",
    );
    if let (Some(p), true) = (plan, positive(cfg.sample_rate_hz)) {
        if let Err(e) = sample_count(p.pulse_duration_ns as f64 / NS_PER_S as f64, cfg.sample_rate_hz) {
            d.push("rf.sample_rate_hz", e.to_string());
        }
        let round_samples = (p.slots() * p.slot_pitch_ns()) as f64 * cfg.sample_rate_hz / NS_PER_S as f64;
        d.check(
            round_samples <= MAX_ROUND_SAMPLES as f64,
            "rf.sample_rate_hz",
            format!("one round spans {round_samples:e} samples, more than the {MAX_ROUND_SAMPLES} supported"),
        );
        let pitch = p.slot_pitch_ns() as f64 * cfg.sample_rate_hz / NS_PER_S as f64;
        d.check(
            (pitch - pitch.round()).abs() < 1e-9,
            "rf.sample_rate_hz",
            "pulse + gap must be a whole number of samples",
        );
    }
}

fn build_ambient(cfg: &AmbientConfig, d: &mut Diags) -> Option<AmbientProfile> {
    let r = match cfg {
        AmbientConfig::Sinusoid {
            mean_c,
            amplitude_c,
            period_s,
        } => AmbientProfile::sinusoid(*mean_c, *amplitude_c, *period_s),
        AmbientConfig::Recorded { samples } => AmbientProfile::recorded(samples.iter().map(|s| (s[0], s[1])).collect()),
    };
    r.map_err(|e| d.push("thermal.ambient", e.to_string())).ok()
}

/// Node list in file order plus id lookup; None if any node is invalid.
fn build_nodes(cfg: &ThermalConfig, d: &mut Diags) -> Option<(Vec<NetworkNode>, HashMap<String, usize>)> {
    let mut index = HashMap::new();
    let before = d.0.len();
    for (i, n) in cfg.nodes.iter().enumerate() {
        if n.id.is_empty() || n.id == "room" {
            d.push(format!("thermal.nodes[{i}].id"), "must be non-empty and not `room`");
        } else if index.insert(n.id.clone(), i).is_some() {
            d.push(format!("thermal.nodes[{i}].id"), format!("duplicate node id `{}`", n.id));
        }
    }
    let dt = cfg.dt_s;
    let mut nodes = Vec::with_capacity(cfg.nodes.len());
    for (i, n) in cfg.nodes.iter().enumerate() {
        let at = |f: &str| format!("thermal.nodes[{i}].{f}");
        let target = if n.couples_to == "room" {
            Some(CouplingTarget::Room)
        } else {
            match index.get(&n.couples_to) {
                Some(&j) if j != i => Some(CouplingTarget::Node(j)),
                Some(_) => {
                    d.push(at("couples_to"), "a node cannot couple to itself");
                    None
                }
                None => {
                    d.push(at("couples_to"), format!("unknown node `{}`", n.couples_to));
                    None
                }
            }
        };
        let fan = match n.fan_gain {
            Some(g) if non_negative(g) => Some(FanModel {
                base_coupling: n.ambient_coupling,
                fan_gain: g,
            }),
            Some(_) => {
                d.push(at("fan_gain"), "must be >= 0");
                None
            }
            None => None,
        };
        let node = ThermalNode::new(
            n.id.clone(),
            0.0,
            n.heat_capacity,
            n.ambient_coupling,
            n.heater_max_power,
            n.self_heating,
        )
        .map_err(|e| d.push(format!("thermal.nodes[{i}]"), e.to_string()))
        .ok();
        if let Some(node) = &node {
            let g = fan.map_or(node.ambient_coupling, |f| f.max_coupling());
            let max_dt = node.heat_capacity / g;
            if positive(dt) && dt > max_dt {
                d.push(
                    format!("thermal.nodes[{i}]"),
                    format!("thermal.dt_s = {dt} exceeds the stable step {max_dt} s of this node"),
                );
            }
        }
        if let (Some(node), Some(target)) = (node, target) {
            nodes.push(NetworkNode { node, target, fan });
        }
    }
    // Couplings must form a forest rooted at the room.
    for start in 0..cfg.nodes.len() {
        let mut seen = HashSet::new();
        let mut cur = start;
        while let Some(&next) = index.get(&cfg.nodes[cur].couples_to) {
            if !seen.insert(cur) {
                d.push(format!("thermal.nodes[{start}].couples_to"), "coupling chain forms a cycle");
                break;
            }
            if next == cur {
                break;
            }
            cur = next;
        }
    }
    (d.0.len() == before).then_some((nodes, index))
}

fn uncontrolled_steady(
    nodes: &[NetworkNode],
    loops: &[ControlLoop],
    ambient: &AmbientProfile,
    room: f64,
    dt_ns: u64,
) -> Option<Vec<f64>> {
    let mut net = ThermalNetwork::new(nodes.to_vec(), loops.to_vec(), ambient.clone(), dt_ns).ok()?;
    net.initialize_steady(room);
    Some(net.temperatures().collect())
}

fn build_loops(
    cfg: &ThermalConfig,
    nodes: &[NetworkNode],
    index: &HashMap<String, usize>,
    ambient: &AmbientProfile,
    dt_ns: u64,
    d: &mut Diags,
) -> Option<Vec<ControlLoop>> {
    let before = d.0.len();
    let mut ids = HashSet::new();
    let mut loops = Vec::new();
    let mut pending = Vec::new();
    for (i, l) in cfg.loops.iter().enumerate() {
        let at = |f: &str| format!("thermal.loops[{i}].{f}");
        if !ids.insert(l.id.clone()) {
            d.push(at("id"), format!("duplicate loop id `{}`", l.id));
        }
        let Some(&node) = index.get(&l.node) else {
            d.push(at("node"), format!("unknown node `{}`", l.node));
            continue;
        };
        let actuator = match l.actuator {
            ActuatorConfig::Heater => Actuator::Heater,
            ActuatorConfig::Fan => Actuator::Fan,
        };
        if actuator == Actuator::Fan && nodes[node].fan.is_none() {
            d.push(at("actuator"), format!("node `{}` has no fan_gain", l.node));
        }
        if actuator == Actuator::Heater && nodes[node].node.heater_max_power <= 0.0 {
            d.push(at("actuator"), format!("node `{}` has no heater power", l.node));
        }
        let polarity = match l.polarity.unwrap_or(match actuator {
            Actuator::Heater => PolarityConfig::Heating,
            Actuator::Fan => PolarityConfig::Cooling,
        }) {
            PolarityConfig::Heating => Polarity::Heating,
            PolarityConfig::Cooling => Polarity::Cooling,
        };
        if let Err(e) = l.sensor.validate() {
            d.push(at("sensor"), e.to_string());
        }
        for (name, v) in [("kp", l.kp), ("ki", l.ki)] {
            if let Some(v) = v {
                d.check(non_negative(v), at(name), "must be >= 0");
            }
        }
        if let Some(lam) = l.lambda_s {
            d.check(positive(lam), at("lambda_s"), "must be > 0");
        }
        if let Some(sp) = l.setpoint_c {
            d.check(sp.is_finite(), at("setpoint_c"), "must be finite");
        }
        if !(l.duty_min >= 0.0 && l.duty_min <= l.duty_max && l.duty_max <= 1.0) {
            d.push(at("duty_min"), "need 0 <= duty_min <= duty_max <= 1");
        } else if !(l.duty_min..=l.duty_max).contains(&l.off_duty) {
            d.push(at("off_duty"), "must lie within [duty_min, duty_max]");
        }
        let pi = PiLoop::new(0.0, 0.0, 0.0, l.duty_min.clamp(0.0, 1.0), l.duty_max.clamp(0.0, 1.0), polarity)
            .unwrap_or_else(|_| PiLoop::new(0.0, 0.0, 0.0, 0.0, 1.0, polarity).expect("valid limits"));
        loops.push(ControlLoop {
            id: l.id.clone(),
            node,
            actuator,
            pi,
            sensor: l.sensor.clone(),
            off_duty: l.off_duty.clamp(0.0, 1.0),
            duty: l.off_duty.clamp(0.0, 1.0),
        });
        pending.push(i);
    }
    if d.0.len() != before {
        return None;
    }

    let (_, room_max) = ambient.bounds();
    let room_mean = {
        let (lo, hi) = ambient.bounds();
        0.5 * (lo + hi)
    };
    let warm = uncontrolled_steady(nodes, &loops, ambient, room_max, dt_ns)?;
    let nominal = uncontrolled_steady(nodes, &loops, ambient, room_mean, dt_ns)?;
    for (l, &i) in loops.iter_mut().zip(&pending) {
        let c = &cfg.loops[i];
        let n = &nodes[l.node];
        let parent = match n.target {
            CouplingTarget::Room => room_mean,
            CouplingTarget::Node(j) => nominal[j],
        };
        let (gain, coupling) = match (l.actuator, n.fan) {
            (Actuator::Fan, Some(f)) => {
                let g = f.coupling(l.off_duty);
                ((nominal[l.node] - parent) * f.fan_gain / (1.0 + f.fan_gain * l.off_duty), g)
            }
            _ => {
                let g = n.fan.map_or(n.node.ambient_coupling, |f| f.coupling(0.0));
                (n.node.heater_max_power / g, g)
            }
        };
        let tau = n.node.heat_capacity / coupling;
        let lambda = c.lambda_s.unwrap_or(tau / 3.0);
        let (kp0, ki0) = if gain.abs() > 0.0 {
            PiLoop::lambda_gains(gain, tau, lambda)
        } else {
            d.push(format!("thermal.loops[{i}]"), "actuator has no authority at the off duty; give kp and ki");
            (0.0, 0.0)
        };
        l.pi.kp = c.kp.unwrap_or(kp0);
        l.pi.ki = c.ki.unwrap_or(ki0);
        // Heaters sit above the warmest uncontrolled temperature; a cooling
        // actuator holds the warm-room temperature it reaches at its off duty.
        let default_sp = match l.pi.polarity {
            Polarity::Heating => warm[l.node] + SETPOINT_MARGIN_C,
            Polarity::Cooling => warm[l.node],
        };
        l.pi.setpoint = c.setpoint_c.unwrap_or(default_sp);
    }
    (d.0.len() == before).then_some(loops)
}

fn resolve_devices(
    ids: &[String],
    where_: &str,
    dev_index: &HashMap<String, usize>,
    bindings: &[Option<DeviceBinding>],
    d: &mut Diags,
) -> Vec<DeviceBinding> {
    let mut out = Vec::new();
    for (k, id) in ids.iter().enumerate() {
        match dev_index.get(id) {
            Some(&i) => {
                if let Some(b) = bindings[i] {
                    out.push(b);
                }
            }
            None => d.push(format!("{where_}.devices[{k}]"), format!("unknown device_id `{id}`")),
        }
    }
    out
}

/// Validates `file` and assembles everything a campaign needs. Returns all
/// problems found.
pub fn build_scenario(file: ScenarioFile) -> Result<Scenario, Vec<Diagnostic>> {
    let mut d = Diags::default();
    d.check(!file.name.is_empty(), "name", "must be non-empty");

    let plan = build_plan(&file.plan, &mut d);
    build_rf(&file.rf, plan.as_ref(), &mut d);

    let th = &file.thermal;
    let dt_ok = d.check(positive(th.dt_s), "thermal.dt_s", "must be > 0");
    let dt_ns = if dt_ok {
        seconds_to_ns("dt_s", th.dt_s)
            .map_err(|e| d.push("thermal.dt_s", e.to_string()))
            .ok()
            .filter(|&n| n > 0)
    } else {
        None
    };
    d.check(non_negative(th.warmup_s), "thermal.warmup_s", "must be >= 0");
    d.check(
        th.trace_interval_s == 0.0 || (th.trace_interval_s.is_finite() && th.trace_interval_s >= th.dt_s),
        "thermal.trace_interval_s",
        "must be 0 (off) or at least dt_s",
    );
    if let (Some(dt_ns), Some(p)) = (dt_ns, &plan) {
        let steps = (th.warmup_s.max(0.0) * 1e9 + p.total_duration_ns as f64) / dt_ns as f64;
        d.check(
            steps <= MAX_THERMAL_STEPS as f64,
            "thermal.dt_s",
            format!("warm-up plus campaign need {steps:e} steps, more than the {MAX_THERMAL_STEPS} supported"),
        );
    }
    let ambient = build_ambient(&th.ambient, &mut d);
    let nodes = build_nodes(th, &mut d);
    let loops = match (&nodes, &ambient, dt_ns) {
        (Some((nodes, index)), Some(amb), Some(dt_ns)) => build_loops(th, nodes, index, amb, dt_ns, &mut d),
        _ => None,
    };
    let node_index = nodes.as_ref().map(|(_, i)| i.clone()).unwrap_or_default();

    // Sensitivities.
    let mut dev_index = HashMap::new();
    let mut sensitivities = Vec::new();
    let mut bindings: Vec<Option<DeviceBinding>> = Vec::new();
    for (i, dev) in file.devices.iter().enumerate() {
        let at = |f: &str| format!("devices[{i}].{f}");
        if dev_index.insert(dev.id.clone(), i).is_some() {
            d.push(at("id"), format!("duplicate device_id `{}`", dev.id));
        }
        let node = node_index.get(dev.node_id()).copied();
        if node.is_none() && nodes.is_some() {
            d.push(at("node"), format!("device `{}` names unknown thermal node `{}`", dev.id, dev.node_id()));
        }
        match DeviceSensitivity::new(dev.id.clone(), dev.kind.into(), dev.amp_coeff, dev.phase_coeff, dev.reference_temp_c) {
            Ok(s) => sensitivities.push(s),
            Err(e) => d.push(format!("devices[{i}]"), e.to_string()),
        }
        bindings.push(node.map(|node| DeviceBinding { sensitivity: i, node }));
    }

    // LOs.
    let mut lo_index = HashMap::new();
    let mut los = Vec::new();
    for (i, lo) in file.los.iter().enumerate() {
        let at = format!("los[{i}]");
        if lo_index.insert(lo.id.clone(), i).is_some() {
            d.push(format!("{at}.id"), format!("duplicate lo id `{}`", lo.id));
        }
        d.check(positive(lo.frequency_hz), format!("{at}.frequency_hz"), "must be > 0");
        d.check(lo.phase_deg.is_finite(), format!("{at}.phase_deg"), "must be finite");
        let devices = resolve_devices(&lo.devices, &at, &dev_index, &bindings, &mut d);
        los.push(LoBinding {
            state: LoState {
                id: lo.id.clone(),
                frequency: lo.frequency_hz,
                phase: lo.phase_deg,
            },
            devices,
        });
    }

    // Signal paths.
    let mut outputs: Vec<Option<PathBinding>> = plan.as_ref().map_or(Vec::new(), |p| vec![None; p.slots() as usize]);
    let mut captures = Vec::new();
    let mut unit_los: HashMap<(u8, PortKind), (usize, Option<String>)> = HashMap::new();
    for (i, p) in file.paths.iter().enumerate() {
        let at = format!("paths[{i}]");
        let channel = ChannelId::new(p.unit, p.ch);
        let lo = match &p.lo {
            Some(id) => match lo_index.get(id) {
                Some(&k) => Some(k),
                None => {
                    d.push(format!("{at}.lo"), format!("unknown lo `{id}`"));
                    None
                }
            },
            None => None,
        };
        let path = SignalPath {
            channel,
            port: p.port,
            nco_freq: p.nco_freq_hz,
            lo: p.lo.clone(),
            devices: p.devices.clone(),
            baseline_gain: p.baseline_gain,
            baseline_phase: p.baseline_phase_deg,
        };
        if let Err(e) = path.validate() {
            d.push(at.clone(), e.to_string());
        }
        let devices = resolve_devices(&p.devices, &at, &dev_index, &bindings, &mut d);
        if matches!(p.port, PortKind::Rout | PortKind::Rin) {
            if let Some((j, other)) = unit_los.get(&(p.unit, if p.port == PortKind::Rout { PortKind::Rin } else { PortKind::Rout })) {
                if *other != p.lo {
                    d.push(format!("{at}.lo"), format!("rout and rin of unit {} must share an LO (see paths[{j}])", p.unit));
                }
            }
            unit_los.insert((p.unit, p.port), (i, p.lo.clone()));
        }
        let binding = PathBinding { path, devices, lo };
        if p.port.is_input() {
            captures.push((i, binding));
            continue;
        }
        let Some(plan) = &plan else { continue };
        if p.unit >= plan.units || p.ch >= plan.channels_per_unit {
            d.push(at, format!("channel {channel} is outside the {}x{} plan", plan.units, plan.channels_per_unit));
            continue;
        }
        let center = p.nco_freq_hz + lo.map_or(0.0, |k| file.los[k].frequency_hz);
        if center != plan.carrier_hz as f64 {
            d.push(
                format!("{at}.nco_freq_hz"),
                format!("emits at {center} Hz but the plan carrier is {} Hz", plan.carrier_hz),
            );
        }
        let slot = plan.slot_of(channel) as usize;
        if outputs[slot].is_some() {
            d.push(at, format!("channel {channel} defined twice"));
        } else {
            outputs[slot] = Some(binding);
        }
    }
    if let Some(plan) = &plan {
        for (slot, o) in outputs.iter().enumerate() {
            if o.is_none() {
                d.push("paths", format!("no output path for channel {}", plan.channel_of(slot as u64)));
            }
        }
    }
    let capture = match captures.len() {
        1 => {
            let (i, b) = captures.pop().expect("one capture");
            if b.lo.is_none() && b.path.lo.is_none() {
                d.push(format!("paths[{i}].lo"), "the capture path needs an LO");
            }
            Some(b)
        }
        0 => {
            d.push("paths", "need exactly one rin/monitor capture path, found none");
            None
        }
        n => {
            d.push("paths", format!("need exactly one rin/monitor capture path, found {n}"));
            None
        }
    };

    // Clock block.
    let units = plan.as_ref().map_or(0, |p| p.units as usize);
    let ck = &file.clock;
    if plan.is_some() && !ck.unit_offsets.is_empty() {
        d.check(
            ck.unit_offsets.len() == units,
            "clock.unit_offsets",
            format!("need one offset per unit ({units}), got {}", ck.unit_offsets.len()),
        );
    }
    for (i, o) in ck.unit_offsets.iter().enumerate() {
        d.check(
            o.is_finite() && o.abs() < MAX_FRACTIONAL_OFFSET,
            format!("clock.unit_offsets[{i}]"),
            "must satisfy |offset| < 1e-6",
        );
    }
    if plan.is_some() && !ck.reset_epochs_ns.is_empty() {
        d.check(
            ck.reset_epochs_ns.len() == units,
            "clock.reset_epochs_ns",
            format!("need one epoch per unit ({units}), got {}", ck.reset_epochs_ns.len()),
        );
    }
    let compensator = Compensator::new(ck.compensator_gain, ck.trim_step)
        .map_err(|e| d.push("clock", e.to_string()))
        .ok();
    let interval_ns = seconds_to_ns("discipline_interval_s", ck.discipline_interval_s)
        .map_err(|e| d.push("clock.discipline_interval_s", e.to_string()))
        .ok()
        .filter(|&n| {
            d.check(n > 0, "clock.discipline_interval_s", "must be > 0")
        });
    let clock_duration_ns = match ck.duration_s {
        Some(s) => seconds_to_ns("duration_s", s)
            .map_err(|e| d.push("clock.duration_s", e.to_string()))
            .ok(),
        None => plan.as_ref().map(|p| p.total_duration_ns),
    };

    if let (Some(i), Some(dur)) = (interval_ns, clock_duration_ns) {
        d.check(
            dur / i <= MAX_DISCIPLINE_STEPS,
            "clock.discipline_interval_s",
            format!("{} discipline steps exceed the {MAX_DISCIPLINE_STEPS} supported", dur / i),
        );
    }

    let cal = &file.calibration;
    d.check(non_negative(cal.amp_std_pct), "calibration.amp_std_pct", "must be >= 0");
    d.check(non_negative(cal.phase_std_deg), "calibration.phase_std_deg", "must be >= 0");

    let warmup_ns = seconds_to_ns("warmup_s", th.warmup_s.max(0.0))
        .map_err(|e| d.push("thermal.warmup_s", e.to_string()))
        .ok();

    if !d.0.is_empty() {
        return Err(d.0);
    }

    // Everything below was validated above.
    let fail = |path: &str, msg: String| {
        vec![Diagnostic {
            path: path.to_string(),
            message: msg,
        }]
    };
    let (nodes, _) = nodes.expect("validated");
    let network = ThermalNetwork::new(nodes, loops.expect("validated"), ambient.expect("validated"), dt_ns.expect("validated"))
        .map_err(|e| fail("thermal", e.to_string()))?;
    let table = SensitivityTable::new(sensitivities).map_err(|e| fail("devices", e.to_string()))?;
    let plan = plan.expect("validated");
    let clock = ClockSetup {
        units: (0..units)
            .map(|u| UnitClock {
                unit_id: u as u8,
                offset: ck.unit_offsets.get(u).copied().unwrap_or(0.0),
                reset_epoch_ns: ck.reset_epochs_ns.get(u).copied().unwrap_or(0),
            })
            .collect(),
        compensator: ck.compensate.then(|| compensator.expect("validated")),
        interval_ns: interval_ns.expect("validated"),
        duration_ns: clock_duration_ns.expect("validated"),
    };
    let setup = CampaignSetup {
        network,
        table,
        outputs: outputs.into_iter().map(|o| o.expect("validated")).collect(),
        capture: capture.expect("validated"),
        los,
        plan,
        sample_rate: file.rf.sample_rate_hz,
        noise_density: file.rf.noise_density_dbm_per_hz,
        guard_fraction: file.rf.guard_fraction,
        warmup_ns: warmup_ns.expect("validated"),
    };
    setup.validate().map_err(|e| fail("paths", e.to_string()))?;
    let hash = scenario_hash(&file);
    Ok(Scenario {
        file,
        source: None,
        hash,
        setup,
        clock,
    })
}
