//! Lumped thermal plants, quantized temperature sensing and PI/PWM loops.
//!
//! Every device (amplifier, PLL, mixer, cable run) is a first-order node
//! coupled either to room air or to another node, normally its unit's
//! enclosure. Heaters and fans are driven by PWM; only the average power
//! `duty * max_power` is modeled since the switching frequency is far above
//! the thermal bandwidth.

use rand::Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};
use thiserror::Error;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum ThermalError {
    #[error("node `{node}`: {what}")]
    InvalidNode { node: String, what: String },
    #[error("node `{node}`: dt = {dt} s exceeds the explicit-Euler limit of {max_dt} s")]
    UnstableStep { node: String, dt: f64, max_dt: f64 },
    #[error("ambient profile: {0}")]
    Ambient(String),
    #[error("sensor: {0}")]
    Sensor(String),
    #[error("loop `{id}`: {what}")]
    InvalidLoop { id: String, what: String },
    #[error("unknown node `{0}`")]
    UnknownNode(String),
}

/// Closed-loop or frozen-actuator operation of all thermal loops.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ControlMode {
    On,
    Off,
}

impl std::fmt::Display for ControlMode {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(match self {
            ControlMode::On => "on",
            ControlMode::Off => "off",
        })
    }
}

impl std::str::FromStr for ControlMode {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "on" => Ok(ControlMode::On),
            "off" => Ok(ControlMode::Off),
            other => Err(format!("control mode must be `on` or `off`, got `{other}`")),
        }
    }
}

/// First-order lumped thermal state of one device.
#[derive(Debug, Clone, PartialEq)]
pub struct ThermalNode {
    pub id: String,
    /// Current temperature in °C.
    pub temperature: f64,
    /// J/°C, strictly positive.
    pub heat_capacity: f64,
    /// Conductance to whatever the node is coupled to, W/°C, strictly positive.
    pub ambient_coupling: f64,
    /// Heater power at 100 % duty, W.
    pub heater_max_power: f64,
    /// Constant device dissipation, W.
    pub self_heating: f64,
}

impl ThermalNode {
    pub fn new(
        id: impl Into<String>,
        temperature: f64,
        heat_capacity: f64,
        ambient_coupling: f64,
        heater_max_power: f64,
        self_heating: f64,
    ) -> Result<Self, ThermalError> {
        let id = id.into();
        let bad = |what: &str| ThermalError::InvalidNode {
            node: id.clone(),
            what: what.to_string(),
        };
        if !(heat_capacity.is_finite() && heat_capacity > 0.0) {
            return Err(bad("heat_capacity must be finite and > 0"));
        }
        if !(ambient_coupling.is_finite() && ambient_coupling > 0.0) {
            return Err(bad("ambient_coupling must be finite and > 0"));
        }
        if !(heater_max_power.is_finite() && heater_max_power >= 0.0) {
            return Err(bad("heater_max_power must be finite and >= 0"));
        }
        if !self_heating.is_finite() || !temperature.is_finite() {
            return Err(bad("temperature and self_heating must be finite"));
        }
        Ok(Self {
            id,
            temperature,
            heat_capacity,
            ambient_coupling,
            heater_max_power,
            self_heating,
        })
    }

    /// τ = C / G in seconds.
    pub fn time_constant(&self) -> f64 {
        self.heat_capacity / self.ambient_coupling
    }

    /// Largest step admitted by the explicit-Euler guard.
    pub fn max_stable_dt(&self) -> f64 {
        self.time_constant()
    }

    /// Steady-state temperature for constant surroundings and heater power.
    pub fn fixed_point(&self, ambient: f64, heater_power: f64) -> f64 {
        ambient + (heater_power + self.self_heating) / self.ambient_coupling
    }

    /// In-place Euler update without the stability check; callers validate
    /// `dt` once up front.
    #[inline]
    pub(crate) fn advance(&mut self, heater_power: f64, ambient: f64, dt: f64) {
        let flow = self.ambient_coupling * (ambient - self.temperature)
            + heater_power
            + self.self_heating;
        self.temperature += dt * flow / self.heat_capacity;
    }
}

/// One explicit-Euler step of the node ODE.
pub fn step_plant(
    node: &ThermalNode,
    heater_power: f64,
    ambient: f64,
    dt: f64,
) -> Result<ThermalNode, ThermalError> {
    let max_dt = node.max_stable_dt();
    if !(dt > 0.0 && dt <= max_dt) {
        return Err(ThermalError::UnstableStep {
            node: node.id.clone(),
            dt,
            max_dt,
        });
    }
    let mut next = node.clone();
    next.advance(heater_power, ambient, dt);
    Ok(next)
}

/// Room temperature as a function of time.
#[derive(Debug, Clone, PartialEq)]
pub enum AmbientProfile {
    Sinusoid {
        mean: f64,
        amplitude: f64,
        period: f64,
    },
    /// Piecewise-linear trace of `(t_s, temp_C)` samples, held at the ends.
    Recorded { samples: Vec<(f64, f64)> },
}

impl AmbientProfile {
    pub fn sinusoid(mean: f64, amplitude: f64, period: f64) -> Result<Self, ThermalError> {
        if !mean.is_finite() {
            return Err(ThermalError::Ambient("mean must be finite".into()));
        }
        if !(amplitude.is_finite() && amplitude >= 0.0) {
            return Err(ThermalError::Ambient("amplitude must be >= 0".into()));
        }
        if !(period.is_finite() && period > 0.0) {
            return Err(ThermalError::Ambient("period must be > 0".into()));
        }
        Ok(AmbientProfile::Sinusoid {
            mean,
            amplitude,
            period,
        })
    }

    pub fn recorded(samples: Vec<(f64, f64)>) -> Result<Self, ThermalError> {
        if samples.len() < 2 {
            return Err(ThermalError::Ambient(format!(
                "recorded trace needs at least 2 samples, got {}",
                samples.len()
            )));
        }
        if samples.iter().any(|(t, v)| !t.is_finite() || !v.is_finite()) {
            return Err(ThermalError::Ambient("recorded trace has non-finite values".into()));
        }
        if samples.windows(2).any(|w| w[1].0 <= w[0].0) {
            return Err(ThermalError::Ambient(
                "recorded trace timestamps must be strictly increasing".into(),
            ));
        }
        Ok(AmbientProfile::Recorded { samples })
    }

    /// Temperature at time `t` (seconds since campaign start).
    pub fn at(&self, t: f64) -> f64 {
        match self {
            AmbientProfile::Sinusoid {
                mean,
                amplitude,
                period,
            } => mean + amplitude * (std::f64::consts::TAU * t / period).sin(),
            AmbientProfile::Recorded { samples } => {
                let (t0, v0) = samples[0];
                let (tn, vn) = samples[samples.len() - 1];
                if t <= t0 {
                    return v0;
                }
                if t >= tn {
                    return vn;
                }
                let idx = samples.partition_point(|(ts, _)| *ts <= t);
                let (ta, va) = samples[idx - 1];
                let (tb, vb) = samples[idx];
                va + (vb - va) * (t - ta) / (tb - ta)
            }
        }
    }

    /// Lowest and highest value the profile can take.
    pub fn bounds(&self) -> (f64, f64) {
        match self {
            AmbientProfile::Sinusoid {
                mean, amplitude, ..
            } => (mean - amplitude, mean + amplitude),
            AmbientProfile::Recorded { samples } => samples
                .iter()
                .fold((f64::INFINITY, f64::NEG_INFINITY), |(lo, hi), (_, v)| {
                    (lo.min(*v), hi.max(*v))
                }),
        }
    }
}

/// Thermistor + ADC front end.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SensorModel {
    #[serde(default = "SensorModel::default_bits")]
    pub adc_bits: u32,
    #[serde(default)]
    pub full_scale_low: f64,
    #[serde(default = "SensorModel::default_high")]
    pub full_scale_high: f64,
    #[serde(default)]
    pub noise_sigma: f64,
}

impl Default for SensorModel {
    fn default() -> Self {
        Self {
            adc_bits: 12,
            full_scale_low: 0.0,
            full_scale_high: 100.0,
            noise_sigma: 0.0,
        }
    }
}

impl SensorModel {
    fn default_bits() -> u32 {
        12
    }

    fn default_high() -> f64 {
        100.0
    }

    pub fn validate(&self) -> Result<(), ThermalError> {
        if !(1..=24).contains(&self.adc_bits) {
            return Err(ThermalError::Sensor(format!(
                "adc_bits must be in 1..=24, got {}",
                self.adc_bits
            )));
        }
        if !(self.full_scale_low.is_finite()
            && self.full_scale_high.is_finite()
            && self.full_scale_low < self.full_scale_high)
        {
            return Err(ThermalError::Sensor(
                "full_scale_low must be below full_scale_high".into(),
            ));
        }
        if !(self.noise_sigma.is_finite() && self.noise_sigma >= 0.0) {
            return Err(ThermalError::Sensor("noise_sigma must be >= 0".into()));
        }
        Ok(())
    }

    pub fn levels(&self) -> u64 {
        1u64 << self.adc_bits
    }

    /// Code spacing; the two range ends are themselves codes.
    pub fn lsb(&self) -> f64 {
        (self.full_scale_high - self.full_scale_low) / (self.levels() - 1) as f64
    }

    pub fn code(&self, temp: f64) -> u64 {
        let max_code = self.levels() - 1;
        let raw = ((temp - self.full_scale_low) / self.lsb()).round();
        if raw.is_nan() || raw <= 0.0 {
            0
        } else if raw >= max_code as f64 {
            max_code
        } else {
            raw as u64
        }
    }

    pub fn code_value(&self, code: u64) -> f64 {
        self.full_scale_low + code as f64 * self.lsb()
    }

    pub fn quantize(&self, temp: f64) -> f64 {
        self.code_value(self.code(temp))
    }

    /// Reading for `true_temp` given one unit-normal draw.
    pub fn sense(&self, true_temp: f64, unit_normal: f64) -> f64 {
        self.quantize(true_temp + self.noise_sigma * unit_normal)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Polarity {
    /// More duty raises the temperature (heater).
    Heating,
    /// More duty lowers the temperature (fan).
    Cooling,
}

/// Proportional-integral compensator with clamped output and conditional
/// integration.
#[derive(Debug, Clone, PartialEq)]
pub struct PiLoop {
    pub kp: f64,
    pub ki: f64,
    pub setpoint: f64,
    /// Accumulated error, °C·s.
    pub integral: f64,
    pub duty_min: f64,
    pub duty_max: f64,
    pub polarity: Polarity,
}

impl PiLoop {
    pub fn new(
        kp: f64,
        ki: f64,
        setpoint: f64,
        duty_min: f64,
        duty_max: f64,
        polarity: Polarity,
    ) -> Result<Self, String> {
        if !(kp.is_finite() && kp >= 0.0 && ki.is_finite() && ki >= 0.0) {
            return Err("gains must be finite and >= 0".into());
        }
        if !setpoint.is_finite() {
            return Err("setpoint must be finite".into());
        }
        if !(0.0..=1.0).contains(&duty_min) || !(0.0..=1.0).contains(&duty_max) || duty_min > duty_max
        {
            return Err(format!(
                "duty limits must satisfy 0 <= duty_min <= duty_max <= 1, got [{duty_min}, {duty_max}]"
            ));
        }
        Ok(Self {
            kp,
            ki,
            setpoint,
            integral: 0.0,
            duty_min,
            duty_max,
            polarity,
        })
    }

    /// Gains for a first-order plant with static gain `plant_gain` (°C per
    /// unit duty) and time constant `tau`, placing the closed-loop pole at
    /// `1/lambda` (lambda / IMC rule).
    pub fn lambda_gains(plant_gain: f64, tau: f64, lambda: f64) -> (f64, f64) {
        let kp = tau / (plant_gain.abs() * lambda);
        (kp, kp / tau)
    }

    pub fn error(&self, measured: f64) -> f64 {
        match self.polarity {
            Polarity::Heating => self.setpoint - measured,
            Polarity::Cooling => measured - self.setpoint,
        }
    }

    /// Presets the integrator so the loop starts out emitting `duty`.
    pub fn preload(&mut self, duty: f64) {
        if self.ki > 0.0 {
            self.integral = duty.clamp(self.duty_min, self.duty_max) / self.ki;
        }
    }

    /// Advances the controller by `dt` and returns the clamped duty.
    pub fn update(&mut self, measured: f64, dt: f64) -> f64 {
        let error = self.error(measured);
        let raw = self.kp * error + self.ki * self.integral;
        let duty = raw.clamp(self.duty_min, self.duty_max);
        let pushing_high = raw > self.duty_max && error > 0.0;
        let pushing_low = raw < self.duty_min && error < 0.0;
        if !(pushing_high || pushing_low) {
            self.integral += error * dt;
            if self.ki > 0.0 {
                let bound = self.duty_max / self.ki;
                self.integral = self.integral.clamp(-bound, bound);
            }
        }
        duty
    }
}

/// Functional form of [`PiLoop::update`].
pub fn pi_update(pi: &PiLoop, measured: f64, dt: f64) -> (PiLoop, f64) {
    let mut next = pi.clone();
    let duty = next.update(measured, dt);
    (next, duty)
}

/// Enclosure fan: airflow raises the enclosure-to-room conductance.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct FanModel {
    pub base_coupling: f64,
    pub fan_gain: f64,
}

impl FanModel {
    pub fn coupling(&self, duty: f64) -> f64 {
        self.base_coupling * (1.0 + self.fan_gain * duty)
    }

    pub fn max_coupling(&self) -> f64 {
        self.coupling(1.0)
    }
}

/// Returns the enclosure with its conductance set for fan `duty`.
pub fn apply_fan(fan: &FanModel, duty: f64, enclosure: &ThermalNode) -> ThermalNode {
    let mut next = enclosure.clone();
    next.ambient_coupling = fan.coupling(duty);
    next
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum CouplingTarget {
    Room,
    Node(usize),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Actuator {
    Heater,
    Fan,
}

#[derive(Debug, Clone)]
pub struct NetworkNode {
    pub node: ThermalNode,
    pub target: CouplingTarget,
    pub fan: Option<FanModel>,
}

#[derive(Debug, Clone)]
pub struct ControlLoop {
    pub id: String,
    pub node: usize,
    pub actuator: Actuator,
    pub pi: PiLoop,
    pub sensor: SensorModel,
    /// Duty held while control is off.
    pub off_duty: f64,
    pub duty: f64,
}

/// Nodes, their couplings and the loops acting on them, stepped at a fixed
/// `dt` on an integer-nanosecond clock.
#[derive(Debug, Clone)]
pub struct ThermalNetwork {
    nodes: Vec<NetworkNode>,
    loops: Vec<ControlLoop>,
    ambient: AmbientProfile,
    dt_ns: u64,
    time_ns: u64,
    // scratch, reused on every step
    prev: Vec<f64>,
    heater_power: Vec<f64>,
    fan_duty: Vec<f64>,
}

impl ThermalNetwork {
    pub fn new(
        nodes: Vec<NetworkNode>,
        loops: Vec<ControlLoop>,
        ambient: AmbientProfile,
        dt_ns: u64,
    ) -> Result<Self, ThermalError> {
        let dt = dt_ns as f64 * 1e-9;
        if dt_ns == 0 {
            return Err(ThermalError::UnstableStep {
                node: "<network>".into(),
                dt,
                max_dt: f64::NAN,
            });
        }
        for (i, n) in nodes.iter().enumerate() {
            let coupling = n.fan.map_or(n.node.ambient_coupling, |f| f.max_coupling());
            let max_dt = n.node.heat_capacity / coupling;
            if dt > max_dt {
                return Err(ThermalError::UnstableStep {
                    node: n.node.id.clone(),
                    dt,
                    max_dt,
                });
            }
            if let CouplingTarget::Node(j) = n.target {
                if j >= nodes.len() || j == i {
                    return Err(ThermalError::InvalidNode {
                        node: n.node.id.clone(),
                        what: "coupling target must be another node".into(),
                    });
                }
            }
        }
        for l in &loops {
            if l.node >= nodes.len() {
                return Err(ThermalError::InvalidLoop {
                    id: l.id.clone(),
                    what: "bound node index out of range".into(),
                });
            }
            if l.actuator == Actuator::Fan && nodes[l.node].fan.is_none() {
                return Err(ThermalError::InvalidLoop {
                    id: l.id.clone(),
                    what: format!("node `{}` has no fan", nodes[l.node].node.id),
                });
            }
            l.sensor.validate()?;
        }
        let n = nodes.len();
        Ok(Self {
            nodes,
            loops,
            ambient,
            dt_ns,
            time_ns: 0,
            prev: vec![0.0; n],
            heater_power: vec![0.0; n],
            fan_duty: vec![0.0; n],
        })
    }

    pub fn nodes(&self) -> &[NetworkNode] {
        &self.nodes
    }

    pub fn loops(&self) -> &[ControlLoop] {
        &self.loops
    }

    pub fn ambient(&self) -> &AmbientProfile {
        &self.ambient
    }

    pub fn node_index(&self, id: &str) -> Option<usize> {
        self.nodes.iter().position(|n| n.node.id == id)
    }

    pub fn temperature(&self, idx: usize) -> f64 {
        self.nodes[idx].node.temperature
    }

    pub fn temperatures(&self) -> impl Iterator<Item = f64> + '_ {
        self.nodes.iter().map(|n| n.node.temperature)
    }

    pub fn time_ns(&self) -> u64 {
        self.time_ns
    }

    pub fn dt(&self) -> f64 {
        self.dt_ns as f64 * 1e-9
    }

    /// Duty currently applied to each node's actuator (None if unactuated).
    pub fn node_duties(&self) -> Vec<Option<f64>> {
        let mut out = vec![None; self.nodes.len()];
        for l in &self.loops {
            out[l.node] = Some(l.duty);
        }
        out
    }

    /// Places every node at its equilibrium for constant room temperature
    /// `room` with all actuators at their off duty, and preloads the PI
    /// integrators for a bumpless start.
    pub fn initialize_steady(&mut self, room: f64) {
        let mut heater = vec![0.0; self.nodes.len()];
        let mut fan = vec![0.0; self.nodes.len()];
        for l in self.loops.iter_mut() {
            l.duty = l.off_duty;
            l.pi.preload(l.off_duty);
            match l.actuator {
                Actuator::Heater => heater[l.node] += l.off_duty * self.nodes[l.node].node.heater_max_power,
                Actuator::Fan => fan[l.node] = l.off_duty,
            }
        }
        // Couplings form a forest rooted at the room; resolve parents first.
        let mut done = vec![false; self.nodes.len()];
        for _ in 0..self.nodes.len() {
            for i in 0..self.nodes.len() {
                if done[i] {
                    continue;
                }
                let amb = match self.nodes[i].target {
                    CouplingTarget::Room => Some(room),
                    CouplingTarget::Node(j) if done[j] => Some(self.nodes[j].node.temperature),
                    CouplingTarget::Node(_) => None,
                };
                if let Some(amb) = amb {
                    let n = &mut self.nodes[i];
                    let g = n.fan.map_or(n.node.ambient_coupling, |f| f.coupling(fan[i]));
                    n.node.temperature = amb + (heater[i] + n.node.self_heating) / g;
                    done[i] = true;
                }
            }
        }
    }

    /// One `dt` step. `hold_ambient` pins room temperature to that value
    /// instead of the profile (used for warm-up before the campaign clock).
    pub fn step<R: Rng + ?Sized>(&mut self, mode: ControlMode, rng: &mut R, hold_ambient: Option<f64>) {
        let dt = self.dt();
        let room = hold_ambient.unwrap_or_else(|| self.ambient.at(self.time_ns as f64 * 1e-9));

        self.heater_power.iter_mut().for_each(|p| *p = 0.0);
        self.fan_duty.iter_mut().for_each(|d| *d = 0.0);
        for l in self.loops.iter_mut() {
            let draw: f64 = rng.sample(StandardNormal);
            let node = &self.nodes[l.node].node;
            let measured = l.sensor.sense(node.temperature, draw);
            l.duty = match mode {
                ControlMode::On => l.pi.update(measured, dt),
                ControlMode::Off => l.off_duty,
            };
            match l.actuator {
                Actuator::Heater => self.heater_power[l.node] += l.duty * node.heater_max_power,
                Actuator::Fan => self.fan_duty[l.node] = l.duty,
            }
        }

        for (p, n) in self.prev.iter_mut().zip(&self.nodes) {
            *p = n.node.temperature;
        }
        for (i, n) in self.nodes.iter_mut().enumerate() {
            let amb = match n.target {
                CouplingTarget::Room => room,
                CouplingTarget::Node(j) => self.prev[j],
            };
            if let Some(fan) = n.fan {
                n.node.ambient_coupling = fan.coupling(self.fan_duty[i]);
            }
            n.node.advance(self.heater_power[i], amb, dt);
        }
        if hold_ambient.is_none() {
            self.time_ns += self.dt_ns;
        }
    }

    /// Steps until the network clock reaches `t_ns` (never overshooting by a
    /// full step). Calls `on_step` after every step.
    pub fn advance_to<R: Rng + ?Sized>(
        &mut self,
        t_ns: u64,
        mode: ControlMode,
        rng: &mut R,
        mut on_step: impl FnMut(&Self),
    ) {
        while self.time_ns + self.dt_ns <= t_ns {
            self.step(mode, rng, None);
            on_step(self);
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn node(c: f64, g: f64, heater: f64, self_heat: f64, t0: f64) -> ThermalNode {
        ThermalNode::new("n", t0, c, g, heater, self_heat).unwrap()
    }

    #[test]
    fn ambient_examples() {
        let flat = AmbientProfile::sinusoid(26.0, 0.0, 1234.0).unwrap();
        assert_eq!(flat.at(1000.0), 26.0);
        let quarter = AmbientProfile::sinusoid(26.0, 1.0, 1800.0).unwrap();
        assert!((quarter.at(450.0) - 27.0).abs() < 1e-12);
        let p = AmbientProfile::sinusoid(26.0, 1.5, 2400.0).unwrap();
        // reference: 600 s is a quarter of 2400 s
        let oracle = 26.0 + 1.5 * (2.0 * std::f64::consts::PI * 0.25).sin();
        assert!((p.at(600.0) - oracle).abs() < 1e-12);
        assert!((p.at(600.0 + 2400.0 * 7.0) - p.at(600.0)).abs() < 1e-9);
    }

    #[test]
    fn recorded_trace_interpolates_and_clamps() {
        let p = AmbientProfile::recorded(vec![(0.0, 20.0), (10.0, 30.0), (20.0, 10.0)]).unwrap();
        assert_eq!(p.at(-5.0), 20.0);
        assert_eq!(p.at(5.0), 25.0);
        assert_eq!(p.at(15.0), 20.0);
        assert_eq!(p.at(99.0), 10.0);
        assert!(AmbientProfile::recorded(vec![(0.0, 1.0)]).is_err());
        assert!(AmbientProfile::recorded(vec![(1.0, 1.0), (1.0, 2.0)]).is_err());
    }

    #[test]
    fn plant_fixed_point_is_stationary() {
        let n = node(50.0, 0.5, 4.0, 1.0, 0.0);
        let t_star = n.fixed_point(25.0, 2.0);
        let mut at_star = n.clone();
        at_star.temperature = t_star;
        let next = step_plant(&at_star, 2.0, 25.0, 7.3).unwrap();
        assert!((next.temperature - t_star).abs() < 1e-12);
    }

    #[test]
    fn plant_matches_exponential_step_response() {
        let n = node(100.0, 1.0, 10.0, 0.0, 20.0);
        let tau = n.time_constant();
        let dt = tau / 2000.0;
        let mut cur = n.clone();
        let p = 5.0;
        let steps = 6000;
        for _ in 0..steps {
            cur = step_plant(&cur, p, 20.0, dt).unwrap();
        }
        let t = steps as f64 * dt;
        let rise = p / n.ambient_coupling;
        let analytic = 20.0 + rise * (1.0 - (-t / tau).exp());
        assert!(((cur.temperature - 20.0) - (analytic - 20.0)).abs() / rise < 0.01);
    }

    #[test]
    fn plant_self_heating_offset() {
        let n = node(10.0, 0.2, 0.0, 0.6, 30.0);
        let mut cur = n.clone();
        for _ in 0..200_000 {
            cur = step_plant(&cur, 0.0, 30.0, 0.5).unwrap();
        }
        assert!((cur.temperature - (30.0 + 0.6 / 0.2)).abs() < 1e-6);
    }

    #[test]
    fn plant_rejects_unstable_dt() {
        let n = node(10.0, 2.0, 0.0, 0.0, 0.0);
        match step_plant(&n, 0.0, 0.0, 6.0) {
            Err(ThermalError::UnstableStep { max_dt, .. }) => assert_eq!(max_dt, 5.0),
            other => panic!("expected unstable step, got {other:?}"),
        }
        assert!(step_plant(&n, 0.0, 0.0, 0.0).is_err());
        assert!(ThermalNode::new("x", 0.0, 0.0, 1.0, 0.0, 0.0).is_err());
        assert!(ThermalNode::new("x", 0.0, 1.0, -1.0, 0.0, 0.0).is_err());
    }

    #[test]
    fn sensor_quantization() {
        let s = SensorModel::default();
        assert_eq!(s.levels(), 4096);
        assert!((s.lsb() - 0.02442).abs() < 1e-4);
        let center = s.code_value(1843);
        assert_eq!(s.sense(center, 0.0), center);
        // brute-force nearest code for 45.013
        let best = (0..s.levels())
            .map(|c| s.code_value(c))
            .min_by(|a, b| (a - 45.013).abs().total_cmp(&(b - 45.013).abs()))
            .unwrap();
        assert_eq!(s.sense(45.013, 0.0), best);
        for i in 0..1000 {
            let t = i as f64 * 0.0997;
            assert!((s.sense(t, 0.0) - t).abs() <= s.lsb() / 2.0 + 1e-12);
        }
        assert_eq!(s.sense(-5.0, 0.0), 0.0);
        assert_eq!(s.sense(150.0, 0.0), 100.0);
    }

    #[test]
    fn pi_examples() {
        let pi = PiLoop::new(0.1, 0.0, 50.0, 0.0, 1.0, Polarity::Heating).unwrap();
        let (_, duty) = pi_update(&pi, 50.0, 0.1);
        assert_eq!(duty, 0.0);
        let (_, duty) = pi_update(&pi, 48.0, 0.1);
        assert!((duty - 0.2).abs() < 1e-12);
        let fan = PiLoop::new(0.5, 0.0, 30.0, 0.0, 1.0, Polarity::Cooling).unwrap();
        let (_, duty) = pi_update(&fan, 31.0, 0.1);
        assert!((duty - 0.5).abs() < 1e-12);
    }

    #[test]
    fn pi_integral_halts_when_saturated() {
        let mut pi = PiLoop::new(1.0, 0.1, 50.0, 0.0, 1.0, Polarity::Heating).unwrap();
        for _ in 0..10_000 {
            let d = pi.update(0.0, 1.0);
            assert_eq!(d, 1.0);
        }
        assert!(pi.integral.abs() <= 1.0 / 0.1 + 1e-12);
        // recovers promptly after the error reverses
        let d = pi.update(60.0, 1.0);
        assert!(d < 1.0);
    }

    #[test]
    fn closed_loop_removes_steady_state_error() {
        let mut plant = node(30.0, 0.3, 5.0, 0.6, 30.0);
        let (kp, ki) = PiLoop::lambda_gains(5.0 / 0.3, plant.time_constant(), 30.0);
        let mut pi = PiLoop::new(kp, ki, 42.0, 0.0, 1.0, Polarity::Heating).unwrap();
        let sensor = SensorModel { noise_sigma: 0.02, ..SensorModel::default() };
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let dt = 0.1;
        let mut worst_after = 0.0f64;
        for step in 0..60_000 {
            let m = sensor.sense(plant.temperature, rng.sample(StandardNormal));
            let duty = pi.update(m, dt);
            plant = step_plant(&plant, duty * plant.heater_max_power, 28.0, dt).unwrap();
            if step > 30_000 {
                worst_after = worst_after.max((plant.temperature - 42.0).abs());
            }
        }
        assert!(worst_after < 0.01, "worst deviation {worst_after}");
    }

    #[test]
    fn fan_scales_coupling() {
        let enc = node(1000.0, 4.0, 0.0, 40.0, 30.0);
        let fan = FanModel { base_coupling: 4.0, fan_gain: 2.0 };
        assert_eq!(apply_fan(&fan, 0.0, &enc).ambient_coupling, 4.0);
        assert_eq!(apply_fan(&fan, 1.0, &enc).ambient_coupling, 12.0);
    }

    fn enclosure_network(fan_loop: bool) -> ThermalNetwork {
        let enc = ThermalNode::new("enc", 25.0, 4000.0, 4.0, 0.0, 40.0).unwrap();
        let nodes = vec![NetworkNode {
            node: enc,
            target: CouplingTarget::Room,
            fan: Some(FanModel { base_coupling: 4.0, fan_gain: 2.0 }),
        }];
        let mut pi = PiLoop::new(0.4, 0.0008, 32.0, 0.0, 1.0, Polarity::Cooling).unwrap();
        if !fan_loop {
            pi.kp = 0.0;
            pi.ki = 0.0;
        }
        let loops = vec![ControlLoop {
            id: "fan".into(),
            node: 0,
            actuator: Actuator::Fan,
            pi,
            sensor: SensorModel::default(),
            off_duty: 0.4,
            duty: 0.4,
        }];
        let amb = AmbientProfile::sinusoid(24.0, 1.5, 1800.0).unwrap();
        ThermalNetwork::new(nodes, loops, amb, 100_000_000).unwrap()
    }

    fn variance_over(net: &mut ThermalNetwork, mode: ControlMode, hours: u64) -> f64 {
        let mut rng = ChaCha8Rng::seed_from_u64(9);
        net.initialize_steady(24.0);
        let mut start = 0u64;
        net.advance_to(3600 * 1_000_000_000, mode, &mut rng, |_| {});
        let mut xs = Vec::new();
        start += 3600;
        net.advance_to((start + hours * 3600) * 1_000_000_000, mode, &mut rng, |n| {
            xs.push(n.temperature(0))
        });
        let m = xs.iter().sum::<f64>() / xs.len() as f64;
        xs.iter().map(|x| (x - m).powi(2)).sum::<f64>() / xs.len() as f64
    }

    #[test]
    fn fan_loop_reduces_enclosure_variance() {
        let mut closed = enclosure_network(true);
        let mut frozen = enclosure_network(false);
        let v_closed = variance_over(&mut closed, ControlMode::On, 2);
        let v_frozen = variance_over(&mut frozen, ControlMode::On, 2);
        assert!(v_closed < v_frozen, "{v_closed} vs {v_frozen}");
    }

    #[test]
    fn network_is_deterministic() {
        let run = || {
            let mut net = enclosure_network(true);
            let mut rng = ChaCha8Rng::seed_from_u64(42);
            net.initialize_steady(24.0);
            let mut trace = Vec::new();
            net.advance_to(600 * 1_000_000_000, ControlMode::On, &mut rng, |n| {
                trace.push(n.temperature(0).to_bits())
            });
            trace
        };
        assert_eq!(run(), run());
    }

    #[test]
    fn network_rejects_unstable_fan_coupling() {
        let enc = ThermalNode::new("enc", 25.0, 1.0, 4.0, 0.0, 0.0).unwrap();
        let nodes = vec![NetworkNode {
            node: enc,
            target: CouplingTarget::Room,
            fan: Some(FanModel { base_coupling: 4.0, fan_gain: 2.0 }),
        }];
        let amb = AmbientProfile::sinusoid(24.0, 1.0, 100.0).unwrap();
        assert!(matches!(
            ThermalNetwork::new(nodes, vec![], amb, 100_000_000),
            Err(ThermalError::UnstableStep { .. })
        ));
    }
}
