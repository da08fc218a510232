//! Per-channel stability metrics: normalized amplitude, unwrapped phase,
//! peak-to-peak and population standard deviation.

use std::fmt::Write as _;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::rfchain::ChannelId;
use crate::schedule::PulseRecord;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum AnalysisError {
    #[error("channel {channel}: {what}")]
    Series { channel: ChannelId, what: String },
    #[error("channel {0}: mean amplitude is zero, cannot normalize")]
    ZeroMean(ChannelId),
    #[error("channel {channel}: need at least 2 records, got {got}")]
    TooShort { channel: ChannelId, got: usize },
    #[error("no channels to summarize")]
    Empty,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ChannelSeries {
    pub channel: ChannelId,
    /// Seconds, strictly increasing.
    pub timestamps: Vec<f64>,
    pub amplitudes: Vec<f64>,
    /// Degrees, unwrapped.
    pub phases: Vec<f64>,
}

impl ChannelSeries {
    pub fn new(
        channel: ChannelId,
        timestamps: Vec<f64>,
        amplitudes: Vec<f64>,
        phases: Vec<f64>,
    ) -> Result<Self, AnalysisError> {
        let bad = |what: &str| AnalysisError::Series {
            channel,
            what: what.to_string(),
        };
        if timestamps.len() != amplitudes.len() || timestamps.len() != phases.len() {
            return Err(bad("timestamps, amplitudes and phases differ in length"));
        }
        if timestamps.windows(2).any(|w| w[1] <= w[0]) {
            return Err(bad("timestamps must be strictly increasing"));
        }
        Ok(Self {
            channel,
            timestamps,
            amplitudes,
            phases,
        })
    }

    /// Builds the series of one channel from its pulse records, unwrapping
    /// the captured phases.
    pub fn from_records(channel: ChannelId, records: &[PulseRecord]) -> Result<Self, AnalysisError> {
        let raw: Vec<f64> = records.iter().map(|r| r.mean_phase).collect();
        Self::new(
            channel,
            records.iter().map(|r| r.timestamp()).collect(),
            records.iter().map(|r| r.mean_amplitude).collect(),
            unwrap_phase(&raw),
        )
    }

    pub fn len(&self) -> usize {
        self.timestamps.len()
    }

    pub fn is_empty(&self) -> bool {
        self.timestamps.is_empty()
    }

    /// Phases relative to the first record.
    pub fn relative_phases(&self) -> Vec<f64> {
        let first = self.phases.first().copied().unwrap_or(0.0);
        self.phases.iter().map(|p| p - first).collect()
    }
}

fn mean(xs: &[f64]) -> f64 {
    xs.iter().sum::<f64>() / xs.len() as f64
}

/// Population (1/N) standard deviation.
fn pop_std(xs: &[f64]) -> f64 {
    let m = mean(xs);
    (xs.iter().map(|x| (x - m) * (x - m)).sum::<f64>() / xs.len() as f64).sqrt()
}

fn peak_to_peak(xs: &[f64]) -> f64 {
    let (lo, hi) = xs
        .iter()
        .fold((f64::INFINITY, f64::NEG_INFINITY), |(lo, hi), &x| (lo.min(x), hi.max(x)));
    hi - lo
}

/// Divides amplitudes by their own mean.
pub fn normalize_amplitude(series: &ChannelSeries) -> Result<ChannelSeries, AnalysisError> {
    if series.is_empty() {
        return Err(AnalysisError::TooShort {
            channel: series.channel,
            got: 0,
        });
    }
    let m = mean(&series.amplitudes);
    if m == 0.0 || !m.is_finite() {
        return Err(AnalysisError::ZeroMean(series.channel));
    }
    Ok(ChannelSeries {
        amplitudes: series.amplitudes.iter().map(|a| a / m).collect(),
        ..series.clone()
    })
}

/// Adds multiples of 360° so consecutive differences lie in (-180, 180].
pub fn unwrap_phase(raw: &[f64]) -> Vec<f64> {
    let mut out = Vec::with_capacity(raw.len());
    let Some(&first) = raw.first() else {
        return out;
    };
    out.push(first);
    let mut prev_raw = first;
    let mut acc = first;
    for &p in &raw[1..] {
        let mut d = (p - prev_raw).rem_euclid(360.0);
        if d > 180.0 {
            d -= 360.0;
        }
        acc += d;
        out.push(acc);
        prev_raw = p;
    }
    out
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct StabilityStats {
    pub unit: u8,
    pub channel: u8,
    pub amp_p2p_pct: f64,
    pub amp_std_pct: f64,
    pub phase_p2p_deg: f64,
    pub phase_std_deg: f64,
}

impl StabilityStats {
    pub fn channel_id(&self) -> ChannelId {
        ChannelId::new(self.unit, self.channel)
    }
}

pub fn compute_stats(series: &ChannelSeries) -> Result<StabilityStats, AnalysisError> {
    if series.len() < 2 {
        return Err(AnalysisError::TooShort {
            channel: series.channel,
            got: series.len(),
        });
    }
    let norm = normalize_amplitude(series)?;
    let phases = series.relative_phases();
    Ok(StabilityStats {
        unit: series.channel.unit,
        channel: series.channel.ch,
        amp_p2p_pct: peak_to_peak(&norm.amplitudes) * 100.0,
        amp_std_pct: pop_std(&norm.amplitudes) * 100.0,
        phase_p2p_deg: peak_to_peak(&phases),
        phase_std_deg: pop_std(&phases),
    })
}

const fn ref_row(unit: u8, channel: u8, ap: f64, as_: f64, pp: f64, ps: f64) -> StabilityStats {
    StabilityStats {
        unit,
        channel,
        amp_p2p_pct: ap,
        amp_std_pct: as_,
        phase_p2p_deg: pp,
        phase_std_deg: ps,
    }
}

/// Measured 24 h statistics of the reference hardware, with thermal
/// control on. Used as calibration targets for the default scenario.
pub const REFERENCE_STATS: [StabilityStats; 15] = [
    ref_row(0, 0, 0.50, 0.092, 3.1, 0.43),
    ref_row(0, 1, 0.58, 0.110, 2.5, 0.37),
    ref_row(0, 2, 0.78, 0.150, 2.6, 0.36),
    ref_row(0, 3, 1.10, 0.220, 2.7, 0.35),
    ref_row(0, 4, 0.72, 0.140, 2.6, 0.36),
    ref_row(1, 0, 0.50, 0.098, 3.0, 0.44),
    ref_row(1, 1, 0.60, 0.130, 2.7, 0.40),
    ref_row(1, 2, 0.89, 0.150, 2.8, 0.42),
    ref_row(1, 3, 0.47, 0.090, 3.0, 0.41),
    ref_row(1, 4, 0.78, 0.150, 3.0, 0.40),
    ref_row(2, 0, 0.81, 0.180, 3.1, 0.41),
    ref_row(2, 1, 0.62, 0.140, 2.8, 0.37),
    ref_row(2, 2, 1.10, 0.220, 2.9, 0.37),
    ref_row(2, 3, 0.69, 0.150, 2.8, 0.37),
    ref_row(2, 4, 0.87, 0.190, 2.6, 0.36),
];

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Spread {
    pub min: f64,
    pub max: f64,
    pub mean: f64,
}

impl Spread {
    fn of(values: impl Iterator<Item = f64>) -> Spread {
        let mut n = 0usize;
        let mut sum = 0.0;
        let mut min = f64::INFINITY;
        let mut max = f64::NEG_INFINITY;
        for v in values {
            n += 1;
            sum += v;
            min = min.min(v);
            max = max.max(v);
        }
        Spread {
            min,
            max,
            mean: sum / n as f64,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct StatsSummary {
    pub channels: usize,
    pub amp_p2p_pct: Spread,
    pub amp_std_pct: Spread,
    pub phase_p2p_deg: Spread,
    pub phase_std_deg: Spread,
}

impl StatsSummary {
    /// One-line digest of the standard deviations across channels.
    pub fn headline(&self) -> String {
        format!(
            "across {} channels: amplitude std {:.2}-{:.2} % (mean {:.2} %), phase std {:.2}-{:.2} deg (mean {:.2} deg)",
            self.channels,
            self.amp_std_pct.min,
            self.amp_std_pct.max,
            self.amp_std_pct.mean,
            self.phase_std_deg.min,
            self.phase_std_deg.max,
            self.phase_std_deg.mean,
        )
    }
}

pub fn summarize(stats: &[StabilityStats]) -> Result<StatsSummary, AnalysisError> {
    if stats.is_empty() {
        return Err(AnalysisError::Empty);
    }
    Ok(StatsSummary {
        channels: stats.len(),
        amp_p2p_pct: Spread::of(stats.iter().map(|s| s.amp_p2p_pct)),
        amp_std_pct: Spread::of(stats.iter().map(|s| s.amp_std_pct)),
        phase_p2p_deg: Spread::of(stats.iter().map(|s| s.phase_p2p_deg)),
        phase_std_deg: Spread::of(stats.iter().map(|s| s.phase_std_deg)),
    })
}

/// Aligned-text rendering of a per-channel stats table.
pub fn render_table(stats: &[StabilityStats]) -> String {
    let mut out = String::new();
    let _ = writeln!(
        out,
        "{:>4} {:>7} {:>12} {:>12} {:>14} {:>14}",
        "Unit", "Channel", "Amp p2p (%)", "Amp std (%)", "Phase p2p (deg)", "Phase std (deg)"
    );
    for s in stats {
        let _ = writeln!(
            out,
            "{:>4} {:>7} {:>12.3} {:>12.4} {:>14.3} {:>14.4}",
            s.unit, s.channel, s.amp_p2p_pct, s.amp_std_pct, s.phase_p2p_deg, s.phase_std_deg
        );
    }
    out
}
