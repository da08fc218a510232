//! CSV formats written and read by the subcommands.

use std::fs::File;
use std::io::{BufWriter, Write};
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::analysis::{normalize_amplitude, ChannelSeries, StabilityStats};
use crate::campaign::ThermalSample;
use crate::clocktree::SkewSample;
use crate::fidelity::infidelity_from_stats;
use crate::rfchain::{ChannelId, ComplexEnvelope};
use crate::schedule::{PulseRecord, NS_PER_S};

pub const CAMPAIGN_CSV: &str = "campaign.csv";
pub const STATS_CSV: &str = "stats.csv";
pub const STATS_TXT: &str = "stats.txt";
pub const INFIDELITY_CSV: &str = "infidelity.csv";
pub const THERMAL_CSV: &str = "thermal.csv";
pub const PLOT_CSV: &str = "plot.csv";
pub const ENVELOPES_CSV: &str = "envelopes.csv";

pub type IoResult<T> = Result<T, String>;

fn create(path: &Path) -> IoResult<csv::Writer<BufWriter<File>>> {
    let f = File::create(path).map_err(|e| format!("cannot create {}: {e}", path.display()))?;
    Ok(csv::Writer::from_writer(BufWriter::new(f)))
}

fn ctx(path: &Path) -> impl Fn(csv::Error) -> String + '_ {
    move |e| format!("{}: {e}", path.display())
}

#[derive(Debug, Serialize)]
struct CampaignRow {
    unit: u8,
    channel: u8,
    round: u64,
    t_s: f64,
    amp: f64,
    phase_deg: f64,
}

pub fn write_campaign(path: &Path, records: &[PulseRecord]) -> IoResult<()> {
    let mut w = create(path)?;
    for r in records {
        w.serialize(CampaignRow {
            unit: r.channel.unit,
            channel: r.channel.ch,
            round: r.round,
            t_s: r.timestamp(),
            amp: r.mean_amplitude,
            phase_deg: r.mean_phase,
        })
        .map_err(ctx(path))?;
    }
    w.flush().map_err(|e| format!("{}: {e}", path.display()))
}

pub fn write_stats(path: &Path, stats: &[StabilityStats]) -> IoResult<()> {
    let mut w = create(path)?;
    for s in stats {
        w.serialize(s).map_err(ctx(path))?;
    }
    w.flush().map_err(|e| format!("{}: {e}", path.display()))
}

/// Reads a stats CSV; errors name the 1-based line of the bad row.
pub fn read_stats(path: &Path) -> IoResult<Vec<StabilityStats>> {
    let mut r = csv::Reader::from_path(path).map_err(ctx(path))?;
    let mut out = Vec::new();
    for (i, row) in r.deserialize::<StabilityStats>().enumerate() {
        let line = i + 2;
        let s = row.map_err(|e| format!("{}: row {line}: {e}", path.display()))?;
        let vals = [s.amp_p2p_pct, s.amp_std_pct, s.phase_p2p_deg, s.phase_std_deg];
        if vals.iter().any(|v| !v.is_finite() || *v < 0.0) {
            return Err(format!("{}: row {line}: statistics must be finite and >= 0", path.display()));
        }
        out.push(s);
    }
    if out.is_empty() {
        return Err(format!("{}: no rows", path.display()));
    }
    Ok(out)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct InfidelityRow {
    pub unit: u8,
    pub channel: u8,
    pub amp_std_pct: f64,
    pub phase_std_deg: f64,
    pub amp_infidelity: f64,
    pub amp_infidelity_small_angle: f64,
    pub phase_infidelity: f64,
    pub phase_infidelity_small_angle: f64,
    pub total_infidelity: f64,
    pub over_budget: bool,
}

pub fn infidelity_rows(stats: &[StabilityStats], budget: f64) -> Vec<InfidelityRow> {
    stats
        .iter()
        .map(|s| {
            let (a, p) = infidelity_from_stats(s);
            let total = a.exact + p.exact;
            InfidelityRow {
                unit: s.unit,
                channel: s.channel,
                amp_std_pct: s.amp_std_pct,
                phase_std_deg: s.phase_std_deg,
                amp_infidelity: a.exact,
                amp_infidelity_small_angle: a.small_angle,
                phase_infidelity: p.exact,
                phase_infidelity_small_angle: p.small_angle,
                total_infidelity: total,
                over_budget: total > budget,
            }
        })
        .collect()
}

pub fn write_rows<T: Serialize>(path: &Path, rows: &[T]) -> IoResult<()> {
    let mut w = create(path)?;
    for r in rows {
        w.serialize(r).map_err(ctx(path))?;
    }
    w.flush().map_err(|e| format!("{}: {e}", path.display()))
}

#[derive(Debug, Serialize)]
struct ThermalRow<'a> {
    t_s: f64,
    node_id: &'a str,
    #[serde(rename = "temp_C")]
    temp_c: f64,
    duty: Option<f64>,
}

pub fn write_thermal(path: &Path, trace: &[ThermalSample], node_ids: &[String]) -> IoResult<()> {
    let mut w = create(path)?;
    for s in trace {
        w.serialize(ThermalRow {
            t_s: s.t_s,
            node_id: &node_ids[s.node],
            temp_c: s.temp_c,
            duty: s.duty,
        })
        .map_err(ctx(path))?;
    }
    w.flush().map_err(|e| format!("{}: {e}", path.display()))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PlotRow {
    pub unit: u8,
    pub channel: u8,
    pub t_s: f64,
    /// `amplitude` (normalized) or `phase_deg` (relative to the first round).
    pub quantity: String,
    pub value: f64,
}

pub fn plot_rows(series: &[ChannelSeries]) -> Vec<PlotRow> {
    let mut rows = Vec::new();
    for s in series {
        let Ok(norm) = normalize_amplitude(s) else { continue };
        let phases = s.relative_phases();
        for (k, &t) in s.timestamps.iter().enumerate() {
            rows.push(PlotRow {
                unit: s.channel.unit,
                channel: s.channel.ch,
                t_s: t,
                quantity: "amplitude".into(),
                value: norm.amplitudes[k],
            });
            rows.push(PlotRow {
                unit: s.channel.unit,
                channel: s.channel.ch,
                t_s: t,
                quantity: "phase_deg".into(),
                value: phases[k],
            });
        }
    }
    rows
}

pub fn read_rows<T: for<'de> Deserialize<'de>>(path: &Path) -> IoResult<Vec<T>> {
    let mut r = csv::Reader::from_path(path).map_err(ctx(path))?;
    r.deserialize()
        .enumerate()
        .map(|(i, row)| row.map_err(|e| format!("{}: row {}: {e}", path.display(), i + 2)))
        .collect()
}

pub fn write_skew(path: &Path, samples: &[SkewSample]) -> IoResult<()> {
    write_rows(path, samples)
}

/// Streams captured windows as `unit,channel,round,t_s,re,im` rows.
pub struct EnvelopeWriter {
    w: csv::Writer<BufWriter<File>>,
    pub rows: u64,
}

#[derive(Serialize)]
struct EnvelopeRow {
    unit: u8,
    channel: u8,
    round: u64,
    t_s: f64,
    re: f64,
    im: f64,
}

impl EnvelopeWriter {
    pub fn create(path: &Path) -> IoResult<Self> {
        Ok(Self { w: create(path)?, rows: 0 })
    }

    pub fn window(&mut self, ch: ChannelId, round: u64, env: &ComplexEnvelope, demod_hz: f64) -> IoResult<()> {
        let t0 = env.start_ns() as f64 / NS_PER_S as f64;
        let dt = 1.0 / env.sample_rate();
        for (k, z) in env.demodulated(demod_hz).enumerate() {
            self.w
                .serialize(EnvelopeRow {
                    unit: ch.unit,
                    channel: ch.ch,
                    round,
                    t_s: t0 + k as f64 * dt,
                    re: z.re,
                    im: z.im,
                })
                .map_err(|e| e.to_string())?;
            self.rows += 1;
        }
        Ok(())
    }

    pub fn finish(mut self) -> IoResult<u64> {
        self.w.flush().map_err(|e| e.to_string())?;
        Ok(self.rows)
    }
}

/// Writes `text` to `path`.
pub fn write_text(path: &Path, text: &str) -> IoResult<()> {
    let mut f = File::create(path).map_err(|e| format!("cannot create {}: {e}", path.display()))?;
    f.write_all(text.as_bytes()).map_err(|e| format!("{}: {e}", path.display()))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn stats(unit: u8, channel: u8, a: f64, p: f64) -> StabilityStats {
        StabilityStats {
            unit,
            channel,
            amp_p2p_pct: a * 5.0,
            amp_std_pct: a,
            phase_p2p_deg: p * 7.0,
            phase_std_deg: p,
        }
    }

    #[test]
    fn stats_roundtrip() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("s.csv");
        let rows = vec![stats(0, 0, 0.092, 0.43), stats(2, 4, 0.19, 0.36)];
        write_stats(&p, &rows).unwrap();
        assert_eq!(read_stats(&p).unwrap(), rows);
        let header = std::fs::read_to_string(&p).unwrap();
        assert!(header.starts_with("unit,channel,amp_p2p_pct,amp_std_pct,phase_p2p_deg,phase_std_deg\n"));
    }

    #[test]
    fn malformed_row_is_located() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("s.csv");
        std::fs::write(
            &p,
            "unit,channel,amp_p2p_pct,amp_std_pct,phase_p2p_deg,phase_std_deg\n0,0,0.5,0.1,3,0.4\n0,1,0.5,abc,3,0.4\n",
        )
        .unwrap();
        let e = read_stats(&p).unwrap_err();
        assert!(e.contains("row 3"), "{e}");
    }

    #[test]
    fn budget_flag() {
        let rows = infidelity_rows(&[stats(0, 0, 0.22, 0.44), stats(0, 1, 2.0, 3.0)], 1e-4);
        assert!(!rows[0].over_budget);
        assert!(rows[1].over_budget);
    }
}
