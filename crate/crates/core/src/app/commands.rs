//! The five subcommands. Each returns a report that the binary prints; all
//! files go to the chosen output directory.

use std::collections::BTreeMap;
use std::fmt;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use thiserror::Error;

use super::io::{self, InfidelityRow, PlotRow};
use super::manifest::{now_rfc3339, RunManifest, RunStatus};
use super::scenario::{load_scenario, to_toml, Scenario, MAX_DISCIPLINE_STEPS};
use crate::analysis::{render_table, summarize, StabilityStats, StatsSummary};
use crate::campaign::{
    calibrate_setup, channel_stats, mean_stds, run_campaign, CampaignOptions, CampaignSetup,
};
use crate::clocktree::{SkewSample, SkewSimulation};
use crate::coupling::CalibrationTargets;
use crate::rfchain::{sample_count, ChannelId};
use crate::schedule::{seconds_to_ns, NS_PER_S};
use crate::thermal::ControlMode;

/// Environment variable naming the base directory for default outputs.
pub const OUT_DIR_ENV: &str = "RFSTAB_OUT_DIR";
pub const DEFAULT_OUT_BASE: &str = "rfstab-out";
/// Envelope dumps larger than this need `--force`.
pub const MAX_ENVELOPE_ROWS: u64 = 10_000_000;
pub const DEFAULT_BUDGET: f64 = 1e-4;

#[derive(Debug, Error)]
pub enum AppError {
    #[error("{0}")]
    Usage(String),
    #[error("{0}")]
    Domain(String),
}

impl AppError {
    pub fn exit_code(&self) -> i32 {
        match self {
            AppError::Domain(_) => 1,
            AppError::Usage(_) => 2,
        }
    }
}

fn domain(e: impl fmt::Display) -> AppError {
    AppError::Domain(e.to_string())
}

fn out_base(scenario: Option<&Scenario>) -> PathBuf {
    if let Ok(base) = std::env::var(OUT_DIR_ENV) {
        if !base.is_empty() {
            return PathBuf::from(base);
        }
    }
    scenario
        .and_then(|s| s.file.output_dir.clone())
        .map_or_else(|| PathBuf::from(DEFAULT_OUT_BASE), PathBuf::from)
}

fn ensure_dir(dir: &Path) -> Result<(), AppError> {
    std::fs::create_dir_all(dir).map_err(|e| domain(format!("cannot create {}: {e}", dir.display())))
}

fn load(path: &Path, duration_s: Option<f64>) -> Result<Scenario, AppError> {
    let mut s = load_scenario(path).map_err(domain)?;
    if let Some(d) = duration_s {
        if !(d.is_finite() && d > 0.0) {
            return Err(AppError::Usage(format!("--duration must be > 0, got {d}")));
        }
        let ns = seconds_to_ns("--duration", d).map_err(|e| AppError::Usage(e.to_string()))?;
        s.setup.plan = s.setup.plan.with_total_duration_ns(ns);
        s.clock.duration_ns = ns;
    }
    Ok(s)
}

#[derive(Debug, Clone, Default)]
pub struct RunArgs {
    pub scenario: PathBuf,
    pub seed: Option<u64>,
    pub control: Option<ControlMode>,
    pub duration_s: Option<f64>,
    pub out: Option<PathBuf>,
    pub dump_envelopes: bool,
    pub force: bool,
}

#[derive(Debug, Clone)]
pub struct RunReport {
    pub out_dir: PathBuf,
    pub manifest: RunManifest,
    pub stats: Vec<StabilityStats>,
    pub summary: StatsSummary,
    pub worst_infidelity: Option<InfidelityRow>,
    pub envelope_rows: Option<u64>,
}

impl fmt::Display for RunReport {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        writeln!(
            f,
            "run {} (control {}, seed {}, {} rounds) -> {}",
            self.manifest.scenario_name,
            self.manifest.control,
            self.manifest.seed,
            self.manifest.rounds,
            self.out_dir.display()
        )?;
        write!(f, "{}", render_table(&self.stats))?;
        writeln!(f, "{}", self.summary.headline())?;
        if let Some(w) = &self.worst_infidelity {
            writeln!(
                f,
                "worst channel unit{}/ch{}: amplitude infidelity {:.2e}, phase infidelity {:.2e}",
                w.unit, w.channel, w.amp_infidelity, w.phase_infidelity
            )?;
        }
        if let Some(n) = self.envelope_rows {
            writeln!(f, "dumped {n} envelope rows")?;
        }
        Ok(())
    }
}

fn envelope_rows(setup: &CampaignSetup) -> Result<u64, AppError> {
    let len = sample_count(setup.plan.pulse_duration_ns as f64 / NS_PER_S as f64, setup.sample_rate).map_err(domain)?;
    Ok(setup.plan.rounds() * setup.plan.slots() * len as u64)
}

fn worst(rows: &[InfidelityRow]) -> Option<InfidelityRow> {
    rows.iter()
        .copied()
        .max_by(|a, b| a.total_infidelity.total_cmp(&b.total_infidelity))
}

pub fn cmd_run(args: &RunArgs) -> Result<RunReport, AppError> {
    let scenario = load(&args.scenario, args.duration_s)?;
    let setup = &scenario.setup;
    if setup.plan.rounds() < 2 {
        return Err(AppError::Usage(format!(
            "duration covers {} round(s); statistics need at least 2",
            setup.plan.rounds()
        )));
    }
    let mode = args.control.unwrap_or(scenario.file.control);
    let seed = args.seed.unwrap_or(scenario.file.seed);
    if args.dump_envelopes && !args.force {
        let rows = envelope_rows(setup)?;
        if rows > MAX_ENVELOPE_ROWS {
            return Err(AppError::Usage(format!(
                "--dump-envelopes would write {rows} rows (limit {MAX_ENVELOPE_ROWS}); shorten --duration or pass --force"
            )));
        }
    }
    let out_dir = args.out.clone().unwrap_or_else(|| {
        out_base(Some(&scenario)).join(format!("{}-{}-seed{}", scenario.file.name, mode, seed))
    });
    ensure_dir(&out_dir)?;

    let mut manifest = RunManifest {
        command: "run".into(),
        scenario_name: scenario.file.name.clone(),
        scenario_hash: scenario.hash.clone(),
        scenario_path: scenario.source.as_ref().map(|p| p.display().to_string()),
        seed,
        control: mode,
        software_version: env!("CARGO_PKG_VERSION").into(),
        duration_s: setup.plan.total_duration_ns as f64 / NS_PER_S as f64,
        rounds: setup.plan.rounds(),
        started_at: now_rfc3339(),
        finished_at: None,
        status: RunStatus::Running,
        partial: false,
        error: None,
        outputs: Vec::new(),
    };
    manifest.write(&out_dir).map_err(domain)?;

    let result = write_run(&scenario, mode, seed, args.dump_envelopes, &out_dir, &mut manifest);
    match result {
        Ok((stats, summary, rows, envelope_rows)) => {
            manifest.finish(&out_dir).map_err(domain)?;
            Ok(RunReport {
                out_dir,
                manifest,
                stats,
                summary,
                worst_infidelity: worst(&rows),
                envelope_rows,
            })
        }
        Err(e) => {
            let _ = manifest.fail(&out_dir, &e.to_string());
            Err(e)
        }
    }
}

type RunOutputs = (Vec<StabilityStats>, StatsSummary, Vec<InfidelityRow>, Option<u64>);

fn write_run(
    scenario: &Scenario,
    mode: ControlMode,
    seed: u64,
    dump: bool,
    dir: &Path,
    manifest: &mut RunManifest,
) -> Result<RunOutputs, AppError> {
    let setup = &scenario.setup;
    let mut opts = CampaignOptions::new(mode, seed);
    let trace_s = scenario.file.thermal.trace_interval_s;
    if trace_s > 0.0 {
        opts.trace_interval_ns = Some(seconds_to_ns("trace_interval_s", trace_s).map_err(domain)?);
    }
    let record = |name: &str, m: &mut RunManifest| {
        m.outputs.push(name.to_string());
        m.write(dir).map_err(domain)
    };

    let (output, envelope_rows) = if dump {
        let mut w = io::EnvelopeWriter::create(&dir.join(io::ENVELOPES_CSV)).map_err(domain)?;
        let mut sink = |ch: ChannelId, round: u64, env: &crate::rfchain::ComplexEnvelope, demod: f64| w.window(ch, round, env, demod);
        let out = run_campaign(setup, opts, Some(&mut sink)).map_err(domain)?;
        let rows = w.finish().map_err(domain)?;
        record(io::ENVELOPES_CSV, manifest)?;
        (out, Some(rows))
    } else {
        (run_campaign(setup, opts, None).map_err(domain)?, None)
    };

    io::write_campaign(&dir.join(io::CAMPAIGN_CSV), &output.records).map_err(domain)?;
    record(io::CAMPAIGN_CSV, manifest)?;

    let series = output.series(&setup.channels()).map_err(domain)?;
    let stats = channel_stats(&series).map_err(domain)?;
    let summary = summarize(&stats).map_err(domain)?;
    io::write_stats(&dir.join(io::STATS_CSV), &stats).map_err(domain)?;
    record(io::STATS_CSV, manifest)?;
    io::write_text(
        &dir.join(io::STATS_TXT),
        &format!("{}{}\n", render_table(&stats), summary.headline()),
    )
    .map_err(domain)?;
    record(io::STATS_TXT, manifest)?;

    let rows = io::infidelity_rows(&stats, DEFAULT_BUDGET);
    io::write_rows(&dir.join(io::INFIDELITY_CSV), &rows).map_err(domain)?;
    record(io::INFIDELITY_CSV, manifest)?;

    if opts.trace_interval_ns.is_some() {
        let ids: Vec<String> = setup.network.nodes().iter().map(|n| n.node.id.clone()).collect();
        io::write_thermal(&dir.join(io::THERMAL_CSV), &output.thermal_trace, &ids).map_err(domain)?;
        record(io::THERMAL_CSV, manifest)?;
    }
    io::write_rows(&dir.join(io::PLOT_CSV), &io::plot_rows(&series)).map_err(domain)?;
    record(io::PLOT_CSV, manifest)?;
    Ok((stats, summary, rows, envelope_rows))
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct RatioRow {
    pub unit: u8,
    pub channel: u8,
    pub amp_std_ratio: f64,
    pub amp_p2p_ratio: f64,
    pub phase_std_ratio: f64,
    pub phase_p2p_ratio: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct CompareReport {
    pub out_dir: PathBuf,
    pub control_a: ControlMode,
    pub control_b: ControlMode,
    pub rows: Vec<RatioRow>,
    /// Ratio of the channel-mean standard deviations, B over A.
    pub mean_amp_std_ratio: f64,
    pub mean_phase_std_ratio: f64,
    pub min_amp_std_ratio: f64,
    pub min_phase_std_ratio: f64,
}

impl fmt::Display for CompareReport {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        writeln!(
            f,
            "ratios B/A (A: control {}, B: control {}) -> {}",
            self.control_a,
            self.control_b,
            self.out_dir.display()
        )?;
        writeln!(
            f,
            "{:>4} {:>7} {:>13} {:>13} {:>15} {:>15}",
            "Unit", "Channel", "Amp std x", "Amp p2p x", "Phase std x", "Phase p2p x"
        )?;
        for r in &self.rows {
            writeln!(
                f,
                "{:>4} {:>7} {:>13.3} {:>13.3} {:>15.3} {:>15.3}",
                r.unit, r.channel, r.amp_std_ratio, r.amp_p2p_ratio, r.phase_std_ratio, r.phase_p2p_ratio
            )?;
        }
        writeln!(
            f,
            "mean std ratio: amplitude {:.2}x, phase {:.2}x (per-channel minimum {:.2}x, {:.2}x)",
            self.mean_amp_std_ratio, self.mean_phase_std_ratio, self.min_amp_std_ratio, self.min_phase_std_ratio
        )
    }
}

fn ratio(b: f64, a: f64) -> f64 {
    if a == 0.0 && b == 0.0 {
        1.0
    } else {
        b / a
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
struct MergedRow {
    run: String,
    unit: u8,
    channel: u8,
    t_s: f64,
    quantity: String,
    value: f64,
}

fn keyed(stats: Vec<StabilityStats>, path: &Path) -> Result<BTreeMap<(u8, u8), StabilityStats>, AppError> {
    let mut m = BTreeMap::new();
    for s in stats {
        if m.insert((s.unit, s.channel), s).is_some() {
            return Err(domain(format!(
                "{}: channel unit{}/ch{} appears twice",
                path.display(),
                s.unit,
                s.channel
            )));
        }
    }
    Ok(m)
}

pub fn cmd_compare(run_a: &Path, run_b: &Path, out: Option<&Path>) -> Result<CompareReport, AppError> {
    let ma = RunManifest::read(run_a).map_err(domain)?;
    let mb = RunManifest::read(run_b).map_err(domain)?;
    for (m, p) in [(&ma, run_a), (&mb, run_b)] {
        if m.status != RunStatus::Complete {
            return Err(domain(format!("{} is not a complete run", p.display())));
        }
    }
    if ma.scenario_hash != mb.scenario_hash {
        return Err(domain(format!(
            "runs use different scenarios ({} vs {})",
            ma.scenario_hash, mb.scenario_hash
        )));
    }
    let pa = run_a.join(io::STATS_CSV);
    let pb = run_b.join(io::STATS_CSV);
    let sa = keyed(io::read_stats(&pa).map_err(domain)?, &pa)?;
    let sb = keyed(io::read_stats(&pb).map_err(domain)?, &pb)?;
    if sa.keys().ne(sb.keys()) {
        return Err(domain("runs cover different channels"));
    }
    let rows: Vec<RatioRow> = sa
        .iter()
        .map(|(&(unit, channel), a)| {
            let b = &sb[&(unit, channel)];
            RatioRow {
                unit,
                channel,
                amp_std_ratio: ratio(b.amp_std_pct, a.amp_std_pct),
                amp_p2p_ratio: ratio(b.amp_p2p_pct, a.amp_p2p_pct),
                phase_std_ratio: ratio(b.phase_std_deg, a.phase_std_deg),
                phase_p2p_ratio: ratio(b.phase_p2p_deg, a.phase_p2p_deg),
            }
        })
        .collect();
    let va: Vec<StabilityStats> = sa.values().copied().collect();
    let vb: Vec<StabilityStats> = sb.values().copied().collect();
    let (ma_std, mb_std) = (mean_stds(&va), mean_stds(&vb));
    let min = |f: fn(&RatioRow) -> f64| rows.iter().map(f).fold(f64::INFINITY, f64::min);
    let report_dir = out
        .map(Path::to_path_buf)
        .unwrap_or_else(|| out_base(None).join(format!("compare-{}", &ma.scenario_hash[..ma.scenario_hash.len().min(12)])));
    let report = CompareReport {
        out_dir: report_dir.clone(),
        control_a: ma.control,
        control_b: mb.control,
        mean_amp_std_ratio: ratio(mb_std.amp_std_pct, ma_std.amp_std_pct),
        mean_phase_std_ratio: ratio(mb_std.phase_std_deg, ma_std.phase_std_deg),
        min_amp_std_ratio: min(|r| r.amp_std_ratio),
        min_phase_std_ratio: min(|r| r.phase_std_ratio),
        rows,
    };

    ensure_dir(&report_dir)?;
    io::write_rows(&report_dir.join("comparison.csv"), &report.rows).map_err(domain)?;
    io::write_text(&report_dir.join("comparison.txt"), &report.to_string()).map_err(domain)?;
    let mut merged = Vec::new();
    for (label, dir) in [("a", run_a), ("b", run_b)] {
        let path = dir.join(io::PLOT_CSV);
        if !path.exists() {
            continue;
        }
        let rows: Vec<PlotRow> = io::read_rows(&path).map_err(domain)?;
        merged.extend(rows.into_iter().map(|r| MergedRow {
            run: label.into(),
            unit: r.unit,
            channel: r.channel,
            t_s: r.t_s,
            quantity: r.quantity,
            value: r.value,
        }));
    }
    merged.sort_by(|x, y| {
        (&x.run, x.unit, x.channel, &x.quantity)
            .cmp(&(&y.run, y.unit, y.channel, &y.quantity))
            .then(x.t_s.total_cmp(&y.t_s))
    });
    io::write_rows(&report_dir.join("merged_plot.csv"), &merged).map_err(domain)?;
    Ok(report)
}

#[derive(Debug, Clone, PartialEq)]
pub struct FidelityReport {
    pub rows: Vec<InfidelityRow>,
    pub budget: f64,
    pub worst_channel: InfidelityRow,
    /// Largest amplitude std and largest phase std over all channels, which
    /// may come from different channels.
    pub envelope: InfidelityRow,
    pub out_file: Option<PathBuf>,
}

impl FidelityReport {
    pub fn over_budget(&self) -> Vec<&InfidelityRow> {
        self.rows.iter().filter(|r| r.over_budget).collect()
    }
}

impl fmt::Display for FidelityReport {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        writeln!(
            f,
            "{:>4} {:>7} {:>12} {:>14} {:>12} {:>12} {:>12}",
            "Unit", "Channel", "Amp std (%)", "Phase std (deg)", "1-F amp", "1-F phase", "1-F total"
        )?;
        for r in &self.rows {
            writeln!(
                f,
                "{:>4} {:>7} {:>12.4} {:>14.4} {:>12.3e} {:>12.3e} {:>12.3e}{}",
                r.unit,
                r.channel,
                r.amp_std_pct,
                r.phase_std_deg,
                r.amp_infidelity,
                r.phase_infidelity,
                r.total_infidelity,
                if r.over_budget { "  OVER BUDGET" } else { "" }
            )?;
        }
        let w = &self.worst_channel;
        writeln!(
            f,
            "worst channel unit{}/ch{}: {:.3e} (amplitude {:.3e}, phase {:.3e})",
            w.unit, w.channel, w.total_infidelity, w.amp_infidelity, w.phase_infidelity
        )?;
        let e = &self.envelope;
        writeln!(
            f,
            "worst case over channels ({:.3} %, {:.3} deg): amplitude {:.2e}, phase {:.2e}",
            e.amp_std_pct, e.phase_std_deg, e.amp_infidelity, e.phase_infidelity
        )?;
        let over = self.over_budget().len();
        writeln!(f, "{} of {} channels exceed the {:.1e} budget", over, self.rows.len(), self.budget)
    }
}

pub fn cmd_fidelity(stats_csv: &Path, budget: f64, out: Option<&Path>) -> Result<FidelityReport, AppError> {
    if !(budget.is_finite() && budget > 0.0) {
        return Err(AppError::Usage(format!("--budget must be > 0, got {budget}")));
    }
    let stats = io::read_stats(stats_csv).map_err(domain)?;
    let rows = io::infidelity_rows(&stats, budget);
    let worst_channel = worst(&rows).expect("read_stats rejects empty files");
    let max_amp = stats.iter().map(|s| s.amp_std_pct).fold(0.0, f64::max);
    let max_phase = stats.iter().map(|s| s.phase_std_deg).fold(0.0, f64::max);
    let env_stats = StabilityStats {
        unit: worst_channel.unit,
        channel: worst_channel.channel,
        amp_p2p_pct: 0.0,
        amp_std_pct: max_amp,
        phase_p2p_deg: 0.0,
        phase_std_deg: max_phase,
    };
    let envelope = io::infidelity_rows(&[env_stats], budget)[0];
    let out_file = match out {
        Some(dir) => {
            ensure_dir(dir)?;
            let p = dir.join(io::INFIDELITY_CSV);
            io::write_rows(&p, &rows).map_err(domain)?;
            Some(p)
        }
        None => None,
    };
    Ok(FidelityReport {
        rows,
        budget,
        worst_channel,
        envelope,
        out_file,
    })
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct CoefficientRow {
    pub device_id: String,
    pub amp_coeff: f64,
    pub phase_coeff: f64,
}

#[derive(Debug, Clone)]
pub struct CalibrationReport {
    pub out_dir: PathBuf,
    pub targets: CalibrationTargets,
    pub achieved: CalibrationTargets,
    pub amp_scale: f64,
    pub phase_scale: f64,
    pub iterations: usize,
    pub coefficients: Vec<CoefficientRow>,
}

impl fmt::Display for CalibrationReport {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        writeln!(
            f,
            "calibrated in {} evaluations: amplitude scale {:.6}, phase scale {:.6}",
            self.iterations, self.amp_scale, self.phase_scale
        )?;
        writeln!(
            f,
            "mean amplitude std {:.4} % (target {:.4} %), mean phase std {:.4} deg (target {:.4} deg)",
            self.achieved.amp_std_pct, self.targets.amp_std_pct, self.achieved.phase_std_deg, self.targets.phase_std_deg
        )?;
        writeln!(f, "coefficients and calibrated scenario written to {}", self.out_dir.display())
    }
}

pub fn cmd_calibrate(
    scenario_path: &Path,
    seed: Option<u64>,
    duration_s: Option<f64>,
    out: Option<&Path>,
) -> Result<CalibrationReport, AppError> {
    let scenario = load(scenario_path, duration_s)?;
    let seed = seed.unwrap_or(scenario.file.seed);
    let targets = scenario.calibration_targets();
    let cal = calibrate_setup(&scenario.setup, targets, seed).map_err(domain)?;
    let out_dir = out
        .map(Path::to_path_buf)
        .unwrap_or_else(|| out_base(Some(&scenario)).join(format!("{}-calibration", scenario.file.name)));
    ensure_dir(&out_dir)?;
    let coefficients: Vec<CoefficientRow> = cal
        .table
        .devices()
        .iter()
        .map(|d| CoefficientRow {
            device_id: d.device_id.clone(),
            amp_coeff: d.amp_coeff,
            phase_coeff: d.phase_coeff,
        })
        .collect();
    io::write_rows(&out_dir.join("calibration.csv"), &coefficients).map_err(domain)?;
    let mut file = scenario.file.clone();
    for (cfg, row) in file.devices.iter_mut().zip(&coefficients) {
        cfg.amp_coeff = row.amp_coeff;
        cfg.phase_coeff = row.phase_coeff;
    }
    io::write_text(&out_dir.join("calibrated.toml"), &to_toml(&file)).map_err(domain)?;
    Ok(CalibrationReport {
        out_dir,
        targets,
        achieved: cal.achieved,
        amp_scale: cal.amp_scale,
        phase_scale: cal.phase_scale,
        iterations: cal.iterations,
        coefficients,
    })
}

#[derive(Debug, Clone, PartialEq)]
pub struct SkewReport {
    pub out_file: PathBuf,
    pub samples: Vec<SkewSample>,
    pub compensated: bool,
}

impl SkewReport {
    pub fn max_skew(&self) -> u64 {
        self.samples.iter().map(|s| s.max_skew_ticks).max().unwrap_or(0)
    }

    pub fn final_skew(&self) -> u64 {
        self.samples.last().map_or(0, |s| s.max_skew_ticks)
    }
}

impl fmt::Display for SkewReport {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let end = self.samples.last().map_or(0.0, |s| s.t_s);
        writeln!(
            f,
            "counter skew over {end} s ({}): final {} ticks, max {} ticks -> {}",
            if self.compensated { "compensated" } else { "free-running" },
            self.final_skew(),
            self.max_skew(),
            self.out_file.display()
        )
    }
}

pub fn cmd_clock_skew(scenario_path: &Path, duration_s: Option<f64>, out: Option<&Path>) -> Result<SkewReport, AppError> {
    let scenario = load(scenario_path, duration_s)?;
    let c = &scenario.clock;
    if c.duration_ns / c.interval_ns > MAX_DISCIPLINE_STEPS {
        return Err(AppError::Usage(format!(
            "--duration needs {} discipline steps, more than the {MAX_DISCIPLINE_STEPS} supported",
            c.duration_ns / c.interval_ns
        )));
    }
    let sim = SkewSimulation::new(c.units.clone(), c.compensator, c.interval_ns).map_err(domain)?;
    let samples = sim.run(c.duration_ns);
    let out_dir = out
        .map(Path::to_path_buf)
        .unwrap_or_else(|| out_base(Some(&scenario)).join(format!("{}-clock", scenario.file.name)));
    ensure_dir(&out_dir)?;
    let out_file = out_dir.join("skew.csv");
    io::write_skew(&out_file, &samples).map_err(domain)?;
    Ok(SkewReport {
        out_file,
        samples,
        compensated: c.compensator.is_some(),
    })
}
