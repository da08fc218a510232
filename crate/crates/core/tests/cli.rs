mod common;

use std::fs;
use std::path::{Path, PathBuf};
use std::process::Command;

use common::{default_scenario, path_str, rfstab, scenario_dir};
use rfstab::analysis::{StabilityStats, REFERENCE_STATS};
use rfstab::app::commands::RatioRow;
use rfstab::app::io::{read_rows, write_stats, InfidelityRow};
use rfstab::app::manifest::{RunManifest, RunStatus};
use rfstab::fidelity::infidelity_from_stats;
use rfstab::thermal::ControlMode;

fn run(out: &Path, extra: &[&str]) -> std::process::Output {
    let scenario = default_scenario();
    let mut args = vec!["run", "--scenario", path_str(&scenario), "--out", path_str(out)];
    args.extend_from_slice(extra);
    rfstab(&args)
}

fn ok(o: &std::process::Output) {
    assert!(
        o.status.success(),
        "exit {:?}\nstdout: {}\nstderr: {}",
        o.status.code(),
        String::from_utf8_lossy(&o.stdout),
        String::from_utf8_lossy(&o.stderr)
    );
}

fn lines(p: &Path) -> Vec<String> {
    fs::read_to_string(p).unwrap().lines().map(str::to_string).collect()
}

#[test]
fn run_writes_all_outputs() {
    let dir = tempfile::tempdir().unwrap();
    let out = dir.path().join("r");
    let o = run(&out, &["--duration", "600"]);
    ok(&o);
    let stdout = String::from_utf8_lossy(&o.stdout);
    assert!(stdout.contains("across 15 channels"), "{stdout}");

    let stats = lines(&out.join("stats.csv"));
    assert_eq!(stats[0], "unit,channel,amp_p2p_pct,amp_std_pct,phase_p2p_deg,phase_std_deg");
    assert_eq!(stats.len(), 16);

    let campaign = lines(&out.join("campaign.csv"));
    assert_eq!(campaign[0], "unit,channel,round,t_s,amp,phase_deg");
    // 600 s / 1.3 s = 461 rounds of 15 pulses
    assert_eq!(campaign.len(), 1 + 461 * 15);

    let thermal = lines(&out.join("thermal.csv"));
    assert_eq!(thermal[0], "t_s,node_id,temp_C,duty");
    for f in ["stats.txt", "infidelity.csv", "plot.csv", "manifest.json"] {
        assert!(out.join(f).exists(), "{f}");
    }
    let m = RunManifest::read(&out).unwrap();
    assert_eq!(m.status, RunStatus::Complete);
    assert_eq!(m.rounds, 461);
    assert_eq!(m.control, ControlMode::On);
    assert!(m.finished_at.is_some());
    assert!(m.outputs.contains(&"campaign.csv".to_string()));
}

#[test]
fn same_seed_is_byte_identical_and_seeds_differ() {
    let dir = tempfile::tempdir().unwrap();
    let a = dir.path().join("a");
    let b = dir.path().join("b");
    let c = dir.path().join("c");
    ok(&run(&a, &["--duration", "300", "--seed", "11"]));
    ok(&run(&b, &["--duration", "300", "--seed", "11"]));
    ok(&run(&c, &["--duration", "300", "--seed", "12"]));
    for f in ["campaign.csv", "stats.csv", "thermal.csv", "plot.csv", "infidelity.csv", "stats.txt"] {
        assert_eq!(fs::read(a.join(f)).unwrap(), fs::read(b.join(f)).unwrap(), "{f}");
    }
    assert_ne!(fs::read(a.join("campaign.csv")).unwrap(), fs::read(c.join("campaign.csv")).unwrap());
}

#[test]
fn usage_errors_exit_2() {
    let dir = tempfile::tempdir().unwrap();
    let out = dir.path().join("x");
    assert_eq!(rfstab(&["run"]).status.code(), Some(2));
    assert_eq!(rfstab(&["bogus"]).status.code(), Some(2));
    assert_eq!(run(&out, &["--control", "maybe"]).status.code(), Some(2));
    assert_eq!(run(&out, &["--seed", "-3"]).status.code(), Some(2));
    assert_eq!(run(&out, &["--duration", "0"]).status.code(), Some(2));
    // one round is too short for statistics
    assert_eq!(run(&out, &["--duration", "2"]).status.code(), Some(2));
    assert_eq!(rfstab(&["fidelity", "x.csv", "--budget", "-1"]).status.code(), Some(2));
}

#[test]
fn domain_errors_exit_1() {
    let dir = tempfile::tempdir().unwrap();
    let out = dir.path().join("x");
    let bad = scenario_dir().join("invalid").join("unknown_device.toml");
    let o = rfstab(&["run", "--scenario", path_str(&bad), "--out", path_str(&out)]);
    assert_eq!(o.status.code(), Some(1));
    let err = String::from_utf8_lossy(&o.stderr);
    assert!(err.contains("paths[0].devices[2]") && err.contains("cable99"), "{err}");

    let o = rfstab(&["run", "--scenario", "/nonexistent/s.toml", "--out", path_str(&out)]);
    assert_eq!(o.status.code(), Some(1));

    let syntax = scenario_dir().join("invalid").join("syntax.toml");
    let o = rfstab(&["run", "--scenario", path_str(&syntax), "--out", path_str(&out)]);
    assert_eq!(o.status.code(), Some(1));
    assert!(String::from_utf8_lossy(&o.stderr).contains("syntax.toml:3:"));

    let neg = scenario_dir().join("invalid").join("negative_capacity.toml");
    let o = rfstab(&["run", "--scenario", path_str(&neg), "--out", path_str(&out)]);
    assert_eq!(o.status.code(), Some(1));
    assert!(String::from_utf8_lossy(&o.stderr).contains("thermal.nodes[0]"));
}

#[test]
fn failed_run_is_flagged_in_manifest() {
    let dir = tempfile::tempdir().unwrap();
    let text = fs::read_to_string(default_scenario()).unwrap().replace("amplitude_c = 1.5", "amplitude_c = 1e300");
    let scenario = dir.path().join("hot.toml");
    fs::write(&scenario, text).unwrap();
    let out = dir.path().join("r");
    let o = rfstab(&["run", "--scenario", path_str(&scenario), "--duration", "60", "--out", path_str(&out)]);
    assert_eq!(o.status.code(), Some(1));
    let m = RunManifest::read(&out).unwrap();
    assert_eq!(m.status, RunStatus::Failed);
    assert!(m.error.is_some());
    assert_eq!(m.partial, !m.outputs.is_empty());
}

#[test]
fn out_dir_defaults_to_env_base() {
    let dir = tempfile::tempdir().unwrap();
    let o = Command::new(env!("CARGO_BIN_EXE_rfstab"))
        .args(["run", "--scenario", path_str(&default_scenario()), "--duration", "30", "--control", "off"])
        .env("RFSTAB_OUT_DIR", dir.path())
        .output()
        .unwrap();
    ok(&o);
    let expected = dir.path().join("default-off-seed20240611");
    assert!(expected.join("manifest.json").exists());
}

#[test]
fn envelope_dump_and_guard() {
    let dir = tempfile::tempdir().unwrap();
    let out = dir.path().join("e");
    ok(&run(&out, &["--duration", "3", "--dump-envelopes"]));
    let env = lines(&out.join("envelopes.csv"));
    assert_eq!(env[0], "unit,channel,round,t_s,re,im");
    // 2 rounds x 15 windows x 100 samples
    assert_eq!(env.len(), 1 + 2 * 15 * 100);

    let big = dir.path().join("big");
    let o = run(&big, &["--dump-envelopes"]);
    assert_eq!(o.status.code(), Some(2));
    assert!(String::from_utf8_lossy(&o.stderr).contains("--force"));
}

fn ratios(dir: &Path) -> Vec<RatioRow> {
    read_rows(&dir.join("comparison.csv")).unwrap()
}

#[test]
fn compare_self_is_unity() {
    let dir = tempfile::tempdir().unwrap();
    let a = dir.path().join("a");
    ok(&run(&a, &["--duration", "120"]));
    let c = dir.path().join("cmp");
    ok(&rfstab(&["compare", path_str(&a), path_str(&a), "--out", path_str(&c)]));
    let rows = ratios(&c);
    assert_eq!(rows.len(), 15);
    for r in rows {
        assert_eq!(
            [r.amp_std_ratio, r.amp_p2p_ratio, r.phase_std_ratio, r.phase_p2p_ratio],
            [1.0; 4]
        );
    }
    assert!(c.join("merged_plot.csv").exists());
    assert!(c.join("comparison.txt").exists());
}

fn copy_run(from: &Path, to: &Path) {
    fs::create_dir_all(to).unwrap();
    for e in fs::read_dir(from).unwrap() {
        let e = e.unwrap();
        fs::copy(e.path(), to.join(e.file_name())).unwrap();
    }
}

fn shuffle_rows(csv: &Path) {
    let mut ls = lines(csv);
    let header = ls.remove(0);
    ls.reverse();
    ls.rotate_left(4);
    fs::write(csv, format!("{header}\n{}\n", ls.join("\n"))).unwrap();
}

#[test]
fn compare_on_off_pair_and_order_independence() {
    let dir = tempfile::tempdir().unwrap();
    let on = dir.path().join("on");
    let off = dir.path().join("off");
    ok(&run(&on, &["--duration", "21600", "--control", "on"]));
    ok(&run(&off, &["--duration", "21600", "--control", "off"]));
    let c = dir.path().join("cmp");
    let o = rfstab(&["compare", path_str(&on), path_str(&off), "--out", path_str(&c)]);
    ok(&o);
    let text = String::from_utf8_lossy(&o.stdout);
    assert!(text.contains("mean std ratio"), "{text}");

    let read = |p: &Path| -> Vec<StabilityStats> { read_rows(&p.join("stats.csv")).unwrap() };
    let mean = |s: &[StabilityStats], f: fn(&StabilityStats) -> f64| s.iter().map(f).sum::<f64>() / s.len() as f64;
    let (son, soff) = (read(&on), read(&off));
    let amp = mean(&soff, |s| s.amp_std_pct) / mean(&son, |s| s.amp_std_pct);
    let phase = mean(&soff, |s| s.phase_std_deg) / mean(&son, |s| s.phase_std_deg);
    assert!((1.8..=4.2).contains(&amp), "amplitude ratio {amp}");
    assert!(phase >= 2.0, "phase ratio {phase}");
    assert!(ratios(&c).iter().all(|r| r.amp_std_ratio >= 2.0 && r.phase_std_ratio >= 2.0));

    let (on2, off2) = (dir.path().join("on2"), dir.path().join("off2"));
    copy_run(&on, &on2);
    copy_run(&off, &off2);
    shuffle_rows(&on2.join("stats.csv"));
    shuffle_rows(&off2.join("stats.csv"));
    shuffle_rows(&off2.join("plot.csv"));
    let c2 = dir.path().join("cmp2");
    ok(&rfstab(&["compare", path_str(&on2), path_str(&off2), "--out", path_str(&c2)]));
    for f in ["comparison.csv", "comparison.txt", "merged_plot.csv"] {
        let a = fs::read_to_string(c.join(f)).unwrap();
        let b = fs::read_to_string(c2.join(f)).unwrap().replace(path_str(&c2), path_str(&c));
        assert_eq!(a, b, "{f}");
    }
}

#[test]
fn compare_rejects_different_scenarios() {
    let dir = tempfile::tempdir().unwrap();
    let a = dir.path().join("a");
    ok(&run(&a, &["--duration", "60"]));
    let other = dir.path().join("other.toml");
    let text = fs::read_to_string(default_scenario()).unwrap().replace("mean_c = 24.0", "mean_c = 25.0");
    fs::write(&other, text).unwrap();
    let b = dir.path().join("b");
    ok(&rfstab(&["run", "--scenario", path_str(&other), "--duration", "60", "--out", path_str(&b)]));
    let o = rfstab(&["compare", path_str(&a), path_str(&b), "--out", path_str(&dir.path().join("c"))]);
    assert_eq!(o.status.code(), Some(1));
    assert!(String::from_utf8_lossy(&o.stderr).contains("different scenarios"));
}

fn stats_file(dir: &Path, rows: &[StabilityStats]) -> PathBuf {
    let p = dir.join("stats.csv");
    write_stats(&p, rows).unwrap();
    p
}

#[test]
fn fidelity_reports_match_direct_evaluation() {
    let dir = tempfile::tempdir().unwrap();
    let p = stats_file(dir.path(), &REFERENCE_STATS);
    let out = dir.path().join("f");
    let o = rfstab(&["fidelity", path_str(&p), "--out", path_str(&out)]);
    ok(&o);
    let rows: Vec<InfidelityRow> = read_rows(&out.join("infidelity.csv")).unwrap();
    assert_eq!(rows.len(), 15);
    for (r, s) in rows.iter().zip(REFERENCE_STATS.iter()) {
        let (a, ph) = infidelity_from_stats(s);
        assert_eq!((r.unit, r.channel), (s.unit, s.channel));
        assert_eq!(r.amp_infidelity, a.exact);
        assert_eq!(r.phase_infidelity, ph.exact);
        assert!(!r.over_budget);
    }
    // worst reference row: 0.22 % and 0.44 deg
    let worst_amp = rows.iter().map(|r| r.amp_infidelity).fold(0.0, f64::max);
    let worst_phase = rows.iter().map(|r| r.phase_infidelity).fold(0.0, f64::max);
    assert!((1.9e-6..2.1e-6).contains(&worst_amp), "{worst_amp}");
    assert!((1.9e-5..2.1e-5).contains(&worst_phase), "{worst_phase}");
    let text = String::from_utf8_lossy(&o.stdout);
    assert!(text.contains("0 of 15 channels exceed"), "{text}");
}

#[test]
fn fidelity_zero_stats_and_budget_flag() {
    let dir = tempfile::tempdir().unwrap();
    let zero = StabilityStats {
        unit: 0,
        channel: 0,
        amp_p2p_pct: 0.0,
        amp_std_pct: 0.0,
        phase_p2p_deg: 0.0,
        phase_std_deg: 0.0,
    };
    let loud = StabilityStats {
        channel: 1,
        amp_std_pct: 1.5,
        phase_std_deg: 2.0,
        ..zero
    };
    let p = stats_file(dir.path(), &[zero, loud]);
    let out = dir.path().join("f");
    let o = rfstab(&["fidelity", path_str(&p), "--out", path_str(&out), "--budget", "1e-4"]);
    ok(&o);
    let rows: Vec<InfidelityRow> = read_rows(&out.join("infidelity.csv")).unwrap();
    assert_eq!(rows[0].total_infidelity, 0.0);
    assert!(!rows[0].over_budget);
    assert!(rows[1].over_budget);
    assert!(String::from_utf8_lossy(&o.stdout).contains("OVER BUDGET"));
}

#[test]
fn fidelity_malformed_csv_names_row() {
    let dir = tempfile::tempdir().unwrap();
    let p = dir.path().join("bad.csv");
    fs::write(
        &p,
        "unit,channel,amp_p2p_pct,amp_std_pct,phase_p2p_deg,phase_std_deg\n0,0,0.5,0.1,3,0.4\n0,1,0.5,0.1,3,0.4\n0,2,x,0.1,3,0.4\n",
    )
    .unwrap();
    let o = rfstab(&["fidelity", path_str(&p)]);
    assert_eq!(o.status.code(), Some(1));
    assert!(String::from_utf8_lossy(&o.stderr).contains("row 4"));
}

#[test]
fn calibrate_hits_targets_and_writes_loadable_scenario() {
    let dir = tempfile::tempdir().unwrap();
    let out = dir.path().join("cal");
    let o = rfstab(&[
        "calibrate",
        "--scenario",
        path_str(&default_scenario()),
        "--duration",
        "3600",
        "--out",
        path_str(&out),
    ]);
    ok(&o);
    let coeffs = lines(&out.join("calibration.csv"));
    assert_eq!(coeffs[0], "device_id,amp_coeff,phase_coeff");
    let calibrated = out.join("calibrated.toml");
    let r = dir.path().join("r");
    ok(&rfstab(&["run", "--scenario", path_str(&calibrated), "--duration", "3600", "--out", path_str(&r)]));
    let stats: Vec<StabilityStats> = read_rows(&r.join("stats.csv")).unwrap();
    let amp = stats.iter().map(|s| s.amp_std_pct).sum::<f64>() / 15.0;
    let phase = stats.iter().map(|s| s.phase_std_deg).sum::<f64>() / 15.0;
    // calibration fits the noiseless prediction; the noisy run stays close
    assert!((amp - 0.15).abs() < 0.15 * 0.05, "{amp}");
    assert!((phase - 0.39).abs() < 0.39 * 0.05, "{phase}");
}

#[test]
fn clock_skew_writes_trace() {
    let dir = tempfile::tempdir().unwrap();
    let out = dir.path().join("clk");
    let o = rfstab(&["clock-skew", "--scenario", path_str(&default_scenario()), "--duration", "600", "--out", path_str(&out)]);
    ok(&o);
    let rows = lines(&out.join("skew.csv"));
    assert_eq!(rows[0], "t_s,max_skew_ticks");
    assert!(rows.len() > 600);
    let last: u64 = rows.last().unwrap().split(',').nth(1).unwrap().parse().unwrap();
    assert!(last <= 1, "compensated skew {last}");
}
