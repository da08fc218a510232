mod common;

use std::f64::consts::{FRAC_PI_2, TAU};
use std::path::Path;

use num_complex::Complex64;
use proptest::prelude::*;

use rfstab::analysis::{compute_stats, normalize_amplitude, unwrap_phase, ChannelSeries, StabilityStats};
use rfstab::app::io::{read_stats, write_stats};
use rfstab::app::scenario::{build_scenario, parse_scenario};
use rfstab::clocktree::{counter_skew, Compensator, UnitClock};
use rfstab::coupling::{perturbation_for, DeviceKind, DeviceSensitivity, PathPerturbation};
use rfstab::fidelity::{
    amp_error_infidelity, avg_fidelity, phase_error_infidelity, x_rotation, xy_axis_rotation,
};
use rfstab::rfchain::{
    combine, downconvert, synthesize_pulse, upconvert, ChannelId, ComplexEnvelope, LoState, PortKind, SignalPath,
};
use rfstab::schedule::{build_schedule, wrap_degrees, MeasurementPlan};
use rfstab::thermal::{step_plant, ThermalNode};

fn series(amps: Vec<f64>, phases: Vec<f64>) -> ChannelSeries {
    let ts = (0..amps.len()).map(|k| k as f64 * 1.3).collect();
    ChannelSeries::new(ChannelId::new(1, 2), ts, amps, phases).unwrap()
}

fn amp_phase_series() -> impl Strategy<Value = (Vec<f64>, Vec<f64>)> {
    (2usize..50).prop_flat_map(|n| {
        (
            prop::collection::vec(0.2f64..2.0, n),
            prop::collection::vec(-500.0f64..500.0, n),
        )
    })
}

fn close(a: f64, b: f64, tol: f64) -> bool {
    (a - b).abs() <= tol * a.abs().max(b.abs()).max(1.0)
}

proptest! {
    #[test]
    fn closed_forms_match_matrices(eps in -0.2f64..0.2, phi in -0.5f64..0.5, alpha in 0.0f64..TAU) {
        let ideal = x_rotation(FRAC_PI_2);
        let over = x_rotation(FRAC_PI_2 * (1.0 + eps)).with_global_phase(alpha);
        let tilted = xy_axis_rotation(FRAC_PI_2, phi);
        prop_assert!((amp_error_infidelity(eps).exact - (1.0 - avg_fidelity(&ideal, &over))).abs() < 1e-12);
        prop_assert!((phase_error_infidelity(phi).exact - (1.0 - avg_fidelity(&ideal, &tilted))).abs() < 1e-12);
    }

    #[test]
    fn fidelity_is_symmetric_and_bounded(t1 in -6.0f64..6.0, t2 in -6.0f64..6.0, p in -3.0f64..3.0) {
        let u = xy_axis_rotation(t1, p);
        let v = x_rotation(t2);
        let f = avg_fidelity(&u, &v);
        prop_assert!((f - avg_fidelity(&v, &u)).abs() < 1e-14);
        prop_assert!((1.0 / 3.0 - 1e-12..=1.0 + 1e-12).contains(&f));
        prop_assert!((avg_fidelity(&u, &u) - 1.0).abs() < 1e-14);
    }

    #[test]
    fn small_angle_tracks_exact(eps in -0.01f64..0.01, phi in -0.01f64..0.01) {
        let a = amp_error_infidelity(eps);
        let p = phase_error_infidelity(phi);
        prop_assert!((a.exact - a.small_angle).abs() <= a.exact * 1e-3 + 1e-18);
        prop_assert!((p.exact - p.small_angle).abs() <= p.exact * 1e-3 + 1e-18);
    }

    #[test]
    fn stats_ignore_amplitude_scale_and_phase_offset(
        (amps, phases) in amp_phase_series(),
        k in 0.01f64..100.0,
        c in -720.0f64..720.0,
    ) {
        let base = compute_stats(&series(amps.clone(), phases.clone())).unwrap();
        let moved = compute_stats(&series(
            amps.iter().map(|a| a * k).collect(),
            phases.iter().map(|p| p + c).collect(),
        ))
        .unwrap();
        prop_assert!(close(base.amp_std_pct, moved.amp_std_pct, 1e-9));
        prop_assert!(close(base.amp_p2p_pct, moved.amp_p2p_pct, 1e-9));
        prop_assert!(close(base.phase_std_deg, moved.phase_std_deg, 1e-9));
        prop_assert!(close(base.phase_p2p_deg, moved.phase_p2p_deg, 1e-9));
    }

    #[test]
    fn stats_are_non_negative_and_std_below_p2p((amps, phases) in amp_phase_series()) {
        let s = compute_stats(&series(amps, phases)).unwrap();
        prop_assert!(s.amp_std_pct >= 0.0 && s.phase_std_deg >= 0.0);
        prop_assert!(s.amp_std_pct <= s.amp_p2p_pct + 1e-12);
        prop_assert!(s.phase_std_deg <= s.phase_p2p_deg + 1e-12);
    }

    #[test]
    fn normalization_is_idempotent((amps, phases) in amp_phase_series()) {
        let once = normalize_amplitude(&series(amps, phases)).unwrap();
        let mean = once.amplitudes.iter().sum::<f64>() / once.amplitudes.len() as f64;
        prop_assert!((mean - 1.0).abs() < 1e-12);
        let twice = normalize_amplitude(&once).unwrap();
        for (a, b) in once.amplitudes.iter().zip(&twice.amplitudes) {
            prop_assert!((a - b).abs() < 1e-12);
        }
    }

    #[test]
    fn unwrap_recovers_slow_drift(start in -179.0f64..180.0, steps in prop::collection::vec(-170.0f64..170.0, 1..100)) {
        let mut truth = vec![start];
        for s in &steps {
            truth.push(truth.last().unwrap() + s);
        }
        let wrapped: Vec<f64> = truth.iter().map(|&x| wrap_degrees(x)).collect();
        let unwrapped = unwrap_phase(&wrapped);
        for (u, t) in unwrapped.iter().zip(&truth) {
            prop_assert!((u - t).abs() < 1e-9, "{u} vs {t}");
        }
    }

    #[test]
    fn unwrap_only_adds_turns(raw in prop::collection::vec(-180.0f64..180.0, 1..60)) {
        let u = unwrap_phase(&raw);
        for (x, r) in u.iter().zip(&raw) {
            let turns = (x - r) / 360.0;
            prop_assert!((turns - turns.round()).abs() < 1e-9);
        }
        for w in u.windows(2) {
            let d = w[1] - w[0];
            prop_assert!(d > -180.0 - 1e-9 && d <= 180.0 + 1e-9);
        }
    }

    #[test]
    fn schedule_pulses_are_disjoint(
        units in 1u8..5,
        cpu in 1u8..7,
        pulse_us in 1u64..300,
        gap_us in 0u64..300,
        slack in 0.0f64..2.0,
        rounds in 1u64..15,
    ) {
        let pitch = (pulse_us + gap_us) * 1000;
        let needed = pitch * units as u64 * cpu as u64;
        let period = needed + (needed as f64 * slack) as u64;
        let plan = MeasurementPlan::new(units, cpu, pulse_us * 1000, gap_us * 1000, period, period * rounds, 5_000_000_000).unwrap();
        let pulses = build_schedule(&plan).unwrap();
        prop_assert_eq!(pulses.len() as u64, rounds * plan.slots());
        for w in pulses.windows(2) {
            prop_assert!(w[0].start_ns + pulse_us * 1000 <= w[1].start_ns);
        }
        for r in 0..rounds {
            let in_round: Vec<_> = pulses.iter().filter(|p| p.round == r).collect();
            prop_assert_eq!(in_round.len() as u64, plan.slots());
            prop_assert!(in_round.iter().all(|p| p.start_ns >= plan.round_start_ns(r)
                && p.start_ns + pulse_us * 1000 <= plan.round_start_ns(r) + period));
        }
    }

    #[test]
    fn continuous_compensation_contracts(o in -1e-7f64..1e-7, g in 0.05f64..1.0, n in 0usize..40) {
        let c = Compensator::new(g, 0.0).unwrap();
        let got = c.settle(o, n);
        let want = o * (1.0 - g).powi(n as i32);
        prop_assert!((got - want).abs() <= 1e-12 * o.abs() + 1e-30);
    }

    #[test]
    fn quantized_compensation_reaches_the_floor(o in -1e-7f64..1e-7, g in 0.1f64..1.0, q_exp in -13.0f64..-10.0) {
        let c = Compensator::new(g, 10f64.powf(q_exp)).unwrap();
        let residual = c.settle(o, 400);
        prop_assert!(residual.abs() <= c.quantization_floor() * (1.0 + 1e-9));
    }

    #[test]
    fn equal_clocks_never_skew(o in -9e-7f64..9e-7, t_s in 0u64..200_000, epoch in 0u64..1_000_000) {
        let a = UnitClock { unit_id: 0, offset: o, reset_epoch_ns: epoch };
        let b = UnitClock { unit_id: 1, ..a };
        prop_assert_eq!(counter_skew(&[a, b], t_s * 1_000_000_000).unwrap(), 0);
    }

    #[test]
    fn counters_are_monotone(o in -9e-7f64..9e-7, t1 in 0u64..86_400_000_000_000, dt in 0u64..10_000_000_000) {
        let u = UnitClock { unit_id: 0, offset: o, reset_epoch_ns: 0 };
        prop_assert!(u.counter_at(t1).count <= u.counter_at(t1 + dt).count);
    }

    #[test]
    fn conversion_roundtrip(
        f in 1e8f64..8e9,
        phase in -720.0f64..720.0,
        center in -5e8f64..5e8,
        start_us in 0u64..86_400_000_000,
        vals in prop::collection::vec((-1.0f64..1.0, -1.0f64..1.0), 1..64),
    ) {
        let samples: Vec<Complex64> = vals.iter().map(|&(re, im)| Complex64::new(re, im)).collect();
        let env = ComplexEnvelope::from_samples(samples, 1e6, start_us * 1000, center).unwrap();
        let lo = LoState { id: "lo".into(), frequency: f, phase };
        let back = downconvert(upconvert(env.clone(), &lo), &lo);
        let (a, b) = (back.samples(), env.samples());
        let err: f64 = a.iter().zip(&b).map(|(x, y)| (x - y).norm_sqr()).sum::<f64>().sqrt();
        let norm: f64 = b.iter().map(Complex64::norm_sqr).sum::<f64>().sqrt();
        prop_assert!(err <= 1e-12 * norm.max(1e-300));
    }

    #[test]
    fn shared_lo_loopback_ignores_lo_phase(phase in -360.0f64..360.0, drift in -2.0f64..2.0, gain in 0.99f64..1.01) {
        let path = SignalPath {
            channel: ChannelId::new(2, 1),
            port: PortKind::Rout,
            nco_freq: 1e8,
            lo: Some("lo".into()),
            devices: vec![],
            baseline_gain: 1.0,
            baseline_phase: 40.0,
        };
        let pert = PathPerturbation { gain_multiplier: gain, phase_offset: drift };
        let loopback = |p: f64| {
            let lo = LoState { id: "lo".into(), frequency: 4.9e9, phase: p };
            let tx = synthesize_pulse(&path, 20e-6, 1e6, 2_600_000_000, pert).unwrap();
            downconvert(upconvert(tx, &lo), &lo).demodulated(1e8).collect::<Vec<_>>()
        };
        let reference = loopback(0.0);
        let shifted = loopback(phase);
        for (a, b) in reference.iter().zip(&shifted) {
            prop_assert_eq!(a.re.to_bits(), b.re.to_bits());
            prop_assert_eq!(a.im.to_bits(), b.im.to_bits());
        }
    }

    #[test]
    fn combine_preserves_each_pulse(n in 1usize..6, gap in 0usize..5, len in 1usize..8) {
        let path = SignalPath {
            channel: ChannelId::new(0, 0),
            port: PortKind::Ctrl,
            nco_freq: 5e9,
            lo: None,
            devices: vec![],
            baseline_gain: 1.0,
            baseline_phase: 0.0,
        };
        let envs: Vec<ComplexEnvelope> = (0..n)
            .map(|k| {
                let pert = PathPerturbation { gain_multiplier: 1.0 + k as f64 * 0.1, phase_offset: k as f64 * 10.0 };
                synthesize_pulse(&path, len as f64 * 1e-6, 1e6, (k * (len + gap)) as u64 * 1000, pert).unwrap()
            })
            .collect();
        let offsets: Vec<f64> = (0..n).map(|k| (k * (len + gap)) as f64 * 1e-6).collect();
        let out = combine(&envs, &offsets, 0).unwrap();
        let s = out.samples();
        for (k, env) in envs.iter().enumerate() {
            let at = k * (len + gap);
            for (x, y) in s[at..at + len].iter().zip(env.samples()) {
                prop_assert!((x - y).norm() < 1e-15);
            }
        }
    }

    #[test]
    fn euler_step_never_overshoots(
        temp in 0.0f64..80.0,
        c in 1.0f64..1e4,
        g in 0.01f64..10.0,
        frac in 0.01f64..1.0,
        ambient in 10.0f64..40.0,
        power in 0.0f64..5.0,
    ) {
        let node = ThermalNode::new("n", temp, c, g, 5.0, 0.0).unwrap();
        let fixed = node.fixed_point(ambient, power);
        let dt = node.max_stable_dt() * frac;
        let next = step_plant(&node, power, ambient, dt).unwrap();
        let before = (temp - fixed).abs();
        let after = (next.temperature - fixed).abs();
        prop_assert!(after <= before * (1.0 + 1e-12) + 1e-12);
    }

    #[test]
    fn perturbation_is_identity_at_reference(coeffs in prop::collection::vec((-1e-3f64..1e-3, -1.0f64..1.0, 0.0f64..60.0), 0..6)) {
        let devs: Vec<DeviceSensitivity> = coeffs
            .iter()
            .enumerate()
            .map(|(i, &(a, p, t))| DeviceSensitivity::new(format!("d{i}"), DeviceKind::Pll, a, p, t).unwrap())
            .collect();
        let p = perturbation_for(devs.iter().map(|d| (d, d.reference_temp))).unwrap();
        prop_assert_eq!(p, PathPerturbation::IDENTITY);
    }

    #[test]
    fn stats_csv_roundtrip(rows in prop::collection::vec((0u8..3, 0u8..5, 0.0f64..5.0, 0.0f64..1.0, 0.0f64..20.0, 0.0f64..3.0), 1..20)) {
        let stats: Vec<StabilityStats> = rows
            .iter()
            .map(|&(unit, channel, ap, as_, pp, ps)| StabilityStats {
                unit,
                channel,
                amp_p2p_pct: ap,
                amp_std_pct: as_,
                phase_p2p_deg: pp,
                phase_std_deg: ps,
            })
            .collect();
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("stats.csv");
        write_stats(&path, &stats).unwrap();
        prop_assert_eq!(read_stats(&path).unwrap(), stats);
    }
}

fn default_text() -> String {
    std::fs::read_to_string(common::default_scenario()).unwrap()
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    // The loader must answer every input with a value or a diagnostic.
    #[test]
    fn loader_never_panics_on_truncation(cut in 0usize..40_000) {
        let text = default_text();
        let mut cut = cut.min(text.len());
        while !text.is_char_boundary(cut) {
            cut -= 1;
        }
        if let Ok(file) = parse_scenario(&text[..cut], Path::new("cut.toml")) {
            let _ = build_scenario(file);
        }
    }

    #[test]
    fn loader_never_panics_on_edited_numbers(pos in 0usize..40_000, value in prop::sample::select(vec![
        "0", "-1", "1e308", "-1e-308", "0.0", "1e-12", "nan", "inf", "-inf", "99999999999",
    ])) {
        let text = default_text();
        // Replace the number nearest to `pos` with `value`.
        let bytes = text.as_bytes();
        let mut start = pos.min(bytes.len() - 1);
        while start < bytes.len() && !(bytes[start].is_ascii_digit()) {
            start += 1;
        }
        if start == bytes.len() {
            return Ok(());
        }
        while start > 0 && (bytes[start - 1].is_ascii_digit() || matches!(bytes[start - 1], b'.' | b'e' | b'-' | b'_')) {
            start -= 1;
        }
        let mut end = start;
        while end < bytes.len() && (bytes[end].is_ascii_alphanumeric() || matches!(bytes[end], b'.' | b'-' | b'_')) {
            end += 1;
        }
        let edited = format!("{}{}{}", &text[..start], value, &text[end..]);
        if let Ok(file) = parse_scenario(&edited, Path::new("edited.toml")) {
            let _ = build_scenario(file);
        }
    }
}

#[test]
fn default_scenario_builds() {
    let file = parse_scenario(&default_text(), Path::new("default.toml")).unwrap();
    let s = build_scenario(file).unwrap();
    assert_eq!(s.setup.plan.slots(), 15);
    assert_eq!(s.setup.plan.rounds(), 66_461);
    assert_eq!(s.setup.plan.sync_ticks_per_round(), Some(81_250));
}
