mod common;

use std::fs;

use proptest::prelude::*;

use fedsplit::experiment::{
    compare_report, emit, load_curves, polyfit, polyval, run_experiment, ConfigFile, CurveSet,
    ExperimentSpec, Group, Mode, TransportChoice, WINDOWS,
};

fn small(group: Group, mode: Mode) -> ExperimentSpec {
    ExperimentSpec {
        epochs: 8,
        runs: 3,
        ..ExperimentSpec::new(group, mode)
    }
}

#[test]
fn polyfit_matches_exact_least_squares() {
    for seed in 0..50 {
        let pts = common::random_fit_instance(seed);
        for degree in [1, 2, 4] {
            let got = polyfit(&pts, degree).unwrap();
            let want = common::exact_normal_equations(&pts, degree);
            // Compare fitted values rather than coefficients: the monomial
            // basis is badly conditioned away from the origin.
            let scale = pts.iter().map(|p| p.1.abs()).fold(1.0, f64::max);
            for &(x, _) in &pts {
                let diff = (polyval(&got, x) - polyval(&want, x)).abs();
                assert!(diff <= 1e-8 * scale, "seed {seed} degree {degree}: {diff}");
            }
        }
    }
}

#[test]
fn polyfit_rejects_degenerate_input() {
    assert!(polyfit(&[(1.0, 2.0), (1.0, 3.0), (1.0, 4.0)], 1).is_err());
    assert!(polyfit(&[(0.0, 1.0)], 2).is_err());
    assert!(polyfit(&[(0.0, 1.0), (1.0, f64::NAN)], 1).is_err());
}

proptest! {
    #[test]
    fn polyfit_reproduces_exact_polynomials(
        coef in prop::collection::vec(-10.0f64..10.0, 1..5),
        n_extra in 0usize..20,
    ) {
        let n = coef.len() + n_extra;
        let pts: Vec<(f64, f64)> = (0..n).map(|i| (i as f64, polyval(&coef, i as f64))).collect();
        let fit = polyfit(&pts, coef.len() - 1).unwrap();
        let scale = pts.iter().map(|p| p.1.abs()).fold(1.0, f64::max);
        for &(x, y) in &pts {
            prop_assert!((polyval(&fit, x) - y).abs() <= 1e-9 * scale);
        }
    }
}

#[test]
fn emitted_files_agree_with_curves() {
    let curves = run_experiment(&small(Group::Similar, Mode::Coop)).unwrap();
    let dir = tempfile::tempdir().unwrap();
    let paths = emit(&curves, dir.path()).unwrap();

    let raw = fs::read_to_string(&paths.raw).unwrap();
    let mut lines = raw.lines();
    assert_eq!(lines.next(), Some("run,agent,epoch,return"));
    let rows: Vec<Vec<String>> = lines
        .map(|l| l.split(',').map(String::from).collect())
        .collect();
    assert_eq!(rows.len(), 3 * 2 * 8);

    // Recompute the mean curve straight from raw.csv.
    for (a, agent) in ["A", "B"].iter().enumerate() {
        for epoch in 0..8 {
            let vals: Vec<f64> = rows
                .iter()
                .filter(|r| r[1] == *agent && r[2] == epoch.to_string())
                .map(|r| r[3].parse().unwrap())
                .collect();
            assert_eq!(vals.len(), 3);
            let mean = vals.iter().sum::<f64>() / 3.0;
            assert!((mean - curves.mean[a][epoch]).abs() < 1e-12);
        }
    }

    let mean = fs::read_to_string(&paths.mean).unwrap();
    let mut lines = mean.lines();
    assert_eq!(lines.next(), Some("agent,epoch,mean,smooth"));
    for (i, line) in lines.enumerate() {
        let f: Vec<&str> = line.split(',').collect();
        let (a, e) = (i / 8, i % 8);
        assert_eq!(f[0], curves.agents[a]);
        assert_eq!(f[2].parse::<f64>().unwrap(), curves.mean[a][e]);
        assert_eq!(f[3].parse::<f64>().unwrap(), curves.smooth[a][e]);
    }

    let svg = fs::read_to_string(&paths.plot).unwrap();
    assert!(svg.starts_with("<svg") || svg.starts_with("<?xml"));
    assert_eq!(svg.matches("<polyline").count(), 4);

    assert_eq!(load_curves(dir.path()).unwrap(), curves);
}

#[test]
fn smooth_curve_is_the_least_squares_quartic() {
    let curves = run_experiment(&small(Group::Same, Mode::SoloA)).unwrap();
    let pts: Vec<(f64, f64)> = curves.mean[0]
        .iter()
        .enumerate()
        .map(|(i, &y)| (i as f64, y))
        .collect();
    let want = common::exact_normal_equations(&pts, 4);
    for (e, s) in curves.smooth[0].iter().enumerate() {
        assert!((s - polyval(&want, e as f64)).abs() < 1e-9);
    }
}

#[test]
fn outputs_are_byte_reproducible() {
    let spec = small(Group::DiffFat, Mode::Coop);
    let read = |curves: &CurveSet| {
        let dir = tempfile::tempdir().unwrap();
        let p = emit(curves, dir.path()).unwrap();
        [p.raw, p.mean, p.plot].map(|f| fs::read(f).unwrap())
    };
    let first = read(&run_experiment(&spec).unwrap());
    let second = read(&run_experiment(&spec).unwrap());
    assert_eq!(first, second);

    let other_seed = ExperimentSpec {
        base_seed: 1,
        ..spec
    };
    assert_ne!(read(&run_experiment(&other_seed).unwrap())[0], first[0]);
}

#[test]
fn runs_do_not_depend_on_how_many_are_requested() {
    let three = run_experiment(&small(Group::Same, Mode::Coop)).unwrap();
    let one = run_experiment(&ExperimentSpec {
        runs: 1,
        ..small(Group::Same, Mode::Coop)
    })
    .unwrap();
    assert_eq!(one.raw[0], three.raw[0]);
}

#[test]
fn config_file_overrides_defaults() {
    let text = r#"
        [experiment]
        group = "diff-fat"
        mode = "solo-b"
        runs = 2
        epochs = 5
        seed = 11

        [agent.B]
        lr = 0.05
        train_steps_per_epoch = 16

        [env.B]
        kind = "cart_pole"
        gravity = 9.0

        [federation]
        transport = "network"
        blackboard = "127.0.0.1:9"
    "#;
    let cfg = ConfigFile::parse(text).unwrap();
    let spec = cfg.to_spec(Group::Same, Mode::Coop).unwrap();
    assert_eq!((spec.group, spec.mode), (Group::DiffFat, Mode::SoloB));
    assert_eq!((spec.runs, spec.epochs, spec.base_seed), (2, 5, 11));
    assert_eq!(
        (spec.hyper_b.lr, spec.hyper_b.train_steps_per_epoch),
        (0.05, 16)
    );
    assert_eq!(spec.hyper_b.gamma, 0.9);
    assert_eq!(spec.hyper_a.lr, 0.01);
    assert_eq!(spec.env_b.gravity, 9.0);
    // A full [env.B] table replaces the group's pole settings.
    assert_eq!(spec.env_b.pole_half_length, 0.5);
    assert_eq!(
        spec.transport,
        TransportChoice::Network {
            blackboard: Some("127.0.0.1:9".into())
        }
    );

    let round_trip = ConfigFile::parse(&ConfigFile::from_spec(&spec).to_toml())
        .unwrap()
        .to_spec(Group::Same, Mode::Coop)
        .unwrap();
    assert_eq!(round_trip.label(), spec.label());
    assert_eq!(round_trip.hyper_b, spec.hyper_b);
    assert_eq!(round_trip.env_b, spec.env_b);
}

#[test]
fn config_file_errors() {
    for bad in [
        "[experiment]\ngroup = \"nope\"",
        "[experiment]\nrunz = 3",
        "[agent.C]\nlr = 0.1",
        "[agent.A]\nlr = -1.0",
        "[env.A]\ngravity = -2.0",
        "[federation]\ntransport = \"carrier-pigeon\"",
        "[federation]\nkey = \"abcd\"",
        "not toml at all [",
    ] {
        let parsed = ConfigFile::parse(bad).and_then(|c| c.to_spec(Group::Same, Mode::Coop));
        let valid = parsed.and_then(|s| s.validate().map(|_| s));
        assert!(valid.is_err(), "accepted {bad:?}");
    }
}

#[test]
fn manifest_never_contains_the_key() {
    let mut spec = small(Group::Same, Mode::Coop);
    spec.key = Some(fedsplit::federation::SharedKey::from_bytes([7; 32]));
    let text = ConfigFile::from_spec(&spec).to_toml();
    assert!(!text.contains(&"07".repeat(32)));
    assert!(!text.contains("key"));
}

#[test]
fn compare_ranks_and_rejects_mismatches() {
    let make = |level: f64, epochs: usize| {
        let curve: Vec<f64> = (0..epochs).map(|e| level + e as f64 * 0.01).collect();
        CurveSet::from_raw(vec!["A".into()], vec![vec![curve]]).unwrap()
    };
    let sets = vec![
        ("low".to_string(), make(10.0, 100)),
        ("high".to_string(), make(20.0, 100)),
        ("close".to_string(), make(20.5, 100)),
    ];
    let report = compare_report(&sets, "A", &WINDOWS).unwrap();
    for ranking in &report.rankings {
        assert_eq!(ranking, &["close", "high", "low"]);
    }
    assert_eq!(report.flags.len(), WINDOWS.len());
    assert!(report
        .flags
        .iter()
        .all(|f| f.contains("close") && f.contains("high")));
    let text = report.to_string();
    assert!(text.contains("close > high > low"));

    assert!(compare_report(&sets, "B", &WINDOWS).is_err());
    let ragged = vec![
        ("x".to_string(), make(1.0, 100)),
        ("y".to_string(), make(1.0, 50)),
    ];
    assert!(compare_report(&ragged, "A", &WINDOWS).is_err());
    assert!(compare_report(&[], "A", &WINDOWS).is_err());
}

#[test]
fn short_curves_leave_windows_empty() {
    let cs = CurveSet::from_raw(vec!["A".into()], vec![vec![vec![1.0; 30]]]).unwrap();
    let report = compare_report(&[("s".into(), cs)], "A", &WINDOWS).unwrap();
    assert_eq!(report.rows[0].means, vec![None, None, None]);
}
