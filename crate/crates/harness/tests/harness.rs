use std::path::Path;
use std::process::Command;

use hml_harness::emit::{by_arm, emit_outputs, mean_ci, read_arm_csv, read_outcome, series, thresholds, write_arm_csv};
use hml_harness::run::Fingerprint;
use hml_harness::spec::CurriculumKind;
use hml_harness::{run_experiment, ExperimentSpec, Format, HarnessError, Outcome, Preset, RunManifest, Scenario, TrialRow};

fn tiny(scenario: Scenario) -> ExperimentSpec {
    let mut spec = ExperimentSpec::builtin(scenario, Preset::Desk);
    spec.n_mc = 1;
    spec.n_blocks = 1;
    spec.trials_per_block = 5;
    spec.filter.n_particles = 20;
    spec.seed = 11;
    spec
}

fn strip_wall(ms: &[RunManifest]) -> Vec<RunManifest> {
    ms.iter()
        .cloned()
        .map(|mut m| {
            m.rows.iter_mut().for_each(|r| r.wall_ms = 0.0);
            m
        })
        .collect()
}

#[test]
fn one_run_of_five_trials_gives_five_rows_per_curriculum() {
    let mut spec = tiny(Scenario::Fig2b);
    spec.horizons = vec![2];
    let out = run_experiment(&spec).unwrap();
    assert!(out.complete());
    let ms = out.manifests();
    assert_eq!(ms.len(), 3);
    for m in ms {
        assert_eq!(m.rows.len(), 5);
        m.check().unwrap();
        assert_eq!(m.spec_hash, spec.hash());
        assert_eq!(m.fingerprint, Fingerprint::current());
        assert!(m.rows.iter().all(|r| r.target < 4 && (0.0..=2.0).contains(&r.fme_true)));
        assert!(m.rows.windows(2).all(|w| w[0].target != w[1].target));
    }
    let arms: Vec<&str> = ms.iter().map(|m| m.arm.as_str()).collect();
    assert_eq!(arms, ["random", "heuristic", "snmpc-P2-tau0.2"]);
}

#[test]
fn worker_count_does_not_change_results() {
    let mut spec = tiny(Scenario::Fig6a);
    spec.n_mc = 2;
    spec.trials_per_block = 4;
    spec.horizons = vec![2];
    let run_with = |threads: usize| {
        let pool = rayon::ThreadPoolBuilder::new().num_threads(threads).build().unwrap();
        pool.install(|| run_experiment(&spec).unwrap())
    };
    let (a, b) = (run_with(1), run_with(3));
    assert_eq!(a.manifests().len(), 4);
    assert_eq!(strip_wall(a.manifests()), strip_wall(b.manifests()));
}

#[test]
fn mismatched_arms_differ_from_matched() {
    let mut spec = tiny(Scenario::Fig6a);
    spec.horizons = vec![2];
    let out = run_experiment(&spec).unwrap();
    let ms = out.manifests();
    assert_eq!(ms[0].arm, "snmpc-P2-tau0.2");
    assert_eq!(ms[1].arm, "snmpc-P2-tau0.2-AB");
    // the estimator runs on a different model
    assert_ne!(ms[0].rows[0].fme_est, ms[1].rows[0].fme_est);
}

#[test]
fn oracle_planning_mode_runs() {
    let mut spec = tiny(Scenario::Fig2a);
    spec.curricula = vec![CurriculumKind::Snmpc];
    spec.horizons = vec![1];
    spec.planning_state = hml_harness::spec::PlanningState::OracleState;
    assert!(run_experiment(&spec).unwrap().complete());
}

#[test]
fn desk_fig2b_writes_one_csv_per_curriculum() {
    let spec = ExperimentSpec::builtin(Scenario::Fig2b, Preset::Desk);
    assert_eq!((spec.n_blocks, spec.n_mc), (2, 3));
    let out = run_experiment(&spec).unwrap();
    assert!(out.complete());
    let dir = tempfile::tempdir().unwrap();
    let files = emit_outputs(&out, spec.fme_threshold, &[Format::Csv], dir.path()).unwrap();
    for arm in spec.arms() {
        let p = dir.path().join(format!("{}.csv", arm.label));
        assert!(files.contains(&p), "{}", p.display());
        let rows = read_arm_csv(&p).unwrap();
        assert_eq!(rows.len(), 3);
        assert!(rows.values().all(|r| r.len() == 120));
    }
}

fn manifest(arm: &str, run: usize, fme: &[f64]) -> RunManifest {
    RunManifest {
        version: 1,
        spec_hash: "x".into(),
        scenario: Scenario::Fig2b,
        arm: arm.into(),
        run,
        seed: run as u64,
        expected_trials: fme.len(),
        rows: fme
            .iter()
            .enumerate()
            .map(|(i, f)| TrialRow {
                trial: i + 1,
                target: i % 4,
                re: 0.1 / 3.0,
                sot: 1.0 / 7.0,
                fme_true: *f,
                fme_est: f + 0.01,
                wall_ms: 1.5e-3,
            })
            .collect(),
        fingerprint: Fingerprint::current(),
        incomplete: false,
        error: None,
    }
}

#[test]
fn csv_round_trips_manifest_values() {
    let ms = [manifest("a", 0, &[0.9, 0.5, 0.123456789012345]), manifest("a", 1, &[0.8, 1e-17, 0.3])];
    let dir = tempfile::tempdir().unwrap();
    let p = dir.path().join("a.csv");
    write_arm_csv(&p, &ms.iter().collect::<Vec<_>>()).unwrap();
    let back = read_arm_csv(&p).unwrap();
    assert_eq!(back[&0], ms[0].rows);
    assert_eq!(back[&1], ms[1].rows);
}

#[test]
fn json_mirrors_the_outcome() {
    let out = Outcome::Curriculum { manifests: vec![manifest("a", 0, &[0.5, 0.4]), manifest("b", 0, &[0.6, 0.2])] };
    let dir = tempfile::tempdir().unwrap();
    emit_outputs(&out, 0.2, &[Format::Json], dir.path()).unwrap();
    assert_eq!(read_outcome(&dir.path().join("outcome.json")).unwrap(), out);
}

#[test]
fn confidence_band_uses_the_normal_formula() {
    let (m, ci) = mean_ci(&[1.0, 2.0, 3.0, 4.0]);
    let sd = (5.0f64 / 3.0).sqrt();
    assert_eq!(m, 2.5);
    assert!((ci - 1.96 * sd / 2.0).abs() < 1e-12);
    assert_eq!(mean_ci(&[0.7]), (0.7, 0.0));

    let one = [manifest("a", 0, &[0.9, 0.4])];
    let s = series(&one.iter().collect::<Vec<_>>());
    assert!(s.iter().all(|p| p.fme_true.1 == 0.0 && p.sot.1 == 0.0 && p.n == 1));
}

#[test]
fn threshold_is_first_crossing_of_the_estimate() {
    let ms = [manifest("a", 0, &[0.5, 0.18, 0.3, 0.1]), manifest("a", 1, &[0.5, 0.4, 0.3])];
    assert_eq!(ms[0].trials_to_threshold(0.2), Some(2));
    assert_eq!(ms[1].trials_to_threshold(0.2), None);
    assert_eq!(thresholds(&ms.iter().collect::<Vec<_>>(), 0.2), [(2, false), (3, true)]);
}

#[test]
fn svg_has_one_band_and_line_per_arm() {
    let out = Outcome::Curriculum {
        manifests: vec![manifest("a", 0, &[0.5, 0.4]), manifest("a", 1, &[0.6, 0.3]), manifest("b", 0, &[0.6, 0.2])],
    };
    assert_eq!(by_arm(out.manifests()).len(), 2);
    let dir = tempfile::tempdir().unwrap();
    emit_outputs(&out, 0.2, &[Format::Svg], dir.path()).unwrap();
    let svg = std::fs::read_to_string(dir.path().join("fme.svg")).unwrap();
    assert!(svg.starts_with("<svg"));
    assert_eq!(svg.matches("<polygon").count(), 2);
    assert_eq!(svg.matches("<polyline").count(), 2);
}

#[test]
fn failed_run_leaves_a_partial_manifest() {
    let mut spec = tiny(Scenario::Fig2a);
    spec.learner.sigma_u = 1e9;
    let out = run_experiment(&spec).unwrap();
    let m = &out.manifests()[0];
    assert!(m.incomplete);
    assert!(m.rows.len() < 5);
    assert!(m.error.as_deref().unwrap().contains("diverged"));
    assert!(!out.complete());
}

#[test]
fn unwritable_destination_is_an_io_error() {
    let out = Outcome::Curriculum { manifests: vec![manifest("a", 0, &[0.5])] };
    let dir = tempfile::tempdir().unwrap();
    let file = dir.path().join("f");
    std::fs::write(&file, "").unwrap();
    let err = emit_outputs(&out, 0.2, &[Format::Csv], &file.join("sub")).unwrap_err();
    assert!(matches!(err, HarnessError::Io(_)));
    assert_eq!(err.exit_code(), 3);
    let empty = Outcome::Curriculum { manifests: vec![] };
    assert!(emit_outputs(&empty, 0.2, &[Format::Csv], dir.path()).is_err());
}

#[test]
fn ucm_scenario_reports_both_phases() {
    let mut spec = ExperimentSpec::builtin(Scenario::Ucm, Preset::Desk);
    spec.curricula = vec![CurriculumKind::Random];
    spec.n_mc = 2;
    spec.trials_per_block = 8;
    spec.filter.n_particles = 20;
    let Outcome::Ucm { manifests, results, phases } = run_experiment(&spec).unwrap() else { panic!() };
    assert_eq!(manifests.len(), 2);
    assert_eq!(phases.len(), 2);
    assert!(results.iter().all(|r| r.points.iter().all(|p| (0.0..=1.0).contains(&p.fraction))));
    assert!(phases.iter().all(|p| p.n_runs == 2 && p.ci_low <= p.mean && p.mean <= p.ci_high));
}

#[test]
fn fit_scenario_produces_a_selection() {
    let mut spec = ExperimentSpec::builtin(Scenario::Fit, Preset::Desk);
    spec.fit.reference_trials = 4;
    spec.fit.ga.exploration.generations = 2;
    spec.fit.ga.exploitation.generations = 2;
    spec.fit.ga.exploration.population = 8;
    spec.fit.ga.exploitation.population = 4;
    let Outcome::Fit { initial_median_re, best_re, result } = run_experiment(&spec).unwrap() else { panic!() };
    assert_eq!(initial_median_re.len(), 1);
    assert!(best_re[0] <= initial_median_re[0]);
    assert!(spec.fit.ga.bounds.contains(&result.selected.params.fitted()));
}

#[test]
fn filters_scenario_runs_every_filter() {
    let mut spec = ExperimentSpec::builtin(Scenario::Filters, Preset::Desk);
    spec.n_mc = 3;
    spec.filter.n_particles = 20;
    let Outcome::Filters { bench } = run_experiment(&spec).unwrap() else { panic!() };
    assert_eq!((bench.ekf.len(), bench.ukf.len(), bench.pf.len()), (3, 3, 3));
}

fn cli(args: &[&str]) -> (i32, String) {
    let out = Command::new(env!("CARGO_BIN_EXE_curriculum")).args(args).output().unwrap();
    (out.status.code().unwrap_or(-1), String::from_utf8_lossy(&out.stdout).into_owned())
}

fn write_spec(dir: &Path, spec: &ExperimentSpec) -> String {
    let p = dir.join("spec.in.json");
    std::fs::write(&p, spec.to_json()).unwrap();
    p.to_str().unwrap().to_string()
}

#[test]
fn cli_runs_a_spec_and_re_emits() {
    let dir = tempfile::tempdir().unwrap();
    let spec = write_spec(dir.path(), &tiny(Scenario::Fig2a));
    let out = dir.path().join("out");
    let (code, stdout) = cli(&["simulate", "--spec", &spec, "--seed", "3", "--out", out.to_str().unwrap()]);
    assert_eq!(code, 0, "{stdout}");
    assert!(stdout.contains("random"));
    for f in ["random.csv", "summary.csv", "thresholds.csv", "fme.svg", "outcome.json", "spec.json"] {
        assert!(out.join(f).exists(), "{f}");
    }
    let written = ExperimentSpec::from_json(&std::fs::read_to_string(out.join("spec.json")).unwrap()).unwrap();
    assert_eq!(written.seed, 3);

    let again = dir.path().join("again");
    let input = out.join("outcome.json");
    let (code, _) =
        cli(&["emit", "--input", input.to_str().unwrap(), "--out", again.to_str().unwrap(), "--format", "csv"]);
    assert_eq!(code, 0);
    assert_eq!(std::fs::read(out.join("random.csv")).unwrap(), std::fs::read(again.join("random.csv")).unwrap());
}

#[test]
fn cli_exit_codes() {
    let dir = tempfile::tempdir().unwrap();
    let out = dir.path().join("o");
    let o = out.to_str().unwrap();
    let bad = dir.path().join("bad.json");
    std::fs::write(&bad, r#"{"n_mc": 0}"#).unwrap();
    assert_eq!(cli(&["simulate", "--spec", bad.to_str().unwrap(), "--out", o]).0, 2);
    assert_eq!(cli(&["simulate", "--scenario", "fig9", "--out", o]).0, 2);
    assert_eq!(cli(&["filters", "--scenario", "fig2b", "--out", o]).0, 2);

    let mut diverging = tiny(Scenario::Fig2a);
    diverging.learner.sigma_u = 1e9;
    let spec = write_spec(dir.path(), &diverging);
    assert_eq!(cli(&["simulate", "--spec", &spec, "--out", o]).0, 1);

    let file = dir.path().join("plain");
    std::fs::write(&file, "").unwrap();
    let spec = write_spec(dir.path(), &tiny(Scenario::Fig2a));
    assert_eq!(cli(&["simulate", "--spec", &spec, "--out", file.to_str().unwrap()]).0, 3);
}
