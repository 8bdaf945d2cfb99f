//! Acceptance criteria. Each test prints one PASS/FAIL line to stderr
//! (uncaptured) and then asserts it.
//!
//! Curriculum runs: published learner parameters, 10 Monte Carlo runs of
//! 8 x 60 trials, 100-particle filter, estimated-state planning. Runs are
//! cached and shared between criteria.

use std::collections::HashMap;
use std::io::Write;
use std::sync::{Arc, Mutex, OnceLock};

use hml_core::curriculum::{admissible, snmpc_q_values, softmin_probs, stage_cost, AdmissibleRule, CurriculumConfig};
use hml_core::estimation::{init_ensemble, pf_assimilate_trial, FilterConfig};
use hml_core::fitting::{dominates, pareto_rank, sbx_pair};
use hml_core::metrics::TrialMetrics;
use hml_core::model::{
    drift_rhs, integrate_steps, integrate_trial, synthesize_system, GameConfig, Hml, Joint, LearnerState, ModelParams,
    Point, SynergySystem,
};
use hml_core::rng;
use hml_core::ucm::{variance_decompose, Subspaces};
use hml_harness::emit::{mean_ci, thresholds};
use hml_harness::spec::{CurriculumKind, Pairing};
use hml_harness::{run_experiment, ExperimentSpec, Outcome, Preset, RunManifest, Scenario};
use rand::Rng;

const SEED: u64 = 2024;
const N_MC: usize = 10;
const PARTICLES: usize = 100;

fn report(criterion: u32, pass: bool, detail: &str) {
    let verdict = if pass { "PASS" } else { "FAIL" };
    let _ = writeln!(std::io::stderr(), "criterion {criterion}: {verdict}: {detail}");
}

#[derive(Clone, Copy)]
struct ArmKey {
    kind: CurriculumKind,
    horizon: usize,
    tau: f64,
    pairing: Pairing,
    n_rollouts: usize,
}

fn snmpc(horizon: usize, tau: f64, pairing: Pairing) -> ArmKey {
    // six-step trees are run with two rollouts per edge to bound the cost
    let n_rollouts = if horizon >= 6 { 2 } else { 5 };
    ArmKey { kind: CurriculumKind::Snmpc, horizon, tau, pairing, n_rollouts }
}

fn simple(kind: CurriculumKind) -> ArmKey {
    ArmKey { kind, horizon: 1, tau: 0.0, pairing: Pairing::Matched, n_rollouts: 1 }
}

type Cache = Mutex<HashMap<String, Arc<OnceLock<Vec<RunManifest>>>>>;

fn cache() -> &'static Cache {
    static C: OnceLock<Cache> = OnceLock::new();
    C.get_or_init(Default::default)
}

fn runs(key: ArmKey) -> Vec<RunManifest> {
    let id = format!("{:?}-{}-{}-{:?}-{}", key.kind, key.horizon, key.tau, key.pairing, key.n_rollouts);
    let slot = cache().lock().unwrap().entry(id).or_default().clone();
    slot.get_or_init(|| {
        let mut spec = ExperimentSpec::builtin(Scenario::Fig2b, Preset::Paper);
        spec.seed = SEED;
        spec.n_mc = N_MC;
        spec.curricula = vec![key.kind];
        spec.horizons = vec![key.horizon];
        spec.taus = vec![key.tau];
        spec.pairings = vec![key.pairing];
        spec.curriculum.n_rollouts = key.n_rollouts;
        spec.filter.n_particles = PARTICLES;
        let out = run_experiment(&spec).expect("experiment runs");
        let Outcome::Curriculum { manifests } = out else { panic!("curriculum outcome expected") };
        for m in &manifests {
            m.check().expect("manifest self-check");
            assert!(!m.incomplete, "{} run {} incomplete: {:?}", m.arm, m.run, m.error);
        }
        manifests
    })
    .clone()
}

fn fme_at(runs: &[RunManifest], trial: usize) -> (f64, f64) {
    let xs: Vec<f64> = runs.iter().map(|m| m.rows[trial - 1].fme_true).collect();
    mean_ci(&xs)
}

fn final_fme(runs: &[RunManifest]) -> (f64, f64) {
    fme_at(runs, runs[0].rows.len())
}

/// `b` is no larger than `a`, up to the larger of the two CI half widths.
fn not_above(b: (f64, f64), a: (f64, f64)) -> bool {
    b.0 <= a.0 + a.1.max(b.1)
}

fn fmt(x: (f64, f64)) -> String {
    format!("{:.3}+/-{:.3}", x.0, x.1)
}

#[test]
fn criterion_1_curriculum_ordering() {
    let t = |k: ArmKey| {
        let r = runs(k);
        let refs: Vec<&RunManifest> = r.iter().collect();
        let xs: Vec<f64> = thresholds(&refs, 0.2).iter().map(|(t, _)| *t as f64).collect();
        mean_ci(&xs)
    };
    let random = t(simple(CurriculumKind::Random));
    let heuristic = t(simple(CurriculumKind::Heuristic));
    let p4 = t(snmpc(4, 0.2, Pairing::Matched));
    let pass = p4.0 < heuristic.0 && heuristic.0 <= random.0 && random.0 - p4.0 >= 30.0;
    report(
        1,
        pass,
        &format!(
            "trials to estimated FME <= 0.2: snmpc P4 {}, heuristic {}, random {} (saving {:.1})",
            fmt(p4),
            fmt(heuristic),
            fmt(random),
            random.0 - p4.0
        ),
    );
    assert!(pass);
}

#[test]
fn criterion_2_horizon_monotonicity() {
    let f: Vec<(f64, f64)> =
        [3, 4, 6].iter().map(|&h| fme_at(&runs(snmpc(h, 0.2, Pairing::Matched)), 240)).collect();
    let pass = not_above(f[1], f[0]) && not_above(f[2], f[1]);
    report(2, pass, &format!("FME at trial 240: P3 {}, P4 {}, P6 {}", fmt(f[0]), fmt(f[1]), fmt(f[2])));
    assert!(pass);
}

#[test]
fn criterion_3_mismatch_degradation() {
    let ab: Vec<(f64, f64)> =
        [2, 4, 6].iter().map(|&h| final_fme(&runs(snmpc(h, 0.2, Pairing::Mismatched)))).collect();
    let aa: Vec<(f64, f64)> = [2, 4, 6].iter().map(|&h| final_fme(&runs(snmpc(h, 0.2, Pairing::Matched)))).collect();
    let chain = not_above(ab[0], ab[1]) && not_above(ab[1], ab[2]);
    let worse = (0..3).all(|i| not_above(aa[i], ab[i]));
    let pass = chain && worse;
    report(
        3,
        pass,
        &format!(
            "final FME A-B: P2 {}, P4 {}, P6 {}; A-A: P2 {}, P4 {}, P6 {}",
            fmt(ab[0]),
            fmt(ab[1]),
            fmt(ab[2]),
            fmt(aa[0]),
            fmt(aa[1]),
            fmt(aa[2])
        ),
    );
    assert!(pass);
}

#[test]
fn criterion_4_tau_trade_off() {
    // swept at P = 2
    let taus = [0.0, 0.03, 0.2, 1.0];
    let matched: Vec<(f64, f64)> = taus.iter().map(|&t| final_fme(&runs(snmpc(2, t, Pairing::Matched)))).collect();
    let mism: Vec<(f64, f64)> = taus.iter().map(|&t| final_fme(&runs(snmpc(2, t, Pairing::Mismatched)))).collect();
    let monotone = matched.windows(2).all(|w| not_above(w[0], w[1]));
    let interior = mism[1].0.min(mism[2].0);
    let dip = interior < mism[0].0 && interior < mism[3].0;
    let pass = monotone && dip;
    let show = |v: &[(f64, f64)]| {
        taus.iter().zip(v).map(|(t, x)| format!("tau {t}: {}", fmt(*x))).collect::<Vec<_>>().join(", ")
    };
    report(4, pass, &format!("final FME matched [{}]; mismatched [{}]", show(&matched), show(&mism)));
    assert!(pass);
}

#[test]
fn criterion_5_filter_benchmark() {
    let mut spec = ExperimentSpec::builtin(Scenario::Filters, Preset::Paper);
    spec.seed = SEED;
    let Outcome::Filters { bench } = run_experiment(&spec).unwrap() else { panic!("filters outcome expected") };
    assert_eq!(bench.pf.len(), 100);
    let (e, u, p) = (bench.ekf_stats(), bench.ukf_stats(), bench.pf_stats());
    let pass = p.0 < e.0 && p.0 < u.0 && p.1 < e.1 && p.1 < u.1 && e.1 < u.1;
    report(
        5,
        pass,
        &format!(
            "final |W_est - W_hat|_F mean/std over 100 runs: EKF {:.4}/{:.4}, UKF {:.4}/{:.4}, PF {:.4}/{:.4}",
            e.0, e.1, u.0, u.1, p.0, p.1
        ),
    );
    assert!(pass);
}

fn correlation(a: &[f64], b: &[f64]) -> f64 {
    let n = a.len() as f64;
    let (ma, mb) = (a.iter().sum::<f64>() / n, b.iter().sum::<f64>() / n);
    let cov: f64 = a.iter().zip(b).map(|(x, y)| (x - ma) * (y - mb)).sum();
    let va: f64 = a.iter().map(|x| (x - ma).powi(2)).sum();
    let vb: f64 = b.iter().map(|y| (y - mb).powi(2)).sum();
    cov / (va * vb).sqrt()
}

#[test]
fn criterion_6_pf_tracking() {
    let r = runs(simple(CurriculumKind::Random));
    let corr: Vec<f64> = r
        .iter()
        .map(|m| {
            assert_eq!(m.rows.len(), 480);
            let est: Vec<f64> = m.rows.iter().map(|x| x.fme_est).collect();
            let tru: Vec<f64> = m.rows.iter().map(|x| x.fme_true).collect();
            correlation(&est, &tru)
        })
        .collect();
    let min = corr.iter().copied().fold(f64::INFINITY, f64::min);
    let pass = min >= 0.9;
    report(6, pass, &format!("correlation of estimated and true FME over 480 trials, min over {} runs: {min:.4}", corr.len()));
    assert!(pass);
}

fn rk4(init: &LearnerState, target: &Point, sys: &SynergySystem, p: &ModelParams, t_end: f64, h: f64) -> LearnerState {
    let mut s = init.clone();
    for _ in 0..(t_end / h).round() as usize {
        let k1 = drift_rhs(&s, target, sys, p);
        let mut m = s.clone();
        m.axpy(h / 2.0, &k1);
        let k2 = drift_rhs(&m, target, sys, p);
        let mut m = s.clone();
        m.axpy(h / 2.0, &k2);
        let k3 = drift_rhs(&m, target, sys, p);
        let mut m = s.clone();
        m.axpy(h, &k3);
        let k4 = drift_rhs(&m, target, sys, p);
        s.axpy(h / 6.0, &k1);
        s.axpy(h / 3.0, &k2);
        s.axpy(h / 3.0, &k3);
        s.axpy(h / 6.0, &k4);
    }
    s
}

/// 1-based front index of every point.
fn brute_force_front(objs: &[[f64; 3]]) -> Vec<usize> {
    let mut rank = vec![usize::MAX; objs.len()];
    let mut level = 1;
    while rank.contains(&usize::MAX) {
        let open: Vec<usize> = (0..objs.len()).filter(|&i| rank[i] == usize::MAX).collect();
        let front: Vec<usize> =
            open.iter().copied().filter(|&i| !open.iter().any(|&j| dominates(&objs[j], &objs[i]))).collect();
        for i in front {
            rank[i] = level;
        }
        level += 1;
    }
    rank
}

#[test]
fn criterion_7_property_suites() {
    let game = GameConfig::default();
    let published = ModelParams::published();
    let noiseless = published.noiseless();
    let mut failures: Vec<String> = Vec::new();
    let mut check = |ok: bool, what: String| {
        if !ok {
            failures.push(what);
        }
    };
    for seed in 0..25u64 {
        let sys = synthesize_system(seed, 100).unwrap();
        let mut r = rng::stream(seed);

        // particle weights stay normalized
        let hml = Hml::new(&sys, &published, &game);
        let cfg = FilterConfig { n_particles: 50, ..Default::default() };
        let truth = LearnerState::naive(&sys, &mut r);
        let (_, rec) = integrate_trial(&truth, None, &game.targets[(seed % 4) as usize], hml, 0.0, &mut r).unwrap();
        let ens = pf_assimilate_trial(&init_ensemble(&sys, &cfg, &mut r).unwrap(), &rec, hml, &cfg, seed);
        let total: f64 = ens.weights.iter().sum();
        check((total - 1.0).abs() < 1e-12 && ens.weights.iter().all(|w| *w >= 0.0), format!("seed {seed}: weights sum {total}"));

        // orthogonal UCM split
        let basis = Subspaces::of(&sys.c).unwrap();
        for _ in 0..20 {
            let dev = Joint::from_fn(|_, _| 10.0 * rng::normal(&mut r));
            let (a, b) = basis.split(&dev);
            let rel = (a + b - dev.norm_squared()).abs() / dev.norm_squared();
            check(rel <= 1e-9, format!("seed {seed}: UCM additivity {rel:e}"));
        }

        // isotropic noise splits evenly per degree of freedom
        let tensor: Vec<Vec<Joint>> = (0..500).map(|_| vec![Joint::from_fn(|_, _| rng::normal(&mut r))]).collect();
        let fr = variance_decompose(&tensor, &sys.c).unwrap()[0].fraction;
        check((fr - 0.5).abs() <= 0.05, format!("seed {seed}: isotropic UCM fraction {fr}"));

        // softmin normalization and shift invariance
        let z: Vec<f64> = (0..4).map(|_| rng::normal(&mut r)).collect();
        let shift = 100.0 * rng::normal(&mut r);
        for tau in [0.0, 0.03, 0.2, 1.0] {
            let p = softmin_probs(&z, tau);
            let q = softmin_probs(&z.iter().map(|x| x + shift).collect::<Vec<_>>(), tau);
            let sum: f64 = p.iter().sum();
            let diff = p.iter().zip(&q).map(|(a, b)| (a - b).abs()).fold(0.0, f64::max);
            check((sum - 1.0).abs() < 1e-12 && diff < 1e-9, format!("seed {seed}: softmin tau {tau}"));
        }

        // two-step noiseless planning equals enumeration
        let hml = Hml::new(&sys, &noiseless, &game);
        let root = LearnerState::naive(&sys, &mut r);
        let current = (seed % 4) as usize;
        let ccfg = CurriculumConfig { horizon: 2, n_rollouts: 1, ..Default::default() };
        let q = snmpc_q_values(&[root.clone()], current, hml, &ccfg, seed).unwrap();
        let cost = |s: &LearnerState, from: usize, to: usize| {
            let (end, rec) =
                integrate_trial(s, Some(game.targets[from]), &game.targets[to], hml, 0.0, &mut rng::stream(0)).unwrap();
            (stage_cost(&end.w_hat, &sys.w_true, &TrialMetrics::of(&rec, game.trial_cutoff), &ccfg), end)
        };
        for (a, qa) in q {
            let (l1, s1) = cost(&root, current, a);
            let best = admissible(Some(a), 4, AdmissibleRule::ExcludeCurrent)
                .into_iter()
                .map(|b| ccfg.beta_p * cost(&s1, a, b).0)
                .fold(f64::INFINITY, f64::min);
            check((qa - (l1 + best)).abs() <= 1e-12 * qa.abs(), format!("seed {seed}: Q({a}) {qa} vs {}", l1 + best));
        }

        // nondominated sorting, four populations per seed
        for _ in 0..4 {
            let n = r.random_range(2..40);
            let objs: Vec<[f64; 3]> =
                (0..n).map(|_| [0, 1, 2].map(|_| (r.random_range(0..6) as f64) + r.random::<f64>().round())).collect();
            let got: Vec<usize> = pareto_rank(&objs).iter().map(|x| x.0).collect();
            check(got == brute_force_front(&objs), format!("seed {seed}: pareto ranks differ"));
        }

        // SBX preserves the parents' mean
        for _ in 0..20 {
            let (p1, p2) = (10.0 * rng::normal(&mut r), 10.0 * rng::normal(&mut r));
            let (c1, c2) = sbx_pair(p1, p2, 15.0, r.random());
            let err = ((c1 + c2) - (p1 + p2)).abs();
            check(err <= 1e-9 * (1.0 + p1.abs() + p2.abs()), format!("seed {seed}: SBX mean error {err:e}"));
        }

        // zero-noise integrator against a fine RK4 reference
        let init = LearnerState::naive(&sys, &mut rng::stream(seed));
        let target = game.targets[(seed % 4) as usize];
        let fine = rk4(&init, &target, &sys, &noiseless, 0.3, 5e-5);
        let coarse = integrate_steps(&init, None, &target, hml, 0.0, 30, &mut rng::stream(0)).unwrap().0;
        let err = (coarse.x - fine.x)
            .amax()
            .max((coarse.q - fine.q).amax().to_radians())
            .max((coarse.w_hat - fine.w_hat).norm() / sys.w_true.norm());
        check(err <= 1e-3, format!("seed {seed}: integrator error {err:e}"));
    }
    let pass = failures.is_empty();
    let detail = if pass {
        "25 seeds: weight normalization, UCM additivity and isotropic split, softmin, P=2 planning oracle, pareto sort (100 populations), SBX mean, integrator vs RK4".to_string()
    } else {
        failures.join("; ")
    };
    report(7, pass, &detail);
    assert!(pass);
}

#[test]
fn criterion_8_self_fit() {
    let mut spec = ExperimentSpec::builtin(Scenario::Fit, Preset::Desk);
    spec.seed = SEED;
    let generations = spec.fit.ga.exploration.generations + spec.fit.ga.exploitation.generations;
    assert!(generations <= 40);
    let Outcome::Fit { initial_median_re, best_re, .. } = run_experiment(&spec).unwrap() else {
        panic!("fit outcome expected")
    };
    let ratio = best_re[0] / initial_median_re[0];
    let pass = ratio < 0.1;
    report(
        8,
        pass,
        &format!(
            "best f_RE {:.4e} = {:.1}% of generation-0 median {:.4e} after {generations} generations",
            best_re[0],
            100.0 * ratio,
            initial_median_re[0]
        ),
    );
    assert!(pass);
}
