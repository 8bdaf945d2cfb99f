//! Intra-trial HML dynamics.
//!
//! The continuous drift is
//!
//! ```text
//! x'      = C u / s
//! dq'     = -a dq + u                                   (+ perceptual noise)
//! W_hat'  = -gamma (W_hat - W) Phi dq dq^T Phi^T
//! u'      = -eta ((C_hat^T C_hat + mu I) u - k_P C_hat^T s (x_des - x))   (+ exploratory noise)
//! q'      = u
//! ```
//!
//! with `C_hat = W_hat Phi` and `s` the calibration units per grid unit.
//!
//! Once the learner's estimate is close to the mapping, the inverse-model
//! block is stiff (`eta * |C_hat|^2` is several hundred per second) so
//! a plain explicit step at the game sampling rate is unstable. [`step`]
//! splits the flow into the `W_hat` update (exact for a fixed `dq`) and the
//! remaining states with `W_hat` frozen, which are linear and solved exactly
//! through one matrix exponential, and composes them symmetrically
//! (half, full, half). The scheme is second order; the noise enters
//! additively as in Euler-Maruyama.

use nalgebra::{Matrix2, Matrix2x4, SMatrix, Vector2, Vector5};
use rand::Rng;

use super::game::window_is_captured;
use super::{
    GameConfig, Joint, LearnerState, Mapping, ModelParams, Point, Sample, SynergySystem,
    TrialRecord, N_JOINTS,
};
use crate::{Error, Result};

/// States whose largest entry exceeds this are treated as diverged.
pub const DIVERGENCE_LIMIT: f64 = 1e6;

/// Borrowed bundle of everything a trial simulation needs.
#[derive(Debug, Clone, Copy)]
pub struct Hml<'a> {
    pub system: &'a SynergySystem,
    pub params: &'a ModelParams,
    pub game: &'a GameConfig,
}

impl<'a> Hml<'a> {
    pub fn new(system: &'a SynergySystem, params: &'a ModelParams, game: &'a GameConfig) -> Self {
        Self { system, params, game }
    }

    pub fn dt(&self) -> f64 {
        self.game.dt()
    }
}

/// Deterministic part of the dynamics, returned in state layout.
pub fn drift_rhs(
    state: &LearnerState,
    target: &Point,
    system: &SynergySystem,
    params: &ModelParams,
) -> LearnerState {
    let c_hat = system.c_hat(&state.w_hat);
    let err_raw = (target - state.x) * system.unit_scale;
    let p = system.phi * state.delta_q;
    let w_err = (state.w_hat - system.w_true) * p;
    let inner = c_hat * state.u;
    let du = -(c_hat.transpose() * inner + state.u * params.mu
        - c_hat.transpose() * err_raw * params.k_p)
        * params.eta;
    LearnerState {
        x: system.c * state.u / system.unit_scale,
        w_hat: -(w_err * p.transpose()) * params.gamma,
        delta_q: -state.delta_q * params.a + state.u,
        u: du,
        q: state.u,
    }
}

/// Symmetric 2x2 eigen-decomposition, eigenvalues descending.
fn sym_eigen2(m: &Matrix2<f64>) -> (Vector2<f64>, Matrix2<f64>) {
    let (a, b, d) = (m[(0, 0)], m[(0, 1)], m[(1, 1)]);
    let half = 0.5 * (a - d);
    let r = half.hypot(b);
    let mean = 0.5 * (a + d);
    let v = if half >= 0.0 { Vector2::new(r + half, b) } else { Vector2::new(b, r - half) };
    let n = v.norm();
    let v1 = if n > 0.0 { v / n } else { Vector2::new(1.0, 0.0) };
    let v2 = Vector2::new(-v1.y, v1.x);
    (Vector2::new(mean + r, mean - r), Matrix2::from_columns(&[v1, v2]))
}

/// Orthonormal 20x2 basis whose columns are eigenvectors of `C_hat^T C_hat`
/// (row space of `C_hat`, completed arbitrarily where it is rank deficient).
fn row_space_basis(c_hat: &Mapping, sv: &Vector2<f64>, v: &Matrix2<f64>) -> SMatrix<f64, N_JOINTS, 2> {
    let tol = 1e-10 * sv[0].max(1.0);
    let mut cols: [Option<Joint>; 2] = [None, None];
    for i in 0..2 {
        if sv[i] > tol {
            cols[i] = Some(c_hat.transpose() * v.column(i) / sv[i]);
        }
    }
    for i in 0..2 {
        if cols[i].is_some() {
            continue;
        }
        let other = cols[1 - i];
        for k in 0..N_JOINTS {
            let mut e = Joint::zeros();
            e[k] = 1.0;
            if let Some(o) = other {
                e -= o * o.dot(&e);
            }
            let n = e.norm();
            if n > 0.5 {
                cols[i] = Some(e / n);
                break;
            }
        }
    }
    SMatrix::from_columns(&[cols[0].unwrap(), cols[1].unwrap()])
}

/// Advances the deterministic dynamics by `h` seconds: half a weight
/// update, the fast subsystem with weights frozen, then the other half.
pub(crate) fn deterministic_step(
    s: &mut LearnerState,
    target: &Point,
    system: &SynergySystem,
    params: &ModelParams,
    h: f64,
) {
    weight_flow(s, system, params, 0.5 * h);
    fast_step(s, target, system, params, h);
    weight_flow(s, system, params, 0.5 * h);
}

/// Exact weight update over `h` with the perceived increment held fixed:
/// the error decays along `p` by `exp(-gamma |p|^2 h)`.
fn weight_flow(s: &mut LearnerState, system: &SynergySystem, params: &ModelParams, h: f64) {
    let p = system.phi * s.delta_q;
    let pp = p.norm_squared();
    if pp == 0.0 || params.gamma == 0.0 {
        return;
    }
    let shrink = -(-params.gamma * pp * h).exp_m1() / pp;
    let w_err: Matrix2x4<f64> = s.w_hat - system.w_true;
    s.w_hat -= (w_err * p) * p.transpose() * shrink;
}

/// Exact solution over `h` of the linear fast subsystem (cursor error,
/// control inside the row space of `C_hat`, decaying complement) together
/// with the joint displacement and the filtered increment.
fn fast_step(s: &mut LearnerState, target: &Point, system: &SynergySystem, params: &ModelParams, h: f64) {
    let scale = system.unit_scale;
    let c_hat = system.c_hat(&s.w_hat);
    let gram = c_hat * c_hat.transpose();
    let (s2, v) = sym_eigen2(&gram);
    let s2 = s2.map(|e| e.max(0.0));
    let sv = s2.map(f64::sqrt);
    let basis = row_space_basis(&c_hat, &sv, &v);

    let alpha = basis.transpose() * s.u;
    let u_perp = s.u - basis * alpha;
    let b = system.c * basis / scale;
    let cu_perp = system.c * u_perp / scale;
    let y = s.x - target;

    let gains = Matrix2::from_rows(&[
        (v.column(0) * (params.eta * params.k_p * scale * sv[0])).transpose(),
        (v.column(1) * (params.eta * params.k_p * scale * sv[1])).transpose(),
    ]);
    // alpha is carried as alpha / rho, with rho balancing the two coupling
    // blocks so the exponential needs few squarings
    let (nb, nk) = (b.norm(), gains.norm());
    let rho = if nb > 0.0 && nk > 0.0 { (nk / nb).sqrt() } else { 1.0 };

    // z = (y, alpha / rho, w) with w = exp(-eta mu t); columns 5 and 6
    // accumulate the plain and the exp(-a (h - t)) weighted integrals of z
    let mut g = Matrix7::zeros();
    g.fixed_view_mut::<2, 2>(0, 2).copy_from(&(b * rho));
    g[(0, 4)] = cu_perp.x;
    g[(1, 4)] = cu_perp.y;
    g.fixed_view_mut::<2, 2>(2, 0).copy_from(&(-gains / rho));
    for i in 0..2 {
        g[(2 + i, 2 + i)] = -params.eta * (params.mu + s2[i]);
    }
    g[(4, 4)] = -params.eta * params.mu;
    let z0 = Vector5::new(y.x, y.y, alpha.x / rho, alpha.y / rho, 1.0);
    let z0_norm = z0.norm();
    g.fixed_view_mut::<5, 1>(0, 5).copy_from(&(z0 / z0_norm));
    g.fixed_view_mut::<5, 1>(0, 6).copy_from(&(z0 / z0_norm));
    g[(6, 6)] = -params.a;
    let e = expm7(&(g * h));
    let z = e.fixed_view::<5, 5>(0, 0) * z0;
    let lift = |c: usize| {
        (basis * Vector2::new(e[(2, c)], e[(3, c)]) * rho + u_perp * e[(4, c)]) * z0_norm
    };

    s.delta_q = s.delta_q * (-params.a * h).exp() + lift(6);
    s.q += lift(5);
    s.x = target + Vector2::new(z[0], z[1]);
    s.u = basis * Vector2::new(z[2], z[3]) * rho + u_perp * z[4];
}

type Matrix7 = SMatrix<f64, 7, 7>;

/// Matrix exponential by scaling and squaring with a (6, 6) Pade
/// approximant, scaled so the 1-norm is at most 1/2.
fn expm7(a: &Matrix7) -> Matrix7 {
    const C: [f64; 7] = [1.0, 0.5, 5.0 / 44.0, 1.0 / 66.0, 1.0 / 792.0, 1.0 / 15840.0, 1.0 / 665280.0];
    let norm = (0..7).map(|j| a.column(j).abs().sum()).fold(0.0, f64::max);
    let squarings = if norm > 0.5 { (norm / 0.5).log2().ceil() as i32 } else { 0 };
    let x = a * 2f64.powi(-squarings);
    let x2 = x * x;
    let x4 = x2 * x2;
    let id = Matrix7::identity();
    let odd = x * (id * C[1] + x2 * C[3] + x4 * C[5]);
    let even = id * C[0] + x2 * C[2] + x4 * C[4] + x4 * x2 * C[6];
    let mut r = (even - odd).lu().solve(&(even + odd)).expect("Pade denominator is nonsingular");
    for _ in 0..squarings {
        r *= r;
    }
    r
}

/// One stochastic step of length `h`: deterministic update plus Gaussian
/// increments `sigma_q sqrt(h)` on `delta_q` and `sigma_u sqrt(h)` on `u`.
pub fn step<R: Rng + ?Sized>(
    s: &mut LearnerState,
    target: &Point,
    system: &SynergySystem,
    params: &ModelParams,
    h: f64,
    rng: &mut R,
) {
    deterministic_step(s, target, system, params, h);
    let sh = h.sqrt();
    if params.sigma_q > 0.0 {
        let k = params.sigma_q * sh;
        for v in s.delta_q.iter_mut() {
            *v += k * crate::rng::normal(rng);
        }
    }
    if params.sigma_u > 0.0 {
        let k = params.sigma_u * sh;
        for v in s.u.iter_mut() {
            *v += k * crate::rng::normal(rng);
        }
    }
}

pub(crate) fn check_divergence(s: &LearnerState, steps: usize, params: &ModelParams) -> Result<()> {
    let mag = s.max_abs();
    if !mag.is_finite() || mag > DIVERGENCE_LIMIT {
        return Err(Error::Diverged { steps, magnitude: mag, params: params.to_string() });
    }
    Ok(())
}

/// Simulates one game trial from `init` toward `target` until stable
/// capture or the duration cap. `t_start` stamps the first sample.
pub fn integrate_trial<R: Rng + ?Sized>(
    init: &LearnerState,
    target_from: Option<Point>,
    target: &Point,
    hml: Hml<'_>,
    t_start: f64,
    rng: &mut R,
) -> Result<(LearnerState, TrialRecord)> {
    run_trial(init, target_from, target, hml, t_start, hml.game.max_steps(), true, rng)
}

/// Simulates exactly `n_steps` steps without the capture rule.
pub fn integrate_steps<R: Rng + ?Sized>(
    init: &LearnerState,
    target_from: Option<Point>,
    target: &Point,
    hml: Hml<'_>,
    t_start: f64,
    n_steps: usize,
    rng: &mut R,
) -> Result<(LearnerState, TrialRecord)> {
    run_trial(init, target_from, target, hml, t_start, n_steps, false, rng)
}

#[allow(clippy::too_many_arguments)]
fn run_trial<R: Rng + ?Sized>(
    init: &LearnerState,
    target_from: Option<Point>,
    target: &Point,
    hml: Hml<'_>,
    t_start: f64,
    max_steps: usize,
    use_capture: bool,
    rng: &mut R,
) -> Result<(LearnerState, TrialRecord)> {
    let dt = hml.dt();
    let window = hml.game.capture_window;
    let mut state = init.clone();
    let mut samples = Vec::with_capacity(max_steps.min(1024) + 1);
    samples.push(Sample { t: t_start, x: state.x, q: state.q });
    let mut inside_run = 0usize;
    let mut captured = false;
    let mut cursor: Vec<Point> = Vec::with_capacity(window);
    for n in 1..=max_steps {
        step(&mut state, target, hml.system, hml.params, dt, rng);
        check_divergence(&state, n, hml.params)?;
        samples.push(Sample { t: t_start + n as f64 * dt, x: state.x, q: state.q });
        if !use_capture {
            continue;
        }
        if (state.x - target).amax() <= hml.game.target_half_width {
            inside_run += 1;
        } else {
            inside_run = 0;
        }
        if inside_run >= window {
            cursor.clear();
            cursor.extend(samples[samples.len() - window..].iter().map(|s| s.x));
            if window_is_captured(&cursor, target, hml.game) {
                captured = true;
                break;
            }
        }
    }
    let duration = samples.last().unwrap().t - t_start;
    Ok((
        state,
        TrialRecord { target_from, target_to: *target, samples, captured, duration },
    ))
}

/// One sample of the trial-to-trial map: the end state of this trial is the
/// start state of the next.
pub fn trial_transition<R: Rng + ?Sized>(
    state: &LearnerState,
    current: Option<Point>,
    next_target: &Point,
    hml: Hml<'_>,
    t_start: f64,
    rng: &mut R,
) -> Result<(LearnerState, TrialRecord)> {
    integrate_trial(state, current, next_target, hml, t_start, rng)
}
