//! Time marching for `u'' = a(u, v, t)`.
//!
//! The Newmark-beta step with trapezoidal velocity weights,
//!
//! ```text
//! u_{s+1} = u_s + dt v_s + dt^2 ((1/2 - beta) a_s + beta a_{s+1})
//! v_{s+1} = v_s + dt/2 (a_s + a_{s+1})
//! ```
//!
//! is implicit in `u_{s+1}` for `beta > 0`. The nonlinear system is solved by
//! Newton's method with a matrix-free conjugate-gradient inner solve built on
//! the analytic operator linearization. With `beta = 0` it reduces to the
//! explicit Störmer-Verlet (velocity Verlet) scheme.

use std::time::Instant;

use serde::{Deserialize, Serialize};

use crate::error::{PeridynError, Result};
use crate::grid::{Field, Grid2D};
use crate::operator::{apply_spectral, OperatorSpec};
use crate::penalization::{PenalizationConfig, PenaltyVariant};

/// Step size, horizon and solver tolerances.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TimeConfig {
    pub dt: f64,
    pub t_final: f64,
    pub beta: f64,
    /// Newton stops once `||F|| <= newton_tol * max(1, ||F(guess)||)`.
    pub newton_tol: f64,
    pub newton_max_iter: usize,
    /// CG stops once the residual drops by this factor.
    pub krylov_tol: f64,
    pub krylov_max_iter: usize,
}

impl TimeConfig {
    pub fn new(dt: f64, t_final: f64, beta: f64) -> Result<Self> {
        let cfg = Self {
            dt,
            t_final,
            beta,
            newton_tol: 1e-10,
            newton_max_iter: 25,
            krylov_tol: 1e-12,
            krylov_max_iter: 200,
        };
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.dt > 0.0) || !self.dt.is_finite() {
            return Err(PeridynError::InvalidParameter(format!(
                "time step must be positive, got {}",
                self.dt
            )));
        }
        if !(self.t_final >= 0.0) || !self.t_final.is_finite() {
            return Err(PeridynError::InvalidParameter(format!(
                "final time must be nonnegative, got {}",
                self.t_final
            )));
        }
        if !(0.0..=0.5).contains(&self.beta) {
            return Err(PeridynError::InvalidParameter(format!(
                "beta must lie in [0, 1/2], got {}",
                self.beta
            )));
        }
        if !(self.newton_tol > 0.0 && self.krylov_tol > 0.0) {
            return Err(PeridynError::InvalidParameter(
                "solver tolerances must be positive".into(),
            ));
        }
        Ok(())
    }

    /// `beta` in `[1/4, 1/2]`.
    pub fn unconditionally_stable(&self) -> bool {
        (0.25..=0.5).contains(&self.beta)
    }

    /// `floor(t_final / dt)`, tolerant of `t_final` being a rounded multiple.
    pub fn n_steps(&self) -> usize {
        (self.t_final / self.dt + 1e-9).floor() as usize
    }

    fn newton_options(&self) -> NewtonOptions {
        NewtonOptions {
            tol: self.newton_tol,
            max_iter: self.newton_max_iter,
            min_iter: 1,
            krylov_tol: self.krylov_tol,
            krylov_max_iter: self.krylov_max_iter,
        }
    }
}

/// Displacement and velocity at `t = step_index * dt`.
#[derive(Debug, Clone, PartialEq)]
pub struct State {
    pub u: Field,
    pub v: Field,
    pub t: f64,
    pub step_index: usize,
    /// Acceleration at this state, cached by the steppers so it is not
    /// re-evaluated at the start of the next step.
    pub accel: Option<Field>,
}

impl State {
    pub fn initial(u: Field, v: Field) -> Result<Self> {
        u.ensure_compatible(&v)?;
        Ok(Self {
            u,
            v,
            t: 0.0,
            step_index: 0,
            accel: None,
        })
    }

    pub fn grid(&self) -> &Grid2D {
        self.u.grid()
    }

    pub fn without_cache(mut self) -> Self {
        self.accel = None;
        self
    }
}

/// The full right-hand side: operator, forcing and optional frame penalty.
#[derive(Debug, Clone)]
pub struct Problem {
    operator: OperatorSpec,
    penalization: Option<PenalizationConfig>,
}

impl Problem {
    pub fn new(operator: OperatorSpec) -> Self {
        Self {
            operator,
            penalization: None,
        }
    }

    pub fn with_penalization(mut self, p: PenalizationConfig) -> Result<Self> {
        if p.extended_grid() != self.operator.grid() {
            return Err(PeridynError::GridMismatch);
        }
        self.penalization = Some(p);
        Ok(self)
    }

    pub fn operator(&self) -> &OperatorSpec {
        &self.operator
    }

    pub fn penalization(&self) -> Option<&PenalizationConfig> {
        self.penalization.as_ref()
    }

    pub fn grid(&self) -> &Grid2D {
        self.operator.grid()
    }

    /// Acceleration terms that depend on `u` only (plus forcing at `t`):
    /// `L_N(u)/rho + b(t)/rho - (chi/eps)(u - g)` (the last term only for the
    /// displacement variant).
    fn displacement_accel(&self, u: &Field, t: f64) -> Result<Field> {
        let mut a = apply_spectral(u, &self.operator)?;
        if let Some(b) = self.operator.forcing_field(t) {
            a.axpy(1.0, &b)?;
        }
        if let Some(p) = &self.penalization {
            if p.variant() == PenaltyVariant::Displacement {
                a.axpy(1.0, &p.penalty_term(u)?)?;
            }
        }
        Ok(a)
    }

    /// `a(u, v, t)`.
    pub fn acceleration(&self, u: &Field, v: &Field, t: f64) -> Result<Field> {
        let mut a = self.displacement_accel(u, t)?;
        if let Some(p) = &self.penalization {
            if p.variant() == PenaltyVariant::Velocity {
                a.axpy(1.0, &p.penalty_term(v)?)?;
            }
        }
        Ok(a)
    }

    /// Acceleration at the end of a step, given the provisional `u_{s+1}`.
    ///
    /// With velocity damping the trapezoidal velocity update makes
    /// `a_{s+1}` depend on itself pointwise:
    /// `a_{s+1} (1 + chi dt / (2 eps)) = R(u_{s+1}) - (chi/eps)(v_s + dt/2 a_s)`,
    /// solved here by division.
    fn end_of_step_accel(&self, u1: &Field, t1: f64, ctx: &StepContext) -> Result<Field> {
        let mut a = self.displacement_accel(u1, t1)?;
        if let Some(damp) = &ctx.damping {
            for ((x, e), w) in a.values_mut().iter_mut().zip(&damp.explicit).zip(&damp.weight) {
                *x = (*x + e) * w;
            }
        }
        Ok(a)
    }
}

/// Per-step data for the velocity-damping variant.
struct Damping {
    /// `-(chi/eps)(v_s + dt/2 a_s)`
    explicit: Vec<f64>,
    /// `1 / (1 + chi dt / (2 eps))`
    weight: Vec<f64>,
}

struct StepContext {
    damping: Option<Damping>,
}

impl StepContext {
    fn new(problem: &Problem, v: &Field, a: &Field, dt: f64) -> Self {
        let damping = problem.penalization().and_then(|p| {
            (p.variant() == PenaltyVariant::Velocity).then(|| {
                let k = 1.0 / p.epsilon();
                let mask = p.mask().values();
                Damping {
                    explicit: mask
                        .iter()
                        .zip(v.values().iter().zip(a.values()))
                        .map(|(chi, (v, a))| -chi * k * (v + 0.5 * dt * a))
                        .collect(),
                    weight: mask.iter().map(|chi| 1.0 / (1.0 + chi * k * dt * 0.5)).collect(),
                }
            })
        });
        Self { damping }
    }
}

/// Newton iteration controls.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct NewtonOptions {
    pub tol: f64,
    pub max_iter: usize,
    /// Corrections applied even if the initial guess already meets `tol`.
    pub min_iter: usize,
    pub krylov_tol: f64,
    pub krylov_max_iter: usize,
}

impl Default for NewtonOptions {
    fn default() -> Self {
        Self {
            tol: 1e-10,
            max_iter: 25,
            min_iter: 0,
            krylov_tol: 1e-12,
            krylov_max_iter: 200,
        }
    }
}

/// Diagnostics of one Newton solve.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct NewtonReport {
    pub iterations: usize,
    /// `||F||` before the first and after every correction.
    pub residual_history: Vec<f64>,
    pub krylov_iterations: Vec<usize>,
}

/// A linear map `h -> J h` together with a positive diagonal `S` such that
/// `S J` is symmetric positive definite (so CG applies to `S J d = -S F`).
pub trait JacobianSystem {
    fn apply(&self, h: &Field) -> Result<Field>;

    /// `None` means `S = I`.
    fn row_scale(&self) -> Option<&[f64]> {
        None
    }
}

/// Solves `F(u) = 0` from `guess`. Each correction solves `J(u) d = -F(u)`
/// with conjugate gradients on the (row-scaled) Jacobian from `jacobian_at`.
pub fn newton_solve<R, J, S>(
    mut residual: R,
    guess: Field,
    mut jacobian_at: J,
    opts: &NewtonOptions,
) -> Result<(Field, NewtonReport)>
where
    R: FnMut(&Field) -> Result<Field>,
    J: FnMut(&Field) -> Result<S>,
    S: JacobianSystem,
{
    let mut u = guess;
    let mut f = residual(&u)?;
    let r0 = f.l2_norm();
    let threshold = opts.tol * r0.max(1.0);
    let mut report = NewtonReport {
        iterations: 0,
        residual_history: vec![r0],
        krylov_iterations: Vec::new(),
    };
    let mut rnorm = r0;
    while report.iterations < opts.min_iter || rnorm > threshold {
        if report.iterations >= opts.max_iter || !rnorm.is_finite() {
            return Err(PeridynError::NewtonDivergence {
                iterations: report.iterations,
                residual: rnorm,
            });
        }
        let system = jacobian_at(&u)?;
        let mut rhs = f.scaled(-1.0);
        if let Some(s) = system.row_scale() {
            for (x, w) in rhs.values_mut().iter_mut().zip(s) {
                *x *= w;
            }
        }
        let (delta, cg_iters) = conjugate_gradient(
            |h| {
                let mut jh = system.apply(h)?;
                if let Some(s) = system.row_scale() {
                    for (x, w) in jh.values_mut().iter_mut().zip(s) {
                        *x *= w;
                    }
                }
                Ok(jh)
            },
            &rhs,
            opts.krylov_tol,
            opts.krylov_max_iter,
        )?;
        u.axpy(1.0, &delta)?;
        f = residual(&u)?;
        rnorm = f.l2_norm();
        report.iterations += 1;
        report.residual_history.push(rnorm);
        report.krylov_iterations.push(cg_iters);
    }
    Ok((u, report))
}

/// Matrix-free CG for a symmetric positive definite `op`. Returns the
/// solution and the iteration count.
pub fn conjugate_gradient(
    op: impl Fn(&Field) -> Result<Field>,
    b: &Field,
    rel_tol: f64,
    max_iter: usize,
) -> Result<(Field, usize)> {
    let grid = *b.grid();
    let b_norm = b.sum_squares().sqrt();
    let mut x = Field::zeros(grid);
    if b_norm == 0.0 {
        return Ok((x, 0));
    }
    let mut r = b.clone();
    let mut p = r.clone();
    let mut rr = r.sum_squares();
    for it in 1..=max_iter {
        let ap = op(&p)?;
        let pap: f64 = p.values().iter().zip(ap.values()).map(|(a, b)| a * b).sum();
        if !(pap > 0.0) {
            return Err(PeridynError::KrylovStall {
                iterations: it,
                residual: rr.sqrt() / b_norm,
            });
        }
        let alpha = rr / pap;
        x.axpy(alpha, &p)?;
        r.axpy(-alpha, &ap)?;
        let rr_new = r.sum_squares();
        if rr_new.sqrt() <= rel_tol * b_norm {
            return Ok((x, it));
        }
        let beta = rr_new / rr;
        for (pv, rv) in p.values_mut().iter_mut().zip(r.values()) {
            *pv = rv + beta * *pv;
        }
        rr = rr_new;
    }
    Err(PeridynError::KrylovStall {
        iterations: max_iter,
        residual: rr.sqrt() / b_norm,
    })
}

/// Jacobian of the Newmark residual
/// `F(u) = u - base - beta dt^2 a_{s+1}(u)`:
/// `J h = h - beta dt^2 W (DL h - [disp] (chi/eps) h)`, row-scaled by `1/W`.
struct NewmarkJacobian<'a> {
    lin: crate::operator::Linearization<'a>,
    coeff: f64,
    /// `chi / eps` for the displacement penalty
    stiff: Option<Vec<f64>>,
    weight: Option<Vec<f64>>,
    inv_weight: Option<Vec<f64>>,
}

impl JacobianSystem for NewmarkJacobian<'_> {
    fn apply(&self, h: &Field) -> Result<Field> {
        let mut dl = self.lin.apply(h)?;
        if let Some(stiff) = &self.stiff {
            for ((x, k), hv) in dl.values_mut().iter_mut().zip(stiff).zip(h.values()) {
                *x -= k * hv;
            }
        }
        if let Some(w) = &self.weight {
            for (x, w) in dl.values_mut().iter_mut().zip(w) {
                *x *= w;
            }
        }
        let mut out = h.clone();
        out.axpy(-self.coeff, &dl)?;
        Ok(out)
    }

    fn row_scale(&self) -> Option<&[f64]> {
        self.inv_weight.as_deref()
    }
}

fn check_finite(state: &State) -> Result<()> {
    if state.u.is_finite() && state.v.is_finite() {
        Ok(())
    } else {
        Err(PeridynError::NonFinite {
            step: state.step_index,
            time: state.t,
        })
    }
}

fn current_accel(s: &State, problem: &Problem) -> Result<Field> {
    match &s.accel {
        Some(a) => Ok(a.clone()),
        None => problem.acceleration(&s.u, &s.v, s.t),
    }
}

/// One Newmark-beta step. See [`newmark_step_detailed`] for solver
/// diagnostics.
pub fn newmark_step(s: &State, problem: &Problem, cfg: &TimeConfig) -> Result<State> {
    newmark_step_detailed(s, problem, cfg).map(|(state, _)| state)
}

/// One Newmark-beta step plus the Newton report (empty when `beta = 0`).
///
/// The Newton guess is the explicit predictor `u_s + dt v_s + dt^2/2 a_s`,
/// and at least one correction is always applied when `beta > 0`.
pub fn newmark_step_detailed(
    s: &State,
    problem: &Problem,
    cfg: &TimeConfig,
) -> Result<(State, NewtonReport)> {
    if s.grid() != problem.grid() {
        return Err(PeridynError::GridMismatch);
    }
    let dt = cfg.dt;
    let beta = cfg.beta;
    let step_index = s.step_index + 1;
    let t1 = step_index as f64 * dt;
    let a0 = current_accel(s, problem)?;
    let ctx = StepContext::new(problem, &s.v, &a0, dt);

    // u_s + dt v_s + (1/2 - beta) dt^2 a_s
    let mut base = s.u.clone();
    base.axpy(dt, &s.v)?;
    base.axpy((0.5 - beta) * dt * dt, &a0)?;

    let (u1, a1, report) = if beta == 0.0 {
        let a1 = problem.end_of_step_accel(&base, t1, &ctx)?;
        (base, a1, NewtonReport::default())
    } else {
        let mut guess = s.u.clone();
        guess.axpy(dt, &s.v)?;
        guess.axpy(0.5 * dt * dt, &a0)?;
        let coeff = beta * dt * dt;
        let mut last_accel: Option<Field> = None;
        let stiff: Option<Vec<f64>> = problem.penalization().and_then(|p| {
            (p.variant() == PenaltyVariant::Displacement)
                .then(|| p.mask().values().iter().map(|c| c / p.epsilon()).collect())
        });
        let weight = ctx.damping.as_ref().map(|d| d.weight.clone());
        let inv_weight = weight
            .as_ref()
            .map(|w| w.iter().map(|x| 1.0 / x).collect::<Vec<_>>());
        let (u1, report) = newton_solve(
            |u| {
                let a = problem.end_of_step_accel(u, t1, &ctx)?;
                let mut f = u.clone();
                f.axpy(-1.0, &base)?;
                f.axpy(-coeff, &a)?;
                last_accel = Some(a);
                Ok(f)
            },
            guess,
            |u| {
                Ok(NewmarkJacobian {
                    lin: problem.operator().linearize(u)?,
                    coeff,
                    stiff: stiff.clone(),
                    weight: weight.clone(),
                    inv_weight: inv_weight.clone(),
                })
            },
            &cfg.newton_options(),
        )?;
        let a1 = last_accel.expect("residual evaluated at least once");
        (u1, a1, report)
    };

    let mut v1 = s.v.clone();
    v1.axpy(0.5 * dt, &a0)?;
    v1.axpy(0.5 * dt, &a1)?;
    let next = State {
        u: u1,
        v: v1,
        t: t1,
        step_index,
        accel: Some(a1),
    };
    check_finite(&next)?;
    Ok((next, report))
}

/// One explicit Störmer-Verlet (velocity Verlet) step:
/// `u_{s+1} = u_s + dt v_s + dt^2/2 a_s`, `v_{s+1} = v_s + dt/2 (a_s + a_{s+1})`.
pub fn stormer_verlet_step(s: &State, problem: &Problem, cfg: &TimeConfig) -> Result<State> {
    if s.grid() != problem.grid() {
        return Err(PeridynError::GridMismatch);
    }
    let dt = cfg.dt;
    let step_index = s.step_index + 1;
    let t1 = step_index as f64 * dt;
    let a0 = current_accel(s, problem)?;
    let ctx = StepContext::new(problem, &s.v, &a0, dt);
    let half_dt2 = 0.5 * dt * dt;
    let u1 = s.u.zip_with(&s.v, |u, v| u + dt * v)?.zip_with(&a0, |x, a| x + half_dt2 * a)?;
    let a1 = problem.end_of_step_accel(&u1, t1, &ctx)?;
    let v1 = s.v.zip_with(&a0, |v, a| v + 0.5 * dt * a)?.zip_with(&a1, |x, a| x + 0.5 * dt * a)?;
    let next = State {
        u: u1,
        v: v1,
        t: t1,
        step_index,
        accel: Some(a1),
    };
    check_finite(&next)?;
    Ok(next)
}

/// Which stepper [`integrate_with`] uses.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Scheme {
    /// Newmark-beta with the configured `beta`.
    #[default]
    Newmark,
    StormerVerlet,
}

/// Snapshots and per-step statistics of one run.
#[derive(Debug, Clone)]
pub struct Trajectory {
    /// States at the requested times, in increasing time order.
    pub snapshots: Vec<State>,
    pub final_state: State,
    pub newton_iterations: Vec<usize>,
    pub step_seconds: Vec<f64>,
}

impl Trajectory {
    pub fn median_newton_iterations(&self) -> f64 {
        median(&self.newton_iterations)
    }
}

fn median(xs: &[usize]) -> f64 {
    if xs.is_empty() {
        return 0.0;
    }
    let mut v = xs.to_vec();
    v.sort_unstable();
    let m = v.len() / 2;
    if v.len() % 2 == 1 {
        v[m] as f64
    } else {
        0.5 * (v[m - 1] + v[m]) as f64
    }
}

/// Integrates from `ic` to `cfg.t_final` with Newmark-beta, returning the
/// states nearest to each of `snapshot_times` and the final state.
pub fn integrate(
    ic: &State,
    problem: &Problem,
    cfg: &TimeConfig,
    snapshot_times: &[f64],
) -> Result<Trajectory> {
    integrate_with(ic, problem, cfg, Scheme::Newmark, snapshot_times, |_| {})
}

/// Like [`integrate`] with an explicit scheme choice and an observer called
/// on every state including the initial one.
pub fn integrate_with(
    ic: &State,
    problem: &Problem,
    cfg: &TimeConfig,
    scheme: Scheme,
    snapshot_times: &[f64],
    mut observer: impl FnMut(&State),
) -> Result<Trajectory> {
    cfg.validate()?;
    let n_steps = cfg.n_steps();
    let mut wanted: Vec<usize> = Vec::with_capacity(snapshot_times.len());
    for &t in snapshot_times {
        let k = (t / cfg.dt).round();
        if !(t >= 0.0) || k < 0.0 || k as usize > n_steps || (k * cfg.dt - t).abs() > 0.5 * cfg.dt {
            return Err(PeridynError::InvalidParameter(format!(
                "snapshot time {t} outside [0, {}]",
                cfg.t_final
            )));
        }
        wanted.push(k as usize);
    }
    wanted.sort_unstable();
    wanted.dedup();

    let mut state = ic.clone();
    check_finite(&state)?;
    let mut snapshots = Vec::with_capacity(wanted.len());
    let mut next_wanted = wanted.iter().peekable();
    let mut take = |state: &State, snaps: &mut Vec<State>| {
        while next_wanted.peek() == Some(&&state.step_index) {
            snaps.push(state.clone());
            next_wanted.next();
        }
    };
    observer(&state);
    take(&state, &mut snapshots);
    let mut newton_iterations = Vec::with_capacity(n_steps);
    let mut step_seconds = Vec::with_capacity(n_steps);
    for _ in 0..n_steps {
        let clock = Instant::now();
        let next = match scheme {
            Scheme::Newmark => {
                let (next, report) = newmark_step_detailed(&state, problem, cfg)?;
                newton_iterations.push(report.iterations);
                next
            }
            Scheme::StormerVerlet => {
                newton_iterations.push(0);
                stormer_verlet_step(&state, problem, cfg)?
            }
        };
        step_seconds.push(clock.elapsed().as_secs_f64());
        state = next;
        observer(&state);
        take(&state, &mut snapshots);
    }
    Ok(Trajectory {
        snapshots,
        final_state: state,
        newton_iterations,
        step_seconds,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::spectral::build_kernel;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn problem(n: usize, r: u32, c: f64) -> Problem {
        let g = Grid2D::new(0.0, 1.0, n).unwrap();
        let k = build_kernel(|a, b| c * (-(a * a + b * b)).exp(), 0.2, g).unwrap();
        Problem::new(OperatorSpec::new(k, r, 1.0).unwrap())
    }

    fn random_state(grid: Grid2D, rng: &mut ChaCha8Rng) -> State {
        let u = Field::from_fn(grid, |_, _| rng.gen_range(-1.0..1.0));
        let v = Field::from_fn(grid, |_, _| rng.gen_range(-0.1..0.1));
        State::initial(u, v).unwrap()
    }

    #[test]
    fn time_config_validation() {
        assert!(TimeConfig::new(0.0, 1.0, 0.25).is_err());
        assert!(TimeConfig::new(0.1, 1.0, 0.6).is_err());
        assert!(TimeConfig::new(0.1, 1.0, -0.1).is_err());
        let c = TimeConfig::new(0.1, 1.0, 0.25).unwrap();
        assert!(c.unconditionally_stable());
        assert_eq!(c.n_steps(), 10);
        assert!(!TimeConfig::new(0.1, 1.0, 0.2).unwrap().unconditionally_stable());
        assert_eq!(TimeConfig::new(1e-3, 5.0, 0.25).unwrap().n_steps(), 5000);
    }

    #[test]
    fn zero_kernel_is_free_motion() {
        let p = problem(8, 3, 0.0);
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        let s = random_state(*p.grid(), &mut rng);
        let cfg = TimeConfig::new(0.01, 1.0, 0.25).unwrap();
        for next in [
            newmark_step(&s, &p, &cfg).unwrap(),
            stormer_verlet_step(&s, &p, &cfg).unwrap(),
        ] {
            let expected = s.u.zip_with(&s.v, |u, v| u + 0.01 * v).unwrap();
            assert_eq!(next.u, expected);
            assert_eq!(next.v, s.v);
            assert_eq!(next.step_index, 1);
            assert_eq!(next.t, 0.01);
        }
    }

    #[test]
    fn beta_zero_equals_stormer_verlet() {
        let p = problem(16, 3, 1.0);
        let mut rng = ChaCha8Rng::seed_from_u64(8);
        let s = random_state(*p.grid(), &mut rng);
        let cfg = TimeConfig::new(0.05, 1.0, 0.0).unwrap();
        let a = newmark_step(&s, &p, &cfg).unwrap();
        let b = stormer_verlet_step(&s, &p, &cfg).unwrap();
        assert!((&a.u - &b.u).max_abs() <= 1e-14);
        assert!((&a.v - &b.v).max_abs() <= 1e-14);
    }

    #[test]
    fn trinomial_identity_for_stormer_verlet() {
        let p = problem(16, 3, 1.0);
        let mut rng = ChaCha8Rng::seed_from_u64(12);
        let s0 = random_state(*p.grid(), &mut rng);
        let dt = 0.02;
        let cfg = TimeConfig::new(dt, 1.0, 0.0).unwrap();
        let s1 = stormer_verlet_step(&s0, &p, &cfg).unwrap();
        let s2 = stormer_verlet_step(&s1, &p, &cfg).unwrap();
        let lhs = s2
            .u
            .zip_with(&s1.u, |a, b| a - 2.0 * b)
            .unwrap()
            .zip_with(&s0.u, |a, b| (a + b) / (dt * dt))
            .unwrap();
        let l1 = apply_spectral(&s1.u, p.operator()).unwrap();
        assert!((&lhs - &l1).max_abs() <= 1e-11 * l1.max_abs().max(1.0));
    }

    #[test]
    fn linear_newton_takes_one_iteration() {
        let p = problem(16, 1, 1.0);
        let mut rng = ChaCha8Rng::seed_from_u64(13);
        let s = random_state(*p.grid(), &mut rng);
        let cfg = TimeConfig::new(0.1, 1.0, 0.25).unwrap();
        let (_, report) = newmark_step_detailed(&s, &p, &cfg).unwrap();
        assert_eq!(report.iterations, 1);
    }

    #[test]
    fn newton_returns_converged_guess_unchanged() {
        let g = Grid2D::new(0.0, 1.0, 8).unwrap();
        struct Identity;
        impl JacobianSystem for Identity {
            fn apply(&self, h: &Field) -> Result<Field> {
                Ok(h.clone())
            }
        }
        let target = Field::constant(g, 2.0);
        let guess = target.clone();
        let (u, report) = newton_solve(
            |u| Ok(u - &target),
            guess.clone(),
            |_| Ok(Identity),
            &NewtonOptions::default(),
        )
        .unwrap();
        assert_eq!(u, guess);
        assert_eq!(report.iterations, 0);
    }

    #[test]
    fn newton_solves_scalar_cubic_quadratically() {
        // F(u) = u + u^3 - c, pointwise
        let g = Grid2D::new(0.0, 1.0, 4).unwrap();
        let c = Field::from_fn(g, |x, y| 1.0 + x + y);
        struct Diag(Vec<f64>);
        impl JacobianSystem for Diag {
            fn apply(&self, h: &Field) -> Result<Field> {
                let vals = h.values().iter().zip(&self.0).map(|(a, b)| a * b).collect();
                Field::from_values(*h.grid(), vals)
            }
        }
        let (u, report) = newton_solve(
            |u| u.zip_with(&c, |x, c| x + x * x * x - c),
            Field::zeros(g),
            |u| Ok(Diag(u.values().iter().map(|x| 1.0 + 3.0 * x * x).collect())),
            &NewtonOptions::default(),
        )
        .unwrap();
        let f = u.zip_with(&c, |x, c| x + x * x * x - c).unwrap();
        assert!(f.max_abs() < 1e-10);
        assert!(report.iterations <= 8);
        let h = &report.residual_history;
        for k in 2..h.len().saturating_sub(1) {
            if h[k] > 1e-13 {
                assert!(h[k + 1] / (h[k] * h[k]) < 10.0, "{h:?}");
            }
        }
    }

    #[test]
    fn newton_divergence_is_reported() {
        let g = Grid2D::new(0.0, 1.0, 4).unwrap();
        struct Identity;
        impl JacobianSystem for Identity {
            fn apply(&self, h: &Field) -> Result<Field> {
                Ok(h.clone())
            }
        }
        // F(u) = u + 1 with a wrong (identity * 1) Jacobian of a
        // residual that keeps growing
        let opts = NewtonOptions {
            max_iter: 3,
            ..NewtonOptions::default()
        };
        let err = newton_solve(
            |u| Ok(u.map(|x| 2.0 * x + 1.0)),
            Field::zeros(g),
            |_| Ok(Identity),
            &opts,
        )
        .unwrap_err();
        assert!(matches!(err, PeridynError::NewtonDivergence { iterations: 3, .. }));
    }

    #[test]
    fn cg_solves_spd_diagonal() {
        let g = Grid2D::new(0.0, 1.0, 4).unwrap();
        let d = Field::from_fn(g, |x, y| 1.0 + x + 2.0 * y);
        let b = Field::from_fn(g, |x, y| x - y);
        let (x, iters) = conjugate_gradient(
            |h| h.zip_with(&d, |a, b| a * b),
            &b,
            1e-14,
            100,
        )
        .unwrap();
        let back = x.zip_with(&d, |a, b| a * b).unwrap();
        assert!((&back - &b).max_abs() < 1e-13);
        assert!(iters <= 16);
        let (zero, n) = conjugate_gradient(|h| Ok(h.clone()), &Field::zeros(g), 1e-12, 10).unwrap();
        assert_eq!((zero.max_abs(), n), (0.0, 0));
    }

    #[test]
    fn integrate_zero_horizon_returns_initial_state() {
        let p = problem(8, 3, 1.0);
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let s = random_state(*p.grid(), &mut rng);
        let cfg = TimeConfig::new(0.1, 0.0, 0.25).unwrap();
        let traj = integrate(&s, &p, &cfg, &[0.0]).unwrap();
        assert_eq!(traj.snapshots.len(), 1);
        assert_eq!(traj.final_state, s);
        assert!(traj.newton_iterations.is_empty());
    }

    #[test]
    fn integrate_rejects_out_of_range_snapshots() {
        let p = problem(8, 3, 1.0);
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let s = random_state(*p.grid(), &mut rng);
        let cfg = TimeConfig::new(0.1, 1.0, 0.25).unwrap();
        assert!(integrate(&s, &p, &cfg, &[1.5]).is_err());
        assert!(integrate(&s, &p, &cfg, &[-0.1]).is_err());
        let traj = integrate(&s, &p, &cfg, &[0.5, 0.2, 1.0]).unwrap();
        let times: Vec<usize> = traj.snapshots.iter().map(|s| s.step_index).collect();
        assert_eq!(times, vec![2, 5, 10]);
        assert_eq!(traj.final_state.step_index, 10);
        assert!((traj.final_state.t - 1.0).abs() < 1e-12);
    }

    #[test]
    fn non_finite_state_aborts() {
        let p = problem(8, 3, 1.0);
        let g = *p.grid();
        let mut u = Field::zeros(g);
        u.set(0, 0, f64::NAN);
        let s = State::initial(u, Field::zeros(g)).unwrap();
        let cfg = TimeConfig::new(0.1, 1.0, 0.0).unwrap();
        assert!(matches!(
            integrate(&s, &p, &cfg, &[]),
            Err(PeridynError::NonFinite { step: 0, .. })
        ));
    }

    #[test]
    fn forcing_enters_the_acceleration() {
        let g = Grid2D::new(0.0, 1.0, 8).unwrap();
        let k = build_kernel(|_, _| 0.0, 0.2, g).unwrap();
        let op = OperatorSpec::new(k, 1, 2.0)
            .unwrap()
            .with_forcing(std::sync::Arc::new(|_, _, t| 4.0 * t));
        let p = Problem::new(op);
        let s = State::initial(Field::zeros(g), Field::zeros(g)).unwrap();
        let a = p.acceleration(&s.u, &s.v, 0.5).unwrap();
        assert!((a.get(3, 3) - 1.0).abs() < 1e-15);
        // a(t) = 2t; the trapezoidal velocity update is exact for it
        let cfg = TimeConfig::new(0.1, 1.0, 0.25).unwrap();
        let traj = integrate(&s, &p, &cfg, &[]).unwrap();
        let v_exact = 1.0; // v' = 2 t  =>  v(1) = 1
        assert!((traj.final_state.v.get(0, 0) - v_exact).abs() < 1e-12);
    }
}
