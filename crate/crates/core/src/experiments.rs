//! Convergence studies against finer-mesh (or finer-step) reference runs of
//! the same scheme.
//!
//! Errors are the relative discrete error of [`relative_l2_error`] (a ratio
//! of squared sums), and rates are `log(e_coarse / e_fine) / log(ratio)`
//! between successive rows.

use std::fmt::Write as _;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{PeridynError, Result};
use crate::grid::{relative_l2_error, Field, Grid2D};
use crate::integrators::{integrate_with, Problem, Scheme, State, TimeConfig};
use crate::operator::OperatorSpec;
use crate::penalization::{PenalizationConfig, PenaltyVariant};
use crate::spectral::{build_kernel, Micromodulus};

/// Named initial displacements; the initial velocity is always zero.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "name", rename_all = "snake_case")]
pub enum InitialCondition {
    /// `c1 x1 + c2 x2`
    LinearRamp { c1: f64, c2: f64 },
    /// Indicator of the closed quadrant `[1/2, 1] x [1/2, 1]`.
    JumpQuadrant,
    Zero,
}

impl InitialCondition {
    pub fn eval(&self, x1: f64, x2: f64) -> f64 {
        match *self {
            InitialCondition::LinearRamp { c1, c2 } => c1 * x1 + c2 * x2,
            InitialCondition::JumpQuadrant => {
                let inside = |x: f64| (0.5..=1.0).contains(&x);
                if inside(x1) && inside(x2) {
                    1.0
                } else {
                    0.0
                }
            }
            InitialCondition::Zero => 0.0,
        }
    }
}

/// A complete benchmark problem on the square `[a, b]^2`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BenchmarkSpec {
    pub id: String,
    pub initial_condition: InitialCondition,
    pub micromodulus: Micromodulus,
    pub horizon: f64,
    pub r: u32,
    pub beta: f64,
    pub density: f64,
    pub a: f64,
    pub b: f64,
}

impl BenchmarkSpec {
    /// Ramp `u0 = -0.5 x1 - 0.5 x2`, Gaussian micromodulus, `delta = 0.2`,
    /// `r = 3`, `beta = 1/4` on the unit square.
    pub fn smooth() -> Self {
        Self {
            id: "linear_ramp".into(),
            initial_condition: InitialCondition::LinearRamp { c1: -0.5, c2: -0.5 },
            micromodulus: Micromodulus::default(),
            horizon: 0.2,
            r: 3,
            beta: 0.25,
            density: 1.0,
            a: 0.0,
            b: 1.0,
        }
    }

    /// Same material, quadrant-indicator initial displacement.
    pub fn jump() -> Self {
        Self {
            id: "jump_quadrant".into(),
            initial_condition: InitialCondition::JumpQuadrant,
            ..Self::smooth()
        }
    }

    pub fn with_r(mut self, r: u32) -> Self {
        self.r = r;
        self
    }

    pub fn physical_grid(&self, dx: f64) -> Result<Grid2D> {
        Grid2D::with_spacing(self.a, self.b, dx)
    }

    /// The problem on `physical` (or on its extension when penalized).
    pub fn problem(&self, physical: Grid2D, penalty: Option<&PenaltySettings>) -> Result<Problem> {
        let penalization = penalty.map(|p| p.build(physical)).transpose()?;
        let grid = penalization
            .as_ref()
            .map_or(physical, |p| *p.extended_grid());
        let c = self.micromodulus;
        let kernel = build_kernel(|x1, x2| c.eval(x1, x2), self.horizon, grid)?;
        let op = OperatorSpec::new(kernel, self.r, self.density)?;
        let problem = Problem::new(op);
        match penalization {
            Some(p) => problem.with_penalization(p),
            None => Ok(problem),
        }
    }

    pub fn initial_state(&self, grid: Grid2D) -> Result<State> {
        let ic = self.initial_condition;
        State::initial(Field::from_fn(grid, |x1, x2| ic.eval(x1, x2)), Field::zeros(grid))
    }
}

/// Serializable penalization parameters.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PenaltySettings {
    pub mu: f64,
    pub epsilon: f64,
    #[serde(default)]
    pub constraint_value: f64,
    #[serde(default)]
    pub variant: PenaltyVariant,
}

impl PenaltySettings {
    pub fn new(mu: f64, epsilon: f64) -> Self {
        Self {
            mu,
            epsilon,
            constraint_value: 0.0,
            variant: PenaltyVariant::Displacement,
        }
    }

    pub fn build(&self, physical: Grid2D) -> Result<PenalizationConfig> {
        Ok(PenalizationConfig::new(physical, self.mu, self.epsilon)?
            .with_constraint_value(self.constraint_value)
            .with_variant(self.variant))
    }
}

fn time_config(beta: f64, dt: f64, t_eval: f64) -> Result<TimeConfig> {
    let cfg = TimeConfig::new(dt, t_eval, beta)?;
    let reached = cfg.n_steps() as f64 * dt;
    if (reached - t_eval).abs() > 1e-9 * t_eval.max(1.0) {
        return Err(PeridynError::InvalidParameter(format!(
            "evaluation time {t_eval} is not a multiple of dt = {dt}"
        )));
    }
    Ok(cfg)
}

/// Runs `spec` at spacing `dx` to `t_eval` and returns the displacement on
/// the physical grid.
pub fn solve(
    spec: &BenchmarkSpec,
    dx: f64,
    dt: f64,
    t_eval: f64,
    penalty: Option<&PenaltySettings>,
    scheme: Scheme,
) -> Result<Field> {
    let physical = spec.physical_grid(dx)?;
    let problem = spec.problem(physical, penalty)?;
    let ic = spec.initial_state(*problem.grid())?;
    let beta = if scheme == Scheme::StormerVerlet { 0.0 } else { spec.beta };
    let cfg = time_config(beta, dt, t_eval)?;
    let traj = integrate_with(&ic, &problem, &cfg, scheme, &[], |_| {})?;
    match problem.penalization() {
        Some(p) => p.restrict_to_physical(&traj.final_state.u),
        None => Ok(traj.final_state.u),
    }
}

/// Reference displacement on `coarse`: the benchmark run on the nested grid
/// refined `refine` times, restricted by exact point subsampling.
pub fn reference_solution(
    spec: &BenchmarkSpec,
    coarse: Grid2D,
    refine: usize,
    fine_dt: f64,
    t_eval: f64,
    penalty: Option<&PenaltySettings>,
) -> Result<Field> {
    if refine == 0 {
        return Err(PeridynError::InvalidParameter("refinement factor must be >= 1".into()));
    }
    let fine_dx = coarse.dx() / refine as f64;
    let fine = solve(spec, fine_dx, fine_dt, t_eval, penalty, Scheme::Newmark)?;
    restrict(&fine, coarse)
}

/// Subsamples `fine` onto the nested grid `coarse`.
pub fn restrict(fine: &Field, coarse: Grid2D) -> Result<Field> {
    let (nf, nc) = (fine.grid().n_points(), coarse.n_points());
    let same_domain = (fine.grid().a() - coarse.a()).abs() < 1e-12 * coarse.length()
        && (fine.grid().b() - coarse.b()).abs() < 1e-12 * coarse.length();
    if !same_domain || nf % nc != 0 {
        return Err(PeridynError::NonNestedGrids { coarse: nc, fine: nf });
    }
    fine.subsample(coarse, 0, nf / nc)
}

/// `log(e_coarse / e_fine) / log(ratio)`.
pub fn observed_rate(e_coarse: f64, e_fine: f64, ratio: f64) -> Result<f64> {
    if !(e_coarse > 0.0 && e_fine > 0.0) {
        return Err(PeridynError::NonPositiveError(e_coarse, e_fine));
    }
    if !(ratio > 1.0) {
        return Err(PeridynError::InvalidParameter(format!(
            "refinement ratio must exceed 1, got {ratio}"
        )));
    }
    Ok((e_coarse / e_fine).ln() / ratio.ln())
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Axis {
    Space,
    Time,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ConvergenceRow {
    /// `dx` for space studies, `dt` for time studies.
    pub resolution: f64,
    pub error: f64,
    pub rate: Option<f64>,
}

/// Error/rate table ordered by decreasing resolution parameter.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ConvergenceTable {
    pub axis: Axis,
    pub benchmark_id: String,
    pub rows: Vec<ConvergenceRow>,
}

impl ConvergenceTable {
    /// Builds rows from `(resolution, error)` pairs already ordered by
    /// decreasing resolution. Rows with zero error get no rate, and neither
    /// does the row after them.
    pub fn from_errors(axis: Axis, benchmark_id: &str, errors: &[(f64, f64)]) -> Result<Self> {
        let mut rows = Vec::with_capacity(errors.len());
        for (k, &(resolution, error)) in errors.iter().enumerate() {
            let rate = if k == 0 {
                None
            } else {
                let (prev_res, prev_err) = errors[k - 1];
                if prev_res <= resolution {
                    return Err(PeridynError::InvalidParameter(
                        "resolutions must be strictly decreasing".into(),
                    ));
                }
                if prev_err > 0.0 && error > 0.0 {
                    Some(observed_rate(prev_err, error, prev_res / resolution)?)
                } else {
                    None
                }
            };
            rows.push(ConvergenceRow {
                resolution,
                error,
                rate,
            });
        }
        Ok(Self {
            axis,
            benchmark_id: benchmark_id.to_string(),
            rows,
        })
    }

    pub fn errors(&self) -> Vec<f64> {
        self.rows.iter().map(|r| r.error).collect()
    }

    pub fn rates(&self) -> Vec<f64> {
        self.rows.iter().filter_map(|r| r.rate).collect()
    }

    pub fn strictly_decreasing(&self) -> bool {
        self.rows.windows(2).all(|w| w[1].error < w[0].error)
    }

    /// `resolution,error,rate`, rate left empty where absent.
    pub fn to_csv(&self) -> String {
        let mut s = String::from("resolution,error,rate\n");
        for row in &self.rows {
            let rate = row.rate.map(|r| format!("{r:.16e}")).unwrap_or_default();
            let _ = writeln!(s, "{:.16e},{:.16e},{}", row.resolution, row.error, rate);
        }
        s
    }

    /// Aligned text with errors in 5-significant-digit scientific notation.
    pub fn to_text(&self) -> String {
        let label = match self.axis {
            Axis::Space => "dx",
            Axis::Time => "dt",
        };
        let mut s = String::new();
        let _ = writeln!(s, "{:>10}  {:>12}  {:>16}", label, "E_L2", "convergence rate");
        for row in &self.rows {
            let rate = row.rate.map_or_else(|| "-".to_string(), |r| format!("{r:.4}"));
            let _ = writeln!(s, "{:>10}  {:>12.4e}  {:>16}", row.resolution, row.error, rate);
        }
        s
    }
}

/// Where a study's reference solution comes from.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum ReferencePolicy {
    /// The finest ladder entry refined `factor` more times.
    Refined { factor: usize },
    /// The finest ladder entry itself (its row then has zero error).
    FinestRow,
}

impl Default for ReferencePolicy {
    fn default() -> Self {
        ReferencePolicy::Refined { factor: 2 }
    }
}

fn sorted_desc(values: &[f64], what: &str) -> Result<Vec<f64>> {
    if values.is_empty() {
        return Err(PeridynError::InvalidParameter(format!("empty {what} ladder")));
    }
    let mut v = values.to_vec();
    v.sort_by(|a, b| b.partial_cmp(a).unwrap_or(std::cmp::Ordering::Equal));
    if v.windows(2).any(|w| (w[0] - w[1]).abs() <= 1e-12 * w[0]) {
        return Err(PeridynError::InvalidParameter(format!(
            "duplicate entries in the {what} ladder"
        )));
    }
    Ok(v)
}

/// Errors at `t_eval` for each spacing in `resolutions` against a common
/// reference (see [`ReferencePolicy`]); runs execute in parallel.
pub fn spatial_convergence_study(
    spec: &BenchmarkSpec,
    resolutions: &[f64],
    dt: f64,
    t_eval: f64,
    penalty: Option<&PenaltySettings>,
    reference: ReferencePolicy,
) -> Result<ConvergenceTable> {
    let ladder = sorted_desc(resolutions, "spacing")?;
    let finest = *ladder.last().expect("non-empty ladder");
    let ref_dx = match reference {
        ReferencePolicy::Refined { factor } if factor >= 1 => finest / factor as f64,
        ReferencePolicy::Refined { .. } => {
            return Err(PeridynError::InvalidParameter("refinement factor must be >= 1".into()))
        }
        ReferencePolicy::FinestRow => finest,
    };
    let ref_grid = spec.physical_grid(ref_dx)?;
    for &dx in &ladder {
        let g = spec.physical_grid(dx)?;
        if ref_grid.n_points() % g.n_points() != 0 {
            return Err(PeridynError::NonNestedGrids {
                coarse: g.n_points(),
                fine: ref_grid.n_points(),
            });
        }
    }
    let mut jobs = ladder.clone();
    let own_reference = matches!(reference, ReferencePolicy::FinestRow);
    if !own_reference {
        jobs.push(ref_dx);
    }
    let solutions: Vec<Field> = jobs
        .par_iter()
        .map(|&dx| solve(spec, dx, dt, t_eval, penalty, Scheme::Newmark))
        .collect::<Result<_>>()?;
    let reference = solutions.last().expect("reference run");
    let errors = ladder
        .iter()
        .zip(&solutions)
        .map(|(&dx, u)| {
            let r = restrict(reference, *u.grid())?;
            Ok((dx, relative_l2_error(u, &r)?))
        })
        .collect::<Result<Vec<_>>>()?;
    ConvergenceTable::from_errors(Axis::Space, &spec.id, &errors)
}

fn temporal_errors(
    spec: &BenchmarkSpec,
    ladder: &[f64],
    dx: f64,
    t_eval: f64,
    scheme: Scheme,
    reference: &Field,
) -> Vec<Result<(f64, f64)>> {
    ladder
        .par_iter()
        .map(|&dt| {
            let u = solve(spec, dx, dt, t_eval, None, scheme)?;
            Ok((dt, relative_l2_error(&u, reference)?))
        })
        .collect()
}

/// Errors at `t_eval` for each step in `dts` on a fixed grid, against a
/// Newmark reference run at a quarter of the smallest step.
pub fn temporal_convergence_study(
    spec: &BenchmarkSpec,
    dts: &[f64],
    fixed_grid: Grid2D,
    t_eval: f64,
) -> Result<ConvergenceTable> {
    let ladder = sorted_desc(dts, "time-step")?;
    let dx = fixed_grid.dx();
    let ref_dt = ladder.last().expect("non-empty ladder") / 4.0;
    let reference = solve(spec, dx, ref_dt, t_eval, None, Scheme::Newmark)?;
    let errors = temporal_errors(spec, &ladder, dx, t_eval, Scheme::Newmark, &reference)
        .into_iter()
        .collect::<Result<Vec<_>>>()?;
    ConvergenceTable::from_errors(Axis::Time, &spec.id, &errors)
}

/// One row of an integrator comparison.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ComparisonRow {
    pub dt: f64,
    pub newmark_error: f64,
    /// `None` when the explicit run produced non-finite values.
    pub stormer_verlet_error: Option<f64>,
}

impl ComparisonRow {
    pub fn stormer_verlet_unstable(&self) -> bool {
        self.stormer_verlet_error.is_none()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct IntegratorComparison {
    pub benchmark_id: String,
    pub rows: Vec<ComparisonRow>,
}

impl IntegratorComparison {
    /// Newmark error no larger than Störmer-Verlet's on every row where
    /// both are available; an unstable explicit row counts as ordered.
    pub fn newmark_not_worse(&self) -> bool {
        self.rows
            .iter()
            .all(|r| r.stormer_verlet_error.is_none_or(|sv| r.newmark_error <= sv))
    }

    pub fn to_csv(&self) -> String {
        let mut s = String::from("dt,newmark_error,stormer_verlet_error\n");
        for r in &self.rows {
            let sv = r
                .stormer_verlet_error
                .map_or_else(|| "unstable".to_string(), |e| format!("{e:.16e}"));
            let _ = writeln!(s, "{:.16e},{:.16e},{}", r.dt, r.newmark_error, sv);
        }
        s
    }

    pub fn to_text(&self) -> String {
        let mut s = String::new();
        let _ = writeln!(s, "{:>10}  {:>12}  {:>14}", "dt", "Newmark-beta", "Stormer-Verlet");
        for r in &self.rows {
            let sv = r
                .stormer_verlet_error
                .map_or_else(|| "unstable".to_string(), |e| format!("{e:.4e}"));
            let _ = writeln!(s, "{:>10}  {:>12.4e}  {:>14}", r.dt, r.newmark_error, sv);
        }
        s
    }
}

/// Runs Newmark (the benchmark's `beta`) and Störmer-Verlet on the same
/// step ladder and grid, both measured against one Newmark reference at a
/// quarter of the smallest step.
pub fn integrator_comparison(
    spec: &BenchmarkSpec,
    dts: &[f64],
    fixed_grid: Grid2D,
    t_eval: f64,
) -> Result<IntegratorComparison> {
    let ladder = sorted_desc(dts, "time-step")?;
    let dx = fixed_grid.dx();
    let ref_dt = ladder.last().expect("non-empty ladder") / 4.0;
    let reference = solve(spec, dx, ref_dt, t_eval, None, Scheme::Newmark)?;
    let newmark = temporal_errors(spec, &ladder, dx, t_eval, Scheme::Newmark, &reference);
    let explicit = temporal_errors(spec, &ladder, dx, t_eval, Scheme::StormerVerlet, &reference);
    let mut rows = Vec::with_capacity(ladder.len());
    for ((dt, nm), sv) in ladder.iter().zip(newmark).zip(explicit) {
        let (_, newmark_error) = nm?;
        let stormer_verlet_error = match sv {
            Ok((_, e)) if e.is_finite() => Some(e),
            Ok(_) | Err(PeridynError::NonFinite { .. }) => None,
            Err(e) => return Err(e),
        };
        rows.push(ComparisonRow {
            dt: *dt,
            newmark_error,
            stormer_verlet_error,
        });
    }
    Ok(IntegratorComparison {
        benchmark_id: spec.id.clone(),
        rows,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn rate_formula_matches_published_rows() {
        let r = observed_rate(5.1194e-1, 6.8616e-2, 2.0).unwrap();
        assert!((r - 2.8994).abs() < 5e-5, "{r}");
        let r = observed_rate(1.1271e-6, 2.0212e-7, 2.0).unwrap();
        assert!((r - 2.4793).abs() < 5e-5, "{r}");
        assert_eq!(observed_rate(3.0, 3.0, 2.0).unwrap(), 0.0);
        assert!(matches!(
            observed_rate(0.0, 1.0, 2.0),
            Err(PeridynError::NonPositiveError(..))
        ));
        assert!(observed_rate(1.0, 0.5, 1.0).is_err());
    }

    #[test]
    fn table_structure() {
        let t = ConvergenceTable::from_errors(
            Axis::Time,
            "x",
            &[(0.1, 1e-6), (0.05, 2.5e-7), (0.025, 6.25e-8)],
        )
        .unwrap();
        assert_eq!(t.rows.len(), 3);
        assert_eq!(t.rates().len(), 2);
        assert!(t.rows[0].rate.is_none());
        for r in t.rates() {
            assert!((r - 2.0).abs() < 1e-12);
        }
        assert!(t.strictly_decreasing());
        let csv = t.to_csv();
        assert!(csv.starts_with("resolution,error,rate\n"));
        assert_eq!(csv.lines().nth(1).unwrap().split(',').nth(2), Some(""));
        assert!(t.to_text().contains("1.0000e-6"));
        assert!(ConvergenceTable::from_errors(Axis::Time, "x", &[(0.1, 1.0), (0.2, 1.0)]).is_err());
    }

    #[test]
    fn zero_error_row_gets_no_rate() {
        let t = ConvergenceTable::from_errors(Axis::Space, "x", &[(0.2, 1e-2), (0.1, 0.0)]).unwrap();
        assert_eq!(t.rows[1].rate, None);
    }

    #[test]
    fn initial_conditions_match_closed_forms() {
        let g = Grid2D::new(0.0, 1.0, 10).unwrap();
        let smooth = BenchmarkSpec::smooth().initial_state(g).unwrap();
        for i in 0..10 {
            for j in 0..10 {
                let (x1, x2) = (g.coord(i), g.coord(j));
                assert_eq!(smooth.u.get(i, j), -0.5 * x1 - 0.5 * x2);
            }
        }
        assert_eq!(smooth.v.max_abs(), 0.0);
        let jump = BenchmarkSpec::jump().initial_state(g).unwrap();
        assert_eq!(jump.u.get(5, 5), 1.0); // (0.5, 0.5) is on the closed boundary
        assert_eq!(jump.u.get(4, 9), 0.0);
        assert_eq!(jump.u.get(9, 9), 1.0);
        assert_eq!(jump.u.values().iter().sum::<f64>(), 25.0);
    }

    #[test]
    fn restriction_requires_nesting() {
        let fine = Field::from_fn(Grid2D::new(0.0, 1.0, 20).unwrap(), |x, y| x * y);
        let coarse = Grid2D::new(0.0, 1.0, 5).unwrap();
        let r = restrict(&fine, coarse).unwrap();
        assert_eq!(r, Field::from_fn(coarse, |x, y| x * y));
        assert!(restrict(&fine, Grid2D::new(0.0, 1.0, 8).unwrap()).is_err());
        assert!(restrict(&fine, Grid2D::new(0.0, 2.0, 5).unwrap()).is_err());
    }

    #[test]
    fn reference_with_unit_refinement_is_the_solution() {
        let spec = BenchmarkSpec::smooth();
        let g = spec.physical_grid(0.1).unwrap();
        let own = solve(&spec, 0.1, 0.05, 0.5, None, Scheme::Newmark).unwrap();
        let reference = reference_solution(&spec, g, 1, 0.05, 0.5, None).unwrap();
        assert_eq!(own, reference);
    }

    #[test]
    fn self_reference_study_reports_zero_for_finest_row() {
        let spec = BenchmarkSpec::smooth();
        let t = spatial_convergence_study(
            &spec,
            &[0.2, 0.1],
            0.05,
            0.5,
            None,
            ReferencePolicy::FinestRow,
        )
        .unwrap();
        assert_eq!(t.rows[1].error, 0.0);
        assert_eq!(t.rows[1].rate, None);
        assert!(t.rows[0].error > 0.0);
    }

    #[test]
    fn ladder_validation() {
        let spec = BenchmarkSpec::smooth();
        let g = spec.physical_grid(0.1).unwrap();
        assert!(temporal_convergence_study(&spec, &[0.1, 0.1], g, 0.5).is_err());
        assert!(temporal_convergence_study(&spec, &[], g, 0.5).is_err());
        assert!(spatial_convergence_study(
            &spec,
            &[0.2, 0.3],
            0.1,
            0.5,
            None,
            ReferencePolicy::default()
        )
        .is_err());
        assert!(solve(&spec, 0.1, 0.3, 0.5, None, Scheme::Newmark).is_err());
    }

    #[test]
    fn temporal_study_structure() {
        let spec = BenchmarkSpec::smooth();
        let g = spec.physical_grid(0.1).unwrap();
        let t = temporal_convergence_study(&spec, &[0.025, 0.1, 0.05], g, 1.0).unwrap();
        let res: Vec<f64> = t.rows.iter().map(|r| r.resolution).collect();
        assert_eq!(res, vec![0.1, 0.05, 0.025]);
        assert_eq!(t.rates().len(), 2);
    }
}
