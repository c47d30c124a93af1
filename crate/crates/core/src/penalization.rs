//! Volume penalization on a fictitious domain.
//!
//! The physical square `V` is padded on every side by a frame `Gamma` of
//! width `mu * (b - a)`, giving `Omega = V u Gamma`. The periodic solver runs on
//! `Omega`, and a stiff relaxation term confined to `Gamma`,
//!
//! ```text
//! displacement variant:  -(chi_Gamma / eps) (u - g)
//! velocity variant:      -(chi_Gamma / eps) v
//! ```
//!
//! is added to the acceleration so the frame approximates a constrained
//! region and shields `V` from periodic wraparound.

use serde::{Deserialize, Serialize};

use crate::error::{PeridynError, Result};
use crate::grid::{Field, Grid2D};

/// Which quantity the frame relaxes toward its target.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum PenaltyVariant {
    #[default]
    Displacement,
    Velocity,
}

/// Pads `grid` by `mu * (b - a)` on every side at the same spacing.
///
/// Returns the extended grid and the frame mask (1 on `Gamma`, 0 on `V`).
pub fn extend_domain(grid: &Grid2D, mu: f64) -> Result<(Grid2D, Field)> {
    let (ext, cells) = extended_grid(grid, mu)?;
    let n = grid.n_points();
    let inside = |i: usize| i >= cells && i < cells + n;
    let mut mask = Field::zeros(ext);
    for i in 0..ext.n_points() {
        for j in 0..ext.n_points() {
            if !(inside(i) && inside(j)) {
                mask.set(i, j, 1.0);
            }
        }
    }
    Ok((ext, mask))
}

fn extended_grid(grid: &Grid2D, mu: f64) -> Result<(Grid2D, usize)> {
    if !(mu > 0.0) || !mu.is_finite() {
        return Err(PeridynError::InvalidParameter(format!(
            "extension factor must be positive, got {mu}"
        )));
    }
    let dx = grid.dx();
    let width = mu * grid.length();
    let cells_f = width / dx;
    let cells = cells_f.round();
    if cells < 1.0 || (cells_f - cells).abs() > 1e-9 * cells_f.max(1.0) {
        return Err(PeridynError::NonIntegerExtension { width, dx });
    }
    let cells = cells as usize;
    let pad = cells as f64 * dx;
    let ext = Grid2D::new(grid.a() - pad, grid.b() + pad, grid.n_points() + 2 * cells)?;
    Ok((ext, cells))
}

/// Frame geometry, penalization strength and target.
#[derive(Debug, Clone, PartialEq)]
pub struct PenalizationConfig {
    extension_factor: f64,
    epsilon: f64,
    constraint_value: f64,
    variant: PenaltyVariant,
    physical: Grid2D,
    extended: Grid2D,
    offset: usize,
    mask: Field,
}

impl PenalizationConfig {
    /// Extends `physical` by `mu` and penalizes with factor `epsilon`, target
    /// `g = 0`, displacement variant.
    pub fn new(physical: Grid2D, mu: f64, epsilon: f64) -> Result<Self> {
        if !(epsilon > 0.0) || !epsilon.is_finite() {
            return Err(PeridynError::InvalidParameter(format!(
                "penalization factor must be positive, got {epsilon}"
            )));
        }
        let (extended, offset) = extended_grid(&physical, mu)?;
        let (_, mask) = extend_domain(&physical, mu)?;
        Ok(Self {
            extension_factor: mu,
            epsilon,
            constraint_value: 0.0,
            variant: PenaltyVariant::Displacement,
            physical,
            extended,
            offset,
            mask,
        })
    }

    pub fn with_constraint_value(mut self, g: f64) -> Self {
        self.constraint_value = g;
        self
    }

    pub fn with_variant(mut self, variant: PenaltyVariant) -> Self {
        self.variant = variant;
        self
    }

    pub fn extension_factor(&self) -> f64 {
        self.extension_factor
    }

    pub fn epsilon(&self) -> f64 {
        self.epsilon
    }

    pub fn constraint_value(&self) -> f64 {
        self.constraint_value
    }

    pub fn variant(&self) -> PenaltyVariant {
        self.variant
    }

    pub fn mask(&self) -> &Field {
        &self.mask
    }

    pub fn physical_grid(&self) -> &Grid2D {
        &self.physical
    }

    pub fn extended_grid(&self) -> &Grid2D {
        &self.extended
    }

    /// Frame thickness in grid cells.
    pub fn frame_cells(&self) -> usize {
        self.offset
    }

    /// Samples of an extended-grid field that lie in `V`.
    pub fn restrict_to_physical(&self, u: &Field) -> Result<Field> {
        if u.grid() != &self.extended {
            return Err(PeridynError::GridMismatch);
        }
        u.subsample(self.physical, self.offset, 1)
    }

    /// True when the frame is at least one horizon thick, so kernels
    /// centred in `V` never reach across the periodic seam into `V` again.
    pub fn shields_horizon(&self, delta: f64) -> bool {
        self.offset as f64 * self.physical.dx() >= delta * (1.0 - 1e-12)
    }

    /// `-(chi / eps) (u - g)` for the displacement variant, `-(chi / eps) v`
    /// for the velocity variant. `field` is `u` or `v` accordingly.
    pub fn penalty_term(&self, field: &Field) -> Result<Field> {
        let g = match self.variant {
            PenaltyVariant::Displacement => self.constraint_value,
            PenaltyVariant::Velocity => 0.0,
        };
        let k = 1.0 / self.epsilon;
        self.mask.zip_with(field, |chi, x| -chi * k * (x - g))
    }
}

/// `base_rhs - (chi / eps) (u - g)`; leaves `V` untouched.
pub fn penalized_rhs(u: &Field, base_rhs: &Field, pcfg: &PenalizationConfig) -> Result<Field> {
    u.ensure_compatible(base_rhs)?;
    if u.grid() != pcfg.extended_grid() {
        return Err(PeridynError::GridMismatch);
    }
    let k = 1.0 / pcfg.epsilon;
    let g = pcfg.constraint_value;
    let values = base_rhs
        .values()
        .iter()
        .zip(u.values())
        .zip(pcfg.mask.values())
        .map(|((&rhs, &x), &chi)| if chi == 0.0 { rhs } else { rhs - chi * k * (x - g) })
        .collect();
    Field::from_values(*u.grid(), values)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn extension_counts_cells() {
        let g = Grid2D::new(0.0, 1.0, 100).unwrap();
        let (ext, mask) = extend_domain(&g, 0.2).unwrap();
        assert_eq!(ext.n_points(), 140);
        assert!((ext.a() + 0.2).abs() < 1e-12);
        assert!((ext.b() - 1.2).abs() < 1e-12);
        assert!((ext.dx() - g.dx()).abs() < 1e-15);
        let ones = mask.values().iter().filter(|&&m| m == 1.0).count();
        assert_eq!(ones, 140 * 140 - 100 * 100);
        assert!(mask.values().iter().all(|&m| m == 0.0 || m == 1.0));
    }

    #[test]
    fn mask_vanishes_on_physical_domain() {
        let g = Grid2D::new(0.0, 1.0, 10).unwrap();
        let p = PenalizationConfig::new(g, 0.2, 0.2).unwrap();
        let inner = p.restrict_to_physical(p.mask()).unwrap();
        assert_eq!(inner.max_abs(), 0.0);
        assert_eq!(p.frame_cells(), 2);
        // the restricted coordinates are the physical ones
        let x = Field::from_fn(*p.extended_grid(), |x1, _| x1);
        let xr = p.restrict_to_physical(&x).unwrap();
        for i in 0..10 {
            assert!((xr.get(i, 0) - g.coord(i)).abs() < 1e-12);
        }
    }

    #[test]
    fn extension_errors() {
        let g = Grid2D::new(0.0, 1.0, 10).unwrap();
        assert!(matches!(
            extend_domain(&g, 0.05),
            Err(PeridynError::NonIntegerExtension { .. })
        ));
        assert!(matches!(
            extend_domain(&g, 0.001),
            Err(PeridynError::NonIntegerExtension { .. })
        ));
        assert!(extend_domain(&g, 0.0).is_err());
        assert!(PenalizationConfig::new(g, 0.2, 0.0).is_err());
    }

    #[test]
    fn penalized_rhs_examples() {
        let g = Grid2D::new(0.0, 1.0, 10).unwrap();
        let p = PenalizationConfig::new(g, 0.1, 0.2).unwrap();
        let ext = *p.extended_grid();
        let base = Field::from_fn(ext, |x, y| x - 2.0 * y);
        let u = Field::constant(ext, 1.0);
        let out = penalized_rhs(&u, &base, &p).unwrap();
        for k in 0..ext.len() {
            let expected = if p.mask().values()[k] == 1.0 {
                base.values()[k] - 5.0
            } else {
                base.values()[k]
            };
            assert!((out.values()[k] - expected).abs() < 1e-14);
        }
        // u == g on the frame leaves the rhs untouched
        let p3 = p.clone().with_constraint_value(3.0);
        let at_target = Field::constant(ext, 3.0);
        assert_eq!(penalized_rhs(&at_target, &base, &p3).unwrap(), base);
        let wrong = Field::zeros(g);
        assert!(penalized_rhs(&wrong, &wrong, &p).is_err());
    }

    #[test]
    fn penalty_term_variants() {
        let g = Grid2D::new(0.0, 1.0, 10).unwrap();
        let p = PenalizationConfig::new(g, 0.1, 0.5)
            .unwrap()
            .with_constraint_value(1.0);
        let ext = *p.extended_grid();
        let u = Field::constant(ext, 3.0);
        let disp = p.penalty_term(&u).unwrap();
        assert_eq!(disp.get(0, 0), -4.0);
        assert_eq!(disp.get(5, 5), 0.0);
        let vel = p.clone().with_variant(PenaltyVariant::Velocity).penalty_term(&u).unwrap();
        assert_eq!(vel.get(0, 0), -6.0);
        assert!(p.shields_horizon(0.1));
        assert!(!p.shields_horizon(0.2));
    }
}
