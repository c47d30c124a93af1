//! Periodic collocation grid, scalar fields and the discrete norms used to
//! measure them.
//!
//! The grid samples the square `[a, b) x [a, b)` at `N` equidistant points per
//! axis with the right endpoint excluded, so `x_N` coincides with `x_0` under
//! periodicity and a plain DFT is the exact discrete Fourier interpolant.

use std::ops::{Add, Mul, Neg, Sub};

use serde::{Deserialize, Serialize};

use crate::error::{PeridynError, Result};

/// Periodic square grid `[a, b)^2` with `n_points` samples per axis.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Grid2D {
    a: f64,
    b: f64,
    n_points: usize,
    dx: f64,
}

impl Grid2D {
    pub fn new(a: f64, b: f64, n_points: usize) -> Result<Self> {
        if !(a.is_finite() && b.is_finite()) || b <= a {
            return Err(PeridynError::InvalidDomain { a, b });
        }
        if n_points < 4 {
            return Err(PeridynError::InvalidResolution(n_points));
        }
        Ok(Self {
            a,
            b,
            n_points,
            dx: (b - a) / n_points as f64,
        })
    }

    /// Grid over `[a, b)` whose spacing is `dx`; fails unless `(b - a) / dx`
    /// is an integer to within `1e-9` relative.
    pub fn with_spacing(a: f64, b: f64, dx: f64) -> Result<Self> {
        if !(dx > 0.0) {
            return Err(PeridynError::InvalidParameter(format!(
                "grid spacing must be positive, got {dx}"
            )));
        }
        let cells = (b - a) / dx;
        let n = cells.round();
        if (cells - n).abs() > 1e-9 * cells.max(1.0) {
            return Err(PeridynError::InvalidParameter(format!(
                "spacing {dx} does not divide the domain length {}",
                b - a
            )));
        }
        Self::new(a, b, n as usize)
    }

    pub fn a(&self) -> f64 {
        self.a
    }

    pub fn b(&self) -> f64 {
        self.b
    }

    pub fn n_points(&self) -> usize {
        self.n_points
    }

    pub fn dx(&self) -> f64 {
        self.dx
    }

    pub fn length(&self) -> f64 {
        self.b - self.a
    }

    /// Total number of collocation points, `N^2`.
    pub fn len(&self) -> usize {
        self.n_points * self.n_points
    }

    pub fn is_empty(&self) -> bool {
        false
    }

    /// Coordinate of the `i`-th point along either axis.
    #[inline]
    pub fn coord(&self, i: usize) -> f64 {
        self.a + i as f64 * self.dx
    }

    pub fn coords(&self) -> Vec<f64> {
        (0..self.n_points).map(|i| self.coord(i)).collect()
    }

    /// Minimal-image distance between two coordinates on one periodic axis.
    pub fn periodic_distance(&self, x: f64, y: f64) -> f64 {
        let len = self.length();
        let d = (x - y).rem_euclid(len);
        d.min(len - d)
    }

    /// Signed offset represented by index `i` in the index-0-centred layout:
    /// `i * dx` for `i <= N/2`, `(i - N) * dx` otherwise.
    #[inline]
    pub fn signed_offset(&self, i: usize) -> f64 {
        if i <= self.n_points / 2 {
            i as f64 * self.dx
        } else {
            -((self.n_points - i) as f64) * self.dx
        }
    }

    #[inline]
    pub(crate) fn index(&self, i1: usize, i2: usize) -> usize {
        i1 * self.n_points + i2
    }
}

/// Real samples on a [`Grid2D`], row index along `x1`, column index along `x2`.
#[derive(Debug, Clone, PartialEq)]
pub struct Field {
    grid: Grid2D,
    values: Vec<f64>,
}

impl Field {
    pub fn zeros(grid: Grid2D) -> Self {
        Self::constant(grid, 0.0)
    }

    pub fn constant(grid: Grid2D, c: f64) -> Self {
        Self {
            grid,
            values: vec![c; grid.len()],
        }
    }

    /// Samples `f(x1, x2)` at every collocation point.
    pub fn from_fn(grid: Grid2D, mut f: impl FnMut(f64, f64) -> f64) -> Self {
        let mut values = Vec::with_capacity(grid.len());
        for i1 in 0..grid.n_points {
            let x1 = grid.coord(i1);
            for i2 in 0..grid.n_points {
                values.push(f(x1, grid.coord(i2)));
            }
        }
        Self { grid, values }
    }

    pub fn from_values(grid: Grid2D, values: Vec<f64>) -> Result<Self> {
        if values.len() != grid.len() {
            return Err(PeridynError::InvalidParameter(format!(
                "expected {} values for a {}x{} grid, got {}",
                grid.len(),
                grid.n_points,
                grid.n_points,
                values.len()
            )));
        }
        Ok(Self { grid, values })
    }

    pub fn grid(&self) -> &Grid2D {
        &self.grid
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn values_mut(&mut self) -> &mut [f64] {
        &mut self.values
    }

    pub fn into_values(self) -> Vec<f64> {
        self.values
    }

    #[inline]
    pub fn get(&self, i1: usize, i2: usize) -> f64 {
        self.values[self.grid.index(i1, i2)]
    }

    #[inline]
    pub fn set(&mut self, i1: usize, i2: usize, v: f64) {
        let k = self.grid.index(i1, i2);
        self.values[k] = v;
    }

    pub fn ensure_compatible(&self, other: &Field) -> Result<()> {
        if self.grid == other.grid {
            Ok(())
        } else {
            Err(PeridynError::GridMismatch)
        }
    }

    pub fn is_finite(&self) -> bool {
        self.values.iter().all(|v| v.is_finite())
    }

    pub fn map(&self, f: impl Fn(f64) -> f64) -> Field {
        Field {
            grid: self.grid,
            values: self.values.iter().map(|&v| f(v)).collect(),
        }
    }

    /// Pointwise combination of two fields on the same grid.
    pub fn zip_with(&self, other: &Field, f: impl Fn(f64, f64) -> f64) -> Result<Field> {
        self.ensure_compatible(other)?;
        Ok(Field {
            grid: self.grid,
            values: self
                .values
                .iter()
                .zip(&other.values)
                .map(|(&x, &y)| f(x, y))
                .collect(),
        })
    }

    pub fn scaled(&self, c: f64) -> Field {
        self.map(|v| c * v)
    }

    /// `self += alpha * x`
    pub fn axpy(&mut self, alpha: f64, x: &Field) -> Result<()> {
        self.ensure_compatible(x)?;
        for (s, &xv) in self.values.iter_mut().zip(&x.values) {
            *s += alpha * xv;
        }
        Ok(())
    }

    /// Quadrature inner product `dx^2 * sum(u * w)`.
    pub fn dot(&self, other: &Field) -> Result<f64> {
        self.ensure_compatible(other)?;
        let dx = self.grid.dx;
        Ok(dx * dx * dot(&self.values, &other.values))
    }

    /// Quadrature-weighted norm `sqrt(dx^2 * sum(u^2))`.
    pub fn l2_norm(&self) -> f64 {
        self.grid.dx * sum_squares(&self.values).sqrt()
    }

    pub fn max_abs(&self) -> f64 {
        self.values.iter().fold(0.0, |m, v| m.max(v.abs()))
    }

    pub fn sum_squares(&self) -> f64 {
        sum_squares(&self.values)
    }

    /// Discrete total variation with periodic wraparound:
    /// `sum |u(i+1,j) - u(i,j)| + |u(i,j+1) - u(i,j)|`.
    pub fn total_variation(&self) -> f64 {
        let n = self.grid.n_points;
        let mut tv = 0.0;
        for i in 0..n {
            for j in 0..n {
                let u = self.get(i, j);
                tv += (self.get((i + 1) % n, j) - u).abs();
                tv += (self.get(i, (j + 1) % n) - u).abs();
            }
        }
        tv
    }

    /// Every `stride`-th sample starting from `(offset, offset)`, placed on
    /// `target`. Used to restrict fine solutions onto nested coarse grids.
    pub fn subsample(&self, target: Grid2D, offset: usize, stride: usize) -> Result<Field> {
        let n = target.n_points;
        let dx = self.grid.dx;
        let aligned = (target.dx - stride as f64 * dx).abs() <= 1e-9 * target.dx
            && (target.a - (self.grid.a + offset as f64 * dx)).abs() <= 1e-9 * target.length();
        if !aligned || offset + (n - 1) * stride >= self.grid.n_points {
            return Err(PeridynError::NonNestedGrids {
                coarse: n,
                fine: self.grid.n_points,
            });
        }
        let mut out = Field::zeros(target);
        for i in 0..n {
            for j in 0..n {
                out.set(i, j, self.get(offset + i * stride, offset + j * stride));
            }
        }
        Ok(out)
    }
}

fn dot(x: &[f64], y: &[f64]) -> f64 {
    x.iter().zip(y).map(|(a, b)| a * b).sum()
}

fn sum_squares(x: &[f64]) -> f64 {
    x.iter().map(|v| v * v).sum()
}

/// The relative discrete error
/// `sum |u - u_ref|^2 / sum |u|^2`, taken exactly as a ratio of squared sums
/// (no square root), so reported values are comparable to tables published
/// with that convention.
pub fn relative_l2_error(u: &Field, u_ref: &Field) -> Result<f64> {
    u.ensure_compatible(u_ref)?;
    let denom = u.sum_squares();
    if denom == 0.0 {
        return Err(PeridynError::ZeroDenominator);
    }
    let num: f64 = u
        .values
        .iter()
        .zip(&u_ref.values)
        .map(|(a, b)| (a - b) * (a - b))
        .sum();
    Ok(num / denom)
}

/// Square root of [`relative_l2_error`], a true norm ratio.
pub fn relative_l2_error_sqrt(u: &Field, u_ref: &Field) -> Result<f64> {
    relative_l2_error(u, u_ref).map(f64::sqrt)
}

impl Add for &Field {
    type Output = Field;
    fn add(self, rhs: &Field) -> Field {
        self.zip_with(rhs, |a, b| a + b).expect("grid mismatch in Field + Field")
    }
}

impl Sub for &Field {
    type Output = Field;
    fn sub(self, rhs: &Field) -> Field {
        self.zip_with(rhs, |a, b| a - b).expect("grid mismatch in Field - Field")
    }
}

impl Mul<f64> for &Field {
    type Output = Field;
    fn mul(self, rhs: f64) -> Field {
        self.scaled(rhs)
    }
}

impl Neg for &Field {
    type Output = Field;
    fn neg(self) -> Field {
        self.scaled(-1.0)
    }
}
