//! The discrete nonlinear peridynamic operator
//!
//! ```text
//! L_N(u)(x_n) = sum_m C(x_m - x_n) (u_m - u_n)^r dx^2
//! ```
//!
//! evaluated two ways: through the binomial expansion
//! `C*u^r + sum_{l=1}^{r-1} binom(r,l) (-1)^l u^l (C*u^{r-l}) - gamma_N u^r`
//! with every periodic convolution done by FFT, and by the direct `O(N^4)`
//! double sum used as an oracle. The `-gamma_N u^r` term uses the discrete
//! kernel mass so constants are annihilated exactly.

use std::fmt;
use std::sync::Arc;

use crate::error::{PeridynError, Result};
use crate::grid::{Field, Grid2D};
use crate::spectral::KernelSpectrum;

/// External force density `b(x1, x2, t)`.
pub type ForcingFn = Arc<dyn Fn(f64, f64, f64) -> f64 + Send + Sync>;

/// Everything that defines the right-hand side `(L_N(u) + b) / rho`.
#[derive(Clone)]
pub struct OperatorSpec {
    kernel: Arc<KernelSpectrum>,
    r: u32,
    density: f64,
    forcing: Option<ForcingFn>,
}

impl fmt::Debug for OperatorSpec {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("OperatorSpec")
            .field("kernel", &self.kernel)
            .field("r", &self.r)
            .field("density", &self.density)
            .field("forcing", &self.forcing.is_some())
            .finish()
    }
}

impl OperatorSpec {
    pub fn new(kernel: impl Into<Arc<KernelSpectrum>>, r: u32, density: f64) -> Result<Self> {
        if r == 0 || r % 2 == 0 {
            return Err(PeridynError::InvalidParameter(format!(
                "nonlinearity exponent must be odd and >= 1, got {r}"
            )));
        }
        if !(density > 0.0) || !density.is_finite() {
            return Err(PeridynError::InvalidParameter(format!(
                "density must be positive, got {density}"
            )));
        }
        Ok(Self {
            kernel: kernel.into(),
            r,
            density,
            forcing: None,
        })
    }

    pub fn with_forcing(mut self, forcing: ForcingFn) -> Self {
        self.forcing = Some(forcing);
        self
    }

    pub fn kernel(&self) -> &KernelSpectrum {
        &self.kernel
    }

    pub fn grid(&self) -> &Grid2D {
        self.kernel.grid()
    }

    pub fn r(&self) -> u32 {
        self.r
    }

    pub fn density(&self) -> f64 {
        self.density
    }

    pub fn has_forcing(&self) -> bool {
        self.forcing.is_some()
    }

    /// `b(., t) / rho` sampled on the grid, or `None` without forcing.
    pub fn forcing_field(&self, t: f64) -> Option<Field> {
        let rho = self.density;
        self.forcing
            .as_ref()
            .map(|b| Field::from_fn(*self.grid(), |x1, x2| b(x1, x2, t) / rho))
    }

    fn check_grid(&self, u: &Field) -> Result<()> {
        if u.grid() == self.grid() {
            Ok(())
        } else {
            Err(PeridynError::GridMismatch)
        }
    }

    /// Prepares `h -> DL_N(u)[h]` by caching the convolved powers of `u`.
    pub fn linearize(&self, u: &Field) -> Result<Linearization<'_>> {
        Linearization::new(self, u)
    }
}

fn binomial(n: u32, k: u32) -> f64 {
    (0..k).fold(1.0, |acc, i| acc * (n - i) as f64 / (i + 1) as f64)
}

/// `[u^0 (omitted), u^1, ..., u^max]` as raw value vectors; index `k` holds `u^k`.
fn powers(u: &[f64], max: u32) -> Vec<Vec<f64>> {
    let mut out: Vec<Vec<f64>> = Vec::with_capacity(max as usize + 1);
    out.push(Vec::new());
    if max >= 1 {
        out.push(u.to_vec());
    }
    for k in 2..=max as usize {
        let next = out[k - 1].iter().zip(u).map(|(p, x)| p * x).collect();
        out.push(next);
    }
    out
}

/// `L_N(u) / rho` through FFT convolutions; forcing is not included.
pub fn apply_spectral(u: &Field, spec: &OperatorSpec) -> Result<Field> {
    spec.check_grid(u)?;
    let r = spec.r;
    let gamma = spec.kernel.gamma_discrete();
    let pw = powers(u.values(), r);
    let inputs: Vec<&[f64]> = (1..=r as usize).map(|k| pw[k].as_slice()).collect();
    // conv[k - 1] = C * u^k
    let conv = spec.kernel.convolver.convolve_all(&inputs);

    let coeffs: Vec<f64> = (0..r)
        .map(|l| {
            let sign = if l % 2 == 0 { 1.0 } else { -1.0 };
            sign * binomial(r, l)
        })
        .collect();
    let inv_rho = 1.0 / spec.density;
    let r = r as usize;
    let mut out = vec![0.0; u.values().len()];
    for (n, o) in out.iter_mut().enumerate() {
        let x = u.values()[n];
        // l = 0 term, then u^l (C * u^{r-l}) for l = 1..r-1
        let mut acc = conv[r - 1][n];
        let mut ul = 1.0;
        for l in 1..r {
            ul *= x;
            acc += coeffs[l] * ul * conv[r - l - 1][n];
        }
        acc -= gamma * pw[r][n];
        *o = acc * inv_rho;
    }
    Field::from_values(*u.grid(), out)
}

/// Above this many points per axis the direct oracle logs a warning.
pub const DIRECT_SOFT_LIMIT: usize = 32;
/// Above this many points per axis the direct oracle refuses to run.
pub const DIRECT_HARD_LIMIT: usize = 64;

/// `L_N(u) / rho` as the literal periodic rectangle-rule sum
/// `sum_m C(x_m - x_n) (u_m - u_n)^r dx^2`. Costs `O(N^4)`.
pub fn apply_direct(u: &Field, spec: &OperatorSpec) -> Result<Field> {
    spec.check_grid(u)?;
    let grid = *u.grid();
    let n = grid.n_points();
    if n > DIRECT_HARD_LIMIT {
        return Err(PeridynError::GridTooLarge(n));
    }
    if n > DIRECT_SOFT_LIMIT {
        log::warn!("direct operator evaluation on a {n}x{n} grid is O(N^4)");
    }
    let kernel = spec.kernel.kernel_samples();
    let r = spec.r as i32;
    let dx2 = grid.dx() * grid.dx();
    let mut out = Field::zeros(grid);
    for n1 in 0..n {
        for n2 in 0..n {
            let un = u.get(n1, n2);
            let mut acc = 0.0;
            for m1 in 0..n {
                for m2 in 0..n {
                    let c = kernel.get((m1 + n - n1) % n, (m2 + n - n2) % n);
                    if c != 0.0 {
                        acc += c * (u.get(m1, m2) - un).powi(r);
                    }
                }
            }
            out.set(n1, n2, acc * dx2 / spec.density);
        }
    }
    Ok(out)
}

/// Directional derivative `DL_N(u)[h] / rho`.
pub fn jvp(u: &Field, h: &Field, spec: &OperatorSpec) -> Result<Field> {
    spec.linearize(u)?.apply(h)
}

/// The linearization of `L_N / rho` at a fixed `u`:
///
/// ```text
/// DL(u)[h]_n = r sum_m C(x_m - x_n) (u_m - u_n)^{r-1} (h_m - h_n) dx^2
///            = r sum_{q=0}^{r-1} binom(r-1, q) (-u_n)^{r-1-q}
///                  [ (C * (u^q h))_n - h_n (C * u^q)_n ]
/// ```
///
/// `C * u^q` is cached here; each application costs `r` convolutions.
pub struct Linearization<'a> {
    spec: &'a OperatorSpec,
    u_powers: Vec<Vec<f64>>,
    /// `conv_powers[q] = C * u^q`, with `q = 0` the constant `gamma_N`.
    conv_powers: Vec<Vec<f64>>,
    /// `weights[q][n] = r binom(r-1, q) (-u_n)^{r-1-q} / rho`
    weights: Vec<Vec<f64>>,
}

impl<'a> Linearization<'a> {
    fn new(spec: &'a OperatorSpec, u: &Field) -> Result<Self> {
        spec.check_grid(u)?;
        let r = spec.r;
        let len = u.values().len();
        let top = r - 1;
        let u_powers = powers(u.values(), top);
        let gamma = spec.kernel.gamma_discrete();
        let mut conv_powers = vec![vec![gamma; len]];
        if top >= 1 {
            let inputs: Vec<&[f64]> = (1..=top as usize).map(|k| u_powers[k].as_slice()).collect();
            conv_powers.extend(spec.kernel.convolver.convolve_all(&inputs));
        }
        let neg_u: Vec<f64> = u.values().iter().map(|x| -x).collect();
        let neg_powers = powers(&neg_u, top);
        let scale = r as f64 / spec.density;
        let weights = (0..=top)
            .map(|q| {
                let c = scale * binomial(top, q);
                let e = (top - q) as usize;
                if e == 0 {
                    vec![c; len]
                } else {
                    neg_powers[e].iter().map(|p| c * p).collect()
                }
            })
            .collect();
        Ok(Self {
            spec,
            u_powers,
            conv_powers,
            weights,
        })
    }

    pub fn grid(&self) -> &Grid2D {
        self.spec.grid()
    }

    pub fn apply(&self, h: &Field) -> Result<Field> {
        self.spec.check_grid(h)?;
        let top = self.spec.r - 1;
        let hv = h.values();
        let products: Vec<Vec<f64>> = (0..=top as usize)
            .map(|q| {
                if q == 0 {
                    hv.to_vec()
                } else {
                    self.u_powers[q].iter().zip(hv).map(|(p, x)| p * x).collect()
                }
            })
            .collect();
        let inputs: Vec<&[f64]> = products.iter().map(Vec::as_slice).collect();
        let conv = self.spec.kernel.convolver.convolve_all(&inputs);
        let mut out = vec![0.0; hv.len()];
        for (n, o) in out.iter_mut().enumerate() {
            let mut acc = 0.0;
            for q in 0..=top as usize {
                acc += self.weights[q][n] * (conv[q][n] - hv[n] * self.conv_powers[q][n]);
            }
            *o = acc;
        }
        Field::from_values(*h.grid(), out)
    }
}
