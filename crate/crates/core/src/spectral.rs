//! 2D discrete Fourier transforms on grid fields and the sampled micromodulus
//! kernel with its cached spectrum.
//!
//! Normalization: the forward transform is unnormalized,
//! `U[k] = sum_n u[n] exp(-2 pi i k.n / N)`, and the inverse carries `1/N^2`.
//! Parseval then reads `sum |u|^2 = (1/N^2) sum |U|^2`.
//!
//! Coefficients are stored row-major with the same `[k1][k2]` index layout as
//! field values; frequency `k` sits at index `k` for `k <= N/2` and at `N + k`
//! for negative `k`.

use std::cell::RefCell;
use std::f64::consts::PI;
use std::sync::Arc;

use rustfft::num_complex::Complex64;
use rustfft::{Fft, FftPlanner};

use crate::error::{PeridynError, Result};
use crate::grid::{Field, Grid2D};

thread_local! {
    static PLANNER: RefCell<FftPlanner<f64>> = RefCell::new(FftPlanner::new());
}

/// Forward/inverse plans for an `N x N` transform.
///
/// The row-wise passes below leave the spectrum transposed (`[k2][k1]`); the
/// convolution path multiplies in that layout and skips the extra transposes.
#[derive(Clone)]
pub(crate) struct Fft2 {
    n: usize,
    fwd: Arc<dyn Fft<f64>>,
    inv: Arc<dyn Fft<f64>>,
}

impl Fft2 {
    pub(crate) fn new(n: usize) -> Self {
        PLANNER.with(|p| {
            let mut p = p.borrow_mut();
            Self {
                n,
                fwd: p.plan_fft_forward(n),
                inv: p.plan_fft_inverse(n),
            }
        })
    }

    fn scratch(&self) -> Vec<Complex64> {
        let len = self
            .fwd
            .get_inplace_scratch_len()
            .max(self.inv.get_inplace_scratch_len());
        vec![Complex64::default(); len]
    }

    /// Natural layout in, transposed spectrum out.
    pub(crate) fn forward_t(&self, buf: &mut Vec<Complex64>, tmp: &mut Vec<Complex64>) {
        let mut scratch = self.scratch();
        self.fwd.process_with_scratch(buf, &mut scratch);
        transpose(buf, tmp, self.n);
        self.fwd.process_with_scratch(tmp, &mut scratch);
        std::mem::swap(buf, tmp);
    }

    /// Transposed spectrum in, natural layout out (unnormalized).
    pub(crate) fn inverse_from_t(&self, buf: &mut Vec<Complex64>, tmp: &mut Vec<Complex64>) {
        let mut scratch = self.scratch();
        self.inv.process_with_scratch(buf, &mut scratch);
        transpose(buf, tmp, self.n);
        self.inv.process_with_scratch(tmp, &mut scratch);
        std::mem::swap(buf, tmp);
    }
}

fn transpose(src: &[Complex64], dst: &mut [Complex64], n: usize) {
    const BLOCK: usize = 16;
    for ib in (0..n).step_by(BLOCK) {
        for jb in (0..n).step_by(BLOCK) {
            for i in ib..(ib + BLOCK).min(n) {
                for j in jb..(jb + BLOCK).min(n) {
                    dst[j * n + i] = src[i * n + j];
                }
            }
        }
    }
}

/// DFT coefficients of a field.
#[derive(Debug, Clone, PartialEq)]
pub struct Spectrum {
    grid: Grid2D,
    coefficients: Vec<Complex64>,
}

impl Spectrum {
    pub fn zeros(grid: Grid2D) -> Self {
        Self {
            grid,
            coefficients: vec![Complex64::default(); grid.len()],
        }
    }

    pub fn from_coefficients(grid: Grid2D, coefficients: Vec<Complex64>) -> Result<Self> {
        if coefficients.len() != grid.len() {
            return Err(PeridynError::InvalidParameter(format!(
                "expected {} coefficients, got {}",
                grid.len(),
                coefficients.len()
            )));
        }
        Ok(Self { grid, coefficients })
    }

    pub fn grid(&self) -> &Grid2D {
        &self.grid
    }

    pub fn coefficients(&self) -> &[Complex64] {
        &self.coefficients
    }

    pub fn coefficients_mut(&mut self) -> &mut [Complex64] {
        &mut self.coefficients
    }

    pub fn get(&self, k1: usize, k2: usize) -> Complex64 {
        self.coefficients[k1 * self.grid.n_points() + k2]
    }

    pub fn max_imag(&self) -> f64 {
        self.coefficients.iter().fold(0.0, |m, c| m.max(c.im.abs()))
    }
}

/// Unnormalized 2D forward DFT.
pub fn forward_dft2(u: &Field) -> Spectrum {
    let grid = *u.grid();
    let n = grid.n_points();
    let plan = Fft2::new(n);
    let mut buf: Vec<Complex64> = u.values().iter().map(|&v| Complex64::new(v, 0.0)).collect();
    let mut tmp = vec![Complex64::default(); buf.len()];
    plan.forward_t(&mut buf, &mut tmp);
    transpose(&buf, &mut tmp, n);
    Spectrum {
        grid,
        coefficients: tmp,
    }
}

/// Inverse DFT with the `1/N^2` factor. Fails when the result has an
/// imaginary part above `1e-12 * max(1, max |Re|)`, which only happens for
/// spectra that are not conjugate-symmetric.
pub fn inverse_dft2(s: &Spectrum) -> Result<Field> {
    let grid = s.grid;
    let n = grid.n_points();
    let plan = Fft2::new(n);
    let mut buf = vec![Complex64::default(); grid.len()];
    transpose(&s.coefficients, &mut buf, n);
    let mut tmp = vec![Complex64::default(); buf.len()];
    plan.inverse_from_t(&mut buf, &mut tmp);
    let scale = 1.0 / grid.len() as f64;
    let mut max_re: f64 = 0.0;
    let mut max_im: f64 = 0.0;
    let values: Vec<f64> = buf
        .iter()
        .map(|c| {
            max_re = max_re.max((c.re * scale).abs());
            max_im = max_im.max((c.im * scale).abs());
            c.re * scale
        })
        .collect();
    if max_im > 1e-12 * max_re.max(1.0) {
        return Err(PeridynError::ImaginaryResidue(max_im));
    }
    Field::from_values(grid, values)
}

/// Named micromodulus functions.
#[derive(Debug, Clone, Copy, PartialEq, serde::Serialize, serde::Deserialize)]
#[serde(tag = "name", rename_all = "snake_case")]
pub enum Micromodulus {
    /// `amplitude * exp(-(x1^2 + x2^2) / length^2)`
    Gaussian { amplitude: f64, length: f64 },
    /// `value` everywhere inside the horizon.
    ConstantBall { value: f64 },
}

impl Default for Micromodulus {
    fn default() -> Self {
        Micromodulus::Gaussian {
            amplitude: 1.0,
            length: 1.0,
        }
    }
}

impl Micromodulus {
    pub fn eval(&self, x1: f64, x2: f64) -> f64 {
        match *self {
            Micromodulus::Gaussian { amplitude, length } => {
                amplitude * (-(x1 * x1 + x2 * x2) / (length * length)).exp()
            }
            Micromodulus::ConstantBall { value } => value,
        }
    }

    /// Closed-form integral over the disc of radius `delta`.
    pub fn ball_integral(&self, delta: f64) -> f64 {
        match *self {
            Micromodulus::Gaussian { amplitude, length } => {
                let l2 = length * length;
                amplitude * PI * l2 * (1.0 - (-delta * delta / l2).exp())
            }
            Micromodulus::ConstantBall { value } => value * PI * delta * delta,
        }
    }
}

/// The sampled, horizon-truncated kernel and its transform.
#[derive(Clone)]
pub struct KernelSpectrum {
    kernel_samples: Field,
    spectrum: Spectrum,
    gamma_discrete: f64,
    gamma_continuum: f64,
    horizon: f64,
    pub(crate) convolver: Convolver,
}

impl std::fmt::Debug for KernelSpectrum {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("KernelSpectrum")
            .field("grid", self.kernel_samples.grid())
            .field("horizon", &self.horizon)
            .field("gamma_discrete", &self.gamma_discrete)
            .field("gamma_continuum", &self.gamma_continuum)
            .finish()
    }
}

impl KernelSpectrum {
    pub fn grid(&self) -> &Grid2D {
        self.kernel_samples.grid()
    }

    /// `C` at the signed periodic offsets, zero beyond the horizon.
    pub fn kernel_samples(&self) -> &Field {
        &self.kernel_samples
    }

    pub fn spectrum(&self) -> &Spectrum {
        &self.spectrum
    }

    /// `dx^2 * sum C`; the operator uses this value.
    pub fn gamma_discrete(&self) -> f64 {
        self.gamma_discrete
    }

    /// Integral of `C` over the horizon disc.
    pub fn gamma_continuum(&self) -> f64 {
        self.gamma_continuum
    }

    pub fn horizon(&self) -> f64 {
        self.horizon
    }
}

/// Samples `c_fn` on the grid's index-0-centred offset layout, truncates it
/// to the closed disc `|xi| <= delta` and precomputes its spectrum.
///
/// `c_fn` must be nonnegative and even, `C(-xi) = C(xi)`.
pub fn build_kernel(
    c_fn: impl Fn(f64, f64) -> f64,
    delta: f64,
    grid: Grid2D,
) -> Result<KernelSpectrum> {
    let half = grid.length() / 2.0;
    if !(delta > 0.0) || !delta.is_finite() {
        return Err(PeridynError::InvalidParameter(format!(
            "horizon must be positive, got {delta}"
        )));
    }
    if delta > half * (1.0 + 1e-12) {
        return Err(PeridynError::HorizonTooLarge { delta, half });
    }
    let n = grid.n_points();
    // Points on the horizon circle belong to the ball; the slack absorbs
    // rounding in i*dx.
    let cutoff = delta * delta * (1.0 + 1e-12);
    let mut samples = Field::zeros(grid);
    for i1 in 0..n {
        let s1 = grid.signed_offset(i1);
        for i2 in 0..n {
            let s2 = grid.signed_offset(i2);
            if s1 * s1 + s2 * s2 <= cutoff {
                let c = c_fn(s1, s2);
                if !c.is_finite() || c < 0.0 {
                    return Err(PeridynError::InvalidParameter(format!(
                        "micromodulus must be finite and nonnegative, C({s1}, {s2}) = {c}"
                    )));
                }
                samples.set(i1, i2, c);
            }
        }
    }
    let scale = samples.max_abs();
    for i1 in 0..n {
        for i2 in 0..n {
            let mirrored = samples.get((n - i1) % n, (n - i2) % n);
            if (samples.get(i1, i2) - mirrored).abs() > 1e-13 * scale {
                return Err(PeridynError::InvalidParameter(
                    "micromodulus must be even, C(-xi) = C(xi)".into(),
                ));
            }
        }
    }

    let dx = grid.dx();
    let gamma_discrete = dx * dx * samples.values().iter().sum::<f64>();
    let gamma_continuum = disc_integral(&c_fn, delta);
    let spectrum = forward_dft2(&samples);
    let convolver = Convolver::new(&samples);
    Ok(KernelSpectrum {
        kernel_samples: samples,
        spectrum,
        gamma_discrete,
        gamma_continuum,
        horizon: delta,
        convolver,
    })
}

/// Polar quadrature of `f` over the disc of radius `radius`: Gauss-Legendre
/// in the radius, trapezoid (spectrally accurate for periodic integrands) in
/// the angle.
pub fn disc_integral(f: impl Fn(f64, f64) -> f64, radius: f64) -> f64 {
    const RADIAL: usize = 48;
    const ANGULAR: usize = 256;
    let (nodes, weights) = gauss_legendre(RADIAL);
    let dtheta = 2.0 * PI / ANGULAR as f64;
    let mut total = 0.0;
    for (x, w) in nodes.iter().zip(&weights) {
        let r = 0.5 * radius * (x + 1.0);
        let mut ring = 0.0;
        for j in 0..ANGULAR {
            let theta = j as f64 * dtheta;
            ring += f(r * theta.cos(), r * theta.sin());
        }
        total += w * r * ring * dtheta;
    }
    0.5 * radius * total
}

/// Nodes and weights on `[-1, 1]`.
pub(crate) fn gauss_legendre(n: usize) -> (Vec<f64>, Vec<f64>) {
    let mut nodes = vec![0.0; n];
    let mut weights = vec![0.0; n];
    for i in 0..(n + 1) / 2 {
        let mut x = (PI * (i as f64 + 0.75) / (n as f64 + 0.5)).cos();
        let mut dp = 0.0;
        for _ in 0..100 {
            let (mut p0, mut p1) = (1.0, x);
            for k in 2..=n {
                let k = k as f64;
                let p2 = ((2.0 * k - 1.0) * x * p1 - (k - 1.0) * p0) / k;
                p0 = p1;
                p1 = p2;
            }
            dp = n as f64 * (x * p1 - p0) / (x * x - 1.0);
            let step = p1 / dp;
            x -= step;
            if step.abs() < 1e-16 {
                break;
            }
        }
        let w = 2.0 / ((1.0 - x * x) * dp * dp);
        nodes[i] = -x;
        nodes[n - 1 - i] = x;
        weights[i] = w;
        weights[n - 1 - i] = w;
    }
    (nodes, weights)
}

/// Periodic convolution `dx^2 * sum_m C(x_n - x_m) f(x_m)` through the cached
/// kernel spectrum. Two real inputs share one complex transform.
#[derive(Clone)]
pub(crate) struct Convolver {
    fft: Fft2,
    kernel_hat_t: Vec<Complex64>,
    weight: f64,
}

impl Convolver {
    fn new(samples: &Field) -> Self {
        let grid = *samples.grid();
        let fft = Fft2::new(grid.n_points());
        let mut buf: Vec<Complex64> = samples
            .values()
            .iter()
            .map(|&v| Complex64::new(v, 0.0))
            .collect();
        let mut tmp = vec![Complex64::default(); buf.len()];
        fft.forward_t(&mut buf, &mut tmp);
        let dx = grid.dx();
        Self {
            fft,
            kernel_hat_t: buf,
            weight: dx * dx / grid.len() as f64,
        }
    }

    /// Convolves `a` and (optionally) `b`, writing into `out_a` / `out_b`.
    pub(crate) fn convolve_pair(
        &self,
        a: &[f64],
        b: Option<&[f64]>,
        out_a: &mut [f64],
        out_b: Option<&mut [f64]>,
    ) {
        let mut buf: Vec<Complex64> = match b {
            Some(b) => a.iter().zip(b).map(|(&x, &y)| Complex64::new(x, y)).collect(),
            None => a.iter().map(|&x| Complex64::new(x, 0.0)).collect(),
        };
        let mut tmp = vec![Complex64::default(); buf.len()];
        self.fft.forward_t(&mut buf, &mut tmp);
        for (c, k) in buf.iter_mut().zip(&self.kernel_hat_t) {
            *c *= *k;
        }
        self.fft.inverse_from_t(&mut buf, &mut tmp);
        for (o, c) in out_a.iter_mut().zip(&buf) {
            *o = c.re * self.weight;
        }
        if let Some(out_b) = out_b {
            for (o, c) in out_b.iter_mut().zip(&buf) {
                *o = c.im * self.weight;
            }
        }
    }

    /// Convolves every input, pairing them up two per transform.
    pub(crate) fn convolve_all(&self, inputs: &[&[f64]]) -> Vec<Vec<f64>> {
        let len = inputs.first().map_or(0, |v| v.len());
        let mut outs: Vec<Vec<f64>> = vec![vec![0.0; len]; inputs.len()];
        let mut k = 0;
        while k < inputs.len() {
            if k + 1 < inputs.len() {
                let (left, right) = outs.split_at_mut(k + 1);
                self.convolve_pair(
                    inputs[k],
                    Some(inputs[k + 1]),
                    &mut left[k],
                    Some(&mut right[0]),
                );
                k += 2;
            } else {
                self.convolve_pair(inputs[k], None, &mut outs[k], None);
                k += 1;
            }
        }
        outs
    }
}
