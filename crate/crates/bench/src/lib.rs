//! Fixtures shared by the benchmarks in `benches/`.

use peridyn::{build_kernel, Field, Grid2D, Micromodulus, OperatorSpec};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

/// Gaussian micromodulus, horizon 0.2, on the unit square with `n` points per axis.
pub fn benchmark_operator(n: usize, r: u32) -> OperatorSpec {
    let grid = Grid2D::new(0.0, 1.0, n).expect("valid grid");
    let c = Micromodulus::default();
    let kernel = build_kernel(|a, b| c.eval(a, b), 0.2, grid).expect("valid kernel");
    OperatorSpec::new(kernel, r, 1.0).expect("valid operator")
}

pub fn random_field(grid: Grid2D, seed: u64) -> Field {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    Field::from_fn(grid, |_, _| rng.gen_range(-1.0..1.0))
}
