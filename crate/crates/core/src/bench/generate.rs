//! Seeded factor-model instance generator.
//!
//! `Q = AAᵀ/k + 10⁻³·I` with `A` an `n×k` matrix of standard normal draws and
//! `k = max(n/4, 2)`; expected returns are uniform on a range (default
//! `[0, 0.1]`); upper bounds default to `u = e`.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::model::{Matrix, PortfolioInstance, Vector};

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum UboundScheme {
    Ones,
    /// The same cap for every asset.
    Constant(f64),
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct GeneratorParams {
    pub n: usize,
    pub kappa: usize,
    /// Number of factors; `None` means `max(n/4, 2)`.
    pub factors: Option<usize>,
    pub mean_range: (f64, f64),
    pub ubound: UboundScheme,
    pub jitter: f64,
    pub seed: u64,
}

impl GeneratorParams {
    pub fn new(n: usize, kappa: usize, seed: u64) -> Self {
        Self {
            n,
            kappa,
            factors: None,
            mean_range: (0.0, 0.1),
            ubound: UboundScheme::Ones,
            jitter: 1e-3,
            seed,
        }
    }

    pub fn factor_count(&self) -> usize {
        self.factors.unwrap_or_else(|| (self.n / 4).max(2))
    }
}

pub fn generate_instance(params: &GeneratorParams) -> Result<PortfolioInstance> {
    let n = params.n;
    if n < 2 {
        return Err(Error::usage("generator needs n >= 2"));
    }
    let k = params.factor_count();
    if k == 0 {
        return Err(Error::usage("factor count must be positive"));
    }
    let (lo, hi) = params.mean_range;
    if !(lo <= hi) {
        return Err(Error::usage("empty mean range"));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(params.seed);
    let mut a = Matrix::zeros(n, k);
    for i in 0..n {
        for j in 0..k {
            a[(i, j)] = rng.sample(StandardNormal);
        }
    }
    let cov = &a * a.transpose() / k as f64 + Matrix::identity(n, n) * params.jitter;
    let mean = Vector::from_fn(n, |_, _| {
        if lo == hi {
            lo
        } else {
            rng.random_range(lo..hi)
        }
    });
    let ubound = match params.ubound {
        UboundScheme::Ones => Vector::from_element(n, 1.0),
        UboundScheme::Constant(c) => Vector::from_element(n, c),
    };
    PortfolioInstance::new(mean, cov, ubound, params.kappa)
}
