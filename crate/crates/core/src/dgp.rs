//! Synthetic confounded offline datasets with known ground truth.
//!
//! Three generators are provided:
//!
//! * [`generate_iv_dataset`] — two-dimensional contexts with an instrumental
//!   variable, equicorrelated Gaussian `(X1, X2, Z)`, a treatment-assignment
//!   score with coverage bias, and reward
//!   `Y = β₁X1 + β₂X2 + A(β₃X1 + β₄X2) + ε`.
//! * [`generate_appendix_dataset`] — the one-dimensional variant with
//!   `Y = X + 3XA + ε` and assignment score `t = X + Z + ε + γ·1{X>0}`.
//! * [`generate_nc_dataset`] — a negative-control setting where an exposure
//!   `E` and outcome `V` both load on a latent confounder `U`, and the error
//!   is shifted so its marginal α-quantile is exactly zero.
//!
//! Every generator is a pure function of its config: identical configs give
//! bitwise-identical datasets. The drawn structural errors are retained on
//! the dataset so tests can check `Y − h*(A, X) = ε` exactly.

use crate::error::{Error, Result};
use crate::features::HypothesisSpace;
use crate::fmt::float17;
use crate::linalg::cholesky_lower;
use crate::numeric::{norm_quantile, sigmoid};
use ndarray::arr2;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;

/// True structural coefficients used throughout the two-dimensional setting.
pub const DEFAULT_BETA_TRUE: [f64; 4] = [1.0, 1.0, 3.0, 2.0];

/// One offline IV observation. `a` is the logged binary action.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct IvSample {
    pub x1: f64,
    pub x2: f64,
    pub z: f64,
    pub a: bool,
    pub y: f64,
}

/// Configuration of the two-dimensional IV data generating process.
#[derive(Debug, Clone, PartialEq)]
pub struct DgpConfig {
    /// Sample count.
    pub n: usize,
    /// Target quantile level α ∈ (0, 1).
    pub alpha: f64,
    /// Common correlation of the centered (X1, X2, Z) Gaussian.
    pub rho: f64,
    /// Fraction of samples whose assignment score is structured (confounded).
    pub p_structured: f64,
    /// Treatment bias added when X1 ≥ 0.
    pub b_plus: f64,
    /// Treatment bias added when X1 < 0.
    pub b_minus: f64,
    /// True structural coefficients (β₁, β₂, β₃, β₄).
    pub beta_true: [f64; 4],
    pub seed: u64,
}

impl Default for DgpConfig {
    fn default() -> Self {
        DgpConfig {
            n: 1000,
            alpha: 0.2,
            rho: 0.95,
            p_structured: 0.7,
            b_plus: 8.0,
            b_minus: -5.0,
            beta_true: DEFAULT_BETA_TRUE,
            seed: 0,
        }
    }
}

impl DgpConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.alpha > 0.0 && self.alpha < 1.0) {
            return Err(Error::Config(format!(
                "alpha must lie in (0, 1), got {}",
                self.alpha
            )));
        }
        if !(self.rho > -1.0 && self.rho < 1.0) {
            return Err(Error::Config(format!(
                "rho must lie in (-1, 1), got {}",
                self.rho
            )));
        }
        if !(0.0..=1.0).contains(&self.p_structured) {
            return Err(Error::Config(format!(
                "p_structured must lie in [0, 1], got {}",
                self.p_structured
            )));
        }
        for (name, v) in [
            ("b_plus", self.b_plus),
            ("b_minus", self.b_minus),
            ("beta_true[0]", self.beta_true[0]),
            ("beta_true[1]", self.beta_true[1]),
            ("beta_true[2]", self.beta_true[2]),
            ("beta_true[3]", self.beta_true[3]),
        ] {
            if !v.is_finite() {
                return Err(Error::Config(format!("{name} must be finite, got {v}")));
            }
        }
        Ok(())
    }
}

/// Configuration of the one-dimensional appendix-style DGP.
///
/// Here `p_noise` is the fraction of samples whose assignment score is pure
/// noise; the remainder use `t = X + Z + ε + γ·1{X > 0}`.
#[derive(Debug, Clone, PartialEq)]
pub struct AppendixDgpConfig {
    pub n: usize,
    pub alpha: f64,
    pub p_noise: f64,
    pub gamma: f64,
    pub seed: u64,
}

impl Default for AppendixDgpConfig {
    fn default() -> Self {
        AppendixDgpConfig {
            n: 1000,
            alpha: 0.2,
            p_noise: 0.5,
            gamma: 8.0,
            seed: 0,
        }
    }
}

impl AppendixDgpConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.alpha > 0.0 && self.alpha < 1.0) {
            return Err(Error::Config(format!(
                "alpha must lie in (0, 1), got {}",
                self.alpha
            )));
        }
        if !(0.0..=1.0).contains(&self.p_noise) {
            return Err(Error::Config(format!(
                "p_noise must lie in [0, 1], got {}",
                self.p_noise
            )));
        }
        if !self.gamma.is_finite() {
            return Err(Error::Config(format!("gamma must be finite, got {}", self.gamma)));
        }
        Ok(())
    }

    /// True coefficients of the 1-D hypothesis `h(a, x) = β₁x + β₂ax`.
    pub fn beta_true(&self) -> [f64; 2] {
        [1.0, 3.0]
    }
}

/// Which generator produced a dataset, with the full config used.
#[derive(Debug, Clone, PartialEq)]
pub enum DatasetMeta {
    TwoDim(DgpConfig),
    OneDim(AppendixDgpConfig),
}

impl DatasetMeta {
    pub fn n(&self) -> usize {
        match self {
            DatasetMeta::TwoDim(c) => c.n,
            DatasetMeta::OneDim(c) => c.n,
        }
    }

    pub fn alpha(&self) -> f64 {
        match self {
            DatasetMeta::TwoDim(c) => c.alpha,
            DatasetMeta::OneDim(c) => c.alpha,
        }
    }

    pub fn space(&self) -> HypothesisSpace {
        match self {
            DatasetMeta::TwoDim(_) => HypothesisSpace::TwoDim,
            DatasetMeta::OneDim(_) => HypothesisSpace::OneDim,
        }
    }

    /// True coefficient vector in the dataset's hypothesis space.
    pub fn beta_true(&self) -> Vec<f64> {
        match self {
            DatasetMeta::TwoDim(c) => c.beta_true.to_vec(),
            DatasetMeta::OneDim(c) => c.beta_true().to_vec(),
        }
    }
}

/// An immutable offline IV dataset.
#[derive(Debug, Clone, PartialEq)]
pub struct IvDataset {
    pub samples: Vec<IvSample>,
    pub alpha: f64,
    pub meta: DatasetMeta,
    epsilons: Vec<f64>,
}

impl IvDataset {
    pub fn n(&self) -> usize {
        self.samples.len()
    }

    pub fn space(&self) -> HypothesisSpace {
        self.meta.space()
    }

    pub fn beta_true(&self) -> Vec<f64> {
        self.meta.beta_true()
    }

    /// Drawn structural errors, retained for diagnostics and tests.
    pub fn epsilons(&self) -> &[f64] {
        &self.epsilons
    }

    /// CSV dump with header `x1,x2,z,a,y`, floats at 17 significant digits.
    pub fn to_csv_string(&self) -> String {
        let mut out = String::from("x1,x2,z,a,y\n");
        for s in &self.samples {
            out.push_str(&format!(
                "{},{},{},{},{}\n",
                float17(s.x1),
                float17(s.x2),
                float17(s.z),
                u8::from(s.a),
                float17(s.y)
            ));
        }
        out
    }
}

/// One offline negative-control observation, including the augmented action.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct NcSample {
    pub x1: f64,
    pub x2: f64,
    /// Negative-control exposure.
    pub e: f64,
    /// Negative-control outcome.
    pub v: f64,
    pub a: bool,
    pub y: f64,
    /// Augmented action, uniform on {0, 1} and independent of everything else.
    pub a_prime: bool,
}

/// Configuration of the constructed negative-control DGP.
#[derive(Debug, Clone, PartialEq)]
pub struct NcDgpConfig {
    pub n: usize,
    pub alpha: f64,
    /// Coefficient of the latent confounder U in the structural error.
    /// `kappa = 0` yields an unconfounded dataset.
    pub kappa: f64,
    /// Standard deviation of the exposure channel noise: E = U + σ_E·ξ.
    pub sigma_e: f64,
    /// Standard deviation of the outcome channel noise: V = U + σ_V·ξ.
    pub sigma_v: f64,
    pub beta_true: [f64; 4],
    pub seed: u64,
}

impl Default for NcDgpConfig {
    fn default() -> Self {
        NcDgpConfig {
            n: 1000,
            alpha: 0.2,
            kappa: 1.0,
            sigma_e: 1.0,
            sigma_v: 1.0,
            beta_true: DEFAULT_BETA_TRUE,
            seed: 0,
        }
    }
}

impl NcDgpConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.alpha > 0.0 && self.alpha < 1.0) {
            return Err(Error::Config(format!(
                "alpha must lie in (0, 1), got {}",
                self.alpha
            )));
        }
        if !self.kappa.is_finite() {
            return Err(Error::Config(format!("kappa must be finite, got {}", self.kappa)));
        }
        if self.sigma_e < 0.0 || self.sigma_v < 0.0 {
            return Err(Error::Config(
                "negative-control noise scales must be nonnegative".into(),
            ));
        }
        Ok(())
    }
}

/// An immutable offline NC dataset with augmented actions.
#[derive(Debug, Clone, PartialEq)]
pub struct NcDataset {
    pub samples: Vec<NcSample>,
    pub alpha: f64,
    pub meta: NcDgpConfig,
    epsilons: Vec<f64>,
}

impl NcDataset {
    pub fn n(&self) -> usize {
        self.samples.len()
    }

    pub fn beta_true(&self) -> Vec<f64> {
        self.meta.beta_true.to_vec()
    }

    pub fn epsilons(&self) -> &[f64] {
        &self.epsilons
    }

    /// CSV dump with header `x1,x2,e,v,a,y,a_prime`.
    pub fn to_csv_string(&self) -> String {
        let mut out = String::from("x1,x2,e,v,a,y,a_prime\n");
        for s in &self.samples {
            out.push_str(&format!(
                "{},{},{},{},{},{},{}\n",
                float17(s.x1),
                float17(s.x2),
                float17(s.e),
                float17(s.v),
                u8::from(s.a),
                float17(s.y),
                u8::from(s.a_prime)
            ));
        }
        out
    }
}

/// Structural quantile function `h*(a, x; β) = β₁x₁ + β₂x₂ + a(β₃x₁ + β₄x₂)`.
pub fn structural_quantile(a: bool, x: [f64; 2], beta: &[f64; 4]) -> f64 {
    let act = if a { 1.0 } else { 0.0 };
    beta[0] * x[0] + beta[1] * x[1] + act * (beta[2] * x[0] + beta[3] * x[1])
}

/// Oracle policy of the default two-dimensional DGP: action 1 iff
/// `3x₁ + 2x₂ > 0`. Ties resolve to action 0.
pub fn oracle_policy(x: [f64; 2]) -> bool {
    3.0 * x[0] + 2.0 * x[1] > 0.0
}

/// Draws `(x1, x2, z)` from the equicorrelated trivariate Gaussian given the
/// lower Cholesky factor of its correlation matrix.
fn trivariate_names(rng: &mut ChaCha8Rng, l: &ndarray::Array2<f64>) -> (f64, f64, f64) {
    let g1: f64 = rng.sample(StandardNormal);
    let g2: f64 = rng.sample(StandardNormal);
    let g3: f64 = rng.sample(StandardNormal);
    let x1 = l[[0, 0]] * g1;
    let x2 = l[[1, 0]] * g1 + l[[1, 1]] * g2;
    let z = l[[2, 0]] * g1 + l[[2, 1]] * g2 + l[[2, 2]] * g3;
    (x1, x2, z)
}

/// Generates the two-dimensional confounded IV dataset.
///
/// The first ⌊p·n⌋ samples receive the structured assignment score
/// `S = X1 + 0.5·X2² + Z + b₊·1{X1 ≥ 0} + b₋·1{X1 < 0} + ε`; the rest draw
/// `S ~ N(0, 1)`. Assignment is i.i.d. across samples, so leaving the
/// dataset in generation order carries no information.
pub fn generate_iv_dataset(config: &DgpConfig) -> Result<IvDataset> {
    config.validate()?;
    let corr = arr2(&[
        [1.0, config.rho, config.rho],
        [config.rho, 1.0, config.rho],
        [config.rho, config.rho, 1.0],
    ]);
    let l = cholesky_lower(corr.view()).ok_or_else(|| {
        Error::Config(format!(
            "equicorrelated Gaussian requires rho > -1/2 for positive definiteness, got {}",
            config.rho
        ))
    })?;

    let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
    let eps_mean = -norm_quantile(config.alpha);
    let n_structured = (config.p_structured * config.n as f64).floor() as usize;

    let mut samples = Vec::with_capacity(config.n);
    let mut epsilons = Vec::with_capacity(config.n);
    for i in 0..config.n {
        let (x1, x2, z) = trivariate_names(&mut rng, &l);
        let eps = eps_mean + rng.sample::<f64, _>(StandardNormal);
        let score = if i < n_structured {
            let bias = if x1 >= 0.0 { config.b_plus } else { config.b_minus };
            x1 + 0.5 * x2 * x2 + z + bias + eps
        } else {
            rng.sample::<f64, _>(StandardNormal)
        };
        let a = rng.gen::<f64>() < sigmoid(score);
        let h = structural_quantile(a, [x1, x2], &config.beta_true);
        let y = h + eps;
        samples.push(IvSample { x1, x2, z, a, y });
        // Store the rounded decomposition so y − h* recovers it exactly.
        epsilons.push(y - h);
    }

    Ok(IvDataset {
        samples,
        alpha: config.alpha,
        meta: DatasetMeta::TwoDim(config.clone()),
        epsilons,
    })
}

/// Generates the one-dimensional dataset (`x2` is identically zero).
///
/// The first ⌊p_noise·n⌋ samples use a pure-noise assignment score; the rest
/// use `t = X + Z + ε + γ·1{X > 0}`. The reward is `Y = X + 3XA + ε`.
pub fn generate_appendix_dataset(
    n: usize,
    alpha: f64,
    p_noise: f64,
    gamma: f64,
    seed: u64,
) -> Result<IvDataset> {
    let config = AppendixDgpConfig {
        n,
        alpha,
        p_noise,
        gamma,
        seed,
    };
    config.validate()?;

    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let eps_mean = -norm_quantile(alpha);
    let n_noise = (p_noise * n as f64).floor() as usize;

    let mut samples = Vec::with_capacity(n);
    let mut epsilons = Vec::with_capacity(n);
    for i in 0..n {
        let x: f64 = rng.sample(StandardNormal);
        let z: f64 = rng.sample(StandardNormal);
        let eps = eps_mean + rng.sample::<f64, _>(StandardNormal);
        let t = if i < n_noise {
            rng.sample::<f64, _>(StandardNormal)
        } else {
            x + z + eps + if x > 0.0 { gamma } else { 0.0 }
        };
        let a = rng.gen::<f64>() < sigmoid(t);
        let h = x + 3.0 * x * (if a { 1.0 } else { 0.0 });
        let y = h + eps;
        samples.push(IvSample {
            x1: x,
            x2: 0.0,
            z,
            a,
            y,
        });
        epsilons.push(y - h);
    }

    Ok(IvDataset {
        samples,
        alpha,
        meta: DatasetMeta::OneDim(config),
        epsilons,
    })
}

/// Generates the constructed negative-control dataset.
///
/// `U ~ N(0,1)` is latent; `ε = κU + ν − √(κ²+1)·Φ⁻¹(α)` so its marginal
/// α-quantile is exactly zero; `E = U + σ_E·ξ`, `V = U + σ_V·ξ`; the action
/// depends on `(X, U)`; `A'` is uniform and independent of everything else.
pub fn generate_nc_dataset(config: &NcDgpConfig) -> Result<NcDataset> {
    config.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
    let shift = (config.kappa * config.kappa + 1.0).sqrt() * norm_quantile(config.alpha);

    let mut samples = Vec::with_capacity(config.n);
    let mut epsilons = Vec::with_capacity(config.n);
    for _ in 0..config.n {
        let u: f64 = rng.sample(StandardNormal);
        let x1: f64 = rng.sample(StandardNormal);
        let x2: f64 = rng.sample(StandardNormal);
        let nu: f64 = rng.sample(StandardNormal);
        let eps = config.kappa * u + nu - shift;
        let e = u + config.sigma_e * rng.sample::<f64, _>(StandardNormal);
        let v = u + config.sigma_v * rng.sample::<f64, _>(StandardNormal);
        let score = x1 + 0.5 * x2 + u;
        let a = rng.gen::<f64>() < sigmoid(score);
        let h = structural_quantile(a, [x1, x2], &config.beta_true);
        let y = h + eps;
        let a_prime = rng.gen::<f64>() < 0.5;
        samples.push(NcSample {
            x1,
            x2,
            e,
            v,
            a,
            y,
            a_prime,
        });
        epsilons.push(y - h);
    }

    Ok(NcDataset {
        samples,
        alpha: config.alpha,
        meta: config.clone(),
        epsilons,
    })
}
