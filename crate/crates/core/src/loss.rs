//! The Fenchel-dual empirical loss with closed-form inner maximization.
//!
//! For a hypothesis `h` the residual vector is
//! `w_i = 1{y_i ≤ h(a_i, x_i)} − α` (hard) or its logistic smoothing
//! `w_i = σ(t·(h_i − y_i)) − α`. Over a linear test class with design matrix
//! `M`, the dual loss
//!
//! ```text
//! L_n(h) = sup_b { (1/n)·wᵀMb − (1/(2n))·‖Mb‖² }
//! ```
//!
//! has the closed-form maximizer `b = (MᵀM + λI)⁻¹Mᵀw`. The reported value
//! always uses the exact empirical norm `(1/(2n))·bᵀMᵀMb`, so `λ = 0`
//! recovers the exact dual — half the squared projection of `w` onto the
//! column space of `M` — and any `λ > 0` only shrinks the maximizer. The
//! default ridge `λ = 1e−8·tr(MᵀM)/d` is a conditioning guard.
//!
//! Gradients (smoothed mode only) hold the inner maximizer fixed:
//! `∂L/∂β = (1/n)·Jᵀ(Mb)` with `J_i = t·s_i(1−s_i)·φ(a_i, x_i)`.

use crate::dgp::{IvDataset, NcDataset};
use crate::error::{Error, Result};
use crate::features::{
    build_design_matrix, hypothesis_design, hypothesis_values, DesignMatrix, HypothesisSpace,
    TestBasis,
};
use crate::linalg::{cholesky_lower, spd_solve};
use crate::numeric::sigmoid;
use ndarray::{Array1, Array2, ArrayView1};

/// Residual smoothing selector.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum LossMode {
    Hard,
    Smoothed,
}

/// Ridge policy for the inner normal system `(MᵀM + λI)`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum Ridge {
    /// λ = 0; recovers the exact dual but requires full column rank.
    Exact,
    /// λ = c·tr(MᵀM)/d.
    Scaled(f64),
    /// A fixed λ ≥ 0.
    Absolute(f64),
}

impl Ridge {
    fn resolve(&self, trace: f64, d: usize) -> Result<f64> {
        let lambda = match *self {
            Ridge::Exact => 0.0,
            Ridge::Scaled(c) => {
                if c < 0.0 {
                    return Err(Error::Config(format!("ridge scale must be >= 0, got {c}")));
                }
                c * trace / d.max(1) as f64
            }
            Ridge::Absolute(l) => {
                if l < 0.0 {
                    return Err(Error::Config(format!("ridge must be >= 0, got {l}")));
                }
                l
            }
        };
        Ok(lambda)
    }
}

/// Loss computation knobs.
#[derive(Debug, Clone, PartialEq)]
pub struct LossConfig {
    pub ridge: Ridge,
    pub smoothing_temperature: f64,
    pub mode: LossMode,
}

impl Default for LossConfig {
    fn default() -> Self {
        LossConfig {
            ridge: Ridge::Scaled(1e-8),
            smoothing_temperature: 5.0,
            mode: LossMode::Smoothed,
        }
    }
}

impl LossConfig {
    pub fn hard() -> Self {
        LossConfig {
            mode: LossMode::Hard,
            ..LossConfig::default()
        }
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.smoothing_temperature > 0.0 && self.smoothing_temperature.is_finite()) {
            return Err(Error::Config(format!(
                "smoothing temperature must be positive, got {}",
                self.smoothing_temperature
            )));
        }
        Ok(())
    }

    pub fn residual_mode(&self) -> ResidualMode {
        match self.mode {
            LossMode::Hard => ResidualMode::Hard,
            LossMode::Smoothed => ResidualMode::Smoothed {
                temperature: self.smoothing_temperature,
            },
        }
    }
}

/// How a residual vector was produced.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum ResidualMode {
    Hard,
    Smoothed { temperature: f64 },
}

/// Per-sample residuals `W(D; h)`.
///
/// Hard entries lie in `{−α, 1−α}`; smoothed entries lie in `(−α, 1−α)`
/// mathematically (saturating to the endpoints in floating point).
#[derive(Debug, Clone, PartialEq)]
pub struct ResidualVector {
    pub w: Array1<f64>,
    pub mode: ResidualMode,
}

/// Solution of the inner maximization over the linear test class.
#[derive(Debug, Clone, PartialEq)]
pub struct InnerSolution {
    /// Coefficients of the maximizing test function in the basis.
    pub theta_coef: Array1<f64>,
    /// Attained dual loss; nonnegative up to roundoff since θ = 0 is feasible.
    pub loss_value: f64,
}

/// Factorized inner solver for a fixed design matrix.
#[derive(Debug, Clone)]
pub struct InnerSolver {
    gram: Array2<f64>,
    chol: Array2<f64>,
    lambda: f64,
    n: usize,
}

impl InnerSolver {
    pub fn new(dm: &DesignMatrix, ridge: &Ridge) -> Result<Self> {
        let gram = dm.m.t().dot(&dm.m);
        let trace = gram.diag().sum();
        let lambda = ridge.resolve(trace, dm.d())?;
        let mut shifted = gram.clone();
        for i in 0..dm.d() {
            shifted[[i, i]] += lambda;
        }
        let chol = cholesky_lower(shifted.view()).ok_or_else(|| {
            if lambda == 0.0 {
                Error::Numerical(
                    "normal matrix MᵀM is singular; use a positive ridge such as Ridge::Scaled(1e-8)"
                        .into(),
                )
            } else {
                Error::Numerical("ridged normal matrix is not positive definite".into())
            }
        })?;
        Ok(InnerSolver {
            gram,
            chol,
            lambda,
            n: dm.n(),
        })
    }

    pub fn lambda(&self) -> f64 {
        self.lambda
    }

    /// Closed-form inner maximization for a residual vector.
    pub fn solve(&self, dm: &DesignMatrix, w: ArrayView1<f64>) -> InnerSolution {
        let u = dm.m.t().dot(&w);
        let b = spd_solve(&self.chol, u.view());
        let linear = u.dot(&b);
        let quad = b.dot(&self.gram.dot(&b));
        let n = self.n as f64;
        InnerSolution {
            theta_coef: b,
            loss_value: (linear - 0.5 * quad) / n,
        }
    }
}

/// Closed-form inner maximization: returns the maximizing test-function
/// coefficients and the attained dual loss.
pub fn inner_maximize(
    w: &ResidualVector,
    dm: &DesignMatrix,
    ridge: &Ridge,
) -> Result<InnerSolution> {
    if w.w.len() != dm.n() {
        return Err(Error::Config(format!(
            "residual length {} does not match design rows {}",
            w.w.len(),
            dm.n()
        )));
    }
    let solver = InnerSolver::new(dm, ridge)?;
    Ok(solver.solve(dm, w.w.view()))
}

/// Prepared loss evaluator for one IV dataset and test basis.
///
/// Construction builds the design matrix and factorizes the inner normal
/// system once; `loss` and `loss_and_gradient` are then O(n·d) per call.
pub struct LossEvaluator {
    y: Array1<f64>,
    hfeat: Array2<f64>,
    dm: DesignMatrix,
    solver: InnerSolver,
    alpha: f64,
    mode: ResidualMode,
    space: HypothesisSpace,
}

impl LossEvaluator {
    pub fn new(
        dataset: &IvDataset,
        alpha: f64,
        basis: &TestBasis,
        config: &LossConfig,
    ) -> Result<Self> {
        config.validate()?;
        if !(alpha > 0.0 && alpha < 1.0) {
            return Err(Error::Config(format!("alpha must lie in (0, 1), got {alpha}")));
        }
        if dataset.n() == 0 {
            return Err(Error::Config("empty dataset".into()));
        }
        let dm = build_design_matrix(dataset, basis)?;
        let solver = InnerSolver::new(&dm, &config.ridge)?;
        let space = dataset.space();
        let hfeat = hypothesis_design(
            space,
            dataset.samples.iter().map(|s| (s.a, s.x1, s.x2)),
            dataset.n(),
        );
        let y = Array1::from_iter(dataset.samples.iter().map(|s| s.y));
        Ok(LossEvaluator {
            y,
            hfeat,
            dm,
            solver,
            alpha,
            mode: config.residual_mode(),
            space,
        })
    }

    pub fn n(&self) -> usize {
        self.y.len()
    }

    pub fn alpha(&self) -> f64 {
        self.alpha
    }

    pub fn space(&self) -> HypothesisSpace {
        self.space
    }

    pub fn design(&self) -> &DesignMatrix {
        &self.dm
    }

    pub fn h_values(&self, beta: &[f64]) -> Result<Array1<f64>> {
        self.space.check_beta(beta)?;
        Ok(hypothesis_values(&self.hfeat, &Array1::from(beta.to_vec())))
    }

    fn residual_values(&self, h: &Array1<f64>) -> Array1<f64> {
        match self.mode {
            ResidualMode::Hard => Array1::from_iter(
                self.y
                    .iter()
                    .zip(h.iter())
                    .map(|(y, h)| if *y <= *h { 1.0 - self.alpha } else { -self.alpha }),
            ),
            ResidualMode::Smoothed { temperature } => Array1::from_iter(
                self.y
                    .iter()
                    .zip(h.iter())
                    .map(|(y, h)| sigmoid(temperature * (h - y)) - self.alpha),
            ),
        }
    }

    pub fn residuals(&self, beta: &[f64]) -> Result<ResidualVector> {
        let h = self.h_values(beta)?;
        Ok(ResidualVector {
            w: self.residual_values(&h),
            mode: self.mode,
        })
    }

    pub fn inner_solution(&self, beta: &[f64]) -> Result<InnerSolution> {
        let h = self.h_values(beta)?;
        let w = self.residual_values(&h);
        Ok(self.solver.solve(&self.dm, w.view()))
    }

    pub fn loss(&self, beta: &[f64]) -> Result<f64> {
        Ok(self.inner_solution(beta)?.loss_value)
    }

    /// Smoothed loss and its gradient with θ held at the inner maximizer.
    pub fn loss_and_gradient(&self, beta: &[f64]) -> Result<(f64, Array1<f64>)> {
        let temperature = match self.mode {
            ResidualMode::Smoothed { temperature } => temperature,
            ResidualMode::Hard => {
                return Err(Error::UnsupportedMode(
                    "the hard loss is not differentiable; use the smoothed mode".into(),
                ))
            }
        };
        let h = self.h_values(beta)?;
        let n = self.n() as f64;
        let mut w = Array1::<f64>::zeros(self.n());
        let mut dsig = Array1::<f64>::zeros(self.n());
        for i in 0..self.n() {
            let s = sigmoid(temperature * (h[i] - self.y[i]));
            w[i] = s - self.alpha;
            dsig[i] = temperature * s * (1.0 - s);
        }
        let sol = self.solver.solve(&self.dm, w.view());
        let theta_vals = self.dm.m.dot(&sol.theta_coef);
        let weighted = &dsig * &theta_vals;
        let grad = self.hfeat.t().dot(&weighted) / n;
        Ok((sol.loss_value, grad))
    }
}

/// Residual vector `W(D; h(·; β))` over a dataset.
pub fn residuals(
    dataset: &IvDataset,
    beta: &[f64],
    alpha: f64,
    config: &LossConfig,
) -> Result<ResidualVector> {
    config.validate()?;
    dataset.space().check_beta(beta)?;
    let mode = config.residual_mode();
    let space = dataset.space();
    let w = Array1::from_iter(dataset.samples.iter().map(|s| {
        let h = space.hypothesis_value(beta, s.a, s.x1, s.x2);
        match mode {
            ResidualMode::Hard => {
                if s.y <= h {
                    1.0 - alpha
                } else {
                    -alpha
                }
            }
            ResidualMode::Smoothed { temperature } => sigmoid(temperature * (h - s.y)) - alpha,
        }
    }));
    Ok(ResidualVector { w, mode })
}

/// Empirical dual loss `L_n(h(·; β))`.
pub fn empirical_loss(
    dataset: &IvDataset,
    beta: &[f64],
    alpha: f64,
    basis: &TestBasis,
    config: &LossConfig,
) -> Result<f64> {
    LossEvaluator::new(dataset, alpha, basis, config)?.loss(beta)
}

/// Gradient of the smoothed empirical loss with respect to β.
pub fn loss_gradient(
    dataset: &IvDataset,
    beta: &[f64],
    alpha: f64,
    basis: &TestBasis,
    config: &LossConfig,
) -> Result<Array1<f64>> {
    let (_, grad) = LossEvaluator::new(dataset, alpha, basis, config)?.loss_and_gradient(beta)?;
    Ok(grad)
}

/// Excess loss `max(0, L_n(β) − L_n(β_min))` against a supplied approximate
/// minimizer; clamped at zero because β_min is approximate.
pub fn excess_loss(
    dataset: &IvDataset,
    beta: &[f64],
    beta_min: &[f64],
    alpha: f64,
    basis: &TestBasis,
    config: &LossConfig,
) -> Result<f64> {
    let ev = LossEvaluator::new(dataset, alpha, basis, config)?;
    let l = ev.loss(beta)?;
    let l_min = ev.loss(beta_min)?;
    Ok((l - l_min).max(0.0))
}

/// Prepared evaluator for the two-part negative-control loss.
///
/// `l1` is the dual loss of `W(D; h₁) − h₂(v, a, x)` against a test basis
/// over `(e, a, x)`; `l2` is the dual loss of `h₂(v, a′, x)` against a test
/// basis over `(a′, x)`.
pub struct NcLossEvaluator {
    y: Array1<f64>,
    h1feat: Array2<f64>,
    h2feat_logged: Array2<f64>,
    h2feat_augmented: Array2<f64>,
    dm1: DesignMatrix,
    dm2: DesignMatrix,
    solver1: InnerSolver,
    solver2: InnerSolver,
    alpha: f64,
    mode: ResidualMode,
    h2_dim: usize,
}

impl NcLossEvaluator {
    pub fn new(
        dataset: &NcDataset,
        alpha: f64,
        basis1: &TestBasis,
        basis2: &TestBasis,
        h2_features: &TestBasis,
        config: &LossConfig,
    ) -> Result<Self> {
        config.validate()?;
        if !(alpha > 0.0 && alpha < 1.0) {
            return Err(Error::Config(format!("alpha must lie in (0, 1), got {alpha}")));
        }
        let n = dataset.n();
        if n == 0 {
            return Err(Error::Config("empty dataset".into()));
        }
        let act = |a: bool| if a { 1.0 } else { 0.0 };
        let dm1 = DesignMatrix::build_with(basis1, n, |i, buf| {
            let s = &dataset.samples[i];
            buf[0] = s.e;
            buf[1] = act(s.a);
            buf[2] = s.x1;
            buf[3] = s.x2;
            4
        })?;
        let dm2 = DesignMatrix::build_with(basis2, n, |i, buf| {
            let s = &dataset.samples[i];
            buf[0] = act(s.a_prime);
            buf[1] = s.x1;
            buf[2] = s.x2;
            3
        })?;
        let h2feat_logged = DesignMatrix::build_with(h2_features, n, |i, buf| {
            let s = &dataset.samples[i];
            buf[0] = s.v;
            buf[1] = act(s.a);
            buf[2] = s.x1;
            buf[3] = s.x2;
            4
        })?;
        let h2feat_augmented = DesignMatrix::build_with(h2_features, n, |i, buf| {
            let s = &dataset.samples[i];
            buf[0] = s.v;
            buf[1] = act(s.a_prime);
            buf[2] = s.x1;
            buf[3] = s.x2;
            4
        })?;
        let solver1 = InnerSolver::new(&dm1, &config.ridge)?;
        let solver2 = InnerSolver::new(&dm2, &config.ridge)?;
        let h1feat = hypothesis_design(
            HypothesisSpace::TwoDim,
            dataset.samples.iter().map(|s| (s.a, s.x1, s.x2)),
            n,
        );
        let y = Array1::from_iter(dataset.samples.iter().map(|s| s.y));
        Ok(NcLossEvaluator {
            y,
            h1feat,
            h2feat_logged: h2feat_logged.m,
            h2feat_augmented: h2feat_augmented.m,
            dm1,
            dm2,
            solver1,
            solver2,
            alpha,
            mode: config.residual_mode(),
            h2_dim: h2_features.dim(),
        })
    }

    pub fn n(&self) -> usize {
        self.y.len()
    }

    pub fn h1_dim(&self) -> usize {
        4
    }

    pub fn h2_dim(&self) -> usize {
        self.h2_dim
    }

    fn check_dims(&self, h1_beta: &[f64], h2_beta: &[f64]) -> Result<()> {
        if h1_beta.len() != 4 {
            return Err(Error::Config(format!(
                "h1 coefficient vector has length {}, expected 4",
                h1_beta.len()
            )));
        }
        if h2_beta.len() != self.h2_dim {
            return Err(Error::Config(format!(
                "h2 coefficient vector has length {}, expected {}",
                h2_beta.len(),
                self.h2_dim
            )));
        }
        Ok(())
    }

    fn smoothed_parts(&self, h1_beta: &[f64]) -> (Array1<f64>, Option<Array1<f64>>) {
        let h = hypothesis_values(&self.h1feat, &Array1::from(h1_beta.to_vec()));
        match self.mode {
            ResidualMode::Hard => {
                let w = Array1::from_iter(self.y.iter().zip(h.iter()).map(|(y, h)| {
                    if *y <= *h {
                        1.0 - self.alpha
                    } else {
                        -self.alpha
                    }
                }));
                (w, None)
            }
            ResidualMode::Smoothed { temperature } => {
                let mut w = Array1::<f64>::zeros(self.n());
                let mut dsig = Array1::<f64>::zeros(self.n());
                for i in 0..self.n() {
                    let s = sigmoid(temperature * (h[i] - self.y[i]));
                    w[i] = s - self.alpha;
                    dsig[i] = temperature * s * (1.0 - s);
                }
                (w, Some(dsig))
            }
        }
    }

    /// The pair `(l1, l2)` of dual losses.
    pub fn loss_parts(&self, h1_beta: &[f64], h2_beta: &[f64]) -> Result<(f64, f64)> {
        self.check_dims(h1_beta, h2_beta)?;
        let (w, _) = self.smoothed_parts(h1_beta);
        let c = Array1::from(h2_beta.to_vec());
        let r1 = &w - &self.h2feat_logged.dot(&c);
        let r2 = self.h2feat_augmented.dot(&c);
        let l1 = self.solver1.solve(&self.dm1, r1.view()).loss_value;
        let l2 = self.solver2.solve(&self.dm2, r2.view()).loss_value;
        Ok((l1, l2))
    }

    pub fn loss(&self, stacked: &[f64]) -> Result<f64> {
        let (h1, h2) = stacked.split_at(4);
        let (l1, l2) = self.loss_parts(h1, h2)?;
        Ok(l1 + l2)
    }

    /// Joint loss and gradient over the stacked `(β, c)` vector.
    pub fn loss_and_gradient(&self, stacked: &[f64]) -> Result<(f64, Array1<f64>)> {
        if stacked.len() != 4 + self.h2_dim {
            return Err(Error::Config(format!(
                "stacked coefficient vector has length {}, expected {}",
                stacked.len(),
                4 + self.h2_dim
            )));
        }
        let (h1_beta, h2_beta) = stacked.split_at(4);
        let dsig = match self.mode {
            ResidualMode::Smoothed { .. } => {
                let (_, d) = self.smoothed_parts(h1_beta);
                d.expect("smoothed mode produces derivatives")
            }
            ResidualMode::Hard => {
                return Err(Error::UnsupportedMode(
                    "the hard loss is not differentiable; use the smoothed mode".into(),
                ))
            }
        };
        let (w, _) = self.smoothed_parts(h1_beta);
        let c = Array1::from(h2_beta.to_vec());
        let n = self.n() as f64;

        let r1 = &w - &self.h2feat_logged.dot(&c);
        let sol1 = self.solver1.solve(&self.dm1, r1.view());
        let theta1 = self.dm1.m.dot(&sol1.theta_coef);

        let r2 = self.h2feat_augmented.dot(&c);
        let sol2 = self.solver2.solve(&self.dm2, r2.view());
        let theta2 = self.dm2.m.dot(&sol2.theta_coef);

        let weighted = &dsig * &theta1;
        let grad_h1 = self.h1feat.t().dot(&weighted) / n;
        let grad_h2 =
            (self.h2feat_augmented.t().dot(&theta2) - self.h2feat_logged.t().dot(&theta1)) / n;

        let mut grad = Array1::<f64>::zeros(4 + self.h2_dim);
        grad.slice_mut(ndarray::s![..4]).assign(&grad_h1);
        grad.slice_mut(ndarray::s![4..]).assign(&grad_h2);
        Ok((sol1.loss_value + sol2.loss_value, grad))
    }
}

/// The negative-control loss pair for explicit coefficient vectors.
#[allow(clippy::too_many_arguments)]
pub fn nc_loss(
    dataset: &NcDataset,
    h1_beta: &[f64],
    h2_beta: &[f64],
    alpha: f64,
    basis1: &TestBasis,
    basis2: &TestBasis,
    h2_features: &TestBasis,
    config: &LossConfig,
) -> Result<(f64, f64)> {
    NcLossEvaluator::new(dataset, alpha, basis1, basis2, h2_features, config)?
        .loss_parts(h1_beta, h2_beta)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::dgp::{generate_iv_dataset, DgpConfig};
    use crate::features::CustomBasis;
    use ndarray::arr2;

    fn small_dataset(n: usize, seed: u64) -> IvDataset {
        generate_iv_dataset(&DgpConfig {
            n,
            seed,
            ..DgpConfig::default()
        })
        .unwrap()
    }

    #[test]
    fn hard_residual_includes_equality() {
        // With β = 0 every h_i = 0, so a sample with y = 0 sits on the
        // boundary and the indicator includes it.
        let mut ds = small_dataset(3, 1);
        ds.samples[0].y = 0.0;
        let cfg = LossConfig::hard();
        let r = residuals(&ds, &[0.0; 4], 0.2, &cfg).unwrap();
        assert_eq!(r.w[0], 0.8);
        for w in r.w.iter() {
            assert!(*w == 0.8 || *w == -0.2);
        }
    }

    #[test]
    fn smoothed_residual_values() {
        let mut ds = small_dataset(2, 1);
        ds.samples[0].y = 0.0; // h − y = 0 → w = 0.5 − α
        ds.samples[1].y = -10.0; // h − y = 10, t = 5 → w ≈ 1 − α
        let cfg = LossConfig::default();
        let r = residuals(&ds, &[0.0; 4], 0.2, &cfg).unwrap();
        assert_eq!(r.w[0], 0.5 - 0.2);
        assert!((r.w[1] - 0.8).abs() < 1e-4);
    }

    #[test]
    fn inner_maximize_hand_instance() {
        // n = 2, d = 1, M = ((1), (1)), W = (0.8, −0.2): b = 0.3, loss = 0.045.
        let dm = DesignMatrix::from_array(arr2(&[[1.0], [1.0]])).unwrap();
        let w = ResidualVector {
            w: ndarray::arr1(&[0.8, -0.2]),
            mode: ResidualMode::Hard,
        };
        let sol = inner_maximize(&w, &dm, &Ridge::Exact).unwrap();
        assert!((sol.theta_coef[0] - 0.3).abs() < 1e-14);
        assert!((sol.loss_value - 0.045).abs() < 1e-14);
    }

    #[test]
    fn zero_residuals_give_zero_loss() {
        let dm = DesignMatrix::from_array(arr2(&[[1.0, 0.5], [0.3, -1.0], [2.0, 0.2]])).unwrap();
        let w = ResidualVector {
            w: ndarray::arr1(&[0.0, 0.0, 0.0]),
            mode: ResidualMode::Hard,
        };
        let sol = inner_maximize(&w, &dm, &Ridge::Exact).unwrap();
        assert_eq!(sol.loss_value, 0.0);
        assert!(sol.theta_coef.iter().all(|b| *b == 0.0));
    }

    #[test]
    fn singular_normal_matrix_without_ridge_errors() {
        // Two identical columns make MᵀM singular.
        let dm = DesignMatrix::from_array(arr2(&[[1.0, 1.0], [2.0, 2.0]])).unwrap();
        let w = ResidualVector {
            w: ndarray::arr1(&[0.5, -0.5]),
            mode: ResidualMode::Hard,
        };
        let err = inner_maximize(&w, &dm, &Ridge::Exact).unwrap_err();
        assert!(matches!(err, Error::Numerical(_)));
        assert!(err.to_string().contains("ridge"));
        // A positive ridge succeeds.
        assert!(inner_maximize(&w, &dm, &Ridge::Scaled(1e-8)).is_ok());
    }

    #[test]
    fn centered_residuals_against_constant_basis_give_zero_loss() {
        let basis = TestBasis::Custom(CustomBasis::new("constant", 1, |_inp, out| {
            out[0] = 1.0;
        }));
        let ds = small_dataset(64, 3);
        let dm = build_design_matrix(&ds, &basis).unwrap();
        // Centered residuals: ΣW_i = 0 by construction.
        let mut w = ndarray::Array1::from_elem(64, 0.5);
        for i in 0..32 {
            w[i] = -0.5;
        }
        let sol = InnerSolver::new(&dm, &Ridge::Exact)
            .unwrap()
            .solve(&dm, w.view());
        assert!(sol.loss_value.abs() < 1e-15);
    }

    #[test]
    fn loss_is_monotone_nonincreasing_in_ridge() {
        let ds = small_dataset(200, 11);
        let beta = [0.5, -0.3, 1.0, 0.7];
        let mut prev = f64::INFINITY;
        for ridge in [Ridge::Exact, Ridge::Absolute(1.0), Ridge::Absolute(1e9)] {
            let cfg = LossConfig {
                ridge,
                ..LossConfig::default()
            };
            let l = empirical_loss(&ds, &beta, 0.2, &TestBasis::Main13, &cfg).unwrap();
            assert!(l >= -1e-12);
            assert!(l <= prev + 1e-9, "loss increased from {prev} to {l}");
            prev = l;
        }
    }

    #[test]
    fn hard_mode_gradient_is_unsupported() {
        let ds = small_dataset(20, 5);
        let err = loss_gradient(&ds, &[0.0; 4], 0.2, &TestBasis::Main13, &LossConfig::hard())
            .unwrap_err();
        assert!(matches!(err, Error::UnsupportedMode(_)));
    }

    #[test]
    fn gradient_vanishes_when_sigmoid_saturates() {
        let mut ds = small_dataset(30, 6);
        for s in &mut ds.samples {
            s.y = 1e6;
        }
        let grad = loss_gradient(
            &ds,
            &[0.0; 4],
            0.2,
            &TestBasis::Main13,
            &LossConfig::default(),
        )
        .unwrap();
        assert!(grad.iter().all(|g| g.abs() < 1e-300));
    }

    #[test]
    fn smoothed_residuals_approach_hard_at_high_temperature() {
        let ds = small_dataset(500, 8);
        let beta = [1.0, 1.0, 3.0, 2.0];
        let hard = residuals(&ds, &beta, 0.2, &LossConfig::hard()).unwrap();
        let sharp = residuals(
            &ds,
            &beta,
            0.2,
            &LossConfig {
                smoothing_temperature: 1e4,
                ..LossConfig::default()
            },
        )
        .unwrap();
        let space = ds.space();
        for (i, s) in ds.samples.iter().enumerate() {
            let h = space.hypothesis_value(&beta, s.a, s.x1, s.x2);
            if (h - s.y).abs() > 0.01 {
                assert!((hard.w[i] - sharp.w[i]).abs() < 1e-6);
            }
        }
    }

    #[test]
    fn excess_loss_is_clamped_and_zero_at_reference() {
        let ds = small_dataset(100, 9);
        let basis = TestBasis::Main13;
        let cfg = LossConfig::default();
        let beta = [1.0, 1.0, 3.0, 2.0];
        assert_eq!(
            excess_loss(&ds, &beta, &beta, 0.2, &basis, &cfg).unwrap(),
            0.0
        );
        let other = [0.0, 0.0, 0.0, 0.0];
        assert!(excess_loss(&ds, &other, &beta, 0.2, &basis, &cfg).unwrap() >= 0.0);
        assert!(excess_loss(&ds, &beta, &other, 0.2, &basis, &cfg).unwrap() >= 0.0);
    }

    #[test]
    fn nc_zero_bridge_reductions() {
        use crate::dgp::{generate_nc_dataset, NcDgpConfig};
        let ds = generate_nc_dataset(&NcDgpConfig {
            n: 400,
            kappa: 0.0,
            seed: 31,
            ..NcDgpConfig::default()
        })
        .unwrap();
        let basis1 = TestBasis::nc_exposure_default();
        let basis2 = TestBasis::nc_action_context_default();
        let bridge = TestBasis::nc_bridge_default();
        let cfg = LossConfig::default();
        let beta = [1.0, 1.0, 3.0, 2.0];
        let zero_h2 = [0.0; 5];
        let (l1, l2) = nc_loss(&ds, &beta, &zero_h2, 0.2, &basis1, &basis2, &bridge, &cfg).unwrap();
        // Zero bridge ⇒ l2 is exactly the dual loss of a zero residual.
        assert_eq!(l2, 0.0);
        assert!(l1 >= -1e-12);
    }
}
