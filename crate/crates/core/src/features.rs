//! Linear hypothesis classes and polynomial test-function bases.
//!
//! The hypothesis class is linear in a fixed feature map of `(a, x)`; the
//! test-function class is the linear span of a fixed polynomial basis of the
//! conditioning variables. Both are evaluated into plain `ndarray` matrices.

use crate::dgp::{IvDataset, IvSample};
use crate::error::{Error, Result};
use ndarray::{Array1, Array2};
use std::fmt;
use std::sync::Arc;

/// Dimensionality of the linear hypothesis class.
///
/// `TwoDim` uses features `(x₁, x₂, a·x₁, a·x₂)`; `OneDim` uses `(x, a·x)`.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum HypothesisSpace {
    TwoDim,
    OneDim,
}

impl HypothesisSpace {
    pub fn dim(self) -> usize {
        match self {
            HypothesisSpace::TwoDim => 4,
            HypothesisSpace::OneDim => 2,
        }
    }

    /// Writes the hypothesis features of `(a, x)` into `out`.
    pub fn features_into(self, a: bool, x1: f64, x2: f64, out: &mut [f64]) {
        let act = if a { 1.0 } else { 0.0 };
        match self {
            HypothesisSpace::TwoDim => {
                out[0] = x1;
                out[1] = x2;
                out[2] = act * x1;
                out[3] = act * x2;
            }
            HypothesisSpace::OneDim => {
                out[0] = x1;
                out[1] = act * x1;
            }
        }
    }

    /// `h(a, x; β) = β · features(a, x)`.
    pub fn hypothesis_value(self, beta: &[f64], a: bool, x1: f64, x2: f64) -> f64 {
        let act = if a { 1.0 } else { 0.0 };
        match self {
            HypothesisSpace::TwoDim => {
                beta[0] * x1 + beta[1] * x2 + act * (beta[2] * x1 + beta[3] * x2)
            }
            HypothesisSpace::OneDim => beta[0] * x1 + act * beta[1] * x1,
        }
    }

    /// Coefficients of the action gain `h(1, x) − h(0, x)` as a 2-vector
    /// over `(x₁, x₂)`. This is the gate of the greedy policy of `β`.
    pub fn action_gain(self, beta: &[f64]) -> [f64; 2] {
        match self {
            HypothesisSpace::TwoDim => [beta[2], beta[3]],
            HypothesisSpace::OneDim => [beta[1], 0.0],
        }
    }

    /// Checks that `beta` has the dimension of this space.
    pub fn check_beta(self, beta: &[f64]) -> Result<()> {
        if beta.len() != self.dim() {
            return Err(Error::Config(format!(
                "hypothesis coefficient vector has length {}, expected {}",
                beta.len(),
                self.dim()
            )));
        }
        Ok(())
    }
}

/// Hypothesis features of `(a, x)` as a fresh vector.
pub fn hypothesis_features(space: HypothesisSpace, a: bool, x1: f64, x2: f64) -> Vec<f64> {
    let mut out = vec![0.0; space.dim()];
    space.features_into(a, x1, x2, &mut out);
    out
}

/// Coefficient vector of a linear hypothesis, with an optional ℓ₂ bound.
///
/// The bound is a validation knob; optimization never enforces it.
#[derive(Debug, Clone, PartialEq)]
pub struct HypothesisParams {
    pub beta: Vec<f64>,
    pub norm_bound: Option<f64>,
}

impl HypothesisParams {
    pub fn new(beta: Vec<f64>) -> Self {
        HypothesisParams {
            beta,
            norm_bound: None,
        }
    }

    pub fn with_norm_bound(beta: Vec<f64>, bound: f64) -> Result<Self> {
        if bound <= 0.0 {
            return Err(Error::Config(format!(
                "norm bound must be positive, got {bound}"
            )));
        }
        let norm = beta.iter().map(|b| b * b).sum::<f64>().sqrt();
        if norm > bound {
            return Err(Error::Config(format!(
                "coefficient norm {norm} exceeds bound {bound}"
            )));
        }
        Ok(HypothesisParams {
            beta,
            norm_bound: Some(bound),
        })
    }

    pub fn norm(&self) -> f64 {
        self.beta.iter().map(|b| b * b).sum::<f64>().sqrt()
    }
}

type FeatureFn = Arc<dyn Fn(&[f64], &mut [f64]) + Send + Sync>;

/// A user-supplied basis over an arbitrary conditioning tuple.
#[derive(Clone)]
pub struct CustomBasis {
    pub name: String,
    pub dim: usize,
    eval: FeatureFn,
}

impl CustomBasis {
    pub fn new(
        name: impl Into<String>,
        dim: usize,
        eval: impl Fn(&[f64], &mut [f64]) + Send + Sync + 'static,
    ) -> Self {
        CustomBasis {
            name: name.into(),
            dim,
            eval: Arc::new(eval),
        }
    }
}

impl fmt::Debug for CustomBasis {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("CustomBasis")
            .field("name", &self.name)
            .field("dim", &self.dim)
            .finish()
    }
}

/// Polynomial test-function basis.
///
/// `Main13` spans `{X₁, X₂, Z, X₁X₂, X₁Z, X₂Z, X₁², X₂², Z², X₁²Z, X₁X₂²,
/// Z³, X₁²X₂²}` over the conditioning tuple `(x₁, x₂, z)`. `Appendix10`
/// spans `{x, z, xz, x², z², xz², zx², x³, z³, x²z²}` over `(x, z)`.
/// Neither includes a constant feature. Feature order is fixed.
#[derive(Debug, Clone)]
pub enum TestBasis {
    Main13,
    Appendix10,
    Custom(CustomBasis),
}

impl TestBasis {
    pub fn dim(&self) -> usize {
        match self {
            TestBasis::Main13 => 13,
            TestBasis::Appendix10 => 10,
            TestBasis::Custom(c) => c.dim,
        }
    }

    /// Number of conditioning variables consumed from an IV sample.
    fn iv_input_len(&self) -> usize {
        match self {
            TestBasis::Main13 => 3,
            TestBasis::Appendix10 => 2,
            TestBasis::Custom(_) => 3,
        }
    }

    fn write_iv_input(&self, s: &IvSample, buf: &mut [f64; 4]) {
        match self {
            TestBasis::Main13 | TestBasis::Custom(_) => {
                buf[0] = s.x1;
                buf[1] = s.x2;
                buf[2] = s.z;
            }
            TestBasis::Appendix10 => {
                buf[0] = s.x1;
                buf[1] = s.z;
            }
        }
    }

    /// Evaluates the basis at a conditioning tuple.
    pub fn eval_into(&self, input: &[f64], out: &mut [f64]) {
        match self {
            TestBasis::Main13 => {
                let (x1, x2, z) = (input[0], input[1], input[2]);
                out[0] = x1;
                out[1] = x2;
                out[2] = z;
                out[3] = x1 * x2;
                out[4] = x1 * z;
                out[5] = x2 * z;
                out[6] = x1 * x1;
                out[7] = x2 * x2;
                out[8] = z * z;
                out[9] = x1 * x1 * z;
                out[10] = x1 * x2 * x2;
                out[11] = z * z * z;
                out[12] = x1 * x1 * x2 * x2;
            }
            TestBasis::Appendix10 => {
                let (x, z) = (input[0], input[1]);
                out[0] = x;
                out[1] = z;
                out[2] = x * z;
                out[3] = x * x;
                out[4] = z * z;
                out[5] = x * z * z;
                out[6] = z * x * x;
                out[7] = x * x * x;
                out[8] = z * z * z;
                out[9] = x * x * z * z;
            }
            TestBasis::Custom(c) => (c.eval)(input, out),
        }
    }

    /// Default exposure-side basis for the NC loss, over `(e, a, x₁, x₂)`.
    pub fn nc_exposure_default() -> TestBasis {
        TestBasis::Custom(CustomBasis::new("nc-exposure-13", 13, |inp, out| {
            let (e, a, x1, x2) = (inp[0], inp[1], inp[2], inp[3]);
            out[0] = e;
            out[1] = a;
            out[2] = x1;
            out[3] = x2;
            out[4] = e * a;
            out[5] = e * x1;
            out[6] = e * x2;
            out[7] = a * x1;
            out[8] = a * x2;
            out[9] = x1 * x2;
            out[10] = e * e;
            out[11] = x1 * x1;
            out[12] = x2 * x2;
        }))
    }

    /// Default augmented-action basis for the NC loss, over `(a′, x₁, x₂)`.
    pub fn nc_action_context_default() -> TestBasis {
        TestBasis::Custom(CustomBasis::new("nc-action-context-8", 8, |inp, out| {
            let (ap, x1, x2) = (inp[0], inp[1], inp[2]);
            out[0] = ap;
            out[1] = x1;
            out[2] = x2;
            out[3] = ap * x1;
            out[4] = ap * x2;
            out[5] = x1 * x2;
            out[6] = x1 * x1;
            out[7] = x2 * x2;
        }))
    }

    /// Default feature map of the bridge function h₂, over `(v, a, x₁, x₂)`.
    pub fn nc_bridge_default() -> TestBasis {
        TestBasis::Custom(CustomBasis::new("nc-bridge-5", 5, |inp, out| {
            let (v, a, x1, x2) = (inp[0], inp[1], inp[2], inp[3]);
            out[0] = v;
            out[1] = a;
            out[2] = x1;
            out[3] = x2;
            out[4] = a * v;
        }))
    }
}

/// An evaluated n×d test-function design matrix (one row per sample).
#[derive(Debug, Clone, PartialEq)]
pub struct DesignMatrix {
    pub m: Array2<f64>,
}

impl DesignMatrix {
    pub fn n(&self) -> usize {
        self.m.nrows()
    }

    pub fn d(&self) -> usize {
        self.m.ncols()
    }

    /// Wraps a raw matrix, rejecting non-finite entries.
    pub fn from_array(m: Array2<f64>) -> Result<Self> {
        if let Some(bad) = m.iter().position(|v| !v.is_finite()) {
            let d = m.ncols();
            return Err(Error::Data(format!(
                "non-finite design entry at row {}, column {}",
                bad / d,
                bad % d
            )));
        }
        Ok(DesignMatrix { m })
    }

    /// Builds a design matrix by evaluating `basis` on `n` conditioning
    /// tuples produced by `fill` (which returns the tuple arity).
    pub(crate) fn build_with(
        basis: &TestBasis,
        n: usize,
        mut fill: impl FnMut(usize, &mut [f64; 4]) -> usize,
    ) -> Result<Self> {
        let d = basis.dim();
        let mut m = Array2::<f64>::zeros((n, d));
        let mut input = [0.0f64; 4];
        for i in 0..n {
            let arity = fill(i, &mut input);
            let mut row = m.row_mut(i);
            basis.eval_into(&input[..arity], row.as_slice_mut().expect("contiguous row"));
            if let Some(j) = row.iter().position(|v| !v.is_finite()) {
                return Err(Error::Data(format!(
                    "non-finite feature value at sample {i}, feature {j}"
                )));
            }
        }
        Ok(DesignMatrix { m })
    }
}

/// Evaluates `basis` on every sample of an IV dataset.
pub fn build_design_matrix(dataset: &IvDataset, basis: &TestBasis) -> Result<DesignMatrix> {
    let arity = basis.iv_input_len();
    DesignMatrix::build_with(basis, dataset.n(), |i, buf| {
        basis.write_iv_input(&dataset.samples[i], buf);
        arity
    })
}

/// The n×k hypothesis feature matrix at the logged `(a_i, x_i)` pairs.
pub(crate) fn hypothesis_design(
    space: HypothesisSpace,
    samples: impl Iterator<Item = (bool, f64, f64)>,
    n: usize,
) -> Array2<f64> {
    let k = space.dim();
    let mut m = Array2::<f64>::zeros((n, k));
    for (i, (a, x1, x2)) in samples.enumerate() {
        space.features_into(a, x1, x2, m.row_mut(i).as_slice_mut().expect("contiguous row"));
    }
    m
}

/// Evaluates `h(a_i, x_i; β)` for all samples given a hypothesis design.
pub(crate) fn hypothesis_values(hfeat: &Array2<f64>, beta: &Array1<f64>) -> Array1<f64> {
    hfeat.dot(beta)
}
