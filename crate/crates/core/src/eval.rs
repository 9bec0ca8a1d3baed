//! Interventional values and regret.
//!
//! For a linear hypothesis with action-gain direction `t` and a linear gate
//! policy `g`, the centered Gaussian context law gives the value in closed
//! form: the baseline term has mean zero and
//!
//! ```text
//! E[(t·X)·1{g·X > 0}] = Cov(t·X, g·X) / (σ_{g·X} · √(2π)).
//! ```
//!
//! Monte Carlo evaluation is retained for validation.

use crate::dgp::{IvDataset, NcDataset};
use crate::error::{Error, Result};
use crate::features::HypothesisSpace;
use crate::numeric::{mean, sample_std};
use crate::policy::LinearPolicy;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;

/// Marginal context law of the interventional process.
#[derive(Debug, Clone, PartialEq)]
pub enum ContextDistribution {
    /// Centered bivariate Gaussian with unit variances and correlation ρ.
    BivariateGaussian { rho: f64 },
    /// Standard normal X with the second coordinate identically zero.
    Univariate,
    /// A finite list of contexts sampled uniformly.
    Empirical(Vec<[f64; 2]>),
}

impl ContextDistribution {
    fn validate(&self) -> Result<()> {
        match self {
            ContextDistribution::BivariateGaussian { rho } => {
                if !(*rho > -1.0 && *rho < 1.0) {
                    return Err(Error::Config(format!(
                        "rho must lie in (-1, 1), got {rho}"
                    )));
                }
            }
            ContextDistribution::Univariate => {}
            ContextDistribution::Empirical(contexts) => {
                if contexts.is_empty() {
                    return Err(Error::Config("empirical context list is empty".into()));
                }
            }
        }
        Ok(())
    }
}

/// How a value estimate was obtained.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum ValueMethod {
    ClosedForm,
    MonteCarlo { draws: usize, seed: u64 },
}

/// An interventional value `v(h, π)` with its standard error (zero for the
/// closed form).
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ValueEstimate {
    pub value: f64,
    pub std_error: f64,
    pub method: ValueMethod,
}

/// Per-coordinate weights `w` such that `v(h, π) = t · w` for the gate
/// policy, where `t` is the action-gain direction of `h`. The zero gate
/// yields zero weights (the policy never acts).
pub(crate) fn policy_weights(gate: [f64; 2], dist: &ContextDistribution) -> Result<[f64; 2]> {
    let sqrt_2pi = (2.0 * std::f64::consts::PI).sqrt();
    match dist {
        ContextDistribution::BivariateGaussian { rho } => {
            let var = gate[0] * gate[0] + gate[1] * gate[1] + 2.0 * rho * gate[0] * gate[1];
            if var <= 0.0 {
                return Ok([0.0, 0.0]);
            }
            let denom = var.sqrt() * sqrt_2pi;
            Ok([
                (gate[0] + rho * gate[1]) / denom,
                (gate[1] + rho * gate[0]) / denom,
            ])
        }
        ContextDistribution::Univariate => {
            if gate[0] == 0.0 {
                return Ok([0.0, 0.0]);
            }
            Ok([gate[0].signum() / sqrt_2pi, 0.0])
        }
        ContextDistribution::Empirical(_) => Err(Error::Config(
            "closed-form values require a Gaussian context distribution".into(),
        )),
    }
}

/// Closed-form interventional value of `h(·; β)` under a linear gate policy
/// and a centered Gaussian context law.
pub fn value_closed_form(
    space: HypothesisSpace,
    beta: &[f64],
    policy: &LinearPolicy,
    dist: &ContextDistribution,
) -> Result<ValueEstimate> {
    space.check_beta(beta)?;
    dist.validate()?;
    let t = space.action_gain(beta);
    let w = policy_weights(policy.gate, dist)?;
    Ok(ValueEstimate {
        value: t[0] * w[0] + t[1] * w[1],
        std_error: 0.0,
        method: ValueMethod::ClosedForm,
    })
}

fn draw_context(rng: &mut ChaCha8Rng, dist: &ContextDistribution) -> (f64, f64) {
    match dist {
        ContextDistribution::BivariateGaussian { rho } => {
            let g1: f64 = rng.sample(StandardNormal);
            let g2: f64 = rng.sample(StandardNormal);
            (g1, rho * g1 + (1.0 - rho * rho).sqrt() * g2)
        }
        ContextDistribution::Univariate => (rng.sample(StandardNormal), 0.0),
        ContextDistribution::Empirical(contexts) => {
            let idx = rng.gen_range(0..contexts.len());
            (contexts[idx][0], contexts[idx][1])
        }
    }
}

/// Monte Carlo interventional value over `draws` context samples.
pub fn value_monte_carlo(
    space: HypothesisSpace,
    beta: &[f64],
    policy: &LinearPolicy,
    dist: &ContextDistribution,
    draws: usize,
    seed: u64,
) -> Result<ValueEstimate> {
    space.check_beta(beta)?;
    dist.validate()?;
    if draws == 0 {
        return Err(Error::Config("draw count must be at least 1".into()));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut values = Vec::with_capacity(draws);
    for _ in 0..draws {
        let (x1, x2) = draw_context(&mut rng, dist);
        let a = policy.act(x1, x2);
        values.push(space.hypothesis_value(beta, a, x1, x2));
    }
    let m = mean(&values);
    let se = sample_std(&values) / (draws as f64).sqrt();
    Ok(ValueEstimate {
        value: m,
        std_error: se,
        method: ValueMethod::MonteCarlo { draws, seed },
    })
}

/// Regret of a policy against the oracle greedy policy of the true
/// coefficients, both evaluated in closed form.
pub fn regret(
    space: HypothesisSpace,
    beta_true: &[f64],
    policy: &LinearPolicy,
    dist: &ContextDistribution,
) -> Result<f64> {
    let oracle = LinearPolicy::from_gate(space.action_gain(beta_true));
    let v_star = value_closed_form(space, beta_true, &oracle, dist)?.value;
    let v_pi = value_closed_form(space, beta_true, policy, dist)?.value;
    Ok(v_star - v_pi)
}

impl IvDataset {
    /// The context marginal this dataset was generated under.
    pub fn context_distribution(&self) -> ContextDistribution {
        match &self.meta {
            crate::dgp::DatasetMeta::TwoDim(c) => ContextDistribution::BivariateGaussian {
                rho: c.rho,
            },
            crate::dgp::DatasetMeta::OneDim(_) => ContextDistribution::Univariate,
        }
    }
}

impl NcDataset {
    /// NC contexts are independent standard normals.
    pub fn context_distribution(&self) -> ContextDistribution {
        ContextDistribution::BivariateGaussian { rho: 0.0 }
    }
}
