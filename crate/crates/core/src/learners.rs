//! Policy fitting: greedy descent, regularized pessimistic search,
//! the sampled solution-set learner, the alternating loop, the NC variant,
//! and the multi-quantile spectral-risk learner.
//!
//! All random-search learners share one candidate scheme: N parameter
//! vectors drawn from a Gaussian centered at the greedy minimizer, with the
//! center itself always included as candidate 0 (so the returned score never
//! exceeds the center's). Scans are sequential and tie-break to the earliest
//! candidate, making every fit a pure function of (dataset, configs, seed).

use crate::dgp::{IvDataset, NcDataset};
use crate::error::{Error, Result};
use crate::eval::{policy_weights, value_closed_form, ContextDistribution};
use crate::features::{HypothesisParams, HypothesisSpace, TestBasis};
use crate::linalg::{cholesky_lower, solve_lower};
use crate::loss::{LossConfig, LossEvaluator, LossMode, NcLossEvaluator};
use crate::policy::LinearPolicy;
use ndarray::{Array1, Array2};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;

const ACCEPT_SLACK: f64 = 1e-9;
const RANDOM_INIT_SALT: u64 = 0x9e37_79b9_7f4a_7c15;

/// Shape of the candidate-sampling covariance.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum CovarianceMode {
    /// σ²I with σ = r_scale/√n.
    Isotropic,
    /// Scaled inverse Hessian of the smoothed loss at the greedy center,
    /// normalized so the average coordinate variance is σ².
    InverseHessian,
}

/// How random-search candidates are scored.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum SelectionRule {
    /// V(β) + λ_n·L_n(β), the regularized objective.
    FullObjective,
    /// V(β) alone: worst-case self-value in the sampled neighborhood.
    ValueOnly,
}

/// Fitting knobs shared by all learners.
#[derive(Debug, Clone, PartialEq)]
pub struct FitConfig {
    pub step_size: f64,
    pub max_iters: usize,
    pub grad_tol: f64,
    /// c in λ_n = c·√n. `None` uses the learner default: 1.0 for the
    /// random-search learners, 1.6 for the alternating loop.
    pub lambda_scale: Option<f64>,
    /// Number of random-search candidates N (the center is extra).
    pub n_candidates: usize,
    /// Candidate standard deviation is r_scale/√n.
    pub r_scale: f64,
    pub covariance_mode: CovarianceMode,
    pub selection_rule: SelectionRule,
    /// c_e in the solution-set threshold e_n = c_e·log(n)/n.
    pub e_n_scale: f64,
    /// Start descent from seeded standard normals instead of zero.
    pub random_init: bool,
    pub seed: u64,
}

impl Default for FitConfig {
    fn default() -> Self {
        FitConfig {
            step_size: 0.05,
            max_iters: 2000,
            grad_tol: 1e-6,
            lambda_scale: None,
            n_candidates: 10_000,
            r_scale: 1.0,
            covariance_mode: CovarianceMode::Isotropic,
            selection_rule: SelectionRule::FullObjective,
            e_n_scale: 4.0,
            random_init: false,
            seed: 0,
        }
    }
}

impl FitConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.step_size > 0.0 && self.step_size.is_finite()) {
            return Err(Error::Config(format!(
                "step size must be positive, got {}",
                self.step_size
            )));
        }
        if self.max_iters == 0 {
            return Err(Error::Config("max_iters must be positive".into()));
        }
        if !(self.grad_tol > 0.0) {
            return Err(Error::Config(format!(
                "gradient tolerance must be positive, got {}",
                self.grad_tol
            )));
        }
        if let Some(l) = self.lambda_scale {
            if !(l > 0.0) {
                return Err(Error::Config(format!(
                    "lambda scale must be positive, got {l}"
                )));
            }
        }
        if self.n_candidates == 0 {
            return Err(Error::Config("n_candidates must be positive".into()));
        }
        if !(self.r_scale > 0.0 && self.r_scale.is_finite()) {
            return Err(Error::Config(format!(
                "r_scale must be positive, got {}",
                self.r_scale
            )));
        }
        if self.e_n_scale < 0.0 || self.e_n_scale.is_nan() {
            return Err(Error::Config(format!(
                "e_n_scale must be nonnegative, got {}",
                self.e_n_scale
            )));
        }
        Ok(())
    }
}

/// Per-fit diagnostics.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct Diagnostics {
    /// Empirical loss at the returned coefficients.
    pub loss_at_optimum: f64,
    /// Search score at the returned coefficients (equals the loss for greedy).
    pub objective_at_optimum: f64,
    /// Candidates scored during random search, including the center.
    pub candidates_scored: usize,
    /// |S(e_n)| for the solution-set learner.
    pub solution_set_size: Option<usize>,
    /// The inverse-Hessian covariance was not positive definite.
    pub fallback_isotropic: bool,
    pub converged: bool,
    pub iterations: usize,
}

/// A fitted hypothesis and its greedy policy.
#[derive(Debug, Clone, PartialEq)]
pub struct FitResult {
    pub beta: HypothesisParams,
    pub policy: LinearPolicy,
    /// Accepted (iteration, objective) pairs of the descent that produced
    /// the greedy center.
    pub objective_trace: Vec<(usize, f64)>,
    pub diagnostics: Diagnostics,
}

struct DescentOutcome {
    beta: Array1<f64>,
    loss: f64,
    trace: Vec<(usize, f64)>,
    converged: bool,
    iterations: usize,
}

/// Constant-step gradient descent. A step that would raise the objective by
/// more than the acceptance slack is retried at half the step within the
/// same iteration; if no acceptable step exists the descent has reached its
/// numerical floor and stops.
fn gradient_descent<F>(mut objective: F, beta0: Array1<f64>, cfg: &FitConfig) -> Result<DescentOutcome>
where
    F: FnMut(&Array1<f64>) -> Result<(f64, Array1<f64>)>,
{
    let (loss0, mut grad) = objective(&beta0)?;
    if !loss0.is_finite() {
        return Err(Error::Divergence { iteration: 0 });
    }
    let mut beta = beta0;
    let mut loss = loss0;
    let mut trace = vec![(0usize, loss)];
    let mut converged = false;
    let mut iterations = 0usize;

    for iter in 1..=cfg.max_iters {
        let grad_norm = grad.dot(&grad).sqrt();
        if grad_norm < cfg.grad_tol {
            converged = true;
            break;
        }
        let mut step = cfg.step_size;
        let mut accepted = false;
        for _ in 0..60 {
            let candidate = &beta - &grad.mapv(|g| g * step);
            let (new_loss, new_grad) = objective(&candidate)?;
            if !new_loss.is_finite() {
                return Err(Error::Divergence { iteration: iter });
            }
            if new_loss <= loss + ACCEPT_SLACK {
                beta = candidate;
                loss = new_loss;
                grad = new_grad;
                accepted = true;
                break;
            }
            step *= 0.5;
        }
        if !accepted {
            break;
        }
        iterations = iter;
        trace.push((iter, loss));
    }

    Ok(DescentOutcome {
        beta,
        loss,
        trace,
        converged,
        iterations,
    })
}

fn initial_beta(dim: usize, cfg: &FitConfig) -> Array1<f64> {
    if cfg.random_init {
        let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed ^ RANDOM_INIT_SALT);
        Array1::from_iter((0..dim).map(|_| rng.sample::<f64, _>(StandardNormal)))
    } else {
        Array1::zeros(dim)
    }
}

enum BlockFactor {
    Isotropic(f64),
    Linear(Array2<f64>),
}

struct SearchBlock {
    center: Array1<f64>,
    factor: BlockFactor,
}

impl SearchBlock {
    fn draw(&self, rng: &mut ChaCha8Rng) -> Array1<f64> {
        let k = self.center.len();
        let xi = Array1::from_iter((0..k).map(|_| rng.sample::<f64, _>(StandardNormal)));
        match &self.factor {
            BlockFactor::Isotropic(sigma) => &self.center + &xi.mapv(|x| x * sigma),
            BlockFactor::Linear(b) => &self.center + &b.dot(&xi),
        }
    }
}

fn draw_blocks(rng: &mut ChaCha8Rng, blocks: &[SearchBlock]) -> Vec<Array1<f64>> {
    blocks.iter().map(|b| b.draw(rng)).collect()
}

struct SearchOutcome {
    chosen: Vec<Array1<f64>>,
    score: f64,
    scored: usize,
}

/// Scores the centers and `n_candidates` Gaussian perturbations, returning
/// the strict minimizer (earliest on ties).
fn random_search<F>(
    blocks: &[SearchBlock],
    n_candidates: usize,
    seed: u64,
    mut score: F,
) -> Result<SearchOutcome>
where
    F: FnMut(&[Array1<f64>]) -> Result<f64>,
{
    let centers: Vec<Array1<f64>> = blocks.iter().map(|b| b.center.clone()).collect();
    let mut best_score = score(&centers)?;
    let mut best = centers;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    for _ in 0..n_candidates {
        let candidate = draw_blocks(&mut rng, blocks);
        let s = score(&candidate)?;
        if s < best_score {
            best_score = s;
            best = candidate;
        }
    }
    Ok(SearchOutcome {
        chosen: best,
        score: best_score,
        scored: n_candidates + 1,
    })
}

/// Central-difference Hessian of a gradient map, symmetrized.
fn fd_hessian<F>(mut grad_at: F, center: &Array1<f64>, step: f64) -> Result<Array2<f64>>
where
    F: FnMut(&Array1<f64>) -> Result<Array1<f64>>,
{
    let k = center.len();
    let mut h = Array2::<f64>::zeros((k, k));
    for j in 0..k {
        let mut plus = center.clone();
        plus[j] += step;
        let mut minus = center.clone();
        minus[j] -= step;
        let gp = grad_at(&plus)?;
        let gm = grad_at(&minus)?;
        for i in 0..k {
            h[[i, j]] = (gp[i] - gm[i]) / (2.0 * step);
        }
    }
    let ht = h.t().to_owned();
    Ok((&h + &ht) / 2.0)
}

/// Builds `B` with `BBᵀ = σ²·k/tr(H⁻¹)·H⁻¹`, or `None` if H is not positive
/// definite.
fn inverse_hessian_factor(hess: &Array2<f64>, sigma: f64) -> Option<Array2<f64>> {
    let k = hess.nrows();
    let l = cholesky_lower(hess.view())?;
    let mut linv = Array2::<f64>::zeros((k, k));
    for i in 0..k {
        let mut e = Array1::<f64>::zeros(k);
        e[i] = 1.0;
        linv.column_mut(i).assign(&solve_lower(&l, e.view()));
    }
    let trace_hinv: f64 = linv.iter().map(|v| v * v).sum();
    if !(trace_hinv > 0.0 && trace_hinv.is_finite()) {
        return None;
    }
    let c = sigma * (k as f64 / trace_hinv).sqrt();
    Some(linv.t().mapv(|v| v * c))
}

/// The candidate covariance factor for one evaluator at a greedy center.
/// Returns the factor and whether the inverse Hessian fell back to isotropic.
fn covariance_factor<F>(
    cfg: &FitConfig,
    n: usize,
    center: &Array1<f64>,
    grad_at: F,
) -> Result<(BlockFactor, bool)>
where
    F: FnMut(&Array1<f64>) -> Result<Array1<f64>>,
{
    let sigma = cfg.r_scale / (n as f64).sqrt();
    match cfg.covariance_mode {
        CovarianceMode::Isotropic => Ok((BlockFactor::Isotropic(sigma), false)),
        CovarianceMode::InverseHessian => {
            let hess = fd_hessian(grad_at, center, 1e-4)?;
            match inverse_hessian_factor(&hess, sigma) {
                Some(b) => Ok((BlockFactor::Linear(b), false)),
                None => Ok((BlockFactor::Isotropic(sigma), true)),
            }
        }
    }
}

fn require_smoothed(loss_config: &LossConfig, what: &str) -> Result<()> {
    if loss_config.mode != LossMode::Smoothed {
        return Err(Error::Config(format!(
            "{what} requires the smoothed loss mode"
        )));
    }
    Ok(())
}

/// Value of `h(·; β)` under its own greedy policy.
fn own_policy_value(
    space: HypothesisSpace,
    beta: &Array1<f64>,
    dist: &ContextDistribution,
) -> Result<f64> {
    let slice = beta.as_slice().expect("contiguous coefficients");
    let policy = LinearPolicy::from_gate(space.action_gain(slice));
    Ok(value_closed_form(space, slice, &policy, dist)?.value)
}

fn greedy_center(
    dataset: &IvDataset,
    alpha: f64,
    basis: &TestBasis,
    fit_config: &FitConfig,
    loss_config: &LossConfig,
) -> Result<(LossEvaluator, DescentOutcome)> {
    fit_config.validate()?;
    require_smoothed(loss_config, "greedy fitting")?;
    let ev = LossEvaluator::new(dataset, alpha, basis, loss_config)?;
    let beta0 = initial_beta(ev.space().dim(), fit_config);
    let outcome = gradient_descent(
        |b| ev.loss_and_gradient(b.as_slice().expect("contiguous coefficients")),
        beta0,
        fit_config,
    )?;
    Ok((ev, outcome))
}

fn fit_result_from(
    space: HypothesisSpace,
    beta: Array1<f64>,
    trace: Vec<(usize, f64)>,
    diagnostics: Diagnostics,
) -> FitResult {
    let gate = space.action_gain(beta.as_slice().expect("contiguous coefficients"));
    FitResult {
        beta: HypothesisParams::new(beta.to_vec()),
        policy: LinearPolicy::from_gate(gate),
        objective_trace: trace,
        diagnostics,
    }
}

/// Greedy estimator: constant-step gradient descent on the smoothed loss,
/// returning the minimizer's greedy policy.
pub fn fit_greedy(
    dataset: &IvDataset,
    alpha: f64,
    basis: &TestBasis,
    fit_config: &FitConfig,
    loss_config: &LossConfig,
) -> Result<FitResult> {
    let (ev, out) = greedy_center(dataset, alpha, basis, fit_config, loss_config)?;
    let diagnostics = Diagnostics {
        loss_at_optimum: out.loss,
        objective_at_optimum: out.loss,
        candidates_scored: 0,
        solution_set_size: None,
        fallback_isotropic: false,
        converged: out.converged,
        iterations: out.iterations,
    };
    Ok(fit_result_from(ev.space(), out.beta, out.trace, diagnostics))
}

/// Regularized pessimistic learner: random search around the greedy center,
/// scoring V(β) + λ_n·L_n(β) (or V alone under `ValueOnly`).
pub fn fit_pessimistic_regularized(
    dataset: &IvDataset,
    alpha: f64,
    basis: &TestBasis,
    fit_config: &FitConfig,
    loss_config: &LossConfig,
) -> Result<FitResult> {
    let (ev, out) = greedy_center(dataset, alpha, basis, fit_config, loss_config)?;
    let space = ev.space();
    let dist = dataset.context_distribution();
    let lambda = fit_config.lambda_scale.unwrap_or(1.0) * (ev.n() as f64).sqrt();
    let (factor, fell_back) = covariance_factor(fit_config, ev.n(), &out.beta, |b| {
        Ok(ev
            .loss_and_gradient(b.as_slice().expect("contiguous coefficients"))?
            .1)
    })?;
    let block = SearchBlock {
        center: out.beta.clone(),
        factor,
    };
    let rule = fit_config.selection_rule;
    let search = random_search(
        std::slice::from_ref(&block),
        fit_config.n_candidates,
        fit_config.seed,
        |cand| {
            let beta = &cand[0];
            let v = own_policy_value(space, beta, &dist)?;
            match rule {
                SelectionRule::FullObjective => {
                    let l = ev.loss(beta.as_slice().expect("contiguous coefficients"))?;
                    Ok(v + lambda * l)
                }
                SelectionRule::ValueOnly => Ok(v),
            }
        },
    )?;
    let chosen = search.chosen.into_iter().next().expect("one block");
    let loss_at_optimum = ev.loss(chosen.as_slice().expect("contiguous coefficients"))?;
    let diagnostics = Diagnostics {
        loss_at_optimum,
        objective_at_optimum: search.score,
        candidates_scored: search.scored,
        solution_set_size: None,
        fallback_isotropic: fell_back,
        converged: out.converged,
        iterations: out.iterations,
    };
    Ok(fit_result_from(space, chosen, out.trace, diagnostics))
}

/// Indices of the solution set `{i : losses[i] ≤ min(losses) + e_n}`.
pub fn solution_set_indices(losses: &[f64], e_n: f64) -> Vec<usize> {
    let min = losses.iter().cloned().fold(f64::INFINITY, f64::min);
    let bound = if e_n.is_infinite() { f64::INFINITY } else { min + e_n };
    losses
        .iter()
        .enumerate()
        .filter(|(_, l)| **l <= bound)
        .map(|(i, _)| i)
        .collect()
}

/// Sampled approximation of the solution-set learner: over the same
/// candidate set as the regularized learner, keep the sublevel set
/// S = {β : L_n(β) ≤ min L_n + e_n} with e_n = c_e·log(n)/n, and return the
/// candidate policy maximizing the worst value over S.
pub fn fit_solution_set(
    dataset: &IvDataset,
    alpha: f64,
    basis: &TestBasis,
    fit_config: &FitConfig,
    loss_config: &LossConfig,
) -> Result<FitResult> {
    let (ev, out) = greedy_center(dataset, alpha, basis, fit_config, loss_config)?;
    let space = ev.space();
    let dist = dataset.context_distribution();
    let (factor, fell_back) = covariance_factor(fit_config, ev.n(), &out.beta, |b| {
        Ok(ev
            .loss_and_gradient(b.as_slice().expect("contiguous coefficients"))?
            .1)
    })?;
    let block = SearchBlock {
        center: out.beta.clone(),
        factor,
    };

    let mut candidates = Vec::with_capacity(fit_config.n_candidates + 1);
    candidates.push(block.center.clone());
    let mut rng = ChaCha8Rng::seed_from_u64(fit_config.seed);
    for _ in 0..fit_config.n_candidates {
        candidates.push(block.draw(&mut rng));
    }

    let losses: Vec<f64> = candidates
        .iter()
        .map(|b| ev.loss(b.as_slice().expect("contiguous coefficients")))
        .collect::<Result<_>>()?;
    let n = ev.n() as f64;
    let e_n = if fit_config.e_n_scale.is_infinite() {
        f64::INFINITY
    } else {
        fit_config.e_n_scale * n.ln() / n
    };
    let set = solution_set_indices(&losses, e_n);

    let gains: Vec<[f64; 2]> = candidates
        .iter()
        .map(|b| space.action_gain(b.as_slice().expect("contiguous coefficients")))
        .collect();
    let mut best_j = 0usize;
    let mut best_score = f64::NEG_INFINITY;
    for (j, _) in candidates.iter().enumerate() {
        let w = policy_weights(gains[j], &dist)?;
        let mut worst = f64::INFINITY;
        for &i in &set {
            let v = gains[i][0] * w[0] + gains[i][1] * w[1];
            if v < worst {
                worst = v;
            }
        }
        if worst > best_score {
            best_score = worst;
            best_j = j;
        }
    }

    let chosen = candidates.swap_remove(best_j);
    let diagnostics = Diagnostics {
        loss_at_optimum: losses[best_j],
        objective_at_optimum: best_score,
        candidates_scored: losses.len(),
        solution_set_size: Some(set.len()),
        fallback_isotropic: fell_back,
        converged: out.converged,
        iterations: out.iterations,
    };
    Ok(fit_result_from(space, chosen, out.trace, diagnostics))
}

fn embed_gain_gradient(space: HypothesisSpace, w: [f64; 2]) -> Array1<f64> {
    match space {
        HypothesisSpace::TwoDim => Array1::from(vec![0.0, 0.0, w[0], w[1]]),
        HypothesisSpace::OneDim => Array1::from(vec![0.0, w[0]]),
    }
}

/// Alternating loop: with the policy fixed, descend β on
/// v(β, π) + λ_n·L_n(β) (the inner test function is closed form inside the
/// loss); then update π to the greedy assignment of the new β, which solves
/// the per-context LP exactly for binary actions. Stops when the policy's
/// decisions on the dataset contexts no longer change.
pub fn fit_alternating(
    dataset: &IvDataset,
    alpha: f64,
    basis: &TestBasis,
    fit_config: &FitConfig,
    loss_config: &LossConfig,
    policy_init: Option<LinearPolicy>,
) -> Result<FitResult> {
    fit_config.validate()?;
    require_smoothed(loss_config, "the alternating loop")?;
    let ev = LossEvaluator::new(dataset, alpha, basis, loss_config)?;
    let space = ev.space();
    let dist = dataset.context_distribution();
    let lambda = fit_config.lambda_scale.unwrap_or(1.6) * (ev.n() as f64).sqrt();
    let contexts: Vec<(f64, f64)> = dataset.samples.iter().map(|s| (s.x1, s.x2)).collect();

    let mut pi = policy_init.unwrap_or_else(|| LinearPolicy::new(0.0, 0.0));
    let mut beta = initial_beta(space.dim(), fit_config);
    let mut trace: Vec<(usize, f64)> = Vec::new();
    let mut best: Option<(f64, Array1<f64>, LinearPolicy)> = None;
    let mut converged = false;
    let mut outer_count = 0usize;

    for outer in 0..fit_config.max_iters {
        let w = policy_weights(pi.gate, &dist)?;
        let vgrad = embed_gain_gradient(space, w);
        let out = gradient_descent(
            |b| {
                let slice = b.as_slice().expect("contiguous coefficients");
                let (l, g) = ev.loss_and_gradient(slice)?;
                let gain = space.action_gain(slice);
                let v = gain[0] * w[0] + gain[1] * w[1];
                Ok((v + lambda * l, &g.mapv(|x| x * lambda) + &vgrad))
            },
            beta,
            fit_config,
        )?;
        beta = out.beta;
        outer_count = outer + 1;
        let pi_new = LinearPolicy::from_gate(
            space.action_gain(beta.as_slice().expect("contiguous coefficients")),
        );
        let score = own_policy_value(space, &beta, &dist)?
            + lambda * ev.loss(beta.as_slice().expect("contiguous coefficients"))?;
        trace.push((outer, score));
        if best.as_ref().map_or(true, |(s, _, _)| score < *s) {
            best = Some((score, beta.clone(), pi_new));
        }
        if pi_new.same_decisions_on(&pi, contexts.iter()) {
            converged = true;
            pi = pi_new;
            break;
        }
        pi = pi_new;
    }

    let (final_beta, final_policy, final_score) = if converged {
        let score = trace.last().expect("at least one outer iteration").1;
        (beta, pi, score)
    } else {
        let (score, b, p) = best.expect("at least one outer iteration");
        (b, p, score)
    };
    let loss_at_optimum = ev.loss(final_beta.as_slice().expect("contiguous coefficients"))?;
    Ok(FitResult {
        beta: HypothesisParams::new(final_beta.to_vec()),
        policy: final_policy,
        objective_trace: trace,
        diagnostics: Diagnostics {
            loss_at_optimum,
            objective_at_optimum: final_score,
            candidates_scored: 0,
            solution_set_size: None,
            fallback_isotropic: false,
            converged,
            iterations: outer_count,
        },
    })
}

/// Regularized pessimistic learner for negative controls. Candidates are
/// joint (h₁, h₂) coefficient stacks; the center descends l₁ + l₂ jointly;
/// the returned policy derives from the h₁ block.
pub fn fit_nc_regularized(
    dataset: &NcDataset,
    alpha: f64,
    basis1: &TestBasis,
    basis2: &TestBasis,
    h2_features: &TestBasis,
    fit_config: &FitConfig,
    loss_config: &LossConfig,
) -> Result<FitResult> {
    fit_config.validate()?;
    require_smoothed(loss_config, "negative-control fitting")?;
    let ev = NcLossEvaluator::new(dataset, alpha, basis1, basis2, h2_features, loss_config)?;
    let dim = 4 + ev.h2_dim();
    let beta0 = initial_beta(dim, fit_config);
    let out = gradient_descent(
        |b| ev.loss_and_gradient(b.as_slice().expect("contiguous coefficients")),
        beta0,
        fit_config,
    )?;

    let space = HypothesisSpace::TwoDim;
    let dist = dataset.context_distribution();
    let lambda = fit_config.lambda_scale.unwrap_or(1.0) * (ev.n() as f64).sqrt();
    let (factor, fell_back) = covariance_factor(fit_config, ev.n(), &out.beta, |b| {
        Ok(ev
            .loss_and_gradient(b.as_slice().expect("contiguous coefficients"))?
            .1)
    })?;
    let block = SearchBlock {
        center: out.beta.clone(),
        factor,
    };
    let rule = fit_config.selection_rule;
    let search = random_search(
        std::slice::from_ref(&block),
        fit_config.n_candidates,
        fit_config.seed,
        |cand| {
            let stacked = cand[0].as_slice().expect("contiguous coefficients");
            let h1 = Array1::from(stacked[..4].to_vec());
            let v = own_policy_value(space, &h1, &dist)?;
            match rule {
                SelectionRule::FullObjective => Ok(v + lambda * ev.loss(stacked)?),
                SelectionRule::ValueOnly => Ok(v),
            }
        },
    )?;
    let chosen = search.chosen.into_iter().next().expect("one block");
    let loss_at_optimum = ev.loss(chosen.as_slice().expect("contiguous coefficients"))?;
    let gate = space.action_gain(&chosen.as_slice().expect("contiguous coefficients")[..4]);
    Ok(FitResult {
        beta: HypothesisParams::new(chosen.to_vec()),
        policy: LinearPolicy::from_gate(gate),
        objective_trace: out.trace,
        diagnostics: Diagnostics {
            loss_at_optimum,
            objective_at_optimum: search.score,
            candidates_scored: search.scored,
            solution_set_size: None,
            fallback_isotropic: fell_back,
            converged: out.converged,
            iterations: out.iterations,
        },
    })
}

/// Multi-quantile spectral-risk learner: one greedy center per quantile
/// level, a joint random search over the stacked coefficients scoring
/// Σᵢ φ(αᵢ)·Vᵢ(βᵢ) + λ_n·Σᵢ L_{i,n}(βᵢ), and the greedy policy of the
/// weight-aggregated gate.
pub fn fit_spectral_risk(
    dataset: &IvDataset,
    alphas: &[f64],
    weights: &[f64],
    basis: &TestBasis,
    fit_config: &FitConfig,
    loss_config: &LossConfig,
) -> Result<FitResult> {
    if alphas.is_empty() || alphas.len() != weights.len() {
        return Err(Error::Config(format!(
            "need equal, nonzero numbers of quantile levels and weights, got {} and {}",
            alphas.len(),
            weights.len()
        )));
    }
    let mut evaluators = Vec::with_capacity(alphas.len());
    let mut blocks = Vec::with_capacity(alphas.len());
    let mut trace: Vec<(usize, f64)> = Vec::new();
    let mut fell_back = false;
    let mut converged = true;
    let mut iterations = 0usize;
    let mut offset = 0usize;
    for &alpha in alphas {
        let (ev, out) = greedy_center(dataset, alpha, basis, fit_config, loss_config)?;
        let (factor, fb) = covariance_factor(fit_config, ev.n(), &out.beta, |b| {
            Ok(ev
                .loss_and_gradient(b.as_slice().expect("contiguous coefficients"))?
                .1)
        })?;
        fell_back |= fb;
        converged &= out.converged;
        iterations += out.iterations;
        for (it, l) in &out.trace {
            trace.push((offset + it, *l));
        }
        offset += out.iterations + 1;
        blocks.push(SearchBlock {
            center: out.beta,
            factor,
        });
        evaluators.push(ev);
    }

    let space = evaluators[0].space();
    let dist = dataset.context_distribution();
    let n = evaluators[0].n();
    let lambda = fit_config.lambda_scale.unwrap_or(1.0) * (n as f64).sqrt();
    let rule = fit_config.selection_rule;
    let search = random_search(&blocks, fit_config.n_candidates, fit_config.seed, |cand| {
        let mut value_sum = 0.0;
        let mut loss_sum = 0.0;
        for (i, beta) in cand.iter().enumerate() {
            value_sum += weights[i] * own_policy_value(space, beta, &dist)?;
            if rule == SelectionRule::FullObjective {
                loss_sum += evaluators[i].loss(beta.as_slice().expect("contiguous coefficients"))?;
            }
        }
        Ok(match rule {
            SelectionRule::FullObjective => value_sum + lambda * loss_sum,
            SelectionRule::ValueOnly => value_sum,
        })
    })?;

    let mut gate = [0.0f64; 2];
    let mut stacked = Vec::with_capacity(space.dim() * alphas.len());
    let mut loss_sum = 0.0;
    for (i, beta) in search.chosen.iter().enumerate() {
        let slice = beta.as_slice().expect("contiguous coefficients");
        let gain = space.action_gain(slice);
        gate[0] += weights[i] * gain[0];
        gate[1] += weights[i] * gain[1];
        loss_sum += evaluators[i].loss(slice)?;
        stacked.extend_from_slice(slice);
    }

    Ok(FitResult {
        beta: HypothesisParams::new(stacked),
        policy: LinearPolicy::from_gate(gate),
        objective_trace: trace,
        diagnostics: Diagnostics {
            loss_at_optimum: loss_sum,
            objective_at_optimum: search.score,
            candidates_scored: search.scored,
            solution_set_size: None,
            fallback_isotropic: fell_back,
            converged,
            iterations,
        },
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::dgp::{generate_iv_dataset, DgpConfig};

    fn dataset(n: usize, seed: u64) -> IvDataset {
        generate_iv_dataset(&DgpConfig {
            n,
            seed,
            ..DgpConfig::default()
        })
        .unwrap()
    }

    fn quick_fit_config(candidates: usize) -> FitConfig {
        FitConfig {
            max_iters: 300,
            n_candidates: candidates.max(1),
            seed: 11,
            ..FitConfig::default()
        }
    }

    #[test]
    fn empty_dataset_is_a_config_error() {
        let ds = dataset(0, 1);
        let err = fit_greedy(
            &ds,
            0.2,
            &TestBasis::Main13,
            &FitConfig::default(),
            &LossConfig::default(),
        )
        .unwrap_err();
        assert!(matches!(err, Error::Config(_)));
    }

    #[test]
    fn hard_mode_fitting_is_rejected() {
        let ds = dataset(50, 2);
        let err = fit_greedy(
            &ds,
            0.2,
            &TestBasis::Main13,
            &FitConfig::default(),
            &LossConfig::hard(),
        )
        .unwrap_err();
        assert!(matches!(err, Error::Config(_)));
    }

    #[test]
    fn greedy_fit_is_deterministic() {
        let ds = dataset(300, 3);
        let cfg = quick_fit_config(0);
        let a = fit_greedy(&ds, 0.2, &TestBasis::Main13, &cfg, &LossConfig::default()).unwrap();
        let b = fit_greedy(&ds, 0.2, &TestBasis::Main13, &cfg, &LossConfig::default()).unwrap();
        assert_eq!(a, b);
        assert_eq!(
            a.policy.gate,
            [a.beta.beta[2], a.beta.beta[3]],
            "policy gate must be the action-gain block"
        );
    }

    #[test]
    fn greedy_trace_is_monotone_within_slack() {
        let ds = dataset(400, 4);
        let fit = fit_greedy(
            &ds,
            0.2,
            &TestBasis::Main13,
            &quick_fit_config(0),
            &LossConfig::default(),
        )
        .unwrap();
        for pair in fit.objective_trace.windows(2) {
            assert!(pair[1].1 <= pair[0].1 + 1e-9);
        }
    }

    #[test]
    fn pessimistic_score_never_exceeds_center_score() {
        let ds = dataset(500, 5);
        let fit_cfg = quick_fit_config(200);
        let loss_cfg = LossConfig::default();
        let basis = TestBasis::Main13;
        let greedy = fit_greedy(&ds, 0.2, &basis, &fit_cfg, &loss_cfg).unwrap();
        let pess = fit_pessimistic_regularized(&ds, 0.2, &basis, &fit_cfg, &loss_cfg).unwrap();

        let dist = ds.context_distribution();
        let lambda = (ds.n() as f64).sqrt();
        let space = ds.space();
        let center_score = own_policy_value(space, &Array1::from(greedy.beta.beta.clone()), &dist)
            .unwrap()
            + lambda
                * crate::loss::empirical_loss(&ds, &greedy.beta.beta, 0.2, &basis, &loss_cfg)
                    .unwrap();
        assert!(pess.diagnostics.objective_at_optimum <= center_score + 1e-12);
    }

    #[test]
    fn huge_lambda_selects_the_loss_minimizing_candidate() {
        let ds = dataset(300, 6);
        let fit_cfg = FitConfig {
            lambda_scale: Some(1e9),
            ..quick_fit_config(100)
        };
        let loss_cfg = LossConfig::default();
        let basis = TestBasis::Main13;
        let pess = fit_pessimistic_regularized(&ds, 0.2, &basis, &fit_cfg, &loss_cfg).unwrap();

        // Reconstruct the candidate set and find the loss argmin directly.
        let (ev, out) = greedy_center(&ds, 0.2, &basis, &fit_cfg, &loss_cfg).unwrap();
        let sigma = fit_cfg.r_scale / (ev.n() as f64).sqrt();
        let block = SearchBlock {
            center: out.beta,
            factor: BlockFactor::Isotropic(sigma),
        };
        let mut rng = ChaCha8Rng::seed_from_u64(fit_cfg.seed);
        let mut best_loss = ev.loss(block.center.as_slice().unwrap()).unwrap();
        let mut best = block.center.clone();
        for _ in 0..fit_cfg.n_candidates {
            let c = block.draw(&mut rng);
            let l = ev.loss(c.as_slice().unwrap()).unwrap();
            if l < best_loss {
                best_loss = l;
                best = c;
            }
        }
        assert_eq!(pess.beta.beta, best.to_vec());
    }

    #[test]
    fn solution_set_threshold_edges() {
        let losses = [0.3, 0.1, 0.1, 0.5];
        assert_eq!(solution_set_indices(&losses, f64::INFINITY), vec![0, 1, 2, 3]);
        assert_eq!(solution_set_indices(&losses, 0.0), vec![1, 2]);
        let s_small = solution_set_indices(&losses, 0.15);
        let s_large = solution_set_indices(&losses, 0.25);
        assert!(s_small.iter().all(|i| s_large.contains(i)));
        // The minimizer is always inside.
        assert!(solution_set_indices(&losses, 0.0).contains(&1));
    }

    #[test]
    fn solution_set_with_zero_threshold_returns_greedy_policy_of_minimizer() {
        let ds = dataset(300, 7);
        let fit_cfg = FitConfig {
            e_n_scale: 0.0,
            ..quick_fit_config(100)
        };
        let loss_cfg = LossConfig::default();
        let basis = TestBasis::Main13;
        let fit = fit_solution_set(&ds, 0.2, &basis, &fit_cfg, &loss_cfg).unwrap();
        assert_eq!(fit.diagnostics.solution_set_size, Some(1));

        // Reconstruct the loss-minimizing candidate; the returned policy must
        // make its greedy decisions.
        let (ev, out) = greedy_center(&ds, 0.2, &basis, &fit_cfg, &loss_cfg).unwrap();
        let sigma = fit_cfg.r_scale / (ev.n() as f64).sqrt();
        let block = SearchBlock {
            center: out.beta,
            factor: BlockFactor::Isotropic(sigma),
        };
        let mut rng = ChaCha8Rng::seed_from_u64(fit_cfg.seed);
        let mut best_loss = ev.loss(block.center.as_slice().unwrap()).unwrap();
        let mut best = block.center.clone();
        for _ in 0..fit_cfg.n_candidates {
            let c = block.draw(&mut rng);
            let l = ev.loss(c.as_slice().unwrap()).unwrap();
            if l < best_loss {
                best_loss = l;
                best = c;
            }
        }
        let minimizer_policy =
            LinearPolicy::from_gate(ds.space().action_gain(best.as_slice().unwrap()));
        let contexts: Vec<(f64, f64)> = ds.samples.iter().map(|s| (s.x1, s.x2)).collect();
        assert!(fit.policy.same_decisions_on(&minimizer_policy, contexts.iter()));
    }

    #[test]
    fn spectral_with_one_level_reduces_to_pessimistic() {
        let ds = dataset(400, 8);
        let fit_cfg = quick_fit_config(150);
        let loss_cfg = LossConfig::default();
        let basis = TestBasis::Main13;
        let pess = fit_pessimistic_regularized(&ds, 0.2, &basis, &fit_cfg, &loss_cfg).unwrap();
        let spec =
            fit_spectral_risk(&ds, &[0.2], &[1.0], &basis, &fit_cfg, &loss_cfg).unwrap();
        assert_eq!(spec.beta.beta, pess.beta.beta);
        assert_eq!(spec.policy, pess.policy);
    }

    #[test]
    fn spectral_zero_weights_give_degenerate_gate() {
        let ds = dataset(200, 9);
        let fit = fit_spectral_risk(
            &ds,
            &[0.15, 0.25],
            &[0.0, 0.0],
            &TestBasis::Main13,
            &quick_fit_config(20),
            &LossConfig::default(),
        )
        .unwrap();
        assert_eq!(fit.policy.gate, [0.0, 0.0]);
        assert!(!fit.policy.act(1.0, 1.0));
    }

    #[test]
    fn spectral_mismatched_lengths_error() {
        let ds = dataset(50, 10);
        let err = fit_spectral_risk(
            &ds,
            &[0.2, 0.3],
            &[1.0],
            &TestBasis::Main13,
            &FitConfig::default(),
            &LossConfig::default(),
        )
        .unwrap_err();
        assert!(matches!(err, Error::Config(_)));
    }

    #[test]
    fn scaling_beta_preserves_greedy_decisions() {
        let space = HypothesisSpace::TwoDim;
        let beta = [0.4, -1.2, 2.0, -0.7];
        let scaled: Vec<f64> = beta.iter().map(|b| b * 3.5).collect();
        let p = LinearPolicy::from_gate(space.action_gain(&beta));
        let q = LinearPolicy::from_gate(space.action_gain(&scaled));
        let contexts = [(0.1, 0.9), (-1.0, 0.3), (2.0, -0.4), (0.0, 0.0)];
        assert!(p.same_decisions_on(&q, contexts.iter()));
    }
}
