use serde::{Deserialize, Serialize};

use crate::cox::{apply_log_gp, log_likelihood, CellCounts, GPConfig, GpFactor, GAMMA_FLOOR};
use crate::error::{IpmError, Result};
use crate::grid::{empirical_intensity, IntensityField, KdeOptions, MassMode, PointPattern, TraitGrid};
use crate::kernel::{Covariates, KernelParams};
use crate::propagation::{build_kernel_matrix, pseudo_ipm_step};

use super::model::{identifiability_bound, FitData, ModelSpec, ResolvedPriors};

/// Full sampler state: kernel parameters, GP hyperparameters and one latent
/// field per likelihood term.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct State {
    pub params: KernelParams,
    pub gp: GPConfig,
    pub eps: Vec<Vec<f64>>,
}

/// Log prior density of the sampled quantities, on their natural scale.
pub fn log_prior(params: &KernelParams, gp: &GPConfig, spec: &ModelSpec, priors: &ResolvedPriors) -> f64 {
    let p = &priors.spec;
    let mut lp = priors.q1.log_density(params.q1)
        + p.sigma.log_density(params.sigma)
        + p.eta.log_density(params.eta)
        + p.sigma2_eps.log_density(gp.sigma2_eps)
        + priors.phi.log_density(gp.phi);
    if spec.delta0.is_free() {
        lp += p.delta0.log_density(params.delta0);
    }
    if spec.delta1.is_free() {
        lp += priors.delta1.log_density(params.delta1);
    }
    if spec.mu.is_free() {
        lp += p.mu.log_density(params.mu);
    }
    let first = usize::from(!spec.intercept.is_free());
    lp += params.beta[first..].iter().map(|&b| p.beta.log_density(b)).sum::<f64>();
    lp
}

/// Intensity prediction floored away from zero.
pub(crate) fn floored(field: IntensityField) -> Result<IntensityField> {
    let grid = field.grid().clone();
    let (year, bin) = (field.year, field.bin);
    let v = field.into_values().into_iter().map(|x| x.max(GAMMA_FLOOR)).collect();
    Ok(IntensityField::new(grid, v)?.with_labels(year, bin))
}

/// Per-term pieces of the log posterior.
#[derive(Debug, Clone, PartialEq)]
pub struct Decomposition {
    pub likelihood: Vec<f64>,
    pub gp: Vec<f64>,
    pub prior: f64,
}

impl Decomposition {
    pub fn total(&self) -> f64 {
        self.likelihood.iter().sum::<f64>() + self.gp.iter().sum::<f64>() + self.prior
    }
}

/// Term-by-term evaluation of the scaled posterior.
pub fn decompose(state: &State, data: &FitData, spec: &ModelSpec, priors: &ResolvedPriors) -> Result<Decomposition> {
    state.params.validate()?;
    state.gp.validate()?;
    if state.eps.len() != data.terms.len() {
        return Err(IpmError::LengthMismatch {
            expected: data.terms.len(),
            found: state.eps.len(),
        });
    }
    data.check_constraint(&state.params)?;
    let factor = GpFactor::new(&data.grid, state.gp.phi, state.gp.family)?;
    let mut likelihood = Vec::with_capacity(data.terms.len());
    let mut gp = Vec::with_capacity(data.terms.len());
    for (term, eps) in data.terms.iter().zip(&state.eps) {
        let next = floored(pseudo_ipm_step(&term.start, &term.covariates, &state.params, spec.placement)?)?;
        let lambda = apply_log_gp(&next, eps)?;
        likelihood.push(log_likelihood(&term.counts, &lambda, term.multiplicity as u64)?);
        gp.push(factor.log_density(state.gp.sigma2_eps, eps));
    }
    Ok(Decomposition {
        likelihood,
        gp,
        prior: log_prior(&state.params, &state.gp, spec, priors),
    })
}

/// Scaled log posterior: likelihood terms, GP densities and priors.
pub fn log_posterior(state: &State, data: &FitData, spec: &ModelSpec, priors: &ResolvedPriors) -> Result<f64> {
    Ok(decompose(state, data, spec, priors)?.total())
}

/// Unscaled single-plot posterior, computed straight from the plot's yearly
/// patterns with the dense kernel matrix.
///
/// `covariates[t]` drives the step from year `t` to `t + 1`; `state.eps` holds
/// one field per step whose starting pattern is nonempty.
pub fn plot_level_log_posterior(
    patterns: &[PointPattern],
    covariates: &[Covariates],
    grid: &TraitGrid,
    state: &State,
    spec: &ModelSpec,
    priors: &ResolvedPriors,
) -> Result<f64> {
    let counts_series: Vec<f64> = patterns.iter().map(|p| p.len() as f64).collect();
    let bound = identifiability_bound(&counts_series, priors.spec.min_half_width)?;
    let factor = GpFactor::new(grid, state.gp.phi, state.gp.family)?;
    let kde = KdeOptions {
        mode: MassMode::Raw,
        ..spec.kde
    };
    let p = &state.params;
    let d = grid.width();
    let mut total = log_prior(p, &state.gp, spec, priors);
    let mut eps_iter = state.eps.iter();
    for t in 0..patterns.len().saturating_sub(1) {
        if patterns[t].is_empty() {
            continue;
        }
        let start = empirical_intensity(&patterns[t..=t], grid, &kde)?;
        let g = start.mass();
        let q = p.q0 * (-p.q1 * g).exp() / (1.0 + p.q0 * (-p.q1 * g).exp());
        let delta = (p.delta0 - p.delta1 * g).exp();
        if !(q + delta > bound.lower && q + delta < bound.upper) {
            return Err(IpmError::ConstraintViolation {
                value: q + delta,
                lower: bound.lower,
                upper: bound.upper,
            });
        }
        let k = build_kernel_matrix(grid, &covariates[t], p, g, spec.placement)?;
        let eps = eps_iter.next().ok_or(IpmError::LengthMismatch {
            expected: patterns.len() - 1,
            found: state.eps.len(),
        })?;
        let mut n = vec![0u64; grid.cells()];
        for &x in &patterns[t + 1].diameters {
            let j = (((x - grid.lower()) / d).floor() as usize).min(grid.cells() - 1);
            n[j] += 1;
        }
        for ((pred, e), &nj) in k.apply(start.values()).iter().zip(eps).zip(&n) {
            let lambda = pred.max(GAMMA_FLOOR) * e.exp();
            total += -lambda * d + if nj > 0 { nj as f64 * lambda.ln() } else { 0.0 };
        }
        total += factor.log_density(state.gp.sigma2_eps, eps);
    }
    Ok(total)
}

/// Cached counts of one term in the sampler's inner loop.
#[derive(Debug, Clone)]
pub(crate) struct TermCounts {
    /// `(cell, count)` for occupied cells.
    pub nonzero: Vec<(usize, f64)>,
    /// `m d`.
    pub exposure: f64,
    /// `sum n ln m`.
    pub constant: f64,
}

impl TermCounts {
    pub fn new(counts: &CellCounts, m: usize, width: f64) -> Self {
        let m = m as f64;
        let nonzero: Vec<(usize, f64)> = counts
            .counts
            .iter()
            .enumerate()
            .filter(|(_, &n)| n > 0)
            .map(|(j, &n)| (j, n as f64))
            .collect();
        let total: f64 = nonzero.iter().map(|(_, n)| n).sum();
        Self {
            nonzero,
            exposure: m * width,
            constant: total * m.ln(),
        }
    }

    /// Log likelihood from the predicted intensity and `e^eps`.
    pub fn eval_sparse_log(&self, gamma: &[f64], eps: &[f64], exp_eps: &[f64]) -> f64 {
        let exposure: f64 = gamma.iter().zip(exp_eps).map(|(g, e)| g * e).sum();
        let mut ll = self.constant - self.exposure * exposure;
        for &(j, n) in &self.nonzero {
            ll += n * (gamma[j].ln() + eps[j]);
        }
        ll
    }
}
