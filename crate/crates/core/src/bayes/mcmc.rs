//! Metropolis-within-Gibbs sampler.
//!
//! Kernel parameters get two kinds of random-walk moves on their unconstrained
//! scale. A plain move keeps the latent fields fixed. A compensated move
//! shifts every latent field by `ln(gamma_old / gamma_new)` so the operating
//! intensities, and therefore the likelihood, stay put; only the GP prior and
//! the parameter prior decide. The shift does not depend on the fields, so the
//! move is volume preserving. Latent fields are refreshed by elliptical slice
//! sampling, the GP variance by a conjugate draw plus a joint rescaling of all
//! fields, and the GP decay by a random walk on its log.

use std::sync::atomic::{AtomicBool, Ordering};

use rand::Rng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Gamma, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::cox::{GPConfig, GpFactor, GAMMA_FLOOR};
use crate::error::{IpmError, Result};
use crate::kernel::{recruitment_unchecked, survival_unchecked, KernelParams};
use crate::propagation::Propagator;
use crate::rng::{stream, Purpose};

use super::model::{Coord, FitData, ModelSpec, ResolvedPriors};
use super::posterior::{log_prior, State, TermCounts};
use super::prior::PositivePrior;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct McmcConfig {
    pub iterations: usize,
    pub burn_in: usize,
    pub thin: usize,
    pub seed: u64,
    pub chains: usize,
    /// Acceptance rate the random-walk scales are tuned towards during burn-in.
    pub target_acceptance: f64,
    pub compensated_moves: bool,
    /// Store latent fields with every retained draw.
    pub keep_latent: bool,
    /// Restrict parameter updates to these coordinate names.
    pub only: Option<Vec<String>>,
    pub update_latent: bool,
    pub update_hyper: bool,
    /// Drop the data and sample the prior.
    pub prior_only: bool,
}

impl Default for McmcConfig {
    fn default() -> Self {
        Self {
            iterations: 50_000,
            burn_in: 10_000,
            thin: 10,
            seed: 1,
            chains: 1,
            target_acceptance: 0.3,
            compensated_moves: true,
            keep_latent: false,
            only: None,
            update_latent: true,
            update_hyper: true,
            prior_only: false,
        }
    }
}

impl McmcConfig {
    pub fn validate(&self) -> Result<()> {
        if self.thin == 0 || self.chains == 0 {
            return Err(IpmError::InvalidParameter("thin and chains must be positive".into()));
        }
        if self.burn_in >= self.iterations {
            return Err(IpmError::InvalidParameter(format!(
                "burn-in {} must be below the iteration count {}",
                self.burn_in, self.iterations
            )));
        }
        if !(self.target_acceptance > 0.0 && self.target_acceptance < 1.0) {
            return Err(IpmError::InvalidParameter("target acceptance must lie in (0, 1)".into()));
        }
        Ok(())
    }
}

/// Retained draws of one chain.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PosteriorChain {
    pub chain: usize,
    pub seed: u64,
    /// Column names of `draws`: sampled kernel parameters, then the GP
    /// variance and decay.
    pub names: Vec<String>,
    pub iterations: Vec<usize>,
    pub draws: Vec<Vec<f64>>,
    pub params: Vec<KernelParams>,
    pub gp: Vec<GPConfig>,
    pub log_posterior: Vec<f64>,
    pub latent: Vec<Vec<Vec<f64>>>,
    pub acceptance: Vec<(String, f64)>,
    pub iterations_run: usize,
    pub burn_in: usize,
    pub thin: usize,
    pub interrupted: bool,
}

impl PosteriorChain {
    pub fn len(&self) -> usize {
        self.draws.len()
    }

    pub fn is_empty(&self) -> bool {
        self.draws.is_empty()
    }

    pub fn column(&self, name: &str) -> Option<Vec<f64>> {
        let k = self.names.iter().position(|n| n == name)?;
        Some(self.draws.iter().map(|row| row[k]).collect())
    }

    /// Chain rebuilt from stored draws; kernel parameters are filled in from
    /// `spec` and the named columns. Latent fields are not restored.
    pub fn from_draws(
        spec: &ModelSpec,
        chain: usize,
        seed: u64,
        names: Vec<String>,
        iterations: Vec<usize>,
        draws: Vec<Vec<f64>>,
        log_posterior: Vec<f64>,
    ) -> Result<Self> {
        let coords = spec.coordinates();
        let mut expected: Vec<String> = coords.iter().map(|&c| spec.coordinate_name(c)).collect();
        expected.push("sigma2_eps".into());
        expected.push("phi".into());
        if names != expected {
            return Err(IpmError::InvalidParameter(format!(
                "chain columns {names:?} do not match the model's {expected:?}"
            )));
        }
        if iterations.len() != draws.len() || log_posterior.len() != draws.len() {
            return Err(IpmError::LengthMismatch {
                expected: draws.len(),
                found: iterations.len().min(log_posterior.len()),
            });
        }
        let n = coords.len();
        let mut params = Vec::with_capacity(draws.len());
        let mut gp = Vec::with_capacity(draws.len());
        for row in &draws {
            if row.len() != n + 2 {
                return Err(IpmError::LengthMismatch { expected: n + 2, found: row.len() });
            }
            let mut p = spec.assemble(0.0, 0.0, 0.0);
            for (c, &v) in coords.iter().zip(row) {
                c.set(&mut p, v);
            }
            p.validate()?;
            params.push(p);
            gp.push(GPConfig {
                sigma2_eps: row[n],
                phi: row[n + 1],
                family: spec.gp_family,
            });
        }
        Ok(Self {
            chain,
            seed,
            names,
            burn_in: 0,
            thin: 1,
            iterations_run: iterations.last().copied().unwrap_or(0),
            iterations,
            draws,
            params,
            gp,
            log_posterior,
            latent: Vec::new(),
            acceptance: Vec::new(),
            interrupted: false,
        })
    }
}

/// Random-walk block with Robbins-Monro scale adaptation.
#[derive(Debug, Clone)]
struct Block {
    name: String,
    log_scale: f64,
    proposed: u64,
    accepted: u64,
    adapt_steps: u64,
}

impl Block {
    fn new(name: impl Into<String>, scale: f64) -> Self {
        Self {
            name: name.into(),
            log_scale: scale.ln(),
            proposed: 0,
            accepted: 0,
            adapt_steps: 0,
        }
    }

    fn scale(&self) -> f64 {
        self.log_scale.exp()
    }

    fn record(&mut self, accepted: bool, adapt: bool, target: f64) {
        self.proposed += 1;
        self.accepted += u64::from(accepted);
        if adapt {
            self.adapt_steps += 1;
            let gain = (self.adapt_steps as f64 + 1.0).powf(-0.6);
            self.log_scale += gain * (f64::from(u8::from(accepted)) - target);
            self.log_scale = self.log_scale.clamp(-20.0, 3.0);
        }
    }

    fn rate(&self) -> f64 {
        if self.proposed == 0 {
            0.0
        } else {
            self.accepted as f64 / self.proposed as f64
        }
    }
}

/// Prior medians pushed into the identifiability region.
pub fn initial_state(data: &FitData, spec: &ModelSpec, priors: &ResolvedPriors) -> Result<State> {
    let p = &priors.spec;
    let mut base = spec.assemble(priors.q1.median(), p.sigma.median(), p.eta.median());
    let d0 = p.delta0.median();
    let d1 = priors.delta1.median();
    if spec.delta0.is_free() {
        base.delta0 = d0;
    }
    if spec.delta1.is_free() {
        base.delta1 = d1;
    }
    let gp = GPConfig {
        sigma2_eps: p.sigma2_eps.median(),
        phi: priors.phi.median(),
        family: spec.gp_family,
    };
    let eps = vec![vec![0.0; data.grid.cells()]; data.terms.len()];
    if data.satisfies(&base) {
        return Ok(State { params: base, gp, eps });
    }
    // Closest feasible point on a grid of Q1 doublings and delta0 rescalings.
    let mut best: Option<(f64, KernelParams)> = None;
    let d0_factors: Vec<f64> = if spec.delta0.is_free() {
        (0..=120).map(|k| k as f64 / 40.0).collect()
    } else {
        vec![1.0]
    };
    for m in -30i32..=40 {
        for &s in &d0_factors {
            let mut cand = base.clone();
            cand.q1 = base.q1 * 2f64.powi(m);
            if spec.delta0.is_free() {
                cand.delta0 = d0 * s;
            }
            if spec.delta1.is_free() {
                cand.delta1 = d1 * 2f64.powi(m);
            }
            if data.satisfies(&cand) {
                let cost = m.unsigned_abs() as f64 * std::f64::consts::LN_2 + (s - 1.0).abs();
                if best.as_ref().is_none_or(|(c, _)| cost < *c) {
                    best = Some((cost, cand));
                }
            }
        }
    }
    match best {
        Some((_, params)) => Ok(State { params, gp, eps }),
        None => Err(IpmError::ConstraintViolation {
            value: f64::NAN,
            lower: data.bound.lower,
            upper: data.bound.upper,
        }),
    }
}

/// Metropolis rule for a symmetric proposal given a uniform draw `u`.
pub(crate) fn metropolis_accept(log_ratio: f64, u: f64) -> bool {
    !log_ratio.is_nan() && (log_ratio >= 0.0 || u.ln() < log_ratio)
}

struct Sampler<'a> {
    data: &'a FitData,
    spec: &'a ModelSpec,
    priors: &'a ResolvedPriors,
    cfg: &'a McmcConfig,
    coords: Vec<Coord>,
    active: Vec<bool>,
    counts: Vec<TermCounts>,
    params: KernelParams,
    gp: GPConfig,
    factor: GpFactor,
    prop: Propagator,
    grown: Vec<Vec<f64>>,
    gamma: Vec<Vec<f64>>,
    eps: Vec<Vec<f64>>,
    exp_eps: Vec<Vec<f64>>,
    ll: Vec<f64>,
    quad: Vec<f64>,
    scratch_prop: Propagator,
    s_grown: Vec<Vec<f64>>,
    s_gamma: Vec<Vec<f64>>,
    s_eps: Vec<Vec<f64>>,
    s_exp_eps: Vec<Vec<f64>>,
    s_ll: Vec<f64>,
    s_quad: Vec<f64>,
    nu: Vec<f64>,
    rng: ChaCha8Rng,
    plain: Vec<Block>,
    shifted: Vec<Block>,
    rescale: Block,
    decay: Block,
}

fn jacobian(c: Coord, u: f64) -> f64 {
    if c.is_positive() {
        u
    } else {
        0.0
    }
}

impl<'a> Sampler<'a> {
    fn new(
        data: &'a FitData,
        spec: &'a ModelSpec,
        priors: &'a ResolvedPriors,
        cfg: &'a McmcConfig,
        init: State,
        rng: ChaCha8Rng,
    ) -> Result<Self> {
        let coords = spec.coordinates();
        let active = coords
            .iter()
            .map(|&c| {
                cfg.only
                    .as_ref()
                    .is_none_or(|only| only.iter().any(|n| *n == spec.coordinate_name(c)))
            })
            .collect();
        let width = data.grid.width();
        let counts: Vec<TermCounts> = data
            .terms
            .iter()
            .map(|t| {
                if cfg.prior_only {
                    TermCounts {
                        nonzero: Vec::new(),
                        exposure: 0.0,
                        constant: 0.0,
                    }
                } else {
                    TermCounts::new(&t.counts, t.multiplicity, width)
                }
            })
            .collect();
        let prop = Propagator::new(&data.grid, &init.params, spec.placement)?;
        let b = data.grid.cells();
        let n = data.terms.len();
        let factor = GpFactor::new(&data.grid, init.gp.phi, init.gp.family)?;
        let names: Vec<String> = coords.iter().map(|&c| spec.coordinate_name(c)).collect();
        let mut s = Self {
            data,
            spec,
            priors,
            cfg,
            plain: names.iter().map(|nm| Block::new(nm.clone(), 0.1)).collect(),
            shifted: names.iter().map(|nm| Block::new(format!("{nm}:shift"), 0.1)).collect(),
            coords,
            active,
            counts,
            params: init.params,
            gp: init.gp,
            factor,
            scratch_prop: prop.clone(),
            prop,
            grown: vec![vec![0.0; b]; n],
            gamma: vec![vec![0.0; b]; n],
            exp_eps: init.eps.iter().map(|e| e.iter().map(|v| v.exp()).collect()).collect(),
            eps: init.eps,
            ll: vec![0.0; n],
            quad: vec![0.0; n],
            s_grown: vec![vec![0.0; b]; n],
            s_gamma: vec![vec![0.0; b]; n],
            s_eps: vec![vec![0.0; b]; n],
            s_exp_eps: vec![vec![0.0; b]; n],
            s_ll: vec![0.0; n],
            s_quad: vec![0.0; n],
            nu: vec![0.0; b],
            rng,
            rescale: Block::new("sigma2_eps:rescale", 0.1),
            decay: Block::new("phi", 0.3),
        };
        for t in 0..n {
            s.prop.apply_growth(s.data.terms[t].start.values(), &mut s.grown[t]);
        }
        predict(s.data, &s.params, &s.prop, &s.grown, &mut s.gamma);
        for t in 0..n {
            s.ll[t] = s.counts[t].eval_sparse_log(&s.gamma[t], &s.eps[t], &s.exp_eps[t]);
            s.quad[t] = s.factor.quad_form(&s.eps[t]);
        }
        if !s.log_posterior().is_finite() {
            return Err(IpmError::NonFinitePosterior);
        }
        Ok(s)
    }

    fn gp_total(&self) -> f64 {
        self.quad
            .iter()
            .map(|&q| self.factor.log_density_from_quad(self.gp.sigma2_eps, q))
            .sum()
    }

    fn log_posterior(&self) -> f64 {
        self.ll.iter().sum::<f64>() + self.gp_total() + log_prior(&self.params, &self.gp, self.spec, self.priors)
    }

    fn normal(&mut self) -> f64 {
        self.rng.sample(StandardNormal)
    }

    fn accept(&mut self, log_ratio: f64) -> bool {
        if log_ratio >= 0.0 {
            return true;
        }
        metropolis_accept(log_ratio, self.rng.random::<f64>())
    }

    /// Proposes a new value for coordinate `i` and fills the scratch
    /// predictions. Returns the proposal and log-prior-plus-Jacobian change,
    /// or `None` when it falls outside the support or the constraint region.
    fn propose(&mut self, i: usize, step: f64) -> Option<(KernelParams, f64)> {
        let c = self.coords[i];
        let u = c.to_free(c.get(&self.params));
        let u2 = u + step * self.normal();
        let mut p2 = self.params.clone();
        c.set(&mut p2, c.from_free(u2));
        if p2.validate().is_err() || !self.data.satisfies(&p2) {
            return None;
        }
        let lp2 = log_prior(&p2, &self.gp, self.spec, self.priors);
        if !lp2.is_finite() {
            return None;
        }
        let lp = log_prior(&self.params, &self.gp, self.spec, self.priors);
        let growth_changed = c.touches_growth();
        let recruits_changed = c == Coord::Eta;
        if growth_changed || recruits_changed {
            self.scratch_prop.clone_from(&self.prop);
            if growth_changed {
                self.scratch_prop.set_growth(p2.mu, p2.sigma).ok()?;
                for (t, term) in self.data.terms.iter().enumerate() {
                    self.scratch_prop.apply_growth(term.start.values(), &mut self.s_grown[t]);
                }
            }
            if recruits_changed {
                self.scratch_prop.set_recruits(p2.eta, self.spec.placement).ok()?;
            }
        }
        let prop = if growth_changed || recruits_changed { &self.scratch_prop } else { &self.prop };
        let grown = if growth_changed { &self.s_grown } else { &self.grown };
        predict(self.data, &p2, prop, grown, &mut self.s_gamma);
        Some((p2, lp2 - lp + jacobian(c, u2) - jacobian(c, u)))
    }

    fn commit_params(&mut self, i: usize, p2: KernelParams) {
        let c = self.coords[i];
        if c.touches_growth() || c == Coord::Eta {
            std::mem::swap(&mut self.prop, &mut self.scratch_prop);
        }
        if c.touches_growth() {
            std::mem::swap(&mut self.grown, &mut self.s_grown);
        }
        std::mem::swap(&mut self.gamma, &mut self.s_gamma);
        std::mem::swap(&mut self.ll, &mut self.s_ll);
        self.params = p2;
    }

    fn plain_update(&mut self, i: usize, adapt: bool) {
        let step = self.plain[i].scale();
        let Some((p2, dprior)) = self.propose(i, step) else {
            self.plain[i].record(false, adapt, self.cfg.target_acceptance);
            return;
        };
        let mut dll = 0.0;
        for t in 0..self.data.terms.len() {
            self.s_ll[t] = self.counts[t].eval_sparse_log(&self.s_gamma[t], &self.eps[t], &self.exp_eps[t]);
            dll += self.s_ll[t] - self.ll[t];
        }
        let ok = self.accept(dll + dprior);
        if ok {
            self.commit_params(i, p2);
        }
        self.plain[i].record(ok, adapt, self.cfg.target_acceptance);
    }

    fn shifted_update(&mut self, i: usize, adapt: bool) {
        let step = self.shifted[i].scale();
        let Some((p2, dprior)) = self.propose(i, step) else {
            self.shifted[i].record(false, adapt, self.cfg.target_acceptance);
            return;
        };
        let mut dll = 0.0;
        let mut dquad = 0.0;
        for t in 0..self.data.terms.len() {
            let (eps, gam, new_gam) = (&self.eps[t], &self.gamma[t], &self.s_gamma[t]);
            for (j, slot) in self.s_eps[t].iter_mut().enumerate() {
                *slot = eps[j] + (gam[j] / new_gam[j]).ln();
            }
            for (slot, e) in self.s_exp_eps[t].iter_mut().zip(&self.s_eps[t]) {
                *slot = e.exp();
            }
            self.s_quad[t] = self.factor.quad_form(&self.s_eps[t]);
            self.s_ll[t] = self.counts[t].eval_sparse_log(&self.s_gamma[t], &self.s_eps[t], &self.s_exp_eps[t]);
            dll += self.s_ll[t] - self.ll[t];
            dquad += self.s_quad[t] - self.quad[t];
        }
        let dgp = -0.5 * dquad / self.gp.sigma2_eps;
        let ok = self.accept(dll + dgp + dprior);
        if ok {
            self.commit_params(i, p2);
            std::mem::swap(&mut self.eps, &mut self.s_eps);
            std::mem::swap(&mut self.exp_eps, &mut self.s_exp_eps);
            std::mem::swap(&mut self.quad, &mut self.s_quad);
        }
        self.shifted[i].record(ok, adapt, self.cfg.target_acceptance);
    }

    /// Elliptical slice update of term `t`'s latent field.
    fn slice_update(&mut self, t: usize) {
        let mut nu = std::mem::take(&mut self.nu);
        self.factor.sample_into(self.gp.sigma2_eps, &mut self.rng, &mut nu);
        let log_y = self.ll[t] + self.rng.random::<f64>().ln();
        let mut theta = self.rng.random_range(0.0..std::f64::consts::TAU);
        let (mut lo, mut hi) = (theta - std::f64::consts::TAU, theta);
        let mut cand = std::mem::take(&mut self.s_eps[t]);
        let mut cand_exp = std::mem::take(&mut self.s_exp_eps[t]);
        loop {
            let (c, s) = (theta.cos(), theta.sin());
            for j in 0..cand.len() {
                cand[j] = self.eps[t][j] * c + nu[j] * s;
                cand_exp[j] = cand[j].exp();
            }
            let ll = self.counts[t].eval_sparse_log(&self.gamma[t], &cand, &cand_exp);
            if ll > log_y {
                self.ll[t] = ll;
                break;
            }
            if hi - lo < 1e-12 {
                // Bracket collapsed onto the current point; keep it.
                cand.copy_from_slice(&self.eps[t]);
                cand_exp.copy_from_slice(&self.exp_eps[t]);
                break;
            }
            if theta < 0.0 {
                lo = theta;
            } else {
                hi = theta;
            }
            theta = self.rng.random_range(lo..hi);
        }
        std::mem::swap(&mut self.eps[t], &mut cand);
        std::mem::swap(&mut self.exp_eps[t], &mut cand_exp);
        self.s_eps[t] = cand;
        self.s_exp_eps[t] = cand_exp;
        self.quad[t] = self.factor.quad_form(&self.eps[t]);
        self.nu = nu;
    }

    fn variance_update(&mut self, adapt: bool) {
        let prior = self.priors.spec.sigma2_eps;
        let cells = (self.data.terms.len() * self.data.grid.cells()) as f64;
        match prior {
            PositivePrior::InverseGamma { shape, scale } => {
                let a = shape + 0.5 * cells;
                let b = scale + 0.5 * self.quad.iter().sum::<f64>();
                let g = Gamma::new(a, 1.0).expect("positive shape").sample(&mut self.rng);
                self.gp.sigma2_eps = b / g;
            }
            _ => {
                // Random walk on log variance with fields held fixed.
                let u = self.gp.sigma2_eps.ln();
                let u2 = u + self.rescale.scale() * self.normal();
                let s2 = u2.exp();
                let q: f64 = self.quad.iter().sum();
                let d = -0.5 * cells * (u2 - u) - 0.5 * q * (1.0 / s2 - 1.0 / self.gp.sigma2_eps)
                    + prior.log_density(s2) - prior.log_density(self.gp.sigma2_eps) + u2 - u;
                if self.accept(d) {
                    self.gp.sigma2_eps = s2;
                }
            }
        }
        // Joint rescaling: variance and fields move together.
        let delta = self.rescale.scale() * self.normal();
        let c = (0.5 * delta).exp();
        let s2 = self.gp.sigma2_eps * delta.exp();
        let mut dll = 0.0;
        for t in 0..self.data.terms.len() {
            for j in 0..self.eps[t].len() {
                self.s_eps[t][j] = c * self.eps[t][j];
                self.s_exp_eps[t][j] = self.s_eps[t][j].exp();
            }
            self.s_ll[t] = self.counts[t].eval_sparse_log(&self.gamma[t], &self.s_eps[t], &self.s_exp_eps[t]);
            dll += self.s_ll[t] - self.ll[t];
        }
        let dprior = prior.log_density(s2) - prior.log_density(self.gp.sigma2_eps) + delta;
        let ok = self.accept(dll + dprior);
        if ok {
            self.gp.sigma2_eps = s2;
            std::mem::swap(&mut self.eps, &mut self.s_eps);
            std::mem::swap(&mut self.exp_eps, &mut self.s_exp_eps);
            std::mem::swap(&mut self.ll, &mut self.s_ll);
            self.quad.iter_mut().for_each(|q| *q *= c * c);
        }
        self.rescale.record(ok, adapt, self.cfg.target_acceptance);
    }

    fn decay_update(&mut self, adapt: bool) {
        let u = self.gp.phi.ln();
        let u2 = u + self.decay.scale() * self.normal();
        let phi2 = u2.exp();
        let lp = self.priors.phi.log_density(self.gp.phi);
        let lp2 = self.priors.phi.log_density(phi2);
        if !lp2.is_finite() {
            self.decay.record(false, adapt, self.cfg.target_acceptance);
            return;
        }
        let Ok(f2) = GpFactor::new(&self.data.grid, phi2, self.gp.family) else {
            self.decay.record(false, adapt, self.cfg.target_acceptance);
            return;
        };
        let s2 = self.gp.sigma2_eps;
        let mut d = lp2 - lp + u2 - u;
        for t in 0..self.data.terms.len() {
            self.s_quad[t] = f2.quad_form(&self.eps[t]);
            d += f2.log_density_from_quad(s2, self.s_quad[t]) - self.factor.log_density_from_quad(s2, self.quad[t]);
        }
        let ok = self.accept(d);
        if ok {
            self.gp.phi = phi2;
            self.factor = f2;
            std::mem::swap(&mut self.quad, &mut self.s_quad);
        }
        self.decay.record(ok, adapt, self.cfg.target_acceptance);
    }

    fn sweep(&mut self, adapt: bool) {
        for i in 0..self.coords.len() {
            if self.active[i] {
                self.plain_update(i, adapt);
            }
        }
        if self.cfg.compensated_moves && self.cfg.update_latent {
            for i in 0..self.coords.len() {
                if self.active[i] {
                    self.shifted_update(i, adapt);
                }
            }
        }
        if self.cfg.update_latent {
            for t in 0..self.data.terms.len() {
                self.slice_update(t);
            }
        }
        if self.cfg.update_hyper {
            self.variance_update(adapt);
            self.decay_update(adapt);
        }
    }

    fn draw_row(&self) -> Vec<f64> {
        let mut row: Vec<f64> = self.coords.iter().map(|c| c.get(&self.params)).collect();
        row.push(self.gp.sigma2_eps);
        row.push(self.gp.phi);
        row
    }

    fn acceptance(&self) -> Vec<(String, f64)> {
        let mut out: Vec<(String, f64)> = Vec::new();
        for (i, b) in self.plain.iter().enumerate() {
            if self.active[i] {
                out.push((b.name.clone(), b.rate()));
            }
        }
        if self.cfg.compensated_moves && self.cfg.update_latent {
            for (i, b) in self.shifted.iter().enumerate() {
                if self.active[i] {
                    out.push((b.name.clone(), b.rate()));
                }
            }
        }
        if self.cfg.update_hyper {
            out.push((self.rescale.name.clone(), self.rescale.rate()));
            out.push((self.decay.name.clone(), self.decay.rate()));
        }
        out
    }
}

/// `gamma[t] = max(floor, step(start_t))` from the cached growth products.
fn predict(data: &FitData, p: &KernelParams, prop: &Propagator, grown: &[Vec<f64>], out: &mut [Vec<f64>]) {
    for (t, term) in data.terms.iter().enumerate() {
        let g = term.gamma_dot;
        let q = survival_unchecked(p.q0, p.q1, g);
        let delta = recruitment_unchecked(p.delta0, p.delta1, g);
        let lin = p.beta[0]
            + p.beta[1..]
                .iter()
                .zip(term.covariates.values())
                .map(|(b, z)| b * z)
                .sum::<f64>();
        prop.combine(&grown[t], g, q, delta, lin.exp(), &mut out[t]);
        out[t].iter_mut().for_each(|v| *v = v.max(GAMMA_FLOOR));
    }
}

/// Runs one chain from `init` (or the default start).
pub fn run_chain(
    data: &FitData,
    spec: &ModelSpec,
    priors: &ResolvedPriors,
    cfg: &McmcConfig,
    chain: usize,
    init: Option<State>,
    cancel: Option<&AtomicBool>,
) -> Result<PosteriorChain> {
    cfg.validate()?;
    let init = match init {
        Some(s) => s,
        None => initial_state(data, spec, priors)?,
    };
    data.check_constraint(&init.params)?;
    let rng = stream(cfg.seed, Purpose::Chain, chain as u64);
    let mut s = Sampler::new(data, spec, priors, cfg, init, rng)?;
    let mut names: Vec<String> = s.coords.iter().map(|&c| spec.coordinate_name(c)).collect();
    names.push("sigma2_eps".into());
    names.push("phi".into());
    let mut out = PosteriorChain {
        chain,
        seed: cfg.seed,
        names,
        iterations: Vec::new(),
        draws: Vec::new(),
        params: Vec::new(),
        gp: Vec::new(),
        log_posterior: Vec::new(),
        latent: Vec::new(),
        acceptance: Vec::new(),
        iterations_run: 0,
        burn_in: cfg.burn_in,
        thin: cfg.thin,
        interrupted: false,
    };
    for it in 1..=cfg.iterations {
        if cancel.is_some_and(|c| c.load(Ordering::Relaxed)) {
            out.interrupted = true;
            break;
        }
        let adapt = it <= cfg.burn_in;
        s.sweep(adapt);
        out.iterations_run = it;
        if it > cfg.burn_in && (it - cfg.burn_in).is_multiple_of(cfg.thin) {
            debug_assert!(data.satisfies(&s.params));
            out.iterations.push(it);
            out.draws.push(s.draw_row());
            out.params.push(s.params.clone());
            out.gp.push(s.gp);
            out.log_posterior.push(s.log_posterior());
            if cfg.keep_latent {
                out.latent.push(s.eps.clone());
            }
        }
    }
    out.acceptance = s.acceptance();
    Ok(out)
}

/// Runs `cfg.chains` independent chains, each on its own random stream.
pub fn mcmc_fit(
    data: &FitData,
    spec: &ModelSpec,
    priors: &ResolvedPriors,
    cfg: &McmcConfig,
    cancel: Option<&AtomicBool>,
) -> Result<Vec<PosteriorChain>> {
    cfg.validate()?;
    if data.terms.is_empty() {
        return Err(IpmError::NoLiveTerms);
    }
    if cfg.chains == 1 {
        return Ok(vec![run_chain(data, spec, priors, cfg, 0, None, cancel)?]);
    }
    std::thread::scope(|scope| {
        let handles: Vec<_> = (0..cfg.chains)
            .map(|c| scope.spawn(move || run_chain(data, spec, priors, cfg, c, None, cancel)))
            .collect();
        handles
            .into_iter()
            .map(|h| h.join().expect("chain thread panicked"))
            .collect()
    })
}
