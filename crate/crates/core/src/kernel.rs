//! Vital-rate components of the redistribution kernel.
//!
//! The kernel is `K(y, x) = (q(g) phi(y - x; mu, sigma) + Delta(g) eta e^{-eta (y - L)}) e^{z'beta}`
//! where `g` is the current population size. Survival `q` is logistic in `g`,
//! recruitment influx `Delta` is log-linear in `g`, and the climate term scales
//! the whole kernel multiplicatively.

use std::f64::consts::PI;

use serde::{Deserialize, Serialize};

use crate::error::{IpmError, Result};

/// Demographic parameters of the kernel.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct KernelParams {
    /// Survival odds at zero density.
    pub q0: f64,
    /// Survival density-dependence rate.
    pub q1: f64,
    /// Mean growth increment.
    pub mu: f64,
    /// Standard deviation of the growth increment.
    pub sigma: f64,
    /// Log recruitment at zero density.
    pub delta0: f64,
    /// Recruitment density-dependence rate.
    pub delta1: f64,
    /// Rate of the recruit-size exponential.
    pub eta: f64,
    /// Climate regression coefficients, intercept first.
    pub beta: Vec<f64>,
}

impl KernelParams {
    /// Simulation truths: `Q1 = 0.01`, `sigma = 0.25`, `delta0 = 0.30`,
    /// `eta = 0.10`, `beta = 0.01` on a single covariate with the intercept
    /// pinned at zero, and `Q0 = 1`, `delta1 = 0`, `mu = 0`.
    pub fn simulation_truth() -> Self {
        Self {
            q0: 1.0,
            q1: 0.01,
            mu: 0.0,
            sigma: 0.25,
            delta0: 0.30,
            delta1: 0.0,
            eta: 0.10,
            beta: vec![0.0, 0.01],
        }
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |what: &str, v: f64| {
            Err(IpmError::InvalidParameter(format!("{what} = {v} is out of range")))
        };
        if !(self.q0 > 0.0 && self.q0.is_finite()) {
            return bad("Q0", self.q0);
        }
        if !(self.q1 >= 0.0 && self.q1.is_finite()) {
            return bad("Q1", self.q1);
        }
        if !self.mu.is_finite() {
            return bad("mu", self.mu);
        }
        if !(self.sigma > 0.0 && self.sigma.is_finite()) {
            return bad("sigma", self.sigma);
        }
        if !(self.delta0 >= 0.0 && self.delta0.is_finite()) {
            return bad("delta0", self.delta0);
        }
        if !(self.delta1 >= 0.0 && self.delta1.is_finite()) {
            return bad("delta1", self.delta1);
        }
        if !(self.eta > 0.0 && self.eta.is_finite()) {
            return bad("eta", self.eta);
        }
        if self.beta.is_empty() || self.beta.iter().any(|b| !b.is_finite()) {
            return Err(IpmError::InvalidParameter(
                "beta must hold a finite intercept and coefficients".into(),
            ));
        }
        Ok(())
    }

    /// Checks that `beta` has one entry per covariate plus the intercept.
    pub fn check_covariates(&self, z: &Covariates) -> Result<()> {
        if self.beta.len() != z.len() + 1 {
            return Err(IpmError::LengthMismatch {
                expected: z.len() + 1,
                found: self.beta.len(),
            });
        }
        Ok(())
    }
}

/// Winter temperature (deg C) and annual precipitation (mm) for one plot-year.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ClimateRecord {
    pub winter_temp: f64,
    pub annual_precip: f64,
}

impl ClimateRecord {
    pub fn new(winter_temp: f64, annual_precip: f64) -> Result<Self> {
        let rec = Self {
            winter_temp,
            annual_precip,
        };
        rec.validate()?;
        Ok(rec)
    }

    pub fn validate(&self) -> Result<()> {
        if !self.winter_temp.is_finite() || !self.annual_precip.is_finite() {
            return Err(IpmError::InvalidParameter("climate values must be finite".into()));
        }
        if self.annual_precip < 0.0 {
            return Err(IpmError::InvalidParameter(format!(
                "precipitation must be nonnegative, got {}",
                self.annual_precip
            )));
        }
        Ok(())
    }
}

/// Covariate vector entering `e^{z'beta}`, without the intercept.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize, Default)]
pub struct Covariates(pub Vec<f64>);

impl Covariates {
    pub fn none() -> Self {
        Covariates(Vec::new())
    }

    pub fn scalar(z: f64) -> Self {
        Covariates(vec![z])
    }

    pub fn len(&self) -> usize {
        self.0.len()
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }

    pub fn values(&self) -> &[f64] {
        &self.0
    }
}

impl From<ClimateRecord> for Covariates {
    fn from(c: ClimateRecord) -> Self {
        Covariates(vec![c.winter_temp, c.annual_precip])
    }
}

/// Which climate variables enter the regression.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum CovariateSet {
    /// Temperature and precipitation.
    #[default]
    Both,
    TempOnly,
    PrecipOnly,
    /// No climate covariates; only the intercept.
    Intercept,
}

impl CovariateSet {
    pub fn count(self) -> usize {
        match self {
            CovariateSet::Both => 2,
            CovariateSet::Intercept => 0,
            _ => 1,
        }
    }

    fn pick(self, c: &ClimateRecord) -> Vec<f64> {
        match self {
            CovariateSet::Both => vec![c.winter_temp, c.annual_precip],
            CovariateSet::TempOnly => vec![c.winter_temp],
            CovariateSet::PrecipOnly => vec![c.annual_precip],
            CovariateSet::Intercept => Vec::new(),
        }
    }

    /// Column names used in output tables.
    pub fn names(self) -> &'static [&'static str] {
        match self {
            CovariateSet::Both => &["temp", "precip"],
            CovariateSet::TempOnly => &["temp"],
            CovariateSet::PrecipOnly => &["precip"],
            CovariateSet::Intercept => &[],
        }
    }
}

/// Maps climate records to covariates, optionally standardized by training
/// means and standard deviations.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CovariateMap {
    pub set: CovariateSet,
    /// Per-covariate `(mean, sd)`; `None` keeps raw units.
    pub standardize: Option<Vec<(f64, f64)>>,
}

impl CovariateMap {
    pub fn raw(set: CovariateSet) -> Self {
        Self {
            set,
            standardize: None,
        }
    }

    /// Standardization fitted on `records`. Constant columns keep unit scale.
    pub fn standardized(set: CovariateSet, records: &[ClimateRecord]) -> Self {
        let cols: Vec<Vec<f64>> = (0..set.count())
            .map(|k| records.iter().map(|r| set.pick(r)[k]).collect())
            .collect();
        let moments = cols
            .iter()
            .map(|c| {
                let m = crate::stats::mean(c);
                let sd = if c.len() > 1 {
                    crate::stats::variance(c).sqrt()
                } else {
                    0.0
                };
                (m, if sd > 0.0 { sd } else { 1.0 })
            })
            .collect();
        Self {
            set,
            standardize: Some(moments),
        }
    }

    pub fn apply(&self, c: &ClimateRecord) -> Covariates {
        let raw = self.set.pick(c);
        match &self.standardize {
            None => Covariates(raw),
            Some(m) => Covariates(
                raw.iter()
                    .zip(m)
                    .map(|(v, (mean, sd))| (v - mean) / sd)
                    .collect(),
            ),
        }
    }
}

fn check_population(gamma_dot: f64) -> Result<()> {
    if gamma_dot < 0.0 || gamma_dot.is_nan() {
        Err(IpmError::NegativePopulation(gamma_dot))
    } else {
        Ok(())
    }
}

/// Survival probability `Q0 e^{-Q1 g} / (1 + Q0 e^{-Q1 g})`.
pub fn survival_prob(params: &KernelParams, gamma_dot: f64) -> Result<f64> {
    check_population(gamma_dot)?;
    Ok(survival_unchecked(params.q0, params.q1, gamma_dot))
}

#[inline]
pub(crate) fn survival_unchecked(q0: f64, q1: f64, gamma_dot: f64) -> f64 {
    // 1 / (1 + e^{Q1 g} / Q0) stays finite for large densities.
    1.0 / (1.0 + (q1 * gamma_dot - q0.ln()).exp())
}

/// Derivative of [`survival_prob`] with respect to population size.
pub fn survival_prob_derivative(params: &KernelParams, gamma_dot: f64) -> Result<f64> {
    let q = survival_prob(params, gamma_dot)?;
    Ok(-params.q1 * q * (1.0 - q))
}

/// Expected recruitment influx `exp(delta0 - delta1 g)`.
pub fn recruitment_rate(params: &KernelParams, gamma_dot: f64) -> Result<f64> {
    check_population(gamma_dot)?;
    Ok(recruitment_unchecked(params.delta0, params.delta1, gamma_dot))
}

#[inline]
pub(crate) fn recruitment_unchecked(delta0: f64, delta1: f64, gamma_dot: f64) -> f64 {
    (delta0 - delta1 * gamma_dot).exp()
}

pub fn recruitment_rate_derivative(params: &KernelParams, gamma_dot: f64) -> Result<f64> {
    Ok(-params.delta1 * recruitment_rate(params, gamma_dot)?)
}

/// Gaussian density of the growth increment `y - x`.
pub fn growth_density(increment: f64, params: &KernelParams) -> f64 {
    normal_pdf(increment, params.mu, params.sigma)
}

#[inline]
pub(crate) fn normal_pdf(x: f64, mean: f64, sd: f64) -> f64 {
    let z = (x - mean) / sd;
    (-0.5 * z * z).exp() / (sd * (2.0 * PI).sqrt())
}

/// Exponential recruit-size density translated to start at `lower`.
pub fn recruit_density(y: f64, params: &KernelParams, lower: f64) -> Result<f64> {
    if y < lower {
        return Err(IpmError::BelowThreshold { value: y, lower });
    }
    Ok(params.eta * (-params.eta * (y - lower)).exp())
}

/// Multiplicative climate factor `e^{beta_0 + z'beta}`.
pub fn climate_factor(params: &KernelParams, z: &Covariates) -> Result<f64> {
    params.check_covariates(z)?;
    let lin = params.beta[0]
        + params.beta[1..]
            .iter()
            .zip(z.values())
            .map(|(b, v)| b * v)
            .sum::<f64>();
    Ok(lin.exp())
}

/// Kernel value `K(y, x; z, theta, g)` for sizes `x -> y`, with `lower` the
/// recruitment threshold `L`.
pub fn kernel_eval(
    y: f64,
    x: f64,
    z: &Covariates,
    params: &KernelParams,
    gamma_dot: f64,
    lower: f64,
) -> Result<f64> {
    let q = survival_prob(params, gamma_dot)?;
    let delta = recruitment_rate(params, gamma_dot)?;
    let growth = growth_density(y - x, params);
    let recruit = recruit_density(y, params, lower)?;
    Ok((q * growth + delta * recruit) * climate_factor(params, z)?)
}

/// Closed-form population-size update `(q(g) + Delta(g)) e^{z'beta} g`.
pub fn population_update(gamma_dot: f64, z: &Covariates, params: &KernelParams) -> Result<f64> {
    let q = survival_prob(params, gamma_dot)?;
    let delta = recruitment_rate(params, gamma_dot)?;
    Ok((q + delta) * climate_factor(params, z)? * gamma_dot)
}
