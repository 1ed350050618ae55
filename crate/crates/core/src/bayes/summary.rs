use serde::{Deserialize, Serialize};

use crate::error::{IpmError, Result};
use crate::propagation::pseudo_ipm_step;
use crate::stats::{mean, quantile_sorted};

use super::mcmc::PosteriorChain;
use super::model::{FitData, ModelSpec};
use super::posterior::floored;

pub const MIN_SAMPLES: usize = 100;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ParamSummary {
    pub name: String,
    pub mean: f64,
    pub median: f64,
    pub lower: f64,
    pub upper: f64,
    pub samples: usize,
}

impl ParamSummary {
    pub fn width(&self) -> f64 {
        self.upper - self.lower
    }

    pub fn covers(&self, truth: f64) -> bool {
        self.lower <= truth && truth <= self.upper
    }
}

/// Mean, median and equal-tail 95% interval of one set of draws.
pub fn summarize_values(name: &str, draws: &[f64]) -> Result<ParamSummary> {
    if draws.len() < MIN_SAMPLES {
        return Err(IpmError::InsufficientSamples {
            found: draws.len(),
            required: MIN_SAMPLES,
        });
    }
    let mut sorted = draws.to_vec();
    sorted.sort_by(f64::total_cmp);
    Ok(ParamSummary {
        name: name.to_string(),
        mean: mean(draws),
        median: quantile_sorted(&sorted, 0.5),
        lower: quantile_sorted(&sorted, 0.025),
        upper: quantile_sorted(&sorted, 0.975),
        samples: draws.len(),
    })
}

/// Parameter table from one or more chains, draws pooled across chains.
pub fn summarize(chains: &[PosteriorChain]) -> Result<Vec<ParamSummary>> {
    let first = chains.first().ok_or(IpmError::InsufficientSamples { found: 0, required: MIN_SAMPLES })?;
    if chains.iter().any(|c| c.names != first.names) {
        return Err(IpmError::InvalidParameter("chains carry different parameter sets".into()));
    }
    first
        .names
        .iter()
        .enumerate()
        .map(|(k, name)| {
            let pooled: Vec<f64> = chains.iter().flat_map(|c| c.draws.iter().map(move |r| r[k])).collect();
            summarize_values(name, &pooled)
        })
        .collect()
}

/// Pointwise quantile band over a set of curves on the same grid.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Band {
    pub lower: Vec<f64>,
    pub median: Vec<f64>,
    pub upper: Vec<f64>,
}

impl Band {
    pub fn widths(&self) -> Vec<f64> {
        self.upper.iter().zip(&self.lower).map(|(u, l)| u - l).collect()
    }

    pub fn median_width(&self) -> f64 {
        let mut w = self.widths();
        w.sort_by(f64::total_cmp);
        quantile_sorted(&w, 0.5)
    }

    /// Fraction of cells with `truth` inside the band.
    pub fn containment(&self, truth: &[f64]) -> f64 {
        let hits = truth
            .iter()
            .enumerate()
            .filter(|&(j, &v)| self.lower[j] <= v && v <= self.upper[j])
            .count();
        hits as f64 / truth.len() as f64
    }
}

/// Equal-tail band at coverage `level` from curves of common length.
pub fn pointwise_band(curves: &[Vec<f64>], level: f64) -> Result<Band> {
    let first = curves.first().ok_or(IpmError::EmptyInput)?;
    if !(level > 0.0 && level < 1.0) {
        return Err(IpmError::InvalidParameter(format!("band level must lie in (0, 1), got {level}")));
    }
    let n = first.len();
    if let Some(c) = curves.iter().find(|c| c.len() != n) {
        return Err(IpmError::LengthMismatch { expected: n, found: c.len() });
    }
    let tail = 0.5 * (1.0 - level);
    let mut band = Band {
        lower: Vec::with_capacity(n),
        median: Vec::with_capacity(n),
        upper: Vec::with_capacity(n),
    };
    let mut column = vec![0.0; curves.len()];
    for j in 0..n {
        for (slot, c) in column.iter_mut().zip(curves) {
            *slot = c[j];
        }
        column.sort_by(f64::total_cmp);
        band.lower.push(quantile_sorted(&column, tail));
        band.median.push(quantile_sorted(&column, 0.5));
        band.upper.push(quantile_sorted(&column, 1.0 - tail));
    }
    Ok(band)
}

/// Posterior draws of one term's operating intensity. Without stored latent
/// fields the kernel prediction alone is used.
pub fn term_intensity_draws(data: &FitData, spec: &ModelSpec, chain: &PosteriorChain, term: usize) -> Result<Vec<Vec<f64>>> {
    let t = data.terms.get(term).ok_or(IpmError::LengthMismatch {
        expected: data.terms.len(),
        found: term + 1,
    })?;
    chain
        .params
        .iter()
        .enumerate()
        .map(|(k, p)| {
            let pred = floored(pseudo_ipm_step(&t.start, &t.covariates, p, spec.placement)?)?;
            let mut v = pred.into_values();
            if let Some(eps) = chain.latent.get(k) {
                v.iter_mut().zip(&eps[term]).for_each(|(g, e)| *g *= e.exp());
            }
            Ok(v)
        })
        .collect()
}

/// Observed against predicted per-plot abundance for one `(year, bin)` term.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AbundanceRow {
    pub year: i32,
    pub bin: usize,
    pub observed: f64,
    pub mean: f64,
    pub lower: f64,
    pub upper: f64,
}

/// One row per likelihood term: the observed mean count per plot at the end
/// year against the posterior of the predicted abundance.
pub fn abundance_table(data: &FitData, spec: &ModelSpec, chains: &[PosteriorChain]) -> Result<Vec<AbundanceRow>> {
    let d = data.grid.width();
    let mut rows = Vec::with_capacity(data.terms.len());
    for (k, term) in data.terms.iter().enumerate() {
        let mut totals = Vec::new();
        for chain in chains {
            for v in term_intensity_draws(data, spec, chain, k)? {
                totals.push(v.iter().sum::<f64>() * d);
            }
        }
        let s = summarize_values("abundance", &totals)?;
        rows.push(AbundanceRow {
            year: data.years[term.t + 1],
            bin: term.bin,
            observed: term.counts.total() as f64 / term.multiplicity as f64,
            mean: s.mean,
            lower: s.lower,
            upper: s.upper,
        });
    }
    Ok(rows)
}
