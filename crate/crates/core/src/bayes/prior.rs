use rand::Rng;
use rand_distr::{Distribution, Exp, Gamma, Normal, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::error::{IpmError, Result};

const LN_2PI: f64 = 1.837_877_066_409_345_5;

/// Priors on the positive half-line.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "family", rename_all = "snake_case")]
pub enum PositivePrior {
    HalfNormal { scale: f64 },
    Gamma { shape: f64, rate: f64 },
    InverseGamma { shape: f64, scale: f64 },
    Exponential { rate: f64 },
    Uniform { lower: f64, upper: f64 },
}

impl PositivePrior {
    pub fn validate(&self) -> Result<()> {
        let ok = match *self {
            PositivePrior::HalfNormal { scale } => scale > 0.0,
            PositivePrior::Gamma { shape, rate } => shape > 0.0 && rate > 0.0,
            PositivePrior::InverseGamma { shape, scale } => shape > 0.0 && scale > 0.0,
            PositivePrior::Exponential { rate } => rate > 0.0,
            PositivePrior::Uniform { lower, upper } => lower >= 0.0 && upper > lower,
        };
        if ok {
            Ok(())
        } else {
            Err(IpmError::InvalidParameter(format!("improper prior {self:?}")))
        }
    }

    /// Log density; `-inf` outside the support.
    pub fn log_density(&self, x: f64) -> f64 {
        if !(x > 0.0) || !x.is_finite() {
            return f64::NEG_INFINITY;
        }
        match *self {
            PositivePrior::HalfNormal { scale } => {
                std::f64::consts::LN_2 - 0.5 * LN_2PI - scale.ln() - 0.5 * (x / scale).powi(2)
            }
            PositivePrior::Gamma { shape, rate } => {
                shape * rate.ln() - libm::lgamma(shape) + (shape - 1.0) * x.ln() - rate * x
            }
            PositivePrior::InverseGamma { shape, scale } => {
                shape * scale.ln() - libm::lgamma(shape) - (shape + 1.0) * x.ln() - scale / x
            }
            PositivePrior::Exponential { rate } => rate.ln() - rate * x,
            PositivePrior::Uniform { lower, upper } => {
                if x > lower && x < upper {
                    -(upper - lower).ln()
                } else {
                    f64::NEG_INFINITY
                }
            }
        }
    }

    pub fn median(&self) -> f64 {
        match *self {
            // Quantile 0.5 of |N(0, s^2)| is s * Phi^{-1}(0.75).
            PositivePrior::HalfNormal { scale } => 0.674_489_750_196_081_7 * scale,
            PositivePrior::Exponential { rate } => std::f64::consts::LN_2 / rate,
            PositivePrior::Uniform { lower, upper } => 0.5 * (lower + upper),
            PositivePrior::Gamma { shape, rate } => gamma_median(shape) / rate,
            PositivePrior::InverseGamma { shape, scale } => scale / gamma_median(shape),
        }
    }

    pub fn sample<R: Rng + ?Sized>(&self, rng: &mut R) -> f64 {
        match *self {
            PositivePrior::HalfNormal { scale } => {
                let z: f64 = rng.sample(StandardNormal);
                scale * z.abs()
            }
            PositivePrior::Gamma { shape, rate } => {
                Gamma::new(shape, 1.0 / rate).expect("validated").sample(rng)
            }
            PositivePrior::InverseGamma { shape, scale } => {
                scale / Gamma::new(shape, 1.0).expect("validated").sample(rng)
            }
            PositivePrior::Exponential { rate } => Exp::new(rate).expect("validated").sample(rng),
            PositivePrior::Uniform { lower, upper } => rng.random_range(lower..upper),
        }
    }

    pub fn mean(&self) -> f64 {
        match *self {
            PositivePrior::HalfNormal { scale } => scale * (2.0 / std::f64::consts::PI).sqrt(),
            PositivePrior::Gamma { shape, rate } => shape / rate,
            PositivePrior::InverseGamma { shape, scale } => {
                if shape > 1.0 {
                    scale / (shape - 1.0)
                } else {
                    f64::INFINITY
                }
            }
            PositivePrior::Exponential { rate } => 1.0 / rate,
            PositivePrior::Uniform { lower, upper } => 0.5 * (lower + upper),
        }
    }
}

/// Median of a unit-rate gamma by bisection on the regularized incomplete gamma.
fn gamma_median(shape: f64) -> f64 {
    let (mut lo, mut hi) = (0.0, shape + 10.0 * shape.sqrt() + 10.0);
    for _ in 0..200 {
        let mid = 0.5 * (lo + hi);
        if lower_gamma_regularized(shape, mid) < 0.5 {
            lo = mid;
        } else {
            hi = mid;
        }
    }
    0.5 * (lo + hi)
}

/// `P(a, x)` by its power series, adequate for the moderate shapes used here.
fn lower_gamma_regularized(a: f64, x: f64) -> f64 {
    if x <= 0.0 {
        return 0.0;
    }
    let mut term = 1.0 / a;
    let mut sum = term;
    let mut n = 1.0;
    while term > sum * 1e-17 && n < 10_000.0 {
        term *= x / (a + n);
        sum += term;
        n += 1.0;
    }
    (sum.ln() + a * x.ln() - x - libm::lgamma(a)).exp().min(1.0)
}

/// Normal prior on a real-valued coefficient.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct NormalPrior {
    pub mean: f64,
    pub variance: f64,
}

impl NormalPrior {
    pub fn log_density(&self, x: f64) -> f64 {
        -0.5 * (LN_2PI + self.variance.ln() + (x - self.mean).powi(2) / self.variance)
    }

    pub fn sample<R: Rng + ?Sized>(&self, rng: &mut R) -> f64 {
        Normal::new(self.mean, self.variance.sqrt()).expect("positive variance").sample(rng)
    }
}

/// Rate of an exponential prior, either given or calibrated against the
/// identifiability constraint.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize, Default)]
#[serde(tag = "rule", content = "rate", rename_all = "snake_case")]
pub enum RateChoice {
    #[default]
    Auto,
    Fixed(f64),
}

/// Priors for every quantity the sampler may update.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct PriorSpec {
    pub beta: NormalPrior,
    pub mu: NormalPrior,
    pub sigma: PositivePrior,
    pub eta: PositivePrior,
    pub delta0: PositivePrior,
    pub q1_rate: RateChoice,
    pub delta1_rate: RateChoice,
    pub sigma2_eps: PositivePrior,
    /// Bounds of the uniform prior on the GP decay, as multiples of `1 / (U - L)`.
    pub phi_range: (f64, f64),
    /// Smallest half-width of the identifiability interval.
    pub min_half_width: f64,
}

impl Default for PriorSpec {
    fn default() -> Self {
        Self {
            beta: NormalPrior { mean: 0.0, variance: 100.0 },
            mu: NormalPrior { mean: 0.0, variance: 100.0 },
            sigma: PositivePrior::HalfNormal { scale: 1.0 },
            eta: PositivePrior::Gamma { shape: 2.0, rate: 10.0 },
            delta0: PositivePrior::HalfNormal { scale: 1.0 },
            q1_rate: RateChoice::Auto,
            delta1_rate: RateChoice::Auto,
            sigma2_eps: PositivePrior::InverseGamma { shape: 2.0, scale: 1.0 },
            phi_range: (3.0, 300.0),
            min_half_width: 0.05,
        }
    }
}

impl PriorSpec {
    pub fn validate(&self) -> Result<()> {
        for p in [self.sigma, self.eta, self.delta0, self.sigma2_eps] {
            p.validate()?;
        }
        if !(self.beta.variance > 0.0 && self.mu.variance > 0.0) {
            return Err(IpmError::InvalidParameter("normal prior variance must be positive".into()));
        }
        for r in [self.q1_rate, self.delta1_rate] {
            if let RateChoice::Fixed(v) = r {
                if !(v > 0.0 && v.is_finite()) {
                    return Err(IpmError::InvalidParameter(format!("exponential rate must be positive, got {v}")));
                }
            }
        }
        if !(self.phi_range.0 > 0.0 && self.phi_range.1 > self.phi_range.0) {
            return Err(IpmError::InvalidParameter("phi range must be increasing and positive".into()));
        }
        if !(self.min_half_width > 0.0) {
            return Err(IpmError::InvalidParameter("minimum half-width must be positive".into()));
        }
        Ok(())
    }

    /// Uniform prior on `phi` for a trait interval of length `span`.
    pub fn phi_prior(&self, span: f64) -> PositivePrior {
        PositivePrior::Uniform {
            lower: self.phi_range.0 / span,
            upper: self.phi_range.1 / span,
        }
    }
}
