//! Densities used by the generative model and its proposals.
//!
//! The free functions are generic over [`Real`] so the same code scores
//! samples and builds gradients. [`DistParams`] is the plain-valued front end.

use super::real::Real;
use super::rng::Stream;
use super::NumericsError;

pub const MIN_SCALE: f64 = 1e-6;
pub const CB_EPS: f64 = 1e-6;
const HALF_LN_2PI: f64 = 0.918_938_533_204_672_8;
// below this distance from 1/2 the log-normaliser switches to its Taylor series
const CB_TAYLOR_RADIUS: f64 = 1e-3;

/// Diagonal Gaussian log-density summed over coordinates.
pub fn gaussian_log_density<R: Real>(x: &[R], mean: &[R], scale: &[R]) -> R {
    debug_assert!(x.len() == mean.len() && x.len() == scale.len() && !x.is_empty());
    let terms: Vec<R> = x
        .iter()
        .zip(mean)
        .zip(scale)
        .map(|((&x, &m), &s)| {
            let z = (x - m) / s;
            -(z * z) * 0.5 - s.ln() - HALF_LN_2PI
        })
        .collect();
    R::sum(&terms)
}

/// Log-normal log-density of a positive scalar.
pub fn lognormal_log_density<R: Real>(x: R, log_mean: R, log_scale: R) -> R {
    let lx = x.ln();
    let z = (lx - log_mean) / log_scale;
    -(z * z) * 0.5 - log_scale.ln() - HALF_LN_2PI - lx
}

/// Gamma(shape, rate) log-density of a positive scalar.
pub fn gamma_log_density<R: Real>(x: R, shape: f64, rate: f64) -> R {
    let norm = shape * rate.ln() - libm::lgamma(shape);
    let body = -(x * rate);
    if shape == 1.0 {
        body + norm
    } else {
        body + x.ln() * (shape - 1.0) + norm
    }
}

/// `ln C(λ)` for the continuous-Bernoulli normaliser
/// `C(λ) = ln((1-λ)/λ) / (1-2λ)`, with `C(1/2) = 2`.
pub fn cb_log_normalizer<R: Real>(lambda: R) -> R {
    let t = -(lambda * 2.0) + 1.0;
    if (lambda.value() - 0.5).abs() < CB_TAYLOR_RADIUS {
        let t2 = t * t;
        t2 * (1.0 / 3.0) + t2 * t2 * (13.0 / 90.0) + std::f64::consts::LN_2
    } else {
        let one_minus = -lambda + 1.0;
        ((one_minus / lambda).ln() / t).ln()
    }
}

/// Continuous-Bernoulli log-density; `lambda` and `x` are clamped into
/// `[CB_EPS, 1 - CB_EPS]`.
pub fn cb_log_density<R: Real>(x: &[f64], lambda: &[R]) -> R {
    debug_assert!(x.len() == lambda.len() && !x.is_empty());
    let terms: Vec<R> = x
        .iter()
        .zip(lambda)
        .map(|(&x, &l)| {
            let x = x.clamp(CB_EPS, 1.0 - CB_EPS);
            let l = l.clamp(CB_EPS, 1.0 - CB_EPS);
            cb_log_normalizer(l) + l.ln() * x + (-l + 1.0).ln() * (1.0 - x)
        })
        .collect();
    R::sum(&terms)
}

/// Inverse-CDF draw from a continuous Bernoulli.
pub fn cb_inverse_cdf(lambda: f64, u: f64) -> f64 {
    let l = lambda.clamp(CB_EPS, 1.0 - CB_EPS);
    let x = if (l - 0.5).abs() < CB_TAYLOR_RADIUS {
        u
    } else {
        (u * (2.0 * l - 1.0) / (1.0 - l)).ln_1p() / (l / (1.0 - l)).ln()
    };
    x.clamp(CB_EPS, 1.0 - CB_EPS)
}

#[derive(Debug, Clone, PartialEq)]
pub enum DistParams {
    Gamma {
        shape: Vec<f64>,
        rate: Vec<f64>,
    },
    Gaussian {
        mean: Vec<f64>,
        scale: Vec<f64>,
    },
    LogNormal {
        log_mean: Vec<f64>,
        log_scale: Vec<f64>,
    },
    ContinuousBernoulli {
        lambda: Vec<f64>,
    },
}

fn positive(kind: &'static str, what: &str, xs: &[f64]) -> Result<(), NumericsError> {
    match xs.iter().find(|v| !(v.is_finite() && **v > 0.0)) {
        Some(v) => Err(NumericsError::InvalidParams {
            kind,
            reason: format!("{what} must be positive and finite, got {v}"),
        }),
        None => Ok(()),
    }
}

fn same_len(kind: &'static str, a: usize, b: usize) -> Result<(), NumericsError> {
    if a == b && a > 0 {
        Ok(())
    } else {
        Err(NumericsError::InvalidParams {
            kind,
            reason: format!("parameter lengths {a} and {b} must agree and be non-zero"),
        })
    }
}

impl DistParams {
    pub fn gamma(shape: Vec<f64>, rate: Vec<f64>) -> Self {
        DistParams::Gamma { shape, rate }
    }

    /// Diagonal Gaussian; scales are floored at [`MIN_SCALE`].
    pub fn gaussian(mean: Vec<f64>, scale: Vec<f64>) -> Self {
        let scale = scale
            .into_iter()
            .map(|s| if s >= 0.0 { s.max(MIN_SCALE) } else { s })
            .collect();
        DistParams::Gaussian { mean, scale }
    }

    pub fn lognormal(log_mean: Vec<f64>, log_scale: Vec<f64>) -> Self {
        DistParams::LogNormal {
            log_mean,
            log_scale,
        }
    }

    pub fn continuous_bernoulli(lambda: Vec<f64>) -> Self {
        let lambda = lambda
            .into_iter()
            .map(|l| {
                if l.is_finite() {
                    l.clamp(CB_EPS, 1.0 - CB_EPS)
                } else {
                    l
                }
            })
            .collect();
        DistParams::ContinuousBernoulli { lambda }
    }

    pub fn kind(&self) -> &'static str {
        match self {
            DistParams::Gamma { .. } => "gamma",
            DistParams::Gaussian { .. } => "gaussian-diagonal",
            DistParams::LogNormal { .. } => "lognormal",
            DistParams::ContinuousBernoulli { .. } => "continuous-bernoulli",
        }
    }

    pub fn dim(&self) -> usize {
        match self {
            DistParams::Gamma { shape, .. } => shape.len(),
            DistParams::Gaussian { mean, .. } => mean.len(),
            DistParams::LogNormal { log_mean, .. } => log_mean.len(),
            DistParams::ContinuousBernoulli { lambda } => lambda.len(),
        }
    }

    pub fn validate(&self) -> Result<(), NumericsError> {
        let kind = self.kind();
        match self {
            DistParams::Gamma { shape, rate } => {
                same_len(kind, shape.len(), rate.len())?;
                positive(kind, "shape", shape)?;
                positive(kind, "rate", rate)
            }
            DistParams::Gaussian { mean, scale } => {
                same_len(kind, mean.len(), scale.len())?;
                positive(kind, "scale", scale)?;
                if mean.iter().all(|m| m.is_finite()) {
                    Ok(())
                } else {
                    Err(NumericsError::InvalidParams {
                        kind,
                        reason: "mean must be finite".into(),
                    })
                }
            }
            DistParams::LogNormal {
                log_mean,
                log_scale,
            } => {
                same_len(kind, log_mean.len(), log_scale.len())?;
                positive(kind, "log-scale", log_scale)
            }
            DistParams::ContinuousBernoulli { lambda } => {
                same_len(kind, lambda.len(), lambda.len())?;
                positive(kind, "lambda", lambda)
            }
        }
    }

    pub fn log_density(&self, x: &[f64]) -> Result<f64, NumericsError> {
        self.validate()?;
        if x.len() != self.dim() {
            return Err(NumericsError::InvalidParams {
                kind: self.kind(),
                reason: format!("point has {} coordinates, expected {}", x.len(), self.dim()),
            });
        }
        let kind = self.kind();
        let support = |v: f64| NumericsError::Support { kind, value: v };
        match self {
            DistParams::Gamma { shape, rate } => {
                let mut total = 0.0;
                for ((&v, &k), &r) in x.iter().zip(shape).zip(rate) {
                    if !(v > 0.0) {
                        return Err(support(v));
                    }
                    total += gamma_log_density(v, k, r);
                }
                Ok(total)
            }
            DistParams::Gaussian { mean, scale } => Ok(gaussian_log_density(x, mean, scale)),
            DistParams::LogNormal {
                log_mean,
                log_scale,
            } => {
                let mut total = 0.0;
                for ((&v, &m), &s) in x.iter().zip(log_mean).zip(log_scale) {
                    if !(v > 0.0) {
                        return Err(support(v));
                    }
                    total += lognormal_log_density(v, m, s);
                }
                Ok(total)
            }
            DistParams::ContinuousBernoulli { lambda } => {
                if let Some(&v) = x.iter().find(|v| !(0.0..=1.0).contains(*v)) {
                    return Err(support(v));
                }
                Ok(cb_log_density(x, lambda))
            }
        }
    }

    /// Draws a point and returns it with its log-density. Gaussian and
    /// log-normal draws are `location + scale * noise`.
    pub fn sample(&self, rng: &mut Stream) -> Result<(Vec<f64>, f64), NumericsError> {
        self.validate()?;
        let x: Vec<f64> = match self {
            DistParams::Gamma { shape, rate } => shape
                .iter()
                .zip(rate)
                .map(|(&k, &r)| {
                    let g = rand_distr::Gamma::new(k, 1.0 / r).map_err(|e| {
                        NumericsError::InvalidParams {
                            kind: "gamma",
                            reason: e.to_string(),
                        }
                    })?;
                    Ok(rand_distr::Distribution::sample(&g, rng).max(f64::MIN_POSITIVE))
                })
                .collect::<Result<_, NumericsError>>()?,
            DistParams::Gaussian { mean, scale } => mean
                .iter()
                .zip(scale)
                .map(|(&m, &s)| m + s * rng.standard_normal())
                .collect(),
            DistParams::LogNormal {
                log_mean,
                log_scale,
            } => log_mean
                .iter()
                .zip(log_scale)
                .map(|(&m, &s)| (m + s * rng.standard_normal()).exp())
                .collect(),
            DistParams::ContinuousBernoulli { lambda } => lambda
                .iter()
                .map(|&l| cb_inverse_cdf(l, rng.uniform_open()))
                .collect(),
        };
        let logq = self.log_density(&x)?;
        Ok((x, logq))
    }
}
