//! The fixed repertoire of parameterized primitives and their stochastic
//! inverses.
//!
//! Parameter vectors are flat. Layouts, in order:
//!
//! | kind              | forward (θ)                              | inverse (φ)                      |
//! |-------------------|------------------------------------------|----------------------------------|
//! | gaussian-prior    | mean[n], pre_scale[n]                    | (none, domain is ⊤)              |
//! | affine-gaussian   | w1[h×m], b1[h], w2[n×h], b2[n], pre_scale[n] | v1[h×n], c1[h], vm[m×h], cm[m], vs[m×h], cs[m] |
//! | affine-cbernoulli | w1[h×m], b1[h], w2[n×h], b2[n]           | same as affine-gaussian          |
//!
//! `pre_scale` is dropped when the spec fixes the scale.

use serde::{Deserialize, Serialize};

use crate::category::TypeObject;
use crate::numerics::dist::{cb_log_density, gaussian_log_density};
use crate::numerics::real::inverse_softplus;
use crate::numerics::{DistParams, Real, Stream};

fn default_hidden() -> usize {
    32
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Activation {
    #[default]
    Tanh,
    Identity,
}

impl Activation {
    fn apply<R: Real>(self, x: R) -> R {
        match self {
            Activation::Tanh => x.tanh(),
            Activation::Identity => x,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "kebab-case")]
pub enum PrimitiveKind {
    /// `⊤ → ℝⁿ`: a Gaussian with learnable mean and scale.
    GaussianPrior {
        #[serde(default, skip_serializing_if = "Option::is_none")]
        scale: Option<f64>,
    },
    /// `ℝᵐ → ℝⁿ`: `y ~ Normal(W₂ act(W₁x + b₁) + b₂, softplus(s))`.
    AffineGaussian {
        #[serde(default = "default_hidden")]
        hidden: usize,
        #[serde(default)]
        activation: Activation,
        #[serde(default, skip_serializing_if = "Option::is_none")]
        scale: Option<f64>,
    },
    /// `ℝᵐ → ℝⁿ`: continuous Bernoulli with `λ = sigmoid(W₂ act(W₁x + b₁) + b₂)`.
    AffineCbernoulli {
        #[serde(default = "default_hidden")]
        hidden: usize,
        #[serde(default)]
        activation: Activation,
    },
}

/// Input/output sizes of a generator's values.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Dims {
    pub input: usize,
    pub output: usize,
}

/// A distribution produced by running a primitive, over plain or taped scalars.
#[derive(Debug, Clone)]
pub enum Emission<R> {
    Gaussian { mean: Vec<R>, scale: Vec<R> },
    ContinuousBernoulli { lambda: Vec<R> },
}

impl<R: Real> Emission<R> {
    pub fn log_density(&self, x: &[R]) -> R {
        match self {
            Emission::Gaussian { mean, scale } => gaussian_log_density(x, mean, scale),
            Emission::ContinuousBernoulli { lambda } => {
                let plain: Vec<f64> = x.iter().map(|v| v.value()).collect();
                cb_log_density(&plain, lambda)
            }
        }
    }

    /// Log-density of an observed constant vector.
    pub fn log_density_of_data(&self, x: &[f64]) -> R {
        match self {
            Emission::Gaussian { mean, scale } => {
                let lifted: Vec<R> = x.iter().map(|&v| mean[0].lift(v)).collect();
                gaussian_log_density(&lifted, mean, scale)
            }
            Emission::ContinuousBernoulli { lambda } => cb_log_density(x, lambda),
        }
    }

    pub fn to_params(&self) -> DistParams {
        match self {
            Emission::Gaussian { mean, scale } => DistParams::gaussian(
                mean.iter().map(|v| v.value()).collect(),
                scale.iter().map(|v| v.value()).collect(),
            ),
            Emission::ContinuousBernoulli { lambda } => {
                DistParams::continuous_bernoulli(lambda.iter().map(|v| v.value()).collect())
            }
        }
    }
}

fn dense<R: Real>(w: &[R], b: &[R], x: &[R], act: Option<Activation>) -> Vec<R> {
    let n_in = x.len();
    b.iter()
        .enumerate()
        .map(|(i, &bi)| {
            let y = R::dot(&w[i * n_in..(i + 1) * n_in], x) + bi;
            match act {
                Some(a) => a.apply(y),
                None => y,
            }
        })
        .collect()
}

fn take<'a, R>(params: &'a [R], at: &mut usize, len: usize) -> &'a [R] {
    let s = &params[*at..*at + len];
    *at += len;
    s
}

impl PrimitiveKind {
    pub fn name(&self) -> &'static str {
        match self {
            PrimitiveKind::GaussianPrior { .. } => "gaussian-prior",
            PrimitiveKind::AffineGaussian { .. } => "affine-gaussian",
            PrimitiveKind::AffineCbernoulli { .. } => "affine-cbernoulli",
        }
    }

    fn hidden(&self) -> usize {
        match self {
            PrimitiveKind::GaussianPrior { .. } => 0,
            PrimitiveKind::AffineGaussian { hidden, .. }
            | PrimitiveKind::AffineCbernoulli { hidden, .. } => *hidden,
        }
    }

    fn activation(&self) -> Activation {
        match self {
            PrimitiveKind::GaussianPrior { .. } => Activation::Identity,
            PrimitiveKind::AffineGaussian { activation, .. }
            | PrimitiveKind::AffineCbernoulli { activation, .. } => *activation,
        }
    }

    fn fixed_scale(&self) -> Option<f64> {
        match self {
            PrimitiveKind::GaussianPrior { scale }
            | PrimitiveKind::AffineGaussian { scale, .. } => *scale,
            PrimitiveKind::AffineCbernoulli { .. } => None,
        }
    }

    /// Checks that the primitive can implement a generator `dom → cod`.
    pub fn check_signature(
        &self,
        dom: &TypeObject,
        cod: &TypeObject,
        data_object: &TypeObject,
    ) -> Result<(), String> {
        if !matches!(cod, TypeObject::Space { .. }) {
            return Err(format!("codomain {cod} must be a space"));
        }
        if let Some(s) = self.fixed_scale() {
            if !(s.is_finite() && s > 0.0) {
                return Err(format!("fixed scale must be positive, got {s}"));
            }
        }
        match self {
            PrimitiveKind::GaussianPrior { .. } => {
                if !dom.is_unit() {
                    return Err(format!("gaussian-prior needs domain ⊤, got {dom}"));
                }
            }
            PrimitiveKind::AffineGaussian { hidden, .. }
            | PrimitiveKind::AffineCbernoulli { hidden, .. } => {
                if *hidden == 0 {
                    return Err("hidden width must be at least 1".into());
                }
                match dom.dim() {
                    Some(d) if d > 0 => {}
                    _ => {
                        return Err(format!(
                            "{} needs a real-vector domain, got {dom}",
                            self.name()
                        ))
                    }
                }
                if matches!(self, PrimitiveKind::AffineCbernoulli { .. }) && cod != data_object {
                    return Err("affine-cbernoulli may only emit the data object".into());
                }
            }
        }
        Ok(())
    }

    pub fn forward_len(&self, dims: Dims) -> usize {
        let (m, n, h) = (dims.input, dims.output, self.hidden());
        let scale = if self.fixed_scale().is_some() { 0 } else { n };
        match self {
            PrimitiveKind::GaussianPrior { .. } => n + scale,
            PrimitiveKind::AffineGaussian { .. } => h * m + h + n * h + n + scale,
            PrimitiveKind::AffineCbernoulli { .. } => h * m + h + n * h + n,
        }
    }

    pub fn inverse_len(&self, dims: Dims) -> usize {
        let (m, n, h) = (dims.input, dims.output, self.hidden());
        if m == 0 {
            0
        } else {
            h * n + h + 2 * (m * h + m)
        }
    }

    fn init_block(layout: &[(usize, usize, Init)], rng: &mut Stream) -> Vec<f64> {
        let mut out = Vec::new();
        for &(len, fan_in, init) in layout {
            match init {
                Init::Weight => {
                    let sd = 1.0 / (fan_in as f64).sqrt();
                    out.extend((0..len).map(|_| sd * rng.standard_normal()));
                }
                Init::Zero => out.extend(std::iter::repeat_n(0.0, len)),
                Init::UnitScale => out.extend(std::iter::repeat_n(inverse_softplus(1.0), len)),
            }
        }
        out
    }

    pub fn init_forward(&self, dims: Dims, rng: &mut Stream) -> Vec<f64> {
        let (m, n, h) = (dims.input, dims.output, self.hidden());
        let scale = if self.fixed_scale().is_some() { 0 } else { n };
        let layout: Vec<(usize, usize, Init)> = match self {
            PrimitiveKind::GaussianPrior { .. } => {
                vec![(n, 1, Init::Zero), (scale, 1, Init::UnitScale)]
            }
            PrimitiveKind::AffineGaussian { .. } => vec![
                (h * m, m, Init::Weight),
                (h, 1, Init::Zero),
                (n * h, h, Init::Weight),
                (n, 1, Init::Zero),
                (scale, 1, Init::UnitScale),
            ],
            PrimitiveKind::AffineCbernoulli { .. } => vec![
                (h * m, m, Init::Weight),
                (h, 1, Init::Zero),
                (n * h, h, Init::Weight),
                (n, 1, Init::Zero),
            ],
        };
        Self::init_block(&layout, rng)
    }

    pub fn init_inverse(&self, dims: Dims, rng: &mut Stream) -> Vec<f64> {
        let (m, n, h) = (dims.input, dims.output, self.hidden());
        if m == 0 {
            return Vec::new();
        }
        Self::init_block(
            &[
                (h * n, n, Init::Weight),
                (h, 1, Init::Zero),
                (m * h, h, Init::Weight),
                (m, 1, Init::Zero),
                (m * h, h, Init::Weight),
                (m, 1, Init::UnitScale),
            ],
            rng,
        )
    }

    /// Output distribution given the input value (empty for `⊤`).
    pub fn forward<R: Real>(&self, dims: Dims, params: &[R], input: &[R]) -> Emission<R> {
        debug_assert_eq!(params.len(), self.forward_len(dims));
        let (n, h) = (dims.output, self.hidden());
        let mut at = 0;
        let anchor = params[0];
        let scale_of = |at: &mut usize| -> Vec<R> {
            match self.fixed_scale() {
                Some(s) => vec![anchor.lift(s); n],
                None => take(params, at, n).iter().map(|v| v.softplus()).collect(),
            }
        };
        match self {
            PrimitiveKind::GaussianPrior { .. } => {
                let mean = take(params, &mut at, n).to_vec();
                let scale = scale_of(&mut at);
                Emission::Gaussian { mean, scale }
            }
            PrimitiveKind::AffineGaussian { activation, .. }
            | PrimitiveKind::AffineCbernoulli { activation, .. } => {
                let m = input.len();
                let w1 = take(params, &mut at, h * m);
                let b1 = take(params, &mut at, h);
                let w2 = take(params, &mut at, n * h);
                let b2 = take(params, &mut at, n);
                let hidden = dense(w1, b1, input, Some(*activation));
                let out = dense(w2, b2, &hidden, None);
                if matches!(self, PrimitiveKind::AffineCbernoulli { .. }) {
                    Emission::ContinuousBernoulli {
                        lambda: out.into_iter().map(|v| v.sigmoid()).collect(),
                    }
                } else {
                    let scale = scale_of(&mut at);
                    Emission::Gaussian { mean: out, scale }
                }
            }
        }
    }

    /// Gaussian proposal over the input value given the output value.
    /// Only defined when the domain carries a vector (`dims.input > 0`).
    pub fn inverse<R: Real>(&self, dims: Dims, params: &[R], output: &[R]) -> (Vec<R>, Vec<R>) {
        debug_assert_eq!(params.len(), self.inverse_len(dims));
        let (m, n, h) = (dims.input, dims.output, self.hidden());
        let mut at = 0;
        let v1 = take(params, &mut at, h * n);
        let c1 = take(params, &mut at, h);
        let vm = take(params, &mut at, m * h);
        let cm = take(params, &mut at, m);
        let vs = take(params, &mut at, m * h);
        let cs = take(params, &mut at, m);
        let hidden = dense(v1, c1, output, Some(self.activation()));
        let mean = dense(vm, cm, &hidden, None);
        let scale = dense(vs, cs, &hidden, None)
            .into_iter()
            .map(|v| v.softplus())
            .collect();
        (mean, scale)
    }
}

#[derive(Clone, Copy)]
enum Init {
    Weight,
    Zero,
    UnitScale,
}
