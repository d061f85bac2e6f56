//! Amortised variational inference over structure, hyper-parameters and
//! latents.
//!
//! One proposal draws `(β, W)` from log-normal heads on a data summary,
//! walks a morphism under the resulting transition matrix, and runs the
//! morphism's inverse plan on the data to propose every latent. All
//! continuous draws are reparameterised, so a proposal is fully described by
//! its discrete structure plus frozen standard-normal noise, and can be
//! re-evaluated with any scalar type.

mod train;

pub use train::{
    evaluate_elbo, structure_posterior, train, EpochMetrics, TrainConfig, TrainOutcome,
};

use thiserror::Error;

use crate::category::{Morphism, TypeObject};
use crate::model::{Layout, Model, ModelError, ParamStore, Program};
use crate::numerics::dist::{gamma_log_density, lognormal_log_density};
use crate::numerics::{Matrix, Real, Stream, Tape, Var};
use crate::sampler::{path_between, path_logprob, SamplerError, Trace, WalkConfig};
use crate::transition::{
    choice_logprob_generic, transition_matrix, TransitionError, TransitionModel,
};

#[derive(Debug, Error, Clone, PartialEq)]
pub enum InferenceError {
    #[error("non-finite gradient in parameter block {block}")]
    NonFiniteGradient { block: String },
    #[error("non-finite ELBO value")]
    NonFiniteElbo,
    #[error("dataset is empty")]
    EmptyData,
    #[error("row {row} has {found} values, the data object has {expected}")]
    DimMismatch {
        row: usize,
        expected: usize,
        found: usize,
    },
    #[error("invalid configuration: {0}")]
    Config(String),
    #[error("path terms differ by {0:e} between joint and proposal")]
    PathTermMismatch(f64),
    #[error(transparent)]
    Model(#[from] ModelError),
    #[error(transparent)]
    Sampler(#[from] SamplerError),
    #[error(transparent)]
    Transition(#[from] TransitionError),
}

/// The hyper-parameters that get a learned proposal.
///
/// Only `β` and rows `W[cod(a), ·]` for arrows `a` out of objects with more
/// than one out-arrow can change a walk's distribution; every other entry is
/// drawn from its Gamma(1,1) prior, so its prior and proposal terms cancel
/// and are left out of both sides.
#[derive(Debug, Clone, PartialEq)]
pub struct HyperSpace {
    n: usize,
    beta: bool,
    w_entries: Vec<usize>,
    data_dim: usize,
}

/// Initial head bias for `ln v`; with log-scale 0 this is the log-normal
/// closest to Exp(1).
const INIT_LOG_MEAN: f64 = -0.5;

impl HyperSpace {
    pub fn new(model: &Model) -> Self {
        let graph = model.graph();
        let n = graph.len();
        let w_entries = graph
            .effective_w_rows()
            .into_iter()
            .flat_map(|r| (0..n).map(move |j| r * n + j))
            .collect();
        HyperSpace {
            n,
            beta: !graph.choice_vertices().is_empty(),
            w_entries,
            data_dim: model.data_dim(),
        }
    }

    pub fn variable_count(&self) -> usize {
        usize::from(self.beta) + self.w_entries.len()
    }

    /// Flat `W` positions with a learned proposal.
    pub fn w_entries(&self) -> &[usize] {
        &self.w_entries
    }

    pub fn has_beta(&self) -> bool {
        self.beta
    }

    fn head_len(&self) -> usize {
        2 * self.data_dim + 2
    }

    pub fn param_len(&self) -> usize {
        self.variable_count() * self.head_len()
    }

    /// Per variable: `[w_mu (d), b_mu, w_ls (d), b_ls]`.
    pub fn initial_params(&self) -> Vec<f64> {
        let d = self.data_dim;
        let mut out = Vec::with_capacity(self.param_len());
        for _ in 0..self.variable_count() {
            out.extend(std::iter::repeat_n(0.0, d));
            out.push(INIT_LOG_MEAN);
            out.extend(std::iter::repeat_n(0.0, d));
            out.push(0.0);
        }
        out
    }

    /// `(μ, σ)` of `ln v` for each variable.
    pub fn heads<R: Real>(&self, params: &[R], summary: &[f64]) -> Vec<(R, R)> {
        let d = self.data_dim;
        params
            .chunks(self.head_len())
            .map(|h| {
                let mut mu = h[d];
                let mut ls = h[2 * d + 1];
                for (k, &s) in summary.iter().enumerate() {
                    mu = mu + h[k] * s;
                    ls = ls + h[d + 1 + k] * s;
                }
                (mu, ls.exp())
            })
            .collect()
    }

    /// Reparameterised values with `ln q` and `ln p` of the learned variables.
    pub fn values<R: Real>(
        &self,
        params: &[R],
        summary: &[f64],
        noise: &[f64],
        zero: R,
    ) -> (Vec<R>, R, R) {
        let heads = self.heads(params, summary);
        let (mut logq, mut logp) = (zero, zero);
        let mut values = Vec::with_capacity(heads.len());
        for (&(mu, sigma), &e) in heads.iter().zip(noise) {
            let v = (mu + sigma * e).exp();
            logq = logq + lognormal_log_density(v, mu, sigma);
            logp = logp + gamma_log_density(v, 1.0, 1.0);
            values.push(v);
        }
        (values, logq, logp)
    }

    /// Full `β` and row-major `W` with the learned entries substituted into
    /// the prior draws.
    fn assemble<R: Real>(&self, values: &[R], anchor: R, beta: f64, w: &Matrix) -> (R, Vec<R>) {
        let mut full: Vec<R> = w.as_slice().iter().map(|&v| anchor.lift(v)).collect();
        let mut it = values.iter().copied();
        let beta = if self.beta {
            it.next().expect("beta is a learned variable")
        } else {
            anchor.lift(beta)
        };
        for &idx in &self.w_entries {
            full[idx] = it.next().expect("one value per learned entry");
        }
        (beta, full)
    }
}

/// A proposal draw `q(β, W, f, Z | X)`: discrete structure plus frozen noise.
#[derive(Debug, Clone)]
pub struct Proposal {
    pub hyper_noise: Vec<f64>,
    pub beta: f64,
    pub w: Matrix,
    pub transition: TransitionModel,
    pub morphism: Morphism,
    pub trace: Trace,
    pub program: Program,
    pub latent_noise: Vec<Vec<f64>>,
}

fn exp1(rng: &mut Stream) -> f64 {
    -rng.uniform_open().ln()
}

/// The structural half of a proposal.
#[derive(Debug, Clone)]
pub struct StructureDraw {
    pub hyper_noise: Vec<f64>,
    pub beta: f64,
    pub w: Matrix,
    pub transition: TransitionModel,
    pub morphism: Morphism,
    pub trace: Trace,
}

/// Draws `(β, W)` and a morphism; no latents.
pub fn propose_structure(
    model: &Model,
    params: &ParamStore,
    summary: &[f64],
    cfg: &WalkConfig,
    rng: &mut Stream,
) -> Result<StructureDraw, InferenceError> {
    let hs = HyperSpace::new(model);
    let noise = rng.normals(hs.variable_count());
    let n = model.graph().len();
    let mut w = Matrix::from_vec(n, n, (0..n * n).map(|_| exp1(rng)).collect());
    let mut beta = exp1(rng);
    let (values, _, _) = hs.values(params.hyper(), summary, &noise, 0.0);
    let mut it = values.into_iter();
    if hs.beta {
        beta = it.next().expect("beta is learned");
    }
    for &idx in &hs.w_entries {
        w[(idx / n, idx % n)] = it.next().expect("entry is learned");
    }
    let tm = transition_matrix(model.graph().clone(), w.clone(), beta)?;
    let (morphism, trace) = path_between(&tm, &TypeObject::Unit, model.data_object(), cfg, rng)?;
    Ok(StructureDraw {
        hyper_noise: noise,
        beta,
        w,
        transition: tm,
        morphism,
        trace,
    })
}

/// One full proposal for data vector `x`, with hyper heads read at `summary`.
pub fn propose(
    model: &Model,
    params: &ParamStore,
    summary: &[f64],
    cfg: &WalkConfig,
    rng: &mut Stream,
) -> Result<Proposal, InferenceError> {
    let StructureDraw {
        hyper_noise,
        beta,
        w,
        transition,
        morphism,
        trace,
    } = propose_structure(model, params, summary, cfg, rng)?;
    let program = Program::compile(&morphism)?;
    let latent_noise = program.draw_noise(rng);
    Ok(Proposal {
        hyper_noise,
        beta,
        w,
        transition,
        morphism,
        trace,
        program,
        latent_noise,
    })
}

/// Continuous addends of `log p − log q` for one proposal, plus the
/// proposal's path log-probability as a function of the hyper heads.
#[derive(Debug, Clone, Copy)]
pub struct Terms<R> {
    pub likelihood: R,
    pub latent_prior: R,
    pub latent_proposal: R,
    pub hyper_prior: R,
    pub hyper_proposal: R,
    pub path: R,
}

impl<R: Real> Terms<R> {
    /// `log p − log q` without the path terms, which cancel.
    pub fn signal(&self) -> R {
        self.likelihood + self.latent_prior - self.latent_proposal + self.hyper_prior
            - self.hyper_proposal
    }
}

/// Re-evaluates a frozen proposal at parameters `flat`.
pub fn evaluate<R: Real>(
    model: &Model,
    layout: &Layout,
    flat: &[R],
    x: &[f64],
    summary: &[f64],
    prop: &Proposal,
) -> Terms<R> {
    let hs = HyperSpace::new(model);
    let anchor = flat[0];
    let zero = anchor.lift(0.0);
    let (values, hyper_proposal, hyper_prior) = hs.values(
        &flat[layout.hyper_range()],
        summary,
        &prop.hyper_noise,
        zero,
    );
    let (site_values, latent_proposal) =
        prop.program
            .propose_latents(layout, flat, x, &prop.latent_noise);
    let (likelihood, latent_prior) =
        prop.program
            .forward_log_density(layout, flat, &site_values, x);
    let path = if prop.trace.choices.is_empty() {
        zero
    } else {
        let (beta, w) = hs.assemble(&values, anchor, prop.beta, &prop.w);
        let graph = model.graph();
        let mut acc = zero;
        for c in &prop.trace.choices {
            acc = acc
                + choice_logprob_generic(graph, &w, beta, &c.candidates, c.chosen, c.destination);
        }
        acc
    };
    Terms {
        likelihood,
        latent_prior,
        latent_proposal,
        hyper_prior,
        hyper_proposal,
        path,
    }
}

/// The surrogate for one proposal with the score coefficient `c = ℓ − b`
/// frozen: `c · log q(f) + ℓ`. Its gradient is the per-sample estimator.
pub fn frozen_objective<R: Real>(
    model: &Model,
    layout: &Layout,
    flat: &[R],
    x: &[f64],
    summary: &[f64],
    prop: &Proposal,
    coefficient: f64,
) -> R {
    let t = evaluate(model, layout, flat, x, summary, prop);
    t.path * coefficient + t.signal()
}

/// Gradient of [`frozen_objective`] by reverse-mode differentiation.
pub fn frozen_gradient(
    model: &Model,
    params: &ParamStore,
    x: &[f64],
    summary: &[f64],
    prop: &Proposal,
    coefficient: f64,
) -> Vec<f64> {
    let tape = Tape::new();
    let vars: Vec<Var> = params.values().iter().map(|&v| tape.var(v)).collect();
    let out = frozen_objective(model, params.layout(), &vars, x, summary, prop, coefficient);
    let mut g = tape.gradient(out);
    g.truncate(vars.len());
    g
}

/// Per-sample record for [`surrogate_loss`].
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SurrogateRecord {
    /// `ℓ = log p − log q`, held constant.
    pub signal: f64,
    /// `Σ log q` of the discrete choices.
    pub logq_discrete: f64,
    /// The pathwise-differentiable part of `ℓ`.
    pub pathwise: f64,
    pub baseline: f64,
}

/// `mean[(ℓ − b) · log q_discrete + pathwise]`.
pub fn surrogate_loss(records: &[SurrogateRecord]) -> f64 {
    let total: f64 = records
        .iter()
        .map(|r| (r.signal - r.baseline) * r.logq_discrete + r.pathwise)
        .sum();
    total / records.len() as f64
}

/// Mean addends of a Monte-Carlo ELBO.
#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct ElboParts {
    pub likelihood: f64,
    pub latent_prior: f64,
    pub latent_proposal: f64,
    pub hyper_prior: f64,
    pub hyper_proposal: f64,
    pub path_prior: f64,
    pub path_proposal: f64,
}

impl ElboParts {
    pub fn total(&self) -> f64 {
        self.likelihood + self.latent_prior - self.latent_proposal + self.hyper_prior
            - self.hyper_proposal
            + self.path_prior
            - self.path_proposal
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ElboEstimate {
    pub value: f64,
    pub surrogate: f64,
    pub parts: ElboParts,
    pub baseline: f64,
    pub standard_error: f64,
    /// Largest `|log p(f|β,W) − log q(f|β,W)|` seen over the samples.
    pub max_path_gap: f64,
    pub samples: usize,
}

/// Largest tolerated disagreement between the two path terms.
pub const PATH_GAP_TOLERANCE: f64 = 1e-12;

/// Everything recorded for one evaluated proposal.
#[derive(Debug, Clone)]
pub struct SampleOutcome {
    pub terms: Terms<f64>,
    pub path_prior: f64,
    pub path_proposal: f64,
    pub signature: String,
}

impl SampleOutcome {
    pub fn elbo(&self) -> f64 {
        self.terms.signal() + self.path_prior - self.path_proposal
    }
}

/// Evaluates a proposal in plain floats and checks the path cancellation.
pub fn score_proposal(
    model: &Model,
    params: &ParamStore,
    x: &[f64],
    summary: &[f64],
    prop: &Proposal,
    cfg: &WalkConfig,
) -> Result<SampleOutcome, InferenceError> {
    let terms = evaluate(model, params.layout(), params.values(), x, summary, prop);
    let path_prior = path_logprob(
        &prop.transition,
        &prop.morphism,
        &TypeObject::Unit,
        model.data_object(),
        cfg,
    )?;
    let path_proposal = prop.trace.total_path_logprob;
    let gap = (path_prior - path_proposal).abs();
    if !(gap < PATH_GAP_TOLERANCE) {
        return Err(InferenceError::PathTermMismatch(gap));
    }
    Ok(SampleOutcome {
        terms,
        path_prior,
        path_proposal,
        signature: crate::category::signature(&prop.morphism),
    })
}

pub(crate) fn summarize(outcomes: &[SampleOutcome], baseline: f64) -> ElboEstimate {
    let n = outcomes.len() as f64;
    let mut parts = ElboParts::default();
    let mut values = Vec::with_capacity(outcomes.len());
    let mut gap: f64 = 0.0;
    let mut records = Vec::with_capacity(outcomes.len());
    for o in outcomes {
        let t = &o.terms;
        parts.likelihood += t.likelihood / n;
        parts.latent_prior += t.latent_prior / n;
        parts.latent_proposal += t.latent_proposal / n;
        parts.hyper_prior += t.hyper_prior / n;
        parts.hyper_proposal += t.hyper_proposal / n;
        parts.path_prior += o.path_prior / n;
        parts.path_proposal += o.path_proposal / n;
        gap = gap.max((o.path_prior - o.path_proposal).abs());
        values.push(o.elbo());
        records.push(SurrogateRecord {
            signal: o.elbo(),
            logq_discrete: o.path_proposal,
            pathwise: t.signal(),
            baseline,
        });
    }
    let value = values.iter().sum::<f64>() / n;
    let var = if values.len() > 1 {
        values.iter().map(|v| (v - value).powi(2)).sum::<f64>() / (n - 1.0)
    } else {
        0.0
    };
    ElboEstimate {
        value,
        surrogate: surrogate_loss(&records),
        parts,
        baseline,
        standard_error: (var / n).sqrt(),
        max_path_gap: gap,
        samples: outcomes.len(),
    }
}

/// Monte-Carlo ELBO of a single data vector, which also serves as the
/// summary for the hyper heads.
pub fn elbo(
    model: &Model,
    params: &ParamStore,
    x: &[f64],
    cfg: &WalkConfig,
    n_samples: usize,
    rng: &mut Stream,
) -> Result<ElboEstimate, InferenceError> {
    if n_samples == 0 {
        return Err(InferenceError::Config(
            "need at least one ELBO sample".into(),
        ));
    }
    check_row(model, 0, x)?;
    let outcomes = (0..n_samples)
        .map(|_| {
            let prop = propose(model, params, x, cfg, rng)?;
            score_proposal(model, params, x, x, &prop, cfg)
        })
        .collect::<Result<Vec<_>, _>>()?;
    let baseline = outcomes.iter().map(SampleOutcome::elbo).sum::<f64>() / n_samples as f64;
    Ok(summarize(&outcomes, baseline))
}

pub(crate) fn check_row(model: &Model, row: usize, x: &[f64]) -> Result<(), InferenceError> {
    if x.len() != model.data_dim() {
        return Err(InferenceError::DimMismatch {
            row,
            expected: model.data_dim(),
            found: x.len(),
        });
    }
    Ok(())
}

/// Coordinate-wise mean of the rows.
pub fn batch_summary(rows: &[&[f64]]) -> Vec<f64> {
    let d = rows[0].len();
    let mut s = vec![0.0; d];
    for r in rows {
        for (a, &b) in s.iter_mut().zip(r.iter()) {
            *a += b;
        }
    }
    let n = rows.len() as f64;
    s.iter_mut().for_each(|v| *v /= n);
    s
}
