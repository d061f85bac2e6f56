use std::collections::BTreeMap;

use super::{
    batch_summary, check_row, frozen_gradient, propose, propose_structure, score_proposal,
    summarize, ElboEstimate, InferenceError, Proposal, SampleOutcome,
};
use crate::category::signature;
use crate::model::{Model, ParamStore};
use crate::numerics::Stream;
use crate::sampler::WalkConfig;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TrainConfig {
    pub epochs: usize,
    pub batch_size: usize,
    pub step_size: f64,
    pub momentum: f64,
    /// Global gradient-norm bound.
    pub clip: f64,
    pub elbo_samples: usize,
    pub baseline_decay: f64,
    pub walk: WalkConfig,
    pub seed: u64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            epochs: 10,
            batch_size: 32,
            step_size: 1e-3,
            momentum: 0.9,
            clip: 10.0,
            elbo_samples: 1,
            baseline_decay: 0.95,
            walk: WalkConfig::default(),
            seed: 0,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<(), InferenceError> {
        let bad = |what: &str| Err(InferenceError::Config(what.to_string()));
        if self.batch_size == 0 {
            return bad("batch size must be positive");
        }
        if self.elbo_samples == 0 {
            return bad("need at least one ELBO sample");
        }
        if !(self.step_size > 0.0 && self.step_size.is_finite()) {
            return bad("step size must be positive");
        }
        if !(0.0..1.0).contains(&self.momentum) {
            return bad("momentum must lie in [0, 1)");
        }
        if !(self.clip > 0.0) {
            return bad("gradient clip must be positive");
        }
        if !(0.0..1.0).contains(&self.baseline_decay) {
            return bad("baseline decay must lie in [0, 1)");
        }
        self.walk.validate()?;
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct EpochMetrics {
    pub epoch: usize,
    pub elbo: f64,
    pub path_logprob: f64,
    pub baseline: f64,
}

#[derive(Debug, Clone)]
pub struct TrainOutcome {
    pub params: ParamStore,
    pub metrics: Vec<EpochMetrics>,
    pub baseline: Option<f64>,
    pub steps: u64,
}

type Draw = (usize, Proposal, SampleOutcome);

/// Proposals and scores for a batch. Row `i` of the dataset always draws
/// from `rng.split(i)`, so the result does not depend on batch order.
fn draw_batch(
    model: &Model,
    params: &ParamStore,
    data: &[Vec<f64>],
    mut rows: Vec<usize>,
    samples: usize,
    walk: &WalkConfig,
    rng: &Stream,
) -> Result<(Vec<f64>, Vec<Draw>), InferenceError> {
    rows.sort_unstable();
    let views: Vec<&[f64]> = rows.iter().map(|&i| data[i].as_slice()).collect();
    let summary = batch_summary(&views);
    let mut out = Vec::with_capacity(rows.len() * samples);
    for &i in &rows {
        let mut r = rng.split(i as u64);
        for _ in 0..samples {
            let prop = propose(model, params, &summary, walk, &mut r)?;
            let o = score_proposal(model, params, &data[i], &summary, &prop, walk)?;
            out.push((i, prop, o));
        }
    }
    Ok((summary, out))
}

fn check_gradient(params: &ParamStore, grad: &[f64]) -> Result<(), InferenceError> {
    for b in params.layout().blocks() {
        if grad[b.range.clone()].iter().any(|g| !g.is_finite()) {
            return Err(InferenceError::NonFiniteGradient {
                block: b.name.clone(),
            });
        }
    }
    Ok(())
}

/// Stochastic gradient ascent on the ELBO with momentum and a scalar
/// running-mean baseline for the score-function term.
pub fn train(
    model: &Model,
    init: ParamStore,
    data: &[Vec<f64>],
    cfg: &TrainConfig,
) -> Result<TrainOutcome, InferenceError> {
    cfg.validate()?;
    if data.is_empty() {
        return Err(InferenceError::EmptyData);
    }
    for (i, x) in data.iter().enumerate() {
        check_row(model, i, x)?;
    }
    let mut params = init;
    let mut velocity = vec![0.0; params.values().len()];
    let mut baseline: Option<f64> = None;
    let mut metrics = Vec::with_capacity(cfg.epochs);
    let mut steps = 0u64;
    let root = Stream::new(cfg.seed);
    for epoch in 0..cfg.epochs {
        let mut epoch_rng = root.split(epoch as u64);
        let order = epoch_rng.permutation(data.len());
        let (mut elbo_sum, mut path_sum, mut count) = (0.0, 0.0, 0usize);
        for (b, batch) in order.chunks(cfg.batch_size).enumerate() {
            let step_rng = epoch_rng.split(b as u64);
            let (summary, draws) = draw_batch(
                model,
                &params,
                data,
                batch.to_vec(),
                cfg.elbo_samples,
                &cfg.walk,
                &step_rng,
            )?;
            let signals: Vec<f64> = draws.iter().map(|(_, _, o)| o.elbo()).collect();
            let n = signals.len() as f64;
            let mean = signals.iter().sum::<f64>() / n;
            let b_now = baseline.unwrap_or(mean);

            let mut grad = vec![0.0; velocity.len()];
            for ((i, prop, _), &l) in draws.iter().zip(&signals) {
                let g = frozen_gradient(model, &params, &data[*i], &summary, prop, l - b_now);
                for (a, v) in grad.iter_mut().zip(g) {
                    *a += v / n;
                }
            }
            check_gradient(&params, &grad)?;
            if !mean.is_finite() {
                return Err(InferenceError::NonFiniteElbo);
            }
            let norm = grad.iter().map(|g| g * g).sum::<f64>().sqrt();
            let shrink = if norm > cfg.clip {
                cfg.clip / norm
            } else {
                1.0
            };
            for ((p, v), g) in params.values_mut().iter_mut().zip(&mut velocity).zip(&grad) {
                *v = cfg.momentum * *v + cfg.step_size * shrink * g;
                *p += *v;
            }
            baseline = Some(match baseline {
                None => mean,
                Some(old) => cfg.baseline_decay * old + (1.0 - cfg.baseline_decay) * mean,
            });
            steps += 1;
            elbo_sum += signals.iter().sum::<f64>();
            path_sum += draws.iter().map(|(_, _, o)| o.path_proposal).sum::<f64>();
            count += signals.len();
        }
        metrics.push(EpochMetrics {
            epoch,
            elbo: elbo_sum / count as f64,
            path_logprob: path_sum / count as f64,
            baseline: baseline.expect("at least one step per epoch"),
        });
    }
    Ok(TrainOutcome {
        params,
        metrics,
        baseline,
        steps,
    })
}

/// Mean ELBO over a dataset with `n_samples` proposals per row; the hyper
/// heads read the mean of the whole dataset.
pub fn evaluate_elbo(
    model: &Model,
    params: &ParamStore,
    data: &[Vec<f64>],
    walk: &WalkConfig,
    n_samples: usize,
    seed: u64,
) -> Result<ElboEstimate, InferenceError> {
    if data.is_empty() {
        return Err(InferenceError::EmptyData);
    }
    if n_samples == 0 {
        return Err(InferenceError::Config(
            "need at least one ELBO sample".into(),
        ));
    }
    for (i, x) in data.iter().enumerate() {
        check_row(model, i, x)?;
    }
    let (_, draws) = draw_batch(
        model,
        params,
        data,
        (0..data.len()).collect(),
        n_samples,
        walk,
        &Stream::new(seed),
    )?;
    let outcomes: Vec<SampleOutcome> = draws.into_iter().map(|(_, _, o)| o).collect();
    let baseline = outcomes.iter().map(SampleOutcome::elbo).sum::<f64>() / outcomes.len() as f64;
    Ok(summarize(&outcomes, baseline))
}

/// Frequencies of sampled generator-chain signatures under the amortised
/// proposal for `data`.
pub fn structure_posterior(
    model: &Model,
    params: &ParamStore,
    data: &[Vec<f64>],
    walk: &WalkConfig,
    n_samples: usize,
    seed: u64,
) -> Result<BTreeMap<String, f64>, InferenceError> {
    if data.is_empty() {
        return Err(InferenceError::EmptyData);
    }
    for (i, x) in data.iter().enumerate() {
        check_row(model, i, x)?;
    }
    let views: Vec<&[f64]> = data.iter().map(Vec::as_slice).collect();
    let summary = batch_summary(&views);
    let mut rng = Stream::new(seed);
    let mut counts: BTreeMap<String, usize> = BTreeMap::new();
    for _ in 0..n_samples {
        let d = propose_structure(model, params, &summary, walk, &mut rng)?;
        *counts.entry(signature(&d.morphism)).or_default() += 1;
    }
    Ok(counts
        .into_iter()
        .map(|(k, c)| (k, c as f64 / n_samples as f64))
        .collect())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::category::fixtures::*;
    use crate::category::parse_spec;

    fn toy(text: &str, n: usize, seed: u64) -> (Model, Vec<Vec<f64>>) {
        let model = Model::new(parse_spec(text).unwrap());
        let truth = ParamStore::init(&model, &mut Stream::new(seed));
        let tm = crate::transition::TransitionModel::neutral(model.graph().clone());
        let mut rng = Stream::new(seed + 1);
        let data = (0..n)
            .map(|_| {
                let (m, _) = crate::sampler::path_between(
                    &tm,
                    &crate::category::TypeObject::Unit,
                    model.data_object(),
                    &WalkConfig::default(),
                    &mut rng,
                )
                .unwrap();
                let (_, dist) = model.execute(&m, &truth, &mut rng).unwrap();
                dist.sample(&mut rng).unwrap().0
            })
            .collect();
        (model, data)
    }

    #[test]
    fn zero_epochs_keep_the_initialisation() {
        let (model, data) = toy(DIAMOND, 20, 1);
        let init = ParamStore::init(&model, &mut Stream::new(9));
        let cfg = TrainConfig {
            epochs: 0,
            ..TrainConfig::default()
        };
        let out = train(&model, init.clone(), &data, &cfg).unwrap();
        assert_eq!(out.params, init);
        assert!(out.metrics.is_empty());
        assert_eq!(out.steps, 0);
    }

    #[test]
    fn training_is_deterministic() {
        let (model, data) = toy(DIAMOND, 40, 2);
        let cfg = TrainConfig {
            epochs: 3,
            batch_size: 8,
            seed: 4,
            ..TrainConfig::default()
        };
        let run = || {
            let init = ParamStore::init(&model, &mut Stream::new(4));
            train(&model, init, &data, &cfg).unwrap()
        };
        let (a, b) = (run(), run());
        assert_eq!(a.metrics, b.metrics);
        assert_eq!(a.params, b.params);
        assert_eq!(a.steps, 15);
    }

    #[test]
    fn elbo_improves_on_a_single_path_model() {
        let (model, data) = toy(CHAIN, 200, 3);
        let init = ParamStore::init(&model, &mut Stream::new(30));
        let cfg = TrainConfig {
            epochs: 30,
            batch_size: 20,
            step_size: 5e-3,
            seed: 30,
            ..TrainConfig::default()
        };
        let out = train(&model, init, &data, &cfg).unwrap();
        let m = &out.metrics;
        let first: f64 = m[..10].iter().map(|e| e.elbo).sum::<f64>() / 10.0;
        let last: f64 = m[m.len() - 10..].iter().map(|e| e.elbo).sum::<f64>() / 10.0;
        assert!(last > first, "{first} -> {last}");
        assert!(m.iter().all(|e| e.path_logprob == 0.0));
    }

    #[test]
    fn batch_order_does_not_matter() {
        let (model, data) = toy(DIAMOND, 10, 5);
        let params = ParamStore::init(&model, &mut Stream::new(5));
        let rng = Stream::new(11);
        let walk = WalkConfig::default();
        let (_, a) = draw_batch(&model, &params, &data, vec![0, 3, 7, 2], 3, &walk, &rng).unwrap();
        let (_, b) = draw_batch(&model, &params, &data, vec![7, 2, 3, 0], 3, &walk, &rng).unwrap();
        let mean = |d: &[Draw]| d.iter().map(|(_, _, o)| o.elbo()).sum::<f64>() / d.len() as f64;
        assert_eq!(mean(&a), mean(&b));
    }

    #[test]
    fn posterior_frequencies_sum_to_one() {
        let (model, data) = toy(DIAMOND, 10, 6);
        let params = ParamStore::init(&model, &mut Stream::new(6));
        let post =
            structure_posterior(&model, &params, &data, &WalkConfig::default(), 1000, 6).unwrap();
        assert!((post.values().sum::<f64>() - 1.0).abs() < 1e-9);
        assert_eq!(post.len(), 2);
        let (chain, cdata) = toy(CHAIN, 5, 6);
        let cp = ParamStore::init(&chain, &mut Stream::new(6));
        let post =
            structure_posterior(&chain, &cp, &cdata, &WalkConfig::default(), 100, 6).unwrap();
        assert_eq!(
            post.into_iter().collect::<Vec<_>>(),
            vec![("p;f".to_string(), 1.0)]
        );
    }

    #[test]
    fn nan_data_names_a_block() {
        let (model, mut data) = toy(CHAIN, 10, 7);
        data[3][0] = f64::NAN;
        let init = ParamStore::init(&model, &mut Stream::new(7));
        let cfg = TrainConfig {
            epochs: 1,
            batch_size: 10,
            ..TrainConfig::default()
        };
        match train(&model, init, &data, &cfg) {
            Err(InferenceError::NonFiniteGradient { block }) => assert!(block.contains('.')),
            other => panic!("{other:?}"),
        }
    }
}
