//! Running sampled morphisms as latent-variable generative programs.
//!
//! A morphism `⊤ → data` is compiled into a list of *sites*, one per
//! generator occurrence, in execution order. Each site reads the
//! concatenated outputs of its input sites; product branches simply
//! contribute several inputs. The last site emits the observation, every
//! other site emits one latent block.

mod params;
mod primitive;

pub use params::{spec_hash, BlockInfo, Checkpoint, Layout, ParamStore};
pub use primitive::{Activation, Dims, Emission, PrimitiveKind};

use std::sync::Arc;

use thiserror::Error;

use crate::category::{CategorySpec, Generator, MacroKind, Morphism, Term, TypeObject};
use crate::numerics::dist::{gamma_log_density, gaussian_log_density};
use crate::numerics::{DistParams, Matrix, NumericsError, Real, Stream};
use crate::sampler::{path_logprob, LatentRecord, SamplerError, Trace, WalkConfig};
use crate::transition::{transition_matrix, ArrowGraph, TransitionError};

#[derive(Debug, Error, Clone, PartialEq)]
pub enum ModelError {
    #[error("morphism cannot be executed: {0}")]
    Unexecutable(String),
    #[error("generator `{0}` has no parameters")]
    Unparameterized(String),
    #[error("trace does not match the morphism: {0}")]
    TraceMismatch(String),
    #[error("expected a vector of length {expected}, got {found}")]
    DimMismatch { expected: usize, found: usize },
    #[error("checkpoint does not fit this spec: {0}")]
    Checkpoint(String),
    #[error(transparent)]
    Sampler(#[from] SamplerError),
    #[error(transparent)]
    Transition(#[from] TransitionError),
    #[error(transparent)]
    Numerics(#[from] NumericsError),
}

pub fn dims_of(g: &Generator) -> Dims {
    Dims {
        input: g.dom.dim().unwrap_or(0),
        output: g.cod.dim().unwrap_or(0),
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Site {
    pub generator: Arc<Generator>,
    pub inputs: Vec<usize>,
    pub dims: Dims,
}

impl Site {
    fn primitive(&self) -> &PrimitiveKind {
        self.generator
            .primitive
            .as_ref()
            .expect("compiled sites are user generators")
    }
}

/// A compiled morphism. The last site is the observation.
#[derive(Debug, Clone, PartialEq)]
pub struct Program {
    pub sites: Vec<Site>,
}

impl Program {
    pub fn compile(m: &Morphism) -> Result<Program, ModelError> {
        if !m.dom().is_unit() {
            return Err(ModelError::Unexecutable(format!(
                "programs start at ⊤, this one starts at {}",
                m.dom()
            )));
        }
        let mut sites = Vec::new();
        let outs = Self::emit(m, Vec::new(), &mut sites)?;
        if outs.len() != 1 || outs[0] + 1 != sites.len() {
            return Err(ModelError::Unexecutable(
                "the final step must be a single generator".into(),
            ));
        }
        Ok(Program { sites })
    }

    fn emit(
        m: &Morphism,
        input: Vec<usize>,
        sites: &mut Vec<Site>,
    ) -> Result<Vec<usize>, ModelError> {
        match m.term() {
            Term::Identity => Ok(input),
            Term::Compose(a, b) => {
                let mid = Self::emit(a, input, sites)?;
                Self::emit(b, mid, sites)
            }
            Term::Gen(g) => {
                if g.primitive.is_none() {
                    return Err(ModelError::Unparameterized(g.name.clone()));
                }
                sites.push(Site {
                    generator: g.clone(),
                    inputs: input,
                    dims: dims_of(g),
                });
                Ok(vec![sites.len() - 1])
            }
            Term::Product(a, b) => {
                let mut outs = Self::emit(a, Vec::new(), sites)?;
                outs.extend(Self::emit(b, Vec::new(), sites)?);
                Ok(outs)
            }
            Term::Macro { generator, body } => match generator.macro_kind {
                Some(MacroKind::Product) => Self::emit(body, input, sites),
                _ => Err(ModelError::Unexecutable(format!(
                    "`{}` yields a morphism-valued latent and no generator consumes it",
                    generator.name
                ))),
            },
            Term::Dagger(_) | Term::Split(..) | Term::MacroDagger { .. } => Err(
                ModelError::Unexecutable("inverse terms are not generative".into()),
            ),
        }
    }

    pub fn observation(&self) -> &Site {
        self.sites.last().expect("programs are non-empty")
    }

    pub fn latent_count(&self) -> usize {
        self.sites.len() - 1
    }

    fn gather<R: Real>(&self, s: usize, values: &[Vec<R>]) -> Vec<R> {
        self.sites[s]
            .inputs
            .iter()
            .flat_map(|&i| values[i].iter().copied())
            .collect()
    }

    /// Forward densities given every site's value (the observation's value is
    /// the data). Returns `(log p(X | Z), log p(Z))`.
    pub fn forward_log_density<R: Real>(
        &self,
        layout: &Layout,
        flat: &[R],
        values: &[Vec<R>],
        x: &[f64],
    ) -> (R, R) {
        let last = self.sites.len() - 1;
        let mut prior = flat[0].lift(0.0);
        let mut likelihood = prior;
        for (s, site) in self.sites.iter().enumerate() {
            let input = self.gather(s, values);
            let theta = &flat[layout.theta_range(&site.generator.name)];
            let em = site.primitive().forward(site.dims, theta, &input);
            if s == last {
                likelihood = em.log_density_of_data(x);
            } else {
                prior = prior + em.log_density(&values[s]);
            }
        }
        (likelihood, prior)
    }

    /// Runs the inverse plan on `x`: every site's dagger proposes its inputs
    /// from its output, last site first, using the given standard-normal
    /// noise per site. Returns all site values and `log q(Z | X)`.
    pub fn propose_latents<R: Real>(
        &self,
        layout: &Layout,
        flat: &[R],
        x: &[f64],
        noise: &[Vec<f64>],
    ) -> (Vec<Vec<R>>, R) {
        let anchor = flat[0];
        let n = self.sites.len();
        let mut values: Vec<Vec<R>> = vec![Vec::new(); n];
        values[n - 1] = x.iter().map(|&v| anchor.lift(v)).collect();
        let mut logq = anchor.lift(0.0);
        for s in (0..n).rev() {
            let site = &self.sites[s];
            if site.inputs.is_empty() {
                continue;
            }
            let phi = &flat[layout.phi_range(&site.generator.name)];
            let (mean, scale) = site.primitive().inverse(site.dims, phi, &values[s]);
            let z: Vec<R> = mean
                .iter()
                .zip(&scale)
                .zip(&noise[s])
                .map(|((&m, &sd), &e)| m + sd * e)
                .collect();
            logq = logq + gaussian_log_density(&z, &mean, &scale);
            let mut at = 0;
            for &i in &site.inputs {
                let len = self.sites[i].dims.output;
                values[i] = z[at..at + len].to_vec();
                at += len;
            }
        }
        (values, logq)
    }

    /// Noise lengths for [`Program::propose_latents`].
    pub fn draw_noise(&self, rng: &mut Stream) -> Vec<Vec<f64>> {
        let mut noise = vec![Vec::new(); self.sites.len()];
        for s in (0..self.sites.len()).rev() {
            if !self.sites[s].inputs.is_empty() {
                noise[s] = rng.normals(self.sites[s].dims.input);
            }
        }
        noise
    }
}

/// Separately retrievable addends of the complete joint log-density.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct JointLogProb {
    pub likelihood: f64,
    pub latent_prior: f64,
    pub path: f64,
    pub hyper_prior: f64,
}

impl JointLogProb {
    pub fn total(&self) -> f64 {
        self.likelihood + self.latent_prior + self.path + self.hyper_prior
    }
}

/// `Σ ln Gamma(1,1)(v)` over `β` and every entry of `W`.
pub fn hyper_prior_logprob(beta: f64, w: &Matrix) -> Result<f64, ModelError> {
    let mut total = gamma_log_density(beta, 1.0, 1.0);
    for &v in w.as_slice() {
        if !(v >= 0.0) {
            return Err(NumericsError::Support {
                kind: "gamma",
                value: v,
            }
            .into());
        }
        total += gamma_log_density(v, 1.0, 1.0);
    }
    if !(beta > 0.0) {
        return Err(NumericsError::Support {
            kind: "gamma",
            value: beta,
        }
        .into());
    }
    Ok(total)
}

/// A spec together with its arrow graph.
#[derive(Debug, Clone)]
pub struct Model {
    spec: Arc<CategorySpec>,
    graph: Arc<ArrowGraph>,
}

impl Model {
    pub fn new(spec: CategorySpec) -> Self {
        let spec = Arc::new(spec);
        let graph = Arc::new(ArrowGraph::new(spec.clone()));
        Model { spec, graph }
    }

    pub fn spec(&self) -> &Arc<CategorySpec> {
        &self.spec
    }

    pub fn graph(&self) -> &Arc<ArrowGraph> {
        &self.graph
    }

    pub fn data_object(&self) -> &TypeObject {
        self.spec.data_object()
    }

    pub fn data_dim(&self) -> usize {
        self.spec
            .data_object()
            .dim()
            .expect("data object is a space")
    }

    /// Samples every latent in order and returns the unevaluated observation
    /// distribution. The returned trace has no arrow choices.
    pub fn execute(
        &self,
        m: &Morphism,
        params: &ParamStore,
        rng: &mut Stream,
    ) -> Result<(Trace, DistParams), ModelError> {
        if m.cod() != self.data_object() {
            return Err(ModelError::Unexecutable(format!(
                "ends at {}, not at the data object",
                m.cod()
            )));
        }
        let program = Program::compile(m)?;
        let last = program.sites.len() - 1;
        let mut values: Vec<Vec<f64>> = vec![Vec::new(); program.sites.len()];
        let mut trace = Trace::default();
        for (s, site) in program.sites.iter().enumerate() {
            let input = program.gather(s, &values);
            let em =
                site.primitive()
                    .forward(site.dims, params.theta(&site.generator.name), &input);
            let dist = em.to_params();
            if s == last {
                return Ok((trace, dist));
            }
            let (v, lp) = dist.sample(rng)?;
            trace.latents.push(LatentRecord {
                generator: site.generator.name.clone(),
                value: v.clone(),
                log_density: lp,
            });
            values[s] = v;
        }
        unreachable!("programs are non-empty")
    }

    /// `log p(X|Z,f) + log p(Z|f) + log p(f|β,W) + log p(β) + log p(W)`.
    #[allow(clippy::too_many_arguments)]
    pub fn joint_logprob(
        &self,
        x: &[f64],
        trace: &Trace,
        m: &Morphism,
        beta: f64,
        w: &Matrix,
        params: &ParamStore,
        cfg: &WalkConfig,
    ) -> Result<JointLogProb, ModelError> {
        if x.len() != self.data_dim() {
            return Err(ModelError::DimMismatch {
                expected: self.data_dim(),
                found: x.len(),
            });
        }
        let program = Program::compile(m)?;
        if trace.latents.len() != program.latent_count() {
            return Err(ModelError::TraceMismatch(format!(
                "{} latents recorded, program has {}",
                trace.latents.len(),
                program.latent_count()
            )));
        }
        let mut values: Vec<Vec<f64>> = Vec::with_capacity(program.sites.len());
        for (site, rec) in program.sites.iter().zip(&trace.latents) {
            if rec.generator != site.generator.name || rec.value.len() != site.dims.output {
                return Err(ModelError::TraceMismatch(format!(
                    "latent from `{}` does not fit site `{}`",
                    rec.generator, site.generator.name
                )));
            }
            values.push(rec.value.clone());
        }
        values.push(x.to_vec());
        let (likelihood, latent_prior) =
            program.forward_log_density(params.layout(), params.values(), &values, x);
        let tm = transition_matrix(self.graph.clone(), w.clone(), beta)?;
        let path = path_logprob(&tm, m, &TypeObject::Unit, self.data_object(), cfg)?;
        Ok(JointLogProb {
            likelihood,
            latent_prior,
            path,
            hyper_prior: hyper_prior_logprob(beta, w)?,
        })
    }
}

/// The structural stochastic inverse: reverses composition, swaps pairings
/// for splits, and maps each generator to its dagger. An involution.
pub fn dagger(m: &Morphism) -> Morphism {
    match m.term() {
        Term::Identity => m.clone(),
        Term::Gen(g) => Morphism::dagger_of(g.clone()),
        Term::Dagger(g) => Morphism::generator(g.clone()),
        Term::Compose(a, b) => dagger(b)
            .compose(dagger(a))
            .expect("reversed composite type-checks"),
        Term::Product(a, b) => {
            Morphism::split(dagger(a), dagger(b)).expect("branches of a pairing start at ⊤")
        }
        Term::Split(a, b) => dagger(a)
            .product(dagger(b))
            .expect("branches of a split end at ⊤"),
        Term::Macro { generator, body } => Morphism::macro_dagger(generator.clone(), dagger(body)),
        Term::MacroDagger { generator, body } => {
            Morphism::expanded_macro(generator.clone(), dagger(body)).expect("involution")
        }
    }
}
