//! Biased random walks over `G′` that build well-typed morphisms, with exact
//! log-probability accounting.
//!
//! At each location the walk lists the out-arrows, drops the ones that cannot
//! be used (see [`candidates`]), scores the rest by `P[a, dst]`, renormalises
//! and samples. Chosen macro arrows are expanded immediately by recursive
//! walks with no minimum length.

use std::collections::{HashSet, VecDeque};

use thiserror::Error;

use crate::category::{CategoryError, MacroKind, Morphism, Term, TypeObject};
use crate::numerics::Stream;
use crate::transition::{ArrowGraph, TransitionModel};

pub const MAX_ENUMERATED_PATHS: usize = 100_000;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum SamplerError {
    #[error("walk from {src} to {dst} exceeded {max_steps} steps")]
    MaxSteps {
        src: String,
        dst: String,
        max_steps: usize,
    },
    #[error("no usable out-arrow at {location} on the way to {dst}")]
    EmptyCandidates { location: String, dst: String },
    #[error("macro `{name}` nested deeper than {max_depth}")]
    DepthExceeded { name: String, max_depth: usize },
    #[error("`{0}` is not a macro generator")]
    NotAMacro(String),
    #[error("{0} is not an object of this category")]
    UnknownObject(String),
    #[error("{dst} is not reachable from {src}")]
    Unreachable { src: String, dst: String },
    #[error("morphism is not a walk under this configuration: {0}")]
    NotAWalk(String),
    #[error("invalid walk configuration: {0}")]
    Config(String),
    #[error("path enumeration needs an acyclic arrow graph")]
    Cyclic,
    #[error("more than {MAX_ENUMERATED_PATHS} paths")]
    PathExplosion,
    #[error(transparent)]
    Category(#[from] CategoryError),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct WalkConfig {
    pub min_generators: usize,
    pub max_steps: usize,
    pub max_macro_depth: usize,
}

impl Default for WalkConfig {
    fn default() -> Self {
        WalkConfig {
            min_generators: 2,
            max_steps: 64,
            max_macro_depth: 3,
        }
    }
}

impl WalkConfig {
    pub fn validate(&self) -> Result<(), SamplerError> {
        if self.max_steps == 0 || self.max_macro_depth == 0 {
            return Err(SamplerError::Config(
                "max_steps and max_macro_depth must be positive".into(),
            ));
        }
        if self.max_steps < self.min_generators {
            return Err(SamplerError::Config(format!(
                "max_steps {} is below min_generators {}",
                self.max_steps, self.min_generators
            )));
        }
        Ok(())
    }
}

/// One arrow choice of a walk. Vertices index into the arrow graph.
#[derive(Debug, Clone, PartialEq)]
pub struct ChoiceRecord {
    pub location: usize,
    pub destination: usize,
    pub candidates: Vec<usize>,
    /// Position of the chosen arrow in `candidates`.
    pub chosen: usize,
    pub logprob: f64,
}

impl ChoiceRecord {
    pub fn chosen_vertex(&self) -> usize {
        self.candidates[self.chosen]
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct LatentRecord {
    pub generator: String,
    pub value: Vec<f64>,
    pub log_density: f64,
}

#[derive(Debug, Clone, PartialEq, Default)]
pub struct Trace {
    pub choices: Vec<ChoiceRecord>,
    pub latents: Vec<LatentRecord>,
    pub total_path_logprob: f64,
}

/// Sequential sum in record order; replay uses the same order so both sides
/// agree to the last bit.
fn sum_in_order(lps: impl IntoIterator<Item = f64>) -> f64 {
    lps.into_iter().fold(0.0, |acc, x| acc + x)
}

/// Usable out-arrows at `loc` when heading to `dst` with `count` generators
/// placed so far. An arrow is dropped when its codomain cannot reach `dst`,
/// or when it lands on `dst` too early for `min_generators`.
pub fn candidates(
    graph: &ArrowGraph,
    loc: usize,
    dst: usize,
    count: usize,
    min_generators: usize,
) -> Vec<usize> {
    graph
        .successors(loc)
        .iter()
        .copied()
        .filter(|&a| {
            let cod = graph.cod_vertex(a);
            graph.can_reach(cod, dst) && !(count + 1 < min_generators && cod == dst)
        })
        .collect()
}

/// `ln(P[c, dst] / Σ_candidates P[·, dst])`.
pub fn choice_logprob(tm: &TransitionModel, cands: &[usize], chosen: usize, dst: usize) -> f64 {
    let p = tm.p();
    let total: f64 = cands.iter().map(|&a| p[(a, dst)]).sum();
    (p[(cands[chosen], dst)] / total).ln()
}

fn object_vertex(graph: &ArrowGraph, obj: &TypeObject) -> Result<usize, SamplerError> {
    graph
        .object_vertex(obj)
        .ok_or_else(|| SamplerError::UnknownObject(obj.to_string()))
}

struct Walker<'a> {
    tm: &'a TransitionModel,
    cfg: WalkConfig,
}

impl Walker<'_> {
    fn walk(
        &self,
        src: &TypeObject,
        dst: &TypeObject,
        min: usize,
        depth: usize,
        rng: &mut Stream,
        choices: &mut Vec<ChoiceRecord>,
    ) -> Result<Morphism, SamplerError> {
        let graph = self.tm.graph();
        let (src_v, dst_v) = (object_vertex(graph, src)?, object_vertex(graph, dst)?);
        if !graph.can_reach(src_v, dst_v) {
            return Err(SamplerError::Unreachable {
                src: src.to_string(),
                dst: dst.to_string(),
            });
        }
        let mut f = Morphism::identity(src.clone());
        let (mut loc, mut count) = (src_v, 0);
        while loc != dst_v || count < min {
            if count >= self.cfg.max_steps {
                return Err(SamplerError::MaxSteps {
                    src: src.to_string(),
                    dst: dst.to_string(),
                    max_steps: self.cfg.max_steps,
                });
            }
            let cands = candidates(graph, loc, dst_v, count, min);
            if cands.is_empty() {
                return Err(SamplerError::EmptyCandidates {
                    location: graph.name(loc).to_string(),
                    dst: dst.to_string(),
                });
            }
            let weights: Vec<f64> = cands.iter().map(|&a| self.tm.p()[(a, dst_v)]).collect();
            let chosen = rng.categorical(&weights);
            let arrow = cands[chosen];
            choices.push(ChoiceRecord {
                location: loc,
                destination: dst_v,
                logprob: choice_logprob(self.tm, &cands, chosen, dst_v),
                candidates: cands,
                chosen,
            });
            let g = graph
                .generator(arrow)
                .expect("out-arrows are generators")
                .clone();
            let step = if g.is_macro() {
                self.expand(&g, depth + 1, rng, choices)?
            } else {
                Morphism::generator(g)
            };
            f = f.compose(step)?;
            loc = graph.cod_vertex(arrow);
            count += 1;
        }
        Ok(f)
    }

    fn expand(
        &self,
        g: &std::sync::Arc<crate::category::Generator>,
        depth: usize,
        rng: &mut Stream,
        choices: &mut Vec<ChoiceRecord>,
    ) -> Result<Morphism, SamplerError> {
        if depth > self.cfg.max_macro_depth {
            return Err(SamplerError::DepthExceeded {
                name: g.name.clone(),
                max_depth: self.cfg.max_macro_depth,
            });
        }
        let body = match (&g.macro_kind, &g.cod) {
            (Some(MacroKind::Product), TypeObject::Product(a, b)) => {
                let left = self.walk(&TypeObject::Unit, a, 0, depth, rng, choices)?;
                let right = self.walk(&TypeObject::Unit, b, 0, depth, rng, choices)?;
                left.product(right)?
            }
            (Some(MacroKind::Exponential), TypeObject::Exponential { dom, cod }) => {
                self.walk(dom, cod, 0, depth, rng, choices)?
            }
            _ => return Err(SamplerError::NotAMacro(g.name.clone())),
        };
        Ok(Morphism::expanded_macro(g.clone(), body)?)
    }
}

fn finish(choices: Vec<ChoiceRecord>) -> Trace {
    Trace {
        total_path_logprob: sum_in_order(choices.iter().map(|c| c.logprob)),
        choices,
        latents: Vec::new(),
    }
}

/// Samples a morphism `src → dst`.
pub fn path_between(
    tm: &TransitionModel,
    src: &TypeObject,
    dst: &TypeObject,
    cfg: &WalkConfig,
    rng: &mut Stream,
) -> Result<(Morphism, Trace), SamplerError> {
    cfg.validate()?;
    let mut choices = Vec::new();
    let m = Walker { tm, cfg: *cfg }.walk(src, dst, cfg.min_generators, 0, rng, &mut choices)?;
    Ok((m, finish(choices)))
}

/// Expands one macro arrow at the first nesting level.
pub fn expand_macro(
    tm: &TransitionModel,
    generator: &std::sync::Arc<crate::category::Generator>,
    cfg: &WalkConfig,
    rng: &mut Stream,
) -> Result<(Morphism, Trace), SamplerError> {
    cfg.validate()?;
    if !generator.is_macro() {
        return Err(SamplerError::NotAMacro(generator.name.clone()));
    }
    let mut choices = Vec::new();
    let m = Walker { tm, cfg: *cfg }.expand(generator, 1, rng, &mut choices)?;
    Ok((m, finish(choices)))
}

struct Replay<'a> {
    tm: &'a TransitionModel,
    cfg: WalkConfig,
}

impl Replay<'_> {
    fn walk(
        &self,
        m: &Morphism,
        src: &TypeObject,
        dst: &TypeObject,
        min: usize,
        depth: usize,
        out: &mut Vec<ChoiceRecord>,
    ) -> Result<(), SamplerError> {
        let not_walk = |why: String| SamplerError::NotAWalk(why);
        if m.dom() != src || m.cod() != dst {
            return Err(not_walk(format!(
                "expected {src} → {dst}, got {} → {}",
                m.dom(),
                m.cod()
            )));
        }
        let graph = self.tm.graph();
        let (mut loc, dst_v) = (object_vertex(graph, src)?, object_vertex(graph, dst)?);
        let mut count = 0;
        for factor in m.factors() {
            if loc == dst_v && count >= min {
                return Err(not_walk(format!("the walk would already stop at {dst}")));
            }
            if count >= self.cfg.max_steps {
                return Err(not_walk(format!(
                    "longer than {} steps",
                    self.cfg.max_steps
                )));
            }
            let g = match factor.term() {
                Term::Gen(g) | Term::Macro { generator: g, .. } => g,
                _ => return Err(not_walk("factor is not a generator or macro arrow".into())),
            };
            let arrow = graph
                .generator_vertex(&g.name)
                .ok_or_else(|| not_walk(format!("unknown generator `{}`", g.name)))?;
            let cands = candidates(graph, loc, dst_v, count, min);
            let chosen = cands.iter().position(|&a| a == arrow).ok_or_else(|| {
                not_walk(format!(
                    "`{}` is not a candidate at {}",
                    g.name,
                    graph.name(loc)
                ))
            })?;
            out.push(ChoiceRecord {
                location: loc,
                destination: dst_v,
                logprob: choice_logprob(self.tm, &cands, chosen, dst_v),
                candidates: cands,
                chosen,
            });
            if let Term::Macro { generator, body } = factor.term() {
                let depth = depth + 1;
                if depth > self.cfg.max_macro_depth {
                    return Err(SamplerError::DepthExceeded {
                        name: generator.name.clone(),
                        max_depth: self.cfg.max_macro_depth,
                    });
                }
                match (body.term(), &generator.cod) {
                    (Term::Product(l, r), TypeObject::Product(a, b)) => {
                        self.walk(l, &TypeObject::Unit, a, 0, depth, out)?;
                        self.walk(r, &TypeObject::Unit, b, 0, depth, out)?;
                    }
                    (_, TypeObject::Exponential { dom, cod }) => {
                        self.walk(body, dom, cod, 0, depth, out)?;
                    }
                    _ => {
                        return Err(not_walk(format!(
                            "malformed expansion of `{}`",
                            generator.name
                        )))
                    }
                }
            }
            loc = graph.cod_vertex(arrow);
            count += 1;
        }
        if loc != dst_v || count < min {
            return Err(not_walk(format!(
                "{count} generators is below the minimum of {min}"
            )));
        }
        Ok(())
    }
}

/// Replays the choices a walk would make to produce `m` and returns them.
pub fn replay_choices(
    tm: &TransitionModel,
    m: &Morphism,
    src: &TypeObject,
    dst: &TypeObject,
    cfg: &WalkConfig,
) -> Result<Vec<ChoiceRecord>, SamplerError> {
    cfg.validate()?;
    let mut out = Vec::new();
    Replay { tm, cfg: *cfg }.walk(m, src, dst, cfg.min_generators, 0, &mut out)?;
    Ok(out)
}

/// `ln p(m | β, W)` under the walk that [`path_between`] performs.
pub fn path_logprob(
    tm: &TransitionModel,
    m: &Morphism,
    src: &TypeObject,
    dst: &TypeObject,
    cfg: &WalkConfig,
) -> Result<f64, SamplerError> {
    let choices = replay_choices(tm, m, src, dst, cfg)?;
    Ok(sum_in_order(choices.iter().map(|c| c.logprob)))
}

struct Enumerator<'a> {
    tm: &'a TransitionModel,
    cfg: WalkConfig,
}

/// A partial walk: the arrows taken and the choice log-probabilities in the
/// order a sampled trace would record them.
type Partial = (Vec<Morphism>, Vec<f64>);

impl Enumerator<'_> {
    fn walks(
        &self,
        src: &TypeObject,
        dst: &TypeObject,
        min: usize,
        depth: usize,
    ) -> Result<Vec<(Morphism, Vec<f64>)>, SamplerError> {
        let graph = self.tm.graph();
        let (src_v, dst_v) = (object_vertex(graph, src)?, object_vertex(graph, dst)?);
        if !graph.can_reach(src_v, dst_v) {
            return Err(SamplerError::Unreachable {
                src: src.to_string(),
                dst: dst.to_string(),
            });
        }
        let suffixes = self.from(src_v, dst_v, 0, min, depth)?;
        suffixes
            .into_iter()
            .map(|(arrows, lps)| {
                let mut m = Morphism::identity(src.clone());
                for a in arrows {
                    m = m.compose(a)?;
                }
                Ok((m, lps))
            })
            .collect()
    }

    fn from(
        &self,
        loc: usize,
        dst: usize,
        count: usize,
        min: usize,
        depth: usize,
    ) -> Result<Vec<Partial>, SamplerError> {
        let graph = self.tm.graph();
        if loc == dst && count >= min {
            return Ok(vec![(Vec::new(), Vec::new())]);
        }
        if count >= self.cfg.max_steps {
            return Err(SamplerError::MaxSteps {
                src: graph.name(loc).to_string(),
                dst: graph.name(dst).to_string(),
                max_steps: self.cfg.max_steps,
            });
        }
        let cands = candidates(graph, loc, dst, count, min);
        if cands.is_empty() {
            return Err(SamplerError::EmptyCandidates {
                location: graph.name(loc).to_string(),
                dst: graph.name(dst).to_string(),
            });
        }
        let mut out = Vec::new();
        for (i, &arrow) in cands.iter().enumerate() {
            let lp = choice_logprob(self.tm, &cands, i, dst);
            let g = graph
                .generator(arrow)
                .expect("out-arrows are generators")
                .clone();
            let options = if g.is_macro() {
                self.expansions(&g, depth + 1)?
            } else {
                vec![(Morphism::generator(g), Vec::new())]
            };
            let rest = self.from(graph.cod_vertex(arrow), dst, count + 1, min, depth)?;
            for (am, alps) in &options {
                for (rm, rlps) in &rest {
                    let mut arrows = vec![am.clone()];
                    arrows.extend(rm.iter().cloned());
                    let mut lps = vec![lp];
                    lps.extend(alps);
                    lps.extend(rlps);
                    out.push((arrows, lps));
                    if out.len() > MAX_ENUMERATED_PATHS {
                        return Err(SamplerError::PathExplosion);
                    }
                }
            }
        }
        Ok(out)
    }

    fn expansions(
        &self,
        g: &std::sync::Arc<crate::category::Generator>,
        depth: usize,
    ) -> Result<Vec<(Morphism, Vec<f64>)>, SamplerError> {
        if depth > self.cfg.max_macro_depth {
            return Err(SamplerError::DepthExceeded {
                name: g.name.clone(),
                max_depth: self.cfg.max_macro_depth,
            });
        }
        let mut out = Vec::new();
        match (&g.macro_kind, &g.cod) {
            (Some(MacroKind::Product), TypeObject::Product(a, b)) => {
                let lefts = self.walks(&TypeObject::Unit, a, 0, depth)?;
                let rights = self.walks(&TypeObject::Unit, b, 0, depth)?;
                for (lm, llps) in &lefts {
                    for (rm, rlps) in &rights {
                        let body = lm.clone().product(rm.clone())?;
                        let mut lps = llps.clone();
                        lps.extend(rlps);
                        out.push((Morphism::expanded_macro(g.clone(), body)?, lps));
                        if out.len() > MAX_ENUMERATED_PATHS {
                            return Err(SamplerError::PathExplosion);
                        }
                    }
                }
            }
            (Some(MacroKind::Exponential), TypeObject::Exponential { dom, cod }) => {
                for (m, lps) in self.walks(dom, cod, 0, depth)? {
                    out.push((Morphism::expanded_macro(g.clone(), m)?, lps));
                }
            }
            _ => return Err(SamplerError::NotAMacro(g.name.clone())),
        }
        Ok(out)
    }
}

/// Every walk `src → dst` with its probability. Only for acyclic graphs.
pub fn enumerate_paths(
    tm: &TransitionModel,
    src: &TypeObject,
    dst: &TypeObject,
    cfg: &WalkConfig,
) -> Result<Vec<(Morphism, f64)>, SamplerError> {
    cfg.validate()?;
    if !tm.graph().is_acyclic() {
        return Err(SamplerError::Cyclic);
    }
    let walks = Enumerator { tm, cfg: *cfg }.walks(src, dst, cfg.min_generators, 0)?;
    Ok(walks
        .into_iter()
        .map(|(m, lps)| (m, sum_in_order(lps).exp()))
        .collect())
}

/// Locations where a walk `src → dst` could run out of usable arrows because
/// of the minimum-length filter. Each entry names the object.
pub fn feasibility_warnings(
    graph: &ArrowGraph,
    src: &TypeObject,
    dst: &TypeObject,
    cfg: &WalkConfig,
) -> Result<Vec<String>, SamplerError> {
    let (src_v, dst_v) = (object_vertex(graph, src)?, object_vertex(graph, dst)?);
    if !graph.can_reach(src_v, dst_v) {
        return Err(SamplerError::Unreachable {
            src: src.to_string(),
            dst: dst.to_string(),
        });
    }
    let min = cfg.min_generators;
    let mut seen = HashSet::new();
    let mut queue = VecDeque::from([(src_v, 0usize)]);
    seen.insert((src_v, 0));
    let mut stuck = Vec::new();
    while let Some((loc, count)) = queue.pop_front() {
        if loc == dst_v && count >= min {
            continue;
        }
        let cands = candidates(graph, loc, dst_v, count, min);
        if cands.is_empty() && !stuck.contains(&loc) {
            stuck.push(loc);
        }
        for a in cands {
            let next = (graph.cod_vertex(a), (count + 1).min(min));
            if seen.insert(next) {
                queue.push_back(next);
            }
        }
    }
    stuck.sort_unstable();
    Ok(stuck
        .into_iter()
        .map(|v| {
            format!(
                "walks to {dst} with at least {min} generators can get stuck at {}: every usable out-arrow reaches {dst} too early",
                graph.name(v)
            )
        })
        .collect())
}

#[cfg(test)]
mod tests {
    use std::collections::HashMap;
    use std::sync::Arc;

    use super::*;
    use crate::category::fixtures::*;
    use crate::category::{parse_spec, signature};
    use crate::numerics::Matrix;
    use crate::transition::transition_matrix;

    fn neutral(text: &str) -> TransitionModel {
        let s = Arc::new(parse_spec(text).unwrap());
        TransitionModel::neutral(Arc::new(ArrowGraph::new(s)))
    }

    fn obj(tm: &TransitionModel, name: &str) -> TypeObject {
        tm.graph().spec().object(name).unwrap().clone()
    }

    const EXPONENTIAL: &str = r#"{
        "objects": [
            {"name": "X2", "kind": "space", "dim": 2},
            {"name": "X4", "kind": "space", "dim": 4},
            {"name": "E", "kind": "exponential", "dom": "X2", "cod": "X4"}
        ],
        "generators": [
            {"name": "p", "dom": "unit", "cod": "X2", "primitive": {"kind": "gaussian-prior"}},
            {"name": "f", "dom": "X2", "cod": "X4", "primitive": {"kind": "affine-gaussian", "hidden": 4}},
            {"name": "g", "dom": "X2", "cod": "X4", "primitive": {"kind": "affine-gaussian", "hidden": 4}}
        ],
        "data_object": "X4"
    }"#;

    #[test]
    fn identity_walk() {
        let tm = neutral(DIAMOND);
        let x2 = obj(&tm, "X2");
        let cfg = WalkConfig {
            min_generators: 0,
            ..Default::default()
        };
        let (m, t) = path_between(&tm, &x2, &x2, &cfg, &mut Stream::new(0)).unwrap();
        assert!(m.is_identity());
        assert!(t.choices.is_empty());
        assert_eq!(t.total_path_logprob, 0.0);
        assert_eq!(path_logprob(&tm, &m, &x2, &x2, &cfg).unwrap(), 0.0);
    }

    #[test]
    fn chain_has_one_path() {
        let tm = neutral(CHAIN);
        let x4 = obj(&tm, "X4");
        let cfg = WalkConfig::default();
        let (m, t) = path_between(&tm, &TypeObject::Unit, &x4, &cfg, &mut Stream::new(5)).unwrap();
        assert_eq!(signature(&m), "p;f");
        assert_eq!(t.total_path_logprob, 0.0);
        let paths = enumerate_paths(&tm, &TypeObject::Unit, &x4, &cfg).unwrap();
        assert_eq!(paths.len(), 1);
        assert_eq!(paths[0].1, 1.0);
    }

    #[test]
    fn diamond_is_a_fair_coin() {
        let tm = neutral(DIAMOND);
        let x4 = obj(&tm, "X4");
        let cfg = WalkConfig::default();
        let mut rng = Stream::new(11);
        let mut f_count = 0;
        for _ in 0..10_000 {
            let (m, t) = path_between(&tm, &TypeObject::Unit, &x4, &cfg, &mut rng).unwrap();
            assert!((t.total_path_logprob - 0.5f64.ln()).abs() < 1e-15);
            if signature(&m) == "p;f" {
                f_count += 1;
            }
        }
        assert!((f_count as f64 / 1e4 - 0.5).abs() < 0.02, "{f_count}");
    }

    #[test]
    fn biased_w_matches_enumeration() {
        let s = Arc::new(parse_spec(DIAMOND).unwrap());
        let g = Arc::new(ArrowGraph::new(s));
        let mut w = Matrix::zeros(6, 6);
        w[(g.index_of("X4").unwrap(), g.index_of("g").unwrap())] = 2.5;
        let tm = transition_matrix(g.clone(), w, 0.8).unwrap();
        let x4 = obj(&tm, "X4");
        let cfg = WalkConfig::default();
        let paths = enumerate_paths(&tm, &TypeObject::Unit, &x4, &cfg).unwrap();
        assert_eq!(paths.len(), 2);
        for (m, prob) in &paths {
            let lp = path_logprob(&tm, m, &TypeObject::Unit, &x4, &cfg).unwrap();
            assert!((lp - prob.ln()).abs() < 1e-12);
        }
        let pf = paths.iter().find(|(m, _)| signature(m) == "p;f").unwrap().1;
        assert!(pf > 0.5);
    }

    #[test]
    fn second_prior_gives_four_paths() {
        let text = DIAMOND.replace(
            r#"{"name": "f", "dom""#,
            r#"{"name": "p2", "dom": "unit", "cod": "X2", "primitive": {"kind": "gaussian-prior"}},
            {"name": "f", "dom""#,
        );
        let tm = neutral(&text);
        let g = tm.graph().clone();
        let x4 = obj(&tm, "X4");
        let paths = enumerate_paths(&tm, &TypeObject::Unit, &x4, &WalkConfig::default()).unwrap();
        assert_eq!(paths.len(), 4);
        let total: f64 = paths.iter().map(|p| p.1).sum();
        assert!((total - 1.0).abs() < 1e-12);
        // hand computation: per-step renormalised P scores
        let p = tm.p();
        let v = |n: &str| g.index_of(n).unwrap();
        let first = |a: &str| p[(v(a), v("X4"))] / (p[(v("p"), v("X4"))] + p[(v("p2"), v("X4"))]);
        let second = |a: &str| p[(v(a), v("X4"))] / (p[(v("f"), v("X4"))] + p[(v("g"), v("X4"))]);
        for (m, prob) in &paths {
            let sig = signature(m);
            let (a, b) = sig.split_once(';').unwrap();
            assert!((prob - first(a) * second(b)).abs() < 1e-14, "{sig}");
        }
    }

    #[test]
    fn product_macro_has_independent_branches() {
        let text = DIAMOND.replace(
            r#"{"name": "X4", "kind": "space", "dim": 4}"#,
            r#"{"name": "X4", "kind": "space", "dim": 4}, {"name": "P", "kind": "product", "factors": ["X2", "X2"]}"#,
        );
        let tm = neutral(&text);
        let mac = tm.graph().spec().macros().next().unwrap().clone();
        let (m, t) = expand_macro(&tm, &mac, &WalkConfig::default(), &mut Stream::new(2)).unwrap();
        assert_eq!(signature(&m), "macro:P[p|p]");
        assert_eq!(m.cod().to_string(), "(X2,X2)");
        assert_eq!(t.choices.len(), 2);
        m.check_types().unwrap();
    }

    #[test]
    fn exponential_macro_samples_inner_morphism() {
        let tm = neutral(EXPONENTIAL);
        let mac = tm.graph().spec().macros().next().unwrap().clone();
        let cfg = WalkConfig::default();
        let mut rng = Stream::new(9);
        let mut counts: HashMap<String, usize> = HashMap::new();
        for _ in 0..4000 {
            let (m, t) = expand_macro(&tm, &mac, &cfg, &mut rng).unwrap();
            assert_eq!(t.choices.len(), 1);
            *counts.entry(signature(&m)).or_default() += 1;
        }
        assert_eq!(counts.len(), 2);
        let f = counts["macro:E[f]"] as f64 / 4000.0;
        assert!((f - 0.5).abs() < 0.03, "{f}");
        // the exponential arrow can never lead to the data object
        let x4 = obj(&tm, "X4");
        for _ in 0..100 {
            let (m, _) = path_between(&tm, &TypeObject::Unit, &x4, &cfg, &mut rng).unwrap();
            assert!(!signature(&m).contains("macro"));
        }
    }

    #[test]
    fn nested_products_hit_the_depth_bound() {
        let text = r#"{
            "objects": [
                {"name": "A", "kind": "space", "dim": 1},
                {"name": "P1", "kind": "product", "factors": ["A", "A"]},
                {"name": "P2", "kind": "product", "factors": ["P1", "A"]},
                {"name": "P3", "kind": "product", "factors": ["P2", "A"]},
                {"name": "P4", "kind": "product", "factors": ["P3", "A"]}
            ],
            "generators": [
                {"name": "a", "dom": "unit", "cod": "A", "primitive": {"kind": "gaussian-prior"}}
            ],
            "data_object": "A"
        }"#;
        let tm = neutral(text);
        let spec = tm.graph().spec().clone();
        let p4 = spec.generator("macro:P4").unwrap().clone();
        let p3 = spec.generator("macro:P3").unwrap().clone();
        let cfg = WalkConfig::default();
        let err = expand_macro(&tm, &p4, &cfg, &mut Stream::new(0)).unwrap_err();
        assert!(matches!(err, SamplerError::DepthExceeded { .. }), "{err}");
        let (m, _) = expand_macro(&tm, &p3, &cfg, &mut Stream::new(0)).unwrap();
        assert_eq!(signature(&m), "macro:P3[macro:P2[macro:P1[a|a]|a]|a]");
    }

    #[test]
    fn min_generators_is_enforced() {
        let text = DIAMOND.replace(
            r#"{"name": "f", "dom""#,
            r#"{"name": "q", "dom": "unit", "cod": "X4", "primitive": {"kind": "gaussian-prior"}},
            {"name": "f", "dom""#,
        );
        let tm = neutral(&text);
        let x4 = obj(&tm, "X4");
        let mut rng = Stream::new(1);
        for _ in 0..500 {
            let (m, _) = path_between(
                &tm,
                &TypeObject::Unit,
                &x4,
                &WalkConfig::default(),
                &mut rng,
            )
            .unwrap();
            assert!(m.factors().len() >= 2);
        }
        let q = Morphism::generator(tm.graph().spec().generator("q").unwrap().clone());
        assert!(path_logprob(&tm, &q, &TypeObject::Unit, &x4, &WalkConfig::default()).is_err());
        let loose = WalkConfig {
            min_generators: 1,
            ..Default::default()
        };
        assert!(path_logprob(&tm, &q, &TypeObject::Unit, &x4, &loose).is_ok());
    }

    #[test]
    fn max_steps_is_a_hard_error() {
        let text = r#"{
            "objects": [{"name": "A", "kind": "space", "dim": 1}, {"name": "B", "kind": "space", "dim": 1}],
            "generators": [
                {"name": "a", "dom": "unit", "cod": "A", "primitive": {"kind": "gaussian-prior"}},
                {"name": "loop", "dom": "A", "cod": "A", "primitive": {"kind": "affine-gaussian", "hidden": 2}},
                {"name": "out", "dom": "A", "cod": "B", "primitive": {"kind": "affine-gaussian", "hidden": 2}}
            ],
            "data_object": "B"
        }"#;
        let s = Arc::new(parse_spec(text).unwrap());
        let g = Arc::new(ArrowGraph::new(s));
        let mut w = Matrix::zeros(g.len(), g.len());
        // make the loop overwhelmingly attractive
        w[(g.index_of("A").unwrap(), g.index_of("B").unwrap())] = 60.0;
        let tm = transition_matrix(g.clone(), w, 1.0).unwrap();
        let b = obj(&tm, "B");
        let cfg = WalkConfig {
            max_steps: 3,
            ..Default::default()
        };
        let mut errors = 0;
        let mut rng = Stream::new(3);
        for _ in 0..200 {
            match path_between(&tm, &TypeObject::Unit, &b, &cfg, &mut rng) {
                Ok((m, _)) => assert!(m.factors().len() <= 3),
                Err(SamplerError::MaxSteps { .. }) => errors += 1,
                Err(e) => panic!("{e}"),
            }
        }
        assert!(errors > 0);
        assert!(matches!(
            enumerate_paths(&tm, &TypeObject::Unit, &b, &cfg),
            Err(SamplerError::Cyclic)
        ));
    }

    #[test]
    fn replay_matches_trace_bitwise() {
        let text = DIAMOND.replace(
            r#"{"name": "X4", "kind": "space", "dim": 4}"#,
            r#"{"name": "X4", "kind": "space", "dim": 4}, {"name": "P", "kind": "product", "factors": ["X2", "X4"]}"#,
        );
        let s = Arc::new(parse_spec(&text).unwrap());
        let g = Arc::new(ArrowGraph::new(s));
        let n = g.len();
        let w = Matrix::from_vec(
            n,
            n,
            (0..n * n).map(|i| ((i * 37) % 11) as f64 / 5.0).collect(),
        );
        let tm = transition_matrix(g, w, 0.6).unwrap();
        let p = obj(&tm, "P");
        let cfg = WalkConfig {
            min_generators: 1,
            ..Default::default()
        };
        let mut rng = Stream::new(4);
        for _ in 0..200 {
            let (m, t) = path_between(&tm, &TypeObject::Unit, &p, &cfg, &mut rng).unwrap();
            let lp = path_logprob(&tm, &m, &TypeObject::Unit, &p, &cfg).unwrap();
            assert_eq!(lp.to_bits(), t.total_path_logprob.to_bits());
            let replayed = replay_choices(&tm, &m, &TypeObject::Unit, &p, &cfg).unwrap();
            assert_eq!(replayed, t.choices);
        }
    }

    #[test]
    fn seeded_walks_repeat() {
        let tm = neutral(WITH_PRODUCT);
        let x4 = obj(&tm, "X4");
        let run = || {
            let mut rng = Stream::new(77);
            (0..50)
                .map(|_| {
                    path_between(
                        &tm,
                        &TypeObject::Unit,
                        &x4,
                        &WalkConfig::default(),
                        &mut rng,
                    )
                    .unwrap()
                })
                .collect::<Vec<_>>()
        };
        assert_eq!(run(), run());
    }

    #[test]
    fn feasibility_report() {
        let tm = neutral(DIAMOND);
        let x4 = obj(&tm, "X4");
        let ok = feasibility_warnings(tm.graph(), &TypeObject::Unit, &x4, &WalkConfig::default())
            .unwrap();
        assert!(ok.is_empty());
        let three = WalkConfig {
            min_generators: 3,
            ..Default::default()
        };
        let warn = feasibility_warnings(tm.graph(), &TypeObject::Unit, &x4, &three).unwrap();
        assert_eq!(warn.len(), 1);
        assert!(warn[0].contains("at X2"), "{}", warn[0]);
    }
}
