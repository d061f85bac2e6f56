use std::collections::{BTreeMap, HashMap};
use std::ops::Range;
use std::sync::Arc;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use super::{dims_of, Model, ModelError};
use crate::category::{serialize_spec, CategorySpec};
use crate::inference::HyperSpace;
use crate::numerics::Stream;

/// Hex SHA-256 of the canonical serialisation of a spec.
pub fn spec_hash(spec: &CategorySpec) -> String {
    hex::encode(Sha256::digest(serialize_spec(spec).as_bytes()))
}

#[derive(Debug, Clone, PartialEq)]
pub struct BlockInfo {
    /// `theta.<generator>`, `phi.<generator>` or `hyper`.
    pub name: String,
    pub range: Range<usize>,
}

/// Where each parameter block lives in the flat vector: θ blocks for the
/// user generators in declaration order, then φ blocks, then the hyper
/// proposal heads.
#[derive(Debug, Clone, PartialEq)]
pub struct Layout {
    blocks: Vec<BlockInfo>,
    theta: HashMap<String, Range<usize>>,
    phi: HashMap<String, Range<usize>>,
    hyper: Range<usize>,
    len: usize,
}

impl Layout {
    pub fn new(model: &Model) -> Self {
        let mut blocks = Vec::new();
        let mut at = 0;
        let mut push = |name: String, len: usize, blocks: &mut Vec<BlockInfo>| {
            let r = at..at + len;
            at += len;
            blocks.push(BlockInfo {
                name,
                range: r.clone(),
            });
            r
        };
        let mut theta = HashMap::new();
        let mut phi = HashMap::new();
        let user: Vec<_> = model.spec().user_generators().cloned().collect();
        for g in &user {
            let p = g.primitive.as_ref().expect("user generator");
            let r = push(
                format!("theta.{}", g.name),
                p.forward_len(dims_of(g)),
                &mut blocks,
            );
            theta.insert(g.name.clone(), r);
        }
        for g in &user {
            let p = g.primitive.as_ref().expect("user generator");
            let r = push(
                format!("phi.{}", g.name),
                p.inverse_len(dims_of(g)),
                &mut blocks,
            );
            phi.insert(g.name.clone(), r);
        }
        let hyper_len = HyperSpace::new(model).param_len();
        let hyper = push("hyper".into(), hyper_len, &mut blocks);
        Layout {
            blocks,
            theta,
            phi,
            hyper,
            len: at,
        }
    }

    pub fn len(&self) -> usize {
        self.len
    }

    pub fn is_empty(&self) -> bool {
        self.len == 0
    }

    pub fn blocks(&self) -> &[BlockInfo] {
        &self.blocks
    }

    pub fn theta_range(&self, generator: &str) -> Range<usize> {
        self.theta[generator].clone()
    }

    pub fn phi_range(&self, generator: &str) -> Range<usize> {
        self.phi[generator].clone()
    }

    pub fn hyper_range(&self) -> Range<usize> {
        self.hyper.clone()
    }
}

/// θ, φ and the hyper-proposal parameters as one flat vector.
#[derive(Debug, Clone, PartialEq)]
pub struct ParamStore {
    layout: Arc<Layout>,
    values: Vec<f64>,
}

impl ParamStore {
    pub fn init(model: &Model, rng: &mut Stream) -> Self {
        let layout = Arc::new(Layout::new(model));
        let mut values = Vec::with_capacity(layout.len());
        let user: Vec<_> = model.spec().user_generators().cloned().collect();
        for g in &user {
            let p = g.primitive.as_ref().expect("user generator");
            values.extend(p.init_forward(dims_of(g), rng));
        }
        for g in &user {
            let p = g.primitive.as_ref().expect("user generator");
            values.extend(p.init_inverse(dims_of(g), rng));
        }
        values.extend(HyperSpace::new(model).initial_params());
        debug_assert_eq!(values.len(), layout.len());
        ParamStore { layout, values }
    }

    pub fn layout(&self) -> &Layout {
        &self.layout
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn values_mut(&mut self) -> &mut [f64] {
        &mut self.values
    }

    pub fn theta(&self, generator: &str) -> &[f64] {
        &self.values[self.layout.theta_range(generator)]
    }

    pub fn phi(&self, generator: &str) -> &[f64] {
        &self.values[self.layout.phi_range(generator)]
    }

    pub fn theta_mut(&mut self, generator: &str) -> &mut [f64] {
        let r = self.layout.theta_range(generator);
        &mut self.values[r]
    }

    pub fn phi_mut(&mut self, generator: &str) -> &mut [f64] {
        let r = self.layout.phi_range(generator);
        &mut self.values[r]
    }

    pub fn hyper(&self) -> &[f64] {
        &self.values[self.layout.hyper_range()]
    }

    pub fn hyper_mut(&mut self) -> &mut [f64] {
        let r = self.layout.hyper_range();
        &mut self.values[r]
    }

    pub fn to_checkpoint(
        &self,
        model: &Model,
        seed: u64,
        step: u64,
        baseline: Option<f64>,
    ) -> Checkpoint {
        let mut theta = BTreeMap::new();
        let mut phi = BTreeMap::new();
        for g in model.spec().user_generators() {
            theta.insert(g.name.clone(), self.theta(&g.name).to_vec());
            phi.insert(g.name.clone(), self.phi(&g.name).to_vec());
        }
        Checkpoint {
            spec_hash: spec_hash(model.spec()),
            seed,
            step,
            theta,
            phi,
            hyper: self.hyper().to_vec(),
            baseline,
        }
    }

    pub fn from_checkpoint(model: &Model, ckpt: &Checkpoint) -> Result<Self, ModelError> {
        let expected = spec_hash(model.spec());
        if ckpt.spec_hash != expected {
            return Err(ModelError::Checkpoint(format!(
                "spec hash {} does not match {expected}",
                ckpt.spec_hash
            )));
        }
        let layout = Arc::new(Layout::new(model));
        let mut values = vec![0.0; layout.len()];
        let mut fill = |name: &str, range: Range<usize>, v: Option<&Vec<f64>>| match v {
            Some(v) if v.len() == range.len() => {
                values[range].copy_from_slice(v);
                Ok(())
            }
            Some(v) => Err(ModelError::Checkpoint(format!(
                "block {name} has {} values, expected {}",
                v.len(),
                range.len()
            ))),
            None => Err(ModelError::Checkpoint(format!("block {name} is missing"))),
        };
        for g in model.spec().user_generators() {
            fill(
                &format!("theta.{}", g.name),
                layout.theta_range(&g.name),
                ckpt.theta.get(&g.name),
            )?;
            fill(
                &format!("phi.{}", g.name),
                layout.phi_range(&g.name),
                ckpt.phi.get(&g.name),
            )?;
        }
        fill("hyper", layout.hyper_range(), Some(&ckpt.hyper))?;
        if ckpt.theta.len() != layout.theta.len() || ckpt.phi.len() != layout.phi.len() {
            return Err(ModelError::Checkpoint(
                "unexpected generator entries".into(),
            ));
        }
        if values.iter().any(|v| !v.is_finite()) {
            return Err(ModelError::Checkpoint("non-finite parameter".into()));
        }
        Ok(ParamStore { layout, values })
    }
}

/// On-disk parameter snapshot. Floats are written in shortest round-trip
/// decimal form, so reading back is lossless.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Checkpoint {
    pub spec_hash: String,
    pub seed: u64,
    pub step: u64,
    pub theta: BTreeMap<String, Vec<f64>>,
    pub phi: BTreeMap<String, Vec<f64>>,
    pub hyper: Vec<f64>,
    pub baseline: Option<f64>,
}

impl Checkpoint {
    pub fn to_json(&self) -> String {
        let mut s = serde_json::to_string_pretty(self).expect("checkpoint serialises");
        s.push('\n');
        s
    }

    pub fn from_json(text: &str) -> Result<Self, serde_json::Error> {
        serde_json::from_str(text)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::category::fixtures::*;
    use crate::category::parse_spec;

    #[test]
    fn every_generator_has_blocks() {
        let model = Model::new(parse_spec(DIAMOND).unwrap());
        let params = ParamStore::init(&model, &mut Stream::new(0));
        for name in ["p", "f", "g"] {
            assert!(!params.theta(name).is_empty());
        }
        assert!(params.phi("p").is_empty());
        assert!(!params.phi("f").is_empty());
        assert!(params.values().iter().all(|v| v.is_finite()));
        let names: Vec<&str> = params
            .layout()
            .blocks()
            .iter()
            .map(|b| b.name.as_str())
            .collect();
        assert_eq!(
            names,
            ["theta.p", "theta.f", "theta.g", "phi.p", "phi.f", "phi.g", "hyper"]
        );
    }

    #[test]
    fn checkpoint_round_trips_exactly() {
        let model = Model::new(parse_spec(DIAMOND).unwrap());
        let mut params = ParamStore::init(&model, &mut Stream::new(4));
        params.values_mut()[0] = 0.1 + 0.2;
        params.values_mut()[1] = 1e-300;
        params.values_mut()[2] = -123_456.789_012_345_67;
        let ckpt = params.to_checkpoint(&model, 4, 17, Some(-3.25));
        let back = Checkpoint::from_json(&ckpt.to_json()).unwrap();
        assert_eq!(back, ckpt);
        let restored = ParamStore::from_checkpoint(&model, &back).unwrap();
        let bits = |p: &ParamStore| p.values().iter().map(|v| v.to_bits()).collect::<Vec<_>>();
        assert_eq!(bits(&restored), bits(&params));
    }

    #[test]
    fn checkpoint_rejects_other_specs() {
        let model = Model::new(parse_spec(DIAMOND).unwrap());
        let other = Model::new(parse_spec(CHAIN).unwrap());
        let ckpt = ParamStore::init(&model, &mut Stream::new(0)).to_checkpoint(&model, 0, 0, None);
        assert!(ParamStore::from_checkpoint(&other, &ckpt).is_err());
        let mut broken = ckpt.clone();
        broken.theta.get_mut("f").unwrap().pop();
        assert!(ParamStore::from_checkpoint(&model, &broken).is_err());
    }

    #[test]
    fn hash_ignores_formatting() {
        let a = parse_spec(DIAMOND).unwrap();
        let b = parse_spec(&DIAMOND.replace('\n', " ")).unwrap();
        assert_eq!(spec_hash(&a), spec_hash(&b));
        assert_ne!(spec_hash(&a), spec_hash(&parse_spec(CHAIN).unwrap()));
    }
}
