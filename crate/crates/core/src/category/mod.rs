//! Finitely generated free categories: objects, generating morphisms, and
//! composite morphism terms.
//!
//! A category is described by its underlying multigraph. Objects are the
//! vertices, generators are the edges, and every morphism is a composite of
//! generators, identities, products of unit-domain morphisms, and expanded
//! macro arrows. Product and exponential objects automatically receive a
//! macro generator `⊤ → obj` whose expansion is sampled recursively.

mod dot;
mod morphism;
mod spec_file;

pub use dot::to_dot;
pub use morphism::{generator_chain, signature, ChainItem, Morphism, Term};
pub use spec_file::{parse_spec, serialize_spec};

use std::collections::{HashMap, HashSet, VecDeque};
use std::fmt;
use std::sync::Arc;

use thiserror::Error;

use crate::model::PrimitiveKind;

/// Name of the implicit unit object in spec files.
pub const UNIT_NAME: &str = "unit";

#[derive(Debug, Error, Clone, PartialEq)]
pub enum CategoryError {
    #[error("syntax error at line {line}, column {column}: {message}")]
    Syntax {
        line: usize,
        column: usize,
        message: String,
    },
    #[error("unknown object `{name}` referenced by {context}")]
    UnknownObject { name: String, context: String },
    #[error("duplicate name `{0}`")]
    DuplicateName(String),
    #[error("invalid identifier `{0}`")]
    InvalidIdentifier(String),
    #[error("data object `{0}` is not declared")]
    MissingDataObject(String),
    #[error("data object `{0}` must be a space")]
    DataObjectNotSpace(String),
    #[error("object `{0}` is unreachable from the unit object")]
    UnreachableObject(String),
    #[error("invalid object `{name}`: {reason}")]
    InvalidObject { name: String, reason: String },
    #[error("generator `{generator}`: {reason}")]
    InvalidGenerator { generator: String, reason: String },
    #[error("type mismatch: cannot compose {left} with {right}")]
    TypeMismatch { left: String, right: String },
    #[error("product requires unit domains, got {0}")]
    NonUnitDomain(String),
    #[error("malformed macro expansion for `{0}`")]
    MalformedMacro(String),
}

/// An object of the category.
#[derive(Debug, Clone, PartialEq, Eq, Hash)]
pub enum TypeObject {
    Unit,
    Space {
        name: Arc<str>,
        dim: usize,
    },
    Product(Arc<TypeObject>, Arc<TypeObject>),
    Exponential {
        dom: Arc<TypeObject>,
        cod: Arc<TypeObject>,
    },
}

impl TypeObject {
    pub fn space(name: &str, dim: usize) -> Self {
        TypeObject::Space {
            name: Arc::from(name),
            dim,
        }
    }

    pub fn product(left: TypeObject, right: TypeObject) -> Self {
        TypeObject::Product(Arc::new(left), Arc::new(right))
    }

    pub fn exponential(dom: TypeObject, cod: TypeObject) -> Self {
        TypeObject::Exponential {
            dom: Arc::new(dom),
            cod: Arc::new(cod),
        }
    }

    pub fn is_unit(&self) -> bool {
        matches!(self, TypeObject::Unit)
    }

    /// Length of the real vector carried by a value of this type; `None` for
    /// exponential objects (values are morphisms) and their products.
    pub fn dim(&self) -> Option<usize> {
        match self {
            TypeObject::Unit => Some(0),
            TypeObject::Space { dim, .. } => Some(*dim),
            TypeObject::Product(a, b) => Some(a.dim()? + b.dim()?),
            TypeObject::Exponential { .. } => None,
        }
    }
}

impl fmt::Display for TypeObject {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            TypeObject::Unit => f.write_str("⊤"),
            TypeObject::Space { name, .. } => f.write_str(name),
            TypeObject::Product(a, b) => write!(f, "({a},{b})"),
            TypeObject::Exponential { dom, cod } => write!(f, "{cod}^{dom}"),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum MacroKind {
    Product,
    Exponential,
}

/// A generating morphism: a primitive edge of the multigraph.
#[derive(Debug, Clone, PartialEq)]
pub struct Generator {
    pub name: String,
    pub dom: TypeObject,
    pub cod: TypeObject,
    /// `None` exactly for macro generators.
    pub primitive: Option<PrimitiveKind>,
    pub macro_kind: Option<MacroKind>,
}

impl Generator {
    pub fn is_macro(&self) -> bool {
        self.macro_kind.is_some()
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct NamedObject {
    pub name: String,
    pub object: TypeObject,
}

/// A validated category description.
#[derive(Debug, Clone, PartialEq)]
pub struct CategorySpec {
    objects: Vec<NamedObject>,
    generators: Vec<Arc<Generator>>,
    data_object: TypeObject,
}

pub(crate) fn check_identifier(name: &str) -> Result<(), CategoryError> {
    let ok = !name.is_empty()
        && name
            .chars()
            .all(|c| c.is_alphanumeric() || c == '_' || c == '\'')
        && !name.starts_with(|c: char| c.is_ascii_digit());
    if ok {
        Ok(())
    } else {
        Err(CategoryError::InvalidIdentifier(name.to_string()))
    }
}

impl CategorySpec {
    /// Validates the pieces and appends one macro generator per product or
    /// exponential object.
    pub fn new(
        objects: Vec<NamedObject>,
        generators: Vec<Generator>,
        data_object: TypeObject,
    ) -> Result<Self, CategoryError> {
        let mut seen_names = HashSet::new();
        let mut seen_objects = HashSet::new();
        for o in &objects {
            if o.object.is_unit() {
                return Err(CategoryError::DuplicateName(o.name.clone()));
            }
            if !seen_names.insert(o.name.as_str()) || !seen_objects.insert(&o.object) {
                return Err(CategoryError::DuplicateName(o.name.clone()));
            }
            if let TypeObject::Space { dim: 0, .. } = o.object {
                return Err(CategoryError::InvalidObject {
                    name: o.name.clone(),
                    reason: "space dimension must be at least 1".into(),
                });
            }
        }
        let mut all_objects = vec![NamedObject {
            name: UNIT_NAME.to_string(),
            object: TypeObject::Unit,
        }];
        all_objects.extend(objects);
        let declared: HashSet<&TypeObject> = all_objects.iter().map(|o| &o.object).collect();
        for o in &all_objects {
            let parts: Vec<&TypeObject> = match &o.object {
                TypeObject::Product(a, b) => vec![a, b],
                TypeObject::Exponential { dom, cod } => vec![dom, cod],
                _ => vec![],
            };
            for p in parts {
                if !declared.contains(p) {
                    return Err(CategoryError::UnknownObject {
                        name: p.to_string(),
                        context: format!("object `{}`", o.name),
                    });
                }
            }
        }

        let mut gen_names = HashSet::new();
        for g in &generators {
            check_identifier(&g.name)?;
            if !gen_names.insert(g.name.clone()) {
                return Err(CategoryError::DuplicateName(g.name.clone()));
            }
            for end in [&g.dom, &g.cod] {
                if !declared.contains(end) {
                    return Err(CategoryError::UnknownObject {
                        name: end.to_string(),
                        context: format!("generator `{}`", g.name),
                    });
                }
            }
            if g.is_macro() {
                return Err(CategoryError::InvalidGenerator {
                    generator: g.name.clone(),
                    reason: "macro generators are created automatically".into(),
                });
            }
            let primitive =
                g.primitive
                    .as_ref()
                    .ok_or_else(|| CategoryError::InvalidGenerator {
                        generator: g.name.clone(),
                        reason: "missing primitive".into(),
                    })?;
            primitive
                .check_signature(&g.dom, &g.cod, &data_object)
                .map_err(|reason| CategoryError::InvalidGenerator {
                    generator: g.name.clone(),
                    reason,
                })?;
        }

        match all_objects.iter().find(|o| o.object == data_object) {
            None => return Err(CategoryError::MissingDataObject(data_object.to_string())),
            Some(o) if !matches!(o.object, TypeObject::Space { .. }) => {
                return Err(CategoryError::DataObjectNotSpace(o.name.clone()))
            }
            _ => {}
        }

        let mut generators: Vec<Arc<Generator>> = generators.into_iter().map(Arc::new).collect();
        for o in &all_objects {
            let kind = match o.object {
                TypeObject::Product(..) => MacroKind::Product,
                TypeObject::Exponential { .. } => MacroKind::Exponential,
                _ => continue,
            };
            generators.push(Arc::new(Generator {
                name: format!("macro:{}", o.name),
                dom: TypeObject::Unit,
                cod: o.object.clone(),
                primitive: None,
                macro_kind: Some(kind),
            }));
        }

        let spec = CategorySpec {
            objects: all_objects,
            generators,
            data_object,
        };
        let reachable = spec.reachable_from(&TypeObject::Unit);
        if let Some(o) = spec.objects.iter().find(|o| !reachable.contains(&o.object)) {
            return Err(CategoryError::UnreachableObject(o.name.clone()));
        }
        for o in &spec.objects {
            if let TypeObject::Exponential { dom, cod } = &o.object {
                if !spec.reachable_from(dom).contains(cod.as_ref()) {
                    return Err(CategoryError::InvalidObject {
                        name: o.name.clone(),
                        reason: format!("no morphism {dom} → {cod} exists to fill it"),
                    });
                }
            }
        }
        // continuous-Bernoulli outputs only make sense as observations
        let emits_cb = spec
            .user_generators()
            .any(|g| matches!(g.primitive, Some(PrimitiveKind::AffineCbernoulli { .. })));
        if emits_cb {
            if let Some(g) = spec.out_generators(&spec.data_object).next() {
                return Err(CategoryError::InvalidGenerator {
                    generator: g.name.clone(),
                    reason:
                        "the data object cannot be consumed when it is emitted by affine-cbernoulli"
                            .into(),
                });
            }
        }
        Ok(spec)
    }

    /// All objects, the unit object first.
    pub fn objects(&self) -> &[NamedObject] {
        &self.objects
    }

    /// User generators in declaration order, followed by macros.
    pub fn generators(&self) -> &[Arc<Generator>] {
        &self.generators
    }

    pub fn user_generators(&self) -> impl Iterator<Item = &Arc<Generator>> {
        self.generators.iter().filter(|g| !g.is_macro())
    }

    pub fn macros(&self) -> impl Iterator<Item = &Arc<Generator>> {
        self.generators.iter().filter(|g| g.is_macro())
    }

    pub fn data_object(&self) -> &TypeObject {
        &self.data_object
    }

    pub fn object(&self, name: &str) -> Option<&TypeObject> {
        self.objects
            .iter()
            .find(|o| o.name == name)
            .map(|o| &o.object)
    }

    pub fn object_name(&self, obj: &TypeObject) -> Option<&str> {
        self.objects
            .iter()
            .find(|o| &o.object == obj)
            .map(|o| o.name.as_str())
    }

    pub fn generator(&self, name: &str) -> Option<&Arc<Generator>> {
        self.generators.iter().find(|g| g.name == name)
    }

    pub fn generator_index(&self, name: &str) -> Option<usize> {
        self.generators.iter().position(|g| g.name == name)
    }

    pub fn out_generators<'a>(
        &'a self,
        obj: &'a TypeObject,
    ) -> impl Iterator<Item = &'a Arc<Generator>> + 'a {
        self.generators.iter().filter(move |g| &g.dom == obj)
    }

    /// Objects reachable from `start` along generator edges (including `start`).
    pub fn reachable_from(&self, start: &TypeObject) -> HashSet<TypeObject> {
        let mut seen = HashSet::new();
        let mut queue = VecDeque::from([start.clone()]);
        seen.insert(start.clone());
        while let Some(obj) = queue.pop_front() {
            for g in self.out_generators(&obj) {
                if seen.insert(g.cod.clone()) {
                    queue.push_back(g.cod.clone());
                }
            }
        }
        seen
    }

    /// Position of each generator by name.
    pub fn generator_positions(&self) -> HashMap<&str, usize> {
        self.generators
            .iter()
            .enumerate()
            .map(|(i, g)| (g.name.as_str(), i))
            .collect()
    }
}


#[cfg(test)]
mod tests {
    use super::fixtures::*;
    use super::*;

    #[test]
    fn diamond_counts() {
        let s = spec(DIAMOND);
        assert_eq!(s.objects().len(), 3);
        assert_eq!(s.user_generators().count(), 3);
        assert_eq!(s.macros().count(), 0);
    }

    #[test]
    fn product_object_gets_one_macro() {
        let s = spec(WITH_PRODUCT);
        let macros: Vec<_> = s.macros().collect();
        assert_eq!(macros.len(), 1);
        assert_eq!(macros[0].dom, TypeObject::Unit);
        assert_eq!(macros[0].cod.to_string(), "(X2,X4)");
        assert_eq!(macros[0].macro_kind, Some(MacroKind::Product));
    }

    #[test]
    fn product_dim_sums_factors() {
        let s = spec(WITH_PRODUCT);
        assert_eq!(s.object("P").unwrap().dim(), Some(6));
        assert_eq!(s.object("unit").unwrap().dim(), Some(0));
    }

    #[test]
    fn exponential_display() {
        let e = TypeObject::exponential(TypeObject::space("X2", 2), TypeObject::space("X4", 4));
        assert_eq!(e.to_string(), "X4^X2");
        assert_eq!(e.dim(), None);
    }

    #[test]
    fn identifiers() {
        assert!(check_identifier("f_2").is_ok());
        assert!(check_identifier("").is_err());
        assert!(check_identifier("2f").is_err());
        assert!(check_identifier("a b").is_err());
    }
}
