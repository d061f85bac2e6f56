use std::sync::Arc;

use super::{CategoryError, Generator, MacroKind, TypeObject};

/// A composite morphism term together with its domain and codomain.
///
/// Values are only built through the constructors below, which type-check and
/// keep compositions in normal form: identities elided and chains nested to
/// the right.
#[derive(Debug, Clone, PartialEq)]
pub struct Morphism {
    term: Term,
    dom: TypeObject,
    cod: TypeObject,
}

#[derive(Debug, Clone, PartialEq)]
pub enum Term {
    Identity,
    Gen(Arc<Generator>),
    /// Stochastic inverse of a generator, `cod → dom`.
    Dagger(Arc<Generator>),
    Compose(Box<Morphism>, Box<Morphism>),
    /// Pairing of two unit-domain morphisms, `⊤ → (A, B)`.
    Product(Box<Morphism>, Box<Morphism>),
    /// Inverse of a pairing, `(A, B) → ⊤`.
    Split(Box<Morphism>, Box<Morphism>),
    /// An expanded macro arrow. For product macros the body is a pairing
    /// `⊤ → (A, B)`; for exponential macros `⊤ → B^A` it is the sampled
    /// inner morphism `A → B`.
    Macro {
        generator: Arc<Generator>,
        body: Box<Morphism>,
    },
    MacroDagger {
        generator: Arc<Generator>,
        body: Box<Morphism>,
    },
}

fn mismatch(left: &TypeObject, right: &TypeObject) -> CategoryError {
    CategoryError::TypeMismatch {
        left: left.to_string(),
        right: right.to_string(),
    }
}

impl Morphism {
    pub fn identity(obj: TypeObject) -> Self {
        Morphism {
            term: Term::Identity,
            dom: obj.clone(),
            cod: obj,
        }
    }

    /// A single generating morphism. Macro generators must go through
    /// [`Morphism::expanded_macro`] instead.
    pub fn generator(g: Arc<Generator>) -> Self {
        debug_assert!(!g.is_macro(), "macro arrows are only used expanded");
        Morphism {
            dom: g.dom.clone(),
            cod: g.cod.clone(),
            term: Term::Gen(g),
        }
    }

    pub(crate) fn dagger_of(g: Arc<Generator>) -> Self {
        Morphism {
            dom: g.cod.clone(),
            cod: g.dom.clone(),
            term: Term::Dagger(g),
        }
    }

    pub fn expanded_macro(
        generator: Arc<Generator>,
        body: Morphism,
    ) -> Result<Self, CategoryError> {
        let ok = match (generator.macro_kind, &generator.cod) {
            (Some(MacroKind::Product), cod) => body.dom.is_unit() && &body.cod == cod,
            (Some(MacroKind::Exponential), TypeObject::Exponential { dom, cod }) => {
                &body.dom == dom.as_ref() && &body.cod == cod.as_ref()
            }
            _ => false,
        };
        if !ok {
            return Err(CategoryError::MalformedMacro(generator.name.clone()));
        }
        Ok(Morphism {
            dom: generator.dom.clone(),
            cod: generator.cod.clone(),
            term: Term::Macro {
                generator,
                body: Box::new(body),
            },
        })
    }

    pub(crate) fn macro_dagger(generator: Arc<Generator>, body: Morphism) -> Self {
        Morphism {
            dom: generator.cod.clone(),
            cod: generator.dom.clone(),
            term: Term::MacroDagger {
                generator,
                body: Box::new(body),
            },
        }
    }

    pub(crate) fn split(left: Morphism, right: Morphism) -> Result<Self, CategoryError> {
        if !left.cod.is_unit() || !right.cod.is_unit() {
            return Err(CategoryError::NonUnitDomain(format!(
                "{} / {}",
                left.cod, right.cod
            )));
        }
        Ok(Morphism {
            dom: TypeObject::product(left.dom.clone(), right.dom.clone()),
            cod: TypeObject::Unit,
            term: Term::Split(Box::new(left), Box::new(right)),
        })
    }

    /// Sequential composition `self ; next` (first `self`, then `next`).
    pub fn compose(self, next: Morphism) -> Result<Morphism, CategoryError> {
        if self.cod != next.dom {
            return Err(mismatch(&self.cod, &next.dom));
        }
        let dom = self.dom.clone();
        let mut factors = Vec::new();
        self.into_factors(&mut factors);
        next.into_factors(&mut factors);
        Ok(Morphism::from_factors(dom, factors))
    }

    /// Pairing of two morphisms out of the unit object.
    pub fn product(self, other: Morphism) -> Result<Morphism, CategoryError> {
        for m in [&self, &other] {
            if !m.dom.is_unit() {
                return Err(CategoryError::NonUnitDomain(m.dom.to_string()));
            }
        }
        Ok(Morphism {
            dom: TypeObject::Unit,
            cod: TypeObject::product(self.cod.clone(), other.cod.clone()),
            term: Term::Product(Box::new(self), Box::new(other)),
        })
    }

    fn into_factors(self, out: &mut Vec<Morphism>) {
        match self.term {
            Term::Identity => {}
            Term::Compose(a, b) => {
                a.into_factors(out);
                b.into_factors(out);
            }
            _ => out.push(self),
        }
    }

    fn from_factors(dom: TypeObject, factors: Vec<Morphism>) -> Morphism {
        let mut iter = factors.into_iter().rev();
        let Some(mut acc) = iter.next() else {
            return Morphism::identity(dom);
        };
        for f in iter {
            acc = Morphism {
                dom: f.dom.clone(),
                cod: acc.cod.clone(),
                term: Term::Compose(Box::new(f), Box::new(acc)),
            };
        }
        acc
    }

    pub fn term(&self) -> &Term {
        &self.term
    }

    pub fn dom(&self) -> &TypeObject {
        &self.dom
    }

    pub fn cod(&self) -> &TypeObject {
        &self.cod
    }

    pub fn is_identity(&self) -> bool {
        matches!(self.term, Term::Identity)
    }

    /// Top-level factors in execution order; empty for identities.
    pub fn factors(&self) -> Vec<&Morphism> {
        let mut out = Vec::new();
        fn walk<'a>(m: &'a Morphism, out: &mut Vec<&'a Morphism>) {
            match &m.term {
                Term::Identity => {}
                Term::Compose(a, b) => {
                    walk(a, out);
                    walk(b, out);
                }
                _ => out.push(m),
            }
        }
        walk(self, &mut out);
        out
    }

    /// Rebuilds the term bottom-up in normal form.
    pub fn normalize(&self) -> Morphism {
        let rebuilt_children = |m: &Morphism| -> Morphism {
            match &m.term {
                Term::Product(a, b) => Morphism {
                    term: Term::Product(Box::new(a.normalize()), Box::new(b.normalize())),
                    ..m.clone()
                },
                Term::Split(a, b) => Morphism {
                    term: Term::Split(Box::new(a.normalize()), Box::new(b.normalize())),
                    ..m.clone()
                },
                Term::Macro { generator, body } => Morphism {
                    term: Term::Macro {
                        generator: generator.clone(),
                        body: Box::new(body.normalize()),
                    },
                    ..m.clone()
                },
                Term::MacroDagger { generator, body } => Morphism {
                    term: Term::MacroDagger {
                        generator: generator.clone(),
                        body: Box::new(body.normalize()),
                    },
                    ..m.clone()
                },
                _ => m.clone(),
            }
        };
        let factors = self.factors().into_iter().map(rebuilt_children).collect();
        Morphism::from_factors(self.dom.clone(), factors)
    }

    /// Recomputes domain and codomain from the term and compares them with
    /// the stored ones.
    pub fn check_types(&self) -> Result<(), CategoryError> {
        let (dom, cod) = self.infer()?;
        if dom != self.dom {
            return Err(mismatch(&dom, &self.dom));
        }
        if cod != self.cod {
            return Err(mismatch(&cod, &self.cod));
        }
        Ok(())
    }

    fn infer(&self) -> Result<(TypeObject, TypeObject), CategoryError> {
        match &self.term {
            Term::Identity => {
                if self.dom != self.cod {
                    return Err(mismatch(&self.dom, &self.cod));
                }
                Ok((self.dom.clone(), self.cod.clone()))
            }
            Term::Gen(g) => Ok((g.dom.clone(), g.cod.clone())),
            Term::Dagger(g) => Ok((g.cod.clone(), g.dom.clone())),
            Term::Compose(a, b) => {
                a.check_types()?;
                b.check_types()?;
                if a.cod != b.dom {
                    return Err(mismatch(&a.cod, &b.dom));
                }
                Ok((a.dom.clone(), b.cod.clone()))
            }
            Term::Product(a, b) => {
                a.check_types()?;
                b.check_types()?;
                if !a.dom.is_unit() || !b.dom.is_unit() {
                    return Err(CategoryError::NonUnitDomain(a.dom.to_string()));
                }
                Ok((
                    TypeObject::Unit,
                    TypeObject::product(a.cod.clone(), b.cod.clone()),
                ))
            }
            Term::Split(a, b) => {
                a.check_types()?;
                b.check_types()?;
                if !a.cod.is_unit() || !b.cod.is_unit() {
                    return Err(CategoryError::NonUnitDomain(a.cod.to_string()));
                }
                Ok((
                    TypeObject::product(a.dom.clone(), b.dom.clone()),
                    TypeObject::Unit,
                ))
            }
            Term::Macro { generator, body } => {
                body.check_types()?;
                Morphism::expanded_macro(generator.clone(), (**body).clone())?;
                Ok((generator.dom.clone(), generator.cod.clone()))
            }
            Term::MacroDagger { generator, body } => {
                body.check_types()?;
                Ok((generator.cod.clone(), generator.dom.clone()))
            }
        }
    }
}

/// One entry of a generator chain.
#[derive(Debug, Clone, PartialEq)]
pub enum ChainItem {
    Gen {
        generator: Arc<Generator>,
        inverse: bool,
    },
    Pair {
        left: Vec<ChainItem>,
        right: Vec<ChainItem>,
        inverse: bool,
    },
    Macro {
        generator: Arc<Generator>,
        branches: Vec<Vec<ChainItem>>,
        inverse: bool,
    },
}

/// The generators of `m` in execution order, with nested branches for pairs
/// and expanded macros. Its length counts top-level steps.
pub fn generator_chain(m: &Morphism) -> Vec<ChainItem> {
    m.factors()
        .into_iter()
        .map(|f| match &f.term {
            Term::Gen(g) => ChainItem::Gen {
                generator: g.clone(),
                inverse: false,
            },
            Term::Dagger(g) => ChainItem::Gen {
                generator: g.clone(),
                inverse: true,
            },
            Term::Product(a, b) => ChainItem::Pair {
                left: generator_chain(a),
                right: generator_chain(b),
                inverse: false,
            },
            Term::Split(a, b) => ChainItem::Pair {
                left: generator_chain(a),
                right: generator_chain(b),
                inverse: true,
            },
            Term::Macro { generator, body } | Term::MacroDagger { generator, body } => {
                let inverse = matches!(f.term, Term::MacroDagger { .. });
                let branches = match &body.term {
                    Term::Product(a, b) | Term::Split(a, b) => {
                        vec![generator_chain(a), generator_chain(b)]
                    }
                    _ => vec![generator_chain(body)],
                };
                ChainItem::Macro {
                    generator: generator.clone(),
                    branches,
                    inverse,
                }
            }
            Term::Identity | Term::Compose(..) => unreachable!("factors are atomic"),
        })
        .collect()
}

fn write_chain(items: &[ChainItem], out: &mut String) {
    for (i, item) in items.iter().enumerate() {
        if i > 0 {
            out.push(';');
        }
        match item {
            ChainItem::Gen { generator, inverse } => {
                out.push_str(&generator.name);
                if *inverse {
                    out.push('†');
                }
            }
            ChainItem::Pair {
                left,
                right,
                inverse,
            } => {
                out.push('(');
                write_chain(left, out);
                out.push('|');
                write_chain(right, out);
                out.push(')');
                if *inverse {
                    out.push('†');
                }
            }
            ChainItem::Macro {
                generator,
                branches,
                inverse,
            } => {
                out.push_str(&generator.name);
                if *inverse {
                    out.push('†');
                }
                out.push('[');
                for (j, b) in branches.iter().enumerate() {
                    if j > 0 {
                        out.push('|');
                    }
                    write_chain(b, out);
                }
                out.push(']');
            }
        }
    }
}

/// Canonical text form of a morphism, e.g. `p;f` or `macro:P[p|p;f];h`.
/// Identities render as `id(A)`.
pub fn signature(m: &Morphism) -> String {
    let chain = generator_chain(m);
    if chain.is_empty() {
        return format!("id({})", m.dom);
    }
    let mut out = String::new();
    write_chain(&chain, &mut out);
    out
}
