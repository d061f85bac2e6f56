//! JSON spec-file reader and writer.
//!
//! ```json
//! {
//!   "objects": [
//!     {"name": "X2", "kind": "space", "dim": 2},
//!     {"name": "P", "kind": "product", "factors": ["X2", "X2"]},
//!     {"name": "E", "kind": "exponential", "dom": "X2", "cod": "X2"}
//!   ],
//!   "generators": [
//!     {"name": "p", "dom": "unit", "cod": "X2", "primitive": {"kind": "gaussian-prior"}}
//!   ],
//!   "data_object": "X2"
//! }
//! ```

use std::collections::HashMap;

use serde::{Deserialize, Serialize};

use super::{
    check_identifier, CategoryError, CategorySpec, Generator, NamedObject, TypeObject, UNIT_NAME,
};
use crate::model::PrimitiveKind;

#[derive(Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct SpecFile {
    objects: Vec<ObjectDecl>,
    generators: Vec<GeneratorDecl>,
    data_object: String,
}

#[derive(Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct ObjectDecl {
    name: String,
    kind: ObjectKind,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    dim: Option<usize>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    factors: Option<[String; 2]>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    dom: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    cod: Option<String>,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
enum ObjectKind {
    Space,
    Product,
    Exponential,
}

#[derive(Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct GeneratorDecl {
    name: String,
    dom: String,
    cod: String,
    primitive: PrimitiveKind,
}

/// Parses and validates a spec file.
pub fn parse_spec(text: &str) -> Result<CategorySpec, CategoryError> {
    let file: SpecFile = serde_json::from_str(text).map_err(|e| CategoryError::Syntax {
        line: e.line(),
        column: e.column(),
        message: e.to_string(),
    })?;

    let mut decls: HashMap<&str, &ObjectDecl> = HashMap::new();
    for d in &file.objects {
        check_identifier(&d.name)?;
        if d.name == UNIT_NAME || decls.insert(d.name.as_str(), d).is_some() {
            return Err(CategoryError::DuplicateName(d.name.clone()));
        }
    }

    let mut resolver = Resolver {
        decls: &decls,
        done: HashMap::new(),
        in_progress: Vec::new(),
    };
    let mut objects = Vec::with_capacity(file.objects.len());
    for d in &file.objects {
        let object = resolver.resolve(&d.name, "the object list")?;
        objects.push(NamedObject {
            name: d.name.clone(),
            object,
        });
    }

    let mut generators = Vec::with_capacity(file.generators.len());
    for g in &file.generators {
        let context = format!("generator `{}`", g.name);
        generators.push(Generator {
            name: g.name.clone(),
            dom: resolver.resolve(&g.dom, &context)?,
            cod: resolver.resolve(&g.cod, &context)?,
            primitive: Some(g.primitive.clone()),
            macro_kind: None,
        });
    }

    let data_object = resolver
        .resolve(&file.data_object, "data_object")
        .map_err(|_| CategoryError::MissingDataObject(file.data_object.clone()))?;

    CategorySpec::new(objects, generators, data_object)
}

struct Resolver<'a> {
    decls: &'a HashMap<&'a str, &'a ObjectDecl>,
    done: HashMap<String, TypeObject>,
    in_progress: Vec<String>,
}

impl Resolver<'_> {
    fn resolve(&mut self, name: &str, context: &str) -> Result<TypeObject, CategoryError> {
        if name == UNIT_NAME {
            return Ok(TypeObject::Unit);
        }
        if let Some(o) = self.done.get(name) {
            return Ok(o.clone());
        }
        let decl = *self
            .decls
            .get(name)
            .ok_or_else(|| CategoryError::UnknownObject {
                name: name.to_string(),
                context: context.to_string(),
            })?;
        if self.in_progress.iter().any(|n| n == name) {
            return Err(CategoryError::InvalidObject {
                name: name.to_string(),
                reason: "object is defined in terms of itself".into(),
            });
        }
        self.in_progress.push(name.to_string());
        let invalid = |reason: &str| CategoryError::InvalidObject {
            name: name.to_string(),
            reason: reason.to_string(),
        };
        let own_context = format!("object `{name}`");
        let object = match decl.kind {
            ObjectKind::Space => {
                if decl.factors.is_some() || decl.dom.is_some() || decl.cod.is_some() {
                    return Err(invalid("a space takes only `dim`"));
                }
                let dim = decl.dim.ok_or_else(|| invalid("a space needs `dim`"))?;
                TypeObject::space(name, dim)
            }
            ObjectKind::Product => {
                if decl.dim.is_some() || decl.dom.is_some() || decl.cod.is_some() {
                    return Err(invalid("a product takes only `factors`"));
                }
                let [a, b] = decl
                    .factors
                    .as_ref()
                    .ok_or_else(|| invalid("a product needs `factors`"))?;
                let a = self.resolve(a, &own_context)?;
                let b = self.resolve(b, &own_context)?;
                TypeObject::product(a, b)
            }
            ObjectKind::Exponential => {
                if decl.dim.is_some() || decl.factors.is_some() {
                    return Err(invalid("an exponential takes only `dom` and `cod`"));
                }
                let (Some(dom), Some(cod)) = (&decl.dom, &decl.cod) else {
                    return Err(invalid("an exponential needs `dom` and `cod`"));
                };
                let dom = self.resolve(dom, &own_context)?;
                let cod = self.resolve(cod, &own_context)?;
                TypeObject::exponential(dom, cod)
            }
        };
        self.in_progress.pop();
        self.done.insert(name.to_string(), object.clone());
        Ok(object)
    }
}

/// Writes a spec back to the file format. Macro generators are omitted since
/// parsing recreates them.
pub fn serialize_spec(spec: &CategorySpec) -> String {
    let name_of = |o: &TypeObject| -> String {
        spec.object_name(o)
            .expect("validated spec only references declared objects")
            .to_string()
    };
    let objects = spec
        .objects()
        .iter()
        .filter(|o| !o.object.is_unit())
        .map(|o| match &o.object {
            TypeObject::Space { dim, .. } => ObjectDecl {
                name: o.name.clone(),
                kind: ObjectKind::Space,
                dim: Some(*dim),
                factors: None,
                dom: None,
                cod: None,
            },
            TypeObject::Product(a, b) => ObjectDecl {
                name: o.name.clone(),
                kind: ObjectKind::Product,
                dim: None,
                factors: Some([name_of(a), name_of(b)]),
                dom: None,
                cod: None,
            },
            TypeObject::Exponential { dom, cod } => ObjectDecl {
                name: o.name.clone(),
                kind: ObjectKind::Exponential,
                dim: None,
                factors: None,
                dom: Some(name_of(dom)),
                cod: Some(name_of(cod)),
            },
            TypeObject::Unit => unreachable!("filtered above"),
        })
        .collect();
    let generators = spec
        .user_generators()
        .map(|g| GeneratorDecl {
            name: g.name.clone(),
            dom: name_of(&g.dom),
            cod: name_of(&g.cod),
            primitive: g
                .primitive
                .clone()
                .expect("user generators carry primitives"),
        })
        .collect();
    let file = SpecFile {
        objects,
        generators,
        data_object: name_of(spec.data_object()),
    };
    serde_json::to_string_pretty(&file).expect("spec serialises")
}
