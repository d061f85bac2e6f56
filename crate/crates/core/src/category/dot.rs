use std::fmt::Write;

use super::morphism::{Morphism, Term};
use super::MacroKind;

struct Renderer {
    out: String,
    next: usize,
}

impl Renderer {
    fn node(&mut self, label: &str, attrs: &str) -> usize {
        let id = self.next;
        self.next += 1;
        let label = label.replace('\\', "\\\\").replace('"', "\\\"");
        writeln!(self.out, "  n{id} [label=\"{label}\"{attrs}];").unwrap();
        id
    }

    fn edge(&mut self, from: usize, to: usize, attrs: &str) {
        writeln!(self.out, "  n{from} -> n{to}{attrs};").unwrap();
    }

    fn render(&mut self, m: &Morphism, inputs: Vec<usize>) -> Vec<usize> {
        match m.term() {
            Term::Identity => inputs,
            Term::Compose(a, b) => {
                let mid = self.render(a, inputs);
                self.render(b, mid)
            }
            Term::Gen(g) | Term::Dagger(g) => {
                let mark = if matches!(m.term(), Term::Dagger(_)) {
                    "†"
                } else {
                    ""
                };
                let id = self.node(&format!("{}{mark}: {}→{}", g.name, m.dom(), m.cod()), "");
                for i in inputs {
                    self.edge(i, id, "");
                }
                vec![id]
            }
            Term::Product(a, b) | Term::Split(a, b) => {
                let mut outs = self.render(a, inputs.clone());
                outs.extend(self.render(b, inputs));
                outs
            }
            Term::Macro { generator, body } => {
                let label = format!("{}: {}→{}", generator.name, m.dom(), m.cod());
                if generator.macro_kind == Some(MacroKind::Exponential) {
                    // the inner morphism is a value, not a data dependency
                    let inner = self.render(body, Vec::new());
                    let id = self.node(&label, ", shape=box");
                    for i in inputs {
                        self.edge(i, id, "");
                    }
                    for i in inner {
                        self.edge(i, id, " [style=dashed]");
                    }
                    vec![id]
                } else {
                    let outs = self.render(body, inputs);
                    let id = self.node(&label, ", shape=box");
                    for o in outs {
                        self.edge(o, id, "");
                    }
                    vec![id]
                }
            }
            Term::MacroDagger { generator, body } => {
                let label = format!("{}†: {}→{}", generator.name, m.dom(), m.cod());
                let id = self.node(&label, ", shape=box");
                for i in inputs {
                    self.edge(i, id, "");
                }
                self.render(body, vec![id])
            }
        }
    }
}

/// Renders a morphism as a DOT digraph read from top (sources) to bottom.
/// The output depends only on the term, so equal morphisms render to
/// byte-identical text.
pub fn to_dot(m: &Morphism) -> String {
    let mut r = Renderer {
        out: String::from("digraph morphism {\n  rankdir=TB;\n  node [shape=ellipse];\n"),
        next: 0,
    };
    if m.is_identity() {
        r.node(&m.dom().to_string(), ", shape=plaintext");
    } else {
        r.render(m, Vec::new());
    }
    r.out.push_str("}\n");
    r.out
}
