//! The arrow graph `G′` and the biased-walk transition matrix
//! `P = softmax_rows((e^A + A·W) / β)`.

use std::collections::{HashMap, VecDeque};
use std::sync::Arc;

use thiserror::Error;

use crate::category::{CategorySpec, Generator, TypeObject};
use crate::numerics::{mat_exp, softmax_rows, Matrix, NumericsError, Real};

/// Logits are clamped to this range before the row softmax.
pub const LOGIT_CLAMP: f64 = 80.0;

const EXP_TOL: f64 = 1e-12;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum TransitionError {
    #[error("W has shape {found:?}, expected {expected:?}")]
    ShapeMismatch {
        expected: (usize, usize),
        found: (usize, usize),
    },
    #[error("beta must be positive, got {0}")]
    NonPositiveBeta(f64),
    #[error("W entries must be finite and nonnegative; found {value} at ({row}, {col})")]
    InvalidWeight { row: usize, col: usize, value: f64 },
    #[error("vertex {0} is not an object vertex")]
    NotAnObject(usize),
    #[error(transparent)]
    Numerics(#[from] NumericsError),
}

#[derive(Debug, Clone, PartialEq)]
pub enum Vertex {
    Object(TypeObject),
    Generator(Arc<Generator>),
}

/// `G′`: objects and generators are both vertices; each generator has one
/// in-edge from its domain and one out-edge to its codomain.
#[derive(Debug, Clone)]
pub struct ArrowGraph {
    spec: Arc<CategorySpec>,
    vertices: Vec<Vertex>,
    names: Vec<String>,
    index: HashMap<String, usize>,
    object_index: HashMap<TypeObject, usize>,
    successors: Vec<Vec<usize>>,
    adjacency: Matrix,
    exp_adjacency: Matrix,
    /// For each object vertex, which vertices can reach it.
    reaches: HashMap<usize, Vec<bool>>,
}

impl ArrowGraph {
    pub fn new(spec: Arc<CategorySpec>) -> Self {
        let mut vertices = Vec::new();
        let mut names = Vec::new();
        for o in spec.objects() {
            vertices.push(Vertex::Object(o.object.clone()));
            names.push(o.name.clone());
        }
        for g in spec.generators() {
            vertices.push(Vertex::Generator(g.clone()));
            names.push(g.name.clone());
        }
        let n = vertices.len();
        let object_index: HashMap<TypeObject, usize> = spec
            .objects()
            .iter()
            .enumerate()
            .map(|(i, o)| (o.object.clone(), i))
            .collect();
        let index = names
            .iter()
            .enumerate()
            .map(|(i, s)| (s.clone(), i))
            .collect();
        let mut successors = vec![Vec::new(); n];
        let mut adjacency = Matrix::zeros(n, n);
        let offset = spec.objects().len();
        for (k, g) in spec.generators().iter().enumerate() {
            let v = offset + k;
            let d = object_index[&g.dom];
            let c = object_index[&g.cod];
            successors[d].push(v);
            successors[v].push(c);
            adjacency[(d, v)] = 1.0;
            adjacency[(v, c)] = 1.0;
        }
        let exp_adjacency = mat_exp(&adjacency, EXP_TOL).expect("adjacency is square");

        let mut predecessors = vec![Vec::new(); n];
        for (v, succ) in successors.iter().enumerate() {
            for &s in succ {
                predecessors[s].push(v);
            }
        }
        let mut reaches = HashMap::new();
        for o in 0..offset {
            let mut seen = vec![false; n];
            seen[o] = true;
            let mut queue = VecDeque::from([o]);
            while let Some(v) = queue.pop_front() {
                for &p in &predecessors[v] {
                    if !seen[p] {
                        seen[p] = true;
                        queue.push_back(p);
                    }
                }
            }
            reaches.insert(o, seen);
        }

        ArrowGraph {
            spec,
            vertices,
            names,
            index,
            object_index,
            successors,
            adjacency,
            exp_adjacency,
            reaches,
        }
    }

    pub fn spec(&self) -> &Arc<CategorySpec> {
        &self.spec
    }

    pub fn len(&self) -> usize {
        self.vertices.len()
    }

    pub fn is_empty(&self) -> bool {
        self.vertices.is_empty()
    }

    pub fn vertices(&self) -> &[Vertex] {
        &self.vertices
    }

    pub fn vertex(&self, i: usize) -> &Vertex {
        &self.vertices[i]
    }

    pub fn name(&self, i: usize) -> &str {
        &self.names[i]
    }

    /// Vertex position by object or generator name.
    pub fn index_of(&self, name: &str) -> Option<usize> {
        self.index.get(name).copied()
    }

    pub fn object_vertex(&self, obj: &TypeObject) -> Option<usize> {
        self.object_index.get(obj).copied()
    }

    pub fn generator_vertex(&self, name: &str) -> Option<usize> {
        self.index_of(name)
            .filter(|&i| matches!(self.vertices[i], Vertex::Generator(_)))
    }

    pub fn is_object(&self, i: usize) -> bool {
        matches!(self.vertices.get(i), Some(Vertex::Object(_)))
    }

    pub fn generator(&self, i: usize) -> Option<&Arc<Generator>> {
        match &self.vertices[i] {
            Vertex::Generator(g) => Some(g),
            Vertex::Object(_) => None,
        }
    }

    /// Out-neighbours in `G′`: generator vertices for an object, the codomain
    /// object for a generator.
    pub fn successors(&self, i: usize) -> &[usize] {
        &self.successors[i]
    }

    /// The codomain object vertex of a generator vertex.
    pub fn cod_vertex(&self, generator_vertex: usize) -> usize {
        self.successors[generator_vertex][0]
    }

    pub fn adjacency(&self) -> &Matrix {
        &self.adjacency
    }

    /// The cached constant `e^A`.
    pub fn exp_adjacency(&self) -> &Matrix {
        &self.exp_adjacency
    }

    pub fn edge_count(&self) -> usize {
        self.successors.iter().map(Vec::len).sum()
    }

    /// Whether `dst` (an object vertex) can be reached from `from`.
    pub fn can_reach(&self, from: usize, dst: usize) -> bool {
        self.reaches.get(&dst).is_some_and(|r| r[from])
    }

    pub fn is_acyclic(&self) -> bool {
        let n = self.len();
        let mut indegree = vec![0usize; n];
        for succ in &self.successors {
            for &s in succ {
                indegree[s] += 1;
            }
        }
        let mut queue: VecDeque<usize> = (0..n).filter(|&v| indegree[v] == 0).collect();
        let mut visited = 0;
        while let Some(v) = queue.pop_front() {
            visited += 1;
            for &s in &self.successors[v] {
                indegree[s] -= 1;
                if indegree[s] == 0 {
                    queue.push_back(s);
                }
            }
        }
        visited == n
    }

    /// Object vertices with at least two out-arrows: the only places where
    /// the walk makes a real choice.
    pub fn choice_vertices(&self) -> Vec<usize> {
        (0..self.spec.objects().len())
            .filter(|&o| self.successors[o].len() >= 2)
            .collect()
    }

    /// Rows of `W` that influence some walk choice: `W[cod(a), ·]` for every
    /// arrow `a` leaving a choice vertex. Sorted and deduplicated.
    pub fn effective_w_rows(&self) -> Vec<usize> {
        let mut rows: Vec<usize> = self
            .choice_vertices()
            .into_iter()
            .flat_map(|o| self.successors[o].iter().map(|&a| self.cod_vertex(a)))
            .collect();
        rows.sort_unstable();
        rows.dedup();
        rows
    }
}

/// `(G′, e^A, W, β, P)`; immutable once built.
#[derive(Debug, Clone)]
pub struct TransitionModel {
    graph: Arc<ArrowGraph>,
    w: Matrix,
    beta: f64,
    p: Matrix,
}

/// Builds `P` for the given `W` and `β`.
pub fn transition_matrix(
    graph: Arc<ArrowGraph>,
    w: Matrix,
    beta: f64,
) -> Result<TransitionModel, TransitionError> {
    let n = graph.len();
    if w.shape() != (n, n) {
        return Err(TransitionError::ShapeMismatch {
            expected: (n, n),
            found: w.shape(),
        });
    }
    if !(beta > 0.0) || !beta.is_finite() {
        return Err(TransitionError::NonPositiveBeta(beta));
    }
    for i in 0..n {
        for j in 0..n {
            let v = w[(i, j)];
            if !(v >= 0.0) || !v.is_finite() {
                return Err(TransitionError::InvalidWeight {
                    row: i,
                    col: j,
                    value: v,
                });
            }
        }
    }
    let exp_a = graph.exp_adjacency();
    let mut logits = Matrix::zeros(n, n);
    for i in 0..n {
        for j in 0..n {
            let aw: f64 = graph.successors(i).iter().map(|&k| w[(k, j)]).sum();
            logits[(i, j)] = ((exp_a[(i, j)] + aw) / beta).clamp(-LOGIT_CLAMP, LOGIT_CLAMP);
        }
    }
    let p = softmax_rows(&logits, 1.0)?;
    Ok(TransitionModel { graph, w, beta, p })
}

impl TransitionModel {
    /// `W = 0`, `β = 1`.
    pub fn neutral(graph: Arc<ArrowGraph>) -> Self {
        let n = graph.len();
        transition_matrix(graph, Matrix::zeros(n, n), 1.0).expect("neutral parameters are valid")
    }

    pub fn graph(&self) -> &Arc<ArrowGraph> {
        &self.graph
    }

    pub fn w(&self) -> &Matrix {
        &self.w
    }

    pub fn beta(&self) -> f64 {
        self.beta
    }

    pub fn p(&self) -> &Matrix {
        &self.p
    }
}

/// `d_i = −ln P[i, dst]`, `+∞` where the probability underflows to zero.
pub fn intuitive_distance(tm: &TransitionModel, dst: usize) -> Result<Vec<f64>, TransitionError> {
    if !tm.graph.is_object(dst) {
        return Err(TransitionError::NotAnObject(dst));
    }
    Ok((0..tm.graph.len())
        .map(|i| {
            let p = tm.p[(i, dst)];
            if p > 0.0 {
                -p.ln()
            } else {
                f64::INFINITY
            }
        })
        .collect())
}

/// `ln P[a, dst]` for one row, computed from a flat row-major `W` over any
/// scalar type so hyper-parameter gradients can flow through it.
pub fn log_p_entry<R: Real>(graph: &ArrowGraph, w: &[R], beta: R, a: usize, dst: usize) -> R {
    let n = graph.len();
    let exp_a = graph.exp_adjacency().row(a);
    let succ = graph.successors(a);
    let logits: Vec<R> = (0..n)
        .map(|j| {
            let raw = if succ.is_empty() {
                beta.lift(exp_a[j])
            } else {
                R::sum(&succ.iter().map(|&k| w[k * n + j]).collect::<Vec<_>>()) + exp_a[j]
            };
            (raw / beta).clamp(-LOGIT_CLAMP, LOGIT_CLAMP)
        })
        .collect();
    logits[dst] - R::log_sum_exp(&logits)
}

/// Log-probability of picking `candidates[chosen]` when scores `P[a, dst]`
/// are renormalised over the candidates.
pub fn choice_logprob_generic<R: Real>(
    graph: &ArrowGraph,
    w: &[R],
    beta: R,
    candidates: &[usize],
    chosen: usize,
    dst: usize,
) -> R {
    let scores: Vec<R> = candidates
        .iter()
        .map(|&a| log_p_entry(graph, w, beta, a, dst))
        .collect();
    scores[chosen] - R::log_sum_exp(&scores)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::category::fixtures::*;

    fn graph(text: &str) -> Arc<ArrowGraph> {
        Arc::new(ArrowGraph::new(Arc::new(spec(text))))
    }

    fn edges(g: &ArrowGraph) -> Vec<(String, String)> {
        let mut out = Vec::new();
        for i in 0..g.len() {
            for &j in g.successors(i) {
                out.push((g.name(i).to_string(), g.name(j).to_string()));
            }
        }
        out.sort();
        out
    }

    #[test]
    fn diamond_arrow_graph() {
        let g = graph(DIAMOND);
        assert_eq!(g.len(), 6);
        assert_eq!(g.edge_count(), 6);
        let expected: Vec<(String, String)> = [
            ("X2", "f"),
            ("X2", "g"),
            ("f", "X4"),
            ("g", "X4"),
            ("p", "X2"),
            ("unit", "p"),
        ]
        .iter()
        .map(|(a, b)| (a.to_string(), b.to_string()))
        .collect();
        assert_eq!(edges(&g), expected);
        assert_ne!(g.index_of("f"), g.index_of("g"));
        for i in 3..6 {
            assert_eq!(g.adjacency().row(i).iter().sum::<f64>(), 1.0);
            assert_eq!((0..6).map(|r| g.adjacency()[(r, i)]).sum::<f64>(), 1.0);
        }
    }

    #[test]
    fn single_generator_graph() {
        let g = graph(
            r#"{"objects": [{"name": "X", "kind": "space", "dim": 1}],
                "generators": [{"name": "p", "dom": "unit", "cod": "X", "primitive": {"kind": "gaussian-prior"}}],
                "data_object": "X"}"#,
        );
        assert_eq!(g.len(), 3);
        assert_eq!(g.edge_count(), 2);
        let tm = TransitionModel::neutral(g.clone());
        let d = intuitive_distance(&tm, g.index_of("X").unwrap()).unwrap();
        assert!(d[g.index_of("p").unwrap()].is_finite());
    }

    #[test]
    fn exp_adjacency_counts_length_four_paths() {
        let g = graph(DIAMOND);
        let v = g.exp_adjacency()[(0, g.index_of("X4").unwrap())];
        assert!((v - 1.0 / 12.0).abs() < 1e-15);
    }

    #[test]
    fn neutral_diamond_is_symmetric() {
        let g = graph(DIAMOND);
        let tm = TransitionModel::neutral(g.clone());
        let (f, gg, x4) = (
            g.index_of("f").unwrap(),
            g.index_of("g").unwrap(),
            g.index_of("X4").unwrap(),
        );
        assert_eq!(tm.p()[(f, x4)], tm.p()[(gg, x4)]);
        let d = intuitive_distance(&tm, x4).unwrap();
        assert_eq!(d[f], d[gg]);
        assert!(intuitive_distance(&tm, f).is_err());
    }

    #[test]
    fn p_matches_reference_softmax_of_series() {
        let g = graph(DIAMOND);
        let tm = TransitionModel::neutral(g.clone());
        // reference: e^A from a plain series, then row softmax by hand
        let a = g.adjacency();
        let mut term = Matrix::identity(6);
        let mut sum = Matrix::identity(6);
        for k in 1..10 {
            term = term.matmul(a).unwrap().scale(1.0 / k as f64);
            sum = sum.add(&term).unwrap();
        }
        for i in 0..6 {
            let z: f64 = sum.row(i).iter().map(|v| v.exp()).sum();
            for j in 0..6 {
                assert!((tm.p()[(i, j)] - sum[(i, j)].exp() / z).abs() < 1e-14);
            }
        }
    }

    #[test]
    fn raising_w_toward_f_shortens_f() {
        // P_f/P_g = Z_g/Z_f and Z_g − Z_f ∝ e^{W[X4,g]/β} − e^{W[X4,f]/β}
        let g = graph(DIAMOND);
        let (f, gg, x4) = (
            g.index_of("f").unwrap(),
            g.index_of("g").unwrap(),
            g.index_of("X4").unwrap(),
        );
        let mut w = Matrix::zeros(6, 6);
        w[(x4, gg)] = 5.0;
        let tm = transition_matrix(g.clone(), w, 1.0).unwrap();
        let d = intuitive_distance(&tm, x4).unwrap();
        assert!(d[f] < d[gg]);
    }

    #[test]
    fn errors() {
        let g = graph(DIAMOND);
        assert!(matches!(
            transition_matrix(g.clone(), Matrix::zeros(5, 6), 1.0),
            Err(TransitionError::ShapeMismatch { .. })
        ));
        assert!(matches!(
            transition_matrix(g.clone(), Matrix::zeros(6, 6), 0.0),
            Err(TransitionError::NonPositiveBeta(_))
        ));
        let mut w = Matrix::zeros(6, 6);
        w[(1, 2)] = -0.5;
        assert!(matches!(
            transition_matrix(g, w, 1.0),
            Err(TransitionError::InvalidWeight { .. })
        ));
    }

    #[test]
    fn exp_a_is_never_touched() {
        let g = graph(DIAMOND);
        let before: Vec<u64> = g
            .exp_adjacency()
            .as_slice()
            .iter()
            .map(|v| v.to_bits())
            .collect();
        for k in 0..20 {
            let w = Matrix::filled(6, 6, k as f64 * 0.3);
            let tm = transition_matrix(g.clone(), w, 0.5 + k as f64).unwrap();
            assert!(Arc::ptr_eq(tm.graph(), &g));
        }
        let after: Vec<u64> = g
            .exp_adjacency()
            .as_slice()
            .iter()
            .map(|v| v.to_bits())
            .collect();
        assert_eq!(before, after);
    }

    #[test]
    fn generic_entry_matches_matrix() {
        let g = graph(WITH_PRODUCT);
        let n = g.len();
        let w: Vec<f64> = (0..n * n).map(|i| (i % 7) as f64 * 0.2).collect();
        let tm = transition_matrix(g.clone(), Matrix::from_vec(n, n, w.clone()), 0.7).unwrap();
        for a in 0..n {
            for dst in 0..n {
                let lp = log_p_entry(&g, &w, 0.7, a, dst);
                assert!((lp - tm.p()[(a, dst)].ln()).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn effective_rows_of_diamond() {
        let g = graph(DIAMOND);
        assert_eq!(g.choice_vertices(), vec![g.index_of("X2").unwrap()]);
        assert_eq!(g.effective_w_rows(), vec![g.index_of("X4").unwrap()]);
        assert!(graph(CHAIN).effective_w_rows().is_empty());
    }
}
