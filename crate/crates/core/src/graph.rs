//! View graphs, multi-view datasets and GCN propagation operators.
//!
//! Adjacencies are stored dense. That is fine for the target scale (a few
//! thousand nodes per view); beyond that the `N²` memory of the overall graph
//! becomes the limit.

use std::collections::{BTreeMap, BTreeSet};
use std::fmt;

use crate::autodiff::{Tape, Var};
use crate::error::{Error, Result};
use crate::tensor::Tensor;

/// Undirected graph over the nodes of one view. Edges are stored once as
/// `(low, high)` pairs; self-loops are not allowed.
#[derive(Debug, Clone, PartialEq)]
pub struct ViewGraph {
    n_nodes: usize,
    edges: BTreeSet<(usize, usize)>,
    node_names: Vec<String>,
}

impl ViewGraph {
    pub fn new(
        node_names: Vec<String>,
        edges: impl IntoIterator<Item = (usize, usize)>,
    ) -> Result<Self> {
        let n_nodes = node_names.len();
        let mut set = BTreeSet::new();
        for (a, b) in edges {
            if a >= n_nodes || b >= n_nodes {
                return Err(Error::Invalid(format!(
                    "edge ({a}, {b}) out of range for {n_nodes} nodes"
                )));
            }
            if a == b {
                return Err(Error::Invalid(format!(
                    "self-loop on node {a} ({})",
                    node_names[a]
                )));
            }
            set.insert((a.min(b), a.max(b)));
        }
        Ok(Self {
            n_nodes,
            edges: set,
            node_names,
        })
    }

    /// Graph with generated names `prefix0, prefix1, ...`.
    pub fn with_generated_names(
        prefix: &str,
        n_nodes: usize,
        edges: impl IntoIterator<Item = (usize, usize)>,
    ) -> Result<Self> {
        Self::new((0..n_nodes).map(|i| format!("{prefix}{i}")).collect(), edges)
    }

    pub fn n_nodes(&self) -> usize {
        self.n_nodes
    }

    pub fn n_edges(&self) -> usize {
        self.edges.len()
    }

    pub fn edges(&self) -> impl Iterator<Item = (usize, usize)> + '_ {
        self.edges.iter().copied()
    }

    pub fn has_edge(&self, a: usize, b: usize) -> bool {
        self.edges.contains(&(a.min(b), a.max(b)))
    }

    pub fn node_names(&self) -> &[String] {
        &self.node_names
    }

    /// Fraction of the `n(n−1)/2` possible edges that are present.
    pub fn density(&self) -> f64 {
        let n = self.n_nodes as f64;
        if self.n_nodes < 2 {
            0.0
        } else {
            self.edges.len() as f64 / (n * (n - 1.0) / 2.0)
        }
    }

    /// Dense symmetric 0/1 adjacency with a zero diagonal.
    pub fn adjacency(&self) -> Tensor {
        let n = self.n_nodes;
        let mut t = Tensor::zeros(&[n, n]);
        for &(a, b) in &self.edges {
            t.set(a, b, 1.0);
            t.set(b, a, 1.0);
        }
        t
    }

    /// Same nodes, with `removed` edges dropped.
    pub fn without_edges(&self, removed: &BTreeSet<(usize, usize)>) -> ViewGraph {
        ViewGraph {
            n_nodes: self.n_nodes,
            edges: self.edges.difference(removed).copied().collect(),
            node_names: self.node_names.clone(),
        }
    }

    /// Applies `perm` to node indices: old node `i` becomes node `perm[i]`.
    pub fn permuted(&self, perm: &[usize]) -> ViewGraph {
        let mut names = vec![String::new(); self.n_nodes];
        for (i, &p) in perm.iter().enumerate() {
            names[p] = self.node_names[i].clone();
        }
        ViewGraph {
            n_nodes: self.n_nodes,
            edges: self
                .edges
                .iter()
                .map(|&(a, b)| (perm[a].min(perm[b]), perm[a].max(perm[b])))
                .collect(),
            node_names: names,
        }
    }
}

/// One node-attributed graph.
#[derive(Debug, Clone, PartialEq)]
pub struct View {
    pub name: String,
    pub graph: ViewGraph,
    /// `N × D`, one row per node, one column per sample.
    pub attributes: Tensor,
}

impl View {
    pub fn n_nodes(&self) -> usize {
        self.graph.n_nodes()
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct MultiViewDataset {
    views: Vec<View>,
    sample_dim: usize,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub enum ViolationKind {
    NoViews,
    EmptyView,
    SampleDimMismatch,
    RowCountMismatch,
    NonFinite,
    DuplicateViewName,
}

/// First problem found by [`MultiViewDataset::validate`].
#[derive(Debug, Clone, PartialEq)]
pub struct Violation {
    pub kind: ViolationKind,
    pub view: Option<String>,
    pub node: Option<String>,
    pub message: String,
}

impl fmt::Display for Violation {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.message)?;
        if let Some(v) = &self.view {
            write!(f, " (view {v}")?;
            if let Some(n) = &self.node {
                write!(f, ", node {n}")?;
            }
            f.write_str(")")?;
        }
        Ok(())
    }
}

impl MultiViewDataset {
    /// Wraps views without checking them; see [`Self::validate`].
    pub fn new_unchecked(views: Vec<View>) -> Self {
        let sample_dim = views.first().map_or(0, |v| v.attributes.cols());
        Self { views, sample_dim }
    }

    pub fn new(views: Vec<View>) -> Result<Self> {
        let d = Self::new_unchecked(views);
        d.validate().map_err(|v| Error::Dataset(v.to_string()))?;
        Ok(d)
    }

    pub fn views(&self) -> &[View] {
        &self.views
    }

    pub fn view(&self, v: usize) -> &View {
        &self.views[v]
    }

    pub fn n_views(&self) -> usize {
        self.views.len()
    }

    pub fn sample_dim(&self) -> usize {
        self.sample_dim
    }

    pub fn view_index(&self, name: &str) -> Option<usize> {
        self.views.iter().position(|v| v.name == name)
    }

    /// Checks shared sample dimension, attribute shapes and finiteness.
    pub fn validate(&self) -> std::result::Result<(), Violation> {
        let violation = |kind, view: Option<&View>, node: Option<&str>, message: String| Violation {
            kind,
            view: view.map(|v| v.name.clone()),
            node: node.map(str::to_owned),
            message,
        };
        if self.views.is_empty() {
            return Err(violation(ViolationKind::NoViews, None, None, "no views".into()));
        }
        let mut names = BTreeSet::new();
        for view in &self.views {
            if !names.insert(view.name.as_str()) {
                return Err(violation(
                    ViolationKind::DuplicateViewName,
                    Some(view),
                    None,
                    "duplicate view name".into(),
                ));
            }
            if view.n_nodes() == 0 {
                return Err(violation(
                    ViolationKind::EmptyView,
                    Some(view),
                    None,
                    "view has no nodes".into(),
                ));
            }
            let a = &view.attributes;
            if a.rank() != 2 || a.rows() != view.n_nodes() {
                return Err(violation(
                    ViolationKind::RowCountMismatch,
                    Some(view),
                    None,
                    format!(
                        "attribute shape {:?} does not match {} nodes",
                        a.shape(),
                        view.n_nodes()
                    ),
                ));
            }
            if a.cols() != self.sample_dim {
                return Err(violation(
                    ViolationKind::SampleDimMismatch,
                    Some(view),
                    None,
                    format!(
                        "sample dimension mismatch: {} vs {}",
                        a.cols(),
                        self.sample_dim
                    ),
                ));
            }
            for i in 0..a.rows() {
                if let Some(j) = a.row(i).iter().position(|x| !x.is_finite()) {
                    return Err(violation(
                        ViolationKind::NonFinite,
                        Some(view),
                        Some(&view.graph.node_names()[i]),
                        format!("non-finite attribute in sample column {j}"),
                    ));
                }
            }
        }
        Ok(())
    }

    /// Keeps only the given sample columns in every view.
    pub fn with_samples(&self, cols: &[usize]) -> Self {
        let views = self
            .views
            .iter()
            .map(|v| View {
                name: v.name.clone(),
                graph: v.graph.clone(),
                attributes: v.attributes.select_cols(cols),
            })
            .collect();
        Self::new_unchecked(views)
    }
}

/// `D̃^{-1/2}(A + I)D̃^{-1/2}` for a plain view graph.
#[derive(Debug, Clone, PartialEq)]
pub struct NormalizedAdjacency(pub Tensor);

impl NormalizedAdjacency {
    pub fn matrix(&self) -> &Tensor {
        &self.0
    }
}

pub fn normalize_adjacency(g: &ViewGraph) -> NormalizedAdjacency {
    let mut tape = Tape::new();
    let a = tape.constant(g.adjacency());
    let out = normalize_on_tape(&mut tape, a).expect("square adjacency with self-loops");
    NormalizedAdjacency(tape.value(out).clone())
}

/// Symmetric GCN normalization of a (possibly soft) square adjacency on the
/// tape. Degrees are row sums of `A + I`, so soft entries carry gradient.
pub fn normalize_on_tape(tape: &mut Tape, adj: Var) -> Result<Var> {
    let shape = tape.shape(adj).to_vec();
    if shape.len() != 2 || shape[0] != shape[1] {
        return Err(Error::Invalid(format!(
            "adjacency must be square, got {shape:?}"
        )));
    }
    let n = shape[0];
    let eye = tape.constant(Tensor::eye(n));
    let with_loops = tape.add(adj, eye)?;
    let deg = tape.sum(with_loops, Some(1))?;
    let inv_sqrt = tape.powf(deg, -0.5)?;
    let as_col = tape.reshape(inv_sqrt, &[n, 1])?;
    let rows_scaled = tape.mul(with_loops, as_col)?;
    tape.mul(rows_scaled, inv_sqrt)
}

/// Block adjacency over the nodes of all views, living on a tape.
#[derive(Debug, Clone)]
pub struct OverallGraph {
    pub matrix: Var,
    offsets: Vec<usize>,
    sizes: Vec<usize>,
}

impl OverallGraph {
    pub fn offsets(&self) -> &[usize] {
        &self.offsets
    }

    pub fn n_nodes(&self) -> usize {
        self.sizes.iter().sum()
    }

    /// Copy of block `(v, w)` of the assembled matrix.
    pub fn block(&self, tape: &Tape, v: usize, w: usize) -> Tensor {
        let m = tape.value(self.matrix);
        let rows: Vec<usize> = (self.offsets[v]..self.offsets[v] + self.sizes[v]).collect();
        let cols: Vec<usize> = (self.offsets[w]..self.offsets[w] + self.sizes[w]).collect();
        m.select_rows(&rows).select_cols(&cols)
    }

    pub fn normalized(&self, tape: &mut Tape) -> Result<Var> {
        normalize_on_tape(tape, self.matrix)
    }
}

/// Joins view adjacencies (diagonal blocks) with cross-view blocks.
///
/// `cross` is keyed by `(v, w)` with `v != w`; each block has shape
/// `N_v × N_w` and its mirror is filled with the transpose. Missing pairs are
/// zero.
pub fn assemble_overall(
    tape: &mut Tape,
    views: &[&ViewGraph],
    cross: &BTreeMap<(usize, usize), Var>,
) -> Result<OverallGraph> {
    let sizes: Vec<usize> = views.iter().map(|g| g.n_nodes()).collect();
    let mut offsets = Vec::with_capacity(sizes.len());
    let mut acc = 0;
    for &s in &sizes {
        offsets.push(acc);
        acc += s;
    }
    for (&(v, w), &blk) in cross {
        if v == w || v >= views.len() || w >= views.len() {
            return Err(Error::Invalid(format!("invalid cross block key ({v}, {w})")));
        }
        if cross.contains_key(&(w, v)) && v > w {
            return Err(Error::Invalid(format!(
                "cross blocks ({w}, {v}) and ({v}, {w}) both given"
            )));
        }
        if tape.shape(blk) != [sizes[v], sizes[w]] {
            return Err(Error::Invalid(format!(
                "cross block for views ({v}, {w}) has shape {:?}, expected [{}, {}]",
                tape.shape(blk),
                sizes[v],
                sizes[w]
            )));
        }
    }
    let mut row_blocks = Vec::with_capacity(views.len());
    for v in 0..views.len() {
        let mut parts = Vec::with_capacity(views.len());
        for w in 0..views.len() {
            let part = if v == w {
                tape.constant(views[v].adjacency())
            } else if let Some(&blk) = cross.get(&(v, w)) {
                blk
            } else if let Some(&blk) = cross.get(&(w, v)) {
                tape.transpose(blk)?
            } else {
                tape.constant(Tensor::zeros(&[sizes[v], sizes[w]]))
            };
            parts.push(part);
        }
        row_blocks.push(tape.concat_cols(&parts)?);
    }
    let matrix = tape.concat_rows(&row_blocks)?;
    Ok(OverallGraph {
        matrix,
        offsets,
        sizes,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn path3() -> ViewGraph {
        ViewGraph::with_generated_names("n", 3, [(0, 1), (1, 2)]).unwrap()
    }

    #[test]
    fn isolated_node_normalizes_to_one() {
        let g = ViewGraph::with_generated_names("a", 1, []).unwrap();
        assert_eq!(normalize_adjacency(&g).0.data(), &[1.0]);
    }

    #[test]
    fn connected_pair_is_all_half() {
        let g = ViewGraph::with_generated_names("a", 2, [(0, 1)]).unwrap();
        for &v in normalize_adjacency(&g).0.data() {
            assert!((v - 0.5).abs() < 1e-15);
        }
    }

    #[test]
    fn regular_graph_rows_sum_to_one() {
        let cycle = ViewGraph::with_generated_names("c", 5, (0..5).map(|i| (i, (i + 1) % 5))).unwrap();
        let a = normalize_adjacency(&cycle).0;
        for i in 0..5 {
            assert!((a.row(i).iter().sum::<f64>() - 1.0).abs() < 1e-12);
        }
    }

    #[test]
    fn normalization_matches_hand_path() {
        // Degrees with self loops: 2, 3, 2.
        let a = normalize_adjacency(&path3()).0;
        let (d0, d1) = (2f64, 3f64);
        assert!((a.at(0, 0) - 1.0 / d0).abs() < 1e-15);
        assert!((a.at(0, 1) - 1.0 / (d0 * d1).sqrt()).abs() < 1e-15);
        assert!((a.at(1, 1) - 1.0 / d1).abs() < 1e-15);
        assert_eq!(a.at(0, 2), 0.0);
    }

    #[test]
    fn self_loops_and_range_rejected() {
        assert!(ViewGraph::with_generated_names("x", 3, [(1, 1)]).is_err());
        assert!(ViewGraph::with_generated_names("x", 3, [(0, 3)]).is_err());
    }

    #[test]
    fn reversed_edges_dedup() {
        let g = ViewGraph::with_generated_names("x", 3, [(0, 1), (1, 0)]).unwrap();
        assert_eq!(g.n_edges(), 1);
    }

    #[test]
    fn assemble_shapes_and_mirror() {
        let g1 = path3();
        let g2 = ViewGraph::with_generated_names("m", 2, [(0, 1)]).unwrap();
        let mut tape = Tape::new();
        let blk = Tensor::from_rows(&[vec![0.1, 0.2], vec![0.3, 0.4], vec![0.5, 0.6]]).unwrap();
        let b = tape.constant(blk.clone());
        let cross = BTreeMap::from([((0, 1), b)]);
        let og = assemble_overall(&mut tape, &[&g1, &g2], &cross).unwrap();
        assert_eq!(tape.shape(og.matrix), &[5, 5]);
        assert_eq!(og.offsets(), &[0, 3]);
        assert_eq!(og.block(&tape, 0, 1), blk);
        assert_eq!(og.block(&tape, 1, 0), blk.transpose().unwrap());
        assert_eq!(og.block(&tape, 0, 0), g1.adjacency());
        assert_eq!(og.block(&tape, 1, 1), g2.adjacency());
    }

    #[test]
    fn zero_cross_is_disjoint_union() {
        let g1 = path3();
        let g2 = ViewGraph::with_generated_names("m", 2, [(0, 1)]).unwrap();
        let mut tape = Tape::new();
        let og = assemble_overall(&mut tape, &[&g1, &g2], &BTreeMap::new()).unwrap();
        let norm = og.normalized(&mut tape).unwrap();
        let full = tape.value(norm).clone();
        let a1 = normalize_adjacency(&g1).0;
        for i in 0..3 {
            for j in 0..3 {
                assert_eq!(full.at(i, j), a1.at(i, j));
            }
            for j in 3..5 {
                assert_eq!(full.at(i, j), 0.0);
            }
        }
    }

    #[test]
    fn assemble_rejects_bad_block() {
        let g1 = path3();
        let g2 = ViewGraph::with_generated_names("m", 2, []).unwrap();
        let mut tape = Tape::new();
        let b = tape.constant(Tensor::zeros(&[2, 3]));
        let err = assemble_overall(&mut tape, &[&g1, &g2], &BTreeMap::from([((0, 1), b)]))
            .unwrap_err();
        assert!(err.to_string().contains("(0, 1)"));
    }

    fn view(name: &str, n: usize, d: usize) -> View {
        View {
            name: name.into(),
            graph: ViewGraph::with_generated_names(name, n, []).unwrap(),
            attributes: Tensor::zeros(&[n, d]),
        }
    }

    #[test]
    fn validation_reports() {
        let ok = MultiViewDataset::new_unchecked(vec![view("a", 3, 10), view("b", 2, 10)]);
        assert!(ok.validate().is_ok());

        let bad = MultiViewDataset::new_unchecked(vec![view("a", 3, 10), view("b", 2, 12)]);
        let v = bad.validate().unwrap_err();
        assert_eq!(v.kind, ViolationKind::SampleDimMismatch);
        assert!(v.message.contains("sample dimension mismatch"));

        let mut nan = view("b", 2, 10);
        nan.attributes.set(1, 4, f64::NAN);
        let v = MultiViewDataset::new_unchecked(vec![view("a", 3, 10), nan])
            .validate()
            .unwrap_err();
        assert_eq!(v.kind, ViolationKind::NonFinite);
        assert_eq!(v.view.as_deref(), Some("b"));
        assert_eq!(v.node.as_deref(), Some("b1"));
    }
}
