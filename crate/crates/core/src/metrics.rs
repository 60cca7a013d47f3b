//! Test-time bipartite inference and the evaluation metrics.

use std::collections::{BTreeMap, BTreeSet};
use std::fmt::Write as _;
use std::path::Path;

use crate::autodiff::Tape;
use crate::error::{Error, Result};
use crate::graph::{normalize_adjacency, MultiViewDataset};
use crate::io::{content_lines, name_index};
use crate::model::{reparameterize, BayRel, P_CLIP};
use crate::tensor::{rng_sample, SampleKind, SeededRng, Tensor};

/// Cross-view edge scores between two views, `N_v × N_w`.
#[derive(Debug, Clone, PartialEq)]
pub struct BipartiteProbs {
    pub matrix: Tensor,
    pub views: (String, String),
    pub row_names: Vec<String>,
    pub col_names: Vec<String>,
}

impl BipartiteProbs {
    pub fn new(
        matrix: Tensor,
        views: (String, String),
        row_names: Vec<String>,
        col_names: Vec<String>,
    ) -> Result<Self> {
        if matrix.rank() != 2 || matrix.rows() != row_names.len() || matrix.cols() != col_names.len() {
            return Err(Error::Invalid(format!(
                "score matrix {:?} does not match {} rows and {} columns",
                matrix.shape(),
                row_names.len(),
                col_names.len()
            )));
        }
        Ok(Self {
            matrix,
            views,
            row_names,
            col_names,
        })
    }

    /// Scores for views `v` and `w` of `dataset`.
    pub fn for_views(matrix: Tensor, dataset: &MultiViewDataset, v: usize, w: usize) -> Result<Self> {
        let (a, b) = (dataset.view(v), dataset.view(w));
        Self::new(
            matrix,
            (a.name.clone(), b.name.clone()),
            a.graph.node_names().to_vec(),
            b.graph.node_names().to_vec(),
        )
    }

    pub fn shape(&self) -> (usize, usize) {
        (self.matrix.rows(), self.matrix.cols())
    }

    /// Entries as `(row, col, score)`, highest score first; ties by
    /// `(row, col)` index.
    pub fn ranked(&self) -> Vec<(usize, usize, f64)> {
        let (r, c) = self.shape();
        let mut all: Vec<(usize, usize, f64)> = (0..r)
            .flat_map(|i| (0..c).map(move |j| (i, j)))
            .map(|(i, j)| (i, j, self.matrix.at(i, j)))
            .collect();
        all.sort_by(|a, b| b.2.total_cmp(&a.2).then((a.0, a.1).cmp(&(b.0, b.1))));
        all
    }

    /// `name_v<TAB>name_w<TAB>probability`, sorted by probability
    /// descending, ties by row name then column name.
    pub fn to_tsv(&self) -> String {
        let mut all = self.ranked();
        all.sort_by(|a, b| {
            b.2.total_cmp(&a.2)
                .then_with(|| self.row_names[a.0].cmp(&self.row_names[b.0]))
                .then_with(|| self.col_names[a.1].cmp(&self.col_names[b.1]))
        });
        let mut out = String::new();
        for (i, j, p) in all {
            let _ = writeln!(out, "{}\t{}\t{p}", self.row_names[i], self.col_names[j]);
        }
        out
    }

    /// The pairs kept by [`threshold_by_density`] for `k` edges, as
    /// `name_v<TAB>name_w` lines in rank order.
    pub fn top_tsv(&self, k: usize) -> String {
        let mut out = String::new();
        for (i, j, _) in self.ranked().into_iter().take(k) {
            let _ = writeln!(out, "{}\t{}", self.row_names[i], self.col_names[j]);
        }
        out
    }

    /// Parses the edge TSV, taking row and column names (sorted) from the
    /// file itself.
    pub fn from_tsv_names(text: &str, path: &Path) -> Result<Self> {
        let mut rows = BTreeSet::new();
        let mut cols = BTreeSet::new();
        for (_, line) in content_lines(text) {
            let mut f = line.split('\t');
            if let (Some(a), Some(b)) = (f.next(), f.next()) {
                rows.insert(a.to_owned());
                cols.insert(b.to_owned());
            }
        }
        Self::from_tsv(
            text,
            path,
            ("rows".into(), "cols".into()),
            rows.into_iter().collect(),
            cols.into_iter().collect(),
        )
    }

    /// Parses the edge TSV. Row and column order follow `row_names` and
    /// `col_names`; every pair must be present exactly once.
    pub fn from_tsv(
        text: &str,
        path: &Path,
        views: (String, String),
        row_names: Vec<String>,
        col_names: Vec<String>,
    ) -> Result<Self> {
        let ri = name_index(&row_names);
        let ci = name_index(&col_names);
        let mut m = Tensor::full(&[row_names.len(), col_names.len()], f64::NAN);
        let perr = |line, detail: String| Error::Parse {
            path: path.to_path_buf(),
            line,
            detail,
        };
        for (lineno, line) in content_lines(text) {
            let f: Vec<&str> = line.split('\t').collect();
            if f.len() != 3 {
                return Err(perr(lineno, format!("expected 3 fields, got {}", f.len())));
            }
            let i = *ri.get(f[0]).ok_or_else(|| perr(lineno, format!("unknown node {:?}", f[0])))?;
            let j = *ci.get(f[1]).ok_or_else(|| perr(lineno, format!("unknown node {:?}", f[1])))?;
            let p: f64 = f[2]
                .parse()
                .map_err(|_| perr(lineno, format!("bad probability {:?}", f[2])))?;
            if !m.at(i, j).is_nan() {
                return Err(perr(lineno, format!("duplicate pair {} {}", f[0], f[1])));
            }
            m.set(i, j, p);
        }
        if m.data().iter().any(|v| v.is_nan()) {
            return Err(perr(0, "edge file does not cover every node pair".into()));
        }
        Self::new(m, views, row_names, col_names)
    }
}

/// Monte Carlo posterior-mean edge probabilities for views `v` and `w`.
/// With `num_samples == 0` the posterior means of `U` are used directly.
pub fn infer_bipartite(
    model: &BayRel,
    dataset: &MultiViewDataset,
    v: usize,
    w: usize,
    num_samples: usize,
    rng: &mut SeededRng,
) -> Result<BipartiteProbs> {
    if v == w || v >= dataset.n_views() || w >= dataset.n_views() {
        return Err(Error::Invalid(format!("invalid view pair ({v}, {w})")));
    }
    let mut tape = Tape::new();
    let p = model.bind(&mut tape, false);
    let mut enc = Vec::new();
    for &k in &[v, w] {
        let view = dataset.view(k);
        let x = tape.constant(view.attributes.clone());
        let a = tape.constant(normalize_adjacency(&view.graph).0);
        enc.push(model.encode_u(&mut tape, &p, x, a)?);
    }
    let latent = model.config.latent_dim;
    let (nv, nw) = (dataset.view(v).n_nodes(), dataset.view(w).n_nodes());
    let matrix = if num_samples == 0 {
        let probs = model.bipartite_probs(&mut tape, &p, enc[0].0, enc[1].0)?;
        tape.value(probs).clone()
    } else {
        let mut acc = Tensor::zeros(&[nv, nw]);
        for _ in 0..num_samples {
            let ev = tape.constant(rng_sample(SampleKind::StandardGaussian, &[nv, latent], rng));
            let ew = tape.constant(rng_sample(SampleKind::StandardGaussian, &[nw, latent], rng));
            let uv = reparameterize(&mut tape, enc[0].0, enc[0].1, ev)?;
            let uw = reparameterize(&mut tape, enc[1].0, enc[1].1, ew)?;
            let probs = model.bipartite_probs(&mut tape, &p, uv, uw)?;
            for (a, &b) in acc.data_mut().iter_mut().zip(tape.value(probs).data()) {
                *a += b;
            }
        }
        acc.map(|s| s / num_samples as f64)
    };
    BipartiteProbs::for_views(matrix, dataset, v, w)
}

/// Number of edges kept at `density`: `⌈density · N_v · N_w⌉`, with a small
/// tolerance so that products like `0.2 · 2400` do not round up.
pub fn edges_at_density(density: f64, total: usize) -> usize {
    ((density * total as f64 - 1e-9).ceil().max(0.0) as usize).min(total)
}

/// Binary matrix keeping the top-scoring entries at the requested density.
pub fn threshold_by_density(p: &BipartiteProbs, density: f64) -> Result<Tensor> {
    if !(density > 0.0 && density <= 1.0) {
        return Err(Error::Invalid(format!("density must lie in (0, 1], got {density}")));
    }
    let (r, c) = p.shape();
    let k = edges_at_density(density, r * c);
    let mut out = Tensor::zeros(&[r, c]);
    for &(i, j, _) in p.ranked().iter().take(k) {
        out.set(i, j, 1.0);
    }
    Ok(out)
}

fn nonempty<T>(set: &BTreeSet<T>, what: &str) -> Result<()> {
    if set.is_empty() {
        Err(Error::Invalid(format!("{what} is empty")))
    } else {
        Ok(())
    }
}

/// Fraction of the anchor's validated partners present in `a`.
pub fn positive_accuracy(a: &Tensor, anchor: usize, validated: &BTreeSet<usize>) -> Result<f64> {
    nonempty(validated, "validated set")?;
    let hit = validated.iter().filter(|&&m| a.at(anchor, m) > 0.5).count();
    Ok(hit as f64 / validated.len() as f64)
}

/// `1 − Σ_{i∈s1} Σ_{j∈s2} Σ_{k∈T} 1(a[i,k] ∧ a[j,k]) / (|s1||s2||T|)`, where
/// `s1` and `s2` index rows of `a` and `targets` index its columns.
pub fn negative_accuracy(
    a: &Tensor,
    s1: &BTreeSet<usize>,
    s2: &BTreeSet<usize>,
    targets: &BTreeSet<usize>,
) -> Result<f64> {
    nonempty(s1, "s1")?;
    nonempty(s2, "s2")?;
    nonempty(targets, "target set")?;
    // For each target, |s1 neighbours| · |s2 neighbours| triples fire.
    let fired: usize = targets
        .iter()
        .map(|&k| {
            let c1 = s1.iter().filter(|&&i| a.at(i, k) > 0.5).count();
            let c2 = s2.iter().filter(|&&j| a.at(j, k) > 0.5).count();
            c1 * c2
        })
        .sum();
    Ok(1.0 - fired as f64 / (s1.len() * s2.len() * targets.len()) as f64)
}

/// True-positive rate of `a` over the validated `(row, col)` pairs.
pub fn prediction_sensitivity(a: &Tensor, validated: &BTreeSet<(usize, usize)>) -> Result<f64> {
    nonempty(validated, "validated edge set")?;
    let hit = validated.iter().filter(|&&(i, j)| a.at(i, j) > 0.5).count();
    Ok(hit as f64 / validated.len() as f64)
}

fn bernoulli_kl(p: f64, q: f64) -> f64 {
    let p = p.clamp(P_CLIP, 1.0 - P_CLIP);
    let q = q.clamp(P_CLIP, 1.0 - P_CLIP);
    p * (p / q).ln() + (1.0 - p) * ((1.0 - p) / (1.0 - q)).ln()
}

/// Mean per-entry `KL(Bern(p1) ‖ Bern(p2))`.
pub fn bipartite_kl(p1: &Tensor, p2: &Tensor) -> Result<f64> {
    if p1.shape() != p2.shape() {
        return Err(Error::shape("bipartite_kl", p1.shape(), p2.shape()));
    }
    if p1.is_empty() {
        return Err(Error::Invalid("bipartite_kl of empty matrices".into()));
    }
    let s: f64 = p1
        .data()
        .iter()
        .zip(p2.data())
        .map(|(&a, &b)| bernoulli_kl(a, b))
        .sum();
    Ok(s / p1.len() as f64)
}

/// Area under the ROC curve as the normalized Mann–Whitney U statistic, with
/// tied scores counted as one half.
pub fn roc_auc(scores: &Tensor, truth: &Tensor) -> Result<f64> {
    if scores.shape() != truth.shape() {
        return Err(Error::shape("roc_auc", scores.shape(), truth.shape()));
    }
    let mut items: Vec<(f64, bool)> = scores
        .data()
        .iter()
        .zip(truth.data())
        .map(|(&s, &t)| (s, t > 0.5))
        .collect();
    let n_pos = items.iter().filter(|x| x.1).count();
    let n_neg = items.len() - n_pos;
    if n_pos == 0 || n_neg == 0 {
        return Err(Error::Invalid(format!(
            "roc_auc needs both classes, got {n_pos} positives and {n_neg} negatives"
        )));
    }
    items.sort_by(|a, b| a.0.total_cmp(&b.0));
    // Sum of midranks of the positives.
    let mut rank_sum = 0.0;
    let mut i = 0;
    while i < items.len() {
        let mut j = i;
        while j + 1 < items.len() && items[j + 1].0 == items[i].0 {
            j += 1;
        }
        let mid = (i + j) as f64 / 2.0 + 1.0;
        rank_sum += mid * items[i..=j].iter().filter(|x| x.1).count() as f64;
        i = j + 1;
    }
    let u = rank_sum - (n_pos * (n_pos + 1)) as f64 / 2.0;
    Ok(u / (n_pos * n_neg) as f64)
}

/// Validated partners, either per anchor node or as a flat pair list.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct ValidationSet {
    pub anchors: BTreeMap<String, BTreeSet<String>>,
    pub pairs: BTreeSet<(String, String)>,
}

impl ValidationSet {
    /// Parses `name_v<TAB>name_w` lines, or blocks that start with an
    /// `anchor:<name>` line followed by one target name per line.
    pub fn parse(text: &str, path: &Path) -> Result<Self> {
        let mut out = ValidationSet::default();
        let mut current: Option<String> = None;
        for (lineno, line) in content_lines(text) {
            if let Some(name) = line.strip_prefix("anchor:") {
                let name = name.trim().to_owned();
                out.anchors.entry(name.clone()).or_default();
                current = Some(name);
                continue;
            }
            let fields: Vec<&str> = line.split('\t').collect();
            match (fields.as_slice(), &current) {
                ([a, b], _) => {
                    out.pairs.insert((a.to_string(), b.to_string()));
                }
                ([t], Some(anchor)) => {
                    out.anchors
                        .get_mut(anchor)
                        .expect("anchor inserted")
                        .insert(t.trim().to_string());
                }
                _ => {
                    return Err(Error::Parse {
                        path: path.to_path_buf(),
                        line: lineno,
                        detail: "expected `name<TAB>name`, `anchor:<name>`, or a target under an anchor".into(),
                    })
                }
            }
        }
        Ok(out)
    }

    /// Pairs resolved against row and column names.
    pub fn resolve_pairs(&self, p: &BipartiteProbs) -> Result<BTreeSet<(usize, usize)>> {
        let ri = name_index(&p.row_names);
        let ci = name_index(&p.col_names);
        self.pairs
            .iter()
            .map(|(a, b)| match (ri.get(a.as_str()), ci.get(b.as_str())) {
                (Some(&i), Some(&j)) => Ok((i, j)),
                (None, _) => Err(Error::Invalid(format!("unresolved node name {a:?}"))),
                (_, None) => Err(Error::Invalid(format!("unresolved node name {b:?}"))),
            })
            .collect()
    }
}

/// Indices of `names` in `all`, failing on the first unknown name.
pub fn resolve_names<'a>(
    names: impl IntoIterator<Item = &'a String>,
    all: &[String],
) -> Result<BTreeSet<usize>> {
    let idx = name_index(all);
    names
        .into_iter()
        .map(|n| {
            idx.get(n.as_str())
                .copied()
                .ok_or_else(|| Error::Invalid(format!("unresolved node name {n:?}")))
        })
        .collect()
}
