//! Planted two-view datasets with known cross-view interactions.
//!
//! Each view is a stochastic block model over `C` contiguous communities.
//! Community `c` of view 1 is matched with community `c` of view 2 and the
//! two share a Gaussian profile `f_c`. Planted pairs are drawn between
//! matched communities; nodes that take part in a planted pair carry their
//! community profile, all other nodes carry an independent profile.

use std::collections::BTreeSet;
use std::fmt::Write as _;
use std::path::{Path, PathBuf};

use rand::seq::index::sample;
use rand::Rng;

use crate::error::{Error, Result};
use crate::graph::{MultiViewDataset, View, ViewGraph};
use crate::io::{self, name_index};
use crate::tensor::{rng_sample, seeded_rng, SampleKind, SeededRng, Tensor};

#[derive(Debug, Clone, PartialEq)]
pub struct SynthConfig {
    pub view_sizes: [usize; 2],
    pub samples: usize,
    pub communities: usize,
    pub p_in: f64,
    pub p_out: f64,
    pub planted_edges: usize,
    pub signal: f64,
    pub noise: f64,
    pub seed: u64,
}

impl SynthConfig {
    /// The standard recovery instance.
    pub fn easy() -> Self {
        Self {
            view_sizes: [60, 40],
            samples: 80,
            communities: 4,
            p_in: 0.3,
            p_out: 0.02,
            planted_edges: 60,
            signal: 0.9,
            noise: 0.3,
            seed: 7,
        }
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(Error::Invalid(format!("synth config: {m}")));
        let [n1, n2] = self.view_sizes;
        if self.communities == 0 || self.communities > n1.min(n2) {
            return bad(format!(
                "communities must lie in 1..={}, got {}",
                n1.min(n2),
                self.communities
            ));
        }
        if self.samples < 2 {
            return bad(format!("need at least 2 samples, got {}", self.samples));
        }
        for (name, p) in [("p_in", self.p_in), ("p_out", self.p_out)] {
            if !(0.0..=1.0).contains(&p) {
                return bad(format!("{name} must lie in [0, 1], got {p}"));
            }
        }
        if !(self.p_in > self.p_out) {
            return bad(format!("p_in ({}) must exceed p_out ({})", self.p_in, self.p_out));
        }
        if !(0.0..=1.0).contains(&self.signal) {
            return bad(format!("signal must lie in [0, 1], got {}", self.signal));
        }
        if !(self.noise >= 0.0 && self.noise.is_finite()) {
            return bad(format!("noise must be non-negative, got {}", self.noise));
        }
        let candidates = self.matched_pairs().len();
        if self.planted_edges > candidates {
            return bad(format!(
                "{} planted edges requested but only {candidates} matched-community pairs exist",
                self.planted_edges
            ));
        }
        Ok(())
    }

    /// Community of node `i` in view `v`.
    pub fn community(&self, v: usize, i: usize) -> usize {
        i * self.communities / self.view_sizes[v]
    }

    fn matched_pairs(&self) -> Vec<(usize, usize)> {
        let [n1, n2] = self.view_sizes;
        (0..n1)
            .flat_map(|i| (0..n2).map(move |j| (i, j)))
            .filter(|&(i, j)| self.community(0, i) == self.community(1, j))
            .collect()
    }
}

/// Planted `(view-1 node, view-2 node)` pairs.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct PlantedTruth {
    pub pairs: BTreeSet<(usize, usize)>,
}

impl PlantedTruth {
    /// Dense `N1 × N2` indicator matrix.
    pub fn indicator(&self, n1: usize, n2: usize) -> Tensor {
        let mut m = Tensor::zeros(&[n1, n2]);
        for &(i, j) in &self.pairs {
            m.set(i, j, 1.0);
        }
        m
    }

    /// `name_v1<TAB>name_v2` lines in pair order.
    pub fn to_tsv(&self, dataset: &MultiViewDataset) -> String {
        let (a, b) = (dataset.view(0).graph.node_names(), dataset.view(1).graph.node_names());
        let mut out = String::new();
        for &(i, j) in &self.pairs {
            let _ = writeln!(out, "{}\t{}", a[i], b[j]);
        }
        out
    }

    pub fn parse(text: &str, path: &Path, dataset: &MultiViewDataset) -> Result<Self> {
        let ai = name_index(dataset.view(0).graph.node_names());
        let bi = name_index(dataset.view(1).graph.node_names());
        let mut pairs = BTreeSet::new();
        for (line, content) in io::content_lines(text) {
            let err = |detail: String| Error::Parse {
                path: path.to_path_buf(),
                line,
                detail,
            };
            let f: Vec<&str> = content.split('\t').collect();
            let [a, b] = f.as_slice() else {
                return Err(err(format!("expected 2 fields, got {}", f.len())));
            };
            let i = *ai.get(*a).ok_or_else(|| err(format!("unknown node {a:?}")))?;
            let j = *bi.get(*b).ok_or_else(|| err(format!("unknown node {b:?}")))?;
            pairs.insert((i, j));
        }
        Ok(Self { pairs })
    }
}

fn sbm(config: &SynthConfig, v: usize, rng: &mut SeededRng) -> Vec<(usize, usize)> {
    let n = config.view_sizes[v];
    let mut edges = Vec::new();
    for i in 0..n {
        for j in (i + 1)..n {
            let p = if config.community(v, i) == config.community(v, j) {
                config.p_in
            } else {
                config.p_out
            };
            if rng.random::<f64>() < p {
                edges.push((i, j));
            }
        }
    }
    edges
}

/// Rescales every non-constant row to zero mean and unit (population)
/// variance.
pub fn standardize_rows(x: &mut Tensor) {
    let d = x.cols();
    for row in x.data_mut().chunks_mut(d) {
        let mean = row.iter().sum::<f64>() / d as f64;
        let var = row.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / d as f64;
        if var > 0.0 {
            let sd = var.sqrt();
            row.iter_mut().for_each(|v| *v = (*v - mean) / sd);
        }
    }
}

pub const VIEW_NAMES: [&str; 2] = ["view1", "view2"];
const NODE_PREFIXES: [&str; 2] = ["a", "b"];

pub fn generate(config: &SynthConfig, rng: &mut SeededRng) -> Result<(MultiViewDataset, PlantedTruth)> {
    config.validate()?;
    let graphs = [sbm(config, 0, rng), sbm(config, 1, rng)];

    let candidates = config.matched_pairs();
    let pairs: BTreeSet<(usize, usize)> = sample(rng, candidates.len(), config.planted_edges)
        .into_iter()
        .map(|k| candidates[k])
        .collect();
    let mut planted = [BTreeSet::new(), BTreeSet::new()];
    for &(i, j) in &pairs {
        planted[0].insert(i);
        planted[1].insert(j);
    }

    let d = config.samples;
    let shared = rng_sample(SampleKind::StandardGaussian, &[config.communities, d], rng);
    let mut views = Vec::with_capacity(2);
    for (v, edges) in graphs.into_iter().enumerate() {
        let n = config.view_sizes[v];
        let own = rng_sample(SampleKind::StandardGaussian, &[n, d], rng);
        let eps = rng_sample(SampleKind::StandardGaussian, &[n, d], rng);
        let mut x = Tensor::zeros(&[n, d]);
        for i in 0..n {
            let profile = if planted[v].contains(&i) {
                shared.row(config.community(v, i))
            } else {
                own.row(i)
            };
            for k in 0..d {
                let val = config.signal * profile[k] + config.noise * eps.at(i, k);
                x.set(i, k, val);
            }
        }
        standardize_rows(&mut x);
        views.push(View {
            name: VIEW_NAMES[v].to_owned(),
            graph: ViewGraph::with_generated_names(NODE_PREFIXES[v], n, edges)?,
            attributes: x,
        });
    }
    Ok((MultiViewDataset::new(views)?, PlantedTruth { pairs }))
}

/// `generate` on [`SynthConfig::easy`] with its own seed.
pub fn easy_fixture() -> (MultiViewDataset, PlantedTruth) {
    easy_fixture_with_seed(SynthConfig::easy().seed)
}

pub fn easy_fixture_with_seed(seed: u64) -> (MultiViewDataset, PlantedTruth) {
    let config = SynthConfig { seed, ..SynthConfig::easy() };
    generate(&config, &mut seeded_rng(seed)).expect("the easy configuration is valid")
}

/// Writes the dataset files plus `truth.tsv`; returns the manifest path.
pub fn write_synthetic(dir: &Path, dataset: &MultiViewDataset, truth: &PlantedTruth) -> Result<PathBuf> {
    let manifest = io::write_dataset(dir, dataset)?;
    io::write(&dir.join("truth.tsv"), &truth.to_tsv(dataset))?;
    Ok(manifest)
}
