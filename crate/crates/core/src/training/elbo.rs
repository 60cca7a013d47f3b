//! Monte Carlo estimate of the evidence lower bound.
//!
//! Per view `v` the bound collects the attribute reconstruction
//! `log p(X_v | Z_v)`, the graph-conditioned prior `log p(Z_v | G, A, U)`
//! (weighted by `alpha`), the entropy of `q(Z_v)`, and the within-view graph
//! reconstruction (weighted by `beta_graph`). The KL of `q(U)` to the
//! standard normal is subtracted once.

use std::collections::{BTreeMap, BTreeSet};
use std::fmt;

use rand::seq::SliceRandom;

use crate::autodiff::{Tape, Var};
use crate::error::{Error, Result};
use crate::graph::{assemble_overall, normalize_adjacency, MultiViewDataset, ViewGraph};
use crate::model::{
    reparameterize, sample_bipartite_relaxed, view_adjacency_logits, BayRel, Bound, P_CLIP,
};
use crate::tensor::{rng_sample, SampleKind, SeededRng, Tensor};
use crate::training::objective::{
    bernoulli_log_likelihood, gaussian_entropy, gaussian_kl_to_standard, gaussian_log_pdf,
};
use crate::training::TrainConfig;

/// Within-view node pairs withheld from training, used for early stopping.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct Holdout {
    /// Per view: held-out edges and an equal number of non-edges, as `(low, high)`.
    pub edges: Vec<Vec<(usize, usize)>>,
    pub non_edges: Vec<Vec<(usize, usize)>>,
}

impl Holdout {
    /// Withholds `round(fraction · |E_v|)` edges per view plus as many
    /// non-edges.
    pub fn sample(dataset: &MultiViewDataset, fraction: f64, rng: &mut SeededRng) -> Self {
        let mut out = Holdout::default();
        for view in dataset.views() {
            let g = &view.graph;
            let mut edges: Vec<_> = g.edges().collect();
            let k = (fraction * edges.len() as f64).round() as usize;
            edges.shuffle(rng);
            edges.truncate(k);
            edges.sort_unstable();

            let n = g.n_nodes();
            let mut non_edges: Vec<(usize, usize)> = (0..n)
                .flat_map(|i| (i + 1..n).map(move |j| (i, j)))
                .filter(|&(i, j)| !g.has_edge(i, j))
                .collect();
            non_edges.shuffle(rng);
            non_edges.truncate(k);
            non_edges.sort_unstable();

            out.edges.push(edges);
            out.non_edges.push(non_edges);
        }
        out
    }

    pub fn is_empty(&self) -> bool {
        self.edges.iter().all(Vec::is_empty) && self.non_edges.iter().all(Vec::is_empty)
    }
}

/// Per-view tensors that stay fixed across epochs.
#[derive(Debug, Clone)]
pub struct ViewInputs {
    pub x: Tensor,
    /// Training graph (held-out edges removed).
    pub graph: ViewGraph,
    pub a_hat: Tensor,
    pub target: Tensor,
    /// Off-diagonal entries that are not held out.
    pub mask: Tensor,
}

#[derive(Debug, Clone)]
pub struct ElboInputs {
    pub views: Vec<ViewInputs>,
    pub holdout: Option<Holdout>,
}

impl ElboInputs {
    pub fn new(dataset: &MultiViewDataset, holdout: Option<Holdout>) -> Self {
        let views = dataset
            .views()
            .iter()
            .enumerate()
            .map(|(v, view)| {
                let n = view.n_nodes();
                let mut removed = BTreeSet::new();
                let mut mask = Tensor::ones(&[n, n]);
                for i in 0..n {
                    mask.set(i, i, 0.0);
                }
                if let Some(h) = &holdout {
                    for &(i, j) in h.edges[v].iter().chain(&h.non_edges[v]) {
                        mask.set(i, j, 0.0);
                        mask.set(j, i, 0.0);
                    }
                    removed.extend(h.edges[v].iter().copied());
                }
                let graph = view.graph.without_edges(&removed);
                ViewInputs {
                    x: view.attributes.clone(),
                    a_hat: normalize_adjacency(&graph).0,
                    target: graph.adjacency(),
                    mask,
                    graph,
                }
            })
            .collect();
        Self { views, holdout }
    }

    pub fn n_views(&self) -> usize {
        self.views.len()
    }

    /// Unordered view pairs `(v, w)`, `v < w`.
    pub fn pairs(&self) -> Vec<(usize, usize)> {
        let n = self.views.len();
        (0..n).flat_map(|v| (v + 1..n).map(move |w| (v, w))).collect()
    }
}

/// Noise for one Monte Carlo sample. Fixing it makes the objective a
/// deterministic function of the parameters.
#[derive(Debug, Clone, PartialEq)]
pub struct ElboNoise {
    pub u_eps: Vec<Tensor>,
    pub z_eps: Vec<Tensor>,
    pub logistic: BTreeMap<(usize, usize), Tensor>,
}

impl ElboNoise {
    pub fn sample(inputs: &ElboInputs, latent_dim: usize, rng: &mut SeededRng) -> Self {
        let sizes: Vec<usize> = inputs.views.iter().map(|v| v.x.rows()).collect();
        let u_eps = sizes
            .iter()
            .map(|&n| rng_sample(SampleKind::StandardGaussian, &[n, latent_dim], rng))
            .collect();
        let logistic = inputs
            .pairs()
            .into_iter()
            .map(|(v, w)| {
                let t = rng_sample(SampleKind::Logistic, &[sizes[v], sizes[w]], rng);
                ((v, w), t)
            })
            .collect();
        let z_eps = sizes
            .iter()
            .map(|&n| rng_sample(SampleKind::StandardGaussian, &[n, latent_dim], rng))
            .collect();
        Self {
            u_eps,
            z_eps,
            logistic,
        }
    }
}

/// Values of every objective term, averaged over Monte Carlo samples.
#[derive(Debug, Clone, PartialEq)]
pub struct ElboBreakdown {
    pub recon_x: Vec<f64>,
    /// Unweighted; `alpha` is applied in `total`.
    pub logp_z_prior: Vec<f64>,
    pub entropy_qz: Vec<f64>,
    pub kl_u: f64,
    /// Unweighted; `beta_graph` is applied in `total`.
    pub recon_graph: Vec<f64>,
    pub total: f64,
}

impl ElboBreakdown {
    /// `Σ_v [recon_x + α·logp_z + entropy + β·recon_graph] − kl_u`.
    pub fn weighted_sum(&self, alpha: f64, beta: f64) -> f64 {
        let per_view: f64 = (0..self.recon_x.len())
            .map(|v| {
                self.recon_x[v]
                    + alpha * self.logp_z_prior[v]
                    + self.entropy_qz[v]
                    + beta * self.recon_graph[v]
            })
            .sum();
        per_view - self.kl_u
    }

    pub fn is_finite(&self) -> bool {
        self.total.is_finite()
            && self.kl_u.is_finite()
            && [
                &self.recon_x,
                &self.logp_z_prior,
                &self.entropy_qz,
                &self.recon_graph,
            ]
            .iter()
            .all(|v| v.iter().all(|x| x.is_finite()))
    }
}

impl fmt::Display for ElboBreakdown {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let sum = |v: &[f64]| v.iter().sum::<f64>();
        write!(
            f,
            "total={:.6} recon_x={:.6} logp_z_prior={:.6} entropy_qz={:.6} kl_u={:.6} recon_graph={:.6}",
            self.total,
            sum(&self.recon_x),
            sum(&self.logp_z_prior),
            sum(&self.entropy_qz),
            self.kl_u,
            sum(&self.recon_graph)
        )
    }
}

/// Records the objective on `tape` and returns the `total` node with its
/// breakdown. One sample is drawn per entry of `noise`; terms are averaged.
pub fn elbo_on_tape(
    tape: &mut Tape,
    model: &BayRel,
    p: &Bound,
    inputs: &ElboInputs,
    config: &TrainConfig,
    noise: &[ElboNoise],
) -> Result<(Var, ElboBreakdown)> {
    if noise.is_empty() {
        return Err(Error::Invalid("at least one Monte Carlo sample is required".into()));
    }
    let n_views = inputs.n_views();
    if n_views != model.config.n_views {
        return Err(Error::Invalid(format!(
            "model has {} views, data has {n_views}",
            model.config.n_views
        )));
    }
    let inv_s = 1.0 / noise.len() as f64;

    let mut xs = Vec::with_capacity(n_views);
    let mut u_params = Vec::with_capacity(n_views);
    let mut z_params = Vec::with_capacity(n_views);
    let mut kl_terms = Vec::with_capacity(n_views);
    let mut entropy = Vec::with_capacity(n_views);
    for (v, vi) in inputs.views.iter().enumerate() {
        let x = tape.constant(vi.x.clone());
        let a_hat = tape.constant(vi.a_hat.clone());
        let (mu_u, ls_u) = model.encode_u(tape, p, x, a_hat)?;
        kl_terms.push(gaussian_kl_to_standard(tape, mu_u, ls_u)?);
        let (mu_z, ls_z) = model.z_posterior(tape, p, x, a_hat, v)?;
        entropy.push(gaussian_entropy(tape, ls_z));
        xs.push(x);
        u_params.push((mu_u, ls_u));
        z_params.push((mu_z, ls_z));
    }

    let mut recon_x = vec![Vec::new(); n_views];
    let mut logp_z = vec![Vec::new(); n_views];
    let mut recon_graph = vec![Vec::new(); n_views];
    let graphs: Vec<&ViewGraph> = inputs.views.iter().map(|vi| &vi.graph).collect();
    for sample in noise {
        let mut u = Vec::with_capacity(n_views);
        let mut z = Vec::with_capacity(n_views);
        for v in 0..n_views {
            let eps_u = tape.constant(sample.u_eps[v].clone());
            let uv = reparameterize(tape, u_params[v].0, u_params[v].1, eps_u)?;
            let eps_z = tape.constant(sample.z_eps[v].clone());
            let zv = reparameterize(tape, z_params[v].0, z_params[v].1, eps_z)?;

            let mu_x = model.decode_x(tape, p, zv, v)?;
            recon_x[v].push(gaussian_log_pdf(tape, xs[v], mu_x, config.sigma_x)?);

            let logits = view_adjacency_logits(tape, uv)?;
            let vi = &inputs.views[v];
            recon_graph[v].push(bernoulli_log_likelihood(tape, logits, &vi.target, &vi.mask)?);
            u.push(uv);
            z.push(zv);
        }

        let mut cross = BTreeMap::new();
        for (v, w) in inputs.pairs() {
            let probs = model.bipartite_probs(tape, p, u[v], u[w])?;
            let l = tape.constant(sample.logistic[&(v, w)].clone());
            let relaxed = sample_bipartite_relaxed(tape, probs, config.temperature, l)?;
            cross.insert((v, w), relaxed);
        }
        let overall = assemble_overall(tape, &graphs, &cross)?;
        let norm = overall.normalized(tape)?;
        let u_all = tape.concat_rows(&u)?;
        let prior_mu = model.z_prior_mean(tape, p, norm, u_all)?;
        for v in 0..n_views {
            let start = overall.offsets()[v];
            let end = start + inputs.views[v].x.rows();
            let mu_v = tape.slice_rows(prior_mu, start, end)?;
            logp_z[v].push(gaussian_log_pdf(tape, z[v], mu_v, 1.0)?);
        }
    }

    let mut per_view_totals = Vec::with_capacity(n_views);
    let mean_of = |tape: &mut Tape, terms: &[Var]| -> Var {
        let first = terms[0];
        let summed = terms[1..]
            .iter()
            .fold(first, |acc, &t| tape.add(acc, t).expect("scalars"));
        tape.scale(summed, inv_s)
    };
    let mut bd = ElboBreakdown {
        recon_x: Vec::new(),
        logp_z_prior: Vec::new(),
        entropy_qz: Vec::new(),
        kl_u: 0.0,
        recon_graph: Vec::new(),
        total: 0.0,
    };
    for v in 0..n_views {
        let rx = mean_of(tape, &recon_x[v]);
        let lp = mean_of(tape, &logp_z[v]);
        let rg = mean_of(tape, &recon_graph[v]);
        bd.recon_x.push(tape.value(rx).item());
        bd.logp_z_prior.push(tape.value(lp).item());
        bd.entropy_qz.push(tape.value(entropy[v]).item());
        bd.recon_graph.push(tape.value(rg).item());

        let lp_w = tape.scale(lp, config.alpha);
        let rg_w = tape.scale(rg, config.beta_graph);
        let a = tape.add(rx, lp_w)?;
        let b = tape.add(a, entropy[v])?;
        per_view_totals.push(tape.add(b, rg_w)?);
    }
    let kl = kl_terms[1..]
        .iter()
        .try_fold(kl_terms[0], |acc, &t| tape.add(acc, t))?;
    bd.kl_u = tape.value(kl).item();
    let views_sum = per_view_totals[1..]
        .iter()
        .try_fold(per_view_totals[0], |acc, &t| tape.add(acc, t))?;
    let total = tape.sub(views_sum, kl)?;
    bd.total = tape.value(total).item();
    Ok((total, bd))
}

/// Fresh noise for `config.mc_samples` samples.
pub fn sample_noise(
    inputs: &ElboInputs,
    model: &BayRel,
    config: &TrainConfig,
    rng: &mut SeededRng,
) -> Vec<ElboNoise> {
    (0..config.mc_samples.max(1))
        .map(|_| ElboNoise::sample(inputs, model.config.latent_dim, rng))
        .collect()
}

/// Single evaluation of the bound; non-finite terms are an error.
pub fn elbo_forward(
    model: &BayRel,
    inputs: &ElboInputs,
    config: &TrainConfig,
    rng: &mut SeededRng,
) -> Result<ElboBreakdown> {
    let noise = sample_noise(inputs, model, config, rng);
    let mut tape = Tape::new();
    let p = model.bind(&mut tape, false);
    let (_, bd) = elbo_on_tape(&mut tape, model, &p, inputs, config, &noise)?;
    if !bd.is_finite() {
        return Err(Error::Diverged {
            epoch: 0,
            detail: bd.to_string(),
        });
    }
    Ok(bd)
}

/// Mean Bernoulli log-likelihood of the held-out pairs under the posterior
/// mean embeddings. `None` when nothing is held out.
pub fn validation_log_likelihood(model: &BayRel, inputs: &ElboInputs) -> Result<Option<f64>> {
    let Some(h) = inputs.holdout.as_ref().filter(|h| !h.is_empty()) else {
        return Ok(None);
    };
    let mut total = 0.0;
    let mut count = 0usize;
    let mut tape = Tape::new();
    let p = model.bind(&mut tape, false);
    for (v, vi) in inputs.views.iter().enumerate() {
        if h.edges[v].is_empty() && h.non_edges[v].is_empty() {
            continue;
        }
        let x = tape.constant(vi.x.clone());
        let a_hat = tape.constant(vi.a_hat.clone());
        let (mu, _) = model.encode_u(&mut tape, &p, x, a_hat)?;
        let mu = tape.value(mu);
        let score = |i: usize, j: usize| -> f64 {
            let dot: f64 = mu.row(i).iter().zip(mu.row(j)).map(|(a, b)| a * b).sum();
            (1.0 / (1.0 + (-dot).exp())).clamp(P_CLIP, 1.0 - P_CLIP)
        };
        for &(i, j) in &h.edges[v] {
            total += score(i, j).ln();
            count += 1;
        }
        for &(i, j) in &h.non_edges[v] {
            total += (1.0 - score(i, j)).ln();
            count += 1;
        }
    }
    Ok(Some(total / count as f64))
}
