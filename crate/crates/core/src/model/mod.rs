//! Neural components and probabilistic heads.
//!
//! All parameters live in one [`ParamStore`]; the component structs only hold
//! [`ParamId`]s into it. A forward pass binds the store to a tape and then
//! calls into the components with the resulting [`Bound`] handles.

pub mod bipartite;
pub mod layers;
pub mod params;

use crate::autodiff::{Tape, Var};
use crate::error::{Error, Result};
use crate::graph::NormalizedAdjacency;
use crate::tensor::{seeded_rng, SeededRng, Tensor};

pub use bipartite::{
    sample_bipartite_hard, sample_bipartite_relaxed, BipartiteLink, LinkKind, P_CLIP,
};
pub use layers::{Activation, DenseLayer, GcnLayer, Init};
pub use params::{Bound, ParamId, ParamStore};

/// Architecture and likelihood settings. Stored alongside the weights in a
/// checkpoint.
#[derive(Debug, Clone, PartialEq)]
pub struct ModelConfig {
    pub n_views: usize,
    /// Shared sample dimension `D`.
    pub input_dim: usize,
    pub hidden_dim: usize,
    pub latent_dim: usize,
    pub link: LinkKind,
    pub temperature: f64,
    pub sigma_x: f64,
    /// Seed for weight initialization.
    pub seed: u64,
}

impl ModelConfig {
    pub fn new(n_views: usize, input_dim: usize) -> Self {
        Self {
            n_views,
            input_dim,
            hidden_dim: 16,
            latent_dim: 8,
            link: LinkKind::InnerProduct,
            temperature: 0.66,
            sigma_x: 1.0,
            seed: 0,
        }
    }
}

/// Encoder for the embedding latents `U`, shared by all views.
#[derive(Debug, Clone, PartialEq)]
pub struct EmbeddingEncoder {
    pub shared: GcnLayer,
    pub mu: GcnLayer,
    pub logsigma: GcnLayer,
}

/// Prior mean of `Z`, one GCN layer over the overall graph. The prior scale
/// is fixed at one.
#[derive(Debug, Clone, PartialEq)]
pub struct ZPrior {
    pub layer: GcnLayer,
}

/// Posterior of `Z`: a dense trunk per view, then a GCN trunk and heads shared
/// across views.
#[derive(Debug, Clone, PartialEq)]
pub struct ZPosterior {
    pub trunks: Vec<(DenseLayer, DenseLayer)>,
    pub gcn: GcnLayer,
    pub mu: GcnLayer,
    pub logsigma: GcnLayer,
}

/// Per-view dense decoder `8 → 8 → D → D` for the attribute means.
#[derive(Debug, Clone, PartialEq)]
pub struct AttributeDecoder {
    pub layers: Vec<[DenseLayer; 3]>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct BayRel {
    pub config: ModelConfig,
    pub params: ParamStore,
    pub embedding: EmbeddingEncoder,
    pub link: BipartiteLink,
    pub prior: ZPrior,
    pub posterior: ZPosterior,
    pub decoder: AttributeDecoder,
}

/// Inverse softplus of one, so the Bernoulli–Poisson rates start at 1.
fn softplus_inv_one() -> f64 {
    (1f64.exp() - 1.0).ln()
}

impl BayRel {
    /// Fresh model, weights drawn from `config.seed`.
    pub fn new(config: ModelConfig) -> Result<Self> {
        if config.n_views == 0 || config.input_dim == 0 {
            return Err(Error::Invalid("model needs at least one view and one sample".into()));
        }
        if !(config.temperature > 0.0) || !(config.sigma_x > 0.0) {
            return Err(Error::Invalid("temperature and sigma_x must be positive".into()));
        }
        let mut rng = seeded_rng(config.seed);
        Ok(Self::build(config, &mut rng))
    }

    fn build(config: ModelConfig, rng: &mut SeededRng) -> Self {
        use Activation::{Identity, Relu};
        let (d, h, l) = (config.input_dim, config.hidden_dim, config.latent_dim);
        let mut s = ParamStore::default();

        let embedding = EmbeddingEncoder {
            shared: GcnLayer::new(&mut s, "emb.shared", (d, h), Relu, Init::Glorot, rng),
            mu: GcnLayer::new(&mut s, "emb.mu", (h, l), Identity, Init::Glorot, rng),
            logsigma: GcnLayer::new(&mut s, "emb.logsigma", (h, l), Identity, Init::Zero, rng),
        };
        let tau = match config.link {
            LinkKind::InnerProduct => None,
            LinkKind::BernoulliPoisson => {
                Some(s.add("link.tau", Tensor::full(&[l], softplus_inv_one())))
            }
        };
        let link = BipartiteLink {
            kind: config.link,
            tau,
        };
        let prior = ZPrior {
            layer: GcnLayer::new(&mut s, "prior.mu", (l, l), Identity, Init::Glorot, rng),
        };
        let trunks = (0..config.n_views)
            .map(|v| {
                (
                    DenseLayer::new(&mut s, &format!("post.view{v}.fc1"), (d, h), Relu, Init::Glorot, rng),
                    DenseLayer::new(&mut s, &format!("post.view{v}.fc2"), (h, l), Relu, Init::Glorot, rng),
                )
            })
            .collect();
        let posterior = ZPosterior {
            trunks,
            gcn: GcnLayer::new(&mut s, "post.gcn", (l, h), Relu, Init::Glorot, rng),
            mu: GcnLayer::new(&mut s, "post.mu", (h, l), Identity, Init::Glorot, rng),
            logsigma: GcnLayer::new(&mut s, "post.logsigma", (h, l), Identity, Init::Zero, rng),
        };
        let decoder = AttributeDecoder {
            layers: (0..config.n_views)
                .map(|v| {
                    [
                        DenseLayer::new(&mut s, &format!("dec.view{v}.fc1"), (l, l), Relu, Init::Glorot, rng),
                        DenseLayer::new(&mut s, &format!("dec.view{v}.fc2"), (l, d), Relu, Init::Glorot, rng),
                        DenseLayer::new(&mut s, &format!("dec.view{v}.fc3"), (d, d), Identity, Init::Glorot, rng),
                    ]
                })
                .collect(),
        };
        Self {
            config,
            params: s,
            embedding,
            link,
            prior,
            posterior,
            decoder,
        }
    }

    /// Sets every weight and bias to zero (the link rates keep `τ = 1`).
    pub fn zero_weights(&mut self) {
        let tau = self.link.tau;
        for (i, v) in self.params.values_mut().iter_mut().enumerate() {
            let fill = match tau {
                Some(t) if t.index() == i => softplus_inv_one(),
                _ => 0.0,
            };
            v.data_mut().iter_mut().for_each(|x| *x = fill);
        }
    }

    pub fn bind(&self, tape: &mut Tape, trainable: bool) -> Bound {
        self.params.bind(tape, trainable)
    }

    fn check_view(&self, view: usize) -> Result<()> {
        if view >= self.config.n_views {
            return Err(Error::Invalid(format!(
                "unknown view index {view} (model has {} views)",
                self.config.n_views
            )));
        }
        Ok(())
    }

    /// Mean and log-scale of `q(U_v | X_v, G_v)`.
    pub fn encode_u(&self, tape: &mut Tape, p: &Bound, x: Var, a_hat: Var) -> Result<(Var, Var)> {
        let enc = &self.embedding;
        let h = enc.shared.forward(tape, p, a_hat, x)?;
        let mu = enc.mu.forward(tape, p, a_hat, h)?;
        let logsigma = enc.logsigma.forward(tape, p, a_hat, h)?;
        Ok((mu, logsigma))
    }

    pub fn bipartite_probs(&self, tape: &mut Tape, p: &Bound, u_v: Var, u_w: Var) -> Result<Var> {
        self.link.probs(tape, p, u_v, u_w)
    }

    /// Prior means of `Z` for every node of the overall graph.
    pub fn z_prior_mean(
        &self,
        tape: &mut Tape,
        p: &Bound,
        overall_norm: Var,
        u_all: Var,
    ) -> Result<Var> {
        if tape.shape(overall_norm)[0] != tape.shape(u_all)[0] {
            return Err(Error::shape(
                "z_prior_mean",
                tape.shape(overall_norm),
                tape.shape(u_all),
            ));
        }
        self.prior.layer.forward(tape, p, overall_norm, u_all)
    }

    /// Mean and log-scale of `q(Z_v | X_v, G_v)`.
    pub fn z_posterior(
        &self,
        tape: &mut Tape,
        p: &Bound,
        x: Var,
        a_hat: Var,
        view: usize,
    ) -> Result<(Var, Var)> {
        self.check_view(view)?;
        let post = &self.posterior;
        let (fc1, fc2) = &post.trunks[view];
        let h = fc1.forward(tape, p, x)?;
        let h = fc2.forward(tape, p, h)?;
        let h = post.gcn.forward(tape, p, a_hat, h)?;
        let mu = post.mu.forward(tape, p, a_hat, h)?;
        let logsigma = post.logsigma.forward(tape, p, a_hat, h)?;
        Ok((mu, logsigma))
    }

    /// Attribute means decoded row by row from `Z_v`.
    pub fn decode_x(&self, tape: &mut Tape, p: &Bound, z: Var, view: usize) -> Result<Var> {
        self.check_view(view)?;
        let mut h = z;
        for layer in &self.decoder.layers[view] {
            h = layer.forward(tape, p, h)?;
        }
        Ok(h)
    }

    /// Posterior mean and log-scale of `U_v` as plain tensors.
    pub fn embed(&self, x: &Tensor, a_hat: &NormalizedAdjacency) -> Result<(Tensor, Tensor)> {
        let mut tape = Tape::new();
        let p = self.bind(&mut tape, false);
        let xv = tape.constant(x.clone());
        let av = tape.constant(a_hat.0.clone());
        let (mu, ls) = self.encode_u(&mut tape, &p, xv, av)?;
        Ok((tape.value(mu).clone(), tape.value(ls).clone()))
    }

    /// Clipped link probabilities for two plain embedding matrices.
    pub fn link_probs(&self, u_v: &Tensor, u_w: &Tensor) -> Result<Tensor> {
        let mut tape = Tape::new();
        let p = self.bind(&mut tape, false);
        let a = tape.constant(u_v.clone());
        let b = tape.constant(u_w.clone());
        let out = self.bipartite_probs(&mut tape, &p, a, b)?;
        Ok(tape.value(out).clone())
    }
}

/// `mu + exp(logsigma) ⊙ eps`.
pub fn reparameterize(tape: &mut Tape, mu: Var, logsigma: Var, eps: Var) -> Result<Var> {
    let sigma = tape.exp(logsigma);
    let noise = tape.mul(sigma, eps)?;
    tape.add(mu, noise)
}

/// Inner-product logits `U Uᵀ` for within-view reconstruction.
pub fn view_adjacency_logits(tape: &mut Tape, u: Var) -> Result<Var> {
    let ut = tape.transpose(u)?;
    tape.matmul(u, ut)
}
