//! Cross-view edge probabilities and their samplers.

use rand::Rng;

use crate::autodiff::{Tape, Var};
use crate::error::{Error, Result};
use crate::model::params::{Bound, ParamId};
use crate::tensor::{SeededRng, Tensor};

/// Probabilities entering a logarithm are clipped to `[P_CLIP, 1 − P_CLIP]`.
pub const P_CLIP: f64 = 1e-6;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum LinkKind {
    /// `σ(u_i · u_j)`
    InnerProduct,
    /// `1 − exp(−Σ_k τ_k u_ik u_jk)`
    BernoulliPoisson,
}

impl LinkKind {
    pub fn code(self) -> u8 {
        match self {
            LinkKind::InnerProduct => 0,
            LinkKind::BernoulliPoisson => 1,
        }
    }

    pub fn from_code(code: u8) -> Option<Self> {
        match code {
            0 => Some(LinkKind::InnerProduct),
            1 => Some(LinkKind::BernoulliPoisson),
            _ => None,
        }
    }
}

impl std::str::FromStr for LinkKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "ip" | "inner_product" => Ok(LinkKind::InnerProduct),
            "bp" | "bernoulli_poisson" => Ok(LinkKind::BernoulliPoisson),
            other => Err(Error::Invalid(format!("unknown link kind {other:?}"))),
        }
    }
}

impl std::fmt::Display for LinkKind {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(match self {
            LinkKind::InnerProduct => "ip",
            LinkKind::BernoulliPoisson => "bp",
        })
    }
}

/// Score function between embeddings of two views. For the Bernoulli–Poisson
/// link, `tau` holds unconstrained values; the rates are `softplus(tau)`.
#[derive(Debug, Clone, PartialEq)]
pub struct BipartiteLink {
    pub kind: LinkKind,
    pub tau: Option<ParamId>,
}

impl BipartiteLink {
    /// Unclipped edge probabilities, `N_v × N_w`.
    pub fn raw_probs(&self, tape: &mut Tape, p: &Bound, u_v: Var, u_w: Var) -> Result<Var> {
        match self.kind {
            LinkKind::InnerProduct => {
                let wt = tape.transpose(u_w)?;
                let logits = tape.matmul(u_v, wt)?;
                Ok(tape.sigmoid(logits))
            }
            LinkKind::BernoulliPoisson => {
                let tau_free = self
                    .tau
                    .ok_or_else(|| Error::Invalid("bernoulli-poisson link without tau".into()))?;
                let tau = tape.softplus(p.var(tau_free));
                let scaled = tape.mul(u_v, tau)?;
                let wt = tape.transpose(u_w)?;
                let rate = tape.matmul(scaled, wt)?;
                // Negative rates would give negative probabilities.
                let rate = tape.clamp(rate, 0.0, f64::INFINITY);
                let neg = tape.neg(rate);
                let keep = tape.exp(neg);
                let minus = tape.neg(keep);
                Ok(tape.add_scalar(minus, 1.0))
            }
        }
    }

    /// Edge probabilities clipped for use inside logarithms.
    pub fn probs(&self, tape: &mut Tape, p: &Bound, u_v: Var, u_w: Var) -> Result<Var> {
        let raw = self.raw_probs(tape, p, u_v, u_w)?;
        Ok(tape.clamp(raw, P_CLIP, 1.0 - P_CLIP))
    }
}

/// Binary concrete relaxation `σ((logit p + L) / t)` with logistic noise `L`.
pub fn sample_bipartite_relaxed(
    tape: &mut Tape,
    probs: Var,
    temperature: f64,
    logistic_noise: Var,
) -> Result<Var> {
    if !(temperature > 0.0) {
        return Err(Error::Invalid(format!(
            "temperature must be positive, got {temperature}"
        )));
    }
    let log_p = tape.log(probs)?;
    let neg = tape.neg(probs);
    let one_minus = tape.add_scalar(neg, 1.0);
    let log_q = tape.log(one_minus)?;
    let logit = tape.sub(log_p, log_q)?;
    let noisy = tape.add(logit, logistic_noise)?;
    let scaled = tape.scale(noisy, 1.0 / temperature);
    Ok(tape.sigmoid(scaled))
}

/// Independent Bernoulli draws, one per entry.
pub fn sample_bipartite_hard(probs: &Tensor, rng: &mut SeededRng) -> Tensor {
    let mut out = probs.clone();
    for p in out.data_mut() {
        let u: f64 = rng.random();
        *p = if u < *p { 1.0 } else { 0.0 };
    }
    out
}
