//! Objective assembly, the Adam training loop and checkpoints.

pub mod checkpoint;
pub mod elbo;
pub mod objective;

use std::fmt::Write as _;

use log::{debug, info};

use crate::adam::{AdamConfig, AdamState};
use crate::autodiff::Tape;
use crate::error::{Error, Result};
use crate::graph::MultiViewDataset;
use crate::model::BayRel;
use crate::tensor::{seeded_rng, Tensor};

pub use elbo::{
    elbo_forward, elbo_on_tape, sample_noise, validation_log_likelihood, ElboBreakdown,
    ElboInputs, ElboNoise, Holdout,
};

/// Sub-seed offsets so holdout selection and training noise are independent
/// streams of the one run seed.
pub const HOLDOUT_SEED_OFFSET: u64 = 101;
pub const NOISE_SEED_OFFSET: u64 = 202;

#[derive(Debug, Clone, PartialEq)]
pub struct TrainConfig {
    pub learning_rate: f64,
    pub epochs: usize,
    /// Weight on `log p(Z | G, A, U)`.
    pub alpha: f64,
    pub temperature: f64,
    /// Weight on the within-view graph reconstruction.
    pub beta_graph: f64,
    pub sigma_x: f64,
    pub seed: u64,
    pub early_stop_patience: usize,
    pub validation_fraction: f64,
    pub mc_samples: usize,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            learning_rate: 0.01,
            epochs: 1000,
            alpha: 30.0,
            temperature: 0.66,
            beta_graph: 1.0,
            sigma_x: 1.0,
            seed: 0,
            early_stop_patience: 100,
            validation_fraction: 0.05,
            mc_samples: 1,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        let bad = |what: &str| Err(Error::Invalid(format!("train config: {what}")));
        if !(self.learning_rate >= 0.0) {
            return bad("learning_rate must be non-negative");
        }
        if !(self.alpha >= 0.0) || !(self.beta_graph >= 0.0) {
            return bad("alpha and beta_graph must be non-negative");
        }
        if !(self.temperature > 0.0) || !(self.sigma_x > 0.0) {
            return bad("temperature and sigma_x must be positive");
        }
        if self.early_stop_patience == 0 || self.mc_samples == 0 {
            return bad("early_stop_patience and mc_samples must be positive");
        }
        if !(0.0..0.5).contains(&self.validation_fraction) {
            return bad("validation_fraction must lie in [0, 0.5)");
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct EpochRecord {
    /// 1-based.
    pub epoch: usize,
    pub elbo: ElboBreakdown,
    pub val_ll: Option<f64>,
}

#[derive(Debug, Clone)]
pub struct FitOutcome {
    pub model: BayRel,
    pub history: Vec<EpochRecord>,
    /// Epoch whose parameters were kept (the best validation score, or the last).
    pub best_epoch: usize,
    pub stopped_early: bool,
}

/// Maximizes the bound with Adam (by descending its negation).
///
/// A fraction of within-view edges, plus as many non-edges, is held out; their
/// log-likelihood picks the returned parameters and stops training after
/// `early_stop_patience` epochs without improvement.
pub fn fit(mut model: BayRel, dataset: &MultiViewDataset, config: &TrainConfig) -> Result<FitOutcome> {
    config.validate()?;
    dataset
        .validate()
        .map_err(|v| Error::Dataset(v.to_string()))?;
    if dataset.sample_dim() != model.config.input_dim || dataset.n_views() != model.config.n_views {
        return Err(Error::Invalid(format!(
            "model expects {} views of dimension {}, dataset has {} of dimension {}",
            model.config.n_views,
            model.config.input_dim,
            dataset.n_views(),
            dataset.sample_dim()
        )));
    }
    model.config.temperature = config.temperature;
    model.config.sigma_x = config.sigma_x;

    let holdout = (config.validation_fraction > 0.0).then(|| {
        let mut rng = seeded_rng(config.seed.wrapping_add(HOLDOUT_SEED_OFFSET));
        Holdout::sample(dataset, config.validation_fraction, &mut rng)
    });
    let inputs = ElboInputs::new(dataset, holdout.filter(|h| !h.is_empty()));
    let mut rng = seeded_rng(config.seed.wrapping_add(NOISE_SEED_OFFSET));
    let mut adam = AdamState::new(
        AdamConfig {
            lr: config.learning_rate,
            ..AdamConfig::default()
        },
        model.params.values(),
    );

    let mut history = Vec::with_capacity(config.epochs);
    let mut best: Option<(f64, usize, Vec<Tensor>)> = None;
    let mut stopped_early = false;
    for epoch in 1..=config.epochs {
        let noise = sample_noise(&inputs, &model, config, &mut rng);
        let mut tape = Tape::new();
        let p = model.bind(&mut tape, true);
        let (total, elbo) = elbo_on_tape(&mut tape, &model, &p, &inputs, config, &noise)?;
        if !elbo.is_finite() {
            let last = history
                .last()
                .map_or_else(|| "none".to_owned(), |r: &EpochRecord| r.elbo.to_string());
            return Err(Error::Diverged {
                epoch,
                detail: format!("{elbo}; last finite: {last}"),
            });
        }
        let val_ll = validation_log_likelihood(&model, &inputs)?;
        if let Some(v) = val_ll {
            if best.as_ref().is_none_or(|(b, _, _)| v > *b) {
                best = Some((v, epoch, model.params.values().to_vec()));
            }
        }
        debug!("epoch {epoch}: {elbo} val_ll={val_ll:?}");
        history.push(EpochRecord { epoch, elbo, val_ll });

        if let Some((_, best_epoch, _)) = &best {
            if epoch - best_epoch >= config.early_stop_patience {
                info!("early stop at epoch {epoch}, best epoch {best_epoch}");
                stopped_early = true;
                break;
            }
        }

        let loss = tape.neg(total);
        let grads = tape.backward(loss)?;
        let grads: Vec<Tensor> = p
            .vars()
            .iter()
            .zip(model.params.values())
            .map(|(&v, t)| grads.get_or_zeros(v, t.shape()))
            .collect();
        let mut params: Vec<&mut Tensor> = model.params.values_mut().iter_mut().collect();
        adam.step(&mut params, &grads)?;
    }

    let best_epoch = match best {
        Some((_, epoch, values)) => {
            model.params.values_mut().clone_from_slice(&values);
            epoch
        }
        None => history.len(),
    };
    Ok(FitOutcome {
        model,
        history,
        best_epoch,
        stopped_early,
    })
}

/// Trailing-window mean of the per-epoch totals; entry `i` averages epochs
/// `max(0, i + 1 − window) ..= i`.
pub fn smoothed_totals(history: &[EpochRecord], window: usize) -> Vec<f64> {
    let mut out = Vec::with_capacity(history.len());
    for i in 0..history.len() {
        let lo = (i + 1).saturating_sub(window);
        let slice = &history[lo..=i];
        out.push(slice.iter().map(|r| r.elbo.total).sum::<f64>() / slice.len() as f64);
    }
    out
}

pub const HISTORY_HEADER: &str =
    "epoch\ttotal\trecon_x\tlogp_z_prior\tentropy_qz\tkl_U\trecon_graph\tval_ll";

/// History as TSV; view-level terms are summed over views.
pub fn format_history(history: &[EpochRecord]) -> String {
    let mut out = String::from(HISTORY_HEADER);
    out.push('\n');
    for r in history {
        let s = |v: &[f64]| v.iter().sum::<f64>();
        let e = &r.elbo;
        let _ = write!(
            out,
            "{}\t{}\t{}\t{}\t{}\t{}\t{}\t",
            r.epoch,
            e.total,
            s(&e.recon_x),
            s(&e.logp_z_prior),
            s(&e.entropy_qz),
            e.kl_u,
            s(&e.recon_graph)
        );
        match r.val_ll {
            Some(v) => {
                let _ = writeln!(out, "{v}");
            }
            None => out.push_str("NA\n"),
        }
    }
    out
}
