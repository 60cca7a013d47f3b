//! Central finite-difference check of the full objective.

use std::fmt;

use rand::Rng;

use crate::autodiff::Tape;
use crate::error::{Error, Result};
use crate::graph::{MultiViewDataset, View, ViewGraph};
use crate::model::{BayRel, LinkKind, ModelConfig};
use crate::tensor::{rng_sample, seeded_rng, SampleKind, Tensor};
use crate::training::{elbo_on_tape, sample_noise, ElboInputs, ElboNoise, TrainConfig};

pub const DEFAULT_STEP: f64 = 1e-4;
pub const MAX_RELATIVE_ERROR: f64 = 1e-4;
/// Below this magnitude on both sides an entry is compared absolutely.
pub const TINY: f64 = 1e-6;
pub const MAX_ABSOLUTE_ERROR: f64 = 1e-7;

/// Two views with 5 and 4 nodes over 6 samples.
pub fn fixture(seed: u64) -> MultiViewDataset {
    let mut rng = seeded_rng(seed);
    let views = [("left", "l", 5), ("right", "r", 4)]
        .into_iter()
        .map(|(name, prefix, n)| {
            let mut edges: Vec<(usize, usize)> = (0..n)
                .flat_map(|i| (i + 1..n).map(move |j| (i, j)))
                .filter(|_| rng.random::<f64>() < 0.5)
                .collect();
            if edges.is_empty() {
                edges.push((0, 1));
            }
            View {
                name: name.into(),
                graph: ViewGraph::with_generated_names(prefix, n, edges).expect("valid edges"),
                attributes: rng_sample(SampleKind::StandardGaussian, &[n, 6], &mut rng),
            }
        })
        .collect();
    MultiViewDataset::new(views).expect("valid fixture")
}

#[derive(Debug, Clone, PartialEq)]
pub struct GradcheckOptions {
    pub seed: u64,
    pub step: f64,
    pub links: Vec<LinkKind>,
    /// Test hook: adds this amount to the first analytic gradient entry of
    /// the named parameter before comparison.
    pub corrupt: Option<(String, f64)>,
}

impl Default for GradcheckOptions {
    fn default() -> Self {
        Self {
            seed: 0,
            step: DEFAULT_STEP,
            links: vec![LinkKind::InnerProduct, LinkKind::BernoulliPoisson],
            corrupt: None,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ParamCheck {
    pub link: LinkKind,
    pub name: String,
    pub size: usize,
    pub max_rel_error: f64,
    pub max_abs_error: f64,
    pub passed: bool,
}

#[derive(Debug, Clone, PartialEq)]
pub struct GradcheckReport {
    pub params: Vec<ParamCheck>,
}

impl GradcheckReport {
    pub fn passed(&self) -> bool {
        self.params.iter().all(|p| p.passed)
    }

    pub fn max_rel_error(&self) -> f64 {
        self.params.iter().map(|p| p.max_rel_error).fold(0.0, f64::max)
    }
}

impl fmt::Display for GradcheckReport {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        writeln!(f, "link\tparameter\tsize\tmax_rel_error\tmax_abs_error\tstatus")?;
        for p in &self.params {
            writeln!(
                f,
                "{}\t{}\t{}\t{:.3e}\t{:.3e}\t{}",
                p.link,
                p.name,
                p.size,
                p.max_rel_error,
                p.max_abs_error,
                if p.passed { "PASS" } else { "FAIL" }
            )?;
        }
        Ok(())
    }
}

fn objective(model: &BayRel, inputs: &ElboInputs, config: &TrainConfig, noise: &[ElboNoise]) -> Result<f64> {
    let mut tape = Tape::new();
    let p = model.bind(&mut tape, false);
    let (total, _) = elbo_on_tape(&mut tape, model, &p, inputs, config, noise)?;
    Ok(tape.value(total).item())
}

/// Compares reverse-mode gradients of the bound against central differences
/// for every entry of every parameter, with the Monte Carlo noise frozen.
pub fn run(options: &GradcheckOptions) -> Result<GradcheckReport> {
    let dataset = fixture(options.seed);
    let inputs = ElboInputs::new(&dataset, None);
    let config = TrainConfig {
        seed: options.seed,
        ..TrainConfig::default()
    };
    let mut report = GradcheckReport { params: Vec::new() };
    for &link in &options.links {
        let mut mc = ModelConfig::new(dataset.n_views(), dataset.sample_dim());
        mc.link = link;
        mc.seed = options.seed;
        let mut model = BayRel::new(mc)?;
        if let Some((target, _)) = &options.corrupt {
            if !model.params.names().contains(target) {
                return Err(Error::Invalid(format!("unknown parameter {target:?}")));
            }
        }
        let noise = sample_noise(&inputs, &model, &config, &mut seeded_rng(options.seed ^ 0x5eed));

        let mut tape = Tape::new();
        let p = model.bind(&mut tape, true);
        let (total, _) = elbo_on_tape(&mut tape, &model, &p, &inputs, &config, &noise)?;
        let grads = tape.backward(total)?;
        let analytic: Vec<Tensor> = p
            .vars()
            .iter()
            .zip(model.params.values())
            .map(|(&v, t)| grads.get_or_zeros(v, t.shape()))
            .collect();

        for k in 0..model.params.len() {
            let name = model.params.names()[k].clone();
            let mut a = analytic[k].clone();
            if let Some((target, delta)) = &options.corrupt {
                if *target == name {
                    a.data_mut()[0] += delta;
                }
            }
            let (mut max_rel, mut max_abs, mut passed) = (0.0f64, 0.0f64, true);
            for e in 0..a.len() {
                let orig = model.params.values()[k].data()[e];
                model.params.values_mut()[k].data_mut()[e] = orig + options.step;
                let up = objective(&model, &inputs, &config, &noise)?;
                model.params.values_mut()[k].data_mut()[e] = orig - options.step;
                let down = objective(&model, &inputs, &config, &noise)?;
                model.params.values_mut()[k].data_mut()[e] = orig;

                let numeric = (up - down) / (2.0 * options.step);
                let g = a.data()[e];
                let abs = (g - numeric).abs();
                max_abs = max_abs.max(abs);
                if g.abs() < TINY && numeric.abs() < TINY {
                    passed &= abs <= MAX_ABSOLUTE_ERROR;
                } else {
                    let rel = abs / g.abs().max(numeric.abs());
                    max_rel = max_rel.max(rel);
                    passed &= rel <= MAX_RELATIVE_ERROR;
                }
            }
            report.params.push(ParamCheck {
                link,
                name,
                size: a.len(),
                max_rel_error: max_rel,
                max_abs_error: max_abs,
                passed,
            });
        }
    }
    Ok(report)
}
