use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use anyhow::{anyhow, bail, ensure, Context, Result};
use bayrel::gradcheck::{self, GradcheckOptions};
use bayrel::graph::MultiViewDataset;
use bayrel::io::load_dataset;
use bayrel::metrics::{
    bipartite_kl, edges_at_density, infer_bipartite, negative_accuracy, positive_accuracy,
    prediction_sensitivity, resolve_names, roc_auc, threshold_by_density, BipartiteProbs,
    ValidationSet,
};
use bayrel::model::{BayRel, LinkKind, ModelConfig};
use bayrel::srca::srca_matrix;
use bayrel::synth::{generate, write_synthetic, SynthConfig};
use bayrel::training::{checkpoint, fit, format_history, TrainConfig};
use bayrel::{seeded_rng, Tensor};
use log::info;

use crate::config::RunConfig;
use crate::{Cli, Command, EvalArgs, GradcheckArgs, InferArgs, OutputArgs, SrcaArgs, SynthArgs, TrainArgs};

/// Offset applied to `--seed` for Monte Carlo inference draws.
pub const INFER_SEED_OFFSET: u64 = 303;
pub const DEFAULT_INFER_SAMPLES: usize = 64;
pub const DEFAULT_EVAL_DENSITIES: &[f64] = &[0.2];

pub fn run(cli: Cli) -> Result<ExitCode> {
    let config = RunConfig::load(cli.config.as_deref())?;
    let seed = cli.seed.or(config.seed);
    match cli.command {
        Command::Synth(a) => synth(&config, seed, a),
        Command::Train(a) => train(&config, seed, a),
        Command::Infer(a) => infer(&config, seed, a),
        Command::Eval(a) => eval(&config, a),
        Command::Srca(a) => srca(&config, a),
        Command::Gradcheck(a) => gradcheck(seed, a),
    }
}

fn out_dir(config: &RunConfig, output: &OutputArgs) -> Result<PathBuf> {
    output
        .out
        .clone()
        .or_else(|| config.out.clone())
        .ok_or_else(|| anyhow!("an output directory is required (--out or `out` in the config)"))
}

fn dataset_path(config: &RunConfig, flag: &Option<PathBuf>) -> Result<PathBuf> {
    flag.clone()
        .or_else(|| config.dataset.clone())
        .ok_or_else(|| anyhow!("a dataset manifest is required (--dataset or `dataset` in the config)"))
}

fn load(path: &Path) -> Result<MultiViewDataset> {
    load_dataset(path).with_context(|| format!("loading dataset {}", path.display()))
}

/// Fails if any target exists and `force` is off; otherwise creates parents.
fn prepare(paths: &[PathBuf], force: bool) -> Result<()> {
    if !force {
        if let Some(p) = paths.iter().find(|p| p.exists()) {
            bail!("refusing to overwrite {} (use --force)", p.display());
        }
    }
    for p in paths {
        if let Some(parent) = p.parent().filter(|d| !d.as_os_str().is_empty()) {
            fs::create_dir_all(parent).with_context(|| format!("creating {}", parent.display()))?;
        }
    }
    Ok(())
}

fn write(path: &Path, text: &str) -> Result<()> {
    fs::write(path, text).with_context(|| format!("writing {}", path.display()))
}

fn synth(config: &RunConfig, seed: Option<u64>, a: SynthArgs) -> Result<ExitCode> {
    let s = &config.synth;
    let base = SynthConfig::easy();
    let sc = SynthConfig {
        view_sizes: [
            a.n1.or(s.n1).unwrap_or(base.view_sizes[0]),
            a.n2.or(s.n2).unwrap_or(base.view_sizes[1]),
        ],
        samples: a.samples.or(s.samples).unwrap_or(base.samples),
        communities: a.communities.or(s.communities).unwrap_or(base.communities),
        p_in: a.p_in.or(s.p_in).unwrap_or(base.p_in),
        p_out: a.p_out.or(s.p_out).unwrap_or(base.p_out),
        planted_edges: a.planted.or(s.planted).unwrap_or(base.planted_edges),
        signal: a.signal.or(s.signal).unwrap_or(base.signal),
        noise: a.noise.or(s.noise).unwrap_or(base.noise),
        seed: seed.unwrap_or(base.seed),
    };
    let dir = out_dir(config, &a.output)?;
    let (dataset, truth) = generate(&sc, &mut seeded_rng(sc.seed))?;

    let mut targets = vec![dir.join("manifest.toml"), dir.join("truth.tsv")];
    for v in dataset.views() {
        targets.push(dir.join(format!("{}.edges.tsv", v.name)));
        targets.push(dir.join(format!("{}.attributes.tsv", v.name)));
    }
    prepare(&targets, a.output.force)?;
    let manifest = write_synthetic(&dir, &dataset, &truth)?;

    println!("manifest\t{}", manifest.display());
    println!("view\tnodes\tedges\tdensity");
    for v in dataset.views() {
        println!("{}\t{}\t{}\t{}", v.name, v.n_nodes(), v.graph.n_edges(), v.graph.density());
    }
    let cells = sc.view_sizes[0] * sc.view_sizes[1];
    println!(
        "planted\t{}\t{}\t{}",
        cells,
        truth.pairs.len(),
        truth.pairs.len() as f64 / cells as f64
    );
    Ok(ExitCode::SUCCESS)
}

fn link_kind(flag: &Option<String>, config: &RunConfig) -> Result<LinkKind> {
    match flag.as_ref().or(config.link.as_ref()) {
        Some(s) => s.parse().map_err(|e| anyhow!("{e}")),
        None => Ok(LinkKind::InnerProduct),
    }
}

fn train(config: &RunConfig, seed: Option<u64>, a: TrainArgs) -> Result<ExitCode> {
    let t = &config.train;
    let d = TrainConfig::default();
    let seed = seed.unwrap_or(d.seed);
    let tc = TrainConfig {
        learning_rate: a.lr.or(t.learning_rate).unwrap_or(d.learning_rate),
        epochs: a.epochs.or(t.epochs).unwrap_or(d.epochs),
        alpha: a.alpha.or(t.alpha).unwrap_or(d.alpha),
        temperature: a.temperature.or(t.temperature).unwrap_or(d.temperature),
        beta_graph: a.beta_graph.or(t.beta_graph).unwrap_or(d.beta_graph),
        sigma_x: a.sigma_x.or(t.sigma_x).unwrap_or(d.sigma_x),
        seed,
        early_stop_patience: a.patience.or(t.patience).unwrap_or(d.early_stop_patience),
        validation_fraction: a
            .validation_fraction
            .or(t.validation_fraction)
            .unwrap_or(d.validation_fraction),
        mc_samples: a.mc_samples.or(t.mc_samples).unwrap_or(d.mc_samples),
    };
    tc.validate()?;
    let dataset = load(&dataset_path(config, &a.dataset)?)?;
    let dir = out_dir(config, &a.output)?;
    let (ckpt, hist) = (dir.join("model.ckpt"), dir.join("history.tsv"));
    prepare(&[ckpt.clone(), hist.clone()], a.output.force)?;

    let mut mc = ModelConfig::new(dataset.n_views(), dataset.sample_dim());
    mc.link = link_kind(&a.link, config)?;
    mc.temperature = tc.temperature;
    mc.sigma_x = tc.sigma_x;
    mc.seed = seed;
    let outcome = fit(BayRel::new(mc)?, &dataset, &tc)?;
    checkpoint::save(&outcome.model, &ckpt)?;
    write(&hist, &format_history(&outcome.history))?;

    let last = outcome.history.last().map_or(f64::NAN, |r| r.elbo.total);
    println!("epochs\t{}", outcome.history.len());
    println!("best_epoch\t{}", outcome.best_epoch);
    println!("stopped_early\t{}", outcome.stopped_early);
    println!("final_elbo\t{last}");
    println!("checkpoint\t{}", ckpt.display());
    Ok(ExitCode::SUCCESS)
}

/// `edges.tsv` for two views, `edges.<a>.<b>.tsv` otherwise; `suffix` is
/// inserted before the extension.
fn edge_file(dir: &Path, dataset: &MultiViewDataset, v: usize, w: usize, suffix: &str) -> PathBuf {
    let stem = if dataset.n_views() == 2 {
        "edges".to_owned()
    } else {
        format!("edges.{}.{}", dataset.view(v).name, dataset.view(w).name)
    };
    dir.join(format!("{stem}{suffix}.tsv"))
}

fn view_pairs(n: usize) -> Vec<(usize, usize)> {
    (0..n).flat_map(|v| (v + 1..n).map(move |w| (v, w))).collect()
}

fn check_densities(densities: &[f64]) -> Result<()> {
    for &d in densities {
        ensure!(d > 0.0 && d <= 1.0, "density must lie in (0, 1], got {d}");
    }
    Ok(())
}

fn infer(config: &RunConfig, seed: Option<u64>, a: InferArgs) -> Result<ExitCode> {
    let model = checkpoint::load(&a.checkpoint)
        .with_context(|| format!("loading checkpoint {}", a.checkpoint.display()))?;
    let dataset = load(&dataset_path(config, &a.dataset)?)?;
    let mc = &model.config;
    if mc.n_views != dataset.n_views() || mc.input_dim != dataset.sample_dim() {
        bail!(
            "checkpoint is incompatible with the dataset: checkpoint has n_views={} input_dim={}, dataset has n_views={} input_dim={}",
            mc.n_views,
            mc.input_dim,
            dataset.n_views(),
            dataset.sample_dim()
        );
    }
    let samples = a.samples.or(config.infer.samples).unwrap_or(DEFAULT_INFER_SAMPLES);
    let densities = if a.density.is_empty() {
        config.infer.densities.clone().unwrap_or_default()
    } else {
        a.density.clone()
    };
    check_densities(&densities)?;
    let dir = out_dir(config, &a.output)?;

    let pairs = view_pairs(dataset.n_views());
    let mut targets = Vec::new();
    for &(v, w) in &pairs {
        targets.push(edge_file(&dir, &dataset, v, w, ""));
        for d in &densities {
            targets.push(edge_file(&dir, &dataset, v, w, &format!(".density-{d}")));
        }
    }
    prepare(&targets, a.output.force)?;

    let mut rng = seeded_rng(seed.unwrap_or(0).wrapping_add(INFER_SEED_OFFSET));
    for (v, w) in pairs {
        let probs = infer_bipartite(&model, &dataset, v, w, samples, &mut rng)?;
        let path = edge_file(&dir, &dataset, v, w, "");
        write(&path, &probs.to_tsv())?;
        println!("{}\t{}\t{}", probs.views.0, probs.views.1, path.display());
        let (r, c) = probs.shape();
        for &d in &densities {
            let k = edges_at_density(d, r * c);
            let path = edge_file(&dir, &dataset, v, w, &format!(".density-{d}"));
            write(&path, &probs.top_tsv(k))?;
            info!("{k} edges at density {d} -> {}", path.display());
        }
    }
    Ok(ExitCode::SUCCESS)
}

fn read(path: &Path) -> Result<String> {
    fs::read_to_string(path).with_context(|| format!("reading {}", path.display()))
}

fn read_names(path: &Path) -> Result<Vec<String>> {
    Ok(read(path)?
        .lines()
        .map(str::trim)
        .filter(|l| !l.is_empty() && !l.starts_with('#'))
        .map(str::to_owned)
        .collect())
}

fn eval(config: &RunConfig, a: EvalArgs) -> Result<ExitCode> {
    let e = &config.eval;
    let probs = BipartiteProbs::from_tsv_names(&read(&a.edges)?, &a.edges)?;
    let densities = if a.density.is_empty() {
        e.densities.clone().unwrap_or_else(|| DEFAULT_EVAL_DENSITIES.to_vec())
    } else {
        a.density.clone()
    };
    check_densities(&densities)?;
    let validation = match a.validation.as_ref().or(e.validation.as_ref()) {
        Some(p) => Some(ValidationSet::parse(&read(p)?, p)?),
        None => None,
    };
    let negative = match (&a.s1, &a.s2, &a.targets) {
        (Some(s1), Some(s2), Some(t)) => Some((
            resolve_names(&read_names(s1)?, &probs.row_names)?,
            resolve_names(&read_names(s2)?, &probs.row_names)?,
            resolve_names(&read_names(t)?, &probs.col_names)?,
        )),
        _ => None,
    };

    let mut report = String::from("metric\tdensity\tsubject\tvalue\n");
    for &d in &densities {
        let adj = threshold_by_density(&probs, d)?;
        if let Some(val) = &validation {
            let mut accs = Vec::new();
            for (anchor, partners) in &val.anchors {
                let i = *resolve_names([anchor], &probs.row_names)?.iter().next().expect("one name");
                let set = resolve_names(partners, &probs.col_names)?;
                let acc = positive_accuracy(&adj, i, &set)?;
                let _ = writeln!(report, "positive_accuracy\t{d}\t{anchor}\t{acc}");
                accs.push(acc);
            }
            if !accs.is_empty() {
                let mean = accs.iter().sum::<f64>() / accs.len() as f64;
                let _ = writeln!(report, "positive_accuracy\t{d}\tmean\t{mean}");
            }
            if !val.pairs.is_empty() {
                let pairs = val.resolve_pairs(&probs)?;
                let s = prediction_sensitivity(&adj, &pairs)?;
                let _ = writeln!(report, "sensitivity\t{d}\tall\t{s}");
            }
        }
        if let Some((s1, s2, t)) = &negative {
            let na = negative_accuracy(&adj, s1, s2, t)?;
            let _ = writeln!(report, "negative_accuracy\t{d}\tall\t{na}");
        }
    }
    if let Some(p) = a.truth.as_ref().or(e.truth.as_ref()) {
        let truth = ValidationSet::parse(&read(p)?, p)?;
        let (r, c) = probs.shape();
        let mut ind = Tensor::zeros(&[r, c]);
        for (i, j) in truth.resolve_pairs(&probs)? {
            ind.set(i, j, 1.0);
        }
        let auc = roc_auc(&probs.matrix, &ind)?;
        let _ = writeln!(report, "auc\tNA\tall\t{auc}");
    }
    if let Some(p) = &a.compare {
        let other = BipartiteProbs::from_tsv(
            &read(p)?,
            p,
            probs.views.clone(),
            probs.row_names.clone(),
            probs.col_names.clone(),
        )?;
        let kl = bipartite_kl(&probs.matrix, &other.matrix)?;
        let _ = writeln!(report, "bipartite_kl\tNA\tall\t{kl}");
    }

    match &a.out {
        Some(path) => {
            prepare(std::slice::from_ref(path), a.force)?;
            write(path, &report)?;
        }
        None => print!("{report}"),
    }
    Ok(ExitCode::SUCCESS)
}

fn srca(config: &RunConfig, a: SrcaArgs) -> Result<ExitCode> {
    let dataset = load(&dataset_path(config, &a.dataset)?)?;
    let dir = out_dir(config, &a.output)?;
    let pairs = view_pairs(dataset.n_views());
    let targets: Vec<PathBuf> = pairs.iter().map(|&(v, w)| edge_file(&dir, &dataset, v, w, "")).collect();
    prepare(&targets, a.output.force)?;
    for ((v, w), path) in pairs.into_iter().zip(targets) {
        let s = srca_matrix(&dataset.view(v).attributes, &dataset.view(w).attributes)?;
        let probs = BipartiteProbs::for_views(s.matrix, &dataset, v, w)?;
        write(&path, &probs.to_tsv())?;
        println!("{}\t{}\t{}\tconstant_rows={}", probs.views.0, probs.views.1, path.display(), s.constant_rows);
    }
    Ok(ExitCode::SUCCESS)
}

fn gradcheck(seed: Option<u64>, a: GradcheckArgs) -> Result<ExitCode> {
    let options = GradcheckOptions {
        seed: seed.unwrap_or(0),
        corrupt: a.inject_gradient_error.map(|name| (name, 1.0)),
        ..GradcheckOptions::default()
    };
    let report = gradcheck::run(&options)?;
    let text = report.to_string();
    print!("{text}");
    if let Some(path) = &a.out {
        prepare(std::slice::from_ref(path), a.force)?;
        write(path, &text)?;
    }
    if report.passed() {
        println!("gradcheck PASS (max relative error {:.3e})", report.max_rel_error());
        Ok(ExitCode::SUCCESS)
    } else {
        let failed: Vec<String> = report
            .params
            .iter()
            .filter(|p| !p.passed)
            .map(|p| format!("{}:{}", p.link, p.name))
            .collect();
        println!("gradcheck FAIL: {}", failed.join(", "));
        Ok(ExitCode::FAILURE)
    }
}
