//! End-to-end acceptance checks. Each test prints one `PASS`/`FAIL` line.

use std::collections::BTreeSet;
use std::f64::consts::PI;
use std::fs;
use std::io::Write;
use std::path::Path;
use std::process::Command;
use std::time::Instant;

use bayrel::autodiff::Tape;
use bayrel::gradcheck::{self, GradcheckOptions, MAX_RELATIVE_ERROR};
use bayrel::graph::MultiViewDataset;
use bayrel::metrics::{
    bipartite_kl, infer_bipartite, negative_accuracy, positive_accuracy, prediction_sensitivity,
    roc_auc,
};
use bayrel::model::{sample_bipartite_relaxed, BayRel, LinkKind, ModelConfig, P_CLIP};
use bayrel::srca::{spearman_rho, srca_matrix};
use bayrel::synth::{easy_fixture, easy_fixture_with_seed};
use bayrel::tensor::{rng_sample, SampleKind};
use bayrel::training::objective::{gaussian_entropy, gaussian_kl_to_standard, gaussian_log_pdf};
use bayrel::training::{checkpoint, elbo_forward, fit, smoothed_totals, ElboInputs, FitOutcome, TrainConfig};
use bayrel::{seeded_rng, Tensor};
use rand::Rng;

const INFER_SAMPLES: usize = 64;
const INFER_SEED_OFFSET: u64 = 303;

/// Writes past the test harness capture so the line shows in every run.
fn report(name: &str, pass: bool, detail: &str) {
    let verdict = if pass { "PASS" } else { "FAIL" };
    let _ = writeln!(std::io::stderr(), "{verdict} {name}: {detail}");
}

fn train(ds: &MultiViewDataset, seed: u64, config: TrainConfig) -> FitOutcome {
    let mut mc = ModelConfig::new(ds.n_views(), ds.sample_dim());
    mc.link = LinkKind::InnerProduct;
    mc.seed = seed;
    fit(BayRel::new(mc).unwrap(), ds, &TrainConfig { seed, ..config }).unwrap()
}

fn infer(model: &BayRel, ds: &MultiViewDataset, seed: u64) -> Tensor {
    let mut rng = seeded_rng(seed + INFER_SEED_OFFSET);
    infer_bipartite(model, ds, 0, 1, INFER_SAMPLES, &mut rng).unwrap().matrix
}

#[test]
fn gradient_correctness() {
    let start = Instant::now();
    let r = gradcheck::run(&GradcheckOptions::default()).unwrap();
    let secs = start.elapsed().as_secs_f64();
    let pass = r.passed() && r.max_rel_error() <= MAX_RELATIVE_ERROR && secs < 30.0;
    report(
        "gradient_correctness",
        pass,
        &format!("{} parameter tensors, max relative error {:.2e}, {secs:.2} s", r.params.len(), r.max_rel_error()),
    );
    assert!(pass, "{r}");
}

fn scalar(f: impl FnOnce(&mut Tape) -> bayrel::autodiff::Var) -> f64 {
    let mut t = Tape::new();
    let v = f(&mut t);
    t.value(v).item()
}

/// Mean and standard error.
fn mean_se(xs: &[f64]) -> (f64, f64) {
    let n = xs.len() as f64;
    let m = xs.iter().sum::<f64>() / n;
    let var = xs.iter().map(|x| (x - m).powi(2)).sum::<f64>() / (n - 1.0);
    (m, (var / n).sqrt())
}

fn log_normal(x: f64, m: f64, s: f64) -> f64 {
    -0.5 * (2.0 * PI * s * s).ln() - (x - m).powi(2) / (2.0 * s * s)
}

#[test]
fn closed_form_vs_monte_carlo() {
    let n = 100_000;
    let mut rng = seeded_rng(123);
    let mut worst = 0.0f64;
    for _ in 0..10 {
        let mu = rng.random_range(-2.0..2.0);
        let ls: f64 = rng.random_range(-1.0..1.0);
        let sigma = ls.exp();
        let (c, s_fixed) = (rng.random_range(-1.0..1.0), rng.random_range(0.5..2.0));
        let eps = rng_sample(SampleKind::StandardGaussian, &[n], &mut rng);
        let xs: Vec<f64> = eps.data().iter().map(|e| mu + sigma * e).collect();

        let kl = scalar(|t| {
            let m = t.constant(Tensor::vector(vec![mu]));
            let l = t.constant(Tensor::vector(vec![ls]));
            gaussian_kl_to_standard(t, m, l).unwrap()
        });
        let kl_mc: Vec<f64> = xs.iter().map(|&x| log_normal(x, mu, sigma) - log_normal(x, 0.0, 1.0)).collect();

        let h = scalar(|t| {
            let l = t.constant(Tensor::vector(vec![ls]));
            gaussian_entropy(t, l)
        });
        let h_mc: Vec<f64> = xs.iter().map(|&x| -log_normal(x, mu, sigma)).collect();

        // E_q[log N(x; c, s²)] in closed form, against the library density at each sample.
        let cross = -0.5 * (2.0 * PI * s_fixed * s_fixed).ln() - ((mu - c).powi(2) + sigma * sigma) / (2.0 * s_fixed * s_fixed);
        let mut t = Tape::new();
        let cv = t.constant(Tensor::vector(vec![c]));
        let lp_mc: Vec<f64> = xs
            .iter()
            .map(|&x| {
                let xv = t.constant(Tensor::vector(vec![x]));
                let v = gaussian_log_pdf(&mut t, xv, cv, s_fixed).unwrap();
                t.value(v).item()
            })
            .collect();

        for (exact, samples) in [(kl, &kl_mc), (h, &h_mc), (cross, &lp_mc)] {
            let (m, se) = mean_se(samples);
            worst = worst.max((m - exact).abs() / se);
        }
    }
    let pass = worst <= 4.0;
    report("closed_form_vs_monte_carlo", pass, &format!("largest deviation {worst:.2} standard errors over 10 draws x 3 terms"));
    assert!(pass);
}

#[test]
fn concrete_relaxation_limit() {
    let n = 100_000;
    let mut rng = seeded_rng(17);
    let mut worst = 0.0f64;
    for p in [0.2, 0.5, 0.8] {
        let mut t = Tape::new();
        let pv = t.constant(Tensor::full(&[n], p));
        let l = t.constant(rng_sample(SampleKind::Logistic, &[n], &mut rng));
        let s = sample_bipartite_relaxed(&mut t, pv, 0.01, l).unwrap();
        worst = worst.max((t.value(s).sum() / n as f64 - p).abs());
    }

    let at = |p: f64| {
        let mut t = Tape::new();
        let pv = t.param(Tensor::vector(vec![p]));
        let l = t.constant(Tensor::vector(vec![0.4]));
        let s = sample_bipartite_relaxed(&mut t, pv, 0.66, l).unwrap();
        let g = t.backward(s).unwrap();
        (t.value(s).item(), g.get(pv).unwrap().item())
    };
    let h = 1e-5;
    let mut rel = 0.0f64;
    let mut finite = true;
    for p in [0.2, 0.5, 0.8] {
        let (_, g) = at(p);
        let numeric = (at(p + h).0 - at(p - h).0) / (2.0 * h);
        finite &= g.is_finite();
        rel = rel.max((g - numeric).abs() / numeric.abs());
    }
    let pass = worst <= 0.02 && finite && rel <= 1e-3;
    report(
        "concrete_relaxation_limit",
        pass,
        &format!("max |mean - p| at t=0.01 {worst:.4}; t=0.66 gradient relative error {rel:.2e}"),
    );
    assert!(pass);
}

fn set_of(n: usize, rng: &mut impl Rng) -> BTreeSet<usize> {
    let mut s: BTreeSet<usize> = (0..n).filter(|_| rng.random_bool(0.4)).collect();
    if s.is_empty() {
        s.insert(rng.random_range(0..n));
    }
    s
}

fn ranks_by_counting(x: &[f64]) -> Vec<f64> {
    x.iter()
        .map(|v| {
            let less = x.iter().filter(|w| *w < v).count() as f64;
            let eq = x.iter().filter(|w| *w == v).count() as f64;
            less + (eq + 1.0) / 2.0
        })
        .collect()
}

fn pearson(a: &[f64], b: &[f64]) -> f64 {
    let n = a.len() as f64;
    let (ma, mb) = (a.iter().sum::<f64>() / n, b.iter().sum::<f64>() / n);
    let cov: f64 = a.iter().zip(b).map(|(x, y)| (x - ma) * (y - mb)).sum();
    let va: f64 = a.iter().map(|x| (x - ma).powi(2)).sum();
    let vb: f64 = b.iter().map(|y| (y - mb).powi(2)).sum();
    cov / (va * vb).sqrt()
}

#[test]
fn metric_oracles() {
    let mut rng = seeded_rng(2718);
    let mut mismatches = Vec::new();
    for case in 0..50 {
        let (r, c) = (rng.random_range(2..=20), rng.random_range(2..=20));
        let a = Tensor::new(vec![r, c], (0..r * c).map(|_| rng.random_bool(0.3) as u8 as f64).collect()).unwrap();
        let (s1, s2, t) = (set_of(r, &mut rng), set_of(r, &mut rng), set_of(c, &mut rng));
        let anchor = rng.random_range(0..r);

        let pos = t.iter().filter(|&&m| a.at(anchor, m) == 1.0).count() as f64 / t.len() as f64;
        if positive_accuracy(&a, anchor, &t).unwrap() != pos {
            mismatches.push(format!("{case}:positive_accuracy"));
        }

        let mut fired = 0usize;
        for &i in &s1 {
            for &j in &s2 {
                for &k in &t {
                    fired += (a.at(i, k) == 1.0 && a.at(j, k) == 1.0) as usize;
                }
            }
        }
        let neg = 1.0 - fired as f64 / (s1.len() * s2.len() * t.len()) as f64;
        if negative_accuracy(&a, &s1, &s2, &t).unwrap() != neg {
            mismatches.push(format!("{case}:negative_accuracy"));
        }

        let pairs: BTreeSet<(usize, usize)> = (0..5).map(|_| (rng.random_range(0..r), rng.random_range(0..c))).collect();
        let sens = pairs.iter().filter(|&&(i, j)| a.at(i, j) == 1.0).count() as f64 / pairs.len() as f64;
        if prediction_sensitivity(&a, &pairs).unwrap() != sens {
            mismatches.push(format!("{case}:sensitivity"));
        }

        let p1 = rng_sample(SampleKind::Uniform01, &[r, c], &mut rng);
        let p2 = rng_sample(SampleKind::Uniform01, &[r, c], &mut rng);
        let mut kl = 0.0;
        for (&x, &y) in p1.data().iter().zip(p2.data()) {
            let (x, y) = (x.clamp(P_CLIP, 1.0 - P_CLIP), y.clamp(P_CLIP, 1.0 - P_CLIP));
            kl += x * (x / y).ln() + (1.0 - x) * ((1.0 - x) / (1.0 - y)).ln();
        }
        kl /= (r * c) as f64;
        if (bipartite_kl(&p1, &p2).unwrap() - kl).abs() > 1e-12 {
            mismatches.push(format!("{case}:bipartite_kl"));
        }

        let scores = Tensor::new(vec![r, c], (0..r * c).map(|_| rng.random_range(0..6) as f64).collect()).unwrap();
        let mut truth = a.clone();
        truth.set(0, 0, 1.0);
        truth.set(r - 1, c - 1, 0.0);
        let (mut wins, mut total) = (0.0, 0.0);
        for (si, ti) in scores.data().iter().zip(truth.data()) {
            for (sj, tj) in scores.data().iter().zip(truth.data()) {
                if *ti == 1.0 && *tj == 0.0 {
                    total += 1.0;
                    wins += if si > sj { 1.0 } else if si == sj { 0.5 } else { 0.0 };
                }
            }
        }
        if roc_auc(&scores, &truth).unwrap() != wins / total {
            mismatches.push(format!("{case}:roc_auc"));
        }

        let x: Vec<f64> = (0..c).map(|_| rng.random_range(0..4) as f64).collect();
        let mut y: Vec<f64> = (0..c).map(|_| rng.random::<f64>()).collect();
        y[0] = y[1] + 1.0;
        if x.iter().all(|v| *v == x[0]) {
            continue;
        }
        let rho = pearson(&ranks_by_counting(&x), &ranks_by_counting(&y));
        if (spearman_rho(&x, &y).unwrap() - rho).abs() > 1e-12 {
            mismatches.push(format!("{case}:spearman"));
        }
    }
    let pass = mismatches.is_empty();
    let detail = if pass {
        "50 instances up to 20x20, 6 metrics".to_owned()
    } else {
        format!("mismatches: {}", mismatches.join(", "))
    };
    report("metric_oracles", pass, &detail);
    assert!(pass);
}

#[test]
fn training_progress() {
    let (ds, _) = easy_fixture();
    let start = Instant::now();
    // Patience equal to the epoch budget, so all 1000 epochs run.
    let config = TrainConfig { early_stop_patience: 1000, ..TrainConfig::default() };
    let result = {
        let mut mc = ModelConfig::new(2, ds.sample_dim());
        mc.seed = 7;
        fit(BayRel::new(mc).unwrap(), &ds, &TrainConfig { seed: 7, ..config })
    };
    let secs = start.elapsed().as_secs_f64();
    let (pass, detail) = match result {
        Ok(out) => {
            let s = smoothed_totals(&out.history, 20);
            let e1 = out.history[0].elbo.total;
            let finite = out.history.iter().all(|r| r.elbo.is_finite());
            let pass = out.history.len() == 1000 && s[199] > e1 && finite && secs <= 600.0;
            (
                pass,
                format!("epoch-1 {e1:.1}, smoothed epoch-200 {:.1}, {} epochs all finite={finite}, {secs:.1} s", s[199], out.history.len()),
            )
        }
        Err(e) => (false, format!("training failed: {e}")),
    };
    report("training_progress", pass, &detail);
    assert!(pass, "{detail}");
}

#[test]
fn planted_recovery() {
    let mut rows = Vec::new();
    for seed in [7u64, 8, 9, 10] {
        let (ds, truth) = easy_fixture_with_seed(seed);
        let ind = truth.indicator(ds.view(0).n_nodes(), ds.view(1).n_nodes());
        let out = train(&ds, seed, TrainConfig::default());
        let ours = roc_auc(&infer(&out.model, &ds, seed), &ind).unwrap();
        let srca = srca_matrix(&ds.view(0).attributes, &ds.view(1).attributes).unwrap();
        rows.push((seed, ours, roc_auc(&srca.matrix, &ind).unwrap()));
    }
    let mean = |f: fn(&(u64, f64, f64)) -> f64| rows.iter().map(f).sum::<f64>() / rows.len() as f64;
    let (ours, base) = (mean(|r| r.1), mean(|r| r.2));
    let floor = rows.iter().all(|r| r.1 >= 0.80);
    let pass = floor && ours >= base;
    let per_seed: Vec<String> = rows.iter().map(|(s, a, b)| format!("seed {s} {a:.3}/{b:.3}")).collect();
    report(
        "planted_recovery",
        pass,
        &format!(
            "AUC model/srca {}; every seed >= 0.80: {floor}; mean {ours:.3} vs {base:.3}",
            per_seed.join(", ")
        ),
    );
    assert!(pass);
}

#[test]
fn consistency_under_subsampling() {
    let (ds, _) = easy_fixture();
    let half: Vec<usize> = (0..ds.sample_dim() / 2).collect();
    let sub = ds.with_samples(&half);
    let full = infer(&train(&ds, 7, TrainConfig::default()).model, &ds, 7);
    let part = infer(&train(&sub, 7, TrainConfig::default()).model, &sub, 7);
    let between = bipartite_kl(&full, &part).unwrap();
    let to_uniform = bipartite_kl(&full, &Tensor::full(full.shape(), 0.5)).unwrap();
    let pass = between < to_uniform;
    report(
        "consistency_under_subsampling",
        pass,
        &format!("KL(100% || 50%) {between:.4} vs KL(100% || 0.5) {to_uniform:.4}"),
    );
    assert!(pass);
}

fn tree(dir: &Path) -> Vec<(String, Vec<u8>)> {
    let mut out: Vec<_> = fs::read_dir(dir)
        .unwrap()
        .map(|e| e.unwrap().path())
        .filter(|p| p.is_file())
        .map(|p| (p.file_name().unwrap().to_string_lossy().into_owned(), fs::read(&p).unwrap()))
        .collect();
    out.sort();
    out
}

fn cli_run(root: &Path) -> Vec<(String, Vec<u8>)> {
    let s = |p: &Path| p.to_str().unwrap().to_owned();
    let data = root.join("data");
    let manifest = data.join("manifest.toml");
    let model = root.join("model");
    let ckpt = model.join("model.ckpt");
    let inf = root.join("infer");
    let srca = root.join("srca");
    let grad = root.join("gradcheck.tsv");
    let eval = root.join("eval.tsv");
    let steps: Vec<Vec<String>> = vec![
        vec!["synth".into(), "--out".into(), s(&data), "--seed".into(), "11".into()],
        vec!["train".into(), "--dataset".into(), s(&manifest), "--out".into(), s(&model), "--seed".into(), "11".into(), "--epochs".into(), "150".into()],
        vec!["infer".into(), "--checkpoint".into(), s(&ckpt), "--dataset".into(), s(&manifest), "--out".into(), s(&inf), "--seed".into(), "11".into(), "--density".into(), "0.1".into()],
        vec!["srca".into(), "--dataset".into(), s(&manifest), "--out".into(), s(&srca)],
        vec!["eval".into(), "--edges".into(), s(&inf.join("edges.tsv")), "--truth".into(), s(&data.join("truth.tsv")), "--validation".into(), s(&data.join("truth.tsv")), "--compare".into(), s(&srca.join("edges.tsv")), "--out".into(), s(&eval)],
        vec!["gradcheck".into(), "--out".into(), s(&grad)],
    ];
    for args in steps {
        let out = Command::new(env!("CARGO_BIN_EXE_bayrel")).args(&args).output().unwrap();
        assert!(out.status.success(), "{args:?}: {}", String::from_utf8_lossy(&out.stderr));
    }
    let mut files = Vec::new();
    for (tag, dir) in [("data", &data), ("model", &model), ("infer", &inf), ("srca", &srca)] {
        files.extend(tree(dir).into_iter().map(|(n, b)| (format!("{tag}/{n}"), b)));
    }
    files.extend(tree(root));
    files
}

#[test]
fn cli_determinism() {
    let (a, b) = (tempfile::tempdir().unwrap(), tempfile::tempdir().unwrap());
    let (fa, fb) = (cli_run(a.path()), cli_run(b.path()));
    let differing: Vec<&str> = fa.iter().zip(&fb).filter(|(x, y)| x != y).map(|(x, _)| x.0.as_str()).collect();
    let pass = fa.len() == fb.len() && differing.is_empty() && fa.len() >= 12;
    report(
        "cli_determinism",
        pass,
        &format!("{} output files across synth/train/infer/srca/eval/gradcheck, differing: {differing:?}", fa.len()),
    );
    assert!(pass);
}

#[test]
fn checkpoint_round_trip() {
    let (ds, _) = easy_fixture();
    let out = train(&ds, 7, TrainConfig { epochs: 50, ..TrainConfig::default() });
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("model.ckpt");
    checkpoint::save(&out.model, &path).unwrap();
    let back = checkpoint::load(&path).unwrap();
    let bits = |m: &BayRel| m.params.values().iter().flat_map(|t| t.data().iter().map(|v| v.to_bits())).collect::<Vec<_>>();
    let exact = bits(&back) == bits(&out.model) && back.params.names() == out.model.params.names();
    let inputs = ElboInputs::new(&ds, None);
    let c = TrainConfig::default();
    let e1 = elbo_forward(&out.model, &inputs, &c, &mut seeded_rng(5)).unwrap();
    let e2 = elbo_forward(&back, &inputs, &c, &mut seeded_rng(5)).unwrap();
    let same = e1.total.to_bits() == e2.total.to_bits();
    let pass = exact && same;
    report(
        "checkpoint_round_trip",
        pass,
        &format!("{} parameters bit-exact: {exact}; ELBO {:.6} reproduced: {same}", out.model.params.total_size(), e1.total),
    );
    assert!(pass);
}
