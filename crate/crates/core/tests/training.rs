use std::f64::consts::{E, PI};

use bayrel::autodiff::Tape;
use bayrel::graph::{MultiViewDataset, View, ViewGraph};
use bayrel::model::{BayRel, LinkKind, ModelConfig, P_CLIP};
use bayrel::synth::{generate, SynthConfig};
use bayrel::training::checkpoint;
use bayrel::training::{
    elbo_forward, elbo_on_tape, fit, format_history, sample_noise, smoothed_totals, ElboInputs,
    Holdout, TrainConfig, HISTORY_HEADER,
};
use bayrel::{seeded_rng, Tensor};

fn small() -> MultiViewDataset {
    let config = SynthConfig {
        view_sizes: [12, 9],
        samples: 10,
        communities: 3,
        p_in: 0.5,
        p_out: 0.05,
        planted_edges: 6,
        signal: 0.8,
        noise: 0.3,
        seed: 3,
    };
    generate(&config, &mut seeded_rng(3)).unwrap().0
}

fn model_for(ds: &MultiViewDataset, link: LinkKind, seed: u64) -> BayRel {
    let mut c = ModelConfig::new(ds.n_views(), ds.sample_dim());
    c.link = link;
    c.seed = seed;
    BayRel::new(c).unwrap()
}

fn quick(epochs: usize) -> TrainConfig {
    TrainConfig {
        epochs,
        seed: 5,
        early_stop_patience: epochs,
        validation_fraction: 0.1,
        ..TrainConfig::default()
    }
}

#[test]
fn zero_learning_rate_keeps_parameters() {
    let ds = small();
    let m = model_for(&ds, LinkKind::InnerProduct, 1);
    let out = fit(m.clone(), &ds, &TrainConfig { learning_rate: 0.0, ..quick(5) }).unwrap();
    assert_eq!(out.model.params, m.params);
    assert_eq!(out.history.len(), 5);
}

#[test]
fn fit_is_deterministic() {
    let ds = small();
    for link in [LinkKind::InnerProduct, LinkKind::BernoulliPoisson] {
        let a = fit(model_for(&ds, link, 2), &ds, &quick(15)).unwrap();
        let b = fit(model_for(&ds, link, 2), &ds, &quick(15)).unwrap();
        assert_eq!(format_history(&a.history), format_history(&b.history));
        assert_eq!(checkpoint::encode(&a.model), checkpoint::encode(&b.model));
    }
}

#[test]
fn forward_is_bit_identical_and_weighted() {
    let ds = small();
    let m = model_for(&ds, LinkKind::BernoulliPoisson, 4);
    let inputs = ElboInputs::new(&ds, None);
    let config = TrainConfig { alpha: 7.0, beta_graph: 2.5, mc_samples: 3, ..TrainConfig::default() };
    let a = elbo_forward(&m, &inputs, &config, &mut seeded_rng(9)).unwrap();
    let b = elbo_forward(&m, &inputs, &config, &mut seeded_rng(9)).unwrap();
    assert_eq!(a.total.to_bits(), b.total.to_bits());
    assert_eq!(a, b);
    assert!((a.total - a.weighted_sum(7.0, 2.5)).abs() <= 1e-10 * a.total.abs().max(1.0));

    let plain = TrainConfig { alpha: 1.0, beta_graph: 0.0, ..config };
    let c = elbo_forward(&m, &inputs, &plain, &mut seeded_rng(9)).unwrap();
    let four: f64 = (0..2)
        .map(|v| c.recon_x[v] + c.logp_z_prior[v] + c.entropy_qz[v])
        .sum::<f64>()
        - c.kl_u;
    assert!((c.total - four).abs() <= 1e-10 * four.abs());
}

#[test]
fn zero_weights_on_empty_graphs_match_scalar_oracle() {
    let n = [4, 3];
    let d = 5;
    let views = (0..2)
        .map(|v| View {
            name: format!("v{v}"),
            graph: ViewGraph::with_generated_names(&format!("n{v}"), n[v], []).unwrap(),
            attributes: Tensor::zeros(&[n[v], d]),
        })
        .collect();
    let ds = MultiViewDataset::new(views).unwrap();
    let mut m = model_for(&ds, LinkKind::InnerProduct, 0);
    m.zero_weights();
    let inputs = ElboInputs::new(&ds, None);
    let config = TrainConfig::default();
    let noise = sample_noise(&inputs, &m, &config, &mut seeded_rng(17));
    let mut tape = Tape::new();
    let p = m.bind(&mut tape, false);
    let (_, bd) = elbo_on_tape(&mut tape, &m, &p, &inputs, &config, &noise).unwrap();

    let half_log_2pi = 0.5 * (2.0 * PI).ln();
    let sample = &noise[0];
    for v in 0..2 {
        // U = eps_u and Z = eps_z; decoder and prior mean are zero.
        let recon_x = -((n[v] * d) as f64) * half_log_2pi;
        let logp_z: f64 = sample.z_eps[v].data().iter().map(|e| -half_log_2pi - e * e / 2.0).sum();
        let entropy = (n[v] * 8) as f64 * 0.5 * (2.0 * PI * E).ln();
        let u = &sample.u_eps[v];
        let mut graph = 0.0;
        for i in 0..n[v] {
            for j in 0..n[v] {
                if i != j {
                    let dot: f64 = u.row(i).iter().zip(u.row(j)).map(|(a, b)| a * b).sum();
                    let p = (1.0 / (1.0 + (-dot).exp())).clamp(P_CLIP, 1.0 - P_CLIP);
                    graph += (1.0 - p).ln();
                }
            }
        }
        assert!((bd.recon_x[v] - recon_x).abs() < 1e-10);
        assert!((bd.logp_z_prior[v] - logp_z).abs() < 1e-10);
        assert!((bd.entropy_qz[v] - entropy).abs() < 1e-10);
        assert!((bd.recon_graph[v] - graph).abs() < 1e-10);
    }
    assert_eq!(bd.kl_u, 0.0);
    assert!((bd.total - bd.weighted_sum(30.0, 1.0)).abs() < 1e-9);
}

#[test]
fn holdout_sizes_and_masks() {
    let ds = small();
    let h = Holdout::sample(&ds, 0.2, &mut seeded_rng(1));
    for (v, view) in ds.views().iter().enumerate() {
        let k = (0.2 * view.graph.n_edges() as f64).round() as usize;
        assert_eq!(h.edges[v].len(), k);
        assert_eq!(h.non_edges[v].len(), k);
        assert!(h.edges[v].iter().all(|&(i, j)| view.graph.has_edge(i, j)));
        assert!(h.non_edges[v].iter().all(|&(i, j)| !view.graph.has_edge(i, j)));
    }
    let inputs = ElboInputs::new(&ds, Some(h.clone()));
    for (v, vi) in inputs.views.iter().enumerate() {
        assert_eq!(vi.graph.n_edges(), ds.view(v).graph.n_edges() - h.edges[v].len());
        for &(i, j) in h.edges[v].iter().chain(&h.non_edges[v]) {
            assert_eq!(vi.mask.at(i, j), 0.0);
            assert_eq!(vi.mask.at(j, i), 0.0);
            assert_eq!(vi.target.at(i, j), 0.0);
        }
        let n = vi.mask.rows();
        let masked = vi.mask.data().iter().filter(|&&m| m == 0.0).count();
        assert_eq!(masked, n + 4 * h.edges[v].len());
    }
}

#[test]
fn checkpoint_round_trip_is_exact() {
    let ds = small();
    let out = fit(model_for(&ds, LinkKind::BernoulliPoisson, 6), &ds, &quick(5)).unwrap();
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("m.ckpt");
    checkpoint::save(&out.model, &path).unwrap();
    let back = checkpoint::load(&path).unwrap();
    assert_eq!(back.config, out.model.config);
    assert_eq!(back.params, out.model.params);
    assert_eq!(checkpoint::encode(&back), std::fs::read(&path).unwrap());

    let inputs = ElboInputs::new(&ds, None);
    let c = TrainConfig::default();
    let a = elbo_forward(&out.model, &inputs, &c, &mut seeded_rng(2)).unwrap();
    let b = elbo_forward(&back, &inputs, &c, &mut seeded_rng(2)).unwrap();
    assert_eq!(a, b);

    let mut bytes = checkpoint::encode(&out.model);
    assert!(checkpoint::decode(&bytes[..bytes.len() - 3]).is_err());
    bytes[0] = b'X';
    assert!(checkpoint::decode(&bytes).is_err());
}

#[test]
fn history_format_and_smoothing() {
    let ds = small();
    let out = fit(model_for(&ds, LinkKind::InnerProduct, 7), &ds, &quick(4)).unwrap();
    let text = format_history(&out.history);
    let lines: Vec<&str> = text.lines().collect();
    assert_eq!(lines[0], HISTORY_HEADER);
    assert_eq!(lines.len(), 5);
    for (i, l) in lines[1..].iter().enumerate() {
        let fields: Vec<&str> = l.split('\t').collect();
        assert_eq!(fields.len(), 8);
        assert_eq!(fields[0], (i + 1).to_string());
        assert!(fields[1..].iter().all(|f| f.parse::<f64>().is_ok()));
    }
    let s = smoothed_totals(&out.history, 2);
    assert_eq!(s[0], out.history[0].elbo.total);
    assert!((s[3] - (out.history[2].elbo.total + out.history[3].elbo.total) / 2.0).abs() < 1e-9);

    let none = fit(
        model_for(&ds, LinkKind::InnerProduct, 7),
        &ds,
        &TrainConfig { validation_fraction: 0.0, ..quick(2) },
    )
    .unwrap();
    assert!(format_history(&none.history).lines().skip(1).all(|l| l.ends_with("\tNA")));
    assert_eq!(none.best_epoch, 2);
}

#[test]
fn invalid_configs_are_rejected() {
    let ds = small();
    let m = model_for(&ds, LinkKind::InnerProduct, 0);
    for bad in [
        TrainConfig { learning_rate: -1.0, ..quick(1) },
        TrainConfig { temperature: 0.0, ..quick(1) },
        TrainConfig { validation_fraction: 0.7, ..quick(1) },
        TrainConfig { mc_samples: 0, ..quick(1) },
    ] {
        assert!(fit(m.clone(), &ds, &bad).is_err());
    }
    let other = BayRel::new(ModelConfig::new(2, ds.sample_dim() + 1)).unwrap();
    assert!(fit(other, &ds, &quick(1)).is_err());
}

#[test]
fn training_improves_the_bound() {
    let ds = small();
    let out = fit(model_for(&ds, LinkKind::InnerProduct, 8), &ds, &quick(60)).unwrap();
    let s = smoothed_totals(&out.history, 10);
    assert!(s[59] > s[9], "{} vs {}", s[59], s[9]);
}
