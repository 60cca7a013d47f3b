//! Closed-form Gaussian terms and the masked Bernoulli likelihood, all as
//! scalar nodes on a tape.

use std::f64::consts::{E, PI};

use crate::autodiff::{Tape, Var};
use crate::error::{Error, Result};
use crate::model::P_CLIP;
use crate::tensor::Tensor;

/// `KL(N(mu, exp(logsigma)²) ‖ N(0, I))`, summed over all entries.
pub fn gaussian_kl_to_standard(tape: &mut Tape, mu: Var, logsigma: Var) -> Result<Var> {
    // 0.5 Σ (μ² + e^{2 log σ} − 1 − 2 log σ)
    let mu2 = tape.mul(mu, mu)?;
    let two_ls = tape.scale(logsigma, 2.0);
    let var = tape.exp(two_ls);
    let a = tape.add(mu2, var)?;
    let b = tape.sub(a, two_ls)?;
    let c = tape.add_scalar(b, -1.0);
    let s = tape.sum_all(c);
    Ok(tape.scale(s, 0.5))
}

/// `Σ log N(x; mu, sigma²)` with a fixed scalar `sigma`.
pub fn gaussian_log_pdf(tape: &mut Tape, x: Var, mu: Var, sigma: f64) -> Result<Var> {
    if !(sigma > 0.0) {
        return Err(Error::Invalid(format!("sigma must be positive, got {sigma}")));
    }
    let n = tape.value(x).len().max(tape.value(mu).len()) as f64;
    let diff = tape.sub(x, mu)?;
    let sq = tape.mul(diff, diff)?;
    let s = tape.sum_all(sq);
    let quad = tape.scale(s, -0.5 / (sigma * sigma));
    Ok(tape.add_scalar(quad, -0.5 * n * (2.0 * PI * sigma * sigma).ln()))
}

/// Entropy of a diagonal Gaussian, `Σ [0.5 log(2πe) + log σ]`.
pub fn gaussian_entropy(tape: &mut Tape, logsigma: Var) -> Var {
    let n = tape.value(logsigma).len() as f64;
    let s = tape.sum_all(logsigma);
    tape.add_scalar(s, 0.5 * n * (2.0 * PI * E).ln())
}

/// `Σ_mask [t log p + (1 − t) log(1 − p)]` with `p = clip(σ(logits))`.
pub fn bernoulli_log_likelihood(
    tape: &mut Tape,
    logits: Var,
    target: &Tensor,
    mask: &Tensor,
) -> Result<Var> {
    let p = tape.sigmoid(logits);
    bernoulli_log_likelihood_probs(tape, p, target, mask)
}

/// As [`bernoulli_log_likelihood`], starting from probabilities.
pub fn bernoulli_log_likelihood_probs(
    tape: &mut Tape,
    probs: Var,
    target: &Tensor,
    mask: &Tensor,
) -> Result<Var> {
    let shape = tape.shape(probs).to_vec();
    if target.shape() != shape.as_slice() || mask.shape() != shape.as_slice() {
        return Err(Error::shape("bernoulli_log_likelihood", &shape, target.shape()));
    }
    let p = tape.clamp(probs, P_CLIP, 1.0 - P_CLIP);
    let log_p = tape.log(p)?;
    let neg = tape.neg(p);
    let q = tape.add_scalar(neg, 1.0);
    let log_q = tape.log(q)?;
    let pos_w: Vec<f64> = target
        .data()
        .iter()
        .zip(mask.data())
        .map(|(t, m)| t * m)
        .collect();
    let neg_w: Vec<f64> = target
        .data()
        .iter()
        .zip(mask.data())
        .map(|(t, m)| (1.0 - t) * m)
        .collect();
    let pos_w = tape.constant(Tensor::new(shape.clone(), pos_w)?);
    let neg_w = tape.constant(Tensor::new(shape, neg_w)?);
    let a = tape.mul(log_p, pos_w)?;
    let b = tape.mul(log_q, neg_w)?;
    let ab = tape.add(a, b)?;
    Ok(tape.sum_all(ab))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::tensor::{rng_sample, seeded_rng, SampleKind};

    fn scalar(f: impl FnOnce(&mut Tape) -> Var) -> f64 {
        let mut t = Tape::new();
        let v = f(&mut t);
        t.value(v).item()
    }

    #[test]
    fn kl_closed_forms() {
        let kl0 = scalar(|t| {
            let mu = t.constant(Tensor::zeros(&[3, 2]));
            let ls = t.constant(Tensor::zeros(&[3, 2]));
            gaussian_kl_to_standard(t, mu, ls).unwrap()
        });
        assert_eq!(kl0, 0.0);
        let kl1 = scalar(|t| {
            let mu = t.constant(Tensor::vector(vec![1.0]));
            let ls = t.constant(Tensor::vector(vec![0.0]));
            gaussian_kl_to_standard(t, mu, ls).unwrap()
        });
        assert!((kl1 - 0.5).abs() < 1e-15);
    }

    #[test]
    fn log_pdf_closed_forms() {
        let at_mean = |sigma| {
            scalar(|t| {
                let x = t.constant(Tensor::vector(vec![0.3]));
                gaussian_log_pdf(t, x, x, sigma).unwrap()
            })
        };
        assert!((at_mean(1.0) + 0.5 * (2.0 * PI).ln()).abs() < 1e-14);
        assert!((at_mean(1.0) - at_mean(2.0) - 2f64.ln()).abs() < 1e-14);
        assert!((at_mean(1.0) + 0.91894).abs() < 1e-5);
    }

    #[test]
    fn log_pdf_matches_scalar_loop() {
        let mut rng = seeded_rng(13);
        let x = rng_sample(SampleKind::StandardGaussian, &[4, 5], &mut rng);
        let mu = rng_sample(SampleKind::StandardGaussian, &[4, 5], &mut rng);
        let sigma = 0.7;
        let expected: f64 = x
            .data()
            .iter()
            .zip(mu.data())
            .map(|(a, m)| -0.5 * (2.0 * PI * sigma * sigma).ln() - (a - m).powi(2) / (2.0 * sigma * sigma))
            .sum();
        let got = scalar(|t| {
            let xv = t.constant(x.clone());
            let mv = t.constant(mu.clone());
            gaussian_log_pdf(t, xv, mv, sigma).unwrap()
        });
        assert!((got - expected).abs() < 1e-12 * expected.abs());
    }

    #[test]
    fn entropy_closed_forms() {
        let h = |c: f64| {
            scalar(|t| {
                let ls = t.constant(Tensor::full(&[3], c));
                gaussian_entropy(t, ls)
            })
        };
        assert!((h(0.0) / 3.0 - 1.41894).abs() < 1e-5);
        assert!((h(0.25) - h(0.0) - 0.75).abs() < 1e-14);
    }

    #[test]
    fn bernoulli_half_everywhere() {
        let target = Tensor::from_rows(&[vec![1.0, 0.0], vec![0.0, 1.0]]).unwrap();
        let mask = Tensor::from_rows(&[vec![0.0, 1.0], vec![1.0, 1.0]]).unwrap();
        let ll = scalar(|t| {
            let l = t.constant(Tensor::zeros(&[2, 2]));
            bernoulli_log_likelihood(t, l, &target, &mask).unwrap()
        });
        assert!((ll - 3.0 * 0.5f64.ln()).abs() < 1e-14);
    }

    #[test]
    fn bernoulli_saturated() {
        let target = Tensor::from_rows(&[vec![1.0, 0.0], vec![0.0, 1.0]]).unwrap();
        let logits = target.map(|t| if t > 0.5 { 30.0 } else { -30.0 });
        let ll = scalar(|t| {
            let l = t.constant(logits.clone());
            bernoulli_log_likelihood(t, l, &target, &Tensor::ones(&[2, 2])).unwrap()
        });
        assert!(ll.abs() < 1e-5, "{ll}");
    }

    #[test]
    fn bernoulli_matches_scalar_loop() {
        let mut rng = seeded_rng(21);
        let logits = rng_sample(SampleKind::StandardGaussian, &[3, 3], &mut rng).map(|v| 2.0 * v);
        let target = rng_sample(SampleKind::Uniform01, &[3, 3], &mut rng).map(|u| (u < 0.5) as u8 as f64);
        let mut mask = Tensor::ones(&[3, 3]);
        for i in 0..3 {
            mask.set(i, i, 0.0);
        }
        let mut expected = 0.0;
        for i in 0..3 {
            for j in 0..3 {
                if i == j {
                    continue;
                }
                let p = (1.0 / (1.0 + (-logits.at(i, j)).exp())).clamp(1e-6, 1.0 - 1e-6);
                let t = target.at(i, j);
                expected += t * p.ln() + (1.0 - t) * (1.0 - p).ln();
            }
        }
        let got = scalar(|t| {
            let l = t.constant(logits.clone());
            bernoulli_log_likelihood(t, l, &target, &mask).unwrap()
        });
        assert!((got - expected).abs() < 1e-12);
    }
}
