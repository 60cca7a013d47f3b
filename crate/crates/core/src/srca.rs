//! Spearman rank-correlation baseline.

use log::warn;

use crate::error::{Error, Result};
use crate::tensor::Tensor;

/// Average ranks (1-based); tied values share the mean of their rank span.
pub fn midranks(x: &[f64]) -> Vec<f64> {
    let mut order: Vec<usize> = (0..x.len()).collect();
    order.sort_by(|&a, &b| x[a].total_cmp(&x[b]));
    let mut ranks = vec![0.0; x.len()];
    let mut i = 0;
    while i < order.len() {
        let mut j = i;
        while j + 1 < order.len() && x[order[j + 1]] == x[order[i]] {
            j += 1;
        }
        let r = (i + j) as f64 / 2.0 + 1.0;
        for &k in &order[i..=j] {
            ranks[k] = r;
        }
        i = j + 1;
    }
    ranks
}

fn pearson_centered(a: &[f64], b: &[f64]) -> f64 {
    let (mut ab, mut aa, mut bb) = (0.0, 0.0, 0.0);
    for (x, y) in a.iter().zip(b) {
        ab += x * y;
        aa += x * x;
        bb += y * y;
    }
    (ab / (aa * bb).sqrt()).clamp(-1.0, 1.0)
}

fn centered_ranks(x: &[f64]) -> Option<Vec<f64>> {
    let r = midranks(x);
    let mean = (x.len() as f64 + 1.0) / 2.0;
    let c: Vec<f64> = r.into_iter().map(|v| v - mean).collect();
    c.iter().any(|&v| v != 0.0).then_some(c)
}

/// Spearman's ρ: the Pearson correlation of midranks.
pub fn spearman_rho(x: &[f64], y: &[f64]) -> Result<f64> {
    if x.len() != y.len() {
        return Err(Error::shape("spearman_rho", &[x.len()], &[y.len()]));
    }
    if x.len() < 2 {
        return Err(Error::Domain {
            op: "spearman_rho",
            detail: format!("need at least 2 observations, got {}", x.len()),
        });
    }
    match (centered_ranks(x), centered_ranks(y)) {
        (Some(a), Some(b)) => Ok(pearson_centered(&a, &b)),
        _ => Err(Error::Domain {
            op: "spearman_rho",
            detail: "correlation is undefined for a constant vector".into(),
        }),
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct SrcaScores {
    /// `|ρ|` per cross-view pair, `N1 × N2`.
    pub matrix: Tensor,
    /// Rows of either input that were constant and scored as 0.
    pub constant_rows: usize,
}

/// `|ρ|` between every row of `x1` and every row of `x2`.
pub fn srca_matrix(x1: &Tensor, x2: &Tensor) -> Result<SrcaScores> {
    if x1.rank() != 2 || x2.rank() != 2 || x1.cols() != x2.cols() {
        return Err(Error::shape("srca_matrix", x1.shape(), x2.shape()));
    }
    if x1.cols() < 2 {
        return Err(Error::Domain {
            op: "srca_matrix",
            detail: format!("need at least 2 samples, got {}", x1.cols()),
        });
    }
    let ranks = |x: &Tensor| (0..x.rows()).map(|i| centered_ranks(x.row(i))).collect::<Vec<_>>();
    let (r1, r2) = (ranks(x1), ranks(x2));
    let constant_rows = r1.iter().chain(&r2).filter(|r| r.is_none()).count();
    if constant_rows > 0 {
        warn!("srca: {constant_rows} constant rows scored as 0");
    }
    let mut m = Tensor::zeros(&[x1.rows(), x2.rows()]);
    for (i, a) in r1.iter().enumerate() {
        for (j, b) in r2.iter().enumerate() {
            if let (Some(a), Some(b)) = (a, b) {
                m.set(i, j, pearson_centered(a, b).abs());
            }
        }
    }
    Ok(SrcaScores {
        matrix: m,
        constant_rows,
    })
}
