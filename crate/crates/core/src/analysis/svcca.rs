use super::AnalysisError;
use crate::corpus::LabeledImageSet;
use crate::methods::Model;
use crate::tensornet::train::pack;
use crate::tensornet::{Batch, Ctx, Real};
use nalgebra::DMatrix;
use serde::{Deserialize, Serialize};

/// Fraction of variance kept by the SVD step.
const KEEP_VARIANCE: f64 = 0.99;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SvccaScore {
    /// Mean of the leading canonical correlations that account for half of
    /// the total squared correlation.
    pub mean_top50: f64,
    /// Same for 90%.
    pub mean_top90: f64,
    /// All canonical correlations, largest first.
    pub coefficients: Vec<f64>,
    /// Directions kept from each side.
    pub kept: (usize, usize),
}

/// Orthonormal basis (samples x k) of the centered activations' leading
/// singular directions that hold `KEEP_VARIANCE` of the variance.
fn reduce(x: &DMatrix<f64>, side: &str) -> Result<DMatrix<f64>, AnalysisError> {
    let (n, d) = x.shape();
    if n == 0 || d == 0 {
        return Err(AnalysisError::Shape(format!("{side} activations are {n} x {d}")));
    }
    let mut c = x.clone();
    for mut col in c.column_iter_mut() {
        let mean = col.mean();
        col.add_scalar_mut(-mean);
    }
    let svd = c.svd(true, false);
    let u = svd.u.expect("requested U");
    let mut order: Vec<usize> = (0..svd.singular_values.len()).collect();
    order.sort_by(|&a, &b| svd.singular_values[b].total_cmp(&svd.singular_values[a]));
    let sv: Vec<f64> = order.iter().map(|&i| svd.singular_values[i]).collect();
    let top = sv.first().copied().unwrap_or(0.0);
    let tol = top * 1e-10 * n.max(d) as f64;
    let rank = sv.iter().take_while(|&&s| s > tol).count();
    if rank == 0 {
        return Err(AnalysisError::Degenerate(format!("{side} activations are constant")));
    }
    if rank < d.min(n) {
        log::warn!("{side} activations have rank {rank} < {}; keeping at most {rank} directions", d.min(n));
    }
    let total: f64 = sv[..rank].iter().map(|s| s * s).sum();
    let mut acc = 0.0;
    let mut k = 0;
    while k < rank {
        acc += sv[k] * sv[k];
        k += 1;
        if acc >= KEEP_VARIANCE * total {
            break;
        }
    }
    if n <= k {
        return Err(AnalysisError::Shape(format!("{n} samples do not exceed the {k} kept {side} directions")));
    }
    Ok(DMatrix::from_fn(n, k, |r, j| u[(r, order[j])]))
}

/// Mean of the leading coefficients whose squares reach `frac` of the total.
fn mean_leading(rho: &[f64], frac: f64) -> f64 {
    let total: f64 = rho.iter().map(|r| r * r).sum();
    if total == 0.0 {
        return 0.0;
    }
    let mut acc = 0.0;
    let mut m = 0;
    for r in rho {
        acc += r * r;
        m += 1;
        if acc >= frac * total - 1e-12 * total {
            break;
        }
    }
    rho[..m].iter().sum::<f64>() / m as f64
}

/// SVCCA similarity of two activation matrices (samples x units, same samples).
pub fn svcca(a: &DMatrix<f64>, b: &DMatrix<f64>) -> Result<SvccaScore, AnalysisError> {
    if a.nrows() != b.nrows() {
        return Err(AnalysisError::Shape(format!("{} vs {} samples", a.nrows(), b.nrows())));
    }
    let (qa, qb) = (reduce(a, "first")?, reduce(b, "second")?);
    let m = qa.transpose() * &qb;
    let mut rho: Vec<f64> = m.singular_values().iter().map(|r| r.clamp(0.0, 1.0)).collect();
    rho.sort_by(|x, y| y.total_cmp(x));
    Ok(SvccaScore {
        mean_top50: mean_leading(&rho, 0.5),
        mean_top90: mean_leading(&rho, 0.9),
        kept: (qa.ncols(), qb.ncols()),
        coefficients: rho,
    })
}

/// Eval-mode outputs of unit `unit` (0 is the input layer, the last is the
/// logits) averaged over spatial positions: one row per sample.
pub fn layer_activations<T: Real>(model: &mut Model<T>, set: &LabeledImageSet, unit: usize) -> Result<DMatrix<f64>, AnalysisError> {
    let units = model.net.units.len();
    if unit >= units {
        return Err(AnalysisError::Shape(format!("unit {unit} of {units}")));
    }
    let idx: Vec<usize> = (0..set.len()).collect();
    let mut rows: Vec<Vec<f64>> = Vec::with_capacity(set.len());
    for chunk in idx.chunks(256) {
        let b: Batch<T> = pack(set, chunk, None, 0);
        let (_, outs) = model.net.forward_layers(b.x, &mut model.w, &Ctx::eval(), true);
        let a = &outs[unit];
        let hw = a.h * a.w;
        for s in 0..a.n {
            rows.push((0..a.c).map(|c| a.data[(c * a.n + s) * hw..(c * a.n + s + 1) * hw].iter().map(|v| v.f64()).sum::<f64>() / hw as f64).collect());
        }
    }
    let d = rows.first().map_or(0, Vec::len);
    Ok(DMatrix::from_fn(rows.len(), d, |r, c| rows[r][c]))
}
