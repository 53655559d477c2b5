//! Principal component analysis with a deterministic sign convention.
//!
//! Small problems are solved exactly from the covariance (or Gram) matrix.
//! Large ones use seeded randomized subspace iteration (Halko, Martinsson &
//! Tropp, 2011) followed by Rayleigh-Ritz on the captured subspace; the
//! reported variances are exact Rayleigh quotients of the returned
//! orthonormal components, so projection error always equals total variance
//! minus explained variance.

use super::MetricError;
use crate::rng::SplitMix64;
use nalgebra::{DMatrix, SymmetricEigen};

const EXACT_LIMIT: usize = 640;
const OVERSAMPLE: usize = 20;
const POWER_ITERS: usize = 6;

#[derive(Debug, Clone, PartialEq)]
pub struct PcaModel {
    pub mean: Vec<f64>,
    /// `k` orthonormal rows of length `d`.
    pub components: Vec<Vec<f64>>,
    /// Variance (divisor `N - 1`) along each component, descending.
    pub explained_variance: Vec<f64>,
    pub total_variance: f64,
    pub k: usize,
}

impl PcaModel {
    pub fn dim(&self) -> usize {
        self.mean.len()
    }

    pub fn explained_ratio(&self) -> f64 {
        if self.total_variance > 0.0 {
            self.explained_variance.iter().sum::<f64>() / self.total_variance
        } else {
            1.0
        }
    }

    pub fn project(&self, x: &[f64]) -> Vec<f64> {
        self.components
            .iter()
            .map(|c| c.iter().zip(x).zip(&self.mean).map(|((ci, xi), mi)| ci * (xi - mi)).sum())
            .collect()
    }

    pub fn reconstruct(&self, z: &[f64]) -> Vec<f64> {
        let mut x = self.mean.clone();
        for (c, &zi) in self.components.iter().zip(z) {
            for (xj, cj) in x.iter_mut().zip(c) {
                *xj += zi * cj;
            }
        }
        x
    }

    pub fn project_all(&self, rows: &[Vec<f64>]) -> Vec<Vec<f64>> {
        use rayon::prelude::*;
        rows.par_iter().map(|r| self.project(r)).collect()
    }
}

/// Flip each column so its largest-magnitude entry (first on ties) is positive.
fn fix_signs(v: &mut DMatrix<f64>) {
    for mut col in v.column_iter_mut() {
        let mut best = 0;
        for i in 1..col.len() {
            if col[i].abs() > col[best].abs() {
                best = i;
            }
        }
        if col[best] < 0.0 {
            col.neg_mut();
        }
    }
}

/// Eigenpairs sorted by descending eigenvalue.
fn sorted_eigen(m: DMatrix<f64>) -> (Vec<f64>, DMatrix<f64>) {
    let eig = SymmetricEigen::new(m);
    let mut order: Vec<usize> = (0..eig.eigenvalues.len()).collect();
    order.sort_by(|&a, &b| eig.eigenvalues[b].total_cmp(&eig.eigenvalues[a]).then(a.cmp(&b)));
    let vals = order.iter().map(|&i| eig.eigenvalues[i]).collect();
    let vecs = DMatrix::from_columns(&order.iter().map(|&i| eig.eigenvectors.column(i).into_owned()).collect::<Vec<_>>());
    (vals, vecs)
}

fn orthonormal_basis(m: DMatrix<f64>) -> DMatrix<f64> {
    m.qr().q()
}

/// Orthonormal `d x l` candidate directions (columns).
fn candidate_directions(xc: &DMatrix<f64>, want: usize, seed: u64) -> DMatrix<f64> {
    let (n, d) = xc.shape();
    if d <= EXACT_LIMIT {
        let cov = xc.tr_mul(xc);
        return sorted_eigen(cov).1;
    }
    if n <= EXACT_LIMIT {
        let gram = xc * xc.transpose();
        let (vals, u) = sorted_eigen(gram);
        let keep = vals.iter().take_while(|&&v| v > 1e-12 * vals[0].max(1e-300)).count().max(1);
        let v = xc.tr_mul(&u.columns(0, keep).into_owned());
        return orthonormal_basis(v);
    }
    let l = (want + OVERSAMPLE).min(d).min(n);
    let mut rng = SplitMix64::new(seed);
    let omega = DMatrix::from_fn(d, l, |_, _| rng.normal());
    let mut q = orthonormal_basis(xc * omega);
    for _ in 0..POWER_ITERS {
        let z = orthonormal_basis(xc.tr_mul(&q));
        q = orthonormal_basis(xc * z);
    }
    orthonormal_basis(xc.tr_mul(&q))
}

/// Fit on `rows` (N samples x d features). Keeps the smallest `k` reaching
/// `variance_target` of the total variance, capped at `k_max`.
pub fn fit_pca(rows: &[Vec<f64>], variance_target: f64, k_max: usize, seed: u64) -> Result<PcaModel, MetricError> {
    let n = rows.len();
    if n < 2 {
        return Err(MetricError::TooFewSamples { needed: 2, found: n });
    }
    let d = rows[0].len();
    if let Some(bad) = rows.iter().find(|r| r.len() != d) {
        return Err(MetricError::Shape { expected: d, found: bad.len() });
    }
    let mut mean = vec![0.0; d];
    for r in rows {
        for (m, v) in mean.iter_mut().zip(r) {
            *m += v;
        }
    }
    mean.iter_mut().for_each(|m| *m /= n as f64);
    let xc = DMatrix::from_fn(n, d, |i, j| rows[i][j] - mean[j]);
    let denom = (n - 1) as f64;
    let total_variance = xc.iter().map(|v| v * v).sum::<f64>() / denom;

    let basis = candidate_directions(&xc, k_max, seed);
    // Rayleigh-Ritz on the captured subspace.
    let proj = &xc * &basis;
    let (_, w) = sorted_eigen(proj.tr_mul(&proj));
    let mut comps = &basis * w;
    fix_signs(&mut comps);
    let scores = &xc * &comps;
    let variances: Vec<f64> = scores.column_iter().map(|c| c.norm_squared() / denom).collect();

    let tiny = 1e-12 * total_variance.max(f64::MIN_POSITIVE);
    let rank = variances.iter().take_while(|&&v| v > tiny).count();
    let mut k = 0;
    let mut acc = 0.0;
    while k < rank && k < k_max {
        acc += variances[k];
        k += 1;
        if acc >= variance_target * total_variance {
            break;
        }
    }
    if rank < k_max && acc < variance_target * total_variance {
        log::warn!("PCA: data rank {rank} below the {k_max}-component cap; keeping {k} components");
    }
    let k = k.max(1).min(comps.ncols());
    let components = (0..k).map(|c| comps.column(c).iter().copied().collect()).collect();
    Ok(PcaModel { mean, components, explained_variance: variances[..k].to_vec(), total_variance, k })
}

/// Dot-product Gram helper used by tests.
pub fn max_offdiag_dot(model: &PcaModel) -> f64 {
    let mut worst: f64 = 0.0;
    for a in 0..model.k {
        for b in 0..model.k {
            let dot: f64 = model.components[a].iter().zip(&model.components[b]).map(|(x, y)| x * y).sum();
            let target = if a == b { 1.0 } else { 0.0 };
            worst = worst.max((dot - target).abs());
        }
    }
    worst
}


#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn plane_data_has_two_components() {
        let mut rng = SplitMix64::new(3);
        let u = [1.0, 2.0, 0.0, -1.0, 0.5];
        let v = [0.0, 1.0, 1.0, 1.0, -2.0];
        let rows: Vec<Vec<f64>> = (0..200)
            .map(|_| {
                let (a, b) = (rng.normal(), rng.normal());
                (0..5).map(|j| 3.0 + a * u[j] + b * v[j]).collect()
            })
            .collect();
        let m = fit_pca(&rows, 0.95, 100, 0).unwrap();
        assert_eq!(m.k, 2);
        assert!((m.explained_ratio() - 1.0).abs() < 1e-9);
        assert!(max_offdiag_dot(&m) < 1e-8);
    }

    #[test]
    fn isotropic_gaussian_hits_the_cap() {
        let mut rng = SplitMix64::new(11);
        let rows: Vec<Vec<f64>> = (0..400).map(|_| (0..200).map(|_| rng.normal()).collect()).collect();
        let m = fit_pca(&rows, 0.95, 100, 0).unwrap();
        assert_eq!(m.k, 100);
        assert!(max_offdiag_dot(&m) < 1e-8);
    }

    #[test]
    fn sign_convention_and_determinism() {
        let mut rng = SplitMix64::new(5);
        let rows: Vec<Vec<f64>> = (0..50).map(|_| (0..8).map(|j| rng.normal() * (j + 1) as f64).collect()).collect();
        let a = fit_pca(&rows, 0.95, 100, 0).unwrap();
        let b = fit_pca(&rows, 0.95, 100, 0).unwrap();
        assert_eq!(a, b);
        for c in &a.components {
            let big = c.iter().copied().fold(0.0f64, |m, v| if v.abs() > m.abs() { v } else { m });
            assert!(big > 0.0);
        }
    }
}
