use super::pca::{fit_pca, PcaModel};
use super::transport::{conditional_wasserstein2, wasserstein2};
use super::MetricError;
use crate::corpus::LabeledImageSet;
use crate::rng::{derive_seed, SplitMix64};
use crate::shiftgen::MaterializedSequence;
use serde::{Deserialize, Serialize};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ShiftConfig {
    pub variance_target: f64,
    pub k_max: usize,
    /// Points per side kept for transport (seeded subsample above this).
    pub subsample_cap: usize,
    pub seed: u64,
}

impl Default for ShiftConfig {
    fn default() -> Self {
        Self { variance_target: 0.95, k_max: 100, subsample_cap: 2000, seed: 0 }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StepShift {
    pub step: usize,
    pub w_x: f64,
    pub w_x_given_y: f64,
    pub raw_w_x: f64,
    pub raw_w_x_given_y: f64,
    pub n_train: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ShiftReport {
    pub steps: Vec<StepShift>,
    /// In-distribution distances at the final step (train vs test).
    pub denom_w_x: f64,
    pub denom_w_x_given_y: f64,
    pub n_test: usize,
    pub pca_k: usize,
    pub subsample_cap: usize,
}

impl ShiftReport {
    pub fn to_csv(&self) -> String {
        let mut out = String::from("step,W_X,W_X_given_Y,n_train_t,n_test_T,pca_k,subsample_cap\n");
        for s in &self.steps {
            out.push_str(&format!(
                "{},{:.6},{:.6},{},{},{},{}\n",
                s.step, s.w_x, s.w_x_given_y, s.n_train, self.n_test, self.pca_k, self.subsample_cap
            ));
        }
        out
    }
}

/// Points of one set in PCA space, with labels.
#[derive(Debug, Clone, PartialEq)]
pub struct ProjectedSet {
    pub points: Vec<Vec<f64>>,
    pub labels: Vec<usize>,
}

fn subsample(set: &LabeledImageSet, cap: usize, seed: u64) -> Vec<usize> {
    let all: Vec<usize> = (0..set.len()).collect();
    if set.len() <= cap {
        return all;
    }
    let mut idx = SplitMix64::new(seed).sample_without_replacement(&all, cap);
    idx.sort_unstable();
    idx
}

fn project_set(set: &LabeledImageSet, pca: &PcaModel, idx: &[usize]) -> ProjectedSet {
    let rows: Vec<Vec<f64>> = idx.iter().map(|&i| set.images[i].to_unit()).collect();
    ProjectedSet { points: pca.project_all(&rows), labels: idx.iter().map(|&i| set.labels[i]).collect() }
}

/// Normalized metrics from already-projected point sets. The last train set
/// is the final step's and supplies the denominators.
pub fn metrics_from_points(
    trains: &[ProjectedSet],
    test: &ProjectedSet,
    num_classes: usize,
) -> Result<(Vec<(f64, f64)>, f64, f64), MetricError> {
    use rayon::prelude::*;
    let raw: Result<Vec<(f64, f64)>, MetricError> = trains
        .par_iter()
        .map(|tr| {
            let (w, _) = wasserstein2(&tr.points, &test.points)?;
            let wc = conditional_wasserstein2(&tr.points, &tr.labels, &test.points, &test.labels, num_classes)?;
            Ok((w, wc))
        })
        .collect();
    let raw = raw?;
    let (dx, dxy) = *raw.last().ok_or(MetricError::Empty)?;
    if dx <= 0.0 || dxy <= 0.0 {
        return Err(MetricError::Solver("in-distribution distance is zero; metrics undefined".into()));
    }
    Ok((raw, dx, dxy))
}

/// Normalized covariate and conditional shift of each step's training data
/// against the final test set, with a PCA fit on all steps' training images.
pub fn shift_report(seq: &MaterializedSequence, cfg: &ShiftConfig) -> Result<(ShiftReport, PcaModel), MetricError> {
    let pca_rows: Vec<Vec<f64>> = seq.steps.iter().flat_map(|s| s.train.unit_rows()).collect();
    let pca = fit_pca(&pca_rows, cfg.variance_target, cfg.k_max, derive_seed(cfg.seed, 0, "pca"))?;
    let trains: Vec<&LabeledImageSet> = seq.steps.iter().map(|s| &s.train).collect();
    let report = shift_report_with_pca(&trains, &seq.test, &pca, seq.num_classes, cfg)?;
    Ok((report, pca))
}

pub fn shift_report_with_pca(
    trains: &[&LabeledImageSet],
    test: &LabeledImageSet,
    pca: &PcaModel,
    num_classes: usize,
    cfg: &ShiftConfig,
) -> Result<ShiftReport, MetricError> {
    let test_idx = subsample(test, cfg.subsample_cap, derive_seed(cfg.seed, 0, "ot-subsample/test"));
    let test_p = project_set(test, pca, &test_idx);
    let train_p: Vec<ProjectedSet> = trains
        .iter()
        .enumerate()
        .map(|(t, s)| project_set(s, pca, &subsample(s, cfg.subsample_cap, derive_seed(cfg.seed, t as u64, "ot-subsample/train"))))
        .collect();
    let (raw, dx, dxy) = metrics_from_points(&train_p, &test_p, num_classes)?;
    let steps = raw
        .iter()
        .enumerate()
        .map(|(t, &(w, wc))| StepShift {
            step: t,
            w_x: w / dx,
            w_x_given_y: wc / dxy,
            raw_w_x: w,
            raw_w_x_given_y: wc,
            n_train: train_p[t].points.len(),
        })
        .collect();
    Ok(ShiftReport { steps, denom_w_x: dx, denom_w_x_given_y: dxy, n_test: test_p.points.len(), pca_k: pca.k, subsample_cap: cfg.subsample_cap })
}
