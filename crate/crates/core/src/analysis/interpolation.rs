use super::AnalysisError;
use crate::corpus::LabeledImageSet;
use crate::methods::{accuracy, Checkpoint, Model};
use crate::tensornet::{Network, Real, WeightVector};
use serde::{Deserialize, Serialize};

/// Test accuracy along a straight line between two checkpoints.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct InterpolationPath {
    pub s: Vec<f64>,
    pub accuracies: Vec<f64>,
    pub init_id: String,
    pub final_id: String,
    pub side_mode: bool,
}

/// `n` evenly spaced points from 0 to 1 inclusive.
pub fn interpolation_grid(n: usize) -> Vec<f64> {
    match n {
        0 => Vec::new(),
        1 => vec![1.0],
        _ => (0..n).map(|i| i as f64 / (n - 1) as f64).collect(),
    }
}

/// Weights at position `s`. Plain mode blends every entry (running
/// statistics included). Side mode keeps the entries `init` has and scales
/// the entries only `fin` has (the added side modules) by `s`.
pub fn interpolate_weights<T: Real>(init: &WeightVector<T>, fin: &WeightVector<T>, s: f64, side_mode: bool) -> Result<WeightVector<T>, AnalysisError> {
    if !side_mode {
        init.check_schema(fin).map_err(|e| AnalysisError::Schema(e.to_string()))?;
        return Ok(WeightVector::lerp(init, fin, T::of(s)));
    }
    let mut out = fin.clone();
    let scale = T::of(s);
    for i in 0..out.len() {
        let name = out.entry(i).name.clone();
        match init.get(&name) {
            Some(e) if e.shape == out.entry(i).shape && e.data == out.entry(i).data => {}
            Some(_) => return Err(AnalysisError::Schema(format!("{name} differs between the side-mode endpoints"))),
            None => out.data_mut(i).iter_mut().for_each(|v| *v *= scale),
        }
    }
    if init.len() + count_new(init, fin) != fin.len() {
        return Err(AnalysisError::Schema("final checkpoint lacks entries of the initial one".into()));
    }
    Ok(out)
}

fn count_new<T: Real>(init: &WeightVector<T>, fin: &WeightVector<T>) -> usize {
    fin.entries().iter().filter(|e| init.get(&e.name).is_none()).count()
}

/// Accuracy on `test` at `grid_n` evenly spaced points from `init` (s = 0)
/// to `fin` (s = 1), in evaluation mode.
pub fn interpolation_path<T: Real>(
    init: &Checkpoint<T>,
    fin: &Checkpoint<T>,
    test: &LabeledImageSet,
    grid_n: usize,
    side_mode: bool,
) -> Result<InterpolationPath, AnalysisError> {
    if grid_n < 2 {
        return Err(AnalysisError::Shape(format!("grid of {grid_n} points has no endpoints")));
    }
    if init.arch != fin.arch {
        return Err(AnalysisError::Schema(format!("architectures differ: {} vs {}", init.arch, fin.arch)));
    }
    let mut net = Network::with_sides(fin.arch, &fin.sides, &fin.weights)?;
    net.side_limit = fin.side_limit;
    let s = interpolation_grid(grid_n);
    let mut accuracies = Vec::with_capacity(s.len());
    for &si in &s {
        let w = interpolate_weights(&init.weights, &fin.weights, si, side_mode)?;
        let mut m = Model { net: net.clone(), w };
        accuracies.push(accuracy(&mut m, test));
    }
    Ok(InterpolationPath { s, accuracies, init_id: init.label.clone(), final_id: fin.label.clone(), side_mode })
}

impl InterpolationPath {
    pub fn to_csv(&self) -> Result<String, AnalysisError> {
        let mut w = csv::Writer::from_writer(Vec::new());
        w.write_record(["s", "accuracy"])?;
        for (s, a) in self.s.iter().zip(&self.accuracies) {
            // Shortest round-trip form, so parsed values equal the evaluations exactly.
            w.write_record([format!("{s:.4}"), a.to_string()])?;
        }
        Ok(String::from_utf8(w.into_inner().map_err(|e| csv::Error::from(e.into_error()))?).expect("ascii"))
    }
}
