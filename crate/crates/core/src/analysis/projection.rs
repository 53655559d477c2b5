use super::AnalysisError;
use crate::tensornet::{Real, WeightVector};
use serde::{Deserialize, Serialize};

/// Coefficients of `w - w*` along `w_H - w*` (x) and `w_T - w*` (y). The two
/// axes are not orthogonalized.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ProjectionPoint {
    pub x: f64,
    pub y: f64,
}

fn flat<T: Real>(w: &WeightVector<T>, layer: Option<&str>) -> Vec<f64> {
    let prefix = layer.map(|l| format!("{l}."));
    (0..w.len())
        .filter(|&i| w.is_param(i) && prefix.as_deref().is_none_or(|p| w.entry(i).name.starts_with(p)))
        .flat_map(|i| w.data(i).iter().map(|v| v.f64()))
        .collect()
}

/// Project `w` onto the axes spanned from the reference `w_star` toward
/// `w_h` and `w_t`, over every parameter or only those of `layer`.
pub fn project_weights<T: Real>(
    w: &WeightVector<T>,
    w_star: &WeightVector<T>,
    w_h: &WeightVector<T>,
    w_t: &WeightVector<T>,
    layer: Option<&str>,
) -> Result<ProjectionPoint, AnalysisError> {
    for other in [w, w_h, w_t] {
        w_star.check_schema(other).map_err(|e| AnalysisError::Schema(e.to_string()))?;
    }
    let (v, o, h, t) = (flat(w, layer), flat(w_star, layer), flat(w_h, layer), flat(w_t, layer));
    if o.is_empty() {
        return Err(AnalysisError::Schema(format!("no parameters in layer {layer:?}")));
    }
    let coef = |axis: &[f64], name: &str| -> Result<f64, AnalysisError> {
        let mut num = 0.0;
        let mut den = 0.0;
        for k in 0..o.len() {
            let a = axis[k] - o[k];
            num += (v[k] - o[k]) * a;
            den += a * a;
        }
        if den == 0.0 {
            return Err(AnalysisError::Degenerate(format!("{name} axis has zero length")));
        }
        Ok(num / den)
    };
    Ok(ProjectionPoint { x: coef(&h, "historical")?, y: coef(&t, "final")? })
}
