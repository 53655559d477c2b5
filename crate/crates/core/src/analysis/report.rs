use super::AnalysisError;
use serde::{Deserialize, Serialize};

/// Allowance for rounding when comparing against a threshold.
const EPS: f64 = 1e-9;

/// Accuracies per architecture (rows) and method (columns).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ResultGrid {
    pub archs: Vec<String>,
    pub methods: Vec<String>,
    /// Column holding the oracle; it is shown but never marked or ranked.
    pub oracle: Option<String>,
    /// `acc[arch][method]`; `None` where a method does not apply.
    pub acc: Vec<Vec<Option<f64>>>,
}

/// How the summary row is marked.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum MeanRule {
    /// Compare the means themselves with the thresholds.
    Threshold,
    /// Per architecture, take the margin over (reference - threshold); mark
    /// when the mean margin is no more than one standard deviation below 0.
    Spread,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Cell {
    pub value: f64,
    /// Among the best: oracle-like or within the threshold of the row's best.
    pub bold: bool,
    /// Oracle-like: within the threshold of the oracle or better.
    pub italic: bool,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Summary {
    pub mean: f64,
    /// Sample standard deviation across architectures.
    pub std: f64,
    pub count: usize,
    pub bold: bool,
    pub italic: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ResultTable {
    pub archs: Vec<String>,
    pub methods: Vec<String>,
    pub oracle: Option<usize>,
    pub cells: Vec<Vec<Option<Cell>>>,
    pub summary: Vec<Option<Summary>>,
    pub threshold: f64,
    pub rule: MeanRule,
}

fn mean_std(xs: &[f64]) -> (f64, f64) {
    let n = xs.len() as f64;
    let mean = xs.iter().sum::<f64>() / n;
    let std = if xs.len() > 1 { (xs.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / (n - 1.0)).sqrt() } else { 0.0 };
    (mean, std)
}

/// Mark every cell and summary entry of `grid`.
pub fn format_results(grid: &ResultGrid, threshold: f64, rule: MeanRule) -> Result<ResultTable, AnalysisError> {
    let (na, nm) = (grid.archs.len(), grid.methods.len());
    if grid.acc.len() != na || grid.acc.iter().any(|r| r.len() != nm) {
        return Err(AnalysisError::Shape(format!("grid is not {na} x {nm}")));
    }
    let oracle = match &grid.oracle {
        Some(o) => Some(grid.methods.iter().position(|m| m == o).ok_or_else(|| AnalysisError::Shape(format!("oracle column {o} missing")))?),
        None => None,
    };
    let ranked = |j: usize| Some(j) != oracle;
    let best: Vec<Option<f64>> = grid
        .acc
        .iter()
        .map(|row| row.iter().enumerate().filter(|&(j, _)| ranked(j)).filter_map(|(_, v)| *v).reduce(f64::max))
        .collect();
    let oracle_acc: Vec<Option<f64>> = grid.acc.iter().map(|row| oracle.and_then(|o| row[o])).collect();
    let near = |v: f64, reference: Option<f64>| reference.is_some_and(|r| v >= r - threshold - EPS);

    let cells: Vec<Vec<Option<Cell>>> = grid
        .acc
        .iter()
        .enumerate()
        .map(|(a, row)| {
            row.iter()
                .enumerate()
                .map(|(j, v)| {
                    v.map(|value| {
                        if !ranked(j) {
                            return Cell { value, bold: false, italic: false };
                        }
                        let italic = near(value, oracle_acc[a]);
                        Cell { value, bold: italic || near(value, best[a]), italic }
                    })
                })
                .collect()
        })
        .collect();

    let stats: Vec<Option<(f64, f64, usize)>> = (0..nm)
        .map(|j| {
            let xs: Vec<f64> = grid.acc.iter().filter_map(|r| r[j]).collect();
            (!xs.is_empty()).then(|| {
                let (m, s) = mean_std(&xs);
                (m, s, xs.len())
            })
        })
        .collect();
    let best_mean = stats.iter().enumerate().filter(|&(j, _)| ranked(j)).filter_map(|(_, s)| s.map(|s| s.0)).reduce(f64::max);
    let oracle_mean = oracle.and_then(|o| stats[o].map(|s| s.0));
    // Margins of column j over (reference - threshold) on the rows where both exist.
    let spread_ok = |j: usize, reference: &[Option<f64>]| {
        let d: Vec<f64> = grid.acc.iter().zip(reference).filter_map(|(r, re)| Some(r[j]? - (re.as_ref()? - threshold))).collect();
        if d.is_empty() {
            return false;
        }
        let (m, s) = mean_std(&d);
        m + s >= -EPS
    };
    let summary = stats
        .iter()
        .enumerate()
        .map(|(j, st)| {
            st.map(|(mean, std, count)| {
                if !ranked(j) {
                    return Summary { mean, std, count, bold: false, italic: false };
                }
                let (italic, bold) = match rule {
                    MeanRule::Threshold => {
                        let it = near(mean, oracle_mean);
                        (it, it || near(mean, best_mean))
                    }
                    MeanRule::Spread => {
                        let it = oracle.is_some() && spread_ok(j, &oracle_acc);
                        (it, it || spread_ok(j, &best))
                    }
                };
                Summary { mean, std, count, bold, italic }
            })
        })
        .collect();
    Ok(ResultTable { archs: grid.archs.clone(), methods: grid.methods.clone(), oracle, cells, summary, threshold, rule })
}

fn mark(v: f64, bold: bool, italic: bool) -> String {
    let s = format!("{v:.3}");
    match (bold, italic) {
        (true, true) => format!("***{s}***"),
        (true, false) => format!("**{s}**"),
        (false, true) => format!("*{s}*"),
        (false, false) => s,
    }
}

impl ResultTable {
    /// Markdown table: bold marks the best group, italic oracle-like results.
    pub fn to_text(&self) -> String {
        let mut out = String::new();
        out.push_str(&format!("| Model | {} |\n", self.methods.join(" | ")));
        out.push_str(&format!("|---|{}\n", "---|".repeat(self.methods.len())));
        for (a, row) in self.archs.iter().zip(&self.cells) {
            let cells: Vec<String> = row.iter().map(|c| c.map_or("-".into(), |c| mark(c.value, c.bold, c.italic))).collect();
            out.push_str(&format!("| {a} | {} |\n", cells.join(" | ")));
        }
        let means: Vec<String> = self.summary.iter().map(|s| s.map_or("-".into(), |s| mark(s.mean, s.bold, s.italic))).collect();
        out.push_str(&format!("| Mean | {} |\n", means.join(" | ")));
        let stds: Vec<String> = self.summary.iter().map(|s| s.map_or("-".into(), |s| format!("{:.3}", s.std))).collect();
        out.push_str(&format!("| Std dev | {} |\n", stds.join(" | ")));
        out
    }

    /// One line per (row, method): value and markers.
    pub fn to_csv(&self) -> Result<String, AnalysisError> {
        let mut w = csv::Writer::from_writer(Vec::new());
        w.write_record(["row", "method", "value", "std", "bold", "italic"])?;
        for (a, row) in self.archs.iter().zip(&self.cells) {
            for (m, c) in self.methods.iter().zip(row) {
                if let Some(c) = c {
                    w.write_record([a.as_str(), m, &format!("{:.6}", c.value), "", &c.bold.to_string(), &c.italic.to_string()])?;
                }
            }
        }
        for (m, s) in self.methods.iter().zip(&self.summary) {
            if let Some(s) = s {
                w.write_record(["mean", m, &format!("{:.6}", s.mean), &format!("{:.6}", s.std), &s.bold.to_string(), &s.italic.to_string()])?;
            }
        }
        Ok(String::from_utf8(w.into_inner().map_err(|e| csv::Error::from(e.into_error()))?).expect("ascii"))
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn grid(vals: Vec<Vec<Option<f64>>>, methods: &[&str], oracle: Option<&str>) -> ResultGrid {
        ResultGrid {
            archs: (0..vals.len()).map(|i| format!("a{i}")).collect(),
            methods: methods.iter().map(|m| m.to_string()).collect(),
            oracle: oracle.map(str::to_string),
            acc: vals,
        }
    }

    #[test]
    fn single_method_is_best() {
        let t = format_results(&grid(vec![vec![Some(0.3)]], &["m"], None), 0.02, MeanRule::Threshold).unwrap();
        assert!(t.cells[0][0].unwrap().bold);
        assert!(t.summary[0].unwrap().bold);
    }

    #[test]
    fn threshold_boundaries() {
        let g = grid(vec![vec![Some(0.60), Some(0.581), Some(0.579), Some(0.70)]], &["a", "b", "c", "o"], Some("o"));
        let t = format_results(&g, 0.02, MeanRule::Threshold).unwrap();
        let bold: Vec<bool> = t.cells[0].iter().map(|c| c.unwrap().bold).collect();
        assert_eq!(bold, [true, true, false, false]);
        // Two-decimal values exactly 0.02 apart count as within.
        let g = grid(vec![vec![Some(0.60), Some(0.58), Some(0.50), Some(0.62)]], &["a", "b", "c", "o"], Some("o"));
        let t = format_results(&g, 0.02, MeanRule::Threshold).unwrap();
        let c = |j: usize| t.cells[0][j].unwrap();
        assert!(c(1).bold && !c(1).italic);
        assert!(c(0).italic && !c(2).bold);
    }

    #[test]
    fn formatting_is_idempotent() {
        let g = grid(vec![vec![Some(0.5), None], vec![Some(0.4), Some(0.45)]], &["a", "b"], None);
        let t1 = format_results(&g, 0.02, MeanRule::Spread).unwrap();
        let t2 = format_results(&g, 0.02, MeanRule::Spread).unwrap();
        assert_eq!(t1.to_text(), t2.to_text());
        assert_eq!(t1.to_csv().unwrap(), t2.to_csv().unwrap());
        assert_eq!(t1.summary[1].unwrap().count, 1);
    }
}
