use super::{InterpolationPath, ProjectionPoint};
use std::fmt::Write;

const W: f64 = 640.0;
const H: f64 = 420.0;
const PAD: f64 = 56.0;
const COLORS: [&str; 8] = ["#1f77b4", "#d62728", "#2ca02c", "#9467bd", "#ff7f0e", "#17becf", "#8c564b", "#7f7f7f"];

struct Frame {
    x0: f64,
    x1: f64,
    y0: f64,
    y1: f64,
}

impl Frame {
    fn fit(xs: impl Iterator<Item = f64> + Clone, ys: impl Iterator<Item = f64> + Clone) -> Self {
        let span = |v: &mut dyn Iterator<Item = f64>| {
            let (lo, hi) = v.fold((f64::INFINITY, f64::NEG_INFINITY), |(a, b), x| (a.min(x), b.max(x)));
            if !lo.is_finite() {
                (0.0, 1.0)
            } else if hi - lo < 1e-12 {
                (lo - 0.5, hi + 0.5)
            } else {
                let m = 0.05 * (hi - lo);
                (lo - m, hi + m)
            }
        };
        let (x0, x1) = span(&mut xs.clone());
        let (y0, y1) = span(&mut ys.clone());
        Self { x0, x1, y0, y1 }
    }

    fn px(&self, x: f64) -> f64 {
        PAD + (x - self.x0) / (self.x1 - self.x0) * (W - 2.0 * PAD)
    }

    fn py(&self, y: f64) -> f64 {
        H - PAD - (y - self.y0) / (self.y1 - self.y0) * (H - 2.0 * PAD)
    }
}

fn escape(s: &str) -> String {
    s.replace('&', "&amp;").replace('<', "&lt;").replace('>', "&gt;")
}

fn open(out: &mut String, title: &str, xlabel: &str, ylabel: &str, f: &Frame) {
    let _ = write!(
        out,
        r#"<svg xmlns="http://www.w3.org/2000/svg" width="{W}" height="{H}" font-family="sans-serif" font-size="12">
<defs><marker id="arrow" viewBox="0 0 10 10" refX="9" refY="5" markerWidth="6" markerHeight="6" orient="auto"><path d="M0,0 L10,5 L0,10 z" fill="context-stroke"/></marker></defs>
<rect width="100%" height="100%" fill="white"/>
<text x="{}" y="24" text-anchor="middle" font-size="14">{}</text>
<line x1="{PAD}" y1="{b}" x2="{r}" y2="{b}" stroke="black"/>
<line x1="{PAD}" y1="{PAD}" x2="{PAD}" y2="{b}" stroke="black"/>
<text x="{}" y="{}" text-anchor="middle">{}</text>
<text x="16" y="{}" text-anchor="middle" transform="rotate(-90 16 {})">{}</text>
"#,
        W / 2.0,
        escape(title),
        W / 2.0,
        H - 12.0,
        escape(xlabel),
        H / 2.0,
        H / 2.0,
        escape(ylabel),
        b = H - PAD,
        r = W - PAD,
    );
    for k in 0..=4 {
        let t = k as f64 / 4.0;
        let (xv, yv) = (f.x0 + t * (f.x1 - f.x0), f.y0 + t * (f.y1 - f.y0));
        let _ = writeln!(out, r#"<text x="{:.1}" y="{}" text-anchor="middle">{xv:.2}</text>"#, f.px(xv), H - PAD + 16.0);
        let _ = writeln!(out, r#"<text x="{}" y="{:.1}" text-anchor="end">{yv:.2}</text>"#, PAD - 6.0, f.py(yv) + 4.0);
    }
}

fn legend(out: &mut String, labels: &[&str]) {
    for (i, l) in labels.iter().enumerate() {
        let y = PAD + 16.0 * i as f64;
        let c = COLORS[i % COLORS.len()];
        let _ = writeln!(out, r#"<rect x="{}" y="{}" width="10" height="10" fill="{c}"/><text x="{}" y="{}">{}</text>"#, W - PAD - 120.0, y - 9.0, W - PAD - 106.0, y, escape(l));
    }
}

/// Accuracy against the interpolation coefficient, one line per path.
pub fn interpolation_chart(title: &str, paths: &[(&str, &InterpolationPath)]) -> String {
    let f = Frame::fit(
        paths.iter().flat_map(|(_, p)| p.s.iter().copied()),
        paths.iter().flat_map(|(_, p)| p.accuracies.iter().copied()),
    );
    let mut out = String::new();
    open(&mut out, title, "s", "test accuracy", &f);
    for (i, (_, p)) in paths.iter().enumerate() {
        let pts: Vec<String> = p.s.iter().zip(&p.accuracies).map(|(&s, &a)| format!("{:.2},{:.2}", f.px(s), f.py(a))).collect();
        let _ = writeln!(out, r#"<polyline fill="none" stroke="{}" stroke-width="2" points="{}"/>"#, COLORS[i % COLORS.len()], pts.join(" "));
    }
    legend(&mut out, &paths.iter().map(|p| p.0).collect::<Vec<_>>());
    out.push_str("</svg>\n");
    out
}

/// Projection trajectories, each drawn as arrows from point to point.
pub fn projection_chart(title: &str, trajectories: &[(&str, &[ProjectionPoint])]) -> String {
    let f = Frame::fit(
        trajectories.iter().flat_map(|(_, t)| t.iter().map(|p| p.x)).chain([0.0, 1.0]),
        trajectories.iter().flat_map(|(_, t)| t.iter().map(|p| p.y)).chain([0.0, 1.0]),
    );
    let mut out = String::new();
    open(&mut out, title, "historical-shift axis", "final-data axis", &f);
    for (i, (_, t)) in trajectories.iter().enumerate() {
        let c = COLORS[i % COLORS.len()];
        for p in t.iter() {
            let _ = writeln!(out, r#"<circle cx="{:.2}" cy="{:.2}" r="3" fill="{c}"/>"#, f.px(p.x), f.py(p.y));
        }
        for w in t.windows(2) {
            let _ = writeln!(
                out,
                r#"<line x1="{:.2}" y1="{:.2}" x2="{:.2}" y2="{:.2}" stroke="{c}" stroke-width="1.5" marker-end="url(#arrow)"/>"#,
                f.px(w[0].x),
                f.py(w[0].y),
                f.px(w[1].x),
                f.py(w[1].y)
            );
        }
    }
    legend(&mut out, &trajectories.iter().map(|t| t.0).collect::<Vec<_>>());
    out.push_str("</svg>\n");
    out
}
