use std::fmt::Write;

const W: f64 = 640.0;
const H: f64 = 440.0;
const PAD: f64 = 60.0;
const COLORS: [&str; 6] = ["#1f77b4", "#d62728", "#2ca02c", "#9467bd", "#ff7f0e", "#17becf"];

#[derive(Clone, Debug)]
pub struct Series {
    pub label: String,
    pub points: Vec<(f64, f64)>,
}

#[derive(Clone, Debug)]
pub struct Scatter {
    pub title: String,
    pub x_label: String,
    pub y_label: String,
    pub log_x: bool,
    pub series: Vec<Series>,
}

fn escape(s: &str) -> String {
    s.replace('&', "&amp;").replace('<', "&lt;").replace('>', "&gt;")
}

fn extent(vals: impl Iterator<Item = f64>) -> (f64, f64) {
    let (lo, hi) = vals.fold((f64::INFINITY, f64::NEG_INFINITY), |(a, b), v| (a.min(v), b.max(v)));
    if !lo.is_finite() {
        return (0.0, 1.0);
    }
    if hi - lo < 1e-12 {
        return (lo - 0.5, hi + 0.5);
    }
    let m = 0.05 * (hi - lo);
    (lo - m, hi + m)
}

impl Scatter {
    /// Minimal standalone SVG: axes, tick labels at the extremes, one colour per series.
    pub fn render(&self) -> String {
        let tx = |x: f64| if self.log_x { x.log10() } else { x };
        let pts = || {
            self.series
                .iter()
                .flat_map(|s| s.points.iter())
                .filter(|(x, y)| x.is_finite() && y.is_finite() && (!self.log_x || *x > 0.0))
        };
        let (x0, x1) = extent(pts().map(|p| tx(p.0)));
        let (y0, y1) = extent(pts().map(|p| p.1));
        let sx = |x: f64| PAD + (tx(x) - x0) / (x1 - x0) * (W - 2.0 * PAD);
        let sy = |y: f64| H - PAD - (y - y0) / (y1 - y0) * (H - 2.0 * PAD);

        let mut s = String::new();
        let _ = writeln!(
            s,
            r#"<svg xmlns="http://www.w3.org/2000/svg" width="{W}" height="{H}" font-family="sans-serif" font-size="12">"#
        );
        let _ = writeln!(s, r#"<rect width="100%" height="100%" fill="white"/>"#);
        let _ = writeln!(
            s,
            r#"<text x="{}" y="24" text-anchor="middle" font-size="15">{}</text>"#,
            W / 2.0,
            escape(&self.title)
        );
        let _ = writeln!(
            s,
            r#"<path d="M{PAD} {PAD} V{b} H{r}" fill="none" stroke="black"/>"#,
            b = H - PAD,
            r = W - PAD
        );
        let fmt = |v: f64| {
            if self.log_x {
                format!("{:.3e}", 10f64.powf(v))
            } else {
                format!("{v:.4}")
            }
        };
        let _ = writeln!(
            s,
            r#"<text x="{PAD}" y="{}" text-anchor="start">{}</text>"#,
            H - PAD + 16.0,
            fmt(x0)
        );
        let _ = writeln!(
            s,
            r#"<text x="{}" y="{}" text-anchor="end">{}</text>"#,
            W - PAD,
            H - PAD + 16.0,
            fmt(x1)
        );
        let _ = writeln!(
            s,
            r#"<text x="{}" y="{}" text-anchor="end">{y0:.4}</text>"#,
            PAD - 4.0,
            H - PAD
        );
        let _ = writeln!(
            s,
            r#"<text x="{}" y="{}" text-anchor="end">{y1:.4}</text>"#,
            PAD - 4.0,
            PAD + 4.0
        );
        let _ = writeln!(
            s,
            r#"<text x="{}" y="{}" text-anchor="middle">{}</text>"#,
            W / 2.0,
            H - 18.0,
            escape(&self.x_label)
        );
        let _ = writeln!(
            s,
            r#"<text x="16" y="{}" text-anchor="middle" transform="rotate(-90 16 {})">{}</text>"#,
            H / 2.0,
            H / 2.0,
            escape(&self.y_label)
        );
        for (i, series) in self.series.iter().enumerate() {
            let c = COLORS[i % COLORS.len()];
            for &(x, y) in &series.points {
                if !(x.is_finite() && y.is_finite()) || (self.log_x && x <= 0.0) {
                    continue;
                }
                let _ = writeln!(s, r#"<circle cx="{:.2}" cy="{:.2}" r="4" fill="{c}"/>"#, sx(x), sy(y));
            }
            let ly = PAD + 16.0 * i as f64;
            let _ = writeln!(
                s,
                r#"<circle cx="{}" cy="{}" r="4" fill="{c}"/>"#,
                W - PAD - 110.0,
                ly - 4.0
            );
            let _ = writeln!(
                s,
                r#"<text x="{}" y="{ly}">{}</text>"#,
                W - PAD - 100.0,
                escape(&series.label)
            );
        }
        s.push_str("</svg>\n");
        s
    }
}
