//! Minimal static SVG charts.

use std::fmt::Write;

const WIDTH: f64 = 640.0;
const HEIGHT: f64 = 400.0;
const LEFT: f64 = 64.0;
const RIGHT: f64 = 150.0;
const TOP: f64 = 36.0;
const BOTTOM: f64 = 48.0;

const PALETTE: [&str; 8] = [
    "#1f77b4", "#d62728", "#2ca02c", "#9467bd", "#ff7f0e", "#17becf", "#8c564b", "#e377c2",
];

pub fn color(i: usize) -> &'static str {
    PALETTE[i % PALETTE.len()]
}

fn escape(s: &str) -> String {
    s.replace('&', "&amp;").replace('<', "&lt;").replace('>', "&gt;")
}

/// A chart area with a linear x axis and either a linear y axis or a
/// log-scaled, inverted rank axis (rank 1 at the top).
pub struct Chart {
    body: String,
    x_max: f64,
    y_max: f64,
    rank_axis: bool,
    legend: Vec<(String, &'static str, bool)>,
}

impl Chart {
    pub fn new(title: &str, x_label: &str, y_label: &str, x_max: f64, y_max: f64, rank_axis: bool) -> Self {
        let x_max = if x_max > 0.0 { x_max } else { 1.0 };
        let y_max = if rank_axis { y_max.max(2.0) } else { y_max.max(1.0) };
        let mut chart = Chart {
            body: String::new(),
            x_max,
            y_max,
            rank_axis,
            legend: Vec::new(),
        };
        chart.frame(title, x_label, y_label);
        chart
    }

    fn plot_w() -> f64 {
        WIDTH - LEFT - RIGHT
    }

    fn plot_h() -> f64 {
        HEIGHT - TOP - BOTTOM
    }

    pub fn x(&self, v: f64) -> f64 {
        LEFT + v / self.x_max * Self::plot_w()
    }

    pub fn y(&self, v: f64) -> f64 {
        let frac = if self.rank_axis {
            v.max(1.0).ln() / self.y_max.ln()
        } else {
            1.0 - v / self.y_max
        };
        TOP + frac.clamp(0.0, 1.0) * Self::plot_h()
    }

    fn frame(&mut self, title: &str, x_label: &str, y_label: &str) {
        let b = &mut self.body;
        let _ = write!(
            b,
            r##"<rect x="{LEFT}" y="{TOP}" width="{:.1}" height="{:.1}" fill="none" stroke="#444"/>"##,
            Self::plot_w(),
            Self::plot_h()
        );
        let _ = write!(
            b,
            r#"<text x="{:.1}" y="22" text-anchor="middle" font-size="14">{}</text>"#,
            LEFT + Self::plot_w() / 2.0,
            escape(title)
        );
        let _ = write!(
            b,
            r#"<text x="{:.1}" y="{:.1}" text-anchor="middle" font-size="12">{}</text>"#,
            LEFT + Self::plot_w() / 2.0,
            HEIGHT - 10.0,
            escape(x_label)
        );
        let _ = write!(
            b,
            r#"<text x="16" y="{:.1}" text-anchor="middle" font-size="12" transform="rotate(-90 16 {:.1})">{}</text>"#,
            TOP + Self::plot_h() / 2.0,
            TOP + Self::plot_h() / 2.0,
            escape(y_label)
        );
        for i in 0..=4 {
            let v = self.x_max * i as f64 / 4.0;
            let x = self.x(v);
            let _ = write!(
                self.body,
                r#"<text x="{x:.1}" y="{:.1}" text-anchor="middle" font-size="10">{}</text>"#,
                TOP + Self::plot_h() + 14.0,
                trim_number(v)
            );
        }
        let ticks: Vec<f64> = if self.rank_axis {
            let mut t = vec![1.0];
            let mut v = 10.0;
            while v < self.y_max {
                t.push(v);
                v *= 10.0;
            }
            t
        } else {
            (0..=4).map(|i| self.y_max * i as f64 / 4.0).collect()
        };
        for v in ticks {
            let y = self.y(v);
            let _ = write!(
                self.body,
                r##"<line x1="{LEFT}" y1="{y:.1}" x2="{:.1}" y2="{y:.1}" stroke="#ddd"/><text x="{:.1}" y="{:.1}" text-anchor="end" font-size="10">{}</text>"##,
                LEFT + Self::plot_w(),
                LEFT - 4.0,
                y + 3.0,
                trim_number(v)
            );
        }
    }

    /// A horizontal dashed line with a label at the right edge.
    pub fn marker_line(&mut self, y: f64, label: &str) {
        let yy = self.y(y);
        let _ = write!(
            self.body,
            r##"<line x1="{LEFT}" y1="{yy:.1}" x2="{:.1}" y2="{yy:.1}" stroke="#999" stroke-dasharray="4 3"/><text x="{:.1}" y="{:.1}" font-size="10" fill="#666">{}</text>"##,
            LEFT + Self::plot_w(),
            LEFT + Self::plot_w() + 4.0,
            yy + 3.0,
            escape(label)
        );
    }

    /// A step function through `points`, holding each value until the next x.
    /// Unnamed lines get no legend entry and are drawn thin.
    pub fn step_line(&mut self, name: Option<&str>, color: &'static str, points: &[(f64, f64)], dashed: bool) {
        if points.is_empty() {
            return;
        }
        let mut d = String::new();
        for (i, &(x, y)) in points.iter().enumerate() {
            let (px, py) = (self.x(x), self.y(y));
            if i == 0 {
                let _ = write!(d, "M{px:.1},{py:.1}");
            } else {
                let _ = write!(d, " H{px:.1} V{py:.1}");
            }
        }
        let dash = if dashed { r#" stroke-dasharray="6 3""# } else { "" };
        let width = if name.is_some() { 2.0 } else { 0.8 };
        let _ = write!(
            self.body,
            r#"<path d="{d}" fill="none" stroke="{color}" stroke-width="{width}"{dash}/>"#
        );
        let Some(name) = name else {
            return;
        };
        for &(x, y) in points {
            let _ = write!(
                self.body,
                r#"<circle cx="{:.1}" cy="{:.1}" r="2.5" fill="{color}"/>"#,
                self.x(x),
                self.y(y)
            );
        }
        self.legend.push((name.to_owned(), color, dashed));
    }

    /// A shaded region between `low` and `high`, sampled at the same x values.
    pub fn band(&mut self, color: &'static str, low: &[(f64, f64)], high: &[(f64, f64)]) {
        if low.is_empty() {
            return;
        }
        let mut d = String::new();
        for (i, &(x, y)) in high.iter().enumerate() {
            let _ = write!(d, "{}{:.1},{:.1}", if i == 0 { "M" } else { " L" }, self.x(x), self.y(y));
        }
        for &(x, y) in low.iter().rev() {
            let _ = write!(d, " L{:.1},{:.1}", self.x(x), self.y(y));
        }
        let _ = write!(
            self.body,
            r#"<path d="{d} Z" fill="{color}" fill-opacity="0.18" stroke="none"/>"#
        );
    }

    /// A bar from `y0` to `y1` centred on `x`.
    pub fn bar(&mut self, x: f64, width: f64, y0: f64, y1: f64, color: &'static str) {
        let (top, bottom) = (self.y(y1), self.y(y0));
        let _ = write!(
            self.body,
            r#"<rect x="{:.1}" y="{top:.1}" width="{width:.1}" height="{:.1}" fill="{color}"/>"#,
            self.x(x) - width / 2.0,
            (bottom - top).max(0.0)
        );
    }

    pub fn legend_entry(&mut self, name: &str, color: &'static str) {
        self.legend.push((name.to_owned(), color, false));
    }

    pub fn finish(mut self) -> String {
        let lx = WIDTH - RIGHT + 30.0;
        for (i, (name, color, dashed)) in self.legend.iter().enumerate() {
            let y = TOP + 10.0 + i as f64 * 16.0;
            let dash = if *dashed { r#" stroke-dasharray="6 3""# } else { "" };
            let _ = write!(
                self.body,
                r#"<line x1="{lx:.1}" y1="{y:.1}" x2="{:.1}" y2="{y:.1}" stroke="{color}" stroke-width="2"{dash}/><text x="{:.1}" y="{:.1}" font-size="10">{}</text>"#,
                lx + 16.0,
                lx + 20.0,
                y + 3.0,
                escape(name)
            );
        }
        format!(
            "<svg xmlns=\"http://www.w3.org/2000/svg\" width=\"{WIDTH}\" height=\"{HEIGHT}\" viewBox=\"0 0 {WIDTH} {HEIGHT}\" font-family=\"sans-serif\">\n<rect width=\"100%\" height=\"100%\" fill=\"white\"/>\n{}\n</svg>\n",
            self.body
        )
    }
}

fn trim_number(v: f64) -> String {
    if (v - v.round()).abs() < 1e-9 {
        format!("{}", v.round() as i64)
    } else {
        format!("{v:.1}")
    }
}
