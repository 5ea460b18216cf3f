//! Static SVG line and bar charts.

use std::fmt::Write;

const WIDTH: f64 = 640.0;
const HEIGHT: f64 = 400.0;
const LEFT: f64 = 70.0;
const RIGHT: f64 = 150.0;
const TOP: f64 = 40.0;
const BOTTOM: f64 = 55.0;
const PALETTE: [&str; 6] = ["#1f77b4", "#ff7f0e", "#2ca02c", "#d62728", "#9467bd", "#8c564b"];

/// One line; points with a non-finite `y` are skipped. `err` draws
/// symmetric error bars when present.
#[derive(Debug, Clone, PartialEq)]
pub struct Series {
    pub label: String,
    pub points: Vec<(f64, f64)>,
    pub err: Option<Vec<f64>>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Bar {
    pub label: String,
    pub value: f64,
    pub err: f64,
}

fn escape(s: &str) -> String {
    s.replace('&', "&amp;").replace('<', "&lt;").replace('>', "&gt;")
}

struct Frame {
    x0: f64,
    x1: f64,
    y0: f64,
    y1: f64,
}

impl Frame {
    fn new(xs: impl Iterator<Item = f64> + Clone, ys: impl Iterator<Item = f64> + Clone) -> Frame {
        let (mut x0, mut x1) = bounds(xs);
        let (mut y0, mut y1) = bounds(ys);
        if x1 <= x0 {
            x0 -= 0.5;
            x1 += 0.5;
        }
        if y1 <= y0 {
            y0 -= 0.5;
            y1 += 0.5;
        }
        let pad = 0.05 * (y1 - y0);
        Frame { x0, x1, y0: y0 - pad, y1: y1 + pad }
    }

    fn px(&self, x: f64) -> f64 {
        LEFT + (x - self.x0) / (self.x1 - self.x0) * (WIDTH - LEFT - RIGHT)
    }

    fn py(&self, y: f64) -> f64 {
        HEIGHT - BOTTOM - (y - self.y0) / (self.y1 - self.y0) * (HEIGHT - TOP - BOTTOM)
    }
}

fn bounds(xs: impl Iterator<Item = f64>) -> (f64, f64) {
    let (lo, hi) = xs
        .filter(|x| x.is_finite())
        .fold((f64::INFINITY, f64::NEG_INFINITY), |(lo, hi), x| (lo.min(x), hi.max(x)));
    if lo.is_finite() {
        (lo, hi)
    } else {
        (0.0, 1.0)
    }
}

fn header(out: &mut String, title: &str, xlabel: &str, ylabel: &str) {
    let _ = write!(
        out,
        r#"<svg xmlns="http://www.w3.org/2000/svg" width="{WIDTH}" height="{HEIGHT}" font-family="sans-serif" font-size="12">
<rect width="100%" height="100%" fill="white"/>
<text x="{}" y="22" text-anchor="middle" font-size="15">{}</text>
<text x="{}" y="{}" text-anchor="middle">{}</text>
<text x="16" y="{}" text-anchor="middle" transform="rotate(-90 16 {})">{}</text>
"#,
        (LEFT + WIDTH - RIGHT) / 2.0,
        escape(title),
        (LEFT + WIDTH - RIGHT) / 2.0,
        HEIGHT - 12.0,
        escape(xlabel),
        (TOP + HEIGHT - BOTTOM) / 2.0,
        (TOP + HEIGHT - BOTTOM) / 2.0,
        escape(ylabel),
    );
}

fn axes(out: &mut String, f: &Frame, x_ticks: bool) {
    let (l, r, t, b) = (LEFT, WIDTH - RIGHT, TOP, HEIGHT - BOTTOM);
    let _ = writeln!(out, r#"<path d="M{l} {t} L{l} {b} L{r} {b}" fill="none" stroke="black"/>"#);
    for i in 0..=4 {
        let y = f.y0 + (f.y1 - f.y0) * i as f64 / 4.0;
        let py = f.py(y);
        let _ = writeln!(
            out,
            r##"<line x1="{l}" y1="{py:.1}" x2="{r}" y2="{py:.1}" stroke="#ddd"/><text x="{}" y="{:.1}" text-anchor="end">{}</text>"##,
            l - 6.0,
            py + 4.0,
            tick(y)
        );
        if x_ticks {
            let x = f.x0 + (f.x1 - f.x0) * i as f64 / 4.0;
            let _ = writeln!(
                out,
                r#"<text x="{:.1}" y="{}" text-anchor="middle">{}</text>"#,
                f.px(x),
                b + 18.0,
                tick(x)
            );
        }
    }
}

fn tick(v: f64) -> String {
    if v.abs() >= 1e4 {
        format!("{v:.2e}")
    } else if v.abs() >= 100.0 {
        format!("{v:.0}")
    } else {
        format!("{v:.2}")
    }
}

/// Line chart with a legend on the right.
pub fn line_chart(title: &str, xlabel: &str, ylabel: &str, series: &[Series]) -> String {
    let xs = series.iter().flat_map(|s| s.points.iter().map(|p| p.0));
    let ys = series.iter().flat_map(|s| {
        s.points.iter().enumerate().flat_map(move |(i, p)| {
            let e = s.err.as_ref().and_then(|e| e.get(i)).copied().unwrap_or(0.0);
            [p.1 - e, p.1 + e]
        })
    });
    let f = Frame::new(xs, ys);
    let mut out = String::new();
    header(&mut out, title, xlabel, ylabel);
    axes(&mut out, &f, true);
    for (k, s) in series.iter().enumerate() {
        let color = PALETTE[k % PALETTE.len()];
        let path: Vec<String> = s
            .points
            .iter()
            .filter(|p| p.0.is_finite() && p.1.is_finite())
            .map(|p| format!("{:.1},{:.1}", f.px(p.0), f.py(p.1)))
            .collect();
        if !path.is_empty() {
            let _ = writeln!(
                out,
                r#"<polyline points="{}" fill="none" stroke="{color}" stroke-width="2"/>"#,
                path.join(" ")
            );
        }
        for (i, p) in s.points.iter().enumerate() {
            if !(p.0.is_finite() && p.1.is_finite()) {
                continue;
            }
            let (x, y) = (f.px(p.0), f.py(p.1));
            if s.points.len() <= 40 {
                let _ = writeln!(out, r#"<circle cx="{x:.1}" cy="{y:.1}" r="3" fill="{color}"/>"#);
            }
            if let Some(e) = s.err.as_ref().and_then(|e| e.get(i)).filter(|e| e.is_finite()) {
                let _ = writeln!(
                    out,
                    r#"<line x1="{x:.1}" y1="{:.1}" x2="{x:.1}" y2="{:.1}" stroke="{color}"/>"#,
                    f.py(p.1 - e),
                    f.py(p.1 + e)
                );
            }
        }
        let ly = TOP + 10.0 + 18.0 * k as f64;
        let lx = WIDTH - RIGHT + 12.0;
        let _ = writeln!(
            out,
            r#"<rect x="{lx}" y="{}" width="12" height="4" fill="{color}"/><text x="{}" y="{}">{}</text>"#,
            ly - 4.0,
            lx + 18.0,
            ly + 2.0,
            escape(&s.label)
        );
    }
    out.push_str("</svg>\n");
    out
}

/// Bar chart with error bars.
pub fn bar_chart(title: &str, ylabel: &str, bars: &[Bar]) -> String {
    let ys = bars.iter().flat_map(|b| [0.0, b.value - b.err, b.value + b.err]);
    let f = Frame::new([0.0, bars.len() as f64].into_iter(), ys);
    let mut out = String::new();
    header(&mut out, title, "", ylabel);
    axes(&mut out, &f, false);
    let slot = (WIDTH - LEFT - RIGHT) / bars.len().max(1) as f64;
    for (k, b) in bars.iter().enumerate() {
        let color = PALETTE[k % PALETTE.len()];
        let x = LEFT + slot * (k as f64 + 0.2);
        let w = slot * 0.6;
        if b.value.is_finite() {
            let (ya, yb) = (f.py(b.value.max(0.0)), f.py(b.value.min(0.0)));
            let _ = writeln!(
                out,
                r#"<rect x="{x:.1}" y="{ya:.1}" width="{w:.1}" height="{:.1}" fill="{color}"/>"#,
                (yb - ya).max(0.5)
            );
            if b.err.is_finite() && b.err > 0.0 {
                let cx = x + w / 2.0;
                let _ = writeln!(
                    out,
                    r#"<line x1="{cx:.1}" y1="{:.1}" x2="{cx:.1}" y2="{:.1}" stroke="black"/>"#,
                    f.py(b.value - b.err),
                    f.py(b.value + b.err)
                );
            }
        }
        let _ = writeln!(
            out,
            r#"<text x="{:.1}" y="{}" text-anchor="middle">{}</text>"#,
            x + w / 2.0,
            HEIGHT - BOTTOM + 18.0,
            escape(&b.label)
        );
    }
    out.push_str("</svg>\n");
    out
}
