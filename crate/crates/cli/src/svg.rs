//! Minimal hand-written SVG: line plots with axes, and scene box outlines.

use std::fmt::Write as _;

use crowdloss::simulator::Scene;
use crowdloss::BBox;

const W: f64 = 480.0;
const H: f64 = 320.0;
const MARGIN: f64 = 48.0;
const COLORS: [&str; 4] = ["#1f77b4", "#d62728", "#2ca02c", "#9467bd"];

pub struct Series {
    pub name: String,
    pub points: Vec<(f64, f64)>,
}

fn extent(values: impl Iterator<Item = f64>) -> (f64, f64) {
    let (lo, hi) = values.fold((f64::INFINITY, f64::NEG_INFINITY), |(lo, hi), v| (lo.min(v), hi.max(v)));
    if !lo.is_finite() {
        (0.0, 1.0)
    } else if hi - lo < 1e-12 {
        (lo - 0.5, hi + 0.5)
    } else {
        (lo, hi)
    }
}

/// Line plot; with `log_x` the x values are plotted on a log10 scale and
/// non-positive ones are dropped.
pub fn line_plot(title: &str, x_label: &str, y_label: &str, series: &[Series], log_x: bool) -> String {
    let tx = |x: f64| if log_x { x.log10() } else { x };
    let keep = |&&(x, y): &&(f64, f64)| y.is_finite() && x.is_finite() && (!log_x || x > 0.0);
    let (x0, x1) = extent(series.iter().flat_map(|s| s.points.iter().filter(keep).map(|p| tx(p.0))));
    let (y0, y1) = extent(series.iter().flat_map(|s| s.points.iter().filter(keep).map(|p| p.1)));
    let px = |x: f64| MARGIN + (tx(x) - x0) / (x1 - x0) * (W - 2.0 * MARGIN);
    let py = |y: f64| H - MARGIN - (y - y0) / (y1 - y0) * (H - 2.0 * MARGIN);

    let mut s = String::new();
    let _ = writeln!(s, r#"<svg xmlns="http://www.w3.org/2000/svg" width="{W}" height="{H}" font-family="sans-serif" font-size="11">"#);
    let _ = writeln!(s, r#"<text x="{}" y="16" text-anchor="middle">{title}</text>"#, W / 2.0);
    let (l, r, b, t) = (MARGIN, W - MARGIN, H - MARGIN, MARGIN);
    let _ = writeln!(s, r#"<path d="M{l} {t} L{l} {b} L{r} {b}" fill="none" stroke="black"/>"#);
    let fx = |v: f64| if log_x { format!("1e{v:.1}") } else { format!("{v:.3}") };
    let _ = writeln!(s, r#"<text x="{l}" y="{}" text-anchor="middle">{}</text>"#, b + 14.0, fx(x0));
    let _ = writeln!(s, r#"<text x="{r}" y="{}" text-anchor="middle">{}</text>"#, b + 14.0, fx(x1));
    let _ = writeln!(s, r#"<text x="{}" y="{b}" text-anchor="end">{y0:.3}</text>"#, l - 4.0);
    let _ = writeln!(s, r#"<text x="{}" y="{}" text-anchor="end">{y1:.3}</text>"#, l - 4.0, t + 4.0);
    let _ = writeln!(s, r#"<text x="{}" y="{}" text-anchor="middle">{x_label}</text>"#, W / 2.0, H - 12.0);
    let _ = writeln!(
        s,
        r#"<text x="14" y="{}" text-anchor="middle" transform="rotate(-90 14 {})">{y_label}</text>"#,
        H / 2.0,
        H / 2.0
    );
    for (k, ser) in series.iter().enumerate() {
        let color = COLORS[k % COLORS.len()];
        let pts: Vec<String> =
            ser.points.iter().filter(keep).map(|&(x, y)| format!("{:.2},{:.2}", px(x), py(y))).collect();
        let _ = writeln!(s, r#"<polyline points="{}" fill="none" stroke="{color}"/>"#, pts.join(" "));
        let _ = writeln!(
            s,
            r#"<text x="{}" y="{}" fill="{color}">{}</text>"#,
            r - 90.0,
            t + 14.0 * (k as f64 + 1.0),
            ser.name
        );
    }
    s.push_str("</svg>\n");
    s
}

/// Scene outlines: pedestrians in blue (visible part dashed), distractors in
/// grey, `extra` boxes in red.
pub fn scene_plot(scene: &Scene<f64>, extra: &[BBox<f64>]) -> String {
    let k = (W / scene.width).min(H / scene.height);
    let rect = |b: &BBox<f64>, style: &str| {
        format!(
            r#"<rect x="{:.2}" y="{:.2}" width="{:.2}" height="{:.2}" fill="none" {style}/>"#,
            b.x1() * k,
            b.y1() * k,
            b.width() * k,
            b.height() * k
        )
    };
    let mut s = String::new();
    let _ = writeln!(
        s,
        r#"<svg xmlns="http://www.w3.org/2000/svg" width="{:.0}" height="{:.0}">"#,
        scene.width * k,
        scene.height * k
    );
    for d in &scene.distractors {
        let _ = writeln!(s, "{}", rect(d, r##"stroke="#888888""##));
    }
    for b in extra {
        let _ = writeln!(s, "{}", rect(b, r##"stroke="#d62728" stroke-opacity="0.5""##));
    }
    for p in &scene.pedestrians {
        let _ = writeln!(s, "{}", rect(&p.full, r##"stroke="#1f77b4""##));
        let _ = writeln!(s, "{}", rect(&p.visible, r##"stroke="#1f77b4" stroke-dasharray="3 2""##));
    }
    s.push_str("</svg>\n");
    s
}
