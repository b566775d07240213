//! Static SVG line charts: budget on x, mean with a ±stderr band on y, one series per strategy.

use std::fmt::Write as _;

use super::report::{Metric, ReportTable};

const W: f64 = 720.0;
const H: f64 = 440.0;
const LEFT: f64 = 64.0;
const RIGHT: f64 = 150.0;
const TOP: f64 = 24.0;
const BOTTOM: f64 = 48.0;
const PALETTE: [&str; 8] = [
    "#1f77b4", "#d62728", "#2ca02c", "#ff7f0e", "#9467bd", "#8c564b", "#e377c2", "#17becf",
];

fn finite_or(v: f64, d: f64) -> f64 {
    if v.is_finite() {
        v
    } else {
        d
    }
}

pub(crate) fn line_chart(report: &ReportTable, metric: Metric) -> String {
    let budgets = report.rows.iter().map(|r| r.budget as f64);
    let x_min = budgets.clone().fold(f64::INFINITY, f64::min);
    let x_max = budgets.fold(f64::NEG_INFINITY, f64::max);
    let (x_min, x_max) = if x_min.is_finite() && x_max > x_min {
        (x_min, x_max)
    } else {
        (finite_or(x_min, 0.0), finite_or(x_min, 0.0) + 1.0)
    };
    let y_max = match metric {
        Metric::Accuracy => 1.0,
        Metric::NKnown => report
            .rows
            .iter()
            .map(|r| finite_or(r.known_mean + r.known_se, 0.0))
            .fold(1.0, f64::max)
            .ceil(),
    };
    let sx = |x: f64| LEFT + (x - x_min) / (x_max - x_min) * (W - LEFT - RIGHT);
    let sy = |y: f64| H - BOTTOM - finite_or(y, 0.0).clamp(0.0, y_max) / y_max * (H - TOP - BOTTOM);

    let mut s = String::new();
    let _ = writeln!(
        s,
        r#"<svg xmlns="http://www.w3.org/2000/svg" width="{W}" height="{H}" viewBox="0 0 {W} {H}" font-family="sans-serif" font-size="12">"#
    );
    let _ = writeln!(s, r#"<rect width="{W}" height="{H}" fill="white"/>"#);
    // axes
    let (x0, y0, x1, y1) = (LEFT, H - BOTTOM, W - RIGHT, TOP);
    let _ = writeln!(
        s,
        r#"<path d="M{x0:.1} {y1:.1} L{x0:.1} {y0:.1} L{x1:.1} {y0:.1}" fill="none" stroke="black"/>"#
    );
    for j in 0..=5 {
        let v = y_max * j as f64 / 5.0;
        let y = sy(v);
        let _ = writeln!(
            s,
            r##"<line x1="{:.1}" y1="{y:.1}" x2="{x0:.1}" y2="{y:.1}" stroke="black"/><text x="{:.1}" y="{:.1}" text-anchor="end">{}</text>"##,
            x0 - 4.0,
            x0 - 6.0,
            y + 4.0,
            trim_num(v)
        );
    }
    let mut ticks: Vec<usize> = report.rows.iter().map(|r| r.budget).collect();
    ticks.sort_unstable();
    ticks.dedup();
    for b in ticks {
        let x = sx(b as f64);
        let _ = writeln!(
            s,
            r#"<line x1="{x:.1}" y1="{y0:.1}" x2="{x:.1}" y2="{:.1}" stroke="black"/><text x="{x:.1}" y="{:.1}" text-anchor="middle">{b}</text>"#,
            y0 + 4.0,
            y0 + 18.0
        );
    }
    let _ = writeln!(
        s,
        r#"<text x="{:.1}" y="{:.1}" text-anchor="middle">labeled examples</text>"#,
        (x0 + x1) / 2.0,
        H - 10.0
    );
    let _ = writeln!(
        s,
        r#"<text transform="translate(16 {:.1}) rotate(-90)" text-anchor="middle">{}</text>"#,
        (y0 + y1) / 2.0,
        metric.label()
    );

    for (n, name) in report.strategies().into_iter().enumerate() {
        let color = PALETTE[n % PALETTE.len()];
        let series = report.series(name);
        let upper: Vec<String> = series
            .iter()
            .map(|r| {
                let (m, se) = metric.of(r);
                format!("{:.2},{:.2}", sx(r.budget as f64), sy(m + se))
            })
            .collect();
        let lower: Vec<String> = series
            .iter()
            .rev()
            .map(|r| {
                let (m, se) = metric.of(r);
                format!("{:.2},{:.2}", sx(r.budget as f64), sy(m - se))
            })
            .collect();
        let line: Vec<String> = series
            .iter()
            .map(|r| format!("{:.2},{:.2}", sx(r.budget as f64), sy(metric.of(r).0)))
            .collect();
        let _ = writeln!(
            s,
            r#"<polygon points="{} {}" fill="{color}" fill-opacity="0.2" stroke="none"/>"#,
            upper.join(" "),
            lower.join(" ")
        );
        let _ = writeln!(
            s,
            r#"<polyline data-series="{name}" points="{}" fill="none" stroke="{color}" stroke-width="2"/>"#,
            line.join(" ")
        );
        let ly = TOP + 16.0 + 18.0 * n as f64;
        let lx = W - RIGHT + 12.0;
        let _ = writeln!(
            s,
            r#"<line x1="{lx:.1}" y1="{ly:.1}" x2="{:.1}" y2="{ly:.1}" stroke="{color}" stroke-width="2"/><text x="{:.1}" y="{:.1}">{name}</text>"#,
            lx + 20.0,
            lx + 26.0,
            ly + 4.0
        );
    }
    s.push_str("</svg>\n");
    s
}

fn trim_num(v: f64) -> String {
    let s = format!("{v:.2}");
    s.trim_end_matches('0').trim_end_matches('.').to_string()
}
