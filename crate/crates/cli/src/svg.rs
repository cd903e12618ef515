//! Line chart of log10 MSE against the swept value, one polyline per method.

use std::fmt::Write;

use longterm::harness::{Method, Summary};

const WIDTH: f64 = 640.0;
const HEIGHT: f64 = 400.0;
const LEFT: f64 = 70.0;
const RIGHT: f64 = 140.0;
const TOP: f64 = 30.0;
const BOTTOM: f64 = 50.0;

fn color(m: Method) -> &'static str {
    match m {
        Method::Naive => "#1f77b4",
        Method::Stationary => "#ff7f0e",
        Method::Nonstationary => "#2ca02c",
    }
}

fn span(values: impl Iterator<Item = f64>) -> (f64, f64) {
    let (lo, hi) = values.fold((f64::INFINITY, f64::NEG_INFINITY), |(a, b), v| (a.min(v), b.max(v)));
    if !lo.is_finite() {
        (0.0, 1.0)
    } else if hi - lo < 1e-12 {
        (lo - 0.5, hi + 0.5)
    } else {
        (lo, hi)
    }
}

pub fn chart(summary: &Summary) -> String {
    let param = summary.rows.first().map(|r| r.param.as_str()).unwrap_or("value");
    let log_x = summary.rows.iter().all(|r| r.value > 0.0) && {
        let (lo, hi) = span(summary.rows.iter().map(|r| r.value));
        hi / lo >= 10.0
    };
    let fx = |v: f64| if log_x { v.log10() } else { v };
    let (x0, x1) = span(summary.rows.iter().map(|r| fx(r.value)));
    let (y0, y1) = span(summary.rows.iter().map(|r| r.log10_mse).filter(|y| y.is_finite()));
    let plot_w = WIDTH - LEFT - RIGHT;
    let plot_h = HEIGHT - TOP - BOTTOM;
    let px = |x: f64| LEFT + (fx(x) - x0) / (x1 - x0) * plot_w;
    let py = |y: f64| TOP + (y1 - y) / (y1 - y0) * plot_h;

    let mut s = String::new();
    let _ = writeln!(
        s,
        r#"<svg xmlns="http://www.w3.org/2000/svg" width="{WIDTH}" height="{HEIGHT}" font-family="sans-serif" font-size="12">"#
    );
    let _ = writeln!(s, r#"<rect width="{WIDTH}" height="{HEIGHT}" fill="white"/>"#);
    let (bx, by) = (LEFT + plot_w, TOP + plot_h);
    let _ = writeln!(s, r#"<line x1="{LEFT}" y1="{by}" x2="{bx}" y2="{by}" stroke="black"/>"#);
    let _ = writeln!(s, r#"<line x1="{LEFT}" y1="{TOP}" x2="{LEFT}" y2="{by}" stroke="black"/>"#);

    let mut xs: Vec<f64> = summary.rows.iter().map(|r| r.value).collect();
    xs.sort_by(f64::total_cmp);
    xs.dedup();
    for &v in &xs {
        let x = px(v);
        let _ = writeln!(s, r#"<line x1="{x:.2}" y1="{by}" x2="{x:.2}" y2="{:.2}" stroke="black"/>"#, by + 4.0);
        let _ = writeln!(s, r#"<text x="{x:.2}" y="{:.2}" text-anchor="middle">{v}</text>"#, by + 18.0);
    }
    for i in 0..=4 {
        let y = y0 + (y1 - y0) * i as f64 / 4.0;
        let yy = py(y);
        let _ = writeln!(s, r#"<line x1="{:.2}" y1="{yy:.2}" x2="{LEFT}" y2="{yy:.2}" stroke="black"/>"#, LEFT - 4.0);
        let _ = writeln!(s, r#"<text x="{:.2}" y="{:.2}" text-anchor="end">1e{y:.1}</text>"#, LEFT - 8.0, yy + 4.0);
    }
    let _ = writeln!(
        s,
        r#"<text x="{:.2}" y="{:.2}" text-anchor="middle">{param}{}</text>"#,
        LEFT + plot_w / 2.0,
        HEIGHT - 10.0,
        if log_x { " (log scale)" } else { "" }
    );
    let _ = writeln!(
        s,
        r#"<text transform="translate(16 {:.2}) rotate(-90)" text-anchor="middle">MSE (log scale)</text>"#,
        TOP + plot_h / 2.0
    );

    for (i, m) in Method::ALL.into_iter().enumerate() {
        let mut pts: Vec<(f64, f64)> = summary
            .rows
            .iter()
            .filter(|r| r.method == m && r.log10_mse.is_finite())
            .map(|r| (r.value, r.log10_mse))
            .collect();
        pts.sort_by(|a, b| a.0.total_cmp(&b.0));
        let coords: Vec<String> = pts.iter().map(|&(x, y)| format!("{:.2},{:.2}", px(x), py(y))).collect();
        let _ = writeln!(
            s,
            r#"<polyline fill="none" stroke="{}" stroke-width="2" points="{}"/>"#,
            color(m),
            coords.join(" ")
        );
        let ly = TOP + 10.0 + 20.0 * i as f64;
        let lx = LEFT + plot_w + 15.0;
        let _ = writeln!(
            s,
            r#"<line x1="{lx}" y1="{ly}" x2="{:.2}" y2="{ly}" stroke="{}" stroke-width="2"/>"#,
            lx + 20.0,
            color(m)
        );
        let _ = writeln!(s, r#"<text x="{:.2}" y="{:.2}">{m}</text>"#, lx + 26.0, ly + 4.0);
    }
    s.push_str("</svg>\n");
    s
}
