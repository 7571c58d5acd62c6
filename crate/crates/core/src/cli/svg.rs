//! Static flow-density plots: pooled samples and fitted parabola per penetration.

use std::fmt::Write as _;

const WIDTH: f64 = 760.0;
const HEIGHT: f64 = 500.0;
const LEFT: f64 = 80.0;
const RIGHT: f64 = 150.0;
const TOP: f64 = 50.0;
const BOTTOM: f64 = 70.0;
const COLORS: [&str; 6] = ["#1b9e77", "#d95f02", "#7570b3", "#e7298a", "#66a61e", "#a6761d"];

/// One penetration level of a plot.
#[derive(Debug, Clone, PartialEq)]
pub struct Series {
    pub penetration: f64,
    /// `(k, Q)` samples.
    pub points: Vec<(f64, f64)>,
    /// `(a, b, c)` of the fitted curve, drawn over the sampled density range.
    pub curve: Option<(f64, f64, f64)>,
}

/// Round tick step giving roughly `target` intervals over `[0, max]`.
fn tick_step(max: f64, target: f64) -> f64 {
    let raw = (max / target).max(f64::MIN_POSITIVE);
    let mag = 10f64.powf(raw.log10().floor());
    [1.0, 2.0, 5.0, 10.0]
        .into_iter()
        .map(|m| m * mag)
        .find(|s| *s >= raw)
        .unwrap_or(10.0 * mag)
}

fn escape(s: &str) -> String {
    s.replace('&', "&amp;").replace('<', "&lt;").replace('>', "&gt;")
}

pub fn render(title: &str, series: &[Series]) -> String {
    let mut k_max: f64 = 0.0;
    let mut q_max: f64 = 0.0;
    for s in series {
        for &(k, q) in &s.points {
            k_max = k_max.max(k);
            q_max = q_max.max(q);
        }
    }
    let kx = tick_step(k_max.max(1.0), 6.0);
    let qy = tick_step(q_max.max(1.0), 5.0);
    let k_top = (k_max.max(1.0) / kx).ceil() * kx;
    let q_top = (q_max.max(1.0) / qy).ceil() * qy;
    let pw = WIDTH - LEFT - RIGHT;
    let ph = HEIGHT - TOP - BOTTOM;
    let x = |k: f64| LEFT + k / k_top * pw;
    let y = |q: f64| TOP + ph - q / q_top * ph;

    let mut s = String::new();
    let _ = writeln!(
        s,
        r#"<svg xmlns="http://www.w3.org/2000/svg" width="{WIDTH}" height="{HEIGHT}" viewBox="0 0 {WIDTH} {HEIGHT}" font-family="sans-serif" font-size="12">"#
    );
    let _ = writeln!(s, r#"<rect width="{WIDTH}" height="{HEIGHT}" fill="white"/>"#);
    let _ = writeln!(
        s,
        r#"<text x="{:.1}" y="28" text-anchor="middle" font-size="16">{}</text>"#,
        LEFT + pw / 2.0,
        escape(title)
    );

    let mut i = 0.0;
    while i * kx <= k_top + 1e-9 {
        let k = i * kx;
        let _ = writeln!(
            s,
            r##"<line x1="{0:.1}" y1="{1:.1}" x2="{0:.1}" y2="{2:.1}" stroke="#ddd"/><text x="{0:.1}" y="{3:.1}" text-anchor="middle">{4}</text>"##,
            x(k),
            TOP,
            TOP + ph,
            TOP + ph + 18.0,
            k
        );
        i += 1.0;
    }
    let mut j = 0.0;
    while j * qy <= q_top + 1e-9 {
        let q = j * qy;
        let _ = writeln!(
            s,
            r##"<line x1="{0:.1}" y1="{1:.1}" x2="{2:.1}" y2="{1:.1}" stroke="#ddd"/><text x="{3:.1}" y="{4:.1}" text-anchor="end">{5}</text>"##,
            LEFT,
            y(q),
            LEFT + pw,
            LEFT - 6.0,
            y(q) + 4.0,
            q
        );
        j += 1.0;
    }
    let _ = writeln!(
        s,
        r#"<rect x="{LEFT}" y="{TOP}" width="{pw}" height="{ph}" fill="none" stroke="black"/>"#
    );
    let _ = writeln!(
        s,
        r#"<text x="{:.1}" y="{:.1}" text-anchor="middle">Density k (veh/km)</text>"#,
        LEFT + pw / 2.0,
        HEIGHT - 20.0
    );
    let _ = writeln!(
        s,
        r#"<text x="22" y="{0:.1}" text-anchor="middle" transform="rotate(-90 22 {0:.1})">Flow Q (veh/h)</text>"#,
        TOP + ph / 2.0
    );

    for (n, series) in series.iter().enumerate() {
        let color = COLORS[n % COLORS.len()];
        let _ = writeln!(s, r#"<g fill="{color}" fill-opacity="0.5">"#);
        for &(k, q) in &series.points {
            let _ = writeln!(s, r#"<circle cx="{:.2}" cy="{:.2}" r="2"/>"#, x(k), y(q));
        }
        let _ = writeln!(s, "</g>");
        if let Some((a, b, c)) = series.curve {
            let lo = series.points.iter().map(|p| p.0).fold(f64::INFINITY, f64::min);
            let hi = series.points.iter().map(|p| p.0).fold(f64::NEG_INFINITY, f64::max);
            if lo < hi {
                let path: Vec<String> = (0..=60)
                    .map(|i| {
                        let k = lo + (hi - lo) * i as f64 / 60.0;
                        let q = (a * k * k + b * k + c).clamp(0.0, q_top);
                        format!("{:.2},{:.2}", x(k), y(q))
                    })
                    .collect();
                let _ = writeln!(
                    s,
                    r#"<polyline points="{}" fill="none" stroke="{color}" stroke-width="2"/>"#,
                    path.join(" ")
                );
            }
        }
        let ly = TOP + 10.0 + 22.0 * n as f64;
        let lx = LEFT + pw + 20.0;
        let _ = writeln!(
            s,
            r#"<line x1="{lx:.1}" y1="{ly:.1}" x2="{:.1}" y2="{ly:.1}" stroke="{color}" stroke-width="2"/><circle cx="{:.1}" cy="{ly:.1}" r="3" fill="{color}"/><text x="{:.1}" y="{:.1}">{}% RV</text>"#,
            lx + 24.0,
            lx + 12.0,
            lx + 30.0,
            ly + 4.0,
            (series.penetration * 100.0).round()
        );
    }
    s.push_str("</svg>\n");
    s
}
