//! Minimal SVG polyline rendering for efficiency tables.

use mh_core::asymptotics::AreRow;
use std::fmt::Write as _;

const W: f64 = 640.0;
const H: f64 = 480.0;
const MARGIN: f64 = 60.0;

/// Render the `are` column against `log_phi` as a single annotated polyline.
pub fn render_are(rows: &[AreRow<f64>], label: &str) -> String {
    let xs: Vec<f64> = rows.iter().map(|r| r.log_phi).collect();
    let ys: Vec<f64> = rows.iter().map(|r| r.are).collect();
    let (x_min, x_max) = bounds(&xs);
    let (mut y_min, mut y_max) = bounds(&ys);
    if (y_max - y_min).abs() < 1e-9 {
        y_min -= 0.01;
        y_max += 0.01;
    }
    let sx = |x: f64| MARGIN + (x - x_min) / (x_max - x_min) * (W - 2.0 * MARGIN);
    let sy = |y: f64| H - MARGIN - (y - y_min) / (y_max - y_min) * (H - 2.0 * MARGIN);

    let mut out = String::new();
    let _ = writeln!(
        out,
        r#"<svg xmlns="http://www.w3.org/2000/svg" viewBox="0 0 {W} {H}" font-family="monospace" font-size="12">"#
    );
    let _ = writeln!(
        out,
        r#"<rect width="{W}" height="{H}" fill="white"/>
<line x1="{m}" y1="{b}" x2="{r}" y2="{b}" stroke="black"/>
<line x1="{m}" y1="{t}" x2="{m}" y2="{b}" stroke="black"/>"#,
        m = MARGIN,
        b = H - MARGIN,
        r = W - MARGIN,
        t = MARGIN
    );
    for i in 0..=4 {
        let x = x_min + (x_max - x_min) * i as f64 / 4.0;
        let y = y_min + (y_max - y_min) * i as f64 / 4.0;
        let _ = writeln!(
            out,
            r#"<line x1="{px}" y1="{b}" x2="{px}" y2="{b2}" stroke="black"/>
<text x="{px}" y="{tx}" text-anchor="middle">{x:.2}</text>
<line x1="{m}" y1="{py}" x2="{m2}" y2="{py}" stroke="black"/>
<text x="{ty}" y="{py}" text-anchor="end" dominant-baseline="middle">{y:.3}</text>"#,
            px = sx(x),
            b = H - MARGIN,
            b2 = H - MARGIN + 6.0,
            tx = H - MARGIN + 20.0,
            m = MARGIN,
            m2 = MARGIN - 6.0,
            py = sy(y),
            ty = MARGIN - 10.0,
        );
    }
    let _ = writeln!(
        out,
        r#"<text x="{cx}" y="{by}" text-anchor="middle">log(phi)</text>
<text x="16" y="{cy}" text-anchor="middle" transform="rotate(-90 16 {cy})">ARE</text>
<text x="{cx}" y="{ty}" text-anchor="middle">{label}</text>"#,
        cx = W / 2.0,
        by = H - 12.0,
        cy = H / 2.0,
        ty = MARGIN - 24.0,
        label = label
    );
    let points: Vec<String> = rows.iter().map(|r| format!("{:.2},{:.2}", sx(r.log_phi), sy(r.are))).collect();
    let _ = writeln!(out, r#"<polyline fill="none" stroke="steelblue" stroke-width="1.5" points="{}"/>"#, points.join(" "));
    let _ = writeln!(out, "</svg>");
    out
}

fn bounds(v: &[f64]) -> (f64, f64) {
    let mut lo = f64::INFINITY;
    let mut hi = f64::NEG_INFINITY;
    for &x in v {
        lo = lo.min(x);
        hi = hi.max(x);
    }
    (lo, hi)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn renders_polyline_and_axes() {
        let rows: Vec<AreRow<f64>> = (-5..=5)
            .map(|i| AreRow {
                log_phi: i as f64 / 2.0,
                sigma2_mh_theta: 1.0,
                sigma2_mple_theta: 1.0,
                are: 1.0 - 0.01 * (i * i) as f64,
            })
            .collect();
        let svg = render_are(&rows, "srs m=3");
        assert!(svg.contains("<polyline"));
        assert!(svg.contains("log(phi)"));
        assert!(svg.contains("ARE"));
        assert!(svg.starts_with("<svg"));
        assert!(svg.trim_end().ends_with("</svg>"));
    }
}
