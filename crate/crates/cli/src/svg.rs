//! Minimal SVG plot of an epidemic-curve band against the observed curve.

use std::fmt::Write;

use bcilm::analysis::CurveBand;

const WIDTH: f64 = 640.0;
const HEIGHT: f64 = 400.0;
const MARGIN: f64 = 50.0;

/// `observed` pairs appearance time with new infections.
pub fn band_plot(title: &str, band: &CurveBand, observed: &[(i64, usize)]) -> String {
    let t_lo = band
        .times
        .iter()
        .chain(observed.iter().map(|(t, _)| t))
        .min()
        .copied()
        .unwrap_or(0) as f64;
    let t_hi = band
        .times
        .iter()
        .chain(observed.iter().map(|(t, _)| t))
        .max()
        .copied()
        .unwrap_or(1) as f64;
    let y_hi = band
        .upper
        .iter()
        .copied()
        .chain(observed.iter().map(|&(_, c)| c as f64))
        .fold(1.0, f64::max);
    let t_span = (t_hi - t_lo).max(1.0);
    let x = |t: f64| MARGIN + (t - t_lo) / t_span * (WIDTH - 2.0 * MARGIN);
    let y = |v: f64| HEIGHT - MARGIN - v / y_hi * (HEIGHT - 2.0 * MARGIN);

    let mut s = String::new();
    let _ = writeln!(
        s,
        r#"<svg xmlns="http://www.w3.org/2000/svg" width="{WIDTH}" height="{HEIGHT}" viewBox="0 0 {WIDTH} {HEIGHT}">"#
    );
    let _ = writeln!(s, r#"<rect width="100%" height="100%" fill="white"/>"#);
    let _ = writeln!(
        s,
        r#"<text x="{}" y="25" font-family="sans-serif" font-size="14" text-anchor="middle">{}</text>"#,
        WIDTH / 2.0,
        escape(title)
    );
    // axes
    let _ = writeln!(
        s,
        r#"<path d="M{m} {b} H{r} M{m} {b} V{m}" stroke="black" fill="none"/>"#,
        m = MARGIN,
        b = HEIGHT - MARGIN,
        r = WIDTH - MARGIN
    );
    let _ = writeln!(
        s,
        r#"<text x="{}" y="{}" font-family="sans-serif" font-size="12" text-anchor="middle">time</text>"#,
        WIDTH / 2.0,
        HEIGHT - 12.0
    );
    let _ = writeln!(
        s,
        r#"<text x="14" y="{}" font-family="sans-serif" font-size="12" transform="rotate(-90 14 {})" text-anchor="middle">new infections</text>"#,
        HEIGHT / 2.0,
        HEIGHT / 2.0
    );
    for (v, anchor) in [(0.0, "end"), (y_hi, "end")] {
        let _ = writeln!(
            s,
            r#"<text x="{}" y="{:.1}" font-family="sans-serif" font-size="10" text-anchor="{anchor}">{v}</text>"#,
            MARGIN - 4.0,
            y(v) + 3.0
        );
    }
    for t in [t_lo, t_hi] {
        let _ = writeln!(
            s,
            r#"<text x="{:.1}" y="{}" font-family="sans-serif" font-size="10" text-anchor="middle">{t}</text>"#,
            x(t),
            HEIGHT - MARGIN + 14.0
        );
    }

    if !band.times.is_empty() {
        let mut pts: Vec<String> = band
            .times
            .iter()
            .zip(&band.upper)
            .map(|(&t, &v)| format!("{:.2},{:.2}", x(t as f64), y(v)))
            .collect();
        pts.extend(
            band.times
                .iter()
                .zip(&band.lower)
                .rev()
                .map(|(&t, &v)| format!("{:.2},{:.2}", x(t as f64), y(v))),
        );
        let _ = writeln!(
            s,
            r##"<polygon points="{}" fill="#9ecae1" fill-opacity="0.6" stroke="none"/>"##,
            pts.join(" ")
        );
        let med: Vec<String> = band
            .times
            .iter()
            .zip(&band.median)
            .map(|(&t, &v)| format!("{:.2},{:.2}", x(t as f64), y(v)))
            .collect();
        let _ = writeln!(
            s,
            r##"<polyline points="{}" fill="none" stroke="#08519c" stroke-width="2"/>"##,
            med.join(" ")
        );
    }
    for &(t, c) in observed {
        let _ = writeln!(
            s,
            r#"<circle cx="{:.2}" cy="{:.2}" r="3" fill="black"/>"#,
            x(t as f64),
            y(c as f64)
        );
    }
    s.push_str("</svg>\n");
    s
}

fn escape(text: &str) -> String {
    text.replace('&', "&amp;")
        .replace('<', "&lt;")
        .replace('>', "&gt;")
}
