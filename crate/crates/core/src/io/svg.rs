//! Scatter plots as standalone SVG.

use std::fmt::Write as _;

const SIZE: f64 = 400.0;
const MARGIN: f64 = 20.0;

/// Scatter plot of `(x, y)` pairs in a square view. The view is
/// `[lo, hi]²` when given, else the data's bounding square.
pub fn scatter(points: &[(f64, f64)], title: &str, view: Option<(f64, f64)>) -> String {
    let (lo, hi) = view.unwrap_or_else(|| bounds(points));
    let span = if hi > lo { hi - lo } else { 1.0 };
    let inner = SIZE - 2.0 * MARGIN;
    let mut s = String::new();
    let _ = writeln!(
        s,
        r#"<svg xmlns="http://www.w3.org/2000/svg" width="{SIZE}" height="{SIZE}" viewBox="0 0 {SIZE} {SIZE}">"#
    );
    let _ = writeln!(s, r#"<rect width="100%" height="100%" fill="white"/>"#);
    let _ = writeln!(
        s,
        r##"<rect x="{MARGIN}" y="{MARGIN}" width="{inner}" height="{inner}" fill="none" stroke="#888"/>"##
    );
    let _ = writeln!(
        s,
        r#"<text x="{MARGIN}" y="14" font-family="sans-serif" font-size="12">{}</text>"#,
        escape(title)
    );
    let _ = writeln!(s, r##"<g fill="#1f4e9a" fill-opacity="0.5">"##);
    for &(x, y) in points {
        let px = MARGIN + (x - lo) / span * inner;
        let py = SIZE - MARGIN - (y - lo) / span * inner;
        if !(MARGIN..=SIZE - MARGIN).contains(&px) || !(MARGIN..=SIZE - MARGIN).contains(&py) {
            continue;
        }
        let _ = writeln!(s, r#"<circle cx="{px:.2}" cy="{py:.2}" r="1.2"/>"#);
    }
    s.push_str("</g>\n</svg>\n");
    s
}

fn bounds(points: &[(f64, f64)]) -> (f64, f64) {
    let mut lo = f64::INFINITY;
    let mut hi = f64::NEG_INFINITY;
    for &(x, y) in points {
        lo = lo.min(x).min(y);
        hi = hi.max(x).max(y);
    }
    if lo.is_finite() {
        let pad = 0.05 * (hi - lo).max(1e-9);
        (lo - pad, hi + pad)
    } else {
        (-1.0, 1.0)
    }
}

fn escape(s: &str) -> String {
    s.replace('&', "&amp;").replace('<', "&lt;").replace('>', "&gt;")
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn one_circle_per_visible_point() {
        let svg = scatter(&[(0.0, 0.0), (1.0, 1.0), (9.0, 9.0)], "a < b", Some((-2.0, 2.0)));
        assert_eq!(svg.matches("<circle").count(), 2);
        assert!(svg.contains("a &lt; b"));
        assert!(scatter(&[], "empty", None).ends_with("</svg>\n"));
    }
}
