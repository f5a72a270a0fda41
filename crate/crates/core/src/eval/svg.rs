use std::fmt::Write as _;

const WIDTH: f64 = 640.0;
const HEIGHT: f64 = 320.0;
const MARGIN: f64 = 40.0;

fn polyline(values: &[f64], offset: usize, n: usize, lo: f64, hi: f64) -> String {
    let span = if hi > lo { hi - lo } else { 1.0 };
    let dx = (WIDTH - 2.0 * MARGIN) / (n.max(2) - 1) as f64;
    let mut points = String::new();
    for (i, v) in values.iter().enumerate() {
        let x = MARGIN + (offset + i) as f64 * dx;
        let y = HEIGHT - MARGIN - (v - lo) / span * (HEIGHT - 2.0 * MARGIN);
        let _ = write!(points, "{x:.2},{y:.2} ");
    }
    points.trim_end().to_string()
}

fn escape(text: &str) -> String {
    text.replace('&', "&amp;").replace('<', "&lt;").replace('>', "&gt;")
}

/// Static line chart of a unit's observed series and a counterfactual path starting at `t0`.
pub fn effect_chart(title: &str, observed: &[f64], counterfactual: &[f64], t0: usize) -> String {
    let all = observed.iter().chain(counterfactual).copied().filter(|v| v.is_finite());
    let (lo, hi) = all.fold((f64::INFINITY, f64::NEG_INFINITY), |(l, h), v| (l.min(v), h.max(v)));
    let (lo, hi) = if lo.is_finite() { (lo, hi) } else { (0.0, 1.0) };
    let n = observed.len().max(t0 + counterfactual.len());
    let dx = (WIDTH - 2.0 * MARGIN) / (n.max(2) - 1) as f64;
    let x0 = MARGIN + t0 as f64 * dx;

    let mut svg = String::new();
    let _ = writeln!(
        svg,
        r#"<svg xmlns="http://www.w3.org/2000/svg" width="{WIDTH}" height="{HEIGHT}" viewBox="0 0 {WIDTH} {HEIGHT}">"#
    );
    let _ = writeln!(svg, r#"<rect width="100%" height="100%" fill="white"/>"#);
    let _ = writeln!(
        svg,
        r#"<text x="{MARGIN}" y="20" font-family="sans-serif" font-size="13">{}</text>"#,
        escape(title)
    );
    let _ = writeln!(
        svg,
        r#"<line x1="{x0:.2}" y1="{MARGIN}" x2="{x0:.2}" y2="{:.2}" stroke="grey" stroke-dasharray="4 3"/>"#,
        HEIGHT - MARGIN
    );
    let _ = writeln!(
        svg,
        r#"<text x="4" y="{MARGIN}" font-family="sans-serif" font-size="10">{hi:.3}</text>"#
    );
    let _ = writeln!(
        svg,
        r#"<text x="4" y="{:.2}" font-family="sans-serif" font-size="10">{lo:.3}</text>"#,
        HEIGHT - MARGIN
    );
    let _ = writeln!(
        svg,
        r#"<polyline fill="none" stroke="black" stroke-width="1.5" points="{}"/>"#,
        polyline(observed, 0, n, lo, hi)
    );
    let _ = writeln!(
        svg,
        r#"<polyline fill="none" stroke="crimson" stroke-width="1.5" points="{}"/>"#,
        polyline(counterfactual, t0, n, lo, hi)
    );
    let _ = writeln!(
        svg,
        r#"<text x="{:.2}" y="{:.2}" font-family="sans-serif" font-size="10">observed (black), counterfactual (red)</text>"#,
        MARGIN,
        HEIGHT - 12.0
    );
    svg.push_str("</svg>\n");
    svg
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn chart_has_two_series_and_escapes_the_title() {
        let obs: Vec<f64> = (0..20).map(|t| t as f64).collect();
        let svg = effect_chart("a<b", &obs, &[14.0, 15.0, 16.0, 17.0, 18.0], 15);
        assert_eq!(svg.matches("<polyline").count(), 2);
        assert!(svg.contains("a&lt;b"));
        assert!(svg.ends_with("</svg>\n"));
    }
}
