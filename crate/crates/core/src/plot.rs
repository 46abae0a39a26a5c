//! Minimal static SVG line charts. Output depends only on the inputs.

use std::fmt::Write;

pub struct Series<'a> {
    pub label: &'a str,
    pub color: &'a str,
    pub values: &'a [f64],
}

const WIDTH: f64 = 960.0;
const HEIGHT: f64 = 360.0;
const MARGIN_L: f64 = 56.0;
const MARGIN_R: f64 = 16.0;
const MARGIN_T: f64 = 32.0;
const MARGIN_B: f64 = 40.0;

fn escape(s: &str) -> String {
    s.replace('&', "&amp;")
        .replace('<', "&lt;")
        .replace('>', "&gt;")
        .replace('"', "&quot;")
}

/// Line chart of one or more equally sampled series against the sample
/// index, with the x axis labelled in minutes at `step_min` per sample.
pub fn line_chart(title: &str, y_label: &str, step_min: f64, series: &[Series<'_>]) -> String {
    let n = series.iter().map(|s| s.values.len()).max().unwrap_or(0);
    let finite = series
        .iter()
        .flat_map(|s| s.values.iter().copied())
        .filter(|v| v.is_finite());
    let (mut lo, mut hi) = finite.fold((f64::INFINITY, f64::NEG_INFINITY), |(a, b), v| (a.min(v), b.max(v)));
    if !lo.is_finite() {
        (lo, hi) = (0.0, 1.0);
    }
    if hi - lo < 1e-9 {
        lo -= 1.0;
        hi += 1.0;
    }
    let pad = 0.05 * (hi - lo);
    lo -= pad;
    hi += pad;

    let pw = WIDTH - MARGIN_L - MARGIN_R;
    let ph = HEIGHT - MARGIN_T - MARGIN_B;
    let x_of = |i: usize| MARGIN_L + if n > 1 { pw * i as f64 / (n - 1) as f64 } else { 0.0 };
    let y_of = |v: f64| MARGIN_T + ph * (1.0 - (v - lo) / (hi - lo));

    let mut svg = String::new();
    let _ = writeln!(
        svg,
        r#"<svg xmlns="http://www.w3.org/2000/svg" width="{WIDTH}" height="{HEIGHT}" viewBox="0 0 {WIDTH} {HEIGHT}" font-family="sans-serif" font-size="12">"#
    );
    let _ = writeln!(svg, r#"<rect width="100%" height="100%" fill="white"/>"#);
    let _ = writeln!(
        svg,
        r#"<text x="{MARGIN_L}" y="20" font-size="14">{}</text>"#,
        escape(title)
    );

    for k in 0..=4 {
        let v = lo + (hi - lo) * k as f64 / 4.0;
        let y = y_of(v);
        let _ = writeln!(
            svg,
            r##"<line x1="{MARGIN_L}" y1="{y:.2}" x2="{:.2}" y2="{y:.2}" stroke="#ddd"/><text x="{:.2}" y="{:.2}" text-anchor="end">{v:.0}</text>"##,
            WIDTH - MARGIN_R,
            MARGIN_L - 6.0,
            y + 4.0
        );
    }
    for k in 0..=4 {
        let i = if n > 1 { (n - 1) * k / 4 } else { 0 };
        let _ = writeln!(
            svg,
            r#"<text x="{:.2}" y="{:.2}" text-anchor="middle">{:.0}</text>"#,
            x_of(i),
            HEIGHT - MARGIN_B + 16.0,
            i as f64 * step_min
        );
    }
    let _ = writeln!(
        svg,
        r#"<text x="{:.2}" y="{:.2}" text-anchor="middle">minutes</text>"#,
        MARGIN_L + pw / 2.0,
        HEIGHT - 6.0
    );
    let _ = writeln!(
        svg,
        r#"<text x="14" y="{:.2}" transform="rotate(-90 14 {:.2})" text-anchor="middle">{}</text>"#,
        MARGIN_T + ph / 2.0,
        MARGIN_T + ph / 2.0,
        escape(y_label)
    );

    for (k, s) in series.iter().enumerate() {
        let mut d = String::new();
        let mut pen_down = false;
        for (i, &v) in s.values.iter().enumerate() {
            if !v.is_finite() {
                pen_down = false;
                continue;
            }
            let _ = write!(d, "{}{:.2},{:.2}", if pen_down { " L" } else { " M" }, x_of(i), y_of(v));
            pen_down = true;
        }
        let _ = writeln!(
            svg,
            r#"<path d="{}" fill="none" stroke="{}" stroke-width="1.2"/>"#,
            d.trim_start(),
            escape(s.color)
        );
        let ly = MARGIN_T + 4.0 + 16.0 * k as f64;
        let lx = WIDTH - MARGIN_R - 150.0;
        let _ = writeln!(
            svg,
            r#"<line x1="{lx:.2}" y1="{ly:.2}" x2="{:.2}" y2="{ly:.2}" stroke="{}" stroke-width="2"/><text x="{:.2}" y="{:.2}">{}</text>"#,
            lx + 20.0,
            escape(s.color),
            lx + 26.0,
            ly + 4.0,
            escape(s.label)
        );
    }
    svg.push_str("</svg>\n");
    svg
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn chart_is_deterministic_and_well_formed() {
        let a = [100.0, 120.0, f64::NAN, 140.0];
        let b = [110.0, 115.0, 130.0, 135.0];
        let mk = || {
            line_chart(
                "p <1>",
                "mg/dl",
                5.0,
                &[
                    Series {
                        label: "actual",
                        color: "#1f77b4",
                        values: &a,
                    },
                    Series {
                        label: "predicted",
                        color: "#d62728",
                        values: &b,
                    },
                ],
            )
        };
        let svg = mk();
        assert_eq!(svg, mk());
        assert!(svg.starts_with("<svg") && svg.ends_with("</svg>\n"));
        assert!(svg.contains("p &lt;1&gt;"));
        assert_eq!(svg.matches("<path").count(), 2);
    }

    #[test]
    fn empty_input_does_not_panic() {
        let svg = line_chart("empty", "y", 5.0, &[]);
        assert!(svg.contains("</svg>"));
    }
}
