//! Minimal hand-rolled SVG line plots. The data ranges ride along as
//! `data-*` attributes on the root element so emitted plots can be
//! cross-checked against the CSV tables without parsing path geometry.

use std::fmt::Write as _;

const WIDTH: f64 = 640.0;
const HEIGHT: f64 = 420.0;
const MARGIN: f64 = 56.0;

const PALETTE: [&str; 6] = [
    "#1f77b4", "#d62728", "#2ca02c", "#9467bd", "#ff7f0e", "#17becf",
];

/// One polyline per named series on shared axes; returns the SVG text.
pub fn line_plot(
    title: &str,
    x_label: &str,
    y_label: &str,
    series: &[(String, Vec<(f64, f64)>)],
) -> String {
    let points: Vec<(f64, f64)> = series.iter().flat_map(|(_, pts)| pts.iter().copied()).collect();
    let (x_min, x_max) = span(points.iter().map(|p| p.0));
    let (y_min, y_max) = span(points.iter().map(|p| p.1));
    let x_scale = (WIDTH - 2.0 * MARGIN) / (x_max - x_min).max(f64::MIN_POSITIVE);
    let y_scale = (HEIGHT - 2.0 * MARGIN) / (y_max - y_min).max(f64::MIN_POSITIVE);
    let px = |x: f64| MARGIN + (x - x_min) * x_scale;
    let py = |y: f64| HEIGHT - MARGIN - (y - y_min) * y_scale;

    let mut out = String::new();
    write!(
        out,
        "<svg xmlns=\"http://www.w3.org/2000/svg\" width=\"{WIDTH}\" height=\"{HEIGHT}\" \
         viewBox=\"0 0 {WIDTH} {HEIGHT}\" data-x-min=\"{x_min}\" data-x-max=\"{x_max}\" \
         data-y-min=\"{y_min}\" data-y-max=\"{y_max}\">\n"
    )
    .expect("write to string");
    writeln!(
        out,
        "  <text x=\"{}\" y=\"24\" text-anchor=\"middle\" font-size=\"15\">{}</text>",
        WIDTH / 2.0,
        escape(title)
    )
    .expect("write to string");
    // Axes with min/max tick labels.
    writeln!(
        out,
        "  <line x1=\"{m}\" y1=\"{b}\" x2=\"{r}\" y2=\"{b}\" stroke=\"black\"/>",
        m = MARGIN,
        b = HEIGHT - MARGIN,
        r = WIDTH - MARGIN
    )
    .expect("write to string");
    writeln!(
        out,
        "  <line x1=\"{m}\" y1=\"{t}\" x2=\"{m}\" y2=\"{b}\" stroke=\"black\"/>",
        m = MARGIN,
        t = MARGIN,
        b = HEIGHT - MARGIN
    )
    .expect("write to string");
    for (value, x, y, anchor) in [
        (x_min, MARGIN, HEIGHT - MARGIN + 18.0, "middle"),
        (x_max, WIDTH - MARGIN, HEIGHT - MARGIN + 18.0, "middle"),
        (y_min, MARGIN - 6.0, HEIGHT - MARGIN, "end"),
        (y_max, MARGIN - 6.0, MARGIN + 4.0, "end"),
    ] {
        writeln!(
            out,
            "  <text x=\"{x}\" y=\"{y}\" text-anchor=\"{anchor}\" font-size=\"11\">{value}</text>"
        )
        .expect("write to string");
    }
    writeln!(
        out,
        "  <text x=\"{}\" y=\"{}\" text-anchor=\"middle\" font-size=\"12\">{}</text>",
        WIDTH / 2.0,
        HEIGHT - 14.0,
        escape(x_label)
    )
    .expect("write to string");
    writeln!(
        out,
        "  <text x=\"16\" y=\"{}\" text-anchor=\"middle\" font-size=\"12\" \
         transform=\"rotate(-90 16 {y})\">{label}</text>",
        HEIGHT / 2.0,
        y = HEIGHT / 2.0,
        label = escape(y_label)
    )
    .expect("write to string");

    for (idx, (label, pts)) in series.iter().enumerate() {
        let color = PALETTE[idx % PALETTE.len()];
        let mut coords = String::new();
        for (x, y) in pts {
            write!(coords, "{:.2},{:.2} ", px(*x), py(*y)).expect("write to string");
        }
        writeln!(
            out,
            "  <polyline fill=\"none\" stroke=\"{color}\" stroke-width=\"1.5\" \
             data-label=\"{}\" points=\"{}\"/>",
            escape(label),
            coords.trim_end()
        )
        .expect("write to string");
        writeln!(
            out,
            "  <text x=\"{}\" y=\"{}\" font-size=\"11\" fill=\"{color}\">{}</text>",
            WIDTH - MARGIN + 4.0,
            MARGIN + 14.0 * idx as f64,
            escape(label)
        )
        .expect("write to string");
    }
    out.push_str("</svg>\n");
    out
}

fn span(values: impl Iterator<Item = f64>) -> (f64, f64) {
    let mut lo = f64::INFINITY;
    let mut hi = f64::NEG_INFINITY;
    for v in values {
        lo = lo.min(v);
        hi = hi.max(v);
    }
    if !lo.is_finite() || !hi.is_finite() {
        (0.0, 1.0)
    } else {
        (lo, hi)
    }
}

fn escape(text: &str) -> String {
    text.replace('&', "&amp;").replace('<', "&lt;").replace('>', "&gt;")
}
