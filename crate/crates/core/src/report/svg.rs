//! Hand-emitted SVG 1.1 scatter plots: a viewBox, axis lines with ticks,
//! and one circle marker per point. No plotting dependencies.

const WIDTH: f64 = 640.0;
const HEIGHT: f64 = 480.0;
const MARGIN_LEFT: f64 = 64.0;
const MARGIN_RIGHT: f64 = 24.0;
const MARGIN_TOP: f64 = 24.0;
const MARGIN_BOTTOM: f64 = 56.0;
const TICKS: usize = 5;

fn escape(text: &str) -> String {
    text.replace('&', "&amp;").replace('<', "&lt;").replace('>', "&gt;")
}

fn fmt(v: f64) -> String {
    format!("{:.2}", v)
}

/// Render points into a standalone scatter plot. Axes span the data range
/// (padded to [0,1] when the data sits inside it).
pub fn scatter_svg(points: &[(f64, f64)], x_label: &str, y_label: &str) -> String {
    let (mut x_min, mut x_max) = (0.0f64, 1.0f64);
    let (mut y_min, mut y_max) = (0.0f64, 1.0f64);
    for &(x, y) in points {
        x_min = x_min.min(x);
        x_max = x_max.max(x);
        y_min = y_min.min(y);
        y_max = y_max.max(y);
    }
    if x_max == x_min {
        x_max = x_min + 1.0;
    }
    if y_max == y_min {
        y_max = y_min + 1.0;
    }
    let plot_w = WIDTH - MARGIN_LEFT - MARGIN_RIGHT;
    let plot_h = HEIGHT - MARGIN_TOP - MARGIN_BOTTOM;
    let sx = |x: f64| MARGIN_LEFT + (x - x_min) / (x_max - x_min) * plot_w;
    let sy = |y: f64| MARGIN_TOP + plot_h - (y - y_min) / (y_max - y_min) * plot_h;

    let mut svg = String::new();
    svg.push_str(&format!(
        "<svg xmlns=\"http://www.w3.org/2000/svg\" version=\"1.1\" viewBox=\"0 0 {WIDTH} {HEIGHT}\" width=\"{WIDTH}\" height=\"{HEIGHT}\">\n"
    ));
    svg.push_str("<rect x=\"0\" y=\"0\" width=\"640\" height=\"480\" fill=\"white\"/>\n");

    // Axes.
    svg.push_str(&format!(
        "<line x1=\"{l}\" y1=\"{b}\" x2=\"{r}\" y2=\"{b}\" stroke=\"black\" stroke-width=\"1\"/>\n",
        l = MARGIN_LEFT,
        r = WIDTH - MARGIN_RIGHT,
        b = MARGIN_TOP + plot_h
    ));
    svg.push_str(&format!(
        "<line x1=\"{l}\" y1=\"{t}\" x2=\"{l}\" y2=\"{b}\" stroke=\"black\" stroke-width=\"1\"/>\n",
        l = MARGIN_LEFT,
        t = MARGIN_TOP,
        b = MARGIN_TOP + plot_h
    ));

    // Ticks and tick labels.
    for i in 0..=TICKS {
        let fx = x_min + (x_max - x_min) * i as f64 / TICKS as f64;
        let px = sx(fx);
        let base = MARGIN_TOP + plot_h;
        svg.push_str(&format!(
            "<line x1=\"{px}\" y1=\"{base}\" x2=\"{px}\" y2=\"{}\" stroke=\"black\" stroke-width=\"1\"/>\n",
            base + 5.0
        ));
        svg.push_str(&format!(
            "<text x=\"{px}\" y=\"{}\" font-size=\"11\" text-anchor=\"middle\">{}</text>\n",
            base + 18.0,
            fmt(fx)
        ));

        let fy = y_min + (y_max - y_min) * i as f64 / TICKS as f64;
        let py = sy(fy);
        svg.push_str(&format!(
            "<line x1=\"{}\" y1=\"{py}\" x2=\"{}\" y2=\"{py}\" stroke=\"black\" stroke-width=\"1\"/>\n",
            MARGIN_LEFT - 5.0,
            MARGIN_LEFT
        ));
        svg.push_str(&format!(
            "<text x=\"{}\" y=\"{}\" font-size=\"11\" text-anchor=\"end\">{}</text>\n",
            MARGIN_LEFT - 8.0,
            py + 4.0,
            fmt(fy)
        ));
    }

    // Axis labels.
    svg.push_str(&format!(
        "<text x=\"{}\" y=\"{}\" font-size=\"13\" text-anchor=\"middle\">{}</text>\n",
        MARGIN_LEFT + plot_w / 2.0,
        HEIGHT - 12.0,
        escape(x_label)
    ));
    svg.push_str(&format!(
        "<text x=\"16\" y=\"{}\" font-size=\"13\" text-anchor=\"middle\" transform=\"rotate(-90 16 {})\">{}</text>\n",
        MARGIN_TOP + plot_h / 2.0,
        MARGIN_TOP + plot_h / 2.0,
        escape(y_label)
    ));

    // Point markers.
    for &(x, y) in points {
        svg.push_str(&format!(
            "<circle cx=\"{:.2}\" cy=\"{:.2}\" r=\"3\" fill=\"steelblue\" fill-opacity=\"0.7\"/>\n",
            sx(x),
            sy(y)
        ));
    }
    svg.push_str("</svg>\n");
    svg
}

#[cfg(test)]
mod tests {
    use super::*;

    /// Minimal well-formedness check: every opened tag closes in order and
    /// the document has a single root.
    fn assert_well_formed(xml: &str) {
        let mut stack: Vec<String> = Vec::new();
        let mut roots = 0;
        let mut rest = xml;
        while let Some(start) = rest.find('<') {
            let Some(end_rel) = rest[start..].find('>') else {
                panic!("unterminated tag")
            };
            let tag = &rest[start + 1..start + end_rel];
            rest = &rest[start + end_rel + 1..];
            if let Some(name) = tag.strip_prefix('/') {
                let open = stack.pop().unwrap_or_else(|| panic!("stray closer {name}"));
                assert_eq!(open, name, "mismatched closer");
                if stack.is_empty() {
                    roots += 1;
                }
            } else if tag.ends_with('/') || tag.starts_with('?') || tag.starts_with('!') {
                if stack.is_empty() && !tag.starts_with('?') && !tag.starts_with('!') {
                    roots += 1;
                }
            } else {
                let name: String =
                    tag.split_whitespace().next().unwrap_or("").to_string();
                stack.push(name);
            }
        }
        assert!(stack.is_empty(), "unclosed tags: {stack:?}");
        assert_eq!(roots, 1, "expected a single root element");
    }

    #[test]
    fn svg_is_well_formed_with_one_marker_per_point() {
        let points: Vec<(f64, f64)> =
            (0..37).map(|i| (i as f64 / 36.0, (36 - i) as f64 / 36.0)).collect();
        let svg = scatter_svg(&points, "flip rate", "consistency rate");
        assert_well_formed(&svg);
        assert_eq!(svg.matches("<circle").count(), 37);
        assert!(svg.contains("flip rate"));
        assert!(svg.contains("consistency rate"));
    }

    #[test]
    fn svg_handles_empty_and_degenerate_input() {
        let svg = scatter_svg(&[], "x", "y");
        assert_well_formed(&svg);
        assert_eq!(svg.matches("<circle").count(), 0);
        let svg = scatter_svg(&[(0.5, 0.5), (0.5, 0.5)], "x", "y");
        assert_well_formed(&svg);
        assert_eq!(svg.matches("<circle").count(), 2);
    }

    #[test]
    fn labels_are_escaped() {
        let svg = scatter_svg(&[(0.1, 0.2)], "a < b & c", "y");
        assert!(svg.contains("a &lt; b &amp; c"));
        assert_well_formed(&svg);
    }
}
