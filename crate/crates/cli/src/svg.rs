//! Dependency-free SVG line plots for the experiment reports.

/// One polyline.
pub struct Series {
    pub label: String,
    pub points: Vec<(f64, f64)>,
    pub color: &'static str,
    pub dashed: bool,
}

pub const PALETTE: [&str; 4] = ["#1f77b4", "#d62728", "#2ca02c", "#7f7f7f"];

const WIDTH: f64 = 640.0;
const HEIGHT: f64 = 420.0;
const MARGIN_LEFT: f64 = 70.0;
const MARGIN_RIGHT: f64 = 20.0;
const MARGIN_TOP: f64 = 40.0;
const MARGIN_BOTTOM: f64 = 55.0;

/// Renders the series as a single SVG document. Log axes drop non-positive
/// points of the corresponding coordinate.
pub fn line_plot(
    title: &str,
    x_label: &str,
    y_label: &str,
    log_x: bool,
    log_y: bool,
    series: &[Series],
) -> String {
    let transform = |v: f64, log: bool| -> Option<f64> {
        if log {
            (v > 0.0).then(|| v.log10())
        } else {
            Some(v)
        }
    };
    let mut xs = Vec::new();
    let mut ys = Vec::new();
    for s in series {
        for &(x, y) in &s.points {
            if let (Some(tx), Some(ty)) = (transform(x, log_x), transform(y, log_y)) {
                xs.push(tx);
                ys.push(ty);
            }
        }
    }
    let (x_min, x_max) = padded_range(&xs);
    let (y_min, y_max) = padded_range(&ys);
    let to_px = |tx: f64, ty: f64| -> (f64, f64) {
        let w = WIDTH - MARGIN_LEFT - MARGIN_RIGHT;
        let h = HEIGHT - MARGIN_TOP - MARGIN_BOTTOM;
        let px = MARGIN_LEFT + (tx - x_min) / (x_max - x_min) * w;
        let py = MARGIN_TOP + (y_max - ty) / (y_max - y_min) * h;
        (px, py)
    };

    let mut svg = String::new();
    svg.push_str(&format!(
        "<svg xmlns=\"http://www.w3.org/2000/svg\" width=\"{WIDTH}\" height=\"{HEIGHT}\" \
         viewBox=\"0 0 {WIDTH} {HEIGHT}\" font-family=\"monospace\" font-size=\"12\">\n"
    ));
    svg.push_str("<rect width=\"100%\" height=\"100%\" fill=\"white\"/>\n");
    svg.push_str(&format!(
        "<text x=\"{}\" y=\"20\" text-anchor=\"middle\" font-size=\"14\">{}</text>\n",
        WIDTH / 2.0,
        escape(title)
    ));

    // Frame and axis labels.
    let (x0, y0) = to_px(x_min, y_min);
    let (x1, y1) = to_px(x_max, y_max);
    svg.push_str(&format!(
        "<rect x=\"{:.2}\" y=\"{:.2}\" width=\"{:.2}\" height=\"{:.2}\" fill=\"none\" stroke=\"black\"/>\n",
        x1.min(x0),
        y1.min(y0),
        (x1 - x0).abs(),
        (y0 - y1).abs()
    ));
    for i in 0..=4 {
        let fx = x_min + (x_max - x_min) * i as f64 / 4.0;
        let fy = y_min + (y_max - y_min) * i as f64 / 4.0;
        let (px, _) = to_px(fx, y_min);
        let (_, py) = to_px(x_min, fy);
        svg.push_str(&format!(
            "<text x=\"{px:.2}\" y=\"{:.2}\" text-anchor=\"middle\">{}</text>\n",
            y0 + 18.0,
            tick_label(fx, log_x)
        ));
        svg.push_str(&format!(
            "<text x=\"{:.2}\" y=\"{py:.2}\" text-anchor=\"end\">{}</text>\n",
            x0 - 6.0,
            tick_label(fy, log_y)
        ));
    }
    svg.push_str(&format!(
        "<text x=\"{}\" y=\"{}\" text-anchor=\"middle\">{}</text>\n",
        WIDTH / 2.0,
        HEIGHT - 12.0,
        escape(x_label)
    ));
    svg.push_str(&format!(
        "<text x=\"16\" y=\"{}\" text-anchor=\"middle\" transform=\"rotate(-90 16 {})\">{}</text>\n",
        HEIGHT / 2.0,
        HEIGHT / 2.0,
        escape(y_label)
    ));

    for (idx, s) in series.iter().enumerate() {
        let mut path = String::new();
        for &(x, y) in &s.points {
            if let (Some(tx), Some(ty)) = (transform(x, log_x), transform(y, log_y)) {
                let (px, py) = to_px(tx, ty);
                path.push_str(&format!("{px:.2},{py:.2} "));
            }
        }
        let dash = if s.dashed {
            " stroke-dasharray=\"6,4\""
        } else {
            ""
        };
        svg.push_str(&format!(
            "<polyline points=\"{}\" fill=\"none\" stroke=\"{}\" stroke-width=\"1.5\"{dash}/>\n",
            path.trim_end(),
            s.color
        ));
        svg.push_str(&format!(
            "<text x=\"{:.2}\" y=\"{:.2}\" fill=\"{}\">{}</text>\n",
            MARGIN_LEFT + 8.0,
            MARGIN_TOP + 16.0 + 16.0 * idx as f64,
            s.color,
            escape(&s.label)
        ));
    }
    svg.push_str("</svg>\n");
    svg
}

fn padded_range(values: &[f64]) -> (f64, f64) {
    let mut min = f64::INFINITY;
    let mut max = f64::NEG_INFINITY;
    for &v in values {
        min = min.min(v);
        max = max.max(v);
    }
    if !min.is_finite() || !max.is_finite() {
        return (0.0, 1.0);
    }
    if min == max {
        return (min - 0.5, max + 0.5);
    }
    let pad = 0.05 * (max - min);
    (min - pad, max + pad)
}

fn tick_label(v: f64, log: bool) -> String {
    if log {
        format!("1e{v:.1}")
    } else {
        format!("{v:.3}")
    }
}

fn escape(text: &str) -> String {
    text.replace('&', "&amp;").replace('<', "&lt;").replace('>', "&gt;")
}
