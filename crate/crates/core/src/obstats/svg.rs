//! Standalone Bland-Altman SVG plots: points, solid bias line, dashed limits
//! of agreement, axis labels in ml. Output is deterministic text (fixed
//! decimal formatting, no timestamps).

use crate::obstats::BlandAltmanResult;

const WIDTH: f64 = 640.0;
const HEIGHT: f64 = 480.0;
const MARGIN_LEFT: f64 = 70.0;
const MARGIN_RIGHT: f64 = 20.0;
const MARGIN_TOP: f64 = 40.0;
const MARGIN_BOTTOM: f64 = 56.0;

fn nice_ticks(lo: f64, hi: f64, target: usize) -> Vec<f64> {
    let span = (hi - lo).max(1e-9);
    let raw_step = span / target as f64;
    let mag = 10f64.powf(raw_step.log10().floor());
    let norm = raw_step / mag;
    let step = if norm < 1.5 {
        mag
    } else if norm < 3.5 {
        2.0 * mag
    } else if norm < 7.5 {
        5.0 * mag
    } else {
        10.0 * mag
    };
    let first = (lo / step).ceil() as i64;
    let last = (hi / step).floor() as i64;
    (first..=last).map(|i| i as f64 * step).collect()
}

/// Renders one Bland-Altman panel as a complete SVG document.
pub fn bland_altman_svg(result: &BlandAltmanResult, title: &str) -> String {
    let xs: Vec<f64> = result.points.iter().map(|p| p.0).collect();
    let ys: Vec<f64> = result.points.iter().map(|p| p.1).collect();
    let (mut x_lo, mut x_hi) = bounds(&xs);
    let (mut y_lo, mut y_hi) = bounds(&ys);
    y_lo = y_lo.min(result.loa_low).min(0.0);
    y_hi = y_hi.max(result.loa_high).max(0.0);
    let x_pad = 0.05 * (x_hi - x_lo).max(1.0);
    let y_pad = 0.10 * (y_hi - y_lo).max(1.0);
    x_lo -= x_pad;
    x_hi += x_pad;
    y_lo -= y_pad;
    y_hi += y_pad;

    let plot_w = WIDTH - MARGIN_LEFT - MARGIN_RIGHT;
    let plot_h = HEIGHT - MARGIN_TOP - MARGIN_BOTTOM;
    let sx = |v: f64| MARGIN_LEFT + (v - x_lo) / (x_hi - x_lo) * plot_w;
    let sy = |v: f64| MARGIN_TOP + (y_hi - v) / (y_hi - y_lo) * plot_h;

    let mut s = String::with_capacity(4096);
    s.push_str(&format!(
        "<svg xmlns=\"http://www.w3.org/2000/svg\" width=\"{WIDTH}\" height=\"{HEIGHT}\" viewBox=\"0 0 {WIDTH} {HEIGHT}\">\n"
    ));
    s.push_str("<rect width=\"100%\" height=\"100%\" fill=\"white\"/>\n");
    s.push_str(&format!(
        "<text x=\"{:.1}\" y=\"24\" font-family=\"sans-serif\" font-size=\"16\" text-anchor=\"middle\">{}</text>\n",
        WIDTH / 2.0,
        xml_escape(title)
    ));

    // Frame.
    s.push_str(&format!(
        "<rect x=\"{MARGIN_LEFT:.1}\" y=\"{MARGIN_TOP:.1}\" width=\"{plot_w:.1}\" height=\"{plot_h:.1}\" fill=\"none\" stroke=\"black\" stroke-width=\"1\"/>\n"
    ));

    // Ticks and grid labels.
    for t in nice_ticks(x_lo, x_hi, 6) {
        let x = sx(t);
        s.push_str(&format!(
            "<line x1=\"{x:.1}\" y1=\"{:.1}\" x2=\"{x:.1}\" y2=\"{:.1}\" stroke=\"black\" stroke-width=\"1\"/>\n",
            MARGIN_TOP + plot_h,
            MARGIN_TOP + plot_h + 5.0
        ));
        s.push_str(&format!(
            "<text x=\"{x:.1}\" y=\"{:.1}\" font-family=\"sans-serif\" font-size=\"12\" text-anchor=\"middle\">{t:.1}</text>\n",
            MARGIN_TOP + plot_h + 20.0
        ));
    }
    for t in nice_ticks(y_lo, y_hi, 6) {
        let y = sy(t);
        s.push_str(&format!(
            "<line x1=\"{:.1}\" y1=\"{y:.1}\" x2=\"{MARGIN_LEFT:.1}\" y2=\"{y:.1}\" stroke=\"black\" stroke-width=\"1\"/>\n",
            MARGIN_LEFT - 5.0
        ));
        s.push_str(&format!(
            "<text x=\"{:.1}\" y=\"{:.1}\" font-family=\"sans-serif\" font-size=\"12\" text-anchor=\"end\">{t:.1}</text>\n",
            MARGIN_LEFT - 8.0,
            y + 4.0
        ));
    }

    // Bias and limits of agreement.
    let (x0, x1) = (sx(x_lo), sx(x_hi));
    let yb = sy(result.bias);
    s.push_str(&format!(
        "<line x1=\"{x0:.1}\" y1=\"{yb:.1}\" x2=\"{x1:.1}\" y2=\"{yb:.1}\" stroke=\"#1f4e9c\" stroke-width=\"1.5\"/>\n"
    ));
    for (v, label) in [(result.loa_low, "-"), (result.loa_high, "+")] {
        let y = sy(v);
        s.push_str(&format!(
            "<line x1=\"{x0:.1}\" y1=\"{y:.1}\" x2=\"{x1:.1}\" y2=\"{y:.1}\" stroke=\"#b02a2a\" stroke-width=\"1.2\" stroke-dasharray=\"6,4\"/>\n"
        ));
        s.push_str(&format!(
            "<text x=\"{:.1}\" y=\"{:.1}\" font-family=\"sans-serif\" font-size=\"11\" text-anchor=\"end\" fill=\"#b02a2a\">{label}1.96 SD: {v:.3}</text>\n",
            x1 - 4.0,
            y - 4.0
        ));
    }
    s.push_str(&format!(
        "<text x=\"{:.1}\" y=\"{:.1}\" font-family=\"sans-serif\" font-size=\"11\" text-anchor=\"end\" fill=\"#1f4e9c\">bias: {:.3}</text>\n",
        x1 - 4.0,
        yb - 4.0,
        result.bias
    ));

    // Points.
    for (mx, d) in &result.points {
        s.push_str(&format!(
            "<circle cx=\"{:.1}\" cy=\"{:.1}\" r=\"3\" fill=\"black\" fill-opacity=\"0.65\"/>\n",
            sx(*mx),
            sy(*d)
        ));
    }

    // Axis labels.
    s.push_str(&format!(
        "<text x=\"{:.1}\" y=\"{:.1}\" font-family=\"sans-serif\" font-size=\"13\" text-anchor=\"middle\">mean of pair (ml)</text>\n",
        MARGIN_LEFT + plot_w / 2.0,
        HEIGHT - 14.0
    ));
    s.push_str(&format!(
        "<text x=\"18\" y=\"{:.1}\" font-family=\"sans-serif\" font-size=\"13\" text-anchor=\"middle\" transform=\"rotate(-90 18 {:.1})\">difference (ml)</text>\n",
        MARGIN_TOP + plot_h / 2.0,
        MARGIN_TOP + plot_h / 2.0
    ));

    s.push_str("</svg>\n");
    s
}

fn bounds(values: &[f64]) -> (f64, f64) {
    let lo = values.iter().cloned().fold(f64::INFINITY, f64::min);
    let hi = values.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    if lo.is_finite() && hi.is_finite() {
        (lo, hi)
    } else {
        (0.0, 1.0)
    }
}

fn xml_escape(s: &str) -> String {
    s.replace('&', "&amp;").replace('<', "&lt;").replace('>', "&gt;")
}
