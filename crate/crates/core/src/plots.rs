//! Standalone SVG figures: coefficient path, coefficient bars, ROC overlay,
//! importance bars and beeswarm.

use std::fmt::Write as _;

const W: f64 = 640.0;
const H: f64 = 420.0;
const L: f64 = 70.0;
const R: f64 = 20.0;
const T: f64 = 40.0;
const B: f64 = 50.0;
const PALETTE: [&str; 8] = ["#1f77b4", "#d62728", "#2ca02c", "#ff7f0e", "#9467bd", "#8c564b", "#e377c2", "#17becf"];

fn esc(s: &str) -> String {
    s.replace('&', "&amp;").replace('<', "&lt;").replace('>', "&gt;").replace('"', "&quot;")
}

fn header(title: &str, w: f64, h: f64) -> String {
    format!(
        "<svg xmlns=\"http://www.w3.org/2000/svg\" width=\"{w}\" height=\"{h}\" viewBox=\"0 0 {w} {h}\" font-family=\"sans-serif\" font-size=\"11\">\n<rect width=\"{w}\" height=\"{h}\" fill=\"white\"/>\n<text x=\"{}\" y=\"22\" text-anchor=\"middle\" font-size=\"14\">{}</text>\n",
        w / 2.0,
        esc(title)
    )
}

/// Linear map of `[lo, hi]` onto `[a, b]`.
fn scale(v: f64, lo: f64, hi: f64, a: f64, b: f64) -> f64 {
    if hi > lo { a + (v - lo) / (hi - lo) * (b - a) } else { (a + b) / 2.0 }
}

fn axes(s: &mut String, xlabel: &str, ylabel: &str, xr: (f64, f64), yr: (f64, f64)) {
    let (x0, x1, y0, y1) = (L, W - R, H - B, T);
    let _ = writeln!(s, "<line x1=\"{x0}\" y1=\"{y0}\" x2=\"{x1}\" y2=\"{y0}\" stroke=\"black\"/>");
    let _ = writeln!(s, "<line x1=\"{x0}\" y1=\"{y0}\" x2=\"{x0}\" y2=\"{y1}\" stroke=\"black\"/>");
    for k in 0..=4 {
        let f = k as f64 / 4.0;
        let (xv, yv) = (xr.0 + f * (xr.1 - xr.0), yr.0 + f * (yr.1 - yr.0));
        let (px, py) = (x0 + f * (x1 - x0), y0 + f * (y1 - y0));
        let _ = writeln!(s, "<text x=\"{px:.1}\" y=\"{:.1}\" text-anchor=\"middle\">{xv:.3}</text>", y0 + 15.0);
        let _ = writeln!(s, "<text x=\"{:.1}\" y=\"{:.1}\" text-anchor=\"end\">{yv:.3}</text>", x0 - 5.0, py + 4.0);
    }
    let _ = writeln!(s, "<text x=\"{:.1}\" y=\"{:.1}\" text-anchor=\"middle\">{}</text>", (x0 + x1) / 2.0, H - 12.0, esc(xlabel));
    let _ = writeln!(s, "<text x=\"15\" y=\"{:.1}\" text-anchor=\"middle\" transform=\"rotate(-90 15 {:.1})\">{}</text>", (y0 + y1) / 2.0, (y0 + y1) / 2.0, esc(ylabel));
}

fn bounds(v: impl Iterator<Item = f64>) -> (f64, f64) {
    let (lo, hi) = v.filter(|x| x.is_finite()).fold((f64::INFINITY, f64::NEG_INFINITY), |(a, b), x| (a.min(x), b.max(x)));
    if lo.is_finite() { (lo, hi) } else { (0.0, 1.0) }
}

/// Named polylines in one panel with a legend.
pub fn lines(title: &str, xlabel: &str, ylabel: &str, series: &[(String, Vec<(f64, f64)>)], xr: Option<(f64, f64)>, yr: Option<(f64, f64)>) -> String {
    let xr = xr.unwrap_or_else(|| bounds(series.iter().flat_map(|s| s.1.iter().map(|p| p.0))));
    let yr = yr.unwrap_or_else(|| bounds(series.iter().flat_map(|s| s.1.iter().map(|p| p.1))));
    let mut s = header(title, W, H);
    axes(&mut s, xlabel, ylabel, xr, yr);
    for (k, (name, pts)) in series.iter().enumerate() {
        let c = PALETTE[k % PALETTE.len()];
        let d: Vec<String> = pts.iter().map(|&(x, y)| format!("{:.2},{:.2}", scale(x, xr.0, xr.1, L, W - R), scale(y, yr.0, yr.1, H - B, T))).collect();
        let _ = writeln!(s, "<polyline fill=\"none\" stroke=\"{c}\" stroke-width=\"1.5\" points=\"{}\"/>", d.join(" "));
        if series.len() <= 16 {
            let y = T + 12.0 + 13.0 * k as f64;
            let _ = writeln!(s, "<text x=\"{:.1}\" y=\"{y:.1}\" fill=\"{c}\">{}</text>", L + 10.0, esc(name));
        }
    }
    s.push_str("</svg>\n");
    s
}

/// Horizontal bars, one per label, in the given order.
pub fn bars(title: &str, xlabel: &str, items: &[(String, f64)]) -> String {
    let h = (T + B + 18.0 * items.len() as f64).max(160.0);
    let left = 190.0;
    let (lo, hi) = bounds(items.iter().map(|i| i.1).chain([0.0]));
    let mut s = header(title, W, h);
    let zero = scale(0.0, lo, hi, left, W - R);
    for (k, (name, v)) in items.iter().enumerate() {
        let y = T + 18.0 * k as f64;
        let x = scale(*v, lo, hi, left, W - R);
        let (a, b) = if x < zero { (x, zero) } else { (zero, x) };
        let c = if *v < 0.0 { PALETTE[1] } else { PALETTE[0] };
        let _ = writeln!(s, "<rect x=\"{a:.2}\" y=\"{:.2}\" width=\"{:.2}\" height=\"13\" fill=\"{c}\"/>", y, (b - a).max(0.5));
        let _ = writeln!(s, "<text x=\"{:.1}\" y=\"{:.1}\" text-anchor=\"end\">{}</text>", left - 6.0, y + 10.0, esc(name));
        let _ = writeln!(s, "<text x=\"{:.1}\" y=\"{:.1}\">{v:.4}</text>", b + 3.0, y + 10.0);
    }
    let _ = writeln!(s, "<line x1=\"{zero:.2}\" y1=\"{T}\" x2=\"{zero:.2}\" y2=\"{:.1}\" stroke=\"black\"/>", h - B + 5.0);
    let _ = writeln!(s, "<text x=\"{:.1}\" y=\"{:.1}\" text-anchor=\"middle\">{}</text>", (left + W - R) / 2.0, h - 12.0, esc(xlabel));
    s.push_str("</svg>\n");
    s
}

/// One strip per feature; x is the attribution, colour the min-max scaled
/// feature value (blue low, red high), vertical jitter by local density.
pub fn beeswarm(title: &str, features: &[String], phi: &[Vec<f64>], value: &[Vec<f64>]) -> String {
    let h = (T + B + 34.0 * features.len() as f64).max(160.0);
    let left = 190.0;
    let (lo, hi) = bounds(phi.iter().flatten().copied().chain([0.0]));
    let mut s = header(title, W, h);
    let zero = scale(0.0, lo, hi, left, W - R);
    let _ = writeln!(s, "<line x1=\"{zero:.2}\" y1=\"{T}\" x2=\"{zero:.2}\" y2=\"{:.1}\" stroke=\"#888\"/>", h - B);
    for (k, name) in features.iter().enumerate() {
        let yc = T + 17.0 + 34.0 * k as f64;
        let _ = writeln!(s, "<text x=\"{:.1}\" y=\"{:.1}\" text-anchor=\"end\">{}</text>", left - 6.0, yc + 4.0, esc(name));
        let (vlo, vhi) = bounds(value[k].iter().copied());
        let mut bins: std::collections::BTreeMap<i64, i64> = std::collections::BTreeMap::new();
        for (i, &p) in phi[k].iter().enumerate() {
            let x = scale(p, lo, hi, left, W - R);
            let slot = bins.entry((x / 3.0).floor() as i64).or_insert(0);
            let off = if *slot % 2 == 0 { *slot / 2 } else { -(*slot + 1) / 2 } as f64 * 2.0;
            *slot += 1;
            let t = scale(value[k][i], vlo, vhi, 0.0, 1.0);
            let (r, b) = ((40.0 + 215.0 * t) as u8, (40.0 + 215.0 * (1.0 - t)) as u8);
            let _ = writeln!(s, "<circle cx=\"{x:.2}\" cy=\"{:.2}\" r=\"1.8\" fill=\"rgb({r},40,{b})\" fill-opacity=\"0.7\"/>", yc + off.clamp(-15.0, 15.0));
        }
    }
    let _ = writeln!(s, "<text x=\"{:.1}\" y=\"{:.1}\" text-anchor=\"middle\">SHAP value (impact on predicted risk)</text>", (left + W - R) / 2.0, h - 12.0);
    s.push_str("</svg>\n");
    s
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn documents_are_closed_and_escaped() {
        let a = lines("ROC", "FPR", "TPR", &[("a<b".into(), vec![(0.0, 0.0), (1.0, 1.0)])], Some((0.0, 1.0)), Some((0.0, 1.0)));
        let b = bars("Importance", "mean |SHAP|", &[("x".into(), 0.2), ("y".into(), -0.1)]);
        let c = beeswarm("Beeswarm", &["f".into()], &[vec![0.1, -0.2, 0.1]], &[vec![1.0, 0.0, 0.5]]);
        for d in [a, b, c] {
            assert!(d.starts_with("<svg") && d.trim_end().ends_with("</svg>"));
            assert!(!d.contains("a<b") && !d.contains("NaN"));
        }
    }
}
