//! Output helpers: 6-significant-digit formatting, atomic file writes and
//! minimal SVG charts for survival curves and bar reports.

use std::fmt::Write as _;
use std::fs;
use std::io::Write;
use std::path::Path;

use crate::error::Result;
use crate::nonparametric::StepFunction;

/// Formats `x` with 6 significant digits (`0.888524`, `42.3700`, `350.000`).
pub fn fmt6(x: f64) -> String {
    if !x.is_finite() {
        return format!("{x}");
    }
    if x == 0.0 {
        return "0".to_string();
    }
    let decimals = |v: f64| (5 - v.abs().log10().floor() as i32).max(0) as usize;
    let d = decimals(x);
    let s = format!("{x:.d$}");
    // rounding can carry into a new leading digit (0.9999996 -> 1.000000)
    let rounded: f64 = s.parse().unwrap_or(x);
    let d2 = decimals(rounded);
    if d2 != d {
        format!("{rounded:.d2$}")
    } else {
        s
    }
}

/// Writes through a sibling temporary file and renames it into place.
pub fn write_atomic(path: impl AsRef<Path>, contents: &[u8]) -> Result<()> {
    let path = path.as_ref();
    let dir = path.parent().filter(|p| !p.as_os_str().is_empty()).unwrap_or(Path::new("."));
    fs::create_dir_all(dir)?;
    let file_name = path.file_name().map(|f| f.to_string_lossy().into_owned()).unwrap_or_default();
    let tmp = dir.join(format!(".{file_name}.tmp"));
    {
        let mut f = fs::File::create(&tmp)?;
        f.write_all(contents)?;
        f.sync_all()?;
    }
    fs::rename(&tmp, path)?;
    Ok(())
}

const PALETTE: [&str; 8] = ["#1f77b4", "#d62728", "#2ca02c", "#9467bd", "#ff7f0e", "#17becf", "#8c564b", "#e377c2"];

fn escape(s: &str) -> String {
    s.replace('&', "&amp;").replace('<', "&lt;").replace('>', "&gt;").replace('"', "&quot;")
}

/// Step-interpolated line plot of one or more survival curves.
pub fn step_plot_svg(title: &str, series: &[(String, &StepFunction)], y_label: &str) -> String {
    let (w, h) = (720.0, 440.0);
    let (left, right, top, bottom) = (60.0, 180.0, 40.0, 50.0);
    let pw = w - left - right;
    let ph = h - top - bottom;
    let t_max = series
        .iter()
        .filter_map(|(_, f)| f.knots().last().copied())
        .fold(0.0_f64, f64::max)
        .max(1.0);
    let y_max = series
        .iter()
        .flat_map(|(_, f)| f.values().iter().copied().chain([f.initial_value()]))
        .fold(1.0_f64, f64::max);
    let sx = |t: f64| left + pw * t / t_max;
    let sy = |v: f64| top + ph * (1.0 - v / y_max);

    let mut s = String::new();
    let _ = writeln!(s, r#"<svg xmlns="http://www.w3.org/2000/svg" width="{w}" height="{h}" viewBox="0 0 {w} {h}">"#);
    let _ = writeln!(s, r#"<rect width="100%" height="100%" fill="white"/>"#);
    let _ = writeln!(s, r#"<text x="{}" y="24" font-family="sans-serif" font-size="15" text-anchor="middle">{}</text>"#, left + pw / 2.0, escape(title));
    let _ = writeln!(s, r#"<line x1="{left}" y1="{}" x2="{}" y2="{}" stroke="black"/>"#, top + ph, left + pw, top + ph);
    let _ = writeln!(s, r#"<line x1="{left}" y1="{top}" x2="{left}" y2="{}" stroke="black"/>"#, top + ph);
    for i in 0..=4 {
        let v = y_max * i as f64 / 4.0;
        let t = t_max * i as f64 / 4.0;
        let _ = writeln!(s, r#"<text x="{}" y="{}" font-family="sans-serif" font-size="11" text-anchor="end">{}</text>"#, left - 6.0, sy(v) + 4.0, fmt6(v));
        let _ = writeln!(s, r#"<text x="{}" y="{}" font-family="sans-serif" font-size="11" text-anchor="middle">{}</text>"#, sx(t), top + ph + 16.0, fmt6(t));
    }
    let _ = writeln!(s, r#"<text x="{}" y="{}" font-family="sans-serif" font-size="12" text-anchor="middle">time</text>"#, left + pw / 2.0, h - 10.0);
    let _ = writeln!(s, r#"<text x="14" y="{}" font-family="sans-serif" font-size="12" text-anchor="middle" transform="rotate(-90 14 {})">{}</text>"#, top + ph / 2.0, top + ph / 2.0, escape(y_label));

    for (k, (name, f)) in series.iter().enumerate() {
        let color = PALETTE[k % PALETTE.len()];
        let mut d = format!("M{:.2},{:.2}", sx(0.0), sy(f.initial_value()));
        let mut prev = f.initial_value();
        for (&t, &v) in f.knots().iter().zip(f.values()) {
            let _ = write!(d, " L{:.2},{:.2} L{:.2},{:.2}", sx(t), sy(prev), sx(t), sy(v));
            prev = v;
        }
        let _ = write!(d, " L{:.2},{:.2}", sx(t_max), sy(prev));
        let _ = writeln!(s, r#"<path d="{d}" fill="none" stroke="{color}" stroke-width="1.5"/>"#);
        let ly = top + 14.0 + 18.0 * k as f64;
        let _ = writeln!(s, r#"<line x1="{}" y1="{ly}" x2="{}" y2="{ly}" stroke="{color}" stroke-width="3"/>"#, left + pw + 10.0, left + pw + 28.0);
        let _ = writeln!(s, r#"<text x="{}" y="{}" font-family="sans-serif" font-size="11">{}</text>"#, left + pw + 32.0, ly + 4.0, escape(name));
    }
    s.push_str("</svg>\n");
    s
}

/// Horizontal bar chart; bars keep the order given. Negative values extend
/// to the left of the zero axis.
pub fn bar_chart_svg(title: &str, bars: &[(String, f64)]) -> String {
    let label_w = 220.0;
    let bar_h = 20.0;
    let (w, top) = (760.0, 40.0);
    let h = top + 30.0 + bar_h * bars.len() as f64 * 1.3;
    let plot_w = w - label_w - 90.0;
    let max_abs = bars.iter().map(|(_, v)| v.abs()).fold(0.0_f64, f64::max);
    let has_neg = bars.iter().any(|(_, v)| *v < 0.0);
    let zero_x = if has_neg { label_w + plot_w / 2.0 } else { label_w };
    let half = if has_neg { plot_w / 2.0 } else { plot_w };
    let scale = if max_abs > 0.0 { half / max_abs } else { 0.0 };

    let mut s = String::new();
    let _ = writeln!(s, r#"<svg xmlns="http://www.w3.org/2000/svg" width="{w}" height="{h}" viewBox="0 0 {w} {h}">"#);
    let _ = writeln!(s, r#"<rect width="100%" height="100%" fill="white"/>"#);
    let _ = writeln!(s, r#"<text x="{}" y="24" font-family="sans-serif" font-size="15" text-anchor="middle">{}</text>"#, w / 2.0, escape(title));
    for (k, (name, v)) in bars.iter().enumerate() {
        let y = top + k as f64 * bar_h * 1.3;
        let len = v.abs() * scale;
        let x = if *v < 0.0 { zero_x - len } else { zero_x };
        let color = if *v < 0.0 { PALETTE[1] } else { PALETTE[0] };
        let _ = writeln!(s, r#"<text x="{}" y="{}" font-family="sans-serif" font-size="11" text-anchor="end">{}</text>"#, label_w - 8.0, y + bar_h * 0.7, escape(name));
        let _ = writeln!(s, r#"<rect x="{x:.2}" y="{y:.2}" width="{len:.2}" height="{bar_h}" fill="{color}"/>"#);
        let tx = if *v < 0.0 { zero_x + 4.0 } else { zero_x + len + 4.0 };
        let _ = writeln!(s, r#"<text x="{tx:.2}" y="{}" font-family="sans-serif" font-size="10">{}</text>"#, y + bar_h * 0.7, fmt6(*v));
    }
    let _ = writeln!(s, r#"<line x1="{zero_x}" y1="{}" x2="{zero_x}" y2="{}" stroke="black"/>"#, top - 4.0, h - 20.0);
    s.push_str("</svg>\n");
    s
}
