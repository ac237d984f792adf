//! Minimal static SVG charts for training curves, sweeps and force grids.

use std::fmt::Write;

const W: f64 = 640.0;
const H: f64 = 400.0;
const MARGIN: f64 = 56.0;
const COLORS: [&str; 6] = ["#1f77b4", "#d62728", "#2ca02c", "#9467bd", "#ff7f0e", "#8c564b"];

pub struct Series<'a> {
    pub name: &'a str,
    pub points: Vec<(f64, f64)>,
}

fn escape(s: &str) -> String {
    s.replace('&', "&amp;").replace('<', "&lt;").replace('>', "&gt;")
}

fn bounds(series: &[Series<'_>], extra_y: Option<f64>) -> (f64, f64, f64, f64) {
    let pts = series.iter().flat_map(|s| s.points.iter()).filter(|p| p.0.is_finite() && p.1.is_finite());
    let (mut x0, mut x1, mut y0, mut y1) = (f64::INFINITY, f64::NEG_INFINITY, f64::INFINITY, f64::NEG_INFINITY);
    for &(x, y) in pts {
        x0 = x0.min(x);
        x1 = x1.max(x);
        y0 = y0.min(y);
        y1 = y1.max(y);
    }
    if let Some(y) = extra_y {
        y0 = y0.min(y);
        y1 = y1.max(y);
    }
    if !x0.is_finite() {
        return (0.0, 1.0, 0.0, 1.0);
    }
    if x1 <= x0 {
        x1 = x0 + 1.0;
    }
    y0 = y0.min(0.0);
    if y1 <= y0 {
        y1 = y0 + 1.0;
    }
    (x0, x1, y0, y1)
}

/// Line chart with one polyline per series and an optional dashed reference line.
pub fn line_chart(title: &str, x_label: &str, y_label: &str, series: &[Series<'_>], reference: Option<(&str, f64)>) -> String {
    let (x0, x1, y0, y1) = bounds(series, reference.map(|r| r.1));
    let sx = |x: f64| MARGIN + (x - x0) / (x1 - x0) * (W - 2.0 * MARGIN);
    let sy = |y: f64| H - MARGIN - (y - y0) / (y1 - y0) * (H - 2.0 * MARGIN);
    let mut out = String::new();
    let _ = writeln!(out, r#"<svg xmlns="http://www.w3.org/2000/svg" width="{W}" height="{H}" font-family="sans-serif" font-size="12">"#);
    let _ = writeln!(out, r#"<rect width="100%" height="100%" fill="white"/>"#);
    let _ = writeln!(out, r#"<text x="{}" y="20" text-anchor="middle" font-size="14">{}</text>"#, W / 2.0, escape(title));
    let _ = writeln!(
        out,
        r#"<path d="M{m} {t} V{b} H{r}" stroke="black" fill="none"/>"#,
        m = MARGIN,
        t = MARGIN,
        b = H - MARGIN,
        r = W - MARGIN
    );
    let _ = writeln!(out, r#"<text x="{}" y="{}" text-anchor="middle">{}</text>"#, W / 2.0, H - 16.0, escape(x_label));
    let _ = writeln!(
        out,
        r#"<text x="16" y="{}" text-anchor="middle" transform="rotate(-90 16 {})">{}</text>"#,
        H / 2.0,
        H / 2.0,
        escape(y_label)
    );
    for (v, anchor, x, y) in [
        (x0, "middle", sx(x0), H - MARGIN + 16.0),
        (x1, "middle", sx(x1), H - MARGIN + 16.0),
        (y0, "end", MARGIN - 6.0, sy(y0) + 4.0),
        (y1, "end", MARGIN - 6.0, sy(y1) + 4.0),
    ] {
        let _ = writeln!(out, r#"<text x="{x:.1}" y="{y:.1}" text-anchor="{anchor}">{v:.4}</text>"#);
    }
    if let Some((name, y)) = reference {
        let _ = writeln!(
            out,
            r##"<line x1="{:.1}" x2="{:.1}" y1="{:.1}" y2="{:.1}" stroke="#555" stroke-dasharray="6 4"/>"##,
            MARGIN,
            W - MARGIN,
            sy(y),
            sy(y)
        );
        let _ = writeln!(out, r#"<text x="{:.1}" y="{:.1}" text-anchor="end">{}</text>"#, W - MARGIN, sy(y) - 4.0, escape(name));
    }
    for (i, s) in series.iter().enumerate() {
        let color = COLORS[i % COLORS.len()];
        let path: Vec<String> = s
            .points
            .iter()
            .filter(|p| p.0.is_finite() && p.1.is_finite())
            .map(|&(x, y)| format!("{:.1},{:.1}", sx(x), sy(y)))
            .collect();
        let _ = writeln!(out, r#"<polyline points="{}" stroke="{color}" fill="none" stroke-width="1.5"/>"#, path.join(" "));
        let _ = writeln!(
            out,
            r#"<text x="{:.1}" y="{:.1}" fill="{color}">{}</text>"#,
            W - MARGIN + 4.0 - 120.0,
            MARGIN + 14.0 * i as f64,
            escape(s.name)
        );
    }
    out.push_str("</svg>\n");
    out
}

/// Side-by-side square heatmaps, one per `(title, values)` pair, on a shared
/// colour scale from 0 to the largest value.
pub fn heatmaps(panels: &[(String, Vec<f64>)], grid: usize) -> String {
    let cell = 24.0;
    let side = cell * grid as f64;
    let gap = 30.0;
    let width = gap + panels.len() as f64 * (side + gap);
    let height = side + 2.0 * gap;
    let vmax = panels
        .iter()
        .flat_map(|p| p.1.iter())
        .fold(0.0f64, |a, &b| a.max(b.abs()))
        .max(1e-12);
    let mut out = String::new();
    let _ = writeln!(out, r#"<svg xmlns="http://www.w3.org/2000/svg" width="{width}" height="{height}" font-family="sans-serif" font-size="12">"#);
    let _ = writeln!(out, r#"<rect width="100%" height="100%" fill="white"/>"#);
    for (k, (title, values)) in panels.iter().enumerate() {
        let ox = gap + k as f64 * (side + gap);
        let _ = writeln!(out, r#"<text x="{:.1}" y="{:.1}" text-anchor="middle">{}</text>"#, ox + side / 2.0, gap - 10.0, escape(title));
        for (i, v) in values.iter().enumerate().take(grid * grid) {
            let shade = (255.0 * (1.0 - (v.abs() / vmax).min(1.0))).round() as u8;
            let _ = writeln!(
                out,
                r##"<rect x="{:.1}" y="{:.1}" width="{cell}" height="{cell}" fill="rgb(255,{shade},{shade})" stroke="#ddd"/>"##,
                ox + (i % grid) as f64 * cell,
                gap + (i / grid) as f64 * cell
            );
        }
    }
    out.push_str("</svg>\n");
    out
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn charts_are_well_formed() {
        let s = [Series {
            name: "train",
            points: vec![(1.0, 0.5), (2.0, 0.25)],
        }];
        let svg = line_chart("loss", "epoch", "aRMSE <N>", &s, Some(("baseline", 0.4)));
        assert!(svg.starts_with("<svg") && svg.trim_end().ends_with("</svg>"));
        assert!(svg.contains("&lt;N&gt;"));
        let empty = line_chart("x", "a", "b", &[], None);
        assert!(empty.contains("</svg>"));
        let hm = heatmaps(&[("true".into(), vec![0.0, 1.0, 0.0, 0.0]), ("pred".into(), vec![0.1; 4])], 2);
        assert_eq!(hm.matches("<rect x=").count(), 8);
    }
}
