//! Minimal SVG line charts and heatmaps.

use std::fmt::Write;

const W: f64 = 960.0;
const H: f64 = 520.0;
const LEFT: f64 = 70.0;
const RIGHT: f64 = 230.0;
const TOP: f64 = 40.0;
const BOTTOM: f64 = 55.0;

pub struct Series {
    pub label: String,
    pub values: Vec<f64>,
    pub dashed: bool,
}

fn escape(s: &str) -> String {
    s.replace('&', "&amp;").replace('<', "&lt;").replace('>', "&gt;")
}

const PALETTE: [&str; 20] = [
    "#1f77b4", "#ff7f0e", "#2ca02c", "#d62728", "#9467bd", "#8c564b", "#e377c2", "#7f7f7f", "#bcbd22", "#17becf",
    "#aec7e8", "#ffbb78", "#98df8a", "#ff9896", "#c5b0d5", "#c49c94", "#f7b6d2", "#c7c7c7", "#dbdb8d", "#9edae5",
];

/// Tick positions covering `[lo, hi]`.
fn ticks(lo: f64, hi: f64, target: usize) -> Vec<f64> {
    let span = (hi - lo).max(1e-12);
    let raw = span / target as f64;
    let mag = 10f64.powf(raw.log10().floor());
    let step = [1.0, 2.0, 5.0, 10.0]
        .into_iter()
        .map(|m| m * mag)
        .find(|s| span / s <= target as f64)
        .unwrap_or(10.0 * mag);
    let first = (lo / step - 1e-9).ceil() as i64;
    let last = (hi / step + 1e-9).floor() as i64;
    (first..=last).map(|k| k as f64 * step).collect()
}

fn header(out: &mut String, title: &str) {
    let _ = write!(
        out,
        r#"<svg xmlns="http://www.w3.org/2000/svg" width="{W}" height="{H}" viewBox="0 0 {W} {H}" font-family="sans-serif" font-size="12">
<rect width="100%" height="100%" fill="white"/>
<text x="{}" y="22" text-anchor="middle" font-size="15">{}</text>
"#,
        W / 2.0,
        escape(title)
    );
}

/// Line chart over x = 1, 2, …; non-finite points break the line.
pub fn line_chart(title: &str, x_label: &str, y_label: &str, series: &[Series], y_range: Option<(f64, f64)>) -> String {
    let mut out = String::new();
    header(&mut out, title);
    let n = series.iter().map(|s| s.values.len()).max().unwrap_or(0).max(2);
    let finite = || series.iter().flat_map(|s| s.values.iter().copied()).filter(|v| v.is_finite());
    let (mut lo, mut hi) = y_range.unwrap_or_else(|| {
        (
            finite().fold(f64::INFINITY, f64::min),
            finite().fold(f64::NEG_INFINITY, f64::max),
        )
    });
    if !lo.is_finite() || !hi.is_finite() {
        (lo, hi) = (0.0, 1.0);
    }
    if hi - lo < 1e-9 {
        lo -= 0.5;
        hi += 0.5;
    }
    let pw = W - LEFT - RIGHT;
    let ph = H - TOP - BOTTOM;
    let sx = |i: usize| LEFT + pw * i as f64 / (n - 1) as f64;
    let sy = |v: f64| TOP + ph * (1.0 - (v - lo) / (hi - lo));

    let _ = writeln!(
        out,
        r##"<rect x="{LEFT}" y="{TOP}" width="{pw}" height="{ph}" fill="none" stroke="#444"/>"##
    );
    for t in ticks(lo, hi, 6) {
        let y = sy(t);
        let _ = writeln!(
            out,
            r##"<line x1="{LEFT}" x2="{}" y1="{y:.1}" y2="{y:.1}" stroke="#ddd"/><text x="{}" y="{:.1}" text-anchor="end">{}</text>"##,
            LEFT + pw,
            LEFT - 6.0,
            y + 4.0,
            fmt_tick(t)
        );
    }
    for t in ticks(1.0, n as f64, 10) {
        let x = sx(t as usize - 1);
        let _ = writeln!(
            out,
            r##"<line x1="{x:.1}" x2="{x:.1}" y1="{}" y2="{}" stroke="#444"/><text x="{x:.1}" y="{}" text-anchor="middle">{}</text>"##,
            TOP + ph,
            TOP + ph + 5.0,
            TOP + ph + 18.0,
            t as usize
        );
    }
    let _ = writeln!(
        out,
        r#"<text x="{}" y="{}" text-anchor="middle">{}</text>"#,
        LEFT + pw / 2.0,
        H - 14.0,
        escape(x_label)
    );
    let _ = writeln!(
        out,
        r#"<text transform="translate(18,{}) rotate(-90)" text-anchor="middle">{}</text>"#,
        TOP + ph / 2.0,
        escape(y_label)
    );

    for (i, s) in series.iter().enumerate() {
        let c = if s.dashed { "#111" } else { PALETTE[i % PALETTE.len()] };
        let dash = if s.dashed { r#" stroke-dasharray="6,4""# } else { "" };
        let mut d = String::new();
        let mut pen_down = false;
        for (k, &v) in s.values.iter().enumerate() {
            if !v.is_finite() {
                pen_down = false;
                continue;
            }
            let _ = write!(d, "{}{:.1},{:.1} ", if pen_down { "L" } else { "M" }, sx(k), sy(v.clamp(lo, hi)));
            pen_down = true;
        }
        let _ = writeln!(
            out,
            r#"<path d="{}" fill="none" stroke="{c}" stroke-width="1.6"{dash}/>"#,
            d.trim_end()
        );
        let ly = TOP + 8.0 + 16.0 * i as f64;
        let lx = W - RIGHT + 14.0;
        let _ = writeln!(
            out,
            r#"<line x1="{lx}" x2="{}" y1="{ly}" y2="{ly}" stroke="{c}" stroke-width="2"{dash}/><text x="{}" y="{}">{}</text>"#,
            lx + 22.0,
            lx + 28.0,
            ly + 4.0,
            escape(&s.label)
        );
    }
    out.push_str("</svg>\n");
    out
}

fn fmt_tick(t: f64) -> String {
    let s = format!("{t:.3}");
    s.trim_end_matches('0').trim_end_matches('.').to_string()
}

pub struct Panel {
    pub title: String,
    /// Row-major values in [0, 1].
    pub cells: Vec<Vec<f64>>,
}

/// Grid of heatmap panels, `cols` panels per row. Matrix rows run
/// top-to-bottom, columns left-to-right.
pub fn heatmaps(title: &str, panels: &[Panel], cols: usize, row_label: &str, col_label: &str) -> String {
    let cell = 22.0;
    let size = panels.iter().map(|p| p.cells.len()).max().unwrap_or(1) as f64;
    let pw = size * cell + 50.0;
    let ph = size * cell + 60.0;
    let rows = panels.len().div_ceil(cols.max(1));
    let w = pw * cols as f64 + 20.0;
    let h = ph * rows as f64 + 60.0;
    let mut out = String::new();
    let _ = write!(
        out,
        r#"<svg xmlns="http://www.w3.org/2000/svg" width="{w}" height="{h}" viewBox="0 0 {w} {h}" font-family="sans-serif" font-size="10">
<rect width="100%" height="100%" fill="white"/>
<text x="{}" y="20" text-anchor="middle" font-size="14">{}</text>
<text x="{}" y="{}" text-anchor="middle">{}; rows: {}</text>
"#,
        w / 2.0,
        escape(title),
        w / 2.0,
        h - 10.0,
        escape(col_label),
        escape(row_label)
    );
    for (i, p) in panels.iter().enumerate() {
        let ox = 20.0 + pw * (i % cols) as f64 + 20.0;
        let oy = 40.0 + ph * (i / cols) as f64 + 20.0;
        let _ = writeln!(out, r#"<text x="{ox}" y="{}">{}</text>"#, oy - 6.0, escape(&p.title));
        for (r, row) in p.cells.iter().enumerate() {
            for (c, &v) in row.iter().enumerate() {
                let shade = (255.0 * (1.0 - v.clamp(0.0, 1.0))).round() as u8;
                let _ = writeln!(
                    out,
                    r##"<rect x="{:.1}" y="{:.1}" width="{cell}" height="{cell}" fill="rgb({shade},{shade},255)" stroke="#ccc"><title>{:.3}</title></rect>"##,
                    ox + c as f64 * cell,
                    oy + r as f64 * cell,
                    v
                );
            }
        }
    }
    out.push_str("</svg>\n");
    out
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn ticks_are_round() {
        let t = ticks(0.0, 1.0, 5);
        assert_eq!(t.len(), 6);
        assert!(t.iter().zip([0.0, 0.2, 0.4, 0.6, 0.8, 1.0]).all(|(a, b)| (a - b).abs() < 1e-12));
        assert_eq!(ticks(1.0, 100.0, 10), (1..=10).map(|k| 10.0 * k as f64).collect::<Vec<_>>());
    }

    #[test]
    fn chart_is_well_formed() {
        let s = line_chart(
            "a < b",
            "episode",
            "value",
            &[Series {
                label: "x".into(),
                values: vec![0.0, f64::NAN, 1.0],
                dashed: false,
            }],
            None,
        );
        assert!(s.starts_with("<svg") && s.ends_with("</svg>\n"));
        assert!(s.contains("a &lt; b"));
        assert_eq!(s.matches("<path").count(), 1);
    }
}
