//! CSV and SVG renderings of labeled square matrices.

use std::fmt::Write;

fn csv_field(s: &str) -> String {
    if s.contains([',', '"', '\n']) {
        format!("\"{}\"", s.replace('"', "\"\""))
    } else {
        s.to_string()
    }
}

/// Header row of labels, then one row per label. NaN cells are left empty.
pub fn heatmap_csv(labels: &[String], values: &[Vec<f64>]) -> String {
    let mut out = String::new();
    let header: Vec<String> = labels.iter().map(|l| csv_field(l)).collect();
    writeln!(out, ",{}", header.join(",")).unwrap();
    for (label, row) in labels.iter().zip(values) {
        let cells: Vec<String> = row
            .iter()
            .map(|v| if v.is_nan() { String::new() } else { format!("{v}") })
            .collect();
        writeln!(out, "{},{}", csv_field(label), cells.join(",")).unwrap();
    }
    out
}

/// Diverging scale on [-1, 1]: blue at -1, white at 0, red at 1.
fn color(v: f64) -> String {
    if v.is_nan() {
        return "#bdbdbd".into();
    }
    let v = v.clamp(-1.0, 1.0);
    let (r, g, b) = if v < 0.0 {
        let t = -v;
        (255.0 * (1.0 - t) + 33.0 * t, 255.0 * (1.0 - t) + 102.0 * t, 255.0 * (1.0 - t) + 172.0 * t)
    } else {
        (255.0 * (1.0 - v) + 178.0 * v, 255.0 * (1.0 - v) + 24.0 * v, 255.0 * (1.0 - v) + 43.0 * v)
    };
    format!("#{:02x}{:02x}{:02x}", r.round() as u8, g.round() as u8, b.round() as u8)
}

fn escape(s: &str) -> String {
    s.replace('&', "&amp;").replace('<', "&lt;").replace('>', "&gt;")
}

/// Heatmap SVG with cell values printed to two decimals.
pub fn heatmap_svg(labels: &[String], values: &[Vec<f64>], title: &str) -> String {
    const CELL: usize = 48;
    const MARGIN: usize = 140;
    let n = labels.len();
    let size = MARGIN + n * CELL + 10;
    let mut s = String::new();
    writeln!(
        s,
        r#"<svg xmlns="http://www.w3.org/2000/svg" width="{size}" height="{}" font-family="sans-serif" font-size="10">"#,
        size + 20
    )
    .unwrap();
    writeln!(s, r#"<text x="10" y="16" font-size="13">{}</text>"#, escape(title)).unwrap();
    for (i, label) in labels.iter().enumerate() {
        let pos = MARGIN + i * CELL + CELL / 2;
        writeln!(
            s,
            r#"<text x="{}" y="{}" text-anchor="end">{}</text>"#,
            MARGIN - 6,
            pos + 20 + 3,
            escape(label)
        )
        .unwrap();
        writeln!(
            s,
            r#"<text transform="translate({pos},{}) rotate(-60)">{}</text>"#,
            MARGIN + 14,
            escape(label)
        )
        .unwrap();
    }
    for (i, row) in values.iter().enumerate() {
        for (j, &v) in row.iter().enumerate() {
            let (x, y) = (MARGIN + j * CELL, MARGIN + 20 + i * CELL);
            writeln!(
                s,
                r##"<rect x="{x}" y="{y}" width="{CELL}" height="{CELL}" fill="{}" stroke="#ffffff"/>"##,
                color(v)
            )
            .unwrap();
            let text = if v.is_nan() { "-".to_string() } else { format!("{v:.2}") };
            writeln!(
                s,
                r#"<text x="{}" y="{}" text-anchor="middle">{text}</text>"#,
                x + CELL / 2,
                y + CELL / 2 + 3
            )
            .unwrap();
        }
    }
    s.push_str("</svg>\n");
    s
}
