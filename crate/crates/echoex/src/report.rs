//! CSV and minimal SVG emission for result artifacts. Plots are
//! CSV-first; the SVGs are simple line/heatmap renderings with no
//! framework behind them.

use std::io::Write;
use std::path::Path;

use crate::error::Result;
use crate::tensor::Tensor;

/// Writes `(x, y)` rows with a header line; `# key=value` comment lines
/// come first.
pub fn write_series_csv(
    path: impl AsRef<Path>,
    comments: &[(&str, &str)],
    header: &str,
    rows: &[(f64, f64)],
) -> Result<()> {
    let mut f = std::fs::File::create(path)?;
    for (k, v) in comments {
        writeln!(f, "# {k}={v}")?;
    }
    writeln!(f, "{header}")?;
    for (x, y) in rows {
        writeln!(f, "{x},{y}")?;
    }
    Ok(())
}

/// Writes a `(rows x cols)` matrix as CSV, one matrix row per line.
pub fn write_matrix_csv(
    path: impl AsRef<Path>,
    comments: &[(&str, &str)],
    m: &Tensor,
) -> Result<()> {
    assert_eq!(m.rank(), 2);
    let (rows, cols) = (m.shape()[0], m.shape()[1]);
    let mut f = std::fs::File::create(path)?;
    for (k, v) in comments {
        writeln!(f, "# {k}={v}")?;
    }
    for r in 0..rows {
        let row: Vec<String> =
            m.data()[r * cols..(r + 1) * cols].iter().map(|v| format!("{v}")).collect();
        writeln!(f, "{}", row.join(","))?;
    }
    Ok(())
}

fn svg_escape(s: &str) -> String {
    s.replace('&', "&amp;").replace('<', "&lt;").replace('>', "&gt;")
}

/// Single-series line plot.
pub fn svg_line_plot(
    path: impl AsRef<Path>,
    title: &str,
    rows: &[(f64, f64)],
) -> Result<()> {
    let (w, h, margin) = (800.0, 300.0, 40.0);
    let (x_min, x_max) = bounds(rows.iter().map(|r| r.0));
    let (y_min, y_max) = bounds(rows.iter().map(|r| r.1));
    let sx = (w - 2.0 * margin) / (x_max - x_min).max(1e-12);
    let sy = (h - 2.0 * margin) / (y_max - y_min).max(1e-12);

    let mut points = String::new();
    for (x, y) in rows {
        let px = margin + (x - x_min) * sx;
        let py = h - margin - (y - y_min) * sy;
        points.push_str(&format!("{px:.2},{py:.2} "));
    }
    let svg = format!(
        concat!(
            r#"<?xml version="1.0" encoding="UTF-8"?>"#,
            "\n",
            r#"<svg xmlns="http://www.w3.org/2000/svg" width="{w}" height="{h}" viewBox="0 0 {w} {h}">"#,
            "\n",
            r#"<rect width="{w}" height="{h}" fill="white"/>"#,
            "\n",
            r#"<text x="{tx}" y="20" font-family="sans-serif" font-size="14">{title}</text>"#,
            "\n",
            r#"<text x="8" y="{ly}" font-family="sans-serif" font-size="10">{ymax:.1}</text>"#,
            "\n",
            r#"<text x="8" y="{hy}" font-family="sans-serif" font-size="10">{ymin:.1}</text>"#,
            "\n",
            r#"<polyline fill="none" stroke="steelblue" stroke-width="1.2" points="{points}"/>"#,
            "\n",
            "</svg>\n"
        ),
        w = w,
        h = h,
        tx = margin,
        title = svg_escape(title),
        ly = margin,
        ymax = y_max,
        hy = h - margin,
        ymin = y_min,
        points = points.trim_end(),
    );
    std::fs::write(path, svg)?;
    Ok(())
}

/// Grayscale heatmap of a `(rows x cols)` matrix, one rect per cell block.
pub fn svg_heatmap(path: impl AsRef<Path>, title: &str, m: &Tensor) -> Result<()> {
    assert_eq!(m.rank(), 2);
    let (rows, cols) = (m.shape()[0], m.shape()[1]);
    // cap the rect count by binning columns
    let max_cells = 400usize;
    let col_bin = cols.div_ceil(max_cells);
    let binned_cols = cols.div_ceil(col_bin);
    let (cell_w, cell_h) = (2.0f64, 2.0f64);
    let (margin, title_h) = (10.0, 24.0);
    let w = margin * 2.0 + binned_cols as f64 * cell_w;
    let h = margin * 2.0 + title_h + rows as f64 * cell_h;

    let max = m.data().iter().fold(0.0f64, |a, v| a.max(v.abs())).max(1e-12);
    let mut cells = String::new();
    for r in 0..rows {
        for cb in 0..binned_cols {
            let mut acc = 0.0;
            let mut n = 0;
            for c in cb * col_bin..((cb + 1) * col_bin).min(cols) {
                acc += m.data()[r * cols + c].abs();
                n += 1;
            }
            let v = acc / n.max(1) as f64 / max;
            let shade = (255.0 * (1.0 - v)).round() as u8;
            let x = margin + cb as f64 * cell_w;
            let y = margin + title_h + r as f64 * cell_h;
            cells.push_str(&format!(
                r#"<rect x="{x:.1}" y="{y:.1}" width="{cell_w}" height="{cell_h}" fill="rgb({shade},{shade},{shade})"/>"#
            ));
            cells.push('\n');
        }
    }
    let svg = format!(
        concat!(
            r#"<?xml version="1.0" encoding="UTF-8"?>"#,
            "\n",
            r#"<svg xmlns="http://www.w3.org/2000/svg" width="{w:.0}" height="{h:.0}" viewBox="0 0 {w:.0} {h:.0}">"#,
            "\n",
            r#"<rect width="{w:.0}" height="{h:.0}" fill="white"/>"#,
            "\n",
            r#"<text x="{margin}" y="18" font-family="sans-serif" font-size="13">{title}</text>"#,
            "\n{cells}</svg>\n"
        ),
        w = w,
        h = h,
        margin = margin,
        title = svg_escape(title),
        cells = cells,
    );
    std::fs::write(path, svg)?;
    Ok(())
}

fn bounds(values: impl Iterator<Item = f64>) -> (f64, f64) {
    let mut lo = f64::INFINITY;
    let mut hi = f64::NEG_INFINITY;
    for v in values {
        lo = lo.min(v);
        hi = hi.max(v);
    }
    if !lo.is_finite() || !hi.is_finite() {
        (0.0, 1.0)
    } else if lo == hi {
        (lo - 0.5, hi + 0.5)
    } else {
        (lo, hi)
    }
}

/// Crude XML well-formedness check used by tests: every opened tag is
/// closed in order and attribute quotes balance.
pub fn xml_is_well_formed(text: &str) -> bool {
    let mut stack: Vec<String> = Vec::new();
    let mut rest = text;
    while let Some(start) = rest.find('<') {
        let Some(end_rel) = rest[start..].find('>') else { return false };
        let tag = &rest[start + 1..start + end_rel];
        rest = &rest[start + end_rel + 1..];
        if tag.starts_with('?') || tag.starts_with('!') {
            continue;
        }
        if !tag.count_matches_char('"').is_multiple_of(2) {
            return false;
        }
        if let Some(name) = tag.strip_prefix('/') {
            match stack.pop() {
                Some(open) if open == name.trim() => {}
                _ => return false,
            }
        } else if !tag.ends_with('/') {
            let name = tag.split_whitespace().next().unwrap_or("");
            stack.push(name.to_string());
        }
    }
    stack.is_empty()
}

trait CountMatches {
    fn count_matches_char(&self, c: char) -> usize;
}

impl CountMatches for str {
    fn count_matches_char(&self, c: char) -> usize {
        self.chars().filter(|&x| x == c).count()
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn line_plot_is_valid_xml() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("t.svg");
        let rows: Vec<(f64, f64)> = (0..100).map(|i| (i as f64, (i as f64 * 0.1).sin())).collect();
        svg_line_plot(&p, "test <series>", &rows).unwrap();
        let text = std::fs::read_to_string(&p).unwrap();
        assert!(xml_is_well_formed(&text), "{text}");
    }

    #[test]
    fn heatmap_is_valid_xml() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("h.svg");
        let m = Tensor::new(vec![4, 600], (0..2400).map(|i| (i % 7) as f64).collect());
        svg_heatmap(&p, "map", &m).unwrap();
        let text = std::fs::read_to_string(&p).unwrap();
        assert!(xml_is_well_formed(&text));
    }

    #[test]
    fn well_formedness_checker_catches_breakage() {
        assert!(xml_is_well_formed("<a><b/></a>"));
        assert!(!xml_is_well_formed("<a><b></a>"));
        assert!(!xml_is_well_formed("<a attr=\"x></a>"));
    }

    #[test]
    fn csv_has_comments_then_rows() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("t.csv");
        write_series_csv(&p, &[("config", "abc")], "time_s,erle_db", &[(0.0, 1.0), (0.5, 2.0)])
            .unwrap();
        let text = std::fs::read_to_string(&p).unwrap();
        let lines: Vec<&str> = text.lines().collect();
        assert_eq!(lines[0], "# config=abc");
        assert_eq!(lines[1], "time_s,erle_db");
        assert_eq!(lines.len(), 4);
    }
}
