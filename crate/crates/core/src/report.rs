// SPDX-License-Identifier: MIT OR Apache-2.0

//! Native SVG charts, CSV tables and attention-pattern export.
//!
//! Every number drawn into an SVG is also in a CSV written next to it; the
//! charts are views, never the only copy of a value.

use std::fmt::Write as _;

use ndarray::Array2;
use serde::{Deserialize, Serialize};

use crate::dataset::question::{build_cloze, QuestionInstance};
use crate::error::{LabError, Result};
use crate::model::{forward, Checkpoint, HeadId};

const CELL: f64 = 22.0;
const MARGIN: f64 = 90.0;

fn esc(s: &str) -> String {
    s.replace('&', "&amp;")
        .replace('<', "&lt;")
        .replace('>', "&gt;")
        .replace('"', "&quot;")
}

// white → dark red for non-negative grids; blue ← white → red when signed
fn color(v: f64, lo: f64, hi: f64) -> String {
    if lo < 0.0 && hi > 0.0 {
        let m = hi.max(-lo);
        let t = (v / m).clamp(-1.0, 1.0);
        let (r, g, b) = if t >= 0.0 {
            (255.0, 255.0 * (1.0 - t), 255.0 * (1.0 - t))
        } else {
            (255.0 * (1.0 + t), 255.0 * (1.0 + t), 255.0)
        };
        format!("rgb({},{},{})", r.round(), g.round(), b.round())
    } else {
        let t = if hi > lo { ((v - lo) / (hi - lo)).clamp(0.0, 1.0) } else { 0.0 };
        let c = (255.0 * (1.0 - t)).round();
        format!("rgb(255,{c},{c})")
    }
}

/// Heatmap of `m` with row/column labels; each cell carries its value as a tooltip.
pub fn heatmap_svg(title: &str, m: &Array2<f64>, row_labels: &[String], col_labels: &[String]) -> Result<String> {
    let (rows, cols) = m.dim();
    if row_labels.len() != rows || col_labels.len() != cols {
        return Err(LabError::Shape(format!(
            "{rows}x{cols} grid with {} row and {} column labels",
            row_labels.len(),
            col_labels.len()
        )));
    }
    if m.iter().any(|v| !v.is_finite()) {
        return Err(LabError::Input("heatmap values must be finite".into()));
    }
    let lo = m.iter().cloned().fold(f64::INFINITY, f64::min).min(0.0);
    let hi = m.iter().cloned().fold(f64::NEG_INFINITY, f64::max).max(0.0);
    let w = MARGIN + cols as f64 * CELL + 20.0;
    let h = MARGIN + rows as f64 * CELL + 20.0;
    let mut s = String::new();
    writeln!(
        s,
        r#"<svg xmlns="http://www.w3.org/2000/svg" width="{w}" height="{h}" font-family="sans-serif" font-size="10">"#
    )
    .unwrap();
    writeln!(s, r#"<text x="4" y="14" font-size="12">{}</text>"#, esc(title)).unwrap();
    for (j, label) in col_labels.iter().enumerate() {
        let x = MARGIN + (j as f64 + 0.5) * CELL;
        writeln!(
            s,
            r#"<text transform="translate({x},{}) rotate(-60)">{}</text>"#,
            MARGIN - 4.0,
            esc(label)
        )
        .unwrap();
    }
    for (i, label) in row_labels.iter().enumerate() {
        let y = MARGIN + (i as f64 + 0.7) * CELL;
        writeln!(s, r#"<text x="{}" y="{y}" text-anchor="end">{}</text>"#, MARGIN - 4.0, esc(label)).unwrap();
        for j in 0..cols {
            let v = m[[i, j]];
            writeln!(
                s,
                r#"<rect x="{}" y="{}" width="{CELL}" height="{CELL}" fill="{}"><title>{v:e}</title></rect>"#,
                MARGIN + j as f64 * CELL,
                MARGIN + i as f64 * CELL,
                color(v, lo, hi)
            )
            .unwrap();
        }
    }
    s.push_str("</svg>\n");
    Ok(s)
}

/// A named polyline.
#[derive(Debug, Clone, PartialEq)]
pub struct Series {
    pub name: String,
    pub points: Vec<(f64, f64)>,
}

const PALETTE: [&str; 6] = ["#1f77b4", "#d62728", "#2ca02c", "#9467bd", "#ff7f0e", "#8c564b"];
const PLOT: f64 = 320.0;
const PAD: f64 = 50.0;

fn frame(s: &mut String, title: &str, x_label: &str, y_label: &str, extent: [f64; 4]) {
    let [x0, x1, y0, y1] = extent;
    writeln!(
        s,
        r#"<svg xmlns="http://www.w3.org/2000/svg" width="{}" height="{}" font-family="sans-serif" font-size="10">"#,
        PLOT + 2.0 * PAD + 120.0,
        PLOT + 2.0 * PAD
    )
    .unwrap();
    writeln!(s, r#"<text x="{PAD}" y="20" font-size="12">{}</text>"#, esc(title)).unwrap();
    writeln!(
        s,
        r#"<rect x="{PAD}" y="{PAD}" width="{PLOT}" height="{PLOT}" fill="none" stroke="black"/>"#
    )
    .unwrap();
    writeln!(
        s,
        r#"<text x="{}" y="{}" text-anchor="middle">{}</text>"#,
        PAD + PLOT / 2.0,
        PAD + PLOT + 32.0,
        esc(x_label)
    )
    .unwrap();
    writeln!(
        s,
        r#"<text transform="translate(14,{}) rotate(-90)" text-anchor="middle">{}</text>"#,
        PAD + PLOT / 2.0,
        esc(y_label)
    )
    .unwrap();
    for (v, x) in [(x0, PAD), (x1, PAD + PLOT)] {
        writeln!(s, r#"<text x="{x}" y="{}" text-anchor="middle">{v}</text>"#, PAD + PLOT + 14.0).unwrap();
    }
    for (v, y) in [(y0, PAD + PLOT), (y1, PAD)] {
        writeln!(s, r#"<text x="{}" y="{y}" text-anchor="end">{v:.3}</text>"#, PAD - 4.0).unwrap();
    }
}

fn project(p: (f64, f64), [x0, x1, y0, y1]: [f64; 4]) -> (f64, f64) {
    let sx = if x1 > x0 { (p.0 - x0) / (x1 - x0) } else { 0.5 };
    let sy = if y1 > y0 { (p.1 - y0) / (y1 - y0) } else { 0.5 };
    (PAD + sx * PLOT, PAD + PLOT - sy * PLOT)
}

fn polyline(s: &mut String, pts: &[(f64, f64)], extent: [f64; 4], stroke: &str) {
    let path: Vec<String> = pts
        .iter()
        .map(|&p| {
            let (x, y) = project(p, extent);
            format!("{x:.2},{y:.2}")
        })
        .collect();
    writeln!(
        s,
        r#"<polyline points="{}" fill="none" stroke="{stroke}" stroke-width="1.5"/>"#,
        path.join(" ")
    )
    .unwrap();
}

/// Line chart over all series, axes fitted to the data (y from 0).
pub fn line_chart_svg(title: &str, x_label: &str, y_label: &str, series: &[Series]) -> Result<String> {
    let all: Vec<(f64, f64)> = series.iter().flat_map(|s| s.points.iter().copied()).collect();
    if all.is_empty() {
        return Err(LabError::Input("line chart without points".into()));
    }
    if all.iter().any(|p| !p.0.is_finite() || !p.1.is_finite()) {
        return Err(LabError::Input("line chart values must be finite".into()));
    }
    let x0 = all.iter().map(|p| p.0).fold(f64::INFINITY, f64::min);
    let x1 = all.iter().map(|p| p.0).fold(f64::NEG_INFINITY, f64::max);
    let y0 = all.iter().map(|p| p.1).fold(0.0, f64::min);
    let y1 = all.iter().map(|p| p.1).fold(f64::NEG_INFINITY, f64::max);
    let extent = [x0, x1, y0, y1];
    let mut s = String::new();
    frame(&mut s, title, x_label, y_label, extent);
    for (k, ser) in series.iter().enumerate() {
        let c = PALETTE[k % PALETTE.len()];
        polyline(&mut s, &ser.points, extent, c);
        for &p in &ser.points {
            let (x, y) = project(p, extent);
            writeln!(s, r#"<circle cx="{x:.2}" cy="{y:.2}" r="2.5" fill="{c}"><title>{:e}</title></circle>"#, p.1).unwrap();
        }
        let ly = PAD + 14.0 * k as f64;
        writeln!(
            s,
            r#"<text x="{}" y="{ly}" fill="{c}">{}</text>"#,
            PAD + PLOT + 10.0,
            esc(&ser.name)
        )
        .unwrap();
    }
    s.push_str("</svg>\n");
    Ok(s)
}

/// `(name, points, auc_text)` of one ROC curve.
pub type RocCurve = (String, Vec<(f64, f64)>, String);

/// ROC step plot; `auc_text` is printed verbatim so it can mirror the CSV cell.
pub fn roc_svg(title: &str, curves: &[RocCurve]) -> Result<String> {
    if curves.is_empty() {
        return Err(LabError::Input("no ROC curves".into()));
    }
    let extent = [0.0, 1.0, 0.0, 1.0];
    let mut s = String::new();
    frame(&mut s, title, "false positive rate", "true positive rate", extent);
    polyline(&mut s, &[(0.0, 0.0), (1.0, 1.0)], extent, "#bbbbbb");
    for (k, (name, pts, auc_text)) in curves.iter().enumerate() {
        let c = PALETTE[k % PALETTE.len()];
        // horizontal-then-vertical steps between consecutive points
        let mut steps = Vec::with_capacity(pts.len() * 2);
        for w in pts.windows(2) {
            steps.push(w[0]);
            steps.push((w[1].0, w[0].1));
        }
        if let Some(&p) = pts.last() {
            steps.push(p);
        }
        polyline(&mut s, &steps, extent, c);
        writeln!(
            s,
            r#"<text x="{}" y="{}" fill="{c}">{} AUC={}</text>"#,
            PAD + PLOT + 10.0,
            PAD + 14.0 * k as f64,
            esc(name),
            esc(auc_text)
        )
        .unwrap();
    }
    s.push_str("</svg>\n");
    Ok(s)
}

/// Row-major CSV of a matrix with a header of column labels.
pub fn matrix_csv(m: &Array2<f64>, row_labels: &[String], col_labels: &[String]) -> String {
    let mut s = String::from("row");
    for c in col_labels {
        s.push(',');
        s.push_str(&csv_field(c));
    }
    s.push('\n');
    for (i, row) in m.rows().into_iter().enumerate() {
        s.push_str(&csv_field(row_labels.get(i).map(String::as_str).unwrap_or("")));
        for v in row {
            write!(s, ",{v:e}").unwrap();
        }
        s.push('\n');
    }
    s
}

pub fn csv_field(s: &str) -> String {
    if s.contains([',', '"', '\n']) {
        format!("\"{}\"", s.replace('"', "\"\""))
    } else {
        s.to_string()
    }
}

/// Mean over rows of the attention mass within `w` positions of the diagonal.
pub fn band_mass(pattern: &Array2<f64>, w: usize) -> f64 {
    let n = pattern.nrows();
    if n == 0 {
        return 0.0;
    }
    let total: f64 = (0..n)
        .map(|i| (i.saturating_sub(w)..=i).map(|j| pattern[[i, j]]).sum::<f64>())
        .sum();
    total / n as f64
}

/// One head's pattern on an instance's cloze prompt.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PatternExport {
    pub instance: String,
    pub head: HeadId,
    pub tokens: Vec<String>,
    pub pattern: Array2<f64>,
    pub band_width: usize,
    pub band_mass: f64,
}

impl PatternExport {
    pub fn csv(&self) -> String {
        matrix_csv(&self.pattern, &self.labels(), &self.labels())
    }

    pub fn svg(&self) -> Result<String> {
        let title = format!(
            "head {} on {} (band mass w={}: {:.4})",
            self.head, self.instance, self.band_width, self.band_mass
        );
        heatmap_svg(&title, &self.pattern, &self.labels(), &self.labels())
    }

    // positions keep duplicate tokens apart
    fn labels(&self) -> Vec<String> {
        self.tokens.iter().enumerate().map(|(i, t)| format!("{i}:{t}")).collect()
    }
}

pub fn export_attention_pattern(
    model: &Checkpoint,
    instance: &QuestionInstance,
    head: HeadId,
    band_width: usize,
) -> Result<PatternExport> {
    let c = &model.weights.config;
    if head.layer >= c.num_layers || head.head >= c.num_heads {
        return Err(LabError::Index(format!(
            "head {head} outside the {}x{} grid",
            c.num_layers, c.num_heads
        )));
    }
    let cloze = build_cloze(instance, &model.vocab, c.max_seq_len)?;
    let (_, cache) = forward(&cloze.ids, &model.weights)?;
    let pattern = cache.pattern(head).clone();
    let tokens = cloze
        .ids
        .iter()
        .map(|&t| {
            model
                .vocab
                .token(t)
                .map(str::to_string)
                .ok_or_else(|| LabError::Vocabulary(format!("token id {t} out of range")))
        })
        .collect::<Result<Vec<_>>>()?;
    Ok(PatternExport {
        instance: instance.id.clone(),
        head,
        tokens,
        band_mass: band_mass(&pattern, band_width),
        pattern,
        band_width,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use ndarray::array;

    fn labels(n: usize) -> Vec<String> {
        (0..n).map(|i| i.to_string()).collect()
    }

    #[test]
    fn heatmap_has_one_cell_per_entry() {
        let m = array![[0.0, 1.0], [-1.0, 0.5]];
        let svg = heatmap_svg("t", &m, &labels(2), &labels(2)).unwrap();
        assert_eq!(svg.matches("<rect").count(), 4);
        assert!(svg.contains("<title>5e-1</title>"));
        assert!(heatmap_svg("t", &m, &labels(1), &labels(2)).is_err());
    }

    #[test]
    fn band_mass_of_uniform_causal_rows() {
        let n = 5;
        let p = Array2::from_shape_fn((n, n), |(i, j)| if j <= i { 1.0 / (i + 1) as f64 } else { 0.0 });
        assert!((band_mass(&p, n) - 1.0).abs() < 1e-12);
        // w = 0 keeps only the diagonal: mean of 1/(i+1)
        let expected = (1..=n).map(|k| 1.0 / k as f64).sum::<f64>() / n as f64;
        assert!((band_mass(&p, 0) - expected).abs() < 1e-12);
    }

    #[test]
    fn roc_annotation_is_verbatim() {
        let svg = roc_svg("r", &[("U1".into(), vec![(0.0, 0.0), (0.5, 1.0), (1.0, 1.0)], "0.75".into())]).unwrap();
        assert!(svg.contains("U1 AUC=0.75"));
    }

    #[test]
    fn matrix_csv_quotes_labels() {
        let csv = matrix_csv(&array![[1.0]], &["a,b".into()], &["c".into()]);
        assert_eq!(csv, "row,c\n\"a,b\",1e0\n");
    }
}
