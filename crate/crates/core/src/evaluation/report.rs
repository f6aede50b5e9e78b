//! Text, JSON and heatmap renderings of evaluation results.

use std::collections::BTreeMap;
use std::fmt::Write as _;

use serde::{Deserialize, Serialize};

use crate::raster::{text_width, Canvas, RasterImage};

use super::intention::IntentionEvalResult;
use super::trajectory::{MetricBlock, TrajectoryMetrics};

/// Everything `evaluate` writes to `metrics.json`. Intention results are
/// keyed by the subset they cover (for example `llm`, `propagated`, `all`).
#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
pub struct EvaluationReport {
    pub intention: BTreeMap<String, IntentionEvalResult>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub trajectory: Option<TrajectoryMetrics>,
    /// Same predictor with the context ignored, for comparison.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub trajectory_without_context: Option<TrajectoryMetrics>,
    /// Share of propagated records whose source neighbor has the same
    /// ground-truth intention.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub propagation_agreement: Option<f64>,
}

pub fn report_json(r: &EvaluationReport) -> String {
    let mut s = serde_json::to_string_pretty(r).expect("report serializes");
    s.push('\n');
    s
}

fn metric_row(out: &mut String, name: &str, b: &MetricBlock) {
    let _ = writeln!(
        out,
        "{:<12} {:>6} {:>9.4} {:>9.4} {:>9.4} {:>9.4}",
        name, b.n, b.min_ade, b.min_fde, b.miss_rate, b.map_approx
    );
}

pub fn report_text(r: &EvaluationReport) -> String {
    let mut out = String::new();
    let _ = writeln!(out, "Intention accuracy");
    let _ = writeln!(out, "{:<12} {:>6} {:>9} {:>9} {:>9}", "subset", "n", "first", "any", "merged");
    for (name, e) in &r.intention {
        let _ = writeln!(out, "{:<12} {:>6} {:>9.4} {:>9.4} {:>9.4}", name, e.n, e.acc_first, e.acc_any, e.acc_merged);
    }
    for (name, e) in &r.intention {
        let _ = writeln!(out, "\nConfusion ({name}; rows ground truth, columns first prediction)");
        let _ = write!(out, "{:<14}", "");
        for c in &e.classes {
            let _ = write!(out, " {:>14}", c.word());
        }
        out.push('\n');
        for (c, row) in e.classes.iter().zip(&e.confusion) {
            let _ = write!(out, "{:<14}", c.word());
            for v in row {
                let _ = write!(out, " {v:>14}");
            }
            out.push('\n');
        }
    }
    for (title, t) in [("", &r.trajectory), (", context ignored", &r.trajectory_without_context)] {
        let Some(t) = t else { continue };
        let _ = writeln!(out, "\nTrajectory metrics{title} (mAP is an approximation)");
        let _ = writeln!(out, "{:<12} {:>6} {:>9} {:>9} {:>9} {:>9}", "subset", "n", "minADE", "minFDE", "MR", "mAP");
        metric_row(&mut out, "all", &t.overall);
        for (ty, b) in &t.per_type {
            metric_row(&mut out, ty.name(), b);
        }
    }
    if let Some(a) = r.propagation_agreement {
        let _ = writeln!(out, "\nPropagation agreement: {a:.4}");
    }
    out
}

const CELL: u32 = 48;
const MARGIN: u32 = 8;

/// Heatmap of a confusion matrix, row-normalized, with counts in each cell.
pub fn confusion_heatmap(e: &IntentionEvalResult) -> RasterImage {
    let n = e.confusion.len() as u32;
    let side = 2 * MARGIN + n * CELL;
    let mut c = Canvas::new(side, side, [255, 255, 255, 255]);
    for (i, row) in e.confusion.iter().enumerate() {
        let total: u64 = row.iter().sum();
        for (j, &v) in row.iter().enumerate() {
            let share = if total == 0 { 0.0 } else { v as f64 / total as f64 };
            let shade = |full: f64| (255.0 - share * (255.0 - full)).round() as u8;
            let color = [shade(8.0), shade(48.0), shade(107.0), 255];
            let (x0, y0) = ((MARGIN + j as u32 * CELL) as i64, (MARGIN + i as u32 * CELL) as i64);
            for y in 0..CELL as i64 - 1 {
                for x in 0..CELL as i64 - 1 {
                    c.put(x0 + x, y0 + y, color);
                }
            }
            let text = v.to_string();
            let ink = if share > 0.5 { [255, 255, 255, 255] } else { [0, 0, 0, 255] };
            let scale = 2;
            let w = text_width(&text, scale);
            c.draw_text(&text, x0 + (CELL as i64 - w) / 2, y0 + (CELL as i64 - 5 * scale) / 2, scale, ink);
        }
    }
    c.image
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::evaluation::intention::intention_accuracy;
    use crate::scenario::IntentionLabel::*;

    #[test]
    fn empty_report_has_headers_only() {
        let text = report_text(&EvaluationReport::default());
        assert_eq!(text, "Intention accuracy\nsubset            n     first       any    merged\n");
    }

    #[test]
    fn json_round_trip() {
        let mut r = EvaluationReport::default();
        r.intention.insert("llm".into(), intention_accuracy(&[vec![Straight], vec![LeftTurn]], &[Straight, RightTurn]).unwrap());
        r.propagation_agreement = Some(0.25);
        let back: EvaluationReport = serde_json::from_str(&report_json(&r)).unwrap();
        assert_eq!(back, r);
    }

    #[test]
    fn heatmap_size_and_shading() {
        let e = intention_accuracy(&vec![vec![Straight]; 3], &[Straight; 3]).unwrap();
        let img = confusion_heatmap(&e);
        assert_eq!(img.width, 2 * MARGIN + 6 * CELL);
        assert_eq!(img.get(MARGIN + 1, MARGIN + 1), [8, 48, 107, 255]);
        assert_eq!(img.get(MARGIN + CELL + 1, MARGIN + 1), [255, 255, 255, 255]);
    }
}
