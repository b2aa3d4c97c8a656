//! CSV and SVG emission for metrics, comparisons, loss traces, threshold
//! grids and decision reports.

use std::path::Path;

use crate::baseline::ThresholdGrid;
use crate::metrics::{
    ComparisonTable, DecisionReport, MetricsReport, ScheduleRecommendation,
};
use crate::train::LossTrace;
use crate::Result;

fn fmt(v: f64) -> String {
    format!("{v:.6}")
}

fn fmt_opt(v: Option<f64>) -> String {
    v.map(fmt).unwrap_or_else(|| "NA".into())
}

/// `environment_id,schedule,method,partition,n,r2,mae,mse`
pub fn write_metrics_csv(path: &Path, report: &MetricsReport) -> Result<()> {
    let mut w = csv::Writer::from_path(path)?;
    w.write_record([
        "environment_id",
        "schedule",
        "method",
        "partition",
        "n",
        "r2",
        "mae",
        "mse",
    ])?;
    for r in &report.rows {
        w.write_record([
            r.environment_id.as_str(),
            r.schedule.as_str(),
            r.method.as_str(),
            r.partition.as_str(),
            &r.n.to_string(),
            &fmt_opt(r.r2),
            &fmt(r.mae),
            &fmt(r.mse),
        ])?;
    }
    w.flush()?;
    Ok(())
}

/// Side-by-side method comparison in the summary-table layout: one row per
/// environment and metric, with CNN-LSTM train/test and LOESS columns per
/// schedule.
pub fn write_comparison_csv(path: &Path, table: &ComparisonTable) -> Result<()> {
    let mut w = csv::Writer::from_path(path)?;
    let mut header = vec!["environment_id".to_string(), "metric".to_string()];
    for s in &table.schedules {
        header.push(format!("cnn_train_{s}"));
        header.push(format!("cnn_test_{s}"));
        header.push(format!("loess_{s}"));
    }
    w.write_record(&header)?;
    for row in &table.rows {
        let mut rec = vec![row.environment_id.clone(), row.metric.label().to_string()];
        for cell in &row.cells {
            rec.push(fmt_opt(cell.cnn_train));
            rec.push(fmt_opt(cell.cnn_test));
            rec.push(fmt_opt(cell.loess));
        }
        w.write_record(&rec)?;
    }
    w.flush()?;
    Ok(())
}

/// `epoch,train_loss,val_loss`
pub fn write_loss_trace_csv(path: &Path, trace: &LossTrace) -> Result<()> {
    let mut w = csv::Writer::from_path(path)?;
    w.write_record(["epoch", "train_loss", "val_loss"])?;
    for e in &trace.epochs {
        w.write_record([
            e.epoch.to_string(),
            fmt(e.train_loss),
            fmt_opt(e.val_loss),
        ])?;
    }
    w.flush()?;
    Ok(())
}

/// Appendix-style table: one row per environment and metric across all
/// thresholds, with the best cell's threshold in the last column.
pub fn write_grid_csv(path: &Path, grid: &ThresholdGrid) -> Result<()> {
    let mut w = csv::Writer::from_path(path)?;
    let mut header = vec!["environment_id".to_string(), "metric".to_string()];
    for t in &grid.thresholds {
        header.push(format!("t{t:.2}"));
    }
    header.push("best_threshold".into());
    w.write_record(&header)?;
    for row in &grid.rows {
        let mut rec = vec![row.environment_id.clone(), row.metric.label().to_string()];
        for v in &row.values {
            rec.push(fmt_opt(*v));
        }
        rec.push(
            row.best_index
                .map(|i| format!("{:.2}", grid.thresholds[i]))
                .unwrap_or_else(|| "NA".into()),
        );
        w.write_record(&rec)?;
    }
    w.flush()?;
    Ok(())
}

/// Per-plot decision rows:
/// `plot_id,environment_id,schedule,predicted_rm_day,predicted_date,rm_day_gt,confident`
pub fn write_decision_csv(path: &Path, report: &DecisionReport) -> Result<()> {
    let mut w = csv::Writer::from_path(path)?;
    w.write_record([
        "plot_id",
        "environment_id",
        "schedule",
        "predicted_rm_day",
        "predicted_date",
        "rm_day_gt",
        "confident",
    ])?;
    for r in &report.rows {
        w.write_record([
            r.plot_id.as_str(),
            r.environment_id.as_str(),
            r.schedule.as_str(),
            &fmt(r.predicted_rm_day),
            &r.predicted_date
                .map(|d| d.to_string())
                .unwrap_or_else(|| "NA".into()),
            &r.rm_day_gt.map(|d| d.to_string()).unwrap_or_else(|| "NA".into()),
            &r.confident
                .map(|c| c.to_string())
                .unwrap_or_else(|| "NA".into()),
        ])?;
    }
    w.flush()?;
    Ok(())
}

/// Per-environment decision summary with the optional schedule
/// recommendation column.
pub fn write_decision_summary_csv(
    path: &Path,
    reports: &[&DecisionReport],
    recommendations: Option<&[ScheduleRecommendation]>,
) -> Result<()> {
    let mut w = csv::Writer::from_path(path)?;
    w.write_record([
        "environment_id",
        "schedule",
        "n_with_gt",
        "frac_within_window",
        "biweekly_sufficient",
    ])?;
    for report in reports {
        for s in &report.summaries {
            let rec = recommendations.and_then(|rs| {
                rs.iter()
                    .find(|r| r.environment_id == s.environment_id)
                    .map(|r| r.biweekly_sufficient.to_string())
            });
            w.write_record([
                s.environment_id.as_str(),
                s.schedule.as_str(),
                &s.n_with_gt.to_string(),
                &fmt_opt(s.frac_within_window),
                &rec.unwrap_or_else(|| "NA".into()),
            ])?;
        }
    }
    w.flush()?;
    Ok(())
}

const SVG_SIZE: f64 = 480.0;
const MARGIN_LEFT: f64 = 60.0;
const MARGIN_RIGHT: f64 = 20.0;
const MARGIN_TOP: f64 = 48.0;
const MARGIN_BOTTOM: f64 = 52.0;

fn xml_escape(s: &str) -> String {
    s.replace('&', "&amp;")
        .replace('<', "&lt;")
        .replace('>', "&gt;")
        .replace('"', "&quot;")
}

/// Scatter of predicted vs ground-truth maturity days with the x = y
/// reference line. Contains exactly one `<circle>` element per point.
pub fn scatter_svg(
    points: &[(f64, f64)],
    title: &str,
    annotation: &str,
    color: &str,
) -> String {
    let plot_w = SVG_SIZE - MARGIN_LEFT - MARGIN_RIGHT;
    let plot_h = SVG_SIZE - MARGIN_TOP - MARGIN_BOTTOM;
    let (mut lo, mut hi) = (f64::INFINITY, f64::NEG_INFINITY);
    for &(gt, pred) in points {
        lo = lo.min(gt).min(pred);
        hi = hi.max(gt).max(pred);
    }
    if !lo.is_finite() || !hi.is_finite() {
        lo = 0.0;
        hi = 1.0;
    }
    if hi - lo < 1.0 {
        hi = lo + 1.0;
    }
    let pad = (hi - lo) * 0.06;
    let (lo, hi) = (lo - pad, hi + pad);
    let sx = |v: f64| MARGIN_LEFT + (v - lo) / (hi - lo) * plot_w;
    let sy = |v: f64| MARGIN_TOP + plot_h - (v - lo) / (hi - lo) * plot_h;

    let mut s = String::new();
    s.push_str("<?xml version=\"1.0\" encoding=\"UTF-8\"?>\n");
    s.push_str(&format!(
        "<svg xmlns=\"http://www.w3.org/2000/svg\" width=\"{SVG_SIZE}\" height=\"{SVG_SIZE}\" viewBox=\"0 0 {SVG_SIZE} {SVG_SIZE}\">\n"
    ));
    s.push_str(&format!(
        "  <rect x=\"0\" y=\"0\" width=\"{SVG_SIZE}\" height=\"{SVG_SIZE}\" fill=\"white\"/>\n"
    ));
    s.push_str(&format!(
        "  <text x=\"{:.1}\" y=\"20\" font-family=\"sans-serif\" font-size=\"14\" text-anchor=\"middle\">{}</text>\n",
        SVG_SIZE / 2.0,
        xml_escape(title)
    ));
    s.push_str(&format!(
        "  <text x=\"{MARGIN_LEFT}\" y=\"36\" font-family=\"sans-serif\" font-size=\"11\" fill=\"#444\">{}</text>\n",
        xml_escape(annotation)
    ));
    // frame
    s.push_str(&format!(
        "  <rect x=\"{MARGIN_LEFT}\" y=\"{MARGIN_TOP}\" width=\"{plot_w:.1}\" height=\"{plot_h:.1}\" fill=\"none\" stroke=\"#999\"/>\n"
    ));
    // axis ticks
    for k in 0..=4 {
        let v = lo + (hi - lo) * f64::from(k) / 4.0;
        let x = sx(v);
        let y = sy(v);
        s.push_str(&format!(
            "  <line x1=\"{x:.1}\" y1=\"{:.1}\" x2=\"{x:.1}\" y2=\"{:.1}\" stroke=\"#999\"/>\n",
            MARGIN_TOP + plot_h,
            MARGIN_TOP + plot_h + 5.0
        ));
        s.push_str(&format!(
            "  <text x=\"{x:.1}\" y=\"{:.1}\" font-family=\"sans-serif\" font-size=\"10\" text-anchor=\"middle\">{v:.0}</text>\n",
            MARGIN_TOP + plot_h + 18.0
        ));
        s.push_str(&format!(
            "  <line x1=\"{:.1}\" y1=\"{y:.1}\" x2=\"{MARGIN_LEFT}\" y2=\"{y:.1}\" stroke=\"#999\"/>\n",
            MARGIN_LEFT - 5.0
        ));
        s.push_str(&format!(
            "  <text x=\"{:.1}\" y=\"{:.1}\" font-family=\"sans-serif\" font-size=\"10\" text-anchor=\"end\">{v:.0}</text>\n",
            MARGIN_LEFT - 8.0,
            y + 3.0
        ));
    }
    // x = y reference
    s.push_str(&format!(
        "  <line x1=\"{:.1}\" y1=\"{:.1}\" x2=\"{:.1}\" y2=\"{:.1}\" stroke=\"black\" stroke-width=\"1.2\"/>\n",
        sx(lo.max(lo)),
        sy(lo.max(lo)),
        sx(hi),
        sy(hi)
    ));
    for &(gt, pred) in points {
        s.push_str(&format!(
            "  <circle cx=\"{:.2}\" cy=\"{:.2}\" r=\"3\" fill=\"{color}\" fill-opacity=\"0.6\"/>\n",
            sx(gt),
            sy(pred)
        ));
    }
    // axis labels
    s.push_str(&format!(
        "  <text x=\"{:.1}\" y=\"{:.1}\" font-family=\"sans-serif\" font-size=\"12\" text-anchor=\"middle\">ground truth (days after Aug 31)</text>\n",
        MARGIN_LEFT + plot_w / 2.0,
        SVG_SIZE - 12.0
    ));
    s.push_str(&format!(
        "  <text x=\"16\" y=\"{:.1}\" font-family=\"sans-serif\" font-size=\"12\" text-anchor=\"middle\" transform=\"rotate(-90 16 {:.1})\">predicted (days after Aug 31)</text>\n",
        MARGIN_TOP + plot_h / 2.0,
        MARGIN_TOP + plot_h / 2.0
    ));
    s.push_str(&format!(
        "  <text x=\"{:.1}\" y=\"{:.1}\" font-family=\"sans-serif\" font-size=\"11\" text-anchor=\"end\">n = {}</text>\n",
        MARGIN_LEFT + plot_w - 6.0,
        MARGIN_TOP + plot_h - 8.0,
        points.len()
    ));
    s.push_str("</svg>\n");
    s
}

pub fn write_scatter_svg(
    path: &Path,
    points: &[(f64, f64)],
    title: &str,
    annotation: &str,
    color: &str,
) -> Result<()> {
    std::fs::write(path, scatter_svg(points, title, annotation, color))?;
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::ingest::Schedule;
    use crate::metrics::{decision_report, evaluate, PlotPrediction};

    fn preds() -> Vec<PlotPrediction> {
        (0..5)
            .map(|i| PlotPrediction {
                plot_id: format!("p{i}"),
                environment_id: "e1".into(),
                predicted: 20.0 + f64::from(i),
                rm_day_gt: Some(20 + i),
            })
            .collect()
    }

    #[test]
    fn metrics_csv_has_expected_header_and_rows() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("m.csv");
        let report = evaluate(&preds(), Schedule::Weekly, "cnn", "test").unwrap();
        write_metrics_csv(&path, &report).unwrap();
        let text = std::fs::read_to_string(&path).unwrap();
        let mut lines = text.lines();
        assert_eq!(
            lines.next().unwrap(),
            "environment_id,schedule,method,partition,n,r2,mae,mse"
        );
        assert_eq!(lines.count(), 1);
    }

    #[test]
    fn decision_csv_round_trip_fields() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("d.csv");
        let report = decision_report(&preds(), Schedule::Weekly, 2.0, 2019);
        write_decision_csv(&path, &report).unwrap();
        let text = std::fs::read_to_string(&path).unwrap();
        assert!(text.contains("2019-09-20"));
        assert!(text.contains("true"));
    }

    #[test]
    fn scatter_svg_has_one_circle_per_point() {
        let pts: Vec<(f64, f64)> = (0..7).map(|i| (f64::from(i), f64::from(i) + 0.5)).collect();
        let svg = scatter_svg(&pts, "env e1 (weekly, test)", "r2=0.9 mae=0.5", "#7a4fd0");
        assert_eq!(svg.matches("<circle").count(), 7);
        assert!(svg.starts_with("<?xml"));
        assert!(svg.trim_end().ends_with("</svg>"));
    }

    #[test]
    fn scatter_svg_escapes_text() {
        let svg = scatter_svg(&[(1.0, 1.0)], "a<b>&\"q\"", "", "#000");
        assert!(svg.contains("a&lt;b&gt;&amp;&quot;q&quot;"));
        assert!(!svg.contains("a<b>"));
    }
}
