//! MAE / MSE / r² metrics, per-environment evaluation reports, the
//! side-by-side method comparison, and the advancement-decision report.

use std::collections::BTreeMap;

use chrono::NaiveDate;
use serde::Serialize;

use crate::ingest::{rm_day_decode, Schedule};
use crate::{CoreError, Result};

/// Mean absolute error in days.
pub fn mae(pred: &[f64], gt: &[f64]) -> f64 {
    assert_eq!(pred.len(), gt.len());
    assert!(!pred.is_empty());
    pred.iter()
        .zip(gt)
        .map(|(p, g)| (p - g).abs())
        .sum::<f64>()
        / pred.len() as f64
}

/// Mean squared error in days².
pub fn mse(pred: &[f64], gt: &[f64]) -> f64 {
    assert_eq!(pred.len(), gt.len());
    assert!(!pred.is_empty());
    pred.iter()
        .zip(gt)
        .map(|(p, g)| (p - g) * (p - g))
        .sum::<f64>()
        / pred.len() as f64
}

/// Coefficient of determination 1 − SS_res/SS_tot; may be negative. `None`
/// when the ground truth has zero variance (undefined).
pub fn r2(pred: &[f64], gt: &[f64]) -> Option<f64> {
    assert_eq!(pred.len(), gt.len());
    if gt.len() < 2 {
        return None;
    }
    let mean = gt.iter().sum::<f64>() / gt.len() as f64;
    let ss_tot: f64 = gt.iter().map(|g| (g - mean) * (g - mean)).sum();
    if ss_tot == 0.0 {
        return None;
    }
    let ss_res: f64 = pred
        .iter()
        .zip(gt)
        .map(|(p, g)| (p - g) * (p - g))
        .sum();
    Some(1.0 - ss_res / ss_tot)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "lowercase")]
pub enum MetricKind {
    R2,
    Mae,
    Mse,
}

impl MetricKind {
    pub const ALL: [MetricKind; 3] = [MetricKind::R2, MetricKind::Mae, MetricKind::Mse];

    pub fn label(self) -> &'static str {
        match self {
            MetricKind::R2 => "r2",
            MetricKind::Mae => "mae",
            MetricKind::Mse => "mse",
        }
    }

    /// Whether larger values are better for this metric.
    pub fn higher_is_better(self) -> bool {
        matches!(self, MetricKind::R2)
    }
}

/// Prediction for one plot, the common currency between methods.
#[derive(Debug, Clone)]
pub struct PlotPrediction {
    pub plot_id: String,
    pub environment_id: String,
    pub predicted: f64,
    pub rm_day_gt: Option<i32>,
}

#[derive(Debug, Clone, Serialize)]
pub struct MetricsRow {
    pub environment_id: String,
    pub schedule: String,
    pub method: String,
    pub partition: String,
    pub n: usize,
    pub r2: Option<f64>,
    pub mae: f64,
    pub mse: f64,
}

#[derive(Debug, Clone, Default, Serialize)]
pub struct MetricsReport {
    pub rows: Vec<MetricsRow>,
}

impl MetricsReport {
    pub fn extend(&mut self, other: MetricsReport) {
        self.rows.extend(other.rows);
    }
}

/// Per-environment metrics over a prediction set. Every plot must carry
/// ground truth.
pub fn evaluate(
    preds: &[PlotPrediction],
    schedule: Schedule,
    method: &str,
    partition: &str,
) -> Result<MetricsReport> {
    let mut by_env: BTreeMap<&str, Vec<&PlotPrediction>> = BTreeMap::new();
    for p in preds {
        if p.rm_day_gt.is_none() {
            return Err(CoreError::Data(format!(
                "plot ({}, {}) has no ground truth; cannot evaluate",
                p.plot_id, p.environment_id
            )));
        }
        by_env.entry(&p.environment_id).or_default().push(p);
    }
    let mut rows = Vec::new();
    for (env, group) in by_env {
        let pred: Vec<f64> = group.iter().map(|p| p.predicted).collect();
        let gt: Vec<f64> = group
            .iter()
            .map(|p| f64::from(p.rm_day_gt.unwrap()))
            .collect();
        rows.push(MetricsRow {
            environment_id: env.to_string(),
            schedule: schedule.label().to_string(),
            method: method.to_string(),
            partition: partition.to_string(),
            n: group.len(),
            r2: r2(&pred, &gt),
            mae: mae(&pred, &gt),
            mse: mse(&pred, &gt),
        });
    }
    Ok(MetricsReport { rows })
}

/// One comparison cell block for a schedule: CNN-LSTM train/test and LOESS.
#[derive(Debug, Clone, Serialize)]
pub struct ComparisonCell {
    pub schedule: String,
    pub cnn_train: Option<f64>,
    pub cnn_test: Option<f64>,
    pub loess: Option<f64>,
}

#[derive(Debug, Clone, Serialize)]
pub struct ComparisonRow {
    pub environment_id: String,
    pub metric: MetricKind,
    pub cells: Vec<ComparisonCell>,
}

#[derive(Debug, Clone, Serialize)]
pub struct ComparisonTable {
    pub schedules: Vec<String>,
    pub rows: Vec<ComparisonRow>,
}

fn metric_value(row: &MetricsRow, metric: MetricKind) -> Option<f64> {
    match metric {
        MetricKind::R2 => row.r2,
        MetricKind::Mae => Some(row.mae),
        MetricKind::Mse => Some(row.mse),
    }
}

/// Side-by-side comparison of the CNN-LSTM report (train and test
/// partitions) against the LOESS report (test partition), per environment,
/// schedule and metric. Row order is stable: environment ascending with
/// r²/MAE/MSE blocks, weekly cells before bi-weekly.
pub fn compare(cnn: &MetricsReport, loess: &MetricsReport) -> Result<ComparisonTable> {
    let envs = |r: &MetricsReport| -> Vec<String> {
        let mut v: Vec<String> = r.rows.iter().map(|x| x.environment_id.clone()).collect();
        v.sort();
        v.dedup();
        v
    };
    let cnn_envs = envs(cnn);
    let loess_envs = envs(loess);
    if cnn_envs != loess_envs {
        return Err(CoreError::Data(format!(
            "comparison partitions differ: cnn environments {cnn_envs:?} vs loess {loess_envs:?}"
        )));
    }
    let schedule_order = ["weekly", "biweekly"];
    let mut schedules: Vec<String> = Vec::new();
    for s in schedule_order {
        let in_cnn = cnn.rows.iter().any(|r| r.schedule == s);
        let in_loess = loess.rows.iter().any(|r| r.schedule == s);
        if in_cnn != in_loess {
            return Err(CoreError::Data(format!(
                "schedule `{s}` present in only one of the reports"
            )));
        }
        if in_cnn {
            schedules.push(s.to_string());
        }
    }
    if schedules.is_empty() {
        return Err(CoreError::Data("no common schedule to compare".into()));
    }

    let lookup = |r: &MetricsReport, env: &str, sched: &str, partition: &str, m: MetricKind| {
        r.rows
            .iter()
            .find(|x| {
                x.environment_id == env && x.schedule == sched && x.partition == partition
            })
            .and_then(|x| metric_value(x, m))
    };

    let mut rows = Vec::new();
    for env in &cnn_envs {
        for metric in MetricKind::ALL {
            let cells = schedules
                .iter()
                .map(|s| ComparisonCell {
                    schedule: s.clone(),
                    cnn_train: lookup(cnn, env, s, "train", metric),
                    cnn_test: lookup(cnn, env, s, "test", metric),
                    loess: lookup(loess, env, s, "test", metric),
                })
                .collect();
            rows.push(ComparisonRow {
                environment_id: env.clone(),
                metric,
                cells,
            });
        }
    }
    Ok(ComparisonTable { schedules, rows })
}

/// Advancement-decision confidence window in days.
pub const DEFAULT_CONFIDENCE_WINDOW: f64 = 2.0;
/// A schedule counts as sufficient if its within-window fraction is no more
/// than this many percentage points below the weekly one.
pub const DEFAULT_RECOMMENDATION_TOLERANCE: f64 = 0.05;

#[derive(Debug, Clone, Serialize)]
pub struct DecisionRow {
    pub plot_id: String,
    pub environment_id: String,
    pub schedule: String,
    pub predicted_rm_day: f64,
    /// Calendar date of the rounded prediction in the report's season year.
    pub predicted_date: Option<NaiveDate>,
    pub rm_day_gt: Option<i32>,
    /// |prediction − truth| within the window; absent without ground truth.
    pub confident: Option<bool>,
}

#[derive(Debug, Clone, Serialize)]
pub struct DecisionSummary {
    pub environment_id: String,
    pub schedule: String,
    pub n_with_gt: usize,
    pub frac_within_window: Option<f64>,
}

#[derive(Debug, Clone, Serialize)]
pub struct DecisionReport {
    pub window_days: f64,
    pub season_year: i32,
    pub rows: Vec<DecisionRow>,
    pub summaries: Vec<DecisionSummary>,
}

/// Per-plot advancement-decision confidence against a ±window rule, with
/// per-environment within-window fractions.
pub fn decision_report(
    preds: &[PlotPrediction],
    schedule: Schedule,
    window_days: f64,
    season_year: i32,
) -> DecisionReport {
    let mut rows = Vec::with_capacity(preds.len());
    for p in preds {
        let rounded = p.predicted.round() as i32;
        let predicted_date = rm_day_decode(rounded, season_year).ok();
        let confident = p
            .rm_day_gt
            .map(|gt| (p.predicted - f64::from(gt)).abs() <= window_days + 1e-9);
        rows.push(DecisionRow {
            plot_id: p.plot_id.clone(),
            environment_id: p.environment_id.clone(),
            schedule: schedule.label().to_string(),
            predicted_rm_day: p.predicted,
            predicted_date,
            rm_day_gt: p.rm_day_gt,
            confident,
        });
    }
    let mut by_env: BTreeMap<String, (usize, usize)> = BTreeMap::new();
    for row in &rows {
        let e = by_env.entry(row.environment_id.clone()).or_default();
        if let Some(c) = row.confident {
            e.0 += 1;
            if c {
                e.1 += 1;
            }
        }
    }
    let summaries = by_env
        .into_iter()
        .map(|(environment_id, (n, within))| DecisionSummary {
            environment_id,
            schedule: schedule.label().to_string(),
            n_with_gt: n,
            frac_within_window: (n > 0).then(|| within as f64 / n as f64),
        })
        .collect();
    DecisionReport {
        window_days,
        season_year,
        rows,
        summaries,
    }
}

#[derive(Debug, Clone, Serialize)]
pub struct ScheduleRecommendation {
    pub environment_id: String,
    pub weekly_frac: f64,
    pub biweekly_frac: f64,
    /// Bi-weekly flights suffice when their within-window fraction is at
    /// most `tolerance` below the weekly fraction.
    pub biweekly_sufficient: bool,
}

/// Flight-schedule recommendation per environment from the two decision
/// summaries.
pub fn schedule_recommendation(
    weekly: &DecisionReport,
    biweekly: &DecisionReport,
    tolerance: f64,
) -> Vec<ScheduleRecommendation> {
    let mut out = Vec::new();
    for w in &weekly.summaries {
        let Some(b) = biweekly
            .summaries
            .iter()
            .find(|b| b.environment_id == w.environment_id)
        else {
            continue;
        };
        let (Some(wf), Some(bf)) = (w.frac_within_window, b.frac_within_window) else {
            continue;
        };
        out.push(ScheduleRecommendation {
            environment_id: w.environment_id.clone(),
            weekly_frac: wf,
            biweekly_frac: bf,
            biweekly_sufficient: bf >= wf - tolerance - 1e-12,
        });
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_abs_diff_eq;

    #[test]
    fn perfect_predictions() {
        let gt = [20.0, 25.0, 30.0];
        assert_eq!(mae(&gt, &gt), 0.0);
        assert_eq!(mse(&gt, &gt), 0.0);
        assert_eq!(r2(&gt, &gt), Some(1.0));
    }

    #[test]
    fn mean_predictor_has_zero_r2() {
        let gt = [10.0, 20.0, 30.0];
        let pred = [20.0, 20.0, 20.0];
        assert_abs_diff_eq!(r2(&pred, &gt).unwrap(), 0.0, epsilon = 1e-12);
    }

    #[test]
    fn r2_can_be_negative() {
        let gt = [10.0, 20.0, 30.0];
        let pred = [30.0, 20.0, 10.0];
        assert!(r2(&pred, &gt).unwrap() < 0.0);
    }

    #[test]
    fn r2_undefined_on_constant_gt() {
        assert_eq!(r2(&[1.0, 2.0], &[5.0, 5.0]), None);
    }

    #[test]
    fn mae_bounded_by_rmse() {
        let gt = [10.0, 22.0, 31.0, 18.0, 25.0];
        let pred = [12.0, 19.0, 35.0, 18.5, 21.0];
        assert!(mae(&pred, &gt) <= mse(&pred, &gt).sqrt() + 1e-12);
    }

    fn pred(plot: &str, env: &str, p: f64, gt: i32) -> PlotPrediction {
        PlotPrediction {
            plot_id: plot.into(),
            environment_id: env.into(),
            predicted: p,
            rm_day_gt: Some(gt),
        }
    }

    #[test]
    fn evaluate_groups_by_environment() {
        let preds = vec![
            pred("a", "e1", 20.0, 21),
            pred("b", "e1", 25.0, 24),
            pred("c", "e2", 30.0, 30),
            pred("d", "e2", 18.0, 20),
        ];
        let report = evaluate(&preds, Schedule::Weekly, "cnn", "test").unwrap();
        assert_eq!(report.rows.len(), 2);
        assert_eq!(report.rows[0].environment_id, "e1");
        assert_eq!(report.rows[0].n, 2);
        assert_abs_diff_eq!(report.rows[0].mae, 1.0, epsilon = 1e-12);
    }

    #[test]
    fn compare_has_table_shape() {
        let preds_e = |env: &str| {
            vec![
                pred("a", env, 20.0, 21),
                pred("b", env, 25.0, 24),
                pred("c", env, 28.0, 27),
            ]
        };
        let mut cnn = MetricsReport::default();
        for sched in [Schedule::Weekly, Schedule::Biweekly] {
            for part in ["train", "test"] {
                for env in ["e1", "e2"] {
                    cnn.extend(evaluate(&preds_e(env), sched, "cnn", part).unwrap());
                }
            }
        }
        let mut loess = MetricsReport::default();
        for sched in [Schedule::Weekly, Schedule::Biweekly] {
            for env in ["e1", "e2"] {
                loess.extend(evaluate(&preds_e(env), sched, "loess", "test").unwrap());
            }
        }
        let table = compare(&cnn, &loess).unwrap();
        assert_eq!(table.schedules, vec!["weekly", "biweekly"]);
        // 2 environments x 3 metrics
        assert_eq!(table.rows.len(), 6);
        for row in &table.rows {
            assert_eq!(row.cells.len(), 2);
            for cell in &row.cells {
                assert!(cell.cnn_train.is_some());
                assert!(cell.cnn_test.is_some());
                assert!(cell.loess.is_some());
            }
        }
        // identical inputs for both methods: identical cells
        for row in &table.rows {
            for cell in &row.cells {
                assert_eq!(cell.cnn_test, cell.loess);
            }
        }
    }

    #[test]
    fn compare_rejects_partition_mismatch() {
        let cnn = evaluate(
            &[pred("a", "e1", 20.0, 21), pred("b", "e1", 23.0, 24)],
            Schedule::Weekly,
            "cnn",
            "test",
        )
        .unwrap();
        let loess = evaluate(
            &[pred("a", "e2", 20.0, 21), pred("b", "e2", 23.0, 24)],
            Schedule::Weekly,
            "loess",
            "test",
        )
        .unwrap();
        assert!(compare(&cnn, &loess).is_err());
    }

    #[test]
    fn decision_confidence_window() {
        let preds = vec![pred("a", "e1", 20.0, 21), pred("b", "e1", 20.0, 23)];
        let report = decision_report(&preds, Schedule::Weekly, 2.0, 2019);
        assert_eq!(report.rows[0].confident, Some(true));
        assert_eq!(report.rows[1].confident, Some(false));
        assert_eq!(report.summaries[0].frac_within_window, Some(0.5));
    }

    #[test]
    fn decision_decodes_calendar_date() {
        let preds = vec![pred("a", "e1", 37.2, 37)];
        let report = decision_report(&preds, Schedule::Weekly, 2.0, 2019);
        assert_eq!(
            report.rows[0].predicted_date,
            NaiveDate::from_ymd_opt(2019, 10, 7)
        );
    }

    #[test]
    fn recommendation_tolerates_small_drop() {
        let wk = decision_report(
            &[pred("a", "e1", 20.0, 20), pred("b", "e1", 24.0, 24)],
            Schedule::Weekly,
            2.0,
            2019,
        );
        let bi = decision_report(
            &[pred("a", "e1", 20.0, 20), pred("b", "e1", 30.0, 24)],
            Schedule::Biweekly,
            2.0,
            2019,
        );
        let rec = schedule_recommendation(&wk, &bi, 0.05);
        assert_eq!(rec.len(), 1);
        assert!(!rec[0].biweekly_sufficient); // 0.5 < 1.0 - 0.05
        let rec2 = schedule_recommendation(&wk, &wk, 0.05);
        assert!(rec2[0].biweekly_sufficient);
    }
}
