//! The benchmark predictor: per-image green leaf index, robust lowess
//! smoothing of GLI against flight day, threshold-crossing maturity
//! prediction, and the 9-point threshold grid search.

use rayon::prelude::*;

use crate::ingest::PlotSeries;
use crate::metrics::{mae, mse, r2, MetricKind};
use crate::raster::RgbRaster;
use crate::{CoreError, Result};

/// Threshold recommended for the greenness level at maturity.
pub const DEFAULT_GLI_THRESHOLD: f64 = 0.02;
/// Smoothing fraction of the lowess window.
pub const DEFAULT_LOESS_FRAC: f64 = 0.67;
/// Robustness reweighting rounds.
pub const DEFAULT_ROBUST_ITERS: usize = 3;

/// Green leaf index of an image: (2G − R − B) / (2G + R + B) over mean
/// channel values. An all-black image has an undefined ratio; it is reported
/// as 0 with the flag set.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct GliValue {
    pub value: f64,
    pub undefined_input: bool,
}

pub fn gli(image: &RgbRaster) -> GliValue {
    let [r, g, b] = image.channel_means();
    let denom = 2.0 * g + r + b;
    if denom == 0.0 {
        return GliValue {
            value: 0.0,
            undefined_input: true,
        };
    }
    GliValue {
        value: (2.0 * g - r - b) / denom,
        undefined_input: false,
    }
}

/// GLI of each snip in a series, against its flight day.
#[derive(Debug, Clone)]
pub struct GliSeries {
    pub plot_id: String,
    pub environment_id: String,
    pub points: Vec<(i32, f64)>,
}

pub fn gli_series(series: &PlotSeries) -> GliSeries {
    GliSeries {
        plot_id: series.plot_id.clone(),
        environment_id: series.environment_id.clone(),
        points: series
            .snips
            .iter()
            .map(|s| (s.flight_day, gli(&s.image).value))
            .collect(),
    }
}

fn tricube(u: f64) -> f64 {
    if u >= 1.0 {
        0.0
    } else {
        let t = 1.0 - u * u * u;
        t * t * t
    }
}

fn median(values: &mut [f64]) -> f64 {
    values.sort_by(|a, b| a.partial_cmp(b).unwrap());
    let n = values.len();
    if n % 2 == 1 {
        values[n / 2]
    } else {
        0.5 * (values[n / 2 - 1] + values[n / 2])
    }
}

/// Robust locally weighted linear regression (Cleveland-style lowess).
///
/// At each x the ceil(frac*n) nearest neighbors (at least 2) are fitted by
/// weighted linear regression under tricube distance weights, followed by
/// `robust_iters` rounds of bisquare residual reweighting. Returns the
/// fitted value at each input x, in input order; xs need not be sorted.
pub fn lowess(xs: &[f64], ys: &[f64], frac: f64, robust_iters: usize) -> Result<Vec<f64>> {
    if xs.len() != ys.len() {
        return Err(CoreError::Data(format!(
            "lowess input lengths differ: {} vs {}",
            xs.len(),
            ys.len()
        )));
    }
    let n = xs.len();
    let distinct = {
        let mut sorted: Vec<f64> = xs.to_vec();
        sorted.sort_by(|a, b| a.partial_cmp(b).unwrap());
        sorted.windows(2).any(|w| w[0] < w[1])
    };
    if n < 2 || !distinct {
        return Err(CoreError::Data(
            "lowess needs at least 2 distinct x values".into(),
        ));
    }
    if !(frac > 0.0 && frac <= 1.0) {
        return Err(CoreError::Data(format!("lowess frac {frac} outside (0, 1]")));
    }
    let k = ((frac * n as f64).ceil() as usize).clamp(2, n);

    let mut robustness = vec![1.0f64; n];
    let mut fitted = vec![0.0f64; n];
    for iter in 0..=robust_iters {
        for i in 0..n {
            fitted[i] = fit_at(xs, ys, &robustness, k, xs[i]);
        }
        if iter == robust_iters {
            break;
        }
        let mut abs_res: Vec<f64> = (0..n).map(|j| (ys[j] - fitted[j]).abs()).collect();
        let s = median(&mut abs_res);
        if 6.0 * s < 1e-12 {
            break; // residuals negligible; further reweighting is a no-op
        }
        for j in 0..n {
            let u = (ys[j] - fitted[j]) / (6.0 * s);
            robustness[j] = if u.abs() < 1.0 {
                let t = 1.0 - u * u;
                t * t
            } else {
                0.0
            };
        }
    }
    Ok(fitted)
}

/// Weighted local linear fit evaluated at `x0`, shared by the smoother and
/// the threshold-prediction path.
fn fit_at(xs: &[f64], ys: &[f64], robustness: &[f64], k: usize, x0: f64) -> f64 {
    let n = xs.len();
    let mut dists: Vec<f64> = xs.iter().map(|&x| (x - x0).abs()).collect();
    let h = {
        let mut sorted = dists.clone();
        sorted.sort_by(|a, b| a.partial_cmp(b).unwrap());
        sorted[k - 1]
    };
    let mut w_sum = 0.0;
    let mut wx = 0.0;
    let mut wy = 0.0;
    let mut weights = vec![0.0f64; n];
    for j in 0..n {
        let w = if h == 0.0 {
            // window collapsed onto duplicate x values
            if dists[j] == 0.0 {
                robustness[j]
            } else {
                0.0
            }
        } else {
            robustness[j] * tricube(dists[j] / h)
        };
        weights[j] = w;
        w_sum += w;
        wx += w * xs[j];
        wy += w * ys[j];
    }
    if w_sum == 0.0 {
        // every neighbor suppressed by robustness weights; fall back to the
        // unweighted mean of the window
        let mut acc = 0.0;
        let mut cnt = 0.0;
        for j in 0..n {
            if dists[j] <= h {
                acc += ys[j];
                cnt += 1.0;
            }
        }
        return acc / cnt;
    }
    let x_bar = wx / w_sum;
    let y_bar = wy / w_sum;
    let mut sxx = 0.0;
    let mut sxy = 0.0;
    for j in 0..n {
        let dx = xs[j] - x_bar;
        sxx += weights[j] * dx * dx;
        sxy += weights[j] * dx * (ys[j] - y_bar);
    }
    dists.clear();
    if sxx <= 1e-12 * (1.0 + x_bar * x_bar) {
        y_bar // degenerate window: weighted mean
    } else {
        y_bar + sxy / sxx * (x0 - x_bar)
    }
}

/// Smoothed GLI curve for one plot on a daily integer grid.
#[derive(Debug, Clone)]
pub struct LoessFit {
    pub plot_id: String,
    pub environment_id: String,
    pub frac: f64,
    pub robust_iters: usize,
    /// (day, smoothed gli) for every integer day between the first and last
    /// flight day.
    pub fitted: Vec<(i32, f64)>,
}

/// Piecewise-linear interpolation of values known at the (sorted, integer)
/// flight days onto every integer day in between.
pub fn interpolate_daily(days: &[i32], values: &[f64]) -> Vec<(i32, f64)> {
    assert_eq!(days.len(), values.len());
    assert!(days.len() >= 2, "need at least two flight days");
    let first = days[0];
    let last = *days.last().unwrap();
    let mut out = Vec::with_capacity((last - first + 1) as usize);
    let mut seg = 0usize;
    for day in first..=last {
        while day > days[seg + 1] {
            seg += 1;
        }
        let (d0, d1) = (days[seg], days[seg + 1]);
        let (v0, v1) = (values[seg], values[seg + 1]);
        let v = if day == d0 {
            v0
        } else if day == d1 {
            v1
        } else {
            v0 + (v1 - v0) * f64::from(day - d0) / f64::from(d1 - d0)
        };
        out.push((day, v));
    }
    out
}

/// Lowess-smooth a GLI series at its flight days, then interpolate onto the
/// daily grid.
pub fn fit_loess_daily(series: &GliSeries, frac: f64, robust_iters: usize) -> Result<LoessFit> {
    let days: Vec<i32> = series.points.iter().map(|p| p.0).collect();
    let xs: Vec<f64> = days.iter().map(|&d| f64::from(d)).collect();
    let ys: Vec<f64> = series.points.iter().map(|p| p.1).collect();
    let smoothed = lowess(&xs, &ys, frac, robust_iters)?;
    Ok(LoessFit {
        plot_id: series.plot_id.clone(),
        environment_id: series.environment_id.clone(),
        frac,
        robust_iters,
        fitted: interpolate_daily(&days, &smoothed),
    })
}

/// Threshold-crossing prediction from a smoothed daily curve.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LoessPrediction {
    /// Day whose smoothed GLI is closest to the threshold (earlier day wins
    /// ties).
    pub rm_day: i32,
    /// Set when the prediction sits at the grid boundary and the curve never
    /// crosses the threshold.
    pub censored: bool,
}

pub fn predict_from_fit(fit: &LoessFit, threshold: f64) -> LoessPrediction {
    let mut best_day = fit.fitted[0].0;
    let mut best_gap = f64::INFINITY;
    for &(day, v) in &fit.fitted {
        let gap = (v - threshold).abs();
        if gap < best_gap {
            best_gap = gap;
            best_day = day;
        }
    }
    let crossed = fit
        .fitted
        .windows(2)
        .any(|w| (w[0].1 - threshold) * (w[1].1 - threshold) <= 0.0);
    let at_boundary =
        best_day == fit.fitted[0].0 || best_day == fit.fitted.last().unwrap().0;
    LoessPrediction {
        rm_day: best_day,
        censored: !crossed && at_boundary,
    }
}

/// Full baseline prediction for one plot series.
pub fn predict_maturity_loess(
    series: &PlotSeries,
    threshold: f64,
    frac: f64,
    robust_iters: usize,
) -> Result<LoessPrediction> {
    if series.snips.len() < 2 {
        return Err(CoreError::Data(format!(
            "plot ({}, {}) needs at least 2 snips for the baseline",
            series.plot_id, series.environment_id
        )));
    }
    let fit = fit_loess_daily(&gli_series(series), frac, robust_iters)?;
    Ok(predict_from_fit(&fit, threshold))
}

/// The 9 default thresholds 0.01 ... 0.09.
pub fn default_thresholds() -> Vec<f64> {
    (1..=9).map(|i| f64::from(i) / 100.0).collect()
}

/// One row of the appendix-style table: an environment/metric pair across
/// all thresholds, with the best cell marked.
#[derive(Debug, Clone)]
pub struct ThresholdGridRow {
    pub environment_id: String,
    pub metric: MetricKind,
    pub values: Vec<Option<f64>>,
    pub best_index: Option<usize>,
}

#[derive(Debug, Clone)]
pub struct ThresholdGrid {
    pub thresholds: Vec<f64>,
    pub rows: Vec<ThresholdGridRow>,
}

impl ThresholdGrid {
    /// Best threshold for one environment/metric pair.
    pub fn best_threshold(&self, environment_id: &str, metric: MetricKind) -> Option<f64> {
        self.rows
            .iter()
            .find(|r| r.environment_id == environment_id && r.metric == metric)
            .and_then(|r| r.best_index)
            .map(|i| self.thresholds[i])
    }
}

fn best_index(values: &[Option<f64>], higher_is_better: bool) -> Option<usize> {
    let mut best: Option<(usize, f64)> = None;
    for (i, v) in values.iter().enumerate() {
        let Some(v) = *v else { continue };
        let better = match best {
            None => true,
            Some((_, bv)) => {
                if higher_is_better {
                    v > bv
                } else {
                    v < bv
                }
            }
        };
        if better {
            best = Some((i, v));
        }
    }
    best.map(|(i, _)| i)
}

/// Predicts every plot at each threshold and reports r²/MAE/MSE per
/// environment in the appendix layout. Plots are fitted once; thresholds
/// reuse the smoothed curve.
pub fn threshold_grid_search(
    dataset: &[PlotSeries],
    thresholds: &[f64],
    frac: f64,
    robust_iters: usize,
) -> Result<ThresholdGrid> {
    if thresholds.is_empty() || !thresholds.windows(2).all(|w| w[0] < w[1]) {
        return Err(CoreError::Data(
            "thresholds must be non-empty and strictly increasing".into(),
        ));
    }
    if dataset.iter().any(|s| s.rm_day.is_none()) {
        return Err(CoreError::Data(
            "threshold grid search requires ground truth for every plot".into(),
        ));
    }

    let fits: Vec<(String, i32, LoessFit)> = dataset
        .par_iter()
        .map(|s| {
            let fit = fit_loess_daily(&gli_series(s), frac, robust_iters)?;
            Ok((s.environment_id.clone(), s.rm_day.unwrap(), fit))
        })
        .collect::<Result<Vec<_>>>()?;

    let mut environments: Vec<String> = fits.iter().map(|f| f.0.clone()).collect();
    environments.sort();
    environments.dedup();

    let mut rows = Vec::new();
    for env in &environments {
        let env_fits: Vec<&(String, i32, LoessFit)> =
            fits.iter().filter(|f| &f.0 == env).collect();
        let gt: Vec<f64> = env_fits.iter().map(|f| f64::from(f.1)).collect();
        let mut per_metric: [Vec<Option<f64>>; 3] = Default::default();
        for &t in thresholds {
            let pred: Vec<f64> = env_fits
                .iter()
                .map(|f| f64::from(predict_from_fit(&f.2, t).rm_day))
                .collect();
            per_metric[0].push(r2(&pred, &gt));
            per_metric[1].push(Some(mae(&pred, &gt)));
            per_metric[2].push(Some(mse(&pred, &gt)));
        }
        for (metric, values) in [
            (MetricKind::R2, per_metric[0].clone()),
            (MetricKind::Mae, per_metric[1].clone()),
            (MetricKind::Mse, per_metric[2].clone()),
        ] {
            let best = best_index(&values, metric.higher_is_better());
            rows.push(ThresholdGridRow {
                environment_id: env.clone(),
                metric,
                values,
                best_index: best,
            });
        }
    }
    Ok(ThresholdGrid {
        thresholds: thresholds.to_vec(),
        rows,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_abs_diff_eq;

    #[test]
    fn gli_gray_is_zero() {
        let img = RgbRaster::filled(3, 3, [77, 77, 77]);
        let g = gli(&img);
        assert_eq!(g.value, 0.0);
        assert!(!g.undefined_input);
    }

    #[test]
    fn gli_pure_green_is_one() {
        let img = RgbRaster::filled(2, 2, [0, 255, 0]);
        assert_eq!(gli(&img).value, 1.0);
    }

    #[test]
    fn gli_worked_value() {
        let img = RgbRaster::filled(1, 1, [100, 150, 50]);
        assert_abs_diff_eq!(gli(&img).value, 150.0 / 450.0, epsilon = 1e-12);
    }

    #[test]
    fn gli_all_black_flagged() {
        let img = RgbRaster::filled(2, 2, [0, 0, 0]);
        let g = gli(&img);
        assert_eq!(g.value, 0.0);
        assert!(g.undefined_input);
    }

    #[test]
    fn gli_scale_invariant() {
        let a = gli(&RgbRaster::filled(1, 1, [40, 60, 20])).value;
        let b = gli(&RgbRaster::filled(1, 1, [80, 120, 40])).value;
        assert_abs_diff_eq!(a, b, epsilon = 1e-12);
    }

    #[test]
    fn lowess_exact_on_linear_data() {
        let xs: Vec<f64> = (0..20).map(f64::from).collect();
        let ys: Vec<f64> = xs.iter().map(|x| 3.0 - 0.25 * x).collect();
        for frac in [0.3, 0.67, 1.0] {
            let fit = lowess(&xs, &ys, frac, 3).unwrap();
            for (f, y) in fit.iter().zip(&ys) {
                assert_abs_diff_eq!(f, y, epsilon = 1e-10);
            }
        }
    }

    #[test]
    fn lowess_constant_stays_constant() {
        let xs: Vec<f64> = (0..7).map(f64::from).collect();
        let ys = vec![0.4; 7];
        let fit = lowess(&xs, &ys, 0.67, 3).unwrap();
        for f in fit {
            assert_abs_diff_eq!(f, 0.4, epsilon = 1e-12);
        }
    }

    #[test]
    fn lowess_rejects_degenerate_inputs() {
        assert!(lowess(&[1.0], &[2.0], 0.67, 3).is_err());
        assert!(lowess(&[1.0, 1.0], &[2.0, 3.0], 0.67, 3).is_err());
        assert!(lowess(&[1.0, 2.0], &[2.0, 3.0], 0.0, 3).is_err());
    }

    #[test]
    fn lowess_downweights_outlier() {
        // a gross outlier should be pulled toward the line by the bisquare
        // reweighting
        let xs: Vec<f64> = (0..11).map(f64::from).collect();
        let mut ys: Vec<f64> = xs.iter().map(|x| 0.1 * x).collect();
        ys[5] += 10.0;
        let plain = lowess(&xs, &ys, 0.6, 0).unwrap();
        let robust = lowess(&xs, &ys, 0.6, 3).unwrap();
        let target = 0.5; // true line at x=5
        assert!((robust[5] - target).abs() < (plain[5] - target).abs());
    }

    #[test]
    fn interpolate_daily_midpoint() {
        let out = interpolate_daily(&[6, 20], &[0.3, 0.1]);
        let at = |d: i32| out.iter().find(|p| p.0 == d).unwrap().1;
        assert_abs_diff_eq!(at(13), 0.2, epsilon = 1e-12);
        assert_abs_diff_eq!(at(6), 0.3, epsilon = 1e-12);
        assert_abs_diff_eq!(at(20), 0.1, epsilon = 1e-12);
    }

    #[test]
    fn interpolate_daily_uneven_segments() {
        let out = interpolate_daily(&[6, 13, 20], &[0.3, 0.18, 0.1]);
        let at = |d: i32| out.iter().find(|p| p.0 == d).unwrap().1;
        assert_abs_diff_eq!(at(16), 0.18 + (3.0 / 7.0) * (0.1 - 0.18), epsilon = 1e-12);
    }

    fn fit_from(days: &[i32], values: &[f64]) -> LoessFit {
        LoessFit {
            plot_id: "p".into(),
            environment_id: "e".into(),
            frac: 0.67,
            robust_iters: 3,
            fitted: interpolate_daily(days, values),
        }
    }

    #[test]
    fn predict_ties_break_earlier() {
        // v(10) = 0.03, v(11) = 0.01: both gaps 0.01 from 0.02
        let fit = fit_from(&[10, 11], &[0.03, 0.01]);
        let p = predict_from_fit(&fit, 0.02);
        assert_eq!(p.rm_day, 10);
        assert!(!p.censored);
    }

    #[test]
    fn predict_censored_above_threshold() {
        let fit = fit_from(&[6, 34], &[0.30, 0.10]);
        let p = predict_from_fit(&fit, 0.02);
        assert_eq!(p.rm_day, 34);
        assert!(p.censored);
    }

    #[test]
    fn predict_monotone_in_threshold() {
        // strictly decreasing curve: higher threshold -> earlier or equal day
        let days: Vec<i32> = (6..=34).collect();
        let values: Vec<f64> = days.iter().map(|&d| 0.3 - 0.01 * f64::from(d)).collect();
        let fit = fit_from(&days, &values);
        let mut prev = i32::MAX;
        for t in [0.01, 0.02, 0.05, 0.09] {
            let day = predict_from_fit(&fit, t).rm_day;
            assert!(day <= prev, "threshold {t} gave later day {day}");
            prev = day;
        }
    }

    #[test]
    fn grid_best_matches_row_optimum() {
        use crate::ingest::PlotSnip;
        use crate::raster::RgbRaster;
        // tiny synthetic dataset rendered directly from the color family
        let mk_series = |plot: usize, m: f64| {
            let days = [6, 13, 20, 27, 34];
            let traj = crate::synthetic::Trajectory::default();
            let snips = days
                .iter()
                .map(|&d| {
                    let g = crate::synthetic::greenness_trajectory(m, f64::from(d), &traj);
                    let gch =
                        crate::raster::quantize_channel(crate::synthetic::green_channel_for(g));
                    PlotSnip {
                        plot_id: format!("p{plot}"),
                        environment_id: "e".into(),
                        flight_day: d,
                        image: RgbRaster::filled(
                            crate::ingest::SNIP_LEN,
                            crate::ingest::SNIP_WID,
                            [100, gch, 100],
                        ),
                    }
                })
                .collect();
            PlotSeries {
                plot_id: format!("p{plot}"),
                environment_id: "e".into(),
                snips,
                rm_day: Some(m as i32),
            }
        };
        let dataset: Vec<PlotSeries> =
            (0..8usize).map(|i| mk_series(i, 16.0 + i as f64)).collect();
        let grid =
            threshold_grid_search(&dataset, &default_thresholds(), 0.67, 3).unwrap();
        assert_eq!(grid.rows.len(), 3);
        for row in &grid.rows {
            assert_eq!(row.values.len(), 9);
            let best = row.best_index.unwrap();
            let bv = row.values[best].unwrap();
            for v in row.values.iter().flatten() {
                if row.metric.higher_is_better() {
                    assert!(bv >= *v);
                } else {
                    assert!(bv <= *v);
                }
            }
        }
        assert_eq!(grid.best_threshold("e", MetricKind::Mae), Some(0.02));
    }
}
