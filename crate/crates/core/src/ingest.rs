//! Plot ingestion: boundary parsing, crop rectification, resizing to the
//! network's fixed shape, and date-ordered series assembly.

use std::collections::{BTreeMap, HashSet};
use std::path::Path;

use chrono::{Datelike, NaiveDate};
use serde::{Deserialize, Serialize};

use crate::raster::{quantize_channel, RgbRaster};
use crate::synthetic::GroundTruth;
use crate::{CoreError, Result};

/// Fixed snip shape: 256 px along the plot's long axis, 64 px across.
pub const SNIP_LEN: u32 = 256;
pub const SNIP_WID: u32 = 64;

/// One full-field image for one environment on one flight date.
#[derive(Debug, Clone)]
pub struct Orthomosaic {
    pub environment_id: String,
    /// Days after Aug 31.
    pub flight_day: i32,
    pub image: RgbRaster,
}

/// Oriented rectangular plot boundary in pixel-edge coordinates.
///
/// Winding is normalized on construction so the shoelace signed area is
/// positive (counter-clockwise in a y-up frame).
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct PlotBoundary {
    pub plot_id: String,
    pub environment_id: String,
    pub corners: [[f64; 2]; 4],
}

fn shoelace_area(corners: &[[f64; 2]; 4]) -> f64 {
    let mut sum = 0.0;
    for i in 0..4 {
        let [x0, y0] = corners[i];
        let [x1, y1] = corners[(i + 1) % 4];
        sum += x0 * y1 - x1 * y0;
    }
    sum / 2.0
}

fn cross(o: [f64; 2], a: [f64; 2], b: [f64; 2]) -> f64 {
    (a[0] - o[0]) * (b[1] - o[1]) - (a[1] - o[1]) * (b[0] - o[0])
}

impl PlotBoundary {
    pub fn new(
        plot_id: String,
        environment_id: String,
        mut corners: [[f64; 2]; 4],
    ) -> Result<Self> {
        let area = shoelace_area(&corners);
        if area.abs() < 1e-9 {
            return Err(CoreError::Boundary {
                plot_id,
                reason: "degenerate quadrilateral (zero area)".into(),
            });
        }
        if area < 0.0 {
            corners.reverse();
        }
        // convexity: all cross products along the (now CCW) ring positive
        for i in 0..4 {
            let c = cross(corners[i], corners[(i + 1) % 4], corners[(i + 2) % 4]);
            if c <= 0.0 {
                return Err(CoreError::Boundary {
                    plot_id,
                    reason: "corners do not form a convex quadrilateral".into(),
                });
            }
        }
        Ok(Self {
            plot_id,
            environment_id,
            corners,
        })
    }

    pub fn area(&self) -> f64 {
        shoelace_area(&self.corners)
    }
}

#[derive(Debug, Deserialize, Serialize)]
struct BoundaryRecord {
    plot_id: String,
    environment_id: String,
    corners: Vec<[f64; 2]>,
}

/// Parses the boundary JSON file: an array of
/// `{"plot_id", "environment_id", "corners": [[x,y] x4]}` objects.
/// Duplicate plot ids within an environment are rejected.
pub fn parse_plot_boundaries_str(text: &str) -> Result<Vec<PlotBoundary>> {
    let records: Vec<BoundaryRecord> = serde_json::from_str(text)?;
    let mut seen = HashSet::new();
    let mut out = Vec::with_capacity(records.len());
    for (i, rec) in records.into_iter().enumerate() {
        if rec.corners.len() != 4 {
            return Err(CoreError::Malformed {
                record: i + 1,
                reason: format!(
                    "plot `{}`: expected 4 corners, got {}",
                    rec.plot_id,
                    rec.corners.len()
                ),
            });
        }
        if !seen.insert((rec.plot_id.clone(), rec.environment_id.clone())) {
            return Err(CoreError::Malformed {
                record: i + 1,
                reason: format!(
                    "duplicate plot_id `{}` in environment `{}`",
                    rec.plot_id, rec.environment_id
                ),
            });
        }
        let corners = [
            rec.corners[0],
            rec.corners[1],
            rec.corners[2],
            rec.corners[3],
        ];
        out.push(PlotBoundary::new(rec.plot_id, rec.environment_id, corners)?);
    }
    Ok(out)
}

pub fn parse_plot_boundaries(path: &Path) -> Result<Vec<PlotBoundary>> {
    let text = std::fs::read_to_string(path)?;
    parse_plot_boundaries_str(&text)
}

pub fn boundaries_to_json(boundaries: &[PlotBoundary]) -> Result<String> {
    let records: Vec<BoundaryRecord> = boundaries
        .iter()
        .map(|b| BoundaryRecord {
            plot_id: b.plot_id.clone(),
            environment_id: b.environment_id.clone(),
            corners: b.corners.to_vec(),
        })
        .collect();
    Ok(serde_json::to_string_pretty(&records)?)
}

/// Fraction of the boundary quad that overlaps the raster rectangle,
/// computed by Sutherland–Hodgman clipping. Used in error reporting.
fn overlap_fraction(corners: &[[f64; 2]; 4], width: f64, height: f64) -> f64 {
    let mut poly: Vec<[f64; 2]> = corners.to_vec();
    // clip against each raster edge: x>=0, x<=w, y>=0, y<=h
    let clips: [(usize, f64, bool); 4] = [
        (0, 0.0, true),
        (0, width, false),
        (1, 0.0, true),
        (1, height, false),
    ];
    for (axis, bound, keep_greater) in clips {
        let inside = |p: [f64; 2]| {
            if keep_greater {
                p[axis] >= bound
            } else {
                p[axis] <= bound
            }
        };
        let mut next = Vec::with_capacity(poly.len() + 2);
        for i in 0..poly.len() {
            let cur = poly[i];
            let prev = poly[(i + poly.len() - 1) % poly.len()];
            let cur_in = inside(cur);
            let prev_in = inside(prev);
            if cur_in != prev_in {
                let t = (bound - prev[axis]) / (cur[axis] - prev[axis]);
                let mut inter = [0.0; 2];
                inter[axis] = bound;
                inter[1 - axis] = prev[1 - axis] + t * (cur[1 - axis] - prev[1 - axis]);
                next.push(inter);
            }
            if cur_in {
                next.push(cur);
            }
        }
        poly = next;
        if poly.is_empty() {
            return 0.0;
        }
    }
    let mut clipped_area = 0.0;
    for i in 0..poly.len() {
        let [x0, y0] = poly[i];
        let [x1, y1] = poly[(i + 1) % poly.len()];
        clipped_area += x0 * y1 - x1 * y0;
    }
    (clipped_area / 2.0).abs() / shoelace_area(corners).abs()
}

const BOUNDARY_TOLERANCE_PX: f64 = 2.0;

/// Crops the oriented rectangle out of the orthomosaic and rectifies it so
/// the long edge runs horizontally. Output size is the rectangle's own pixel
/// dimensions; sampling is bilinear.
pub fn extract_plot(ortho: &Orthomosaic, boundary: &PlotBoundary) -> Result<RgbRaster> {
    let w = f64::from(ortho.image.width());
    let h = f64::from(ortho.image.height());
    let within = boundary.corners.iter().all(|&[x, y]| {
        x >= -BOUNDARY_TOLERANCE_PX
            && x <= w + BOUNDARY_TOLERANCE_PX
            && y >= -BOUNDARY_TOLERANCE_PX
            && y <= h + BOUNDARY_TOLERANCE_PX
    });
    if !within {
        let frac = overlap_fraction(&boundary.corners, w, h);
        return Err(CoreError::Boundary {
            plot_id: boundary.plot_id.clone(),
            reason: format!(
                "boundary extends outside the {}x{} orthomosaic (overlap fraction {frac:.3})",
                ortho.image.width(),
                ortho.image.height()
            ),
        });
    }

    // Order the ring so the first edge is a long one.
    let mut ring = boundary.corners;
    let edge = |a: [f64; 2], b: [f64; 2]| ((b[0] - a[0]).powi(2) + (b[1] - a[1]).powi(2)).sqrt();
    if edge(ring[0], ring[1]) < edge(ring[1], ring[2]) {
        ring.rotate_left(1);
    }
    let long_len = edge(ring[0], ring[1]);
    let short_len = edge(ring[1], ring[2]);
    let out_w = (long_len.round() as u32).max(1);
    let out_h = (short_len.round() as u32).max(1);

    let [a, b, c, d] = ring;
    let mut out = RgbRaster::new(out_w, out_h);
    for j in 0..out_h {
        let v = (f64::from(j) + 0.5) / f64::from(out_h);
        for i in 0..out_w {
            let u = (f64::from(i) + 0.5) / f64::from(out_w);
            // bilinear map of the unit square onto the quad A->B->C->D
            let x = (1.0 - u) * (1.0 - v) * a[0]
                + u * (1.0 - v) * b[0]
                + u * v * c[0]
                + (1.0 - u) * v * d[0];
            let y = (1.0 - u) * (1.0 - v) * a[1]
                + u * (1.0 - v) * b[1]
                + u * v * c[1]
                + (1.0 - u) * v * d[1];
            let rgb = ortho.image.sample_bilinear(x, y);
            out.set(
                i,
                j,
                [
                    quantize_channel(rgb[0]),
                    quantize_channel(rgb[1]),
                    quantize_channel(rgb[2]),
                ],
            );
        }
    }
    Ok(out)
}

/// Bilinear resize; identity when the source already has the target shape.
pub fn resize_bilinear(img: &RgbRaster, target_w: u32, target_h: u32) -> RgbRaster {
    if img.width() == target_w && img.height() == target_h {
        return img.clone();
    }
    let sx = f64::from(img.width()) / f64::from(target_w);
    let sy = f64::from(img.height()) / f64::from(target_h);
    let mut out = RgbRaster::new(target_w, target_h);
    for j in 0..target_h {
        let src_y = (f64::from(j) + 0.5) * sy;
        for i in 0..target_w {
            let src_x = (f64::from(i) + 0.5) * sx;
            let rgb = img.sample_bilinear(src_x, src_y);
            out.set(
                i,
                j,
                [
                    quantize_channel(rgb[0]),
                    quantize_channel(rgb[1]),
                    quantize_channel(rgb[2]),
                ],
            );
        }
    }
    out
}

/// Resize to the network's fixed 256 (length) x 64 (width) shape.
pub fn resize_to_snip(img: &RgbRaster) -> RgbRaster {
    resize_bilinear(img, SNIP_LEN, SNIP_WID)
}

/// One plot image from one flight, already rectified and resized.
#[derive(Debug, Clone)]
pub struct PlotSnip {
    pub plot_id: String,
    pub environment_id: String,
    pub flight_day: i32,
    pub image: RgbRaster,
}

impl PlotSnip {
    pub fn validate(&self) -> Result<()> {
        if self.image.width() != SNIP_LEN || self.image.height() != SNIP_WID {
            return Err(CoreError::Data(format!(
                "snip {}/{} day {} has shape {}x{}, expected {SNIP_LEN}x{SNIP_WID}",
                self.environment_id,
                self.plot_id,
                self.flight_day,
                self.image.width(),
                self.image.height()
            )));
        }
        Ok(())
    }
}

/// Date-ordered sequence of snips for one plot, with optional ground truth.
#[derive(Debug, Clone)]
pub struct PlotSeries {
    pub plot_id: String,
    pub environment_id: String,
    pub snips: Vec<PlotSnip>,
    pub rm_day: Option<i32>,
}

impl PlotSeries {
    pub fn flight_days(&self) -> Vec<i32> {
        self.snips.iter().map(|s| s.flight_day).collect()
    }
}

/// Groups snips by (environment, plot), sorts each group by flight day, and
/// joins ground truth where present. Output order is stable: ascending by
/// (environment_id, plot_id).
pub fn assemble_series(snips: Vec<PlotSnip>, gt: &[GroundTruth]) -> Result<Vec<PlotSeries>> {
    let mut gt_map = BTreeMap::new();
    for row in gt {
        if gt_map
            .insert((row.environment_id.clone(), row.plot_id.clone()), row.rm_day)
            .is_some()
        {
            return Err(CoreError::Data(format!(
                "duplicate ground truth for ({}, {})",
                row.plot_id, row.environment_id
            )));
        }
    }
    let mut groups: BTreeMap<(String, String), Vec<PlotSnip>> = BTreeMap::new();
    for snip in snips {
        snip.validate()?;
        groups
            .entry((snip.environment_id.clone(), snip.plot_id.clone()))
            .or_default()
            .push(snip);
    }
    let mut out = Vec::with_capacity(groups.len());
    for ((environment_id, plot_id), mut group) in groups {
        group.sort_by_key(|s| s.flight_day);
        for w in group.windows(2) {
            if w[0].flight_day == w[1].flight_day {
                return Err(CoreError::Data(format!(
                    "duplicate flight day {} for plot ({}, {})",
                    w[0].flight_day, plot_id, environment_id
                )));
            }
        }
        let rm_day = gt_map.get(&(environment_id.clone(), plot_id.clone())).copied();
        out.push(PlotSeries {
            plot_id,
            environment_id,
            snips: group,
            rm_day,
        });
    }
    Ok(out)
}

/// Flight schedule: all five weekly flights, or the first/middle/last three.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Schedule {
    Weekly,
    Biweekly,
}

impl Schedule {
    pub fn time_steps(self) -> usize {
        match self {
            Schedule::Weekly => 5,
            Schedule::Biweekly => 3,
        }
    }

    pub fn label(self) -> &'static str {
        match self {
            Schedule::Weekly => "weekly",
            Schedule::Biweekly => "biweekly",
        }
    }
}

impl std::str::FromStr for Schedule {
    type Err = String;
    fn from_str(s: &str) -> std::result::Result<Self, String> {
        match s {
            "weekly" => Ok(Schedule::Weekly),
            "biweekly" => Ok(Schedule::Biweekly),
            other => Err(format!("unknown schedule `{other}`")),
        }
    }
}

/// Selects the snips used by the given schedule: weekly keeps the five
/// flights, bi-weekly the first, middle and last of them.
pub fn select_flights(series: &PlotSeries, schedule: Schedule) -> Result<PlotSeries> {
    let available = series.flight_days();
    let need = match schedule {
        Schedule::Weekly => 5,
        Schedule::Biweekly => 3,
    };
    if available.len() < need {
        return Err(CoreError::Data(format!(
            "plot ({}, {}) has {} flights {:?}, schedule {} needs {need}",
            series.plot_id,
            series.environment_id,
            available.len(),
            available,
            schedule.label()
        )));
    }
    let snips = match schedule {
        Schedule::Weekly => series.snips[..5].to_vec(),
        Schedule::Biweekly => {
            let base = &series.snips[..series.snips.len().min(5)];
            let mid = base.len() / 2;
            vec![
                base[0].clone(),
                base[mid].clone(),
                base[base.len() - 1].clone(),
            ]
        }
    };
    Ok(PlotSeries {
        plot_id: series.plot_id.clone(),
        environment_id: series.environment_id.clone(),
        snips,
        rm_day: series.rm_day,
    })
}

const SEASON_END_OFFSET: i32 = 91; // Nov 30 is 91 days after Aug 31

/// Encodes an in-season calendar date (Aug 31 – Nov 30) as days after Aug 31.
pub fn rm_day_encode(date: NaiveDate) -> Result<i32> {
    let anchor = NaiveDate::from_ymd_opt(date.year(), 8, 31).expect("Aug 31 exists");
    let n = (date - anchor).num_days() as i32;
    if !(0..=SEASON_END_OFFSET).contains(&n) {
        return Err(CoreError::Data(format!(
            "date {date} is outside the Aug 31 - Nov 30 season window"
        )));
    }
    Ok(n)
}

/// Decodes days-after-Aug-31 back to the calendar date of the given season.
pub fn rm_day_decode(n: i32, season_year: i32) -> Result<NaiveDate> {
    if !(0..=SEASON_END_OFFSET).contains(&n) {
        return Err(CoreError::Data(format!(
            "rm_day {n} is outside the season window [0, {SEASON_END_OFFSET}]"
        )));
    }
    let anchor = NaiveDate::from_ymd_opt(season_year, 8, 31).expect("Aug 31 exists");
    Ok(anchor + chrono::Duration::days(i64::from(n)))
}

/// Loads every `<env>_<day>.png` orthomosaic in a directory.
pub fn load_orthomosaics(dir: &Path) -> Result<Vec<Orthomosaic>> {
    let mut out = Vec::new();
    let mut entries: Vec<_> = std::fs::read_dir(dir)?
        .collect::<std::io::Result<Vec<_>>>()?
        .into_iter()
        .map(|e| e.path())
        .filter(|p| p.extension().is_some_and(|e| e == "png"))
        .collect();
    entries.sort();
    for path in entries {
        let stem = path
            .file_stem()
            .and_then(|s| s.to_str())
            .ok_or_else(|| CoreError::Data(format!("unreadable file name {path:?}")))?;
        let Some((env, day)) = stem.rsplit_once('_') else {
            continue; // not an orthomosaic file
        };
        let Ok(flight_day) = day.parse::<i32>() else {
            continue;
        };
        out.push(Orthomosaic {
            environment_id: env.to_string(),
            flight_day,
            image: RgbRaster::load_png(&path)?,
        });
    }
    if out.is_empty() {
        return Err(CoreError::Data(format!(
            "no `<env>_<day>.png` orthomosaics found in {dir:?}"
        )));
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn axis_boundary() -> PlotBoundary {
        PlotBoundary::new(
            "p1".into(),
            "e1".into(),
            [[0.0, 0.0], [10.0, 0.0], [10.0, 4.0], [0.0, 4.0]],
        )
        .unwrap()
    }

    #[test]
    fn boundary_area_and_winding() {
        let b = axis_boundary();
        assert!((b.area() - 40.0).abs() < 1e-12);
        // clockwise input is normalized to positive area
        let b2 = PlotBoundary::new(
            "p2".into(),
            "e1".into(),
            [[0.0, 0.0], [0.0, 4.0], [10.0, 4.0], [10.0, 0.0]],
        )
        .unwrap();
        assert!(b2.area() > 0.0);
    }

    #[test]
    fn degenerate_boundary_rejected() {
        let r = PlotBoundary::new(
            "bad".into(),
            "e1".into(),
            [[0.0, 0.0], [4.0, 0.0], [8.0, 0.0], [2.0, 0.0]],
        );
        assert!(matches!(r, Err(CoreError::Boundary { .. })));
    }

    #[test]
    fn rotated_boundary_preserves_area() {
        let th: f64 = 15f64.to_radians();
        let rot = |x: f64, y: f64| [x * th.cos() - y * th.sin(), x * th.sin() + y * th.cos()];
        let b = PlotBoundary::new(
            "rot".into(),
            "e1".into(),
            [rot(0.0, 0.0), rot(10.0, 0.0), rot(10.0, 4.0), rot(0.0, 4.0)],
        )
        .unwrap();
        assert!((b.area() - 40.0).abs() < 1e-6);
    }

    #[test]
    fn parse_rejects_duplicates_and_names_record() {
        let json = r#"[
            {"plot_id":"a","environment_id":"e","corners":[[0,0],[4,0],[4,2],[0,2]]},
            {"plot_id":"a","environment_id":"e","corners":[[0,0],[4,0],[4,2],[0,2]]}
        ]"#;
        let err = parse_plot_boundaries_str(json).unwrap_err();
        assert!(err.to_string().contains("record 2"), "{err}");
    }

    #[test]
    fn boundaries_json_round_trip() {
        let b = vec![axis_boundary()];
        let json = boundaries_to_json(&b).unwrap();
        let back = parse_plot_boundaries_str(&json).unwrap();
        assert_eq!(back[0].corners, b[0].corners);
    }

    fn checkerboard_ortho(w: u32, h: u32) -> Orthomosaic {
        let mut img = RgbRaster::new(w, h);
        for y in 0..h {
            for x in 0..w {
                let v = if (x + y) % 2 == 0 { 200 } else { 40 };
                img.set(x, y, [v, v, v]);
            }
        }
        Orthomosaic {
            environment_id: "e1".into(),
            flight_day: 6,
            image: img,
        }
    }

    #[test]
    fn axis_aligned_extract_is_plain_crop() {
        let ortho = checkerboard_ortho(20, 10);
        let b = PlotBoundary::new(
            "p".into(),
            "e1".into(),
            [[2.0, 3.0], [12.0, 3.0], [12.0, 7.0], [2.0, 7.0]],
        )
        .unwrap();
        let crop = extract_plot(&ortho, &b).unwrap();
        assert_eq!((crop.width(), crop.height()), (10, 4));
        for j in 0..4 {
            for i in 0..10 {
                assert_eq!(crop.get(i, j), ortho.image.get(2 + i, 3 + j));
            }
        }
    }

    #[test]
    fn constant_region_extract_is_constant_under_rotation() {
        let ortho = Orthomosaic {
            environment_id: "e1".into(),
            flight_day: 6,
            image: RgbRaster::filled(64, 64, [90, 120, 70]),
        };
        let th: f64 = 10f64.to_radians();
        let cx = 32.0;
        let cy = 32.0;
        let rot = |x: f64, y: f64| {
            [
                cx + (x - cx) * th.cos() - (y - cy) * th.sin(),
                cy + (x - cx) * th.sin() + (y - cy) * th.cos(),
            ]
        };
        let b = PlotBoundary::new(
            "p".into(),
            "e1".into(),
            [
                rot(12.0, 26.0),
                rot(52.0, 26.0),
                rot(52.0, 38.0),
                rot(12.0, 38.0),
            ],
        )
        .unwrap();
        let crop = extract_plot(&ortho, &b).unwrap();
        for j in 0..crop.height() {
            for i in 0..crop.width() {
                assert_eq!(crop.get(i, j), [90, 120, 70]);
            }
        }
    }

    #[test]
    fn vertical_boundary_is_rectified_horizontal() {
        let ortho = checkerboard_ortho(10, 20);
        let b = PlotBoundary::new(
            "p".into(),
            "e1".into(),
            [[2.0, 2.0], [8.0, 2.0], [8.0, 18.0], [2.0, 18.0]],
        )
        .unwrap();
        let crop = extract_plot(&ortho, &b).unwrap();
        assert!(crop.width() > crop.height());
        assert_eq!((crop.width(), crop.height()), (16, 6));
    }

    #[test]
    fn out_of_bounds_reports_overlap() {
        let ortho = checkerboard_ortho(10, 10);
        let b = PlotBoundary::new(
            "p".into(),
            "e1".into(),
            [[5.0, 2.0], [15.0, 2.0], [15.0, 6.0], [5.0, 6.0]],
        )
        .unwrap();
        let err = extract_plot(&ortho, &b).unwrap_err();
        assert!(err.to_string().contains("overlap fraction 0.5"), "{err}");
    }

    #[test]
    fn resize_identity_on_target_shape() {
        let img = checkerboard_ortho(SNIP_LEN, SNIP_WID).image;
        assert_eq!(resize_to_snip(&img), img);
    }

    #[test]
    fn resize_constant_stays_constant() {
        let img = RgbRaster::filled(33, 7, [12, 200, 99]);
        let out = resize_to_snip(&img);
        assert_eq!((out.width(), out.height()), (SNIP_LEN, SNIP_WID));
        for j in 0..out.height() {
            for i in 0..out.width() {
                assert_eq!(out.get(i, j), [12, 200, 99]);
            }
        }
    }

    #[test]
    fn resize_two_pixel_gradient() {
        let mut img = RgbRaster::new(2, 1);
        img.set(0, 0, [0, 0, 0]);
        img.set(1, 0, [255, 255, 255]);
        let out = resize_bilinear(&img, 8, 1);
        // expected from the bilinear weights: src_x = (i+0.5)*(2/8) - 0.5 px center
        let expect = |i: u32| {
            let x = (f64::from(i) + 0.5) * 0.25 - 0.5;
            let t = x.clamp(0.0, 1.0);
            quantize_channel(255.0 * t)
        };
        for i in [0, 3, 7] {
            assert_eq!(out.get(i, 0)[0], expect(i), "column {i}");
        }
        // monotone left to right
        let row: Vec<u8> = (0..8).map(|i| out.get(i, 0)[0]).collect();
        assert!(row.windows(2).all(|w| w[0] <= w[1]), "{row:?}");
    }

    fn snip(plot: &str, day: i32) -> PlotSnip {
        PlotSnip {
            plot_id: plot.into(),
            environment_id: "e1".into(),
            flight_day: day,
            image: RgbRaster::filled(SNIP_LEN, SNIP_WID, [10, 10, 10]),
        }
    }

    #[test]
    fn assemble_sorts_and_joins() {
        let gt = vec![GroundTruth {
            plot_id: "a".into(),
            environment_id: "e1".into(),
            rm_day: 21,
        }];
        let series = assemble_series(
            vec![snip("a", 20), snip("a", 6), snip("b", 6), snip("a", 13)],
            &gt,
        )
        .unwrap();
        assert_eq!(series.len(), 2);
        assert_eq!(series[0].plot_id, "a");
        assert_eq!(series[0].flight_days(), vec![6, 13, 20]);
        assert_eq!(series[0].rm_day, Some(21));
        assert_eq!(series[1].rm_day, None);
    }

    #[test]
    fn assemble_rejects_duplicate_day() {
        let err = assemble_series(vec![snip("a", 6), snip("a", 6)], &[]).unwrap_err();
        assert!(err.to_string().contains("duplicate flight day"), "{err}");
    }

    #[test]
    fn select_weekly_and_biweekly() {
        let series = assemble_series(
            vec![
                snip("a", 6),
                snip("a", 13),
                snip("a", 20),
                snip("a", 27),
                snip("a", 37),
            ],
            &[],
        )
        .unwrap();
        let weekly = select_flights(&series[0], Schedule::Weekly).unwrap();
        assert_eq!(weekly.flight_days(), vec![6, 13, 20, 27, 37]);
        let biweekly = select_flights(&series[0], Schedule::Biweekly).unwrap();
        assert_eq!(biweekly.flight_days(), vec![6, 20, 37]);
    }

    #[test]
    fn select_biweekly_env2_dates() {
        let series = assemble_series(
            vec![
                snip("a", 5),
                snip("a", 14),
                snip("a", 17),
                snip("a", 25),
                snip("a", 34),
            ],
            &[],
        )
        .unwrap();
        let biweekly = select_flights(&series[0], Schedule::Biweekly).unwrap();
        assert_eq!(biweekly.flight_days(), vec![5, 17, 34]);
    }

    #[test]
    fn select_insufficient_lists_days() {
        let series = assemble_series(vec![snip("a", 6), snip("a", 13)], &[]).unwrap();
        let err = select_flights(&series[0], Schedule::Biweekly).unwrap_err();
        assert!(err.to_string().contains("[6, 13]"), "{err}");
    }

    #[test]
    fn rm_day_encoding() {
        let d = |y, m, d| NaiveDate::from_ymd_opt(y, m, d).unwrap();
        assert_eq!(rm_day_encode(d(2019, 9, 20)).unwrap(), 20);
        assert_eq!(rm_day_encode(d(2019, 8, 31)).unwrap(), 0);
        assert_eq!(rm_day_encode(d(2019, 10, 7)).unwrap(), 37);
        assert!(rm_day_encode(d(2019, 8, 30)).is_err());
        assert!(rm_day_encode(d(2019, 12, 1)).is_err());
        assert_eq!(rm_day_decode(37, 2019).unwrap(), d(2019, 10, 7));
    }

    #[test]
    fn rm_day_round_trip_whole_season() {
        for n in 0..=91 {
            let date = rm_day_decode(n, 2018).unwrap();
            assert_eq!(rm_day_encode(date).unwrap(), n);
        }
    }
}
