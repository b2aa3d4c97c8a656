//! Synthetic field generator.
//!
//! Produces orthomosaics, plot boundaries and ground-truth maturity days for
//! environments whose greenness follows a closed-form logistic decay, so the
//! maturity day recoverable from the imagery is known exactly.
//!
//! The color family is constrained to R = B = 100 with
//! G = 100·(1+g)/(1−g), which makes the green leaf index of a noiseless
//! plot an exact function of the target greenness g, and the generator
//! analytically invertible.

use std::path::Path;

use rand::Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use crate::ingest::{Orthomosaic, PlotBoundary};
use crate::raster::{quantize_channel, RgbRaster};
use crate::rng::{hash_tag, stream};
use crate::{CoreError, Result};

/// Greenness decays from `g_green` to `g_brown` along a logistic curve whose
/// midpoint sits at the plot's maturity day; `slope_scale` is the logistic
/// time constant in days.
#[derive(Debug, Clone, Copy, Serialize, Deserialize)]
pub struct Trajectory {
    pub g_green: f64,
    pub g_brown: f64,
    pub slope_scale: f64,
}

impl Default for Trajectory {
    fn default() -> Self {
        // Midpoint (g_green + g_brown)/2 = 0.02, the default GLI threshold,
        // so the threshold baseline is unbiased on clean data. The slope
        // scale is chosen so a 0.01 threshold step shifts the crossing by
        // about one day, keeping the threshold grid identifiable at
        // integer-day resolution.
        Self {
            g_green: 0.25,
            g_brown: -0.21,
            slope_scale: 10.0,
        }
    }
}

/// Default per-pixel Gaussian noise std on the 0–255 scale.
pub const DEFAULT_NOISE_SIGMA: f64 = 8.0;

/// Soil color used for gutters between plots; its GLI is exactly 0.
pub const SOIL_RGB: [u8; 3] = [120, 100, 80];

/// Greenness values renderable by the constrained color family
/// (G in [50, 255] at R = B = 100).
pub const RENDERABLE_G: (f64, f64) = (-0.33, 0.43);

const MAX_CANVAS_SIDE: u32 = 32_768;

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct SynthConfig {
    pub environment_id: String,
    pub n_plots: usize,
    pub plot_rows: usize,
    pub plot_cols: usize,
    /// Pixel width of each plot region (the long axis, drawn horizontally).
    pub plot_px_w: u32,
    /// Pixel height of each plot region.
    pub plot_px_h: u32,
    /// Soil gap between and around plots.
    pub gutter_px: u32,
    /// Flight days as offsets after Aug 31, strictly increasing.
    pub flight_days: Vec<i32>,
    /// Inclusive range maturity days are drawn from.
    pub maturity_range: (i32, i32),
    pub trajectory: Trajectory,
    /// Per-pixel per-channel Gaussian noise std (0–255 scale).
    pub noise_sigma: f64,
    pub seed: u64,
}

impl Default for SynthConfig {
    fn default() -> Self {
        Self {
            environment_id: "env1".to_string(),
            n_plots: 300,
            plot_rows: 15,
            plot_cols: 20,
            plot_px_w: 128,
            plot_px_h: 32,
            gutter_px: 4,
            flight_days: vec![6, 13, 20, 27, 34],
            maturity_range: (15, 28),
            trajectory: Trajectory::default(),
            noise_sigma: DEFAULT_NOISE_SIGMA,
            seed: 0,
        }
    }
}

impl SynthConfig {
    pub fn validate(&self) -> Result<()> {
        let err = |msg: String| Err(CoreError::InvalidConfig(msg));
        if self.n_plots != self.plot_rows * self.plot_cols {
            return err(format!(
                "n_plots {} != plot_rows {} x plot_cols {}",
                self.n_plots, self.plot_rows, self.plot_cols
            ));
        }
        if self.n_plots == 0 {
            return err("n_plots must be positive".into());
        }
        if self.plot_px_w < 1 || self.plot_px_h < 1 {
            return err("plot pixel dimensions must be at least 1".into());
        }
        let t = &self.trajectory;
        if !(t.g_brown < 0.02 && 0.02 < t.g_green) {
            return err(format!(
                "trajectory must straddle the default threshold: g_brown {} < 0.02 < g_green {}",
                t.g_brown, t.g_green
            ));
        }
        if t.slope_scale <= 0.0 {
            return err("trajectory slope_scale must be positive".into());
        }
        if self.flight_days.len() < 2 {
            return err("at least two flight days required".into());
        }
        if !self.flight_days.windows(2).all(|w| w[0] < w[1]) {
            return err("flight_days must be strictly increasing".into());
        }
        let (lo, hi) = self.maturity_range;
        if lo > hi {
            return err(format!("maturity_range lo {lo} > hi {hi}"));
        }
        let first = *self.flight_days.first().unwrap();
        let last = *self.flight_days.last().unwrap();
        if lo < first - 10 || hi > last + 10 {
            return err(format!(
                "maturity_range [{lo}, {hi}] must lie within [{}, {}]",
                first - 10,
                last + 10
            ));
        }
        if self.noise_sigma < 0.0 {
            return err("noise_sigma must be non-negative".into());
        }
        let (w, h) = self.canvas_size();
        if w > MAX_CANVAS_SIDE || h > MAX_CANVAS_SIDE {
            return err(format!(
                "plot grid overflows the canvas: {w}x{h} exceeds {MAX_CANVAS_SIDE}"
            ));
        }
        Ok(())
    }

    pub fn canvas_size(&self) -> (u32, u32) {
        let cols = self.plot_cols as u32;
        let rows = self.plot_rows as u32;
        (
            cols * self.plot_px_w + (cols + 1) * self.gutter_px,
            rows * self.plot_px_h + (rows + 1) * self.gutter_px,
        )
    }
}

/// Ground-truth maturity day for one plot.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct GroundTruth {
    pub plot_id: String,
    pub environment_id: String,
    /// Days after Aug 31.
    pub rm_day: i32,
}

/// Everything generated for one environment.
#[derive(Debug, Clone)]
pub struct EnvironmentData {
    pub orthomosaics: Vec<Orthomosaic>,
    pub boundaries: Vec<PlotBoundary>,
    pub ground_truth: Vec<GroundTruth>,
}

/// Logistic greenness at day `t` for a plot maturing on day `m`.
///
/// g(t) = g_brown + (g_green − g_brown) · σ((m − t)/s), strictly decreasing
/// in t, with g(m) exactly the midpoint of the two plateaus.
pub fn greenness_trajectory(m: f64, t: f64, traj: &Trajectory) -> f64 {
    debug_assert!(traj.slope_scale > 0.0);
    let z = (m - t) / traj.slope_scale;
    let sigma = 1.0 / (1.0 + (-z).exp());
    traj.g_brown + (traj.g_green - traj.g_brown) * sigma
}

/// Inverse of [`greenness_trajectory`]: the maturity day implied by an
/// observed greenness `g` at day `t`. The oracle for threshold predictions.
pub fn invert_trajectory(g: f64, t: f64, traj: &Trajectory) -> f64 {
    let p = (g - traj.g_brown) / (traj.g_green - traj.g_brown);
    let p = p.clamp(1e-12, 1.0 - 1e-12);
    t + traj.slope_scale * (p / (1.0 - p)).ln()
}

/// G channel realizing greenness `g` at R = B = 100 (before quantization).
pub fn green_channel_for(g: f64) -> f64 {
    100.0 * (1.0 + g) / (1.0 - g)
}

/// Renders a plot of uniform greenness `g`. Returns the raster and whether
/// `g` had to be clamped into the renderable range.
pub fn render_plot(
    g: f64,
    width: u32,
    height: u32,
    noise_sigma: f64,
    rng: &mut impl Rng,
) -> (RgbRaster, bool) {
    let clamped = !(RENDERABLE_G.0..=RENDERABLE_G.1).contains(&g);
    let g = g.clamp(RENDERABLE_G.0, RENDERABLE_G.1);
    let base = [100.0, green_channel_for(g), 100.0];
    let mut raster = RgbRaster::new(width, height);
    if noise_sigma == 0.0 {
        let px = [
            quantize_channel(base[0]),
            quantize_channel(base[1]),
            quantize_channel(base[2]),
        ];
        for chunk in raster.data_mut().chunks_exact_mut(3) {
            chunk.copy_from_slice(&px);
        }
    } else {
        let normal = Normal::new(0.0, noise_sigma).expect("sigma validated non-negative");
        for chunk in raster.data_mut().chunks_exact_mut(3) {
            for (c, v) in chunk.iter_mut().enumerate() {
                *v = quantize_channel(base[c] + normal.sample(rng));
            }
        }
    }
    (raster, clamped)
}

fn plot_ids(cfg: &SynthConfig) -> Vec<String> {
    (0..cfg.n_plots).map(|i| format!("p{i:04}")).collect()
}

/// Draws each plot's maturity day uniformly from the configured range.
pub fn draw_maturities(cfg: &SynthConfig) -> Vec<GroundTruth> {
    let env_tag = hash_tag(&cfg.environment_id);
    let mut rng = stream(cfg.seed, &[env_tag, hash_tag("maturity")]);
    let (lo, hi) = cfg.maturity_range;
    plot_ids(cfg)
        .into_iter()
        .map(|plot_id| GroundTruth {
            plot_id,
            environment_id: cfg.environment_id.clone(),
            rm_day: rng.gen_range(lo..=hi),
        })
        .collect()
}

/// Generates one synthetic environment: an orthomosaic per flight day, the
/// plot boundaries, and the ground-truth maturity days. Deterministic for a
/// fixed config (including seed).
pub fn generate_environment(cfg: &SynthConfig) -> Result<EnvironmentData> {
    cfg.validate()?;
    let (canvas_w, canvas_h) = cfg.canvas_size();
    let env_tag = hash_tag(&cfg.environment_id);
    let ground_truth = draw_maturities(cfg);

    let mut boundaries = Vec::with_capacity(cfg.n_plots);
    for (idx, gt) in ground_truth.iter().enumerate() {
        let row = (idx / cfg.plot_cols) as u32;
        let col = (idx % cfg.plot_cols) as u32;
        let x0 = f64::from(cfg.gutter_px + col * (cfg.plot_px_w + cfg.gutter_px));
        let y0 = f64::from(cfg.gutter_px + row * (cfg.plot_px_h + cfg.gutter_px));
        let x1 = x0 + f64::from(cfg.plot_px_w);
        let y1 = y0 + f64::from(cfg.plot_px_h);
        boundaries.push(PlotBoundary::new(
            gt.plot_id.clone(),
            cfg.environment_id.clone(),
            [[x0, y0], [x1, y0], [x1, y1], [x0, y1]],
        )?);
    }

    let mut orthomosaics = Vec::with_capacity(cfg.flight_days.len());
    for &day in &cfg.flight_days {
        let mut canvas = RgbRaster::filled(canvas_w, canvas_h, SOIL_RGB);
        for (idx, gt) in ground_truth.iter().enumerate() {
            let g = greenness_trajectory(f64::from(gt.rm_day), f64::from(day), &cfg.trajectory);
            let mut rng = stream(
                cfg.seed,
                &[env_tag, hash_tag(&gt.plot_id), day as u64, hash_tag("render")],
            );
            let (plot, _) = render_plot(g, cfg.plot_px_w, cfg.plot_px_h, cfg.noise_sigma, &mut rng);
            let row = (idx / cfg.plot_cols) as u32;
            let col = (idx % cfg.plot_cols) as u32;
            let x0 = cfg.gutter_px + col * (cfg.plot_px_w + cfg.gutter_px);
            let y0 = cfg.gutter_px + row * (cfg.plot_px_h + cfg.gutter_px);
            for y in 0..cfg.plot_px_h {
                for x in 0..cfg.plot_px_w {
                    canvas.set(x0 + x, y0 + y, plot.get(x, y));
                }
            }
        }
        orthomosaics.push(Orthomosaic {
            environment_id: cfg.environment_id.clone(),
            flight_day: day,
            image: canvas,
        });
    }

    Ok(EnvironmentData {
        orthomosaics,
        boundaries,
        ground_truth,
    })
}

/// Writes orthomosaics as `<env>_<day>.png` into `dir`. Boundary and
/// ground-truth files are written by the caller, which may pool several
/// environments into one file.
pub fn write_orthomosaics(dir: &Path, env: &EnvironmentData) -> Result<Vec<std::path::PathBuf>> {
    let mut written = Vec::new();
    for ortho in &env.orthomosaics {
        let path = dir.join(format!("{}_{}.png", ortho.environment_id, ortho.flight_day));
        ortho.image.save_png(&path)?;
        written.push(path);
    }
    Ok(written)
}

/// Writes ground truth as CSV with header `plot_id,environment_id,rm_day`.
pub fn write_ground_truth_csv(path: &Path, rows: &[GroundTruth]) -> Result<()> {
    let mut w = csv::Writer::from_path(path)?;
    w.write_record(["plot_id", "environment_id", "rm_day"])?;
    for r in rows {
        w.write_record([&r.plot_id, &r.environment_id, &r.rm_day.to_string()])?;
    }
    w.flush()?;
    Ok(())
}

/// Reads a ground-truth CSV; rejects duplicate (plot_id, environment_id).
pub fn read_ground_truth_csv(path: &Path) -> Result<Vec<GroundTruth>> {
    let mut rdr = csv::ReaderBuilder::new().has_headers(true).from_path(path)?;
    let mut out: Vec<GroundTruth> = Vec::new();
    let mut seen = std::collections::HashSet::new();
    for (i, rec) in rdr.records().enumerate() {
        let rec = rec?;
        if rec.len() != 3 {
            return Err(CoreError::Malformed {
                record: i + 1,
                reason: format!("expected 3 fields, got {}", rec.len()),
            });
        }
        let rm_day: i32 = rec[2].parse().map_err(|_| CoreError::Malformed {
            record: i + 1,
            reason: format!("rm_day `{}` is not an integer", &rec[2]),
        })?;
        let gt = GroundTruth {
            plot_id: rec[0].to_string(),
            environment_id: rec[1].to_string(),
            rm_day,
        };
        if !seen.insert((gt.plot_id.clone(), gt.environment_id.clone())) {
            return Err(CoreError::Malformed {
                record: i + 1,
                reason: format!("duplicate ground truth for ({}, {})", gt.plot_id, gt.environment_id),
            });
        }
        out.push(gt);
    }
    Ok(out)
}
