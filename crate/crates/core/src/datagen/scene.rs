//! Single-target scenes rendered into a range-azimuth radar heatmap and a
//! camera image from one shared latent.

use std::f64::consts::PI;

use rand::Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

pub const RANGE_MIN_M: f64 = 1.0;
pub const RANGE_MAX_M: f64 = 25.0;
pub const AZIMUTH_MAX_RAD: f64 = PI / 3.0;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Class {
    Empty = 0,
    Pedestrian = 1,
    Cyclist = 2,
    Car = 3,
}

impl Class {
    pub const ALL: [Class; 4] = [Class::Empty, Class::Pedestrian, Class::Cyclist, Class::Car];
    pub const COUNT: usize = 4;

    pub fn from_id(id: u8) -> Option<Class> {
        Self::ALL.get(id as usize).copied()
    }

    pub fn id(self) -> u8 {
        self as u8
    }

    /// Extent range in metres, reflectivity range, and image patch intensity.
    fn signature(self) -> Option<Signature> {
        let sig = |extent, reflectivity, intensity| Signature {
            extent,
            reflectivity,
            intensity,
        };
        match self {
            Class::Empty => None,
            Class::Pedestrian => Some(sig((0.3, 0.6), (0.5, 1.0), 0.6)),
            Class::Cyclist => Some(sig((0.8, 1.3), (1.0, 2.0), 0.8)),
            Class::Car => Some(sig((1.5, 2.5), (3.0, 6.0), 1.0)),
        }
    }

    pub fn extent_range(self) -> Option<(f64, f64)> {
        self.signature().map(|s| s.extent)
    }

    pub fn reflectivity_range(self) -> Option<(f64, f64)> {
        self.signature().map(|s| s.reflectivity)
    }
}

struct Signature {
    extent: (f64, f64),
    reflectivity: (f64, f64),
    intensity: f64,
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Target {
    pub range_m: f64,
    pub azimuth_rad: f64,
    pub extent_m: f64,
    pub reflectivity: f64,
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct SceneLatent {
    pub class: Class,
    /// `None` exactly when `class` is [`Class::Empty`].
    pub target: Option<Target>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct SimConfig {
    pub range_bins: usize,
    pub azimuth_bins: usize,
    pub image_height: usize,
    pub image_width: usize,
    /// Radar noise scale; `None` selects 5% of the largest noiseless car peak.
    pub sigma_r: Option<f64>,
    pub sigma_v: f64,
    /// Multiply returns by range², as range-normalised heatmaps do. Off gives the
    /// raw `reflectivity / range²` falloff.
    pub range_compensation: bool,
    /// Point-spread standard deviation in cells per metre of target extent.
    pub blob_cells_per_m: f64,
    /// Image pixels per metre of target size at 1 m range.
    pub focal_px: f64,
    /// Column offset from the image centre at the edge of the field of view.
    pub col_span_px: f64,
    /// Row of the horizon as a fraction of the image height.
    pub horizon_frac: f64,
    /// Rows below the horizon of a target at 1 m; falls off as 1/range.
    pub row_span_px: f64,
    /// Smallest rendered patch side in pixels.
    pub min_patch_px: f64,
}

impl Default for SimConfig {
    fn default() -> Self {
        Self {
            range_bins: 32,
            azimuth_bins: 32,
            image_height: 32,
            image_width: 32,
            sigma_r: None,
            sigma_v: 0.05,
            range_compensation: true,
            blob_cells_per_m: 12.0,
            focal_px: 16.0,
            col_span_px: 2.0,
            horizon_frac: 0.45,
            row_span_px: 3.0,
            min_patch_px: 4.0,
        }
    }
}

impl SimConfig {
    pub fn validate(&self) -> Result<()> {
        if self.range_bins < 2 || self.azimuth_bins < 2 || self.image_height < 4 || self.image_width < 4 {
            return Err(Error::Config("grid sizes too small".into()));
        }
        let nonneg = |v: f64| v.is_finite() && v >= 0.0;
        if !nonneg(self.sigma_v) || !self.sigma_r.is_none_or(nonneg) {
            return Err(Error::Config("noise levels must be finite and >= 0".into()));
        }
        if !(self.blob_cells_per_m > 0.0 && self.focal_px > 0.0 && self.min_patch_px > 0.0)
            || !(self.col_span_px >= 0.0 && self.row_span_px >= 0.0 && (0.0..=1.0).contains(&self.horizon_frac))
        {
            return Err(Error::Config("geometry scales must be positive".into()));
        }
        Ok(())
    }

    pub fn heatmap_len(&self) -> usize {
        self.range_bins * self.azimuth_bins
    }

    pub fn image_len(&self) -> usize {
        self.image_height * self.image_width
    }

    fn range_gain(&self, range_m: f64) -> f64 {
        if self.range_compensation {
            1.0
        } else {
            1.0 / (range_m * range_m)
        }
    }

    /// Noiseless peak of a target.
    pub fn peak_amplitude(&self, t: &Target) -> f64 {
        t.reflectivity * self.range_gain(t.range_m)
    }

    pub fn effective_sigma_r(&self) -> f64 {
        self.sigma_r.unwrap_or_else(|| {
            let (_, refl_max) = Class::Car.reflectivity_range().unwrap();
            0.05 * refl_max * self.range_gain(RANGE_MIN_M)
        })
    }

    /// Fractional (range, azimuth) cell coordinates of a target.
    pub fn radar_cell(&self, t: &Target) -> (f64, f64) {
        let r = (t.range_m - RANGE_MIN_M) / (RANGE_MAX_M - RANGE_MIN_M) * (self.range_bins - 1) as f64;
        let a = (t.azimuth_rad + AZIMUTH_MAX_RAD) / (2.0 * AZIMUTH_MAX_RAD) * (self.azimuth_bins - 1) as f64;
        (r, a)
    }

    /// Continuous (row, column) pixel centre of a target's image patch.
    pub fn image_center(&self, t: &Target) -> (f64, f64) {
        let (h, w) = (self.image_height as f64, self.image_width as f64);
        let col = w / 2.0 + self.col_span_px * t.azimuth_rad.tan() / AZIMUTH_MAX_RAD.tan();
        let row = self.horizon_frac * h + self.row_span_px / t.range_m;
        (row, col)
    }

    /// Patch (height, width) in pixels.
    pub fn patch_size(&self, class: Class, t: &Target) -> (f64, f64) {
        let (h_m, w_m) = match class {
            Class::Pedestrian => (3.0 * t.extent_m, t.extent_m),
            Class::Cyclist => (1.2 * t.extent_m, 1.2 * t.extent_m),
            Class::Car => (0.45 * t.extent_m, t.extent_m),
            Class::Empty => (0.0, 0.0),
        };
        let ppm = self.focal_px / t.range_m;
        ((h_m * ppm).max(self.min_patch_px), (w_m * ppm).max(self.min_patch_px))
    }
}

pub fn sample_scene<R: Rng + ?Sized>(class: Class, rng: &mut R) -> SceneLatent {
    let Some(sig) = class.signature() else {
        return SceneLatent { class, target: None };
    };
    let target = Target {
        range_m: rng.random_range(RANGE_MIN_M..=RANGE_MAX_M),
        azimuth_rad: rng.random_range(-AZIMUTH_MAX_RAD..=AZIMUTH_MAX_RAD),
        extent_m: rng.random_range(sig.extent.0..=sig.extent.1),
        reflectivity: rng.random_range(sig.reflectivity.0..=sig.reflectivity.1),
    };
    SceneLatent {
        class,
        target: Some(target),
    }
}

/// Noiseless heatmap: an isotropic Gaussian blob at the target's cell.
pub fn radar_signal(s: &SceneLatent, cfg: &SimConfig) -> Vec<f64> {
    let (nr, na) = (cfg.range_bins, cfg.azimuth_bins);
    let mut out = vec![0.0; nr * na];
    let Some(t) = s.target else { return out };
    let (rc, ac) = cfg.radar_cell(&t);
    let peak = cfg.peak_amplitude(&t);
    let spread = cfg.blob_cells_per_m * t.extent_m;
    let inv = 1.0 / (2.0 * spread * spread);
    for r in 0..nr {
        let dr = r as f64 - rc;
        for a in 0..na {
            let da = a as f64 - ac;
            out[r * na + a] = peak * (-(dr * dr + da * da) * inv).exp();
        }
    }
    out
}

/// Heatmap with folded Gaussian noise; values are non-negative.
pub fn render_radar<R: Rng + ?Sized>(s: &SceneLatent, cfg: &SimConfig, rng: &mut R) -> Vec<f64> {
    let mut out = radar_signal(s, cfg);
    let sigma = cfg.effective_sigma_r();
    if sigma > 0.0 {
        let n = Normal::new(0.0, sigma).expect("sigma validated");
        for v in &mut out {
            *v += n.sample(rng).abs();
        }
    }
    out
}

const SUPERSAMPLE: usize = 4;

fn inside(class: Class, u: f64, v: f64) -> bool {
    // u, v in [-1, 1] patch coordinates; v grows downward.
    match class {
        Class::Cyclist => (u - v).abs() < 0.5,
        _ => true,
    }
}

/// Noiseless image, or [`Error::Resample`] when the patch leaves the frame.
pub fn image_signal(s: &SceneLatent, cfg: &SimConfig) -> Result<Vec<f64>> {
    let (h, w) = (cfg.image_height, cfg.image_width);
    let mut out = vec![0.0; h * w];
    let Some(t) = s.target else { return Ok(out) };
    let intensity = s.class.signature().unwrap().intensity;
    let (row, col) = cfg.image_center(&t);
    let (ph, pw) = cfg.patch_size(s.class, &t);
    let (top, bottom) = (row - ph / 2.0, row + ph / 2.0);
    let (left, right) = (col - pw / 2.0, col + pw / 2.0);
    if top < 0.0 || left < 0.0 || bottom > h as f64 || right > w as f64 {
        return Err(Error::Resample);
    }
    let step = 1.0 / SUPERSAMPLE as f64;
    for py in top.floor() as usize..(bottom.ceil() as usize).min(h) {
        for px in left.floor() as usize..(right.ceil() as usize).min(w) {
            let mut hits = 0;
            for sy in 0..SUPERSAMPLE {
                let y = py as f64 + (sy as f64 + 0.5) * step;
                if y < top || y >= bottom {
                    continue;
                }
                for sx in 0..SUPERSAMPLE {
                    let x = px as f64 + (sx as f64 + 0.5) * step;
                    if x < left || x >= right {
                        continue;
                    }
                    let u = 2.0 * (x - col) / pw;
                    let v = 2.0 * (y - row) / ph;
                    if inside(s.class, u, v) {
                        hits += 1;
                    }
                }
            }
            out[py * w + px] = intensity * hits as f64 / (SUPERSAMPLE * SUPERSAMPLE) as f64;
        }
    }
    Ok(out)
}

pub fn render_image<R: Rng + ?Sized>(s: &SceneLatent, cfg: &SimConfig, rng: &mut R) -> Result<Vec<f64>> {
    let mut out = image_signal(s, cfg)?;
    if cfg.sigma_v > 0.0 {
        let n = Normal::new(0.0, cfg.sigma_v).expect("sigma validated");
        for v in &mut out {
            *v += n.sample(rng);
        }
    }
    Ok(out)
}
