//! Classical dark channel prior dehazing.
//!
//! The pipeline estimates a dark channel, picks the atmospheric light from
//! the most haze-opaque pixels, derives a transmission map with an optional
//! guided-filter refinement, and inverts the atmospheric scattering model to
//! recover scene radiance.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::imgcore::{channel_min, min_filter, PlanarImage, Raster3, ScalarField};

/// Global per-channel airlight color, each component in `(0, 1]`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Atmosphere {
    rgb: [f32; 3],
}

impl Atmosphere {
    pub fn new(rgb: [f32; 3]) -> Result<Self> {
        for v in rgb {
            if !(v > 0.0 && v <= 1.0) {
                return Err(Error::validation(format!(
                    "atmospheric light component {v} outside (0, 1]"
                )));
            }
        }
        Ok(Self { rgb })
    }

    pub fn rgb(&self) -> [f32; 3] {
        self.rgb
    }

    pub fn channel(&self, c: usize) -> f32 {
        self.rgb[c]
    }
}

/// Transmission map clamped into `[t0, 1]`.
#[derive(Debug, Clone, PartialEq)]
pub struct TransmissionMap {
    field: ScalarField,
    t0: f32,
}

impl TransmissionMap {
    /// Clamp a raw transmission estimate into `[t0, 1]`.
    pub fn clamped(raw: &ScalarField, t0: f32) -> Result<Self> {
        if !(t0 > 0.0 && t0 <= 1.0) {
            return Err(Error::validation(format!(
                "transmission lower bound {t0} outside (0, 1]"
            )));
        }
        let data = raw.data().iter().map(|&v| v.clamp(t0, 1.0)).collect();
        let field = ScalarField::new(raw.width(), raw.height(), data)?;
        Ok(Self { field, t0 })
    }

    /// Constant transmission field, used by uniform-density haze synthesis.
    pub fn uniform(width: usize, height: usize, value: f32) -> Result<Self> {
        if !(value > 0.0 && value <= 1.0) {
            return Err(Error::validation(format!(
                "uniform transmission {value} outside (0, 1]"
            )));
        }
        Ok(Self {
            field: ScalarField::constant(width, height, value)?,
            t0: value,
        })
    }

    pub fn field(&self) -> &ScalarField {
        &self.field
    }

    pub fn t0(&self) -> f32 {
        self.t0
    }

    pub fn get(&self, x: usize, y: usize) -> f32 {
        self.field.get(x, y)
    }

    pub fn width(&self) -> usize {
        self.field.width()
    }

    pub fn height(&self) -> usize {
        self.field.height()
    }
}

/// Tunables for the dark channel pipeline.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DcpConfig {
    /// Side of the square dark-channel window, odd.
    pub patch: usize,
    /// Haze removal strength in `(0, 1]`; lower keeps more distant haze.
    pub omega: f64,
    /// Transmission lower bound.
    pub t0: f64,
    /// Smooth the raw transmission with the guided filter before clamping.
    pub refine: bool,
    pub guided_radius: usize,
    pub guided_eps: f64,
    /// Fraction of brightest dark-channel pixels considered for the airlight.
    #[serde(default = "default_bright_fraction", skip_serializing)]
    pub bright_fraction: f64,
    /// Average the candidate pixels instead of taking the single best one.
    #[serde(default, skip_serializing)]
    pub average_atmosphere: bool,
}

fn default_bright_fraction() -> f64 {
    0.001
}

impl Default for DcpConfig {
    fn default() -> Self {
        Self {
            patch: 15,
            omega: 0.95,
            t0: 0.1,
            refine: true,
            guided_radius: 40,
            guided_eps: 1e-3,
            bright_fraction: 0.001,
            average_atmosphere: false,
        }
    }
}

impl DcpConfig {
    pub fn validate(&self) -> Result<()> {
        if self.patch == 0 || self.patch % 2 == 0 {
            return Err(Error::validation(format!(
                "patch size must be odd and positive, got {}",
                self.patch
            )));
        }
        if !(self.omega >= 0.0 && self.omega <= 1.0) {
            return Err(Error::validation(format!(
                "omega {} outside [0, 1]",
                self.omega
            )));
        }
        if !(self.t0 > 0.0 && self.t0 < 1.0) {
            return Err(Error::validation(format!(
                "t0 {} outside (0, 1)",
                self.t0
            )));
        }
        if self.guided_radius == 0 {
            return Err(Error::validation("guided filter radius must be at least 1"));
        }
        if !(self.guided_eps > 0.0) {
            return Err(Error::validation(format!(
                "guided filter eps {} must be positive",
                self.guided_eps
            )));
        }
        if !(self.bright_fraction > 0.0 && self.bright_fraction < 1.0) {
            return Err(Error::validation(format!(
                "bright fraction {} outside (0, 1)",
                self.bright_fraction
            )));
        }
        Ok(())
    }
}

/// Windowed minimum of the per-pixel channel minimum.
pub fn dark_channel(img: &PlanarImage, patch: usize) -> Result<ScalarField> {
    min_filter(&channel_min(img), patch)
}

/// Pick the airlight from the brightest dark-channel pixels.
///
/// The top `bright_fraction` of pixels by dark-channel value are candidates
/// (ordered by value descending, then row-major index); among them the pixel
/// with the highest mean RGB intensity wins. Components are clamped away
/// from zero so the scattering model stays invertible.
pub fn estimate_atmosphere(
    img: &PlanarImage,
    dark: &ScalarField,
    bright_fraction: f64,
) -> Result<Atmosphere> {
    estimate_atmosphere_with(img, dark, bright_fraction, false)
}

pub fn estimate_atmosphere_with(
    img: &PlanarImage,
    dark: &ScalarField,
    bright_fraction: f64,
    average: bool,
) -> Result<Atmosphere> {
    if img.width() != dark.width() || img.height() != dark.height() {
        return Err(Error::validation(
            "dark channel dimensions do not match image",
        ));
    }
    if !(bright_fraction > 0.0 && bright_fraction < 1.0) {
        return Err(Error::validation(format!(
            "bright fraction {bright_fraction} outside (0, 1)"
        )));
    }
    let total = img.pixel_count();
    let k = ((bright_fraction * total as f64).floor() as usize).max(1);

    let mut order: Vec<usize> = (0..total).collect();
    order.sort_by(|&a, &b| {
        dark.data()[b]
            .partial_cmp(&dark.data()[a])
            .expect("field values are finite")
            .then(a.cmp(&b))
    });
    let candidates = &order[..k.min(total)];

    let rgb = if average {
        let mut sum = [0.0f64; 3];
        for &idx in candidates {
            for c in 0..3 {
                sum[c] += img.data()[idx * 3 + c] as f64;
            }
        }
        [
            (sum[0] / candidates.len() as f64) as f32,
            (sum[1] / candidates.len() as f64) as f32,
            (sum[2] / candidates.len() as f64) as f32,
        ]
    } else {
        let mut best = candidates[0];
        let mut best_mean = f32::MIN;
        for &idx in candidates {
            let p = &img.data()[idx * 3..idx * 3 + 3];
            let mean = (p[0] + p[1] + p[2]) / 3.0;
            if mean > best_mean {
                best_mean = mean;
                best = idx;
            }
        }
        let p = &img.data()[best * 3..best * 3 + 3];
        [p[0], p[1], p[2]]
    };

    Atmosphere::new(rgb.map(|v| v.max(1e-6)))
}

/// Estimate the transmission map from the normalized dark channel.
///
/// `t = 1 - omega * min_window(min_c(I_c / A_c))`, with the ratio clamped to
/// `[0, 1]` so specular highlights cannot push the estimate negative. The
/// optional guided-filter refinement runs before the `[t0, 1]` clamp so
/// smoothing cannot violate the floor.
pub fn estimate_transmission(
    img: &PlanarImage,
    atm: &Atmosphere,
    cfg: &DcpConfig,
) -> Result<TransmissionMap> {
    cfg.validate()?;
    for c in 0..3 {
        if atm.channel(c) <= 0.0 {
            return Err(Error::validation(
                "atmospheric light components must be positive",
            ));
        }
    }
    let normalized = ScalarField::from_fn(img.width(), img.height(), |x, y| {
        let p = img.pixel(x, y);
        let mut m = f32::INFINITY;
        for c in 0..3 {
            m = m.min((p[c] / atm.channel(c)).clamp(0.0, 1.0));
        }
        m
    })?;
    let windowed = min_filter(&normalized, cfg.patch)?;
    let raw = ScalarField::new(
        img.width(),
        img.height(),
        windowed
            .data()
            .iter()
            .map(|&v| 1.0 - cfg.omega as f32 * v)
            .collect(),
    )?;
    let raw = if cfg.refine {
        guided_filter(img, &raw, cfg.guided_radius, cfg.guided_eps)?
    } else {
        raw
    };
    TransmissionMap::clamped(&raw, cfg.t0 as f32)
}

/// Edge-preserving smoothing of `src` steered by the image structure.
///
/// Per-pixel linear model `q = a * g + b` where `g` is the grayscale guide
/// (mean of RGB), `a = cov(g, src) / (var(g) + eps)` and `b = mean(src) -
/// a * mean(g)`, with box-window statistics that shrink at the borders.
pub fn guided_filter(
    guide: &PlanarImage,
    src: &ScalarField,
    radius: usize,
    eps: f64,
) -> Result<ScalarField> {
    if guide.width() != src.width() || guide.height() != src.height() {
        return Err(Error::validation(
            "guide and source dimensions do not match",
        ));
    }
    if radius == 0 {
        return Err(Error::validation("guided filter radius must be at least 1"));
    }
    if !(eps > 0.0) {
        return Err(Error::validation("guided filter eps must be positive"));
    }
    let (w, h) = (src.width(), src.height());
    let gray: Vec<f64> = guide
        .data()
        .chunks_exact(3)
        .map(|p| (p[0] as f64 + p[1] as f64 + p[2] as f64) / 3.0)
        .collect();
    let p: Vec<f64> = src.data().iter().map(|&v| v as f64).collect();

    let gg: Vec<f64> = gray.iter().map(|v| v * v).collect();
    let gp: Vec<f64> = gray.iter().zip(&p).map(|(a, b)| a * b).collect();

    let mean_g = box_mean(&gray, w, h, radius);
    let mean_p = box_mean(&p, w, h, radius);
    let mean_gg = box_mean(&gg, w, h, radius);
    let mean_gp = box_mean(&gp, w, h, radius);

    let mut out = vec![0.0f32; w * h];
    for i in 0..w * h {
        let var = mean_gg[i] - mean_g[i] * mean_g[i];
        let cov = mean_gp[i] - mean_g[i] * mean_p[i];
        let a = cov / (var + eps);
        let b = mean_p[i] - a * mean_g[i];
        out[i] = (a * gray[i] + b) as f32;
    }
    ScalarField::new(w, h, out)
}

/// Box-window mean with border-shrunk windows, via an integral image.
fn box_mean(values: &[f64], w: usize, h: usize, radius: usize) -> Vec<f64> {
    let mut integral = vec![0.0f64; (w + 1) * (h + 1)];
    for y in 0..h {
        for x in 0..w {
            integral[(y + 1) * (w + 1) + (x + 1)] = values[y * w + x]
                + integral[y * (w + 1) + (x + 1)]
                + integral[(y + 1) * (w + 1) + x]
                - integral[y * (w + 1) + x];
        }
    }
    let mut out = vec![0.0f64; w * h];
    for y in 0..h {
        let y0 = y.saturating_sub(radius);
        let y1 = (y + radius + 1).min(h);
        for x in 0..w {
            let x0 = x.saturating_sub(radius);
            let x1 = (x + radius + 1).min(w);
            let sum = integral[y1 * (w + 1) + x1] - integral[y0 * (w + 1) + x1]
                - integral[y1 * (w + 1) + x0]
                + integral[y0 * (w + 1) + x0];
            out[y * w + x] = sum / ((y1 - y0) * (x1 - x0)) as f64;
        }
    }
    out
}

/// Invert the scattering model without clamping: `J = (I - A) / t + A`.
pub fn recover_radiance(img: &PlanarImage, t: &TransmissionMap, atm: &Atmosphere) -> Raster3 {
    let (w, h) = (img.width(), img.height());
    let mut out = Raster3::zeros(w, h);
    let data = out.data_mut();
    for y in 0..h {
        for x in 0..w {
            let tv = t.get(x, y) as f64;
            let i = (y * w + x) * 3;
            for c in 0..3 {
                let a = atm.channel(c) as f64;
                data[i + c] = (img.data()[i + c] as f64 - a) / tv + a;
            }
        }
    }
    out
}

/// Recovered scene radiance clamped into a displayable image.
pub fn recover_dcp(img: &PlanarImage, t: &TransmissionMap, atm: &Atmosphere) -> PlanarImage {
    recover_radiance(img, t, atm).to_image()
}

/// Full pipeline output with intermediates kept for inspection.
#[derive(Debug, Clone)]
pub struct DehazeOutput {
    pub image: PlanarImage,
    pub transmission: TransmissionMap,
    pub atmosphere: Atmosphere,
}

/// Run the whole dark channel prior pipeline on one image.
pub fn dehaze_dcp(img: &PlanarImage, cfg: &DcpConfig) -> Result<DehazeOutput> {
    cfg.validate()?;
    let dark = dark_channel(img, cfg.patch)?;
    let atmosphere =
        estimate_atmosphere_with(img, &dark, cfg.bright_fraction, cfg.average_atmosphere)?;
    let transmission = estimate_transmission(img, &atmosphere, cfg)?;
    let image = recover_dcp(img, &transmission, &atmosphere);
    Ok(DehazeOutput {
        image,
        transmission,
        atmosphere,
    })
}
