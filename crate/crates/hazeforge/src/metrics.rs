//! Full-reference image quality metrics: PSNR and single-scale SSIM.
//!
//! PSNR uses a unit peak on normalized images. SSIM follows the reference
//! formulation: luma plane, 11x11 Gaussian window with sigma 1.5,
//! `C1 = 0.01^2`, `C2 = 0.03^2`, averaged over fully interior window
//! positions.

use std::path::{Path, PathBuf};

use serde::Serialize;

use crate::dataset::DatasetManifest;
use crate::error::{Error, Result};
use crate::imgcore::{load_image, PlanarImage};

const SSIM_WINDOW: usize = 11;
const SSIM_SIGMA: f64 = 1.5;
const SSIM_C1: f64 = 0.01 * 0.01;
const SSIM_C2: f64 = 0.03 * 0.03;

/// Quality of one restored image against its reference.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct MetricReport {
    /// Decibels; `f64::INFINITY` for identical images (serialized as null).
    pub psnr: f64,
    pub ssim: f64,
}

fn check_dims(a: &PlanarImage, b: &PlanarImage) -> Result<()> {
    if !a.same_dimensions(b) {
        return Err(Error::validation(format!(
            "image dimensions differ: {}x{} vs {}x{}",
            a.width(),
            a.height(),
            b.width(),
            b.height()
        )));
    }
    Ok(())
}

/// Peak signal-to-noise ratio in dB for unit dynamic range.
pub fn psnr(a: &PlanarImage, b: &PlanarImage) -> Result<f64> {
    check_dims(a, b)?;
    let mut se = 0.0f64;
    for (&x, &y) in a.data().iter().zip(b.data()) {
        let d = x as f64 - y as f64;
        se += d * d;
    }
    let mse = se / a.data().len() as f64;
    if mse == 0.0 {
        Ok(f64::INFINITY)
    } else {
        Ok(10.0 * (1.0 / mse).log10())
    }
}

fn luma(img: &PlanarImage) -> Vec<f64> {
    img.data()
        .chunks_exact(3)
        .map(|p| 0.299 * p[0] as f64 + 0.587 * p[1] as f64 + 0.114 * p[2] as f64)
        .collect()
}

fn gaussian_kernel() -> [f64; SSIM_WINDOW] {
    let mut k = [0.0f64; SSIM_WINDOW];
    let mid = (SSIM_WINDOW / 2) as f64;
    let mut sum = 0.0;
    for (i, v) in k.iter_mut().enumerate() {
        let d = i as f64 - mid;
        *v = (-d * d / (2.0 * SSIM_SIGMA * SSIM_SIGMA)).exp();
        sum += *v;
    }
    for v in &mut k {
        *v /= sum;
    }
    k
}

/// Separable Gaussian filter evaluated only at fully interior positions;
/// output is `(w - 10) x (h - 10)`.
fn gaussian_valid(plane: &[f64], w: usize, h: usize, kernel: &[f64; SSIM_WINDOW]) -> Vec<f64> {
    let ow = w - (SSIM_WINDOW - 1);
    let oh = h - (SSIM_WINDOW - 1);
    let mut horiz = vec![0.0f64; ow * h];
    for y in 0..h {
        for x in 0..ow {
            let mut acc = 0.0;
            for (k, &g) in kernel.iter().enumerate() {
                acc += g * plane[y * w + x + k];
            }
            horiz[y * ow + x] = acc;
        }
    }
    let mut out = vec![0.0f64; ow * oh];
    for y in 0..oh {
        for x in 0..ow {
            let mut acc = 0.0;
            for (k, &g) in kernel.iter().enumerate() {
                acc += g * horiz[(y + k) * ow + x];
            }
            out[y * ow + x] = acc;
        }
    }
    out
}

/// Mean structural similarity over valid window positions.
pub fn ssim(a: &PlanarImage, b: &PlanarImage) -> Result<f64> {
    check_dims(a, b)?;
    let (w, h) = (a.width(), a.height());
    if w < SSIM_WINDOW || h < SSIM_WINDOW {
        return Err(Error::validation(format!(
            "ssim requires at least {SSIM_WINDOW}x{SSIM_WINDOW} images, got {w}x{h}"
        )));
    }
    let la = luma(a);
    let lb = luma(b);
    let aa: Vec<f64> = la.iter().map(|v| v * v).collect();
    let bb: Vec<f64> = lb.iter().map(|v| v * v).collect();
    let ab: Vec<f64> = la.iter().zip(&lb).map(|(x, y)| x * y).collect();

    let kernel = gaussian_kernel();
    let mu_a = gaussian_valid(&la, w, h, &kernel);
    let mu_b = gaussian_valid(&lb, w, h, &kernel);
    let e_aa = gaussian_valid(&aa, w, h, &kernel);
    let e_bb = gaussian_valid(&bb, w, h, &kernel);
    let e_ab = gaussian_valid(&ab, w, h, &kernel);

    let mut sum = 0.0f64;
    for i in 0..mu_a.len() {
        let (ma, mb) = (mu_a[i], mu_b[i]);
        let va = e_aa[i] - ma * ma;
        let vb = e_bb[i] - mb * mb;
        let cov = e_ab[i] - ma * mb;
        let num = (2.0 * ma * mb + SSIM_C1) * (2.0 * cov + SSIM_C2);
        let den = (ma * ma + mb * mb + SSIM_C1) * (va + vb + SSIM_C2);
        sum += num / den;
    }
    Ok(sum / mu_a.len() as f64)
}

/// Metrics for one manifest pair.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct EvalRow {
    pub pair_id: usize,
    pub psnr_db: f64,
    pub ssim: f64,
}

/// A pair that could not be evaluated.
#[derive(Debug, Clone, Serialize)]
pub struct EvalFailure {
    pub pair_id: usize,
    pub clean_path: PathBuf,
    pub message: String,
}

/// Per-pair metrics with summary means.
#[derive(Debug, Clone, Default)]
pub struct EvalTable {
    pub rows: Vec<EvalRow>,
    pub failures: Vec<EvalFailure>,
}

#[derive(Serialize)]
struct EvalSummary {
    pairs: usize,
    failures: usize,
    mean_psnr: Option<f64>,
    mean_ssim: Option<f64>,
}

impl EvalTable {
    pub fn mean_psnr(&self) -> Option<f64> {
        mean(self.rows.iter().map(|r| r.psnr_db))
    }

    pub fn mean_ssim(&self) -> Option<f64> {
        mean(self.rows.iter().map(|r| r.ssim))
    }

    /// CSV with header `pair_id,psnr_db,ssim`.
    pub fn write_csv(&self, path: &Path) -> Result<()> {
        let mut out = String::from("pair_id,psnr_db,ssim\n");
        for row in &self.rows {
            out.push_str(&format!("{},{},{}\n", row.pair_id, row.psnr_db, row.ssim));
        }
        std::fs::write(path, out).map_err(|e| Error::io(path, e))
    }

    /// JSON summary `{pairs, failures, mean_psnr, mean_ssim}`; non-finite
    /// means serialize as null.
    pub fn summary_json(&self) -> String {
        serde_json::to_string_pretty(&EvalSummary {
            pairs: self.rows.len(),
            failures: self.failures.len(),
            mean_psnr: self.mean_psnr(),
            mean_ssim: self.mean_ssim(),
        })
        .expect("summary serializes")
    }

    pub fn write_summary_json(&self, path: &Path) -> Result<()> {
        std::fs::write(path, self.summary_json()).map_err(|e| Error::io(path, e))
    }
}

fn mean(values: impl Iterator<Item = f64>) -> Option<f64> {
    let mut sum = 0.0;
    let mut count = 0usize;
    for v in values {
        sum += v;
        count += 1;
    }
    (count > 0).then(|| sum / count as f64)
}

/// Restore every hazy image in the manifest and score it against its clean
/// reference. Rows are processed and reported in manifest order; per-item
/// failures are recorded and excluded from the means.
pub fn evaluate_pairs(
    manifest: &DatasetManifest,
    restorer: impl Fn(&PlanarImage) -> Result<PlanarImage>,
) -> EvalTable {
    let mut table = EvalTable::default();
    for (pair_id, row) in manifest.rows().iter().enumerate() {
        let result = (|| -> Result<EvalRow> {
            let hazy_path = row
                .hazy_path()
                .ok_or_else(|| Error::validation("row has no hazy image path"))?;
            let clean = load_image(row.clean_path())?;
            let hazy = load_image(hazy_path)?;
            let restored = restorer(&hazy)?;
            Ok(EvalRow {
                pair_id,
                psnr_db: psnr(&restored, &clean)?,
                ssim: ssim(&restored, &clean)?,
            })
        })();
        match result {
            Ok(row) => table.rows.push(row),
            Err(e) => table.failures.push(EvalFailure {
                pair_id,
                clean_path: row.clean_path().to_path_buf(),
                message: e.to_string(),
            }),
        }
    }
    table
}
