//! Linear regression layer over the scattering-model inversion.
//!
//! The dehazing direction places per-channel weights and a bias on the three
//! recovery terms `I/t`, `A/t`, `A`; the synthesis direction does the same
//! on `J*t`, `A*t`, `A`. Both are trained by plain SGD on a half-mean-squared
//! error against paired clean/hazy images. All regression arithmetic runs in
//! f64 so analytic gradients survive a finite-difference audit.

use std::fmt;
use std::path::{Path, PathBuf};

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::dataset::DatasetManifest;
use crate::dcp::{
    dark_channel, estimate_atmosphere_with, estimate_transmission, Atmosphere, DcpConfig,
    DehazeOutput, TransmissionMap,
};
use crate::error::{Error, Result};
use crate::imgcore::{load_image, PlanarImage, Raster3};

/// Which mapping the regression model realizes.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Direction {
    /// Hazy image in, scene radiance out.
    Dehaze,
    /// Clean image in, synthetic hazy image out.
    Synth,
}

impl fmt::Display for Direction {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Direction::Dehaze => write!(f, "dehaze"),
            Direction::Synth => write!(f, "synth"),
        }
    }
}

/// Three per-channel weights plus a per-channel bias (R, G, B order).
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct RegressionParams {
    pub w0: [f64; 3],
    pub w1: [f64; 3],
    pub w2: [f64; 3],
    pub bias: [f64; 3],
}

impl RegressionParams {
    /// Weights that make the model coincide with the plain scattering-model
    /// inversion (dehaze direction) or the scattering model itself (synth
    /// direction): `(1, -1, 1, 0)` per channel in both cases.
    pub fn identity() -> Self {
        Self {
            w0: [1.0; 3],
            w1: [-1.0; 3],
            w2: [1.0; 3],
            bias: [0.0; 3],
        }
    }

    pub fn validate(&self) -> Result<()> {
        let all = self
            .w0
            .iter()
            .chain(&self.w1)
            .chain(&self.w2)
            .chain(&self.bias);
        for v in all {
            if !v.is_finite() {
                return Err(Error::validation("regression parameter is not finite"));
            }
        }
        Ok(())
    }

    fn weight_mut(&mut self, k: usize) -> &mut [f64; 3] {
        match k {
            0 => &mut self.w0,
            1 => &mut self.w1,
            _ => &mut self.w2,
        }
    }
}

/// The three regressor planes for one image.
#[derive(Debug, Clone)]
pub struct FeaturePlanes {
    pub x0: Raster3,
    pub x1: Raster3,
    pub x2: Raster3,
}

impl FeaturePlanes {
    pub fn width(&self) -> usize {
        self.x0.width()
    }

    pub fn height(&self) -> usize {
        self.x0.height()
    }
}

/// Dehazing-direction regressors: `x0 = I/t`, `x1 = A/t`, `x2 = A`.
pub fn features_dehaze(
    img: &PlanarImage,
    t: &TransmissionMap,
    atm: &Atmosphere,
) -> FeaturePlanes {
    build_features(img, t, atm, |i, tv, a| [i / tv, a / tv, a])
}

/// Synthesis-direction regressors: `x0 = J*t`, `x1 = A*t`, `x2 = A`.
pub fn features_synth(img: &PlanarImage, t: &TransmissionMap, atm: &Atmosphere) -> FeaturePlanes {
    build_features(img, t, atm, |j, tv, a| [j * tv, a * tv, a])
}

fn build_features(
    img: &PlanarImage,
    t: &TransmissionMap,
    atm: &Atmosphere,
    f: impl Fn(f64, f64, f64) -> [f64; 3],
) -> FeaturePlanes {
    let (w, h) = (img.width(), img.height());
    let mut x0 = Raster3::zeros(w, h);
    let mut x1 = Raster3::zeros(w, h);
    let mut x2 = Raster3::zeros(w, h);
    for y in 0..h {
        for x in 0..w {
            let tv = t.get(x, y) as f64;
            let i = (y * w + x) * 3;
            for c in 0..3 {
                let [v0, v1, v2] = f(
                    img.data()[i + c] as f64,
                    tv,
                    atm.channel(c) as f64,
                );
                x0.data_mut()[i + c] = v0;
                x1.data_mut()[i + c] = v1;
                x2.data_mut()[i + c] = v2;
            }
        }
    }
    FeaturePlanes { x0, x1, x2 }
}

/// Evaluate the model: `w0*x0 + w1*x1 + w2*x2 + bias` per channel.
///
/// The output is deliberately unclamped; clamping happens only when a
/// prediction is emitted as an image, never inside training.
pub fn forward(params: &RegressionParams, f: &FeaturePlanes) -> Raster3 {
    let (w, h) = (f.width(), f.height());
    let mut out = Raster3::zeros(w, h);
    let data = out.data_mut();
    for i in 0..w * h {
        for c in 0..3 {
            let j = i * 3 + c;
            data[j] = params.w0[c] * f.x0.data()[j]
                + params.w1[c] * f.x1.data()[j]
                + params.w2[c] * f.x2.data()[j]
                + params.bias[c];
        }
    }
    out
}

/// Evaluate the model and clamp into a displayable image.
pub fn forward_image(params: &RegressionParams, f: &FeaturePlanes) -> PlanarImage {
    forward(params, f).to_image()
}

fn check_dims(pw: usize, ph: usize, target: &PlanarImage) -> Result<()> {
    if pw != target.width() || ph != target.height() {
        return Err(Error::validation(format!(
            "prediction {}x{} does not match target {}x{}",
            pw,
            ph,
            target.width(),
            target.height()
        )));
    }
    Ok(())
}

/// Half mean squared error per channel: `(1/2n) * sum((target - pred)^2)`
/// with `n` the pixel count.
pub fn channel_losses(pred: &Raster3, target: &PlanarImage) -> Result<[f64; 3]> {
    check_dims(pred.width(), pred.height(), target)?;
    let n = target.pixel_count() as f64;
    let mut se = [0.0f64; 3];
    for (i, (&p, &t)) in pred.data().iter().zip(target.data()).enumerate() {
        let r = t as f64 - p;
        se[i % 3] += r * r;
    }
    Ok(se.map(|s| s / (2.0 * n)))
}

/// Half mean squared error, averaged over the three channels for reporting.
pub fn mse_loss(pred: &Raster3, target: &PlanarImage) -> Result<f64> {
    let losses = channel_losses(pred, target)?;
    Ok((losses[0] + losses[1] + losses[2]) / 3.0)
}

/// Gradient of the per-channel half-MSE loss with respect to every
/// parameter component.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ParamGradients {
    /// `d loss_c / d w_k[c]`, indexed `[k][c]`.
    pub weights: [[f64; 3]; 3],
    /// `d loss_c / d bias[c]`.
    pub bias: [f64; 3],
}

/// Analytic gradient of the per-channel loss over the whole image.
pub fn loss_gradients(
    params: &RegressionParams,
    f: &FeaturePlanes,
    target: &PlanarImage,
) -> Result<ParamGradients> {
    check_dims(f.width(), f.height(), target)?;
    let n = target.pixel_count();
    Ok(loss_gradients_range(params, f, target, 0, n).1)
}

/// One SGD update over the full image: `w <- w - lr * dL/dw` per channel.
pub fn sgd_step(
    params: &RegressionParams,
    f: &FeaturePlanes,
    target: &PlanarImage,
    lr: f64,
) -> Result<RegressionParams> {
    if !(lr > 0.0) {
        return Err(Error::validation(format!(
            "learning rate {lr} must be positive"
        )));
    }
    check_dims(f.width(), f.height(), target)?;
    let mut next = *params;
    let n = target.pixel_count();
    let (_, grads) = loss_gradients_range(params, f, target, 0, n);
    apply_gradients(&mut next, &grads, lr);
    Ok(next)
}

/// Losses and gradients over the pixel range `[p0, p1)`, normalized by the
/// range length. Sums run sequentially in pixel order so results are
/// bit-reproducible.
fn loss_gradients_range(
    params: &RegressionParams,
    f: &FeaturePlanes,
    target: &PlanarImage,
    p0: usize,
    p1: usize,
) -> ([f64; 3], ParamGradients) {
    let n = (p1 - p0) as f64;
    let mut se = [0.0f64; 3];
    let mut gw = [[0.0f64; 3]; 3];
    let mut gb = [0.0f64; 3];
    let (x0, x1, x2) = (f.x0.data(), f.x1.data(), f.x2.data());
    for p in p0..p1 {
        for c in 0..3 {
            let j = p * 3 + c;
            let pred = params.w0[c] * x0[j]
                + params.w1[c] * x1[j]
                + params.w2[c] * x2[j]
                + params.bias[c];
            let r = target.data()[j] as f64 - pred;
            se[c] += r * r;
            gw[0][c] += r * x0[j];
            gw[1][c] += r * x1[j];
            gw[2][c] += r * x2[j];
            gb[c] += r;
        }
    }
    let losses = se.map(|s| s / (2.0 * n));
    let grads = ParamGradients {
        weights: gw.map(|row| row.map(|g| -g / n)),
        bias: gb.map(|g| -g / n),
    };
    (losses, grads)
}

fn apply_gradients(params: &mut RegressionParams, grads: &ParamGradients, lr: f64) {
    for k in 0..3 {
        let w = params.weight_mut(k);
        for c in 0..3 {
            w[c] -= lr * grads.weights[k][c];
        }
    }
    for c in 0..3 {
        params.bias[c] -= lr * grads.bias[c];
    }
}

/// Hyperparameters for SGD training.
#[derive(Debug, Clone, PartialEq)]
pub struct TrainConfig {
    pub learning_rate: f64,
    pub epochs: usize,
    /// Pixels per SGD step; `None` uses one full image per step.
    pub batch: Option<usize>,
    pub seed: u64,
    /// Estimate training-time transmission with guided-filter refinement.
    pub use_refined_t: bool,
    pub shuffle: bool,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            learning_rate: 1e-3,
            epochs: 50,
            batch: None,
            seed: 0,
            use_refined_t: true,
            shuffle: true,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.learning_rate > 0.0) {
            return Err(Error::validation(format!(
                "learning rate {} must be positive",
                self.learning_rate
            )));
        }
        if self.epochs == 0 {
            return Err(Error::validation("epoch count must be at least 1"));
        }
        if self.batch == Some(0) {
            return Err(Error::validation("batch size must be at least 1"));
        }
        Ok(())
    }
}

/// Mean loss of one training epoch.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct EpochLoss {
    pub epoch: usize,
    pub mean_loss: f64,
}

/// A training pair that could not be used, with the reason.
#[derive(Debug, Clone)]
pub struct SkippedPair {
    pub clean_path: PathBuf,
    pub hazy_path: Option<PathBuf>,
    pub message: String,
}

/// Per-epoch losses plus any pairs that were skipped while loading.
#[derive(Debug, Clone, Default)]
pub struct TrainingReport {
    pub epochs: Vec<EpochLoss>,
    pub skipped: Vec<SkippedPair>,
}

impl TrainingReport {
    pub fn final_mean_loss(&self) -> Option<f64> {
        self.epochs.last().map(|e| e.mean_loss)
    }

    /// One JSON record per epoch: `{"epoch": k, "mean_loss": v}`.
    pub fn to_jsonl(&self) -> String {
        let mut out = String::new();
        for e in &self.epochs {
            out.push_str(&serde_json::to_string(e).expect("epoch record serializes"));
            out.push('\n');
        }
        out
    }

    pub fn save_jsonl(&self, path: &Path) -> Result<()> {
        std::fs::write(path, self.to_jsonl()).map_err(|e| Error::io(path, e))
    }
}

struct TrainItem {
    features: FeaturePlanes,
    target: PlanarImage,
}

/// Train the regression parameters on a paired dataset.
///
/// Transmission and atmospheric light are always estimated from the hazy
/// image of a pair; the direction only decides which image provides the
/// regressors and which is the target. Parameters start at the identity
/// element so the model begins exactly at plain-DCP quality. Deterministic
/// for a fixed seed.
pub fn train(
    manifest: &DatasetManifest,
    direction: Direction,
    dcp_cfg: &DcpConfig,
    cfg: &TrainConfig,
) -> Result<(RegressionParams, TrainingReport)> {
    cfg.validate()?;
    dcp_cfg.validate()?;
    if manifest.is_empty() {
        return Err(Error::validation("training manifest is empty"));
    }
    let mut pipeline_cfg = dcp_cfg.clone();
    pipeline_cfg.refine = cfg.use_refined_t;

    let mut report = TrainingReport::default();
    let mut items: Vec<TrainItem> = Vec::new();
    for row in manifest.rows() {
        match prepare_item(row.clean_path(), row.hazy_path(), direction, &pipeline_cfg) {
            Ok(item) => items.push(item),
            Err(e) => report.skipped.push(SkippedPair {
                clean_path: row.clean_path().to_path_buf(),
                hazy_path: row.hazy_path().map(Path::to_path_buf),
                message: e.to_string(),
            }),
        }
    }
    if items.is_empty() {
        return Err(Error::validation(format!(
            "no usable training pairs: all {} rows failed to load",
            manifest.len()
        )));
    }

    let mut params = RegressionParams::identity();
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let mut order: Vec<usize> = (0..items.len()).collect();
    for epoch in 1..=cfg.epochs {
        if cfg.shuffle {
            order.shuffle(&mut rng);
        }
        let mut loss_sum = 0.0;
        for &idx in &order {
            loss_sum += train_on_item(&mut params, &items[idx], cfg.learning_rate, cfg.batch);
        }
        report.epochs.push(EpochLoss {
            epoch,
            mean_loss: loss_sum / items.len() as f64,
        });
    }
    Ok((params, report))
}

fn prepare_item(
    clean_path: &Path,
    hazy_path: Option<&Path>,
    direction: Direction,
    cfg: &DcpConfig,
) -> Result<TrainItem> {
    let hazy_path =
        hazy_path.ok_or_else(|| Error::validation("row has no hazy image path"))?;
    let clean = load_image(clean_path)?;
    let hazy = load_image(hazy_path)?;
    if !clean.same_dimensions(&hazy) {
        return Err(Error::validation(format!(
            "pair dimensions differ: clean {}x{}, hazy {}x{}",
            clean.width(),
            clean.height(),
            hazy.width(),
            hazy.height()
        )));
    }
    let dark = dark_channel(&hazy, cfg.patch)?;
    let atm = estimate_atmosphere_with(&hazy, &dark, cfg.bright_fraction, cfg.average_atmosphere)?;
    let t = estimate_transmission(&hazy, &atm, cfg)?;
    let (features, target) = match direction {
        Direction::Dehaze => (features_dehaze(&hazy, &t, &atm), clean),
        Direction::Synth => (features_synth(&clean, &t, &atm), hazy),
    };
    Ok(TrainItem { features, target })
}

/// Run SGD over one image, chunked into `batch`-pixel steps, returning the
/// pre-update loss averaged over the image.
fn train_on_item(
    params: &mut RegressionParams,
    item: &TrainItem,
    lr: f64,
    batch: Option<usize>,
) -> f64 {
    let total = item.target.pixel_count();
    let step = batch.unwrap_or(total).clamp(1, total);
    let mut weighted_loss = 0.0;
    let mut p0 = 0;
    while p0 < total {
        let p1 = (p0 + step).min(total);
        let (losses, grads) = loss_gradients_range(params, &item.features, &item.target, p0, p1);
        weighted_loss += (losses[0] + losses[1] + losses[2]) / 3.0 * (p1 - p0) as f64;
        apply_gradients(params, &grads, lr);
        p0 = p1;
    }
    weighted_loss / total as f64
}

/// Trained parameters together with the pipeline configuration they were
/// trained against, so inference reproduces the training-time estimates.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainedModel {
    pub direction: Direction,
    pub w0: [f64; 3],
    pub w1: [f64; 3],
    pub w2: [f64; 3],
    pub bias: [f64; 3],
    pub dcp: DcpConfig,
}

impl TrainedModel {
    pub fn new(direction: Direction, params: RegressionParams, dcp: DcpConfig) -> Self {
        Self {
            direction,
            w0: params.w0,
            w1: params.w1,
            w2: params.w2,
            bias: params.bias,
            dcp,
        }
    }

    pub fn params(&self) -> RegressionParams {
        RegressionParams {
            w0: self.w0,
            w1: self.w1,
            w2: self.w2,
            bias: self.bias,
        }
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("model serializes")
    }

    pub fn from_json(text: &str) -> Result<Self> {
        let model: TrainedModel = serde_json::from_str(text)
            .map_err(|e| Error::validation(format!("invalid params file: {e}")))?;
        model.params().validate()?;
        model.dcp.validate()?;
        Ok(model)
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        std::fs::write(path, self.to_json()).map_err(|e| Error::io(path, e))
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::from_json(&text)
    }
}

/// Dehaze one image with trained parameters, returning intermediates.
pub fn dehaze_mldcp(img: &PlanarImage, model: &TrainedModel) -> Result<DehazeOutput> {
    if model.direction != Direction::Dehaze {
        return Err(Error::validation(format!(
            "params file has direction \"{}\", expected \"dehaze\"",
            model.direction
        )));
    }
    let cfg = &model.dcp;
    cfg.validate()?;
    let dark = dark_channel(img, cfg.patch)?;
    let atmosphere =
        estimate_atmosphere_with(img, &dark, cfg.bright_fraction, cfg.average_atmosphere)?;
    let transmission = estimate_transmission(img, &atmosphere, cfg)?;
    let features = features_dehaze(img, &transmission, &atmosphere);
    let image = forward_image(&model.params(), &features);
    Ok(DehazeOutput {
        image,
        transmission,
        atmosphere,
    })
}
