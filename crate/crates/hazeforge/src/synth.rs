//! Density-controlled synthetic haze generation.
//!
//! A uniform haze of density `d` is a constant transmission field `t = 1 - d`
//! pushed through the synthesis-direction regression model. With the plain
//! scattering-model weights this reduces to blending each pixel toward the
//! airlight: `(1 - d) * J + d * A`.

use std::collections::HashSet;
use std::path::{Path, PathBuf};

use crate::dataset::{DatasetManifest, ManifestRow};
use crate::dcp::{dark_channel, estimate_atmosphere_with, Atmosphere, DcpConfig, TransmissionMap};
use crate::error::{Error, Result};
use crate::imgcore::{load_image, save_image, PlanarImage, Raster3};
use crate::mlr::{features_synth, forward, Direction, RegressionParams, TrainedModel};

/// How much haze to add and with which model.
#[derive(Debug, Clone)]
pub struct HazeSpec {
    /// Uniform haze density in `[0, 1)`; transmission is `1 - density`.
    pub density: f64,
    /// Fixed airlight; when absent it is estimated from the clean image.
    pub atmosphere_override: Option<Atmosphere>,
    pub params: RegressionParams,
    pub direction: Direction,
}

impl HazeSpec {
    /// Pure scattering-model haze with no learned correction.
    pub fn physical(density: f64) -> Self {
        Self {
            density,
            atmosphere_override: None,
            params: RegressionParams::identity(),
            direction: Direction::Synth,
        }
    }

    pub fn from_model(density: f64, model: &TrainedModel) -> Self {
        Self {
            density,
            atmosphere_override: None,
            params: model.params(),
            direction: model.direction,
        }
    }

    pub fn with_atmosphere(mut self, atm: Atmosphere) -> Self {
        self.atmosphere_override = Some(atm);
        self
    }

    fn validate(&self) -> Result<()> {
        if self.direction != Direction::Synth {
            return Err(Error::validation(format!(
                "haze synthesis requires synth-direction params, got \"{}\"",
                self.direction
            )));
        }
        if !(0.0..1.0).contains(&self.density) {
            return Err(Error::validation(format!(
                "haze density {} outside [0, 1)",
                self.density
            )));
        }
        self.params.validate()
    }
}

fn synth_atmosphere(
    clean: &PlanarImage,
    spec: &HazeSpec,
    dcp_cfg: &DcpConfig,
) -> Result<Atmosphere> {
    match spec.atmosphere_override {
        Some(atm) => Ok(atm),
        None => {
            let dark = dark_channel(clean, dcp_cfg.patch)?;
            estimate_atmosphere_with(
                clean,
                &dark,
                dcp_cfg.bright_fraction,
                dcp_cfg.average_atmosphere,
            )
        }
    }
}

/// Model output before clamping, for closed-form checks.
pub fn synthesize_radiance(
    clean: &PlanarImage,
    spec: &HazeSpec,
    dcp_cfg: &DcpConfig,
) -> Result<Raster3> {
    spec.validate()?;
    dcp_cfg.validate()?;
    let atm = synth_atmosphere(clean, spec, dcp_cfg)?;
    let t = TransmissionMap::uniform(
        clean.width(),
        clean.height(),
        1.0 - spec.density as f32,
    )?;
    let features = features_synth(clean, &t, &atm);
    Ok(forward(&spec.params, &features))
}

/// Add uniform haze to a clean image.
pub fn synthesize(
    clean: &PlanarImage,
    spec: &HazeSpec,
    dcp_cfg: &DcpConfig,
) -> Result<PlanarImage> {
    Ok(synthesize_radiance(clean, spec, dcp_cfg)?.to_image())
}

/// One clean image that could not be hazed.
#[derive(Debug, Clone)]
pub struct SynthFailure {
    pub clean_path: PathBuf,
    pub message: String,
}

/// Outcome of a dataset synthesis run.
#[derive(Debug, Clone)]
pub struct SynthesisRun {
    /// Pairs each clean image with its synthetic counterpart.
    pub manifest: DatasetManifest,
    pub failures: Vec<SynthFailure>,
}

/// Haze every clean image referenced by the manifest into `out_dir`.
///
/// Relative layout under the manifest's base directory is preserved and
/// outputs are always PNG. Duplicate clean paths are processed once. Item
/// failures are recorded and their rows dropped from the output manifest.
pub fn synthesize_dataset(
    manifest: &DatasetManifest,
    spec: &HazeSpec,
    out_dir: &Path,
    dcp_cfg: &DcpConfig,
) -> Result<SynthesisRun> {
    spec.validate()?;
    dcp_cfg.validate()?;
    std::fs::create_dir_all(out_dir).map_err(|e| Error::io(out_dir, e))?;

    let mut seen = HashSet::new();
    let mut rows = Vec::new();
    let mut failures = Vec::new();
    for row in manifest.rows() {
        let clean_path = row.clean_path();
        if !seen.insert(clean_path.to_path_buf()) {
            continue;
        }
        let relative = manifest
            .base_dir()
            .and_then(|base| clean_path.strip_prefix(base).ok())
            .map(Path::to_path_buf)
            .unwrap_or_else(|| PathBuf::from(clean_path.file_name().unwrap_or_default()));
        let out_path = out_dir.join(relative).with_extension("png");

        let result = (|| -> Result<()> {
            if let Some(parent) = out_path.parent() {
                std::fs::create_dir_all(parent).map_err(|e| Error::io(parent, e))?;
            }
            let clean = load_image(clean_path)?;
            let hazy = synthesize(&clean, spec, dcp_cfg)?;
            save_image(&hazy, &out_path)
        })();
        match result {
            Ok(()) => rows.push(ManifestRow::new(
                clean_path.to_path_buf(),
                Some(out_path),
                Some(spec.density),
            )),
            Err(e) => failures.push(SynthFailure {
                clean_path: clean_path.to_path_buf(),
                message: e.to_string(),
            }),
        }
    }
    let manifest = DatasetManifest::new(rows)?.with_base_dir(out_dir.to_path_buf());
    Ok(SynthesisRun { manifest, failures })
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn random_image(rng: &mut ChaCha8Rng, w: usize, h: usize) -> PlanarImage {
        PlanarImage::from_fn(w, h, |_, _| {
            [
                rng.random_range(0.0..=1.0),
                rng.random_range(0.0..=1.0),
                rng.random_range(0.0..=1.0),
            ]
        })
        .unwrap()
    }

    fn fixed_atmosphere() -> Atmosphere {
        Atmosphere::new([0.9, 0.9, 0.9]).unwrap()
    }

    #[test]
    fn zero_density_with_scattering_params_is_identity() {
        let mut rng = ChaCha8Rng::seed_from_u64(163);
        let clean = random_image(&mut rng, 12, 9);
        let spec = HazeSpec::physical(0.0).with_atmosphere(fixed_atmosphere());
        let out = synthesize(&clean, &spec, &DcpConfig::default()).unwrap();
        for (a, b) in out.data().iter().zip(clean.data()) {
            assert!((a - b).abs() < 1e-6);
        }
    }

    #[test]
    fn zero_density_with_all_ones_params_gives_j_plus_two_a() {
        // beta = (1, 1, 1), b = 0 at t = 1 evaluates to J + 2A before the
        // clamp; checked against a direct loop.
        let mut rng = ChaCha8Rng::seed_from_u64(167);
        let clean = random_image(&mut rng, 6, 6);
        let spec = HazeSpec {
            density: 0.0,
            atmosphere_override: Some(fixed_atmosphere()),
            params: RegressionParams {
                w0: [1.0; 3],
                w1: [1.0; 3],
                w2: [1.0; 3],
                bias: [0.0; 3],
            },
            direction: Direction::Synth,
        };
        let raw = synthesize_radiance(&clean, &spec, &DcpConfig::default()).unwrap();
        let airlight = 0.9f32 as f64;
        for y in 0..6 {
            for x in 0..6 {
                for c in 0..3 {
                    let expect = clean.sample(x, y, c) as f64 + 2.0 * airlight;
                    assert!((raw.get(x, y, c) - expect).abs() < 1e-9);
                }
            }
        }
    }

    #[test]
    fn scattering_params_match_the_blend_closed_form() {
        let mut rng = ChaCha8Rng::seed_from_u64(173);
        for density in [0.1f64, 0.2, 0.35] {
            let clean = random_image(&mut rng, 10, 8);
            let spec = HazeSpec::physical(density).with_atmosphere(fixed_atmosphere());
            let raw = synthesize_radiance(&clean, &spec, &DcpConfig::default()).unwrap();
            for y in 0..8 {
                for x in 0..10 {
                    for c in 0..3 {
                        let j = clean.sample(x, y, c) as f64;
                        let expect = j * (1.0 - density) + 0.9 * density;
                        assert!((raw.get(x, y, c) - expect).abs() < 1e-6);
                    }
                }
            }
        }
    }

    #[test]
    fn deviation_from_clean_grows_with_density() {
        let mut rng = ChaCha8Rng::seed_from_u64(179);
        let clean = random_image(&mut rng, 16, 16);
        let mad = |density: f64| {
            let spec = HazeSpec::physical(density).with_atmosphere(fixed_atmosphere());
            let hazy = synthesize(&clean, &spec, &DcpConfig::default()).unwrap();
            hazy.data()
                .iter()
                .zip(clean.data())
                .map(|(a, b)| (a - b).abs() as f64)
                .sum::<f64>()
                / clean.data().len() as f64
        };
        assert!(mad(0.2) > mad(0.1));
    }

    #[test]
    fn distance_to_airlight_never_grows_with_density() {
        let mut rng = ChaCha8Rng::seed_from_u64(181);
        let clean = random_image(&mut rng, 8, 8);
        let spec1 = HazeSpec::physical(0.1).with_atmosphere(fixed_atmosphere());
        let spec2 = HazeSpec::physical(0.3).with_atmosphere(fixed_atmosphere());
        let h1 = synthesize_radiance(&clean, &spec1, &DcpConfig::default()).unwrap();
        let h2 = synthesize_radiance(&clean, &spec2, &DcpConfig::default()).unwrap();
        for (a, b) in h1.data().iter().zip(h2.data()) {
            assert!((b - 0.9).abs() <= (a - 0.9).abs() + 1e-12);
        }
    }

    #[test]
    fn synthesis_is_deterministic() {
        let mut rng = ChaCha8Rng::seed_from_u64(191);
        let clean = random_image(&mut rng, 14, 14);
        let spec = HazeSpec::physical(0.25).with_atmosphere(fixed_atmosphere());
        let a = synthesize(&clean, &spec, &DcpConfig::default()).unwrap();
        let b = synthesize(&clean, &spec, &DcpConfig::default()).unwrap();
        assert_eq!(a, b);
    }

    #[test]
    fn output_stays_in_unit_range() {
        let mut rng = ChaCha8Rng::seed_from_u64(193);
        for _ in 0..10 {
            let clean = random_image(&mut rng, 8, 8);
            let spec = HazeSpec {
                density: rng.random_range(0.0..1.0),
                atmosphere_override: Some(fixed_atmosphere()),
                params: RegressionParams {
                    w0: [rng.random_range(0.5..1.5); 3],
                    w1: [rng.random_range(-1.5..0.5); 3],
                    w2: [rng.random_range(0.5..1.5); 3],
                    bias: [rng.random_range(-0.2..0.2); 3],
                },
                direction: Direction::Synth,
            };
            let out = synthesize(&clean, &spec, &DcpConfig::default()).unwrap();
            assert!(out.data().iter().all(|v| (0.0..=1.0).contains(v)));
        }
    }

    #[test]
    fn rejects_wrong_direction_and_out_of_range_density() {
        let clean = PlanarImage::from_fn(4, 4, |_, _| [0.5; 3]).unwrap();
        let mut spec = HazeSpec::physical(0.2);
        spec.direction = Direction::Dehaze;
        assert!(synthesize(&clean, &spec, &DcpConfig::default()).is_err());
        assert!(synthesize(&clean, &HazeSpec::physical(1.0), &DcpConfig::default()).is_err());
        assert!(synthesize(&clean, &HazeSpec::physical(-0.1), &DcpConfig::default()).is_err());
    }

    #[test]
    fn dataset_synthesis_is_idempotent_and_bijective() {
        let dir = tempfile::tempdir().unwrap();
        let src = dir.path().join("src");
        let out = dir.path().join("out");
        std::fs::create_dir_all(&src).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(197);
        let mut rows = Vec::new();
        for i in 0..3 {
            let img = random_image(&mut rng, 16, 16);
            let path = src.join(format!("img_{i}.png"));
            save_image(&img, &path).unwrap();
            rows.push(ManifestRow::new(path, None, None));
        }
        let manifest = DatasetManifest::new(rows)
            .unwrap()
            .with_base_dir(src.clone());
        let spec = HazeSpec::physical(0.2).with_atmosphere(fixed_atmosphere());

        let run1 = synthesize_dataset(&manifest, &spec, &out, &DcpConfig::default()).unwrap();
        assert_eq!(run1.manifest.len(), 3);
        assert!(run1.failures.is_empty());
        let bytes1: Vec<Vec<u8>> = run1
            .manifest
            .rows()
            .iter()
            .map(|r| std::fs::read(r.hazy_path().unwrap()).unwrap())
            .collect();

        let run2 = synthesize_dataset(&manifest, &spec, &out, &DcpConfig::default()).unwrap();
        let bytes2: Vec<Vec<u8>> = run2
            .manifest
            .rows()
            .iter()
            .map(|r| std::fs::read(r.hazy_path().unwrap()).unwrap())
            .collect();
        assert_eq!(bytes1, bytes2);
        for row in run1.manifest.rows() {
            assert_eq!(row.haze_level(), Some(0.2));
        }
    }

    #[test]
    fn dataset_synthesis_records_per_item_failures() {
        let dir = tempfile::tempdir().unwrap();
        let src = dir.path().join("src");
        let out = dir.path().join("out");
        std::fs::create_dir_all(&src).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(199);
        let good = src.join("good.png");
        save_image(&random_image(&mut rng, 8, 8), &good).unwrap();
        let manifest = DatasetManifest::new(vec![
            ManifestRow::new(good, None, None),
            ManifestRow::new(src.join("missing.png"), None, None),
        ])
        .unwrap()
        .with_base_dir(src);
        let spec = HazeSpec::physical(0.1).with_atmosphere(fixed_atmosphere());
        let run = synthesize_dataset(&manifest, &spec, &out, &DcpConfig::default()).unwrap();
        assert_eq!(run.manifest.len(), 1);
        assert_eq!(run.failures.len(), 1);
    }

    #[test]
    fn empty_manifest_produces_empty_output() {
        let dir = tempfile::tempdir().unwrap();
        let manifest = DatasetManifest::new(vec![]).unwrap();
        let spec = HazeSpec::physical(0.2).with_atmosphere(fixed_atmosphere());
        let run =
            synthesize_dataset(&manifest, &spec, &dir.path().join("out"), &DcpConfig::default())
                .unwrap();
        assert!(run.manifest.is_empty());
        assert!(run.failures.is_empty());
    }
}
