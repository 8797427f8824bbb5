//! Manifest-based ingestion of paired clean/hazy datasets.
//!
//! A manifest is a CSV with header `clean_path,hazy_path,haze_level`;
//! relative paths resolve against the manifest's directory. Splitting groups
//! rows by clean image so no clean image leaks across the train/eval
//! boundary, and [`make_fixtures`] renders a small deterministic stand-in
//! for a real outdoor dataset.

use std::collections::HashSet;
use std::path::{Path, PathBuf};

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::dcp::{Atmosphere, DcpConfig};
use crate::error::{Error, Result};
use crate::imgcore::{save_image, PlanarImage};
use crate::synth::{synthesize, HazeSpec};

const MANIFEST_HEADER: [&str; 3] = ["clean_path", "hazy_path", "haze_level"];

/// One training or evaluation pair.
#[derive(Debug, Clone, PartialEq)]
pub struct ManifestRow {
    clean_path: PathBuf,
    hazy_path: Option<PathBuf>,
    haze_level: Option<f64>,
}

impl ManifestRow {
    pub fn new(clean_path: PathBuf, hazy_path: Option<PathBuf>, haze_level: Option<f64>) -> Self {
        Self {
            clean_path,
            hazy_path,
            haze_level,
        }
    }

    pub fn clean_path(&self) -> &Path {
        &self.clean_path
    }

    pub fn hazy_path(&self) -> Option<&Path> {
        self.hazy_path.as_deref()
    }

    pub fn haze_level(&self) -> Option<f64> {
        self.haze_level
    }
}

/// An ordered list of dataset rows.
#[derive(Debug, Clone, PartialEq)]
pub struct DatasetManifest {
    rows: Vec<ManifestRow>,
    base_dir: Option<PathBuf>,
}

impl DatasetManifest {
    /// Validate rows: clean paths non-empty, no duplicate (clean, hazy) pair.
    pub fn new(rows: Vec<ManifestRow>) -> Result<Self> {
        let mut seen = HashSet::new();
        for row in &rows {
            if row.clean_path.as_os_str().is_empty() {
                return Err(Error::validation("manifest row has empty clean_path"));
            }
            if !seen.insert((row.clean_path.clone(), row.hazy_path.clone())) {
                return Err(Error::validation(format!(
                    "duplicate manifest pair: clean {:?}, hazy {:?}",
                    row.clean_path, row.hazy_path
                )));
            }
        }
        Ok(Self {
            rows,
            base_dir: None,
        })
    }

    pub fn with_base_dir(mut self, dir: PathBuf) -> Self {
        self.base_dir = Some(dir);
        self
    }

    pub fn rows(&self) -> &[ManifestRow] {
        &self.rows
    }

    pub fn len(&self) -> usize {
        self.rows.len()
    }

    pub fn is_empty(&self) -> bool {
        self.rows.is_empty()
    }

    /// Directory paths were resolved against, when known.
    pub fn base_dir(&self) -> Option<&Path> {
        self.base_dir.as_deref()
    }

    /// Unique clean paths in first-appearance order.
    pub fn clean_groups(&self) -> Vec<&Path> {
        let mut seen = HashSet::new();
        self.rows
            .iter()
            .filter(|r| seen.insert(r.clean_path.as_path()))
            .map(|r| r.clean_path.as_path())
            .collect()
    }
}

fn resolve(base: &Path, raw: &str) -> PathBuf {
    let p = PathBuf::from(raw);
    if p.is_absolute() {
        p
    } else {
        base.join(p)
    }
}

/// Read and validate a manifest CSV.
pub fn load_manifest(path: &Path) -> Result<DatasetManifest> {
    let base = path
        .parent()
        .map(Path::to_path_buf)
        .unwrap_or_else(|| PathBuf::from("."));
    let file = std::fs::File::open(path).map_err(|e| Error::io(path, e))?;
    let mut reader = csv::ReaderBuilder::new()
        .has_headers(true)
        .trim(csv::Trim::All)
        .from_reader(file);

    let headers = reader
        .headers()
        .map_err(|e| Error::ManifestParse {
            path: path.to_path_buf(),
            line: 1,
            message: e.to_string(),
        })?
        .clone();
    if headers.iter().collect::<Vec<_>>() != MANIFEST_HEADER {
        return Err(Error::ManifestParse {
            path: path.to_path_buf(),
            line: 1,
            message: format!(
                "expected header \"{}\", got \"{}\"",
                MANIFEST_HEADER.join(","),
                headers.iter().collect::<Vec<_>>().join(",")
            ),
        });
    }

    let mut rows = Vec::new();
    for record in reader.records() {
        let record = record.map_err(|e| Error::ManifestParse {
            path: path.to_path_buf(),
            line: e
                .position()
                .map(csv::Position::line)
                .unwrap_or_default(),
            message: e.to_string(),
        })?;
        let line = record.position().map(csv::Position::line).unwrap_or(0);
        let parse_err = |message: String| Error::ManifestParse {
            path: path.to_path_buf(),
            line,
            message,
        };

        let clean = record.get(0).unwrap_or("");
        if clean.is_empty() {
            return Err(parse_err("missing clean_path".into()));
        }
        let hazy = record.get(1).filter(|s| !s.is_empty());
        let haze_level = match record.get(2).filter(|s| !s.is_empty()) {
            Some(raw) => Some(raw.parse::<f64>().map_err(|_| {
                parse_err(format!("haze_level \"{raw}\" is not a number"))
            })?),
            None => None,
        };
        rows.push(ManifestRow::new(
            resolve(&base, clean),
            hazy.map(|h| resolve(&base, h)),
            haze_level,
        ));
    }
    Ok(DatasetManifest::new(rows)?.with_base_dir(base))
}

/// Write a manifest CSV, relativizing paths under the target directory.
pub fn save_manifest(manifest: &DatasetManifest, path: &Path) -> Result<()> {
    let base = path
        .parent()
        .map(Path::to_path_buf)
        .unwrap_or_else(|| PathBuf::from("."));
    let file = std::fs::File::create(path).map_err(|e| Error::io(path, e))?;
    let mut writer = csv::Writer::from_writer(file);
    writer
        .write_record(MANIFEST_HEADER)
        .map_err(|e| Error::validation(format!("{}: {e}", path.display())))?;
    for row in manifest.rows() {
        let rel = |p: &Path| {
            p.strip_prefix(&base)
                .unwrap_or(p)
                .to_string_lossy()
                .into_owned()
        };
        writer
            .write_record([
                rel(row.clean_path()),
                row.hazy_path().map(rel).unwrap_or_default(),
                row.haze_level().map(|v| v.to_string()).unwrap_or_default(),
            ])
            .map_err(|e| Error::validation(format!("{}: {e}", path.display())))?;
    }
    writer
        .flush()
        .map_err(|e| Error::io(path, e))
}

/// Partition a manifest into train and eval sides by clean image.
///
/// All hazy variants of one clean image land on the same side; the eval side
/// receives `max(1, round(fraction * groups))` groups chosen by a seeded
/// shuffle. Row order within each side follows the input manifest.
pub fn split(
    manifest: &DatasetManifest,
    eval_fraction: f64,
    seed: u64,
) -> Result<(DatasetManifest, DatasetManifest)> {
    if manifest.is_empty() {
        return Err(Error::validation("cannot split an empty manifest"));
    }
    if !(eval_fraction > 0.0 && eval_fraction < 1.0) {
        return Err(Error::validation(format!(
            "eval fraction {eval_fraction} outside (0, 1)"
        )));
    }
    let groups = manifest.clean_groups();
    let mut shuffled: Vec<&Path> = groups.clone();
    shuffled.shuffle(&mut ChaCha8Rng::seed_from_u64(seed));
    let n_eval = ((eval_fraction * groups.len() as f64).round() as usize)
        .max(1)
        .min(groups.len());
    let eval_set: HashSet<&Path> = shuffled[..n_eval].iter().copied().collect();

    let mut train_rows = Vec::new();
    let mut eval_rows = Vec::new();
    for row in manifest.rows() {
        if eval_set.contains(row.clean_path()) {
            eval_rows.push(row.clone());
        } else {
            train_rows.push(row.clone());
        }
    }
    let base = manifest.base_dir().map(Path::to_path_buf);
    let attach = |mut m: DatasetManifest| {
        m.base_dir = base.clone();
        m
    };
    Ok((
        attach(DatasetManifest::new(train_rows)?),
        attach(DatasetManifest::new(eval_rows)?),
    ))
}

/// Densities used for the generated fixture pairs.
pub const FIXTURE_DENSITIES: [f64; 3] = [0.1, 0.2, 0.3];

/// Airlight used when hazing fixture images.
pub const FIXTURE_ATMOSPHERE: [f32; 3] = [0.9, 0.9, 0.9];

const FIXTURE_SIZE: usize = 64;

/// Render a deterministic desk-scale dataset: `count` clean 64x64 images,
/// each paired with scattering-model haze at densities 0.1/0.2/0.3 and a
/// fixed airlight. Writes `manifest.csv` into `out_dir` and returns the
/// manifest.
pub fn make_fixtures(out_dir: &Path, count: usize, seed: u64) -> Result<DatasetManifest> {
    if count == 0 {
        return Err(Error::validation("fixture count must be at least 1"));
    }
    std::fs::create_dir_all(out_dir).map_err(|e| Error::io(out_dir, e))?;
    let mut master = ChaCha8Rng::seed_from_u64(seed);
    let atmosphere = Atmosphere::new(FIXTURE_ATMOSPHERE)?;
    let dcp_cfg = DcpConfig::default();

    let mut rows = Vec::new();
    for i in 0..count {
        let mut rng = ChaCha8Rng::seed_from_u64(master.random());
        let clean = render_fixture_image(&mut rng);
        let clean_path = out_dir.join(format!("clean_{i:03}.png"));
        save_image(&clean, &clean_path)?;
        for density in FIXTURE_DENSITIES {
            let spec = HazeSpec::physical(density).with_atmosphere(atmosphere);
            let hazy = synthesize(&clean, &spec, &dcp_cfg)?;
            let hazy_path =
                out_dir.join(format!("hazy_{i:03}_d{:03}.png", (density * 100.0) as usize));
            save_image(&hazy, &hazy_path)?;
            rows.push(ManifestRow::new(
                clean_path.clone(),
                Some(hazy_path),
                Some(density),
            ));
        }
    }
    let manifest = DatasetManifest::new(rows)?.with_base_dir(out_dir.to_path_buf());
    save_manifest(&manifest, &out_dir.join("manifest.csv"))?;
    Ok(manifest)
}

/// Gradient sky over textured ground, random rectangles with cast shadows,
/// and a jittered lattice of near-black dots. The dot lattice has spacing 5
/// so even the corner-shrunk 8x8 windows of a 15-patch dark channel always
/// contain a dark pixel.
fn render_fixture_image(rng: &mut ChaCha8Rng) -> PlanarImage {
    let n = FIXTURE_SIZE;
    let byte = |rng: &mut ChaCha8Rng, lo: u8, hi: u8| rng.random_range(lo..=hi) as f32 / 255.0;

    let sky_top = [
        byte(rng, 110, 170),
        byte(rng, 140, 200),
        byte(rng, 190, 250),
    ];
    let ground = [byte(rng, 60, 130), byte(rng, 60, 130), byte(rng, 40, 110)];
    let mut data = vec![0.0f32; n * n * 3];
    for y in 0..n {
        let t = y as f32 / (n - 1) as f32;
        for x in 0..n {
            for c in 0..3 {
                let v = sky_top[c] * (1.0 - t) + ground[c] * t;
                // Snap to the 8-bit grid so saved fixtures reload exactly.
                data[(y * n + x) * 3 + c] = (v * 255.0).round() / 255.0;
            }
        }
    }

    let put = |data: &mut Vec<f32>, x: usize, y: usize, color: [f32; 3]| {
        for c in 0..3 {
            data[(y * n + x) * 3 + c] = color[c];
        }
    };
    let rect_count = rng.random_range(4..=8);
    for _ in 0..rect_count {
        let x0 = rng.random_range(0..n - 4);
        let y0 = rng.random_range(8..n - 4);
        let w = rng.random_range(4..=20).min(n - x0);
        let h = rng.random_range(4..=16).min(n - y0);
        let color = [
            byte(rng, 20, 230),
            byte(rng, 20, 230),
            byte(rng, 20, 230),
        ];
        let shadow = [byte(rng, 5, 30), byte(rng, 5, 30), byte(rng, 5, 30)];
        for y in y0..y0 + h {
            for x in x0..x0 + w {
                put(&mut data, x, y, color);
            }
        }
        for y in y0 + h..(y0 + h + 2).min(n) {
            for x in x0..x0 + w {
                put(&mut data, x, y, shadow);
            }
        }
    }

    let mut gy = 2i64;
    while gy < n as i64 {
        let mut gx = 2i64;
        while gx < n as i64 {
            let x = (gx + rng.random_range(-1..=1)).clamp(0, n as i64 - 2) as usize;
            let y = (gy + rng.random_range(-1..=1)).clamp(0, n as i64 - 2) as usize;
            let dark = [byte(rng, 0, 14), byte(rng, 0, 14), byte(rng, 0, 14)];
            for dy in 0..2 {
                for dx in 0..2 {
                    put(&mut data, x + dx, y + dy, dark);
                }
            }
            gx += 5;
        }
        gy += 5;
    }

    PlanarImage::new(n, n, data).expect("fixture samples are on the 8-bit grid")
}
