//! Image containers and low-level raster kernels.
//!
//! [`PlanarImage`] holds RGB intensities normalized to `[0, 1]` at 32-bit
//! precision; [`ScalarField`] is the single-channel counterpart used for dark
//! channels and transmission maps. The sliding-window minimum here is the
//! workhorse of the dark channel computation.

use std::collections::VecDeque;
use std::path::Path;

use crate::error::{Error, Result};

/// RGB image with intensities in `[0, 1]`, interleaved row-major storage.
#[derive(Debug, Clone, PartialEq)]
pub struct PlanarImage {
    width: usize,
    height: usize,
    data: Vec<f32>,
}

impl PlanarImage {
    /// Build from interleaved RGB samples, validating dimensions and range.
    pub fn new(width: usize, height: usize, data: Vec<f32>) -> Result<Self> {
        if width == 0 || height == 0 {
            return Err(Error::validation(format!(
                "image dimensions must be at least 1x1, got {width}x{height}"
            )));
        }
        if data.len() != width * height * 3 {
            return Err(Error::validation(format!(
                "expected {} samples for {width}x{height} RGB image, got {}",
                width * height * 3,
                data.len()
            )));
        }
        if let Some(v) = data.iter().find(|v| !(0.0..=1.0).contains(*v)) {
            return Err(Error::validation(format!(
                "image intensity {v} outside [0, 1]"
            )));
        }
        Ok(Self {
            width,
            height,
            data,
        })
    }

    /// Build from arbitrary samples, clamping each into `[0, 1]`.
    ///
    /// This is the emission boundary for model outputs, which are allowed to
    /// leave the unit range before clamping.
    pub fn from_unclamped(width: usize, height: usize, mut data: Vec<f32>) -> Result<Self> {
        for v in &mut data {
            *v = if v.is_nan() { 0.0 } else { v.clamp(0.0, 1.0) };
        }
        Self::new(width, height, data)
    }

    /// Build by evaluating `f(x, y) -> [r, g, b]` at every pixel.
    pub fn from_fn(
        width: usize,
        height: usize,
        mut f: impl FnMut(usize, usize) -> [f32; 3],
    ) -> Result<Self> {
        let mut data = Vec::with_capacity(width * height * 3);
        for y in 0..height {
            for x in 0..width {
                data.extend_from_slice(&f(x, y));
            }
        }
        Self::new(width, height, data)
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn pixel_count(&self) -> usize {
        self.width * self.height
    }

    /// Interleaved RGB samples, row-major.
    pub fn data(&self) -> &[f32] {
        &self.data
    }

    pub fn pixel(&self, x: usize, y: usize) -> [f32; 3] {
        let i = (y * self.width + x) * 3;
        [self.data[i], self.data[i + 1], self.data[i + 2]]
    }

    pub fn sample(&self, x: usize, y: usize, c: usize) -> f32 {
        self.data[(y * self.width + x) * 3 + c]
    }

    pub fn same_dimensions(&self, other: &PlanarImage) -> bool {
        self.width == other.width && self.height == other.height
    }
}

/// Single-channel raster of finite values.
#[derive(Debug, Clone, PartialEq)]
pub struct ScalarField {
    width: usize,
    height: usize,
    data: Vec<f32>,
}

impl ScalarField {
    pub fn new(width: usize, height: usize, data: Vec<f32>) -> Result<Self> {
        if width == 0 || height == 0 {
            return Err(Error::validation(format!(
                "field dimensions must be at least 1x1, got {width}x{height}"
            )));
        }
        if data.len() != width * height {
            return Err(Error::validation(format!(
                "expected {} values for {width}x{height} field, got {}",
                width * height,
                data.len()
            )));
        }
        if data.iter().any(|v| !v.is_finite()) {
            return Err(Error::validation("field contains non-finite values"));
        }
        Ok(Self {
            width,
            height,
            data,
        })
    }

    pub fn constant(width: usize, height: usize, value: f32) -> Result<Self> {
        Self::new(width, height, vec![value; width * height])
    }

    pub fn from_fn(
        width: usize,
        height: usize,
        mut f: impl FnMut(usize, usize) -> f32,
    ) -> Result<Self> {
        let mut data = Vec::with_capacity(width * height);
        for y in 0..height {
            for x in 0..width {
                data.push(f(x, y));
            }
        }
        Self::new(width, height, data)
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn data(&self) -> &[f32] {
        &self.data
    }

    pub fn get(&self, x: usize, y: usize) -> f32 {
        self.data[y * self.width + x]
    }
}

/// Three-channel f64 working buffer with no range invariant.
///
/// Used for regression features and unclamped model predictions, where
/// values legitimately leave `[0, 1]` and the extra precision keeps gradient
/// checks tight.
#[derive(Debug, Clone, PartialEq)]
pub struct Raster3 {
    width: usize,
    height: usize,
    data: Vec<f64>,
}

impl Raster3 {
    pub fn zeros(width: usize, height: usize) -> Self {
        Self {
            width,
            height,
            data: vec![0.0; width * height * 3],
        }
    }

    pub fn from_data(width: usize, height: usize, data: Vec<f64>) -> Self {
        assert_eq!(data.len(), width * height * 3);
        Self {
            width,
            height,
            data,
        }
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn data(&self) -> &[f64] {
        &self.data
    }

    pub fn data_mut(&mut self) -> &mut [f64] {
        &mut self.data
    }

    pub fn get(&self, x: usize, y: usize, c: usize) -> f64 {
        self.data[(y * self.width + x) * 3 + c]
    }

    /// Clamp into `[0, 1]` and quantize down to a displayable image.
    pub fn to_image(&self) -> PlanarImage {
        let data = self.data.iter().map(|&v| v as f32).collect();
        PlanarImage::from_unclamped(self.width, self.height, data)
            .expect("raster dimensions are valid by construction")
    }
}

/// Decode a PNG or JPEG file into a normalized image.
///
/// 8-bit samples map to `[0, 1]` by `v / 255`; alpha is discarded and
/// grayscale is replicated across the three channels.
pub fn load_image(path: &Path) -> Result<PlanarImage> {
    let reader = image::ImageReader::open(path)
        .map_err(|e| Error::io(path, e))?
        .with_guessed_format()
        .map_err(|e| Error::io(path, e))?;
    let decoded = reader.decode().map_err(|e| Error::Decode {
        path: path.to_path_buf(),
        cause: e,
    })?;
    let rgb = decoded.to_rgb8();
    let (width, height) = (rgb.width() as usize, rgb.height() as usize);
    if width == 0 || height == 0 {
        return Err(Error::validation(format!(
            "{}: decoded image has zero dimension",
            path.display()
        )));
    }
    let data = rgb.as_raw().iter().map(|&v| v as f32 / 255.0).collect();
    PlanarImage::new(width, height, data)
}

/// Quantize back to 8 bits and write a PNG.
///
/// Quantization is `round(v * 255)` with halves rounding away from zero, so
/// golden tests are bit-exact.
pub fn save_image(img: &PlanarImage, path: &Path) -> Result<()> {
    let mut out = Vec::with_capacity(img.data().len());
    for &v in img.data() {
        out.push((v.clamp(0.0, 1.0) * 255.0).round() as u8);
    }
    let buffer = image::RgbImage::from_raw(img.width() as u32, img.height() as u32, out)
        .expect("buffer length matches dimensions");
    buffer
        .save_with_format(path, image::ImageFormat::Png)
        .map_err(|e| Error::Encode {
            path: path.to_path_buf(),
            cause: e,
        })
}

/// Save a scalar field as a grayscale PNG (values clamped to `[0, 1]`).
pub fn save_field(field: &ScalarField, path: &Path) -> Result<()> {
    let img = PlanarImage::from_unclamped(
        field.width(),
        field.height(),
        field.data().iter().flat_map(|&v| [v, v, v]).collect(),
    )?;
    save_image(&img, path)
}

/// Per-pixel minimum over the RGB channels.
pub fn channel_min(img: &PlanarImage) -> ScalarField {
    let data = img
        .data()
        .chunks_exact(3)
        .map(|p| p[0].min(p[1]).min(p[2]))
        .collect();
    ScalarField::new(img.width(), img.height(), data)
        .expect("channel minimum of a valid image is finite")
}

/// Sliding minimum over a `patch x patch` window centered at each pixel.
///
/// Windows shrink at the borders instead of padding, so no pixel values are
/// invented. Runs as two 1-D passes with a monotonic deque; the integration
/// tests prove equivalence with the direct 2-D window scan.
pub fn min_filter(field: &ScalarField, patch: usize) -> Result<ScalarField> {
    if patch == 0 || patch % 2 == 0 {
        return Err(Error::validation(format!(
            "patch size must be odd and positive, got {patch}"
        )));
    }
    let radius = patch / 2;
    if radius == 0 {
        return Ok(field.clone());
    }
    let (w, h) = (field.width(), field.height());
    let mut horiz = vec![0.0f32; w * h];
    let mut line = Vec::with_capacity(w.max(h));
    let mut out_line = Vec::with_capacity(w.max(h));

    for y in 0..h {
        line.clear();
        line.extend_from_slice(&field.data()[y * w..(y + 1) * w]);
        sliding_min_line(&line, radius, &mut out_line);
        horiz[y * w..(y + 1) * w].copy_from_slice(&out_line);
    }

    let mut data = vec![0.0f32; w * h];
    for x in 0..w {
        line.clear();
        line.extend((0..h).map(|y| horiz[y * w + x]));
        sliding_min_line(&line, radius, &mut out_line);
        for y in 0..h {
            data[y * w + x] = out_line[y];
        }
    }
    ScalarField::new(w, h, data)
}

/// 1-D sliding minimum over `[i - radius, i + radius]` clipped to the line.
fn sliding_min_line(line: &[f32], radius: usize, out: &mut Vec<f32>) {
    let n = line.len();
    out.clear();
    let mut deque: VecDeque<usize> = VecDeque::new();
    let mut next = 0usize;
    for i in 0..n {
        let hi = (i + radius).min(n - 1);
        while next <= hi {
            while deque.back().is_some_and(|&b| line[b] >= line[next]) {
                deque.pop_back();
            }
            deque.push_back(next);
            next += 1;
        }
        while deque.front().is_some_and(|&f| f + radius < i) {
            deque.pop_front();
        }
        out.push(line[*deque.front().expect("window is never empty")]);
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    pub(crate) fn random_image(rng: &mut ChaCha8Rng, w: usize, h: usize) -> PlanarImage {
        PlanarImage::from_fn(w, h, |_, _| {
            [
                rng.random_range(0.0..=1.0),
                rng.random_range(0.0..=1.0),
                rng.random_range(0.0..=1.0),
            ]
        })
        .unwrap()
    }

    fn random_field(rng: &mut ChaCha8Rng, w: usize, h: usize) -> ScalarField {
        ScalarField::from_fn(w, h, |_, _| rng.random_range(0.0..=1.0)).unwrap()
    }

    /// Direct 2-D window scan, the oracle for the separable implementation.
    fn min_filter_naive(field: &ScalarField, patch: usize) -> ScalarField {
        let r = (patch / 2) as isize;
        let (w, h) = (field.width() as isize, field.height() as isize);
        ScalarField::from_fn(field.width(), field.height(), |x, y| {
            let (x, y) = (x as isize, y as isize);
            let mut m = f32::INFINITY;
            for yy in (y - r).max(0)..=(y + r).min(h - 1) {
                for xx in (x - r).max(0)..=(x + r).min(w - 1) {
                    m = m.min(field.get(xx as usize, yy as usize));
                }
            }
            m
        })
        .unwrap()
    }

    #[test]
    fn rejects_zero_dimensions_and_bad_lengths() {
        assert!(PlanarImage::new(0, 1, vec![]).is_err());
        assert!(PlanarImage::new(1, 1, vec![0.0; 4]).is_err());
        assert!(PlanarImage::new(1, 1, vec![0.0, 0.5, 1.1]).is_err());
        assert!(ScalarField::new(2, 2, vec![0.0, f32::NAN, 0.0, 0.0]).is_err());
    }

    #[test]
    fn load_maps_8bit_samples_to_unit_range() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("px.png");
        image::RgbImage::from_raw(1, 1, vec![255, 0, 128])
            .unwrap()
            .save(&path)
            .unwrap();
        let img = load_image(&path).unwrap();
        assert_eq!(img.pixel(0, 0), [1.0, 0.0, 128.0 / 255.0]);
    }

    #[test]
    fn load_replicates_grayscale_into_three_channels() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("gray.png");
        image::GrayImage::from_raw(1, 1, vec![0])
            .unwrap()
            .save(&path)
            .unwrap();
        let img = load_image(&path).unwrap();
        assert_eq!(img.pixel(0, 0), [0.0, 0.0, 0.0]);
    }

    #[test]
    fn load_drops_alpha_from_rgba() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("rgba.png");
        let rgba = image::RgbaImage::from_raw(
            2,
            2,
            vec![
                10, 20, 30, 0, 40, 50, 60, 128, 70, 80, 90, 255, 100, 110, 120, 5,
            ],
        )
        .unwrap();
        rgba.save(&path).unwrap();
        let img = load_image(&path).unwrap();
        // Same RGB bytes survive a save/load round trip of the RGB part.
        let rgb_path = dir.path().join("rgb.png");
        save_image(&img, &rgb_path).unwrap();
        let back = load_image(&rgb_path).unwrap();
        assert_eq!(img, back);
        assert_eq!(img.pixel(0, 0), [10.0 / 255.0, 20.0 / 255.0, 30.0 / 255.0]);
        assert_eq!(
            img.pixel(1, 1),
            [100.0 / 255.0, 110.0 / 255.0, 120.0 / 255.0]
        );
    }

    #[test]
    fn save_quantizes_by_round_half_away_from_zero() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("q.png");
        let img = PlanarImage::new(1, 1, vec![1.0, 0.0, 0.5019608]).unwrap();
        save_image(&img, &path).unwrap();
        let bytes = image::open(&path).unwrap().to_rgb8();
        assert_eq!(bytes.as_raw(), &vec![255, 0, 128]);
    }

    #[test]
    fn save_clamps_out_of_range_values() {
        let img = PlanarImage::from_unclamped(1, 1, vec![1.2, -0.3, 0.5]).unwrap();
        assert_eq!(img.pixel(0, 0), [1.0, 0.0, 0.5]);
    }

    #[test]
    fn load_save_round_trip_is_lossless() {
        let dir = tempfile::tempdir().unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(7);
        let quantized = PlanarImage::from_fn(16, 16, |_, _| {
            let q = |r: &mut ChaCha8Rng| r.random_range(0u32..=255) as f32 / 255.0;
            [q(&mut rng), q(&mut rng), q(&mut rng)]
        })
        .unwrap();
        let a = dir.path().join("a.png");
        let b = dir.path().join("b.png");
        save_image(&quantized, &a).unwrap();
        let loaded = load_image(&a).unwrap();
        save_image(&loaded, &b).unwrap();
        assert_eq!(std::fs::read(&a).unwrap(), std::fs::read(&b).unwrap());
        assert_eq!(loaded, quantized);
    }

    #[test]
    fn min_filter_rejects_even_patch() {
        let field = ScalarField::constant(4, 4, 0.5).unwrap();
        assert!(min_filter(&field, 2).is_err());
        assert!(min_filter(&field, 0).is_err());
    }

    #[test]
    fn min_filter_constant_field_is_unchanged() {
        let field = ScalarField::constant(9, 5, 0.37).unwrap();
        for patch in [1, 3, 7, 25] {
            assert_eq!(min_filter(&field, patch).unwrap(), field);
        }
    }

    #[test]
    fn min_filter_patch_one_is_identity() {
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        let field = random_field(&mut rng, 8, 6);
        assert_eq!(min_filter(&field, 1).unwrap(), field);
    }

    #[test]
    fn min_filter_matches_naive_window_scan() {
        let mut rng = ChaCha8Rng::seed_from_u64(13);
        for patch in [3, 5, 9, 21] {
            let field = random_field(&mut rng, 9, 9);
            assert_eq!(min_filter(&field, patch).unwrap(), min_filter_naive(&field, patch));
        }
    }

    #[test]
    fn channel_min_picks_componentwise_minimum() {
        let img = PlanarImage::new(1, 1, vec![0.9, 0.2, 0.5]).unwrap();
        assert_eq!(channel_min(&img).get(0, 0), 0.2);
        let white = PlanarImage::from_fn(4, 4, |_, _| [1.0; 3]).unwrap();
        assert!(channel_min(&white).data().iter().all(|&v| v == 1.0));
    }

    #[test]
    fn channel_min_matches_per_pixel_loop() {
        let mut rng = ChaCha8Rng::seed_from_u64(17);
        let img = random_image(&mut rng, 13, 7);
        let field = channel_min(&img);
        for y in 0..7 {
            for x in 0..13 {
                let [r, g, b] = img.pixel(x, y);
                assert_eq!(field.get(x, y), r.min(g).min(b));
            }
        }
    }

    proptest! {
        #[test]
        fn min_filter_never_exceeds_input(seed in 0u64..1000, patch in 0usize..4) {
            let patch = patch * 2 + 1;
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let field = random_field(&mut rng, 7, 5);
            let filtered = min_filter(&field, patch).unwrap();
            for (a, b) in filtered.data().iter().zip(field.data()) {
                prop_assert!(a <= b);
            }
        }

        #[test]
        fn min_filter_is_monotone(seed in 0u64..1000) {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let a = random_field(&mut rng, 6, 6);
            let b = ScalarField::from_fn(6, 6, |x, y| {
                (a.get(x, y) + rng.random_range(0.0..0.5)).min(1.0)
            }).unwrap();
            let fa = min_filter(&a, 3).unwrap();
            let fb = min_filter(&b, 3).unwrap();
            for (pa, pb) in fa.data().iter().zip(fb.data()) {
                prop_assert!(pa <= pb);
            }
        }

        #[test]
        fn channel_min_bounds_each_channel(seed in 0u64..1000) {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let img = random_image(&mut rng, 5, 5);
            let m = channel_min(&img);
            for y in 0..5 {
                for x in 0..5 {
                    for c in 0..3 {
                        prop_assert!(m.get(x, y) <= img.sample(x, y, c));
                    }
                }
            }
        }
    }
}
