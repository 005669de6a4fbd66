//! Image loading, saving, resizing and range handling shared by the rest of
//! the pipeline.
//!
//! Pixels are `f64` in `[0, 1]`, interleaved RGB, sRGB-tagged. Network-specific
//! normalization does not live here; every module boundary exchanges images in
//! this one canonical representation. File formats are PNG and JPEG in, 8-bit
//! RGB PNG out.

use std::path::{Path, PathBuf};

use image::{DynamicImage, ImageFormat, ImageReader};
use thiserror::Error;

/// Minimum side length the backbone accepts after stride reduction. Images
/// below this can exist (tiny fixtures, masks), but anything handed to the
/// network must be at least this large on both sides.
pub const MIN_BACKBONE_SIDE: usize = 32;

/// Default long side of the working resolution before stride rounding.
pub const DEFAULT_LONG_SIDE: usize = 640;

#[derive(Debug, Error)]
pub enum ImagingError {
    #[error("file not found: {0}")]
    FileNotFound(PathBuf),
    #[error("unsupported format (expected PNG or JPEG): {0}")]
    UnsupportedFormat(String),
    #[error("corrupt image {path}: {reason}")]
    CorruptImage { path: PathBuf, reason: String },
    #[error("i/o error: {0}")]
    Io(#[from] std::io::Error),
    #[error("invalid resize target {height}x{width}")]
    InvalidTarget { height: usize, width: usize },
    #[error("non-finite pixel value encountered")]
    NonFiniteInput,
    #[error("invalid image dimensions {height}x{width}: {reason}")]
    InvalidDimensions {
        height: usize,
        width: usize,
        reason: String,
    },
}

/// Color space tag. Only sRGB is handled; the tag exists so the assumption is
/// explicit at module boundaries.
#[derive(Debug, Clone, Copy, PartialEq, Eq, serde::Serialize, serde::Deserialize)]
pub enum ColorSpace {
    Srgb,
}

/// Interpolation mode for [`resize`].
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ResizeMode {
    Bilinear,
    Nearest,
}

/// An H×W×3 image with unit-range `f64` pixels, interleaved RGB.
#[derive(Debug, Clone, PartialEq)]
pub struct Image {
    width: usize,
    height: usize,
    colorspace: ColorSpace,
    data: Vec<f64>,
}

impl Image {
    /// Builds an image from interleaved RGB data. The data length must be
    /// `height * width * 3`; values are taken as-is (use [`clamp`] to force
    /// them into range).
    pub fn from_data(height: usize, width: usize, data: Vec<f64>) -> Result<Self, ImagingError> {
        if height == 0 || width == 0 {
            return Err(ImagingError::InvalidDimensions {
                height,
                width,
                reason: "zero-sized image".into(),
            });
        }
        if data.len() != height * width * 3 {
            return Err(ImagingError::InvalidDimensions {
                height,
                width,
                reason: format!("expected {} values, got {}", height * width * 3, data.len()),
            });
        }
        Ok(Self {
            width,
            height,
            colorspace: ColorSpace::Srgb,
            data,
        })
    }

    /// Constant-valued image.
    pub fn filled(height: usize, width: usize, rgb: [f64; 3]) -> Self {
        let mut data = Vec::with_capacity(height * width * 3);
        for _ in 0..height * width {
            data.extend_from_slice(&rgb);
        }
        Self {
            width,
            height,
            colorspace: ColorSpace::Srgb,
            data,
        }
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn colorspace(&self) -> ColorSpace {
        self.colorspace
    }

    /// Interleaved RGB pixel data, row-major.
    pub fn data(&self) -> &[f64] {
        &self.data
    }

    pub fn data_mut(&mut self) -> &mut [f64] {
        &mut self.data
    }

    #[inline]
    pub fn pixel(&self, y: usize, x: usize) -> [f64; 3] {
        let i = (y * self.width + x) * 3;
        [self.data[i], self.data[i + 1], self.data[i + 2]]
    }

    #[inline]
    pub fn set_pixel(&mut self, y: usize, x: usize, rgb: [f64; 3]) {
        let i = (y * self.width + x) * 3;
        self.data[i] = rgb[0];
        self.data[i + 1] = rgb[1];
        self.data[i + 2] = rgb[2];
    }

    /// True when every pixel is finite and within `[0, 1]`.
    pub fn in_range(&self) -> bool {
        self.data.iter().all(|v| v.is_finite() && (0.0..=1.0).contains(v))
    }

    /// True when both sides meet the backbone minimum.
    pub fn meets_backbone_minimum(&self) -> bool {
        self.height >= MIN_BACKBONE_SIDE && self.width >= MIN_BACKBONE_SIDE
    }
}

/// A single-channel H×W plane of `f64` values. Used for soft masks and other
/// per-pixel scalar maps.
#[derive(Debug, Clone, PartialEq)]
pub struct Plane {
    width: usize,
    height: usize,
    data: Vec<f64>,
}

impl Plane {
    pub fn new(height: usize, width: usize, fill: f64) -> Self {
        Self {
            width,
            height,
            data: vec![fill; height * width],
        }
    }

    pub fn from_data(height: usize, width: usize, data: Vec<f64>) -> Result<Self, ImagingError> {
        if data.len() != height * width {
            return Err(ImagingError::InvalidDimensions {
                height,
                width,
                reason: format!("expected {} values, got {}", height * width, data.len()),
            });
        }
        Ok(Self {
            width,
            height,
            data,
        })
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

    #[inline]
    pub fn get(&self, y: usize, x: usize) -> f64 {
        self.data[y * self.width + x]
    }

    #[inline]
    pub fn set(&mut self, y: usize, x: usize, v: f64) {
        self.data[y * self.width + x] = v;
    }

    /// Bilinear resize of a scalar plane (used to bring head-resolution masks
    /// up to image resolution).
    pub fn resize_bilinear(&self, target_h: usize, target_w: usize) -> Plane {
        if target_h == self.height && target_w == self.width {
            return self.clone();
        }
        let mut out = Plane::new(target_h, target_w, 0.0);
        let sy = self.height as f64 / target_h as f64;
        let sx = self.width as f64 / target_w as f64;
        for oy in 0..target_h {
            let fy = ((oy as f64 + 0.5) * sy - 0.5).max(0.0);
            let y0 = (fy.floor() as usize).min(self.height - 1);
            let y1 = (y0 + 1).min(self.height - 1);
            let ty = fy - y0 as f64;
            for ox in 0..target_w {
                let fx = ((ox as f64 + 0.5) * sx - 0.5).max(0.0);
                let x0 = (fx.floor() as usize).min(self.width - 1);
                let x1 = (x0 + 1).min(self.width - 1);
                let tx = fx - x0 as f64;
                let a = self.get(y0, x0);
                let b = self.get(y0, x1);
                let c = self.get(y1, x0);
                let d = self.get(y1, x1);
                let top = a + tx * (b - a);
                let bot = c + tx * (d - c);
                out.set(oy, ox, top + ty * (bot - top));
            }
        }
        out
    }
}

/// Loads a PNG or JPEG into a unit-range RGB image. Grayscale is replicated
/// across channels, alpha is dropped.
pub fn load_image(path: impl AsRef<Path>) -> Result<Image, ImagingError> {
    let path = path.as_ref();
    if !path.exists() {
        return Err(ImagingError::FileNotFound(path.to_path_buf()));
    }
    let reader = ImageReader::open(path)?
        .with_guessed_format()
        .map_err(|e| ImagingError::CorruptImage {
            path: path.to_path_buf(),
            reason: e.to_string(),
        })?;
    match reader.format() {
        Some(ImageFormat::Png) | Some(ImageFormat::Jpeg) => {}
        Some(other) => {
            return Err(ImagingError::UnsupportedFormat(format!("{other:?}")));
        }
        None => {
            return Err(ImagingError::UnsupportedFormat(
                "unrecognized image signature".into(),
            ));
        }
    }
    let decoded: DynamicImage = reader.decode().map_err(|e| ImagingError::CorruptImage {
        path: path.to_path_buf(),
        reason: e.to_string(),
    })?;
    let rgb = decoded.to_rgb8();
    let (w, h) = (rgb.width() as usize, rgb.height() as usize);
    let mut data = Vec::with_capacity(h * w * 3);
    for p in rgb.pixels() {
        data.push(p.0[0] as f64 / 255.0);
        data.push(p.0[1] as f64 / 255.0);
        data.push(p.0[2] as f64 / 255.0);
    }
    Image::from_data(h, w, data)
}

/// Writes the image as 8-bit RGB PNG. Round-tripping through [`load_image`]
/// changes each channel by at most 1/255 (quantization).
pub fn save_image(img: &Image, path: impl AsRef<Path>) -> Result<(), ImagingError> {
    let buf = quantize_rgb8(img);
    let out = image::RgbImage::from_raw(img.width() as u32, img.height() as u32, buf)
        .expect("buffer length matches dimensions");
    out.save_with_format(path.as_ref(), ImageFormat::Png)
        .map_err(|e| match e {
            image::ImageError::IoError(io) => ImagingError::Io(io),
            other => ImagingError::Io(std::io::Error::other(other.to_string())),
        })
}

/// 8-bit quantization used by [`save_image`]: `round(x * 255)` clamped.
pub fn quantize_rgb8(img: &Image) -> Vec<u8> {
    img.data()
        .iter()
        .map(|&v| (v * 255.0).round().clamp(0.0, 255.0) as u8)
        .collect()
}

/// Writes a scalar plane as 8-bit grayscale PNG (`round(x * 255)`), the export
/// format for masks (binary masks become 0 or 255).
pub fn save_plane(plane: &Plane, path: impl AsRef<Path>) -> Result<(), ImagingError> {
    let buf: Vec<u8> = plane
        .data()
        .iter()
        .map(|&v| (v * 255.0).round().clamp(0.0, 255.0) as u8)
        .collect();
    let out = image::GrayImage::from_raw(plane.width() as u32, plane.height() as u32, buf)
        .expect("buffer length matches dimensions");
    out.save_with_format(path.as_ref(), ImageFormat::Png)
        .map_err(|e| match e {
            image::ImageError::IoError(io) => ImagingError::Io(io),
            other => ImagingError::Io(std::io::Error::other(other.to_string())),
        })
}

/// Resizes to the requested shape. Identical target shape returns the input
/// bit-for-bit. Bilinear interpolation is computed in lerp form so constant
/// images stay exactly constant.
pub fn resize(
    img: &Image,
    target_h: usize,
    target_w: usize,
    mode: ResizeMode,
) -> Result<Image, ImagingError> {
    if target_h == 0 || target_w == 0 {
        return Err(ImagingError::InvalidTarget {
            height: target_h,
            width: target_w,
        });
    }
    if target_h == img.height() && target_w == img.width() {
        return Ok(img.clone());
    }
    let mut out = Image::filled(target_h, target_w, [0.0; 3]);
    let sy = img.height() as f64 / target_h as f64;
    let sx = img.width() as f64 / target_w as f64;
    match mode {
        ResizeMode::Nearest => {
            for oy in 0..target_h {
                let iy = (((oy as f64 + 0.5) * sy).floor() as usize).min(img.height() - 1);
                for ox in 0..target_w {
                    let ix = (((ox as f64 + 0.5) * sx).floor() as usize).min(img.width() - 1);
                    out.set_pixel(oy, ox, img.pixel(iy, ix));
                }
            }
        }
        ResizeMode::Bilinear => {
            for oy in 0..target_h {
                let fy = ((oy as f64 + 0.5) * sy - 0.5).max(0.0);
                let y0 = (fy.floor() as usize).min(img.height() - 1);
                let y1 = (y0 + 1).min(img.height() - 1);
                let ty = fy - y0 as f64;
                for ox in 0..target_w {
                    let fx = ((ox as f64 + 0.5) * sx - 0.5).max(0.0);
                    let x0 = (fx.floor() as usize).min(img.width() - 1);
                    let x1 = (x0 + 1).min(img.width() - 1);
                    let tx = fx - x0 as f64;
                    let a = img.pixel(y0, x0);
                    let b = img.pixel(y0, x1);
                    let c = img.pixel(y1, x0);
                    let d = img.pixel(y1, x1);
                    let mut rgb = [0.0; 3];
                    for ch in 0..3 {
                        let top = a[ch] + tx * (b[ch] - a[ch]);
                        let bot = c[ch] + tx * (d[ch] - c[ch]);
                        rgb[ch] = top + ty * (bot - top);
                    }
                    out.set_pixel(oy, ox, rgb);
                }
            }
        }
    }
    Ok(out)
}

/// Clamps every channel to `[0, 1]`. Errors on NaN or infinity rather than
/// silently normalizing garbage.
pub fn clamp(img: &Image) -> Result<Image, ImagingError> {
    if img.data().iter().any(|v| !v.is_finite()) {
        return Err(ImagingError::NonFiniteInput);
    }
    let data = img.data().iter().map(|&v| v.clamp(0.0, 1.0)).collect();
    Ok(Image::from_data(img.height(), img.width(), data).expect("shape unchanged"))
}

/// Working resolution: scale the long side to `long_side`, then round both
/// sides down to the nearest multiple of `stride` (floor at `stride`).
pub fn working_size(
    height: usize,
    width: usize,
    long_side: usize,
    stride: usize,
) -> (usize, usize) {
    let long = height.max(width) as f64;
    let scale = long_side as f64 / long;
    let h = (height as f64 * scale).round() as usize;
    let w = (width as f64 * scale).round() as usize;
    let round = |v: usize| ((v / stride) * stride).max(stride);
    (round(h), round(w))
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand_core::{RngCore, SeedableRng};

    fn uniform(rng: &mut rand_chacha::ChaCha8Rng) -> f64 {
        (rng.next_u64() >> 11) as f64 * (1.0 / (1u64 << 53) as f64)
    }

    fn random_image(h: usize, w: usize, seed: u64) -> Image {
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(seed);
        let data = (0..h * w * 3).map(|_| uniform(&mut rng)).collect();
        Image::from_data(h, w, data).unwrap()
    }

    #[test]
    fn load_all_black_png() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("black.png");
        save_image(&Image::filled(2, 2, [0.0; 3]), &path).unwrap();
        let img = load_image(&path).unwrap();
        assert!(img.data().iter().all(|&v| v == 0.0));
    }

    #[test]
    fn load_all_white_png() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("white.png");
        save_image(&Image::filled(2, 2, [1.0; 3]), &path).unwrap();
        let img = load_image(&path).unwrap();
        assert!(img.data().iter().all(|&v| v == 1.0));
    }

    #[test]
    fn load_scales_eight_bit_values() {
        // 8-bit value 128 must decode to exactly 128/255.
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("mid.png");
        let raw = image::RgbImage::from_pixel(2, 2, image::Rgb([128, 128, 128]));
        raw.save(&path).unwrap();
        let img = load_image(&path).unwrap();
        for &v in img.data() {
            assert_eq!(v, 128.0 / 255.0);
        }
    }

    #[test]
    fn load_replicates_grayscale_and_drops_alpha() {
        let dir = tempfile::tempdir().unwrap();
        let gray_path = dir.path().join("gray.png");
        image::GrayImage::from_pixel(3, 3, image::Luma([77])).save(&gray_path).unwrap();
        let img = load_image(&gray_path).unwrap();
        for y in 0..3 {
            for x in 0..3 {
                assert_eq!(img.pixel(y, x), [77.0 / 255.0; 3]);
            }
        }

        let rgba_path = dir.path().join("rgba.png");
        image::RgbaImage::from_pixel(2, 2, image::Rgba([10, 20, 30, 0])).save(&rgba_path).unwrap();
        let img = load_image(&rgba_path).unwrap();
        assert_eq!(img.pixel(0, 0), [10.0 / 255.0, 20.0 / 255.0, 30.0 / 255.0]);
    }

    #[test]
    fn load_missing_file() {
        let err = load_image("/nonexistent/enoent.png").unwrap_err();
        assert!(matches!(err, ImagingError::FileNotFound(_)));
    }

    #[test]
    fn load_jpeg() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("img.jpg");
        let raw = image::RgbImage::from_pixel(16, 12, image::Rgb([200, 100, 50]));
        raw.save_with_format(&path, ImageFormat::Jpeg).unwrap();
        let img = load_image(&path).unwrap();
        assert_eq!((img.height(), img.width()), (12, 16));
        assert!(img.in_range());
        // JPEG is lossy; just require the decoded color to be in the
        // neighborhood of the encoded one.
        let p = img.pixel(6, 8);
        assert!((p[0] - 200.0 / 255.0).abs() < 0.05, "{p:?}");
    }

    #[test]
    fn load_unsupported_format() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("img.bmp");
        // Minimal BMP signature; format is detected from content, not extension.
        std::fs::write(&path, b"BM\x00\x00\x00\x00\x00\x00\x00\x00\x36\x00\x00\x00").unwrap();
        let err = load_image(&path).unwrap_err();
        assert!(matches!(err, ImagingError::UnsupportedFormat(_)));
    }

    #[test]
    fn load_corrupt_png() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("bad.png");
        // Valid PNG signature, garbage after.
        std::fs::write(&path, [0x89, b'P', b'N', b'G', 0x0d, 0x0a, 0x1a, 0x0a, 0, 1, 2, 3]).unwrap();
        let err = load_image(&path).unwrap_err();
        assert!(matches!(err, ImagingError::CorruptImage { .. }));
    }

    #[test]
    fn save_half_gray_quantizes_to_nearest() {
        // round(0.5 * 255) = 128, so the decoded value is 128/255.
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("half.png");
        save_image(&Image::filled(2, 2, [0.5; 3]), &path).unwrap();
        let img = load_image(&path).unwrap();
        let v = img.pixel(0, 0)[0];
        assert!(v == 127.0 / 255.0 || v == 128.0 / 255.0);
        assert_eq!(v, 128.0 / 255.0);
    }

    #[test]
    fn save_load_round_trip_bounded_by_one_part_in_255() {
        let dir = tempfile::tempdir().unwrap();
        for seed in 0..4u64 {
            let img = random_image(9, 7, seed);
            let path = dir.path().join(format!("rt{seed}.png"));
            save_image(&img, &path).unwrap();
            let back = load_image(&path).unwrap();
            let max_diff = img
                .data()
                .iter()
                .zip(back.data())
                .map(|(a, b)| (a - b).abs())
                .fold(0.0f64, f64::max);
            assert!(max_diff <= 1.0 / 255.0, "round-trip error {max_diff}");
        }
    }

    #[test]
    fn save_to_unwritable_path() {
        let err = save_image(&Image::filled(2, 2, [0.0; 3]), "/nonexistent/dir/x.png").unwrap_err();
        assert!(matches!(err, ImagingError::Io(_)));
    }

    #[test]
    fn resize_identity_is_bit_equal() {
        let img = random_image(10, 14, 3);
        for mode in [ResizeMode::Bilinear, ResizeMode::Nearest] {
            let out = resize(&img, 10, 14, mode).unwrap();
            assert_eq!(out.data(), img.data());
        }
    }

    #[test]
    fn resize_constant_stays_constant() {
        let img = Image::filled(8, 6, [0.3, 0.3, 0.3]);
        for mode in [ResizeMode::Bilinear, ResizeMode::Nearest] {
            let out = resize(&img, 13, 21, mode).unwrap();
            assert!(out.data().iter().all(|&v| v == 0.3), "{mode:?}");
        }
    }

    #[test]
    fn resize_nearest_checkerboard_blocks() {
        // 2x2 checkerboard to 4x4 nearest: each source pixel becomes a 2x2 block.
        let mut img = Image::filled(2, 2, [0.0; 3]);
        img.set_pixel(0, 1, [1.0; 3]);
        img.set_pixel(1, 0, [1.0; 3]);
        let out = resize(&img, 4, 4, ResizeMode::Nearest).unwrap();
        for oy in 0..4 {
            for ox in 0..4 {
                let expected = img.pixel(oy / 2, ox / 2);
                assert_eq!(out.pixel(oy, ox), expected, "at {oy},{ox}");
            }
        }
    }

    #[test]
    fn resize_zero_target_rejected() {
        let img = Image::filled(4, 4, [0.0; 3]);
        assert!(matches!(
            resize(&img, 0, 4, ResizeMode::Nearest),
            Err(ImagingError::InvalidTarget { .. })
        ));
    }

    #[test]
    fn resize_values_stay_in_range() {
        let img = random_image(11, 5, 9);
        let out = resize(&img, 23, 17, ResizeMode::Bilinear).unwrap();
        assert!(out.in_range());
    }

    #[test]
    #[allow(clippy::manual_clamp)] // the scalar branch chain IS the oracle
    fn clamp_matches_scalar_loop_oracle() {
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(42);
        let data: Vec<f64> = (0..5 * 4 * 3).map(|_| uniform(&mut rng) * 4.0 - 2.0).collect();
        let img = Image::from_data(5, 4, data.clone()).unwrap();
        let out = clamp(&img).unwrap();
        for (i, &v) in data.iter().enumerate() {
            let expected = if v < 0.0 {
                0.0
            } else if v > 1.0 {
                1.0
            } else {
                v
            };
            assert_eq!(out.data()[i], expected);
        }
    }

    #[test]
    fn clamp_boundaries_and_identity() {
        let img = Image::from_data(1, 2, vec![-0.5, 1.7, 0.25, 0.0, 1.0, 0.9]).unwrap();
        let out = clamp(&img).unwrap();
        assert_eq!(out.data(), &[0.0, 1.0, 0.25, 0.0, 1.0, 0.9]);

        let in_range = random_image(4, 4, 7);
        assert_eq!(clamp(&in_range).unwrap().data(), in_range.data());
    }

    #[test]
    fn clamp_is_idempotent() {
        let mut img = random_image(6, 6, 11);
        img.data_mut()[0] = -3.0;
        img.data_mut()[1] = 9.0;
        let once = clamp(&img).unwrap();
        let twice = clamp(&once).unwrap();
        assert_eq!(once.data(), twice.data());
    }

    #[test]
    fn clamp_rejects_non_finite() {
        let img = Image::from_data(1, 1, vec![f64::NAN, 0.0, 0.0]).unwrap();
        assert!(matches!(clamp(&img), Err(ImagingError::NonFiniteInput)));
        let img = Image::from_data(1, 1, vec![f64::INFINITY, 0.0, 0.0]).unwrap();
        assert!(matches!(clamp(&img), Err(ImagingError::NonFiniteInput)));
    }

    #[test]
    fn working_size_default_rules() {
        // Long side to 640, both sides rounded down to a multiple of 32.
        assert_eq!(working_size(480, 640, 640, 32), (480, 640));
        assert_eq!(working_size(1080, 1920, 640, 32), (352, 640));
        assert_eq!(working_size(100, 100, 640, 32), (640, 640));
        // Floor at one stride.
        assert_eq!(working_size(10, 2000, 640, 32), (32, 640));
    }

    #[test]
    fn plane_resize_constant_and_shape() {
        let plane = Plane::new(8, 8, 0.7);
        let up = plane.resize_bilinear(32, 16);
        assert_eq!((up.height(), up.width()), (32, 16));
        assert!(up.data().iter().all(|&v| v == 0.7));
    }
}
