//! Mask handling and compositing: binarize the head's soft masks, optionally
//! feather their edges, isolate the stylized object, and blend it back over
//! the original so that masked-out pixels stay bit-identical.

use thiserror::Error;

use crate::imaging::{Image, Plane};

#[derive(Debug, Error)]
pub enum BlendError {
    #[error("value out of range: {0}")]
    RangeError(String),
    #[error("shape mismatch: expected {expected_h}x{expected_w}, got {got_h}x{got_w}")]
    ShapeMismatch {
        expected_h: usize,
        expected_w: usize,
        got_h: usize,
        got_w: usize,
    },
}

/// A strictly 0/1 mask at image resolution.
#[derive(Debug, Clone, PartialEq)]
pub struct BinaryMask {
    plane: Plane,
    coverage: f64,
}

impl BinaryMask {
    pub fn width(&self) -> usize {
        self.plane.width()
    }

    pub fn height(&self) -> usize {
        self.plane.height()
    }

    /// Fraction of pixels set to 1.
    pub fn coverage(&self) -> f64 {
        self.coverage
    }

    pub fn plane(&self) -> &Plane {
        &self.plane
    }

    pub fn into_plane(self) -> Plane {
        self.plane
    }

    #[inline]
    pub fn get(&self, y: usize, x: usize) -> f64 {
        self.plane.get(y, x)
    }
}

fn check_shape(expected: (usize, usize), got: (usize, usize)) -> Result<(), BlendError> {
    if expected != got {
        return Err(BlendError::ShapeMismatch {
            expected_h: expected.0,
            expected_w: expected.1,
            got_h: got.0,
            got_w: got.1,
        });
    }
    Ok(())
}

/// Thresholds a soft mask: values `>= threshold` become 1, the rest 0.
pub fn binarize(soft: &Plane, threshold: f64) -> Result<BinaryMask, BlendError> {
    if !(threshold > 0.0 && threshold < 1.0) {
        return Err(BlendError::RangeError(format!(
            "threshold must be in (0, 1), got {threshold}"
        )));
    }
    if soft.data().iter().any(|&v| !(0.0..=1.0).contains(&v)) {
        return Err(BlendError::RangeError(
            "soft mask values must lie in [0, 1]".into(),
        ));
    }
    let data: Vec<f64> = soft
        .data()
        .iter()
        .map(|&v| if v >= threshold { 1.0 } else { 0.0 })
        .collect();
    let ones = data.iter().filter(|&&v| v == 1.0).count();
    let coverage = ones as f64 / data.len() as f64;
    let plane = Plane::from_data(soft.height(), soft.width(), data)
        .expect("shape unchanged by thresholding");
    Ok(BinaryMask { plane, coverage })
}

/// Softens mask edges with a separable box blur of the given radius.
/// Radius 0 returns the mask values unchanged. Pixels farther than
/// `2 * radius` from a mask edge are unaffected.
pub fn feather(mask: &BinaryMask, radius: usize) -> Plane {
    if radius == 0 {
        return mask.plane.clone();
    }
    let (h, w) = (mask.height(), mask.width());
    let window = 2 * radius + 1;
    // Horizontal pass with clamp-to-edge, then vertical.
    let mut horiz = Plane::new(h, w, 0.0);
    for y in 0..h {
        for x in 0..w {
            let mut acc = 0.0;
            for dx in 0..window {
                let sx = (x + dx).saturating_sub(radius).min(w - 1);
                acc += mask.plane.get(y, sx);
            }
            horiz.set(y, x, acc / window as f64);
        }
    }
    let mut out = Plane::new(h, w, 0.0);
    for y in 0..h {
        for x in 0..w {
            let mut acc = 0.0;
            for dy in 0..window {
                let sy = (y + dy).saturating_sub(radius).min(h - 1);
                acc += horiz.get(sy, x);
            }
            out.set(y, x, acc / window as f64);
        }
    }
    out
}

/// Pixel-wise product of the stylized image with the mask: only the pixels of
/// the styled object remain, everything else goes to black.
pub fn isolate(stylized: &Image, mask: &Plane) -> Result<Image, BlendError> {
    check_shape(
        (stylized.height(), stylized.width()),
        (mask.height(), mask.width()),
    )?;
    let mut out = stylized.clone();
    let (h, w) = (stylized.height(), stylized.width());
    for y in 0..h {
        for x in 0..w {
            let m = mask.get(y, x);
            let p = stylized.pixel(y, x);
            out.set_pixel(y, x, [p[0] * m, p[1] * m, p[2] * m]);
        }
    }
    Ok(out)
}

/// Blends the stylized image over the original through the mask:
/// `out = stylized·m + original·(1−m)` per channel. For a binary mask every
/// pixel with `m == 0` is bit-identical to the original.
pub fn composite(original: &Image, stylized: &Image, mask: &Plane) -> Result<Image, BlendError> {
    check_shape(
        (original.height(), original.width()),
        (stylized.height(), stylized.width()),
    )?;
    check_shape(
        (original.height(), original.width()),
        (mask.height(), mask.width()),
    )?;
    let mut out = original.clone();
    let (h, w) = (original.height(), original.width());
    for y in 0..h {
        for x in 0..w {
            let m = mask.get(y, x);
            if m == 0.0 {
                continue; // background stays exactly the original
            }
            let o = original.pixel(y, x);
            let s = stylized.pixel(y, x);
            let inv = 1.0 - m;
            out.set_pixel(
                y,
                x,
                [
                    s[0] * m + o[0] * inv,
                    s[1] * m + o[1] * inv,
                    s[2] * m + o[2] * inv,
                ],
            );
        }
    }
    Ok(out)
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
        Image::from_data(h, w, (0..h * w * 3).map(|_| uniform(&mut rng)).collect()).unwrap()
    }

    fn random_binary(h: usize, w: usize, seed: u64) -> BinaryMask {
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(seed);
        let soft = Plane::from_data(h, w, (0..h * w).map(|_| uniform(&mut rng)).collect()).unwrap();
        binarize(&soft, 0.5).unwrap()
    }

    #[test]
    fn binarize_uniform_cases() {
        let high = Plane::new(3, 3, 0.9);
        assert!(binarize(&high, 0.5).unwrap().plane().data().iter().all(|&v| v == 1.0));
        let low = Plane::new(3, 3, 0.1);
        assert!(binarize(&low, 0.5).unwrap().plane().data().iter().all(|&v| v == 0.0));
        // Exactly at the threshold goes to 1.
        let edge = Plane::new(1, 1, 0.5);
        assert_eq!(binarize(&edge, 0.5).unwrap().get(0, 0), 1.0);
    }

    #[test]
    fn binarize_coverage_and_range_errors() {
        let mut soft = Plane::new(2, 2, 0.0);
        soft.set(0, 0, 0.8);
        let m = binarize(&soft, 0.5).unwrap();
        assert_eq!(m.coverage(), 0.25);

        let bad = Plane::new(1, 1, 1.5);
        assert!(matches!(binarize(&bad, 0.5), Err(BlendError::RangeError(_))));
        assert!(matches!(binarize(&soft, 0.0), Err(BlendError::RangeError(_))));
        assert!(matches!(binarize(&soft, 1.0), Err(BlendError::RangeError(_))));
    }

    #[test]
    fn feather_zero_radius_is_identity() {
        let m = random_binary(8, 8, 1);
        assert_eq!(feather(&m, 0), *m.plane());
    }

    #[test]
    fn feather_all_ones_stays_all_ones() {
        let ones = binarize(&Plane::new(6, 7, 1.0), 0.5).unwrap();
        let f = feather(&ones, 3);
        assert!(f.data().iter().all(|&v| (v - 1.0).abs() < 1e-12));
    }

    #[test]
    fn feather_half_plane_is_monotone_across_boundary() {
        // Left half 1, right half 0; radius 2. Values along a row must be
        // non-increasing, and equal the 1D step response away from borders.
        let mut soft = Plane::new(9, 12, 0.0);
        for y in 0..9 {
            for x in 0..6 {
                soft.set(y, x, 1.0);
            }
        }
        let mask = binarize(&soft, 0.5).unwrap();
        let f = feather(&mask, 2);
        let y = 4;
        for x in 1..12 {
            assert!(
                f.get(y, x) <= f.get(y, x - 1) + 1e-12,
                "row not monotone at x={x}"
            );
        }
        // 1D oracle: box blur of a step function, window 5.
        for x in 0..12usize {
            let mut acc = 0.0;
            for dx in 0..5usize {
                let sx = (x + dx).saturating_sub(2).min(11);
                acc += if sx < 6 { 1.0 } else { 0.0 };
            }
            let expected = acc / 5.0;
            assert!((f.get(y, x) - expected).abs() < 1e-12, "x={x}");
        }
        // Unchanged farther than 2*radius from the edge.
        assert_eq!(f.get(y, 0), 1.0);
        assert_eq!(f.get(y, 11), 0.0);
    }

    #[test]
    fn isolate_identity_and_annihilating_masks() {
        let img = random_image(5, 5, 2);
        let ones = Plane::new(5, 5, 1.0);
        assert_eq!(isolate(&img, &ones).unwrap().data(), img.data());
        let zeros = Plane::new(5, 5, 0.0);
        assert!(isolate(&img, &zeros).unwrap().data().iter().all(|&v| v == 0.0));
    }

    #[test]
    fn isolate_matches_per_pixel_oracle() {
        let img = random_image(7, 6, 3);
        let mask = random_binary(7, 6, 4);
        let out = isolate(&img, mask.plane()).unwrap();
        for y in 0..7 {
            for x in 0..6 {
                let m = mask.get(y, x);
                let p = img.pixel(y, x);
                assert_eq!(out.pixel(y, x), [p[0] * m, p[1] * m, p[2] * m]);
            }
        }
    }

    #[test]
    fn composite_zero_mask_returns_original_bit_exact() {
        let original = random_image(6, 6, 5);
        let stylized = random_image(6, 6, 6);
        let zeros = Plane::new(6, 6, 0.0);
        let out = composite(&original, &stylized, &zeros).unwrap();
        assert_eq!(out.data(), original.data());
    }

    #[test]
    fn composite_ones_mask_returns_stylized_bit_exact() {
        let original = random_image(6, 6, 7);
        let stylized = random_image(6, 6, 8);
        let ones = Plane::new(6, 6, 1.0);
        let out = composite(&original, &stylized, &ones).unwrap();
        assert_eq!(out.data(), stylized.data());
    }

    #[test]
    fn composite_agrees_with_isolate_on_mask_interior() {
        let original = random_image(8, 8, 9);
        let stylized = random_image(8, 8, 10);
        let mask = random_binary(8, 8, 11);
        let comp = composite(&original, &stylized, mask.plane()).unwrap();
        let iso = isolate(&stylized, mask.plane()).unwrap();
        for y in 0..8 {
            for x in 0..8 {
                if mask.get(y, x) == 1.0 {
                    assert_eq!(comp.pixel(y, x), iso.pixel(y, x));
                }
            }
        }
    }

    #[test]
    fn composite_shape_mismatch() {
        let a = random_image(4, 4, 1);
        let b = random_image(4, 5, 1);
        let m = Plane::new(4, 4, 0.0);
        assert!(matches!(
            composite(&a, &b, &m),
            Err(BlendError::ShapeMismatch { .. })
        ));
    }
}
