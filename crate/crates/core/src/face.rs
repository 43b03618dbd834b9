//! Aligned face crops and their landmark metadata.

use ndarray::Array3;

use crate::error::{Error, Result};

/// Side length of an aligned face crop in pixels.
pub const IMAGE_SIZE: usize = 112;

/// A 2D point in pixel coordinates.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Point {
    pub x: f64,
    pub y: f64,
}

impl Point {
    pub fn new(x: f64, y: f64) -> Self {
        Point { x, y }
    }

    pub fn dist(self, other: Point) -> f64 {
        ((self.x - other.x).powi(2) + (self.y - other.y).powi(2)).sqrt()
    }
}

/// The five alignment landmarks, in the conventional order.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Landmarks {
    pub left_eye: Point,
    pub right_eye: Point,
    pub nose: Point,
    pub left_mouth: Point,
    pub right_mouth: Point,
}

impl Landmarks {
    pub fn points(&self) -> [Point; 5] {
        [
            self.left_eye,
            self.right_eye,
            self.nose,
            self.left_mouth,
            self.right_mouth,
        ]
    }

    /// Checks bounds and the eye/nose ordering (image y grows downward).
    pub fn validate(&self) -> Result<()> {
        let size = IMAGE_SIZE as f64;
        for (i, p) in self.points().iter().enumerate() {
            if !(p.x >= 0.0 && p.x < size && p.y >= 0.0 && p.y < size) {
                return Err(Error::Contract(format!(
                    "landmark {i} at ({}, {}) outside [0, {size})",
                    p.x, p.y
                )));
            }
        }
        if !(self.nose.y > self.left_eye.y && self.nose.y > self.right_eye.y) {
            return Err(Error::Contract(
                "nose tip must lie strictly below both eyes".to_string(),
            ));
        }
        Ok(())
    }
}

/// An aligned 112x112x3 face crop with pixel values in [-1, 1].
///
/// Pixels are stored channel-major `(3, 112, 112)`. Instances are immutable
/// after construction and safe to share across workers.
#[derive(Debug, Clone)]
pub struct FaceImage {
    pixels: Array3<f64>,
    pub landmarks: Landmarks,
    pub source_id: String,
    pub identity_label: Option<usize>,
}

impl FaceImage {
    /// Builds a face image, validating the pixel range and landmark
    /// invariants.
    pub fn new(
        pixels: Array3<f64>,
        landmarks: Landmarks,
        source_id: String,
        identity_label: Option<usize>,
    ) -> Result<Self> {
        if pixels.dim() != (3, IMAGE_SIZE, IMAGE_SIZE) {
            return Err(Error::Contract(format!(
                "pixel raster must be (3, {IMAGE_SIZE}, {IMAGE_SIZE}), got {:?}",
                pixels.dim()
            )));
        }
        if !pixels.iter().all(|&v| (-1.0..=1.0).contains(&v)) {
            return Err(Error::Contract(
                "pixel values must lie in [-1, 1]".to_string(),
            ));
        }
        landmarks.validate()?;
        Ok(FaceImage {
            pixels,
            landmarks,
            source_id,
            identity_label,
        })
    }

    pub fn pixels(&self) -> &Array3<f64> {
        &self.pixels
    }

    /// Copy with replaced pixels and unchanged metadata. The caller must
    /// keep values inside [-1, 1]; this is used by the mask renderer, which
    /// writes legal colors by construction.
    pub(crate) fn with_pixels(&self, pixels: Array3<f64>) -> FaceImage {
        debug_assert_eq!(pixels.dim(), (3, IMAGE_SIZE, IMAGE_SIZE));
        FaceImage {
            pixels,
            landmarks: self.landmarks,
            source_id: self.source_id.clone(),
            identity_label: self.identity_label,
        }
    }
}

/// Canonical landmark positions for the 112x112 alignment template. Used by
/// the toy data generator and as a convenient test fixture.
pub fn canonical_landmarks() -> Landmarks {
    Landmarks {
        left_eye: Point::new(38.3, 51.7),
        right_eye: Point::new(73.5, 51.5),
        nose: Point::new(56.0, 71.7),
        left_mouth: Point::new(41.5, 92.4),
        right_mouth: Point::new(70.7, 92.2),
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn zero_pixels() -> Array3<f64> {
        Array3::zeros((3, IMAGE_SIZE, IMAGE_SIZE))
    }

    #[test]
    fn valid_image_accepted() {
        FaceImage::new(zero_pixels(), canonical_landmarks(), "t".into(), Some(0)).unwrap();
    }

    #[test]
    fn out_of_range_pixel_rejected() {
        let mut px = zero_pixels();
        px[[0, 5, 5]] = 1.5;
        assert!(FaceImage::new(px, canonical_landmarks(), "t".into(), None).is_err());
    }

    #[test]
    fn nose_above_eyes_rejected() {
        let mut lm = canonical_landmarks();
        lm.nose.y = 40.0;
        assert!(FaceImage::new(zero_pixels(), lm, "t".into(), None).is_err());
    }

    #[test]
    fn landmark_out_of_bounds_rejected() {
        let mut lm = canonical_landmarks();
        lm.left_mouth.x = 112.0;
        assert!(FaceImage::new(zero_pixels(), lm, "t".into(), None).is_err());
    }
}
