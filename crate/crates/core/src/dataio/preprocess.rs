//! Raw image to [`FaceImage`] conversion.

use std::path::Path;

use ndarray::Array3;

use crate::error::{Error, Result};
use crate::face::{FaceImage, Landmarks, Point, IMAGE_SIZE};

/// Converts an aligned 112x112 RGB8 raster (row-major, interleaved
/// channels) into a [`FaceImage`]: each channel value `p` maps to
/// `p / 127.5 - 1`, landmarks pass through unchanged.
pub fn preprocess(
    rgb: &[u8],
    width: usize,
    height: usize,
    landmarks: Landmarks,
    source_id: String,
    identity_label: Option<usize>,
) -> Result<FaceImage> {
    if width != IMAGE_SIZE || height != IMAGE_SIZE {
        return Err(Error::Contract(format!(
            "expected a {IMAGE_SIZE}x{IMAGE_SIZE} raster, got {width}x{height}"
        )));
    }
    if rgb.len() != width * height * 3 {
        return Err(Error::Contract(format!(
            "raster byte length {} does not match {width}x{height}x3",
            rgb.len()
        )));
    }
    let pixels = Array3::from_shape_fn((3, IMAGE_SIZE, IMAGE_SIZE), |(c, y, x)| {
        rgb[(y * IMAGE_SIZE + x) * 3 + c] as f64 / 127.5 - 1.0
    });
    FaceImage::new(pixels, landmarks, source_id, identity_label)
}

/// Inverse of the pixel map, for writing images back out:
/// `round((p + 1) * 127.5)` clamped to [0, 255].
pub fn denormalize_pixel(p: f64) -> u8 {
    ((p + 1.0) * 127.5).round().clamp(0.0, 255.0) as u8
}

/// Parses a landmark sidecar: five `x y` lines in the order left eye,
/// right eye, nose, left mouth corner, right mouth corner.
pub fn read_landmarks_file(path: &Path) -> Result<Landmarks> {
    let text = std::fs::read_to_string(path).map_err(|e| {
        Error::Ingestion(format!("cannot read landmark sidecar {}: {e}", path.display()))
    })?;
    parse_landmarks(&text)
        .map_err(|msg| Error::Ingestion(format!("{}: {msg}", path.display())))
}

pub(crate) fn parse_landmarks(text: &str) -> std::result::Result<Landmarks, String> {
    let mut points = Vec::with_capacity(5);
    for (i, line) in text.lines().enumerate() {
        let line = line.trim();
        if line.is_empty() {
            continue;
        }
        let mut it = line.split_whitespace();
        let x: f64 = it
            .next()
            .and_then(|t| t.parse().ok())
            .ok_or_else(|| format!("line {}: expected `x y`", i + 1))?;
        let y: f64 = it
            .next()
            .and_then(|t| t.parse().ok())
            .ok_or_else(|| format!("line {}: expected `x y`", i + 1))?;
        if it.next().is_some() {
            return Err(format!("line {}: trailing tokens", i + 1));
        }
        points.push(Point::new(x, y));
    }
    if points.len() != 5 {
        return Err(format!("expected 5 landmark lines, got {}", points.len()));
    }
    Ok(Landmarks {
        left_eye: points[0],
        right_eye: points[1],
        nose: points[2],
        left_mouth: points[3],
        right_mouth: points[4],
    })
}

pub(crate) fn landmarks_to_string(lm: &Landmarks) -> String {
    lm.points()
        .iter()
        .map(|p| format!("{} {}\n", p.x, p.y))
        .collect()
}
