//! Synthetic mask rendering from alignment landmarks.
//!
//! The mask is a six-vertex polygon anchored on the five landmarks: the top
//! edge sits midway between the eye line and the nose tip and spans the
//! estimated face width; the side vertices sit on the crop edges at mouth
//! height; the bottom edge is the lower crop boundary. Training renders add
//! per-vertex jitter and a random fill color; the benchmark variant drops
//! the jitter but keeps the random color.

use ndarray::Array3;
use rand::Rng;

use crate::error::{Error, Result};
use crate::face::{FaceImage, Landmarks, Point, IMAGE_SIZE};
use crate::rng::StreamRng;

/// Face width is estimated as this multiple of the inter-mouth-corner
/// distance (clipped to the crop bounds).
const FACE_WIDTH_FACTOR: f64 = 2.2;

/// Minimum polygon area as a fraction of the crop area; below this the
/// landmark geometry is considered degenerate.
const MIN_AREA_FRACTION: f64 = 0.10;

/// Mask fill color selection.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum ColorMode {
    /// Each channel drawn uniformly from [-1, 1].
    RandomUniform,
    /// Fixed RGB fill in the [-1, 1] pixel domain.
    Fixed([f64; 3]),
}

/// Rendering parameters for one mask style.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct MaskTemplate {
    pub color_mode: ColorMode,
    /// Maximum per-vertex displacement in pixels (uniform per axis).
    pub jitter_px: f64,
}

impl MaskTemplate {
    /// Training style: random color, 2 px shape jitter.
    pub fn training() -> Self {
        MaskTemplate {
            color_mode: ColorMode::RandomUniform,
            jitter_px: 2.0,
        }
    }

    /// Benchmark style: random color, no jitter (deterministic shape).
    pub fn benchmark() -> Self {
        MaskTemplate {
            color_mode: ColorMode::RandomUniform,
            jitter_px: 0.0,
        }
    }
}

/// Probabilistic masking policy for training batches.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct MaskPolicy {
    pub p_mask: f64,
    pub template: MaskTemplate,
}

impl MaskPolicy {
    pub fn new(p_mask: f64, template: MaskTemplate) -> Result<Self> {
        if !(0.0..=1.0).contains(&p_mask) {
            return Err(Error::Validation {
                field: "p_mask",
                msg: "must be in [0, 1]".to_string(),
            });
        }
        Ok(MaskPolicy { p_mask, template })
    }
}

/// Anchors the base (un-jittered) mask polygon on the landmarks.
///
/// Vertex order: top-left, top-right, right-side, bottom-right,
/// bottom-left, left-side.
pub fn mask_polygon(landmarks: &Landmarks) -> [Point; 6] {
    let size = IMAGE_SIZE as f64;
    let eye_y = 0.5 * (landmarks.left_eye.y + landmarks.right_eye.y);
    let top_y = 0.5 * (eye_y + landmarks.nose.y);
    let mouth_y = 0.5 * (landmarks.left_mouth.y + landmarks.right_mouth.y);
    let mouth_width = landmarks.left_mouth.dist(landmarks.right_mouth);
    let center_x = 0.5 * (landmarks.left_mouth.x + landmarks.right_mouth.x);
    let half_width = 0.5 * FACE_WIDTH_FACTOR * mouth_width;
    [
        Point::new((center_x - half_width).max(0.0), top_y),
        Point::new((center_x + half_width).min(size), top_y),
        Point::new(size, mouth_y),
        Point::new(size, size),
        Point::new(0.0, size),
        Point::new(0.0, mouth_y),
    ]
}

/// Shoelace area of a polygon.
pub fn polygon_area(poly: &[Point]) -> f64 {
    let n = poly.len();
    let mut twice = 0.0;
    for i in 0..n {
        let a = poly[i];
        let b = poly[(i + 1) % n];
        twice += a.x * b.y - b.x * a.y;
    }
    0.5 * twice.abs()
}

/// Even-odd point-in-polygon test.
pub fn point_in_polygon(poly: &[Point], x: f64, y: f64) -> bool {
    let n = poly.len();
    let mut inside = false;
    let mut j = n - 1;
    for i in 0..n {
        let (pi, pj) = (poly[i], poly[j]);
        if (pi.y > y) != (pj.y > y) {
            let x_cross = pi.x + (y - pi.y) / (pj.y - pi.y) * (pj.x - pi.x);
            if x < x_cross {
                inside = !inside;
            }
        }
        j = i;
    }
    inside
}

fn draw_color(template: &MaskTemplate, rng: &mut StreamRng) -> [f64; 3] {
    match template.color_mode {
        ColorMode::Fixed(c) => c,
        ColorMode::RandomUniform => {
            let mut c = [0.0; 3];
            for v in c.iter_mut() {
                *v = rng.gen_range(-1.0..=1.0);
            }
            c
        }
    }
}

/// Applies uniform per-vertex jitter in [-jitter, +jitter] per axis.
/// Draw order is fixed (x then y, vertex by vertex).
pub fn jitter_polygon(base: &[Point; 6], jitter_px: f64, rng: &mut StreamRng) -> [Point; 6] {
    if jitter_px == 0.0 {
        return *base;
    }
    let mut out = *base;
    for p in out.iter_mut() {
        p.x += rng.gen_range(-jitter_px..=jitter_px);
        p.y += rng.gen_range(-jitter_px..=jitter_px);
    }
    out
}

/// Renders the mask onto a copy of the image.
///
/// The color is drawn first, then the jitter (when `jitter_px > 0`), so the
/// benchmark variant consumes exactly three uniform draws. Pixels whose
/// centers fall inside the polygon are replaced by the fill color; all
/// other pixels are bit-identical to the input. Landmarks and metadata are
/// unchanged.
pub fn render_mask(
    image: &FaceImage,
    template: &MaskTemplate,
    rng: &mut StreamRng,
) -> Result<FaceImage> {
    let base = mask_polygon(&image.landmarks);
    let area = polygon_area(&base);
    let min_area = MIN_AREA_FRACTION * (IMAGE_SIZE * IMAGE_SIZE) as f64;
    if area < min_area {
        return Err(Error::Geometry(format!(
            "mask polygon area {area:.1} px^2 below {min_area:.1} (degenerate landmarks)"
        )));
    }
    let color = draw_color(template, rng);
    let poly = jitter_polygon(&base, template.jitter_px, rng);

    let mut pixels: Array3<f64> = image.pixels().clone();
    for y in 0..IMAGE_SIZE {
        let cy = y as f64 + 0.5;
        for x in 0..IMAGE_SIZE {
            let cx = x as f64 + 0.5;
            if point_in_polygon(&poly, cx, cy) {
                for ch in 0..3 {
                    pixels[[ch, y, x]] = color[ch];
                }
            }
        }
    }
    Ok(image.with_pixels(pixels))
}

/// Masks the image with probability `p_mask`; the flag reports whether the
/// mask branch was taken. One uniform draw is consumed either way.
pub fn maybe_mask(
    image: &FaceImage,
    policy: &MaskPolicy,
    rng: &mut StreamRng,
) -> Result<(FaceImage, bool)> {
    let u = rng.gen::<f64>();
    if u < policy.p_mask {
        Ok((render_mask(image, &policy.template, rng)?, true))
    } else {
        Ok((image.clone(), false))
    }
}

/// Benchmark-style mask: deterministic shape (no jitter), random color.
pub fn mask_for_benchmark(image: &FaceImage, rng: &mut StreamRng) -> Result<FaceImage> {
    render_mask(image, &MaskTemplate::benchmark(), rng)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::face::canonical_landmarks;
    use crate::rng::make_rng;
    use ndarray::Array3;

    fn test_image() -> FaceImage {
        let pixels = Array3::from_shape_fn((3, IMAGE_SIZE, IMAGE_SIZE), |(c, y, x)| {
            (((c + 1) * (y * IMAGE_SIZE + x)) % 255) as f64 / 127.5 - 1.0
        });
        FaceImage::new(pixels, canonical_landmarks(), "test".into(), Some(0)).unwrap()
    }

    fn landmark_pixel(p: Point) -> (usize, usize) {
        (p.x.floor() as usize, p.y.floor() as usize)
    }

    #[test]
    fn fixed_color_no_jitter_deterministic() {
        let img = test_image();
        let template = MaskTemplate {
            color_mode: ColorMode::Fixed([0.2, -0.4, 0.9]),
            jitter_px: 0.0,
        };
        let a = render_mask(&img, &template, &mut make_rng(1, "a")).unwrap();
        let b = render_mask(&img, &template, &mut make_rng(2, "b")).unwrap();
        assert_eq!(a.pixels(), b.pixels());
    }

    #[test]
    fn coverage_of_landmarks() {
        let img = test_image();
        let out = render_mask(&img, &MaskTemplate::training(), &mut make_rng(3, "cov")).unwrap();
        let changed = |p: Point| {
            let (x, y) = landmark_pixel(p);
            (0..3).any(|c| out.pixels()[[c, y, x]] != img.pixels()[[c, y, x]])
        };
        let lm = img.landmarks;
        // Nose and mouth pixels covered (fill color differs from the test
        // pattern almost surely; assert via polygon membership instead of
        // color to be exact).
        let poly_contains = |p: Point| {
            let (x, y) = landmark_pixel(p);
            // reconstruct the same polygon the renderer used
            let base = mask_polygon(&lm);
            let mut rng = make_rng(3, "cov");
            let _color = draw_color(&MaskTemplate::training(), &mut rng);
            let poly = jitter_polygon(&base, 2.0, &mut rng);
            point_in_polygon(&poly, x as f64 + 0.5, y as f64 + 0.5)
        };
        assert!(poly_contains(lm.nose));
        assert!(poly_contains(lm.left_mouth));
        assert!(poly_contains(lm.right_mouth));
        assert!(!poly_contains(lm.left_eye));
        assert!(!poly_contains(lm.right_eye));
        // eyes untouched in the raster as well
        assert!(!changed(lm.left_eye));
        assert!(!changed(lm.right_eye));
    }

    #[test]
    fn outside_pixels_bit_identical_and_masked_pixels_uniform() {
        let img = test_image();
        let mut rng = make_rng(7, "preserve");
        let out = render_mask(&img, &MaskTemplate::training(), &mut rng).unwrap();
        // recover polygon+color by replaying the stream
        let mut replay = make_rng(7, "preserve");
        let color = draw_color(&MaskTemplate::training(), &mut replay);
        let poly = jitter_polygon(&mask_polygon(&img.landmarks), 2.0, &mut replay);
        for y in 0..IMAGE_SIZE {
            for x in 0..IMAGE_SIZE {
                let inside = point_in_polygon(&poly, x as f64 + 0.5, y as f64 + 0.5);
                for c in 0..3 {
                    let v = out.pixels()[[c, y, x]];
                    if inside {
                        assert_eq!(v, color[c]);
                        assert!((-1.0..=1.0).contains(&v));
                    } else {
                        assert_eq!(v, img.pixels()[[c, y, x]]);
                    }
                }
            }
        }
    }

    #[test]
    fn jitter_vertices_within_chebyshev_bound() {
        let lm = canonical_landmarks();
        let base = mask_polygon(&lm);
        let a = jitter_polygon(&base, 2.0, &mut make_rng(1, "ja"));
        let b = jitter_polygon(&base, 2.0, &mut make_rng(2, "jb"));
        assert_ne!(a, b);
        for (pa, pb) in a.iter().zip(b.iter()) {
            assert!((pa.x - pb.x).abs() <= 4.0);
            assert!((pa.y - pb.y).abs() <= 4.0);
        }
    }

    #[test]
    fn maybe_mask_boundary_probabilities() {
        let img = test_image();
        let never = MaskPolicy::new(0.0, MaskTemplate::training()).unwrap();
        let always = MaskPolicy::new(1.0, MaskTemplate::training()).unwrap();
        let mut rng = make_rng(11, "p0");
        for _ in 0..200 {
            let (_, masked) = maybe_mask(&img, &never, &mut rng).unwrap();
            assert!(!masked);
        }
        let mut rng = make_rng(11, "p1");
        for _ in 0..200 {
            let (_, masked) = maybe_mask(&img, &always, &mut rng).unwrap();
            assert!(masked);
        }
    }

    #[test]
    fn maybe_mask_frequency_calibrated() {
        let img = test_image();
        let policy = MaskPolicy::new(0.5, MaskTemplate::training()).unwrap();
        let mut rng = make_rng(13, "p-half");
        let mut masked = 0usize;
        for _ in 0..10_000 {
            if maybe_mask(&img, &policy, &mut rng).unwrap().1 {
                masked += 1;
            }
        }
        let freq = masked as f64 / 10_000.0;
        assert!((0.48..=0.52).contains(&freq), "freq = {freq}");
    }

    #[test]
    fn benchmark_mask_deterministic_given_seed() {
        let img = test_image();
        let a = mask_for_benchmark(&img, &mut make_rng(17, "bench")).unwrap();
        let b = mask_for_benchmark(&img, &mut make_rng(17, "bench")).unwrap();
        assert_eq!(a.pixels(), b.pixels());
    }

    #[test]
    fn benchmark_mask_same_coverage_different_color_across_seeds() {
        let img = test_image();
        let a = mask_for_benchmark(&img, &mut make_rng(1, "bench")).unwrap();
        let b = mask_for_benchmark(&img, &mut make_rng(2, "bench")).unwrap();
        let mut differing = Vec::new();
        let mut covered_a = Vec::new();
        let mut covered_b = Vec::new();
        for y in 0..IMAGE_SIZE {
            for x in 0..IMAGE_SIZE {
                let pa = (0..3).map(|c| a.pixels()[[c, y, x]]).collect::<Vec<_>>();
                let pb = (0..3).map(|c| b.pixels()[[c, y, x]]).collect::<Vec<_>>();
                let orig = (0..3).map(|c| img.pixels()[[c, y, x]]).collect::<Vec<_>>();
                if pa != orig {
                    covered_a.push((x, y));
                }
                if pb != orig {
                    covered_b.push((x, y));
                }
                if pa != pb {
                    differing.push((x, y));
                }
            }
        }
        assert_eq!(covered_a, covered_b, "same polygon coverage");
        assert!(!differing.is_empty(), "colors differ across seeds");
        // eye landmark pixels untouched
        for eye in [img.landmarks.left_eye, img.landmarks.right_eye] {
            let (x, y) = landmark_pixel(eye);
            assert!(!covered_a.contains(&(x, y)));
        }
    }

    #[test]
    fn degenerate_geometry_rejected() {
        // Face compressed into the bottom rows: polygon area collapses.
        let lm = Landmarks {
            left_eye: Point::new(40.0, 109.0),
            right_eye: Point::new(70.0, 109.0),
            nose: Point::new(56.0, 111.0),
            left_mouth: Point::new(45.0, 110.5),
            right_mouth: Point::new(67.0, 110.5),
        };
        let pixels = Array3::zeros((3, IMAGE_SIZE, IMAGE_SIZE));
        let img = FaceImage::new(pixels, lm, "degenerate".into(), None).unwrap();
        let err = render_mask(&img, &MaskTemplate::training(), &mut make_rng(1, "g"));
        assert!(matches!(err, Err(Error::Geometry(_))));
    }
}
