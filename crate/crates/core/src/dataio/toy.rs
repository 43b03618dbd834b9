//! Procedural toy dataset for desk-scale runs.
//!
//! Each "identity" is a distinct colored layout of rectangles — some above
//! the mask region (periocular analogue), some below (mouth/chin analogue)
//! — over an identity-specific background. Images of one identity share the
//! layout but differ in brightness, per-pixel noise, a small global
//! translation, and small landmark jitter. This gives genuine pairs real
//! within-identity variation while keeping identities separable from the
//! upper region alone, so mask-invariant training has signal to exploit.

use std::collections::HashMap;
use std::path::Path;

use ndarray::Array3;
use rand::Rng;

use crate::error::Result;
use crate::face::{canonical_landmarks, FaceImage, Landmarks, IMAGE_SIZE};
use crate::rng::make_rng;

use super::dataset::{DatasetRecord, IdentityDataset, InMemorySource};
use super::preprocess::{denormalize_pixel, landmarks_to_string};

/// Toy generation parameters.
#[derive(Debug, Clone, Copy)]
pub struct ToyOptions {
    pub num_identities: usize,
    pub images_per_identity: usize,
    /// Peak per-pixel uniform noise amplitude.
    pub noise: f64,
    pub seed: i64,
}

impl Default for ToyOptions {
    fn default() -> Self {
        ToyOptions {
            num_identities: 20,
            images_per_identity: 26,
            noise: 0.06,
            seed: 42,
        }
    }
}

#[derive(Debug, Clone, Copy)]
struct Rect {
    x: f64,
    y: f64,
    w: f64,
    h: f64,
    color: [f64; 3],
}

#[derive(Debug, Clone)]
struct IdentityLayout {
    background: [f64; 3],
    rects: Vec<Rect>,
}

fn identity_layout(seed: i64, identity: usize) -> IdentityLayout {
    let mut rng = make_rng(seed, &format!("toy/id{identity}"));
    let mut color = |lo: f64, hi: f64| -> [f64; 3] {
        let mut c = [0.0; 3];
        for v in c.iter_mut() {
            *v = rng.gen_range(lo..=hi);
        }
        c
    };
    let background = color(-0.6, 0.6);
    let mut rng2 = make_rng(seed, &format!("toy/id{identity}/rects"));
    let mut rects = Vec::new();
    // Three rectangles in the upper (never-masked) region, three below.
    for band in 0..2 {
        let (y_lo, y_hi) = if band == 0 { (4.0, 40.0) } else { (62.0, 96.0) };
        for _ in 0..3 {
            let w = rng2.gen_range(12.0..=26.0);
            let h = rng2.gen_range(8.0..=14.0);
            let x = rng2.gen_range(0.0..=(IMAGE_SIZE as f64 - w));
            let y = rng2.gen_range(y_lo..=(y_hi - h).max(y_lo));
            let mut c = [0.0; 3];
            for v in c.iter_mut() {
                *v = rng2.gen_range(-0.95..=0.95);
            }
            rects.push(Rect { x, y, w, h, color: c });
        }
    }
    IdentityLayout { background, rects }
}

fn render_image(
    layout: &IdentityLayout,
    seed: i64,
    identity: usize,
    image_index: usize,
    noise: f64,
) -> (Array3<f64>, Landmarks) {
    let mut rng = make_rng(seed, &format!("toy/id{identity}/img{image_index}"));
    let brightness: f64 = rng.gen_range(-0.08..=0.08);
    let dx: f64 = rng.gen_range(-2.0..=2.0);
    let dy: f64 = rng.gen_range(-2.0..=2.0);

    let mut pixels = Array3::from_elem((3, IMAGE_SIZE, IMAGE_SIZE), 0.0);
    for y in 0..IMAGE_SIZE {
        for x in 0..IMAGE_SIZE {
            let (fx, fy) = (x as f64, y as f64);
            let mut px = layout.background;
            for r in &layout.rects {
                let (rx, ry) = (r.x + dx, r.y + dy);
                if fx >= rx && fx < rx + r.w && fy >= ry && fy < ry + r.h {
                    px = r.color;
                }
            }
            for c in 0..3 {
                let v = px[c] + brightness + rng.gen_range(-noise..=noise);
                pixels[[c, y, x]] = v.clamp(-1.0, 1.0);
            }
        }
    }

    let base = canonical_landmarks();
    let mut jitter = || rng.gen_range(-1.5..=1.5);
    let landmarks = Landmarks {
        left_eye: crate::face::Point::new(base.left_eye.x + jitter(), base.left_eye.y + jitter()),
        right_eye: crate::face::Point::new(
            base.right_eye.x + jitter(),
            base.right_eye.y + jitter(),
        ),
        nose: crate::face::Point::new(base.nose.x + jitter(), base.nose.y + jitter()),
        left_mouth: crate::face::Point::new(
            base.left_mouth.x + jitter(),
            base.left_mouth.y + jitter(),
        ),
        right_mouth: crate::face::Point::new(
            base.right_mouth.x + jitter(),
            base.right_mouth.y + jitter(),
        ),
    };
    (pixels, landmarks)
}

fn rel_path(identity: usize, image_index: usize) -> String {
    format!("id_{identity:04}/img_{image_index:04}.png")
}

/// Generates the toy dataset in memory.
pub fn toy_dataset(opts: &ToyOptions) -> Result<(IdentityDataset, InMemorySource)> {
    let mut records = Vec::new();
    let mut images = HashMap::new();
    for identity in 0..opts.num_identities {
        let layout = identity_layout(opts.seed, identity);
        for j in 0..opts.images_per_identity {
            let (pixels, landmarks) = render_image(&layout, opts.seed, identity, j, opts.noise);
            let rel = rel_path(identity, j);
            let image = FaceImage::new(pixels, landmarks, rel.clone(), Some(identity))?;
            records.push(DatasetRecord {
                rel_path: rel.clone(),
                label: identity,
                identity: format!("id_{identity:04}"),
                landmarks,
            });
            images.insert(rel, image);
        }
    }
    let dataset = IdentityDataset::from_records(records, opts.num_identities)?;
    Ok((dataset, InMemorySource::new(images)))
}

/// Writes the toy dataset as a PNG tree with landmark sidecars, in the
/// standard dataset layout.
pub fn write_toy_dataset(opts: &ToyOptions, root: &Path) -> Result<()> {
    for identity in 0..opts.num_identities {
        let layout = identity_layout(opts.seed, identity);
        let dir = root.join(format!("id_{identity:04}"));
        std::fs::create_dir_all(&dir)?;
        for j in 0..opts.images_per_identity {
            let (pixels, landmarks) = render_image(&layout, opts.seed, identity, j, opts.noise);
            let mut buf = image::RgbImage::new(IMAGE_SIZE as u32, IMAGE_SIZE as u32);
            for y in 0..IMAGE_SIZE {
                for x in 0..IMAGE_SIZE {
                    let px = image::Rgb([
                        denormalize_pixel(pixels[[0, y, x]]),
                        denormalize_pixel(pixels[[1, y, x]]),
                        denormalize_pixel(pixels[[2, y, x]]),
                    ]);
                    buf.put_pixel(x as u32, y as u32, px);
                }
            }
            let img_path = dir.join(format!("img_{j:04}.png"));
            buf.save(&img_path)?;
            std::fs::write(
                dir.join(format!("img_{j:04}.landmarks")),
                landmarks_to_string(&landmarks),
            )?;
        }
    }
    Ok(())
}

/// Splits a dataset's records into train/eval index lists: the first
/// `eval_per_identity` images of each identity are held out for evaluation.
pub fn holdout_split(
    dataset: &IdentityDataset,
    eval_per_identity: usize,
) -> (Vec<usize>, Vec<usize>) {
    let mut train = Vec::new();
    let mut eval = Vec::new();
    for positions in &dataset.index {
        for (i, &pos) in positions.iter().enumerate() {
            if i < eval_per_identity {
                eval.push(pos);
            } else {
                train.push(pos);
            }
        }
    }
    (train, eval)
}
