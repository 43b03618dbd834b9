//! Training losses: elastic-margin identity classification, embedding-level
//! knowledge distillation, and their weighted combination.
//!
//! All three are pure functions of their inputs and the supplied random
//! draws, and return exact analytic gradients for the student side.

use ndarray::{Array1, Array2};
use rand::Rng;
use rand_distr::{Distribution, Normal};

use crate::config::MarginHeadConfig;
use crate::embedding::{check_unit_rows, NORM_CONTRACT_TOLERANCE};
use crate::error::{Error, Result};
use crate::rng::{make_rng, StreamRng};

/// Clamp bound keeping `cos` strictly inside (-1, 1) so that
/// `sin = sqrt(1 - cos^2)` stays positive and the angle-sum formula is
/// NaN-free at 0 and pi.
const COS_CLAMP: f64 = 1.0 - 1e-7;

/// Identity-class prototypes plus the margin hyperparameters.
///
/// Rows of `prototypes` are the class directions; they are re-normalized on
/// every forward pass, and gradients returned for them flow through that
/// normalization.
#[derive(Debug, Clone)]
pub struct MarginHead {
    pub prototypes: Array2<f64>,
    pub config: MarginHeadConfig,
}

impl MarginHead {
    /// Initializes prototypes from an isotropic Gaussian (stream
    /// `"prototypes"`), each row L2-normalized.
    pub fn init(config: MarginHeadConfig, seed: i64) -> Result<Self> {
        config.validate()?;
        let mut rng = make_rng(seed, "prototypes");
        let normal = Normal::new(0.0, 1.0).expect("unit normal");
        let mut prototypes = Array2::zeros((config.num_classes, config.embedding_dim));
        for mut row in prototypes.rows_mut() {
            for v in row.iter_mut() {
                *v = normal.sample(&mut rng);
            }
            let norm = row.dot(&row).sqrt();
            row.mapv_inplace(|v| v / norm);
        }
        Ok(MarginHead { prototypes, config })
    }

    pub fn num_classes(&self) -> usize {
        self.prototypes.nrows()
    }

    fn normalized_prototypes(&self) -> Array2<f64> {
        let mut w = self.prototypes.clone();
        for mut row in w.rows_mut() {
            let norm = row.dot(&row).sqrt();
            row.mapv_inplace(|v| v / norm);
        }
        w
    }
}

/// One Gaussian margin draw per sample: mean `margin`, std `sigma`.
pub fn draw_elastic_margin(
    config: &MarginHeadConfig,
    rng: &mut StreamRng,
    batch_size: usize,
) -> Vec<f64> {
    let normal = Normal::new(config.margin, config.sigma).expect("sigma >= 0");
    (0..batch_size).map(|_| normal.sample(rng)).collect()
}

/// Value and gradients of the elastic-margin classification loss.
#[derive(Debug, Clone)]
pub struct ArcLossOutput {
    pub loss: f64,
    /// Gradient with respect to the (normalized) embedding rows.
    pub d_embeddings: Array2<f64>,
    /// Gradient with respect to the raw prototype rows (through the
    /// per-forward row normalization).
    pub d_prototypes: Array2<f64>,
}

/// Elastic-margin softmax loss over cosine logits.
///
/// Per sample `i` with label `y`: the target logit is
/// `s * cos(theta_y + m_i)` computed as
/// `s * (cos_y * cos(m_i) - sin_y * sin(m_i))` with `cos_y` clamped away
/// from +-1; non-target logits are `s * cos(theta_j)`. The loss is the mean
/// negative log-softmax of the target over the batch.
pub fn elastic_arc_loss(
    embeddings: &Array2<f64>,
    labels: &[usize],
    head: &MarginHead,
    margins: &[f64],
) -> Result<ArcLossOutput> {
    let (n, d) = embeddings.dim();
    let c = head.num_classes();
    if head.prototypes.ncols() != d {
        return Err(Error::Contract(format!(
            "embedding dim {d} does not match prototype dim {}",
            head.prototypes.ncols()
        )));
    }
    if labels.len() != n || margins.len() != n {
        return Err(Error::Contract(format!(
            "batch size mismatch: {n} embeddings, {} labels, {} margins",
            labels.len(),
            margins.len()
        )));
    }
    if n == 0 {
        return Err(Error::Contract("empty batch".to_string()));
    }
    for &label in labels {
        if label >= c {
            return Err(Error::LabelOutOfRange {
                label,
                num_classes: c,
            });
        }
    }
    check_unit_rows(embeddings, "elastic_arc_loss embeddings")?;

    let w_hat = head.normalized_prototypes();
    // cosines: n x c
    let cos = embeddings.dot(&w_hat.t());

    let mut loss = 0.0;
    let mut d_embeddings = Array2::zeros((n, d));
    let mut d_w_hat: Array2<f64> = Array2::zeros((c, d));
    let s = head.config.scale;
    let inv_n = 1.0 / n as f64;

    let mut logits = vec![0.0f64; c];
    for i in 0..n {
        let y = labels[i];
        let (cos_m, sin_m) = (margins[i].cos(), margins[i].sin());
        let raw_cy = cos[[i, y]];
        let clamped = !(-COS_CLAMP..=COS_CLAMP).contains(&raw_cy);
        let cy = raw_cy.clamp(-COS_CLAMP, COS_CLAMP);
        let sin_y = (1.0 - cy * cy).max(0.0).sqrt();

        for j in 0..c {
            logits[j] = s * cos[[i, j]];
        }
        logits[y] = s * (cy * cos_m - sin_y * sin_m);

        // stable log-softmax
        let max = logits.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
        let sum_exp: f64 = logits.iter().map(|&z| (z - max).exp()).sum();
        let lse = max + sum_exp.ln();
        loss += (lse - logits[y]) * inv_n;

        // d(target logit)/d(cos_y); zero when the clamp was active.
        let dz_dc = if clamped {
            0.0
        } else {
            s * (cos_m + sin_m * cy / sin_y)
        };

        let x_i = embeddings.row(i);
        for j in 0..c {
            let p = (logits[j] - lse).exp();
            let g = (p - if j == y { 1.0 } else { 0.0 }) * inv_n;
            let scale = if j == y { g * dz_dc } else { g * s };
            if scale == 0.0 {
                continue;
            }
            let w_j = w_hat.row(j);
            for k in 0..d {
                d_embeddings[[i, k]] += scale * w_j[k];
                d_w_hat[[j, k]] += scale * x_i[k];
            }
        }
    }

    // Backprop through the per-row prototype normalization.
    let mut d_prototypes = Array2::zeros((c, d));
    for j in 0..c {
        let w = head.prototypes.row(j);
        let norm = w.dot(&w).sqrt();
        let e = w_hat.row(j);
        let g = d_w_hat.row(j);
        let proj = g.dot(&e);
        for k in 0..d {
            d_prototypes[[j, k]] = (g[k] - proj * e[k]) / norm;
        }
    }

    Ok(ArcLossOutput {
        loss,
        d_embeddings,
        d_prototypes,
    })
}

/// Value and student-side gradient of the embedding-matching loss.
#[derive(Debug, Clone)]
pub struct KdLossOutput {
    pub loss: f64,
    pub d_student: Array2<f64>,
}

/// Mean squared error between student and teacher embedding batches:
/// `(1/N) sum_i (1/D) sum_j (s_ij - t_ij)^2`. Gradients flow to the student
/// side only; the teacher batch is treated as constant.
pub fn kd_embedding_loss(student: &Array2<f64>, teacher: &Array2<f64>) -> Result<KdLossOutput> {
    if student.dim() != teacher.dim() {
        return Err(Error::Contract(format!(
            "kd_embedding_loss shape mismatch: student {:?} vs teacher {:?}",
            student.dim(),
            teacher.dim()
        )));
    }
    let (n, d) = student.dim();
    if n == 0 || d == 0 {
        return Err(Error::Contract("empty embedding batch".to_string()));
    }
    let diff = student - teacher;
    let scale = 1.0 / (n as f64 * d as f64);
    let loss = diff.iter().map(|v| v * v).sum::<f64>() * scale;
    let d_student = diff.mapv(|v| 2.0 * v * scale);
    Ok(KdLossOutput { loss, d_student })
}

/// Per-iteration loss components and their combination.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LossBreakdown {
    pub l_elastic_arc: f64,
    pub l_kd: f64,
    pub lambda_effective: f64,
    pub l_total: f64,
}

/// Combines the two loss terms: `l_total = l_arc + lambda * l_kd`.
pub fn total_loss(l_arc: f64, l_kd: f64, lambda_effective: f64) -> LossBreakdown {
    LossBreakdown {
        l_elastic_arc: l_arc,
        l_kd,
        lambda_effective,
        l_total: l_arc + lambda_effective * l_kd,
    }
}

/// Plain softmax cross-entropy over scaled cosine logits, without any
/// margin. Reference path for the margin-free reduction checks.
pub fn cosine_softmax_cross_entropy(
    embeddings: &Array2<f64>,
    labels: &[usize],
    head: &MarginHead,
) -> Result<f64> {
    let w_hat = head.normalized_prototypes();
    let cos = embeddings.dot(&w_hat.t());
    let s = head.config.scale;
    let n = embeddings.nrows();
    let mut loss = 0.0;
    for i in 0..n {
        let logits: Vec<f64> = (0..head.num_classes()).map(|j| s * cos[[i, j]]).collect();
        let max = logits.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
        let lse = max + logits.iter().map(|&z| (z - max).exp()).sum::<f64>().ln();
        loss += (lse - logits[labels[i]]) / n as f64;
    }
    Ok(loss)
}

/// Normalizes a raw feature batch and evaluates the elastic-margin loss on
/// it, returning the loss and the gradient with respect to the raw
/// features. This is the composition the trainer differentiates, and the
/// target of the finite-difference oracle.
pub fn elastic_arc_loss_on_features(
    features: &Array2<f64>,
    labels: &[usize],
    head: &MarginHead,
    margins: &[f64],
) -> Result<(f64, Array2<f64>, Array2<f64>)> {
    let embeddings = crate::embedding::normalize_batch(features)?;
    let out = elastic_arc_loss(&embeddings, labels, head, margins)?;
    let d_features = crate::embedding::normalize_batch_backward(features, &out.d_embeddings)?;
    Ok((out.loss, d_features, out.d_prototypes))
}

/// Draws a uniform unit vector batch; test/tooling helper.
pub fn random_unit_batch(n: usize, d: usize, rng: &mut StreamRng) -> Array2<f64> {
    let mut batch = Array2::zeros((n, d));
    for mut row in batch.rows_mut() {
        loop {
            for v in row.iter_mut() {
                *v = rng.gen::<f64>() * 2.0 - 1.0;
            }
            let norm = row.dot(&row).sqrt();
            if norm > 1e-3 {
                row.mapv_inplace(|v| v / norm);
                break;
            }
        }
    }
    batch
}
