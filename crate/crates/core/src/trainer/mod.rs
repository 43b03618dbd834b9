//! Teacher–student training loop.
//!
//! The teacher embeds each batch unaltered; the student sees the same batch
//! with synthetic masks applied per image with probability `p_mask`. The
//! student minimizes the elastic-margin classification loss plus the
//! lambda-weighted embedding-matching loss, with SGD, the milestone
//! learning-rate schedule, and the paradigm-dependent lambda schedule.
//!
//! Every random draw derives from `(seed, label, counter)` streams, so runs
//! are bit-reproducible and resume continues identically; the parallel data
//! path reduces in index order and matches the sequential build exactly.

mod checkpoint;
mod schedule;
mod sgd;

pub use checkpoint::{load_backbone, load_teacher, load_train_state, save_teacher, save_train_state};
pub use schedule::{lambda_schedule, lr_schedule};
pub use sgd::{sgd_step, SgdState};

use std::io::Write;
use std::path::{Path, PathBuf};

use ndarray::Array2;

use crate::backbone::{Backbone, TinyConvNet};
use crate::config::{Configs, Paradigm, StudentInit, TrainingConfig};
use crate::dataio::{batch_indices, IdentityDataset, ImageSource};
use crate::embedding::{normalize_batch, normalize_batch_backward};
use crate::error::{Error, Result};
use crate::exec;
use crate::face::FaceImage;
use crate::losses::{
    draw_elastic_margin, elastic_arc_loss, kd_embedding_loss, total_loss, LossBreakdown,
    MarginHead,
};
use crate::maskgen::{maybe_mask, ColorMode, MaskPolicy, MaskTemplate};
use crate::rng::make_rng;

/// A frozen embedding model guiding the student.
pub struct TeacherHandle {
    backbone: TinyConvNet,
    checksum: String,
}

impl TeacherHandle {
    pub fn new(backbone: TinyConvNet) -> Self {
        let checksum = backbone.checksum();
        TeacherHandle { backbone, checksum }
    }

    pub fn backbone(&self) -> &TinyConvNet {
        &self.backbone
    }

    pub fn into_backbone(self) -> TinyConvNet {
        self.backbone
    }

    pub fn checksum(&self) -> &str {
        &self.checksum
    }

    /// L2-normalized embeddings of a batch.
    pub fn embed(&self, images: &[FaceImage]) -> Result<Array2<f64>> {
        normalize_batch(&self.backbone.embed_batch(images)?)
    }

    /// True iff the parameters still hash to the recorded checksum.
    pub fn verify_frozen(&self) -> bool {
        self.backbone.checksum() == self.checksum
    }
}

/// One row of the loss log.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LossRecord {
    pub iteration: usize,
    pub l_elastic_arc: f64,
    pub l_kd: f64,
    pub lambda: f64,
    pub l_total: f64,
    pub lr: f64,
}

/// Mutable state of a student training run.
pub struct TrainState {
    pub iteration: usize,
    pub backbone: TinyConvNet,
    pub head: MarginHead,
    pub opt: SgdState,
    pub log: Vec<LossRecord>,
}

impl TrainState {
    /// Fresh state from configs: seeded backbone and prototypes, zeroed
    /// momentum.
    pub fn init(configs: &Configs) -> Result<Self> {
        configs.validate()?;
        let t = &configs.training;
        let h = &configs.head;
        let backbone = TinyConvNet::new(h.embedding_dim, t.backbone_widths, t.seed);
        let head = MarginHead::init(h.clone(), t.seed)?;
        let opt = opt_state_for(&backbone, &head);
        Ok(TrainState {
            iteration: 0,
            backbone,
            head,
            opt,
            log: Vec::new(),
        })
    }
}

fn opt_state_for(backbone: &TinyConvNet, head: &MarginHead) -> SgdState {
    let mut shapes: Vec<usize> = backbone.params().iter().map(|p| p.len()).collect();
    shapes.push(head.prototypes.len());
    SgdState::zeros(&shapes)
}

/// Mask policy implied by a training config.
pub fn training_mask_policy(config: &TrainingConfig) -> Result<MaskPolicy> {
    MaskPolicy::new(
        config.p_mask,
        MaskTemplate {
            color_mode: ColorMode::RandomUniform,
            jitter_px: config.jitter_px,
        },
    )
}

/// Runs one optimization step on a batch.
///
/// The teacher (when present and lambda > 0) embeds the unaltered images;
/// the student embeds the maybe-masked ones. Returns the logged breakdown.
pub fn train_step(
    state: &mut TrainState,
    teacher: Option<&TeacherHandle>,
    images: &[FaceImage],
    labels: &[usize],
    policy: &MaskPolicy,
    config: &TrainingConfig,
) -> Result<LossBreakdown> {
    if images.is_empty() || images.len() != labels.len() {
        return Err(Error::Contract(format!(
            "batch of {} images with {} labels",
            images.len(),
            labels.len()
        )));
    }
    let iteration = state.iteration;
    let lr = lr_schedule(iteration, config);
    let lambda = lambda_schedule(iteration, config)?;
    let seed = config.seed;

    // Student-side masking, one derived stream per (iteration, sample).
    let masked: Vec<FaceImage> = {
        let results = exec::map_indexed(images, |j, img| {
            let mut rng = make_rng(seed, &format!("mask/{iteration}/{j}"));
            maybe_mask(img, policy, &mut rng).map(|(img, _)| img)
        });
        results.into_iter().collect::<Result<Vec<_>>>()?
    };

    let teacher_emb = if lambda > 0.0 {
        let teacher = teacher.ok_or_else(|| {
            Error::Training("paradigm requires a teacher but none was provided".to_string())
        })?;
        Some(teacher.embed(images)?)
    } else {
        None
    };

    let (features, tape) = state.backbone.forward_cached(&masked)?;
    let student_emb = normalize_batch(&features)?;

    let mut margin_rng = make_rng(seed, &format!("margin/{iteration}"));
    let margins = draw_elastic_margin(&state.head.config, &mut margin_rng, images.len());

    let arc = elastic_arc_loss(&student_emb, labels, &state.head, &margins)?;
    let (l_kd, d_kd) = match &teacher_emb {
        Some(t) => {
            let kd = kd_embedding_loss(&student_emb, t)?;
            (kd.loss, Some(kd.d_student))
        }
        None => (0.0, None),
    };

    let breakdown = total_loss(arc.loss, l_kd, lambda);
    if !breakdown.l_total.is_finite() {
        return Err(Error::Training(format!(
            "non-finite loss at iteration {iteration}: arc {} kd {}",
            arc.loss, l_kd
        )));
    }

    let mut d_embeddings = arc.d_embeddings;
    if let Some(dk) = d_kd {
        d_embeddings = d_embeddings + dk.mapv(|v| v * lambda);
    }
    let d_features = normalize_batch_backward(&features, &d_embeddings)?;
    let grads = state.backbone.backward(&tape, &d_features)?;

    // Assemble parameter/gradient lists: backbone tensors then prototypes.
    let proto_grad = arc
        .d_prototypes
        .as_slice()
        .expect("prototype gradient is contiguous")
        .to_vec();
    {
        let mut params = state.backbone.params_mut();
        params.push(
            state
                .head
                .prototypes
                .as_slice_mut()
                .expect("prototype matrix is contiguous"),
        );
        let mut grad_refs: Vec<&[f64]> = grads.tensors.iter().map(|t| t.as_slice()).collect();
        grad_refs.push(&proto_grad);
        sgd_step(
            &mut params,
            &grad_refs,
            &mut state.opt,
            lr,
            config.momentum,
            config.weight_decay,
        );
    }

    state.log.push(LossRecord {
        iteration,
        l_elastic_arc: breakdown.l_elastic_arc,
        l_kd: breakdown.l_kd,
        lambda: breakdown.lambda_effective,
        l_total: breakdown.l_total,
        lr,
    });
    state.iteration += 1;
    Ok(breakdown)
}

/// Training-run options beyond the config: where checkpoints go and
/// whether to resume.
pub struct TrainRun<'a> {
    pub checkpoint_dir: &'a Path,
    pub resume_from: Option<&'a Path>,
    /// Restrict training to these record positions (holdout support).
    /// `None` uses the whole dataset.
    pub record_subset: Option<&'a [usize]>,
}

impl<'a> TrainRun<'a> {
    pub fn new(checkpoint_dir: &'a Path) -> Self {
        TrainRun {
            checkpoint_dir,
            resume_from: None,
            record_subset: None,
        }
    }
}

fn checkpoint_iterations(config: &TrainingConfig) -> Vec<usize> {
    let interval = config
        .checkpoint_interval
        .unwrap_or_else(|| (config.total_iterations / 10).max(1));
    let mut points: Vec<usize> = (1..=config.total_iterations)
        .filter(|i| i % interval == 0)
        .collect();
    points.extend(config.lr_milestones.iter().copied());
    if let Some(sw) = config.lambda_switch_iteration {
        points.push(sw);
    }
    points.push(config.total_iterations);
    points.sort_unstable();
    points.dedup();
    points
}

/// Runs the full training loop for `configs.training.total_iterations`
/// steps, checkpointing at the configured interval and at every lr/lambda
/// milestone, and writing the loss log CSV into the checkpoint directory.
pub fn train(
    configs: &Configs,
    dataset: &IdentityDataset,
    source: &dyn ImageSource,
    teacher: Option<&TeacherHandle>,
    run: &TrainRun,
) -> Result<TrainState> {
    configs.validate()?;
    let config = &configs.training;
    let records: Vec<usize> = match run.record_subset {
        Some(subset) => subset.to_vec(),
        None => (0..dataset.len()).collect(),
    };
    if records.is_empty() {
        return Err(Error::Training("empty training dataset".to_string()));
    }
    if configs.head.num_classes != dataset.num_identities {
        return Err(Error::Validation {
            field: "num_classes",
            msg: format!(
                "config says {} but the dataset has {} identities",
                configs.head.num_classes, dataset.num_identities
            ),
        });
    }
    if config.paradigm != Paradigm::NoKd && teacher.is_none() {
        return Err(Error::Training(
            "paradigms HG and LG require a teacher".to_string(),
        ));
    }
    if let Some(t) = teacher {
        if t.backbone().embedding_dim() != configs.head.embedding_dim {
            return Err(Error::Validation {
                field: "embedding_dim",
                msg: format!(
                    "teacher dim {} vs config dim {}",
                    t.backbone().embedding_dim(),
                    configs.head.embedding_dim
                ),
            });
        }
    }

    let hash = crate::config::config_hash(configs);
    let mut state = match run.resume_from {
        Some(path) => load_train_state(path, Some(&hash))?,
        None => {
            let mut state = TrainState::init(configs)?;
            if config.student_init == StudentInit::TeacherCopy {
                let t = teacher.ok_or_else(|| {
                    Error::Training("teacher_copy initialization requires a teacher".to_string())
                })?;
                if t.backbone().widths() != config.backbone_widths {
                    return Err(Error::Validation {
                        field: "backbone_widths",
                        msg: "teacher_copy requires matching teacher architecture".to_string(),
                    });
                }
                state.backbone = t.backbone().clone();
            }
            state
        }
    };

    std::fs::create_dir_all(run.checkpoint_dir)?;
    let policy = training_mask_policy(config)?;
    let ckpt_points = checkpoint_iterations(config);
    let teacher_checksum_before = teacher.map(|t| t.backbone().checksum());

    while state.iteration < config.total_iterations {
        let positions = batch_indices(config.seed, records.len(), config.batch_size, state.iteration);
        let batch_records: Vec<usize> = positions.iter().map(|&p| records[p]).collect();
        let loaded = exec::map(&batch_records, |&pos| {
            source.load(&dataset.records[pos].rel_path)
        });
        let images: Vec<FaceImage> = loaded.into_iter().collect::<Result<Vec<_>>>()?;
        let labels: Vec<usize> = batch_records
            .iter()
            .map(|&pos| dataset.records[pos].label)
            .collect();

        if let Err(e) = train_step(&mut state, teacher, &images, &labels, &policy, config) {
            if matches!(e, Error::Training(_)) {
                // diagnostic snapshot for post-mortem
                let snap = run
                    .checkpoint_dir
                    .join(format!("diverged_{:08}.ckpt", state.iteration));
                let _ = save_train_state(&state, &hash, &snap);
            }
            return Err(e);
        }

        if ckpt_points.binary_search(&state.iteration).is_ok() {
            let path = run
                .checkpoint_dir
                .join(format!("ckpt_{:08}.ckpt", state.iteration));
            save_train_state(&state, &hash, &path)?;
        }
    }

    if let (Some(before), Some(t)) = (teacher_checksum_before, teacher) {
        debug_assert_eq!(before, t.backbone().checksum(), "teacher drifted");
    }

    write_loss_log(&state.log, &run.checkpoint_dir.join("loss_log.csv"))?;
    Ok(state)
}

/// Trains a teacher: plain margin-loss training on unmasked data
/// (paradigm NO_KD, p_mask = 0), returned frozen.
pub fn train_teacher(
    configs: &Configs,
    dataset: &IdentityDataset,
    source: &dyn ImageSource,
    run: &TrainRun,
) -> Result<TeacherHandle> {
    if configs.training.paradigm != Paradigm::NoKd {
        return Err(Error::Validation {
            field: "paradigm",
            msg: "teacher training requires paradigm NO_KD".to_string(),
        });
    }
    if configs.training.p_mask != 0.0 {
        return Err(Error::Validation {
            field: "p_mask",
            msg: "teacher training requires p_mask = 0".to_string(),
        });
    }
    let state = train(configs, dataset, source, None, run)?;
    Ok(TeacherHandle::new(state.backbone))
}

/// Writes the loss log as `iteration,l_arc,l_kd,lambda,l_total,lr`.
pub fn write_loss_log(log: &[LossRecord], path: &Path) -> Result<()> {
    let mut f = std::io::BufWriter::new(std::fs::File::create(path)?);
    writeln!(f, "iteration,l_arc,l_kd,lambda,l_total,lr")?;
    for rec in log {
        writeln!(
            f,
            "{},{},{},{},{},{}",
            rec.iteration, rec.l_elastic_arc, rec.l_kd, rec.lambda, rec.l_total, rec.lr
        )?;
    }
    f.flush()?;
    Ok(())
}

/// Classification accuracy of a model+head on a record subset: argmax of
/// prototype cosines. Sanity oracle for teacher training.
pub fn classification_accuracy(
    backbone: &TinyConvNet,
    head: &MarginHead,
    dataset: &IdentityDataset,
    source: &dyn ImageSource,
    records: &[usize],
) -> Result<f64> {
    if records.is_empty() {
        return Err(Error::Contract("empty record set".to_string()));
    }
    let loaded = exec::map(records, |&pos| source.load(&dataset.records[pos].rel_path));
    let images: Vec<FaceImage> = loaded.into_iter().collect::<Result<Vec<_>>>()?;
    let embeddings = normalize_batch(&backbone.embed_batch(&images)?)?;
    let mut w_hat = head.prototypes.clone();
    for mut row in w_hat.rows_mut() {
        let norm = row.dot(&row).sqrt();
        row.mapv_inplace(|v| v / norm);
    }
    let cos = embeddings.dot(&w_hat.t());
    let mut correct = 0usize;
    for (i, &pos) in records.iter().enumerate() {
        let row = cos.row(i);
        let mut best = 0usize;
        for j in 1..row.len() {
            if row[j] > row[best] {
                best = j;
            }
        }
        if best == dataset.records[pos].label {
            correct += 1;
        }
    }
    Ok(correct as f64 / records.len() as f64)
}

/// Helper used by the run-directory layout: `<dir>/resolved.cfg`.
pub fn write_resolved_config(configs: &Configs, dir: &Path) -> Result<PathBuf> {
    std::fs::create_dir_all(dir)?;
    let path = dir.join("resolved.cfg");
    std::fs::write(&path, crate::config::serialize_config(configs))?;
    Ok(path)
}
