//! Checkpoint container.
//!
//! Layout: the magic `MINV1\n`, a little-endian u32 header length, a JSON
//! header (kind, iteration, config hash, shapes, tensor directory), the raw
//! little-endian f64 tensors in directory order, then the loss log as a u64
//! row count followed by five f64 per row.

use std::io::{BufReader, BufWriter, Read, Write};
use std::path::Path;

use byteorder::{LittleEndian, ReadBytesExt, WriteBytesExt};
use serde::{Deserialize, Serialize};

use crate::backbone::TinyConvNet;
use crate::config::MarginHeadConfig;
use crate::error::{Error, Result};
use crate::losses::MarginHead;

use super::sgd::SgdState;
use super::{LossRecord, TeacherHandle, TrainState};

const MAGIC: &[u8; 6] = b"MINV1\n";

#[derive(Debug, Serialize, Deserialize)]
struct TensorEntry {
    name: String,
    len: usize,
}

#[derive(Debug, Serialize, Deserialize)]
struct HeadMeta {
    scale: f64,
    margin: f64,
    sigma: f64,
    num_classes: usize,
}

#[derive(Debug, Serialize, Deserialize)]
struct Header {
    kind: String,
    iteration: usize,
    config_sha256: String,
    embedding_dim: usize,
    backbone_widths: [usize; 4],
    head: Option<HeadMeta>,
    tensors: Vec<TensorEntry>,
}

fn write_container(
    path: &Path,
    header: &Header,
    tensors: &[&[f64]],
    log: &[LossRecord],
) -> Result<()> {
    let mut f = BufWriter::new(std::fs::File::create(path)?);
    f.write_all(MAGIC)?;
    let header_bytes = serde_json::to_vec(header)
        .map_err(|e| Error::Checkpoint(format!("header encode: {e}")))?;
    f.write_u32::<LittleEndian>(header_bytes.len() as u32)?;
    f.write_all(&header_bytes)?;
    for tensor in tensors {
        for &v in *tensor {
            f.write_f64::<LittleEndian>(v)?;
        }
    }
    f.write_u64::<LittleEndian>(log.len() as u64)?;
    for rec in log {
        f.write_f64::<LittleEndian>(rec.l_elastic_arc)?;
        f.write_f64::<LittleEndian>(rec.l_kd)?;
        f.write_f64::<LittleEndian>(rec.lambda)?;
        f.write_f64::<LittleEndian>(rec.l_total)?;
        f.write_f64::<LittleEndian>(rec.lr)?;
    }
    f.flush()?;
    Ok(())
}

fn read_container(path: &Path) -> Result<(Header, Vec<Vec<f64>>, Vec<LossRecord>)> {
    let mut f = BufReader::new(std::fs::File::open(path)?);
    let mut magic = [0u8; 6];
    f.read_exact(&mut magic)?;
    if &magic != MAGIC {
        return Err(Error::Checkpoint(format!(
            "{} is not a checkpoint file",
            path.display()
        )));
    }
    let header_len = f.read_u32::<LittleEndian>()? as usize;
    let mut header_bytes = vec![0u8; header_len];
    f.read_exact(&mut header_bytes)?;
    let header: Header = serde_json::from_slice(&header_bytes)
        .map_err(|e| Error::Checkpoint(format!("header decode: {e}")))?;
    let mut tensors = Vec::with_capacity(header.tensors.len());
    for entry in &header.tensors {
        let mut t = vec![0.0f64; entry.len];
        for v in t.iter_mut() {
            *v = f.read_f64::<LittleEndian>()?;
        }
        tensors.push(t);
    }
    let rows = f.read_u64::<LittleEndian>()? as usize;
    let mut log = Vec::with_capacity(rows);
    for i in 0..rows {
        log.push(LossRecord {
            iteration: i,
            l_elastic_arc: f.read_f64::<LittleEndian>()?,
            l_kd: f.read_f64::<LittleEndian>()?,
            lambda: f.read_f64::<LittleEndian>()?,
            l_total: f.read_f64::<LittleEndian>()?,
            lr: f.read_f64::<LittleEndian>()?,
        });
    }
    Ok((header, tensors, log))
}

/// Writes a full training state (parameters, optimizer slots, loss log).
pub fn save_train_state(state: &TrainState, config_hash: &str, path: &Path) -> Result<()> {
    let mut tensors: Vec<&[f64]> = Vec::new();
    let mut entries = Vec::new();
    for (i, p) in state.backbone.params().into_iter().enumerate() {
        entries.push(TensorEntry {
            name: format!("backbone.{i}"),
            len: p.len(),
        });
        tensors.push(p);
    }
    let proto = state
        .head
        .prototypes
        .as_slice()
        .expect("prototype matrix is contiguous");
    entries.push(TensorEntry {
        name: "head.prototypes".to_string(),
        len: proto.len(),
    });
    tensors.push(proto);
    for (i, v) in state.opt.velocity.iter().enumerate() {
        entries.push(TensorEntry {
            name: format!("opt.{i}"),
            len: v.len(),
        });
        tensors.push(v);
    }
    let header = Header {
        kind: "student".to_string(),
        iteration: state.iteration,
        config_sha256: config_hash.to_string(),
        embedding_dim: state.backbone.embedding_dim(),
        backbone_widths: state.backbone.widths(),
        head: Some(HeadMeta {
            scale: state.head.config.scale,
            margin: state.head.config.margin,
            sigma: state.head.config.sigma,
            num_classes: state.head.config.num_classes,
        }),
        tensors: entries,
    };
    write_container(path, &header, &tensors, &state.log)
}

use crate::backbone::Backbone as _;

/// Reads a training state; when `expected_config_hash` is given, a mismatch
/// is an error (resuming under a different config would silently change the
/// run).
pub fn load_train_state(path: &Path, expected_config_hash: Option<&str>) -> Result<TrainState> {
    let (header, tensors, log) = read_container(path)?;
    if header.kind != "student" {
        return Err(Error::Checkpoint(format!(
            "expected a student checkpoint, found kind `{}`",
            header.kind
        )));
    }
    if let Some(expected) = expected_config_hash {
        if header.config_sha256 != expected {
            return Err(Error::Checkpoint(
                "checkpoint config hash does not match the resolved config".to_string(),
            ));
        }
    }
    let head_meta = header
        .head
        .ok_or_else(|| Error::Checkpoint("student checkpoint missing head metadata".into()))?;

    let mut backbone = TinyConvNet::new(header.embedding_dim, header.backbone_widths, 0);
    let n_backbone = backbone.params().len();
    let expected_tensors = n_backbone + 1 + n_backbone + 1;
    if tensors.len() != expected_tensors {
        return Err(Error::Checkpoint(format!(
            "expected {expected_tensors} tensors, found {}",
            tensors.len()
        )));
    }
    for (target, source) in backbone.params_mut().into_iter().zip(&tensors) {
        if target.len() != source.len() {
            return Err(Error::Checkpoint("tensor shape mismatch".to_string()));
        }
        target.copy_from_slice(source);
    }
    let head_cfg = MarginHeadConfig {
        scale: head_meta.scale,
        margin: head_meta.margin,
        sigma: head_meta.sigma,
        num_classes: head_meta.num_classes,
        embedding_dim: header.embedding_dim,
    };
    let proto = &tensors[n_backbone];
    if proto.len() != head_cfg.num_classes * head_cfg.embedding_dim {
        return Err(Error::Checkpoint("prototype shape mismatch".to_string()));
    }
    let prototypes = ndarray::Array2::from_shape_vec(
        (head_cfg.num_classes, head_cfg.embedding_dim),
        proto.clone(),
    )
    .map_err(|e| Error::Checkpoint(e.to_string()))?;
    let head = MarginHead {
        prototypes,
        config: head_cfg,
    };
    let velocity: Vec<Vec<f64>> = tensors[n_backbone + 1..].to_vec();
    let mut log = log;
    for (i, rec) in log.iter_mut().enumerate() {
        rec.iteration = i;
    }
    Ok(TrainState {
        iteration: header.iteration,
        backbone,
        head,
        opt: SgdState { velocity },
        log,
    })
}

/// Writes a frozen teacher (backbone parameters only).
pub fn save_teacher(teacher: &TeacherHandle, path: &Path) -> Result<()> {
    let backbone = teacher.backbone();
    let mut tensors: Vec<&[f64]> = Vec::new();
    let mut entries = Vec::new();
    for (i, p) in backbone.params().into_iter().enumerate() {
        entries.push(TensorEntry {
            name: format!("backbone.{i}"),
            len: p.len(),
        });
        tensors.push(p);
    }
    let header = Header {
        kind: "teacher".to_string(),
        iteration: 0,
        config_sha256: String::new(),
        embedding_dim: backbone.embedding_dim(),
        backbone_widths: backbone.widths(),
        head: None,
        tensors: entries,
    };
    write_container(path, &header, &tensors, &[])
}

/// Reads a frozen teacher. Student checkpoints are accepted too (their
/// backbone becomes the teacher), so a trained student can guide a later
/// run.
pub fn load_teacher(path: &Path) -> Result<TeacherHandle> {
    let (header, tensors, _) = read_container(path)?;
    let mut backbone = TinyConvNet::new(header.embedding_dim, header.backbone_widths, 0);
    let n_backbone = backbone.params().len();
    if tensors.len() < n_backbone {
        return Err(Error::Checkpoint(format!(
            "expected at least {n_backbone} tensors, found {}",
            tensors.len()
        )));
    }
    for (target, source) in backbone.params_mut().into_iter().zip(&tensors) {
        if target.len() != source.len() {
            return Err(Error::Checkpoint("tensor shape mismatch".to_string()));
        }
        target.copy_from_slice(source);
    }
    Ok(TeacherHandle::new(backbone))
}

/// Loads just the backbone from any checkpoint kind, for evaluation.
pub fn load_backbone(path: &Path) -> Result<TinyConvNet> {
    Ok(load_teacher(path)?.into_backbone())
}
