//! Identity-labeled dataset loading.
//!
//! Layout: `root/<identity>/<image>.png` with an `<image>.landmarks`
//! sidecar next to every image (five `x y` lines). Identities become labels
//! 0..c in sorted directory-name order; images are visited in sorted
//! filename order, so record ordering is platform-independent.

use std::collections::HashMap;
use std::path::{Path, PathBuf};

use crate::error::{Error, Result};
use crate::face::{FaceImage, Landmarks};

use super::preprocess::{preprocess, read_landmarks_file};

/// One dataset entry.
#[derive(Debug, Clone)]
pub struct DatasetRecord {
    /// Path relative to the dataset root, e.g. `alice/img_003.png`.
    pub rel_path: String,
    pub label: usize,
    pub identity: String,
    pub landmarks: Landmarks,
}

/// An identity-labeled image dataset.
#[derive(Debug, Clone)]
pub struct IdentityDataset {
    pub records: Vec<DatasetRecord>,
    pub num_identities: usize,
    /// Record positions per identity label.
    pub index: Vec<Vec<usize>>,
}

impl IdentityDataset {
    pub fn from_records(records: Vec<DatasetRecord>, num_identities: usize) -> Result<Self> {
        let mut index = vec![Vec::new(); num_identities];
        for (pos, rec) in records.iter().enumerate() {
            if rec.label >= num_identities {
                return Err(Error::Ingestion(format!(
                    "record {} has label {} outside [0, {num_identities})",
                    rec.rel_path, rec.label
                )));
            }
            index[rec.label].push(pos);
        }
        if let Some(empty) = index.iter().position(|v| v.is_empty()) {
            return Err(Error::Ingestion(format!(
                "identity label {empty} has no records"
            )));
        }
        Ok(IdentityDataset {
            records,
            num_identities,
            index,
        })
    }

    pub fn len(&self) -> usize {
        self.records.len()
    }

    pub fn is_empty(&self) -> bool {
        self.records.is_empty()
    }
}

const IMAGE_EXTENSIONS: [&str; 3] = ["png", "jpg", "jpeg"];

/// Loads a dataset tree, validating layout and landmark invariants.
pub fn load_dataset(root: &Path) -> Result<IdentityDataset> {
    let mut identities: Vec<(String, PathBuf)> = Vec::new();
    for entry in std::fs::read_dir(root)
        .map_err(|e| Error::Ingestion(format!("cannot read {}: {e}", root.display())))?
    {
        let entry = entry?;
        if entry.file_type()?.is_dir() {
            identities.push((entry.file_name().to_string_lossy().into_owned(), entry.path()));
        }
    }
    identities.sort_by(|a, b| a.0.cmp(&b.0));
    if identities.is_empty() {
        return Err(Error::Ingestion(format!(
            "no identity directories under {}",
            root.display()
        )));
    }

    let mut records = Vec::new();
    for (label, (identity, dir)) in identities.iter().enumerate() {
        let mut images: Vec<PathBuf> = Vec::new();
        for entry in std::fs::read_dir(dir)? {
            let path = entry?.path();
            let ext = path
                .extension()
                .map(|e| e.to_string_lossy().to_lowercase())
                .unwrap_or_default();
            if IMAGE_EXTENSIONS.contains(&ext.as_str()) {
                images.push(path);
            }
        }
        images.sort();
        if images.is_empty() {
            return Err(Error::Ingestion(format!(
                "identity directory {} contains no images",
                dir.display()
            )));
        }
        for path in images {
            let sidecar = path.with_extension("landmarks");
            if !sidecar.exists() {
                return Err(Error::Ingestion(format!(
                    "missing landmark sidecar {}",
                    sidecar.display()
                )));
            }
            let landmarks = read_landmarks_file(&sidecar)?;
            landmarks
                .validate()
                .map_err(|e| Error::Ingestion(format!("{}: {e}", sidecar.display())))?;
            let file_name = path.file_name().unwrap().to_string_lossy().into_owned();
            records.push(DatasetRecord {
                rel_path: format!("{identity}/{file_name}"),
                label,
                identity: identity.clone(),
                landmarks,
            });
        }
    }
    IdentityDataset::from_records(records, identities.len())
}

/// Loads and preprocesses one image file plus its landmark sidecar.
pub fn load_face(root: &Path, rel_path: &str, landmarks: Option<Landmarks>) -> Result<FaceImage> {
    let path = root.join(rel_path);
    let landmarks = match landmarks {
        Some(lm) => lm,
        None => read_landmarks_file(&path.with_extension("landmarks"))?,
    };
    let decoded = image::open(&path)
        .map_err(|e| Error::Ingestion(format!("cannot decode {}: {e}", path.display())))?
        .to_rgb8();
    preprocess(
        decoded.as_raw(),
        decoded.width() as usize,
        decoded.height() as usize,
        landmarks,
        rel_path.to_string(),
        None,
    )
}

/// Source of pixel data for records, by relative path.
pub trait ImageSource: Sync {
    fn load(&self, rel_path: &str) -> Result<FaceImage>;
}

/// Loads images from a dataset directory on demand.
pub struct DiskImageSource {
    root: PathBuf,
    landmarks: HashMap<String, Landmarks>,
}

impl DiskImageSource {
    pub fn new(root: PathBuf) -> Self {
        DiskImageSource {
            root,
            landmarks: HashMap::new(),
        }
    }

    /// Pre-binds landmarks from dataset records so per-image sidecar reads
    /// are skipped.
    pub fn with_dataset(root: PathBuf, dataset: &IdentityDataset) -> Self {
        let landmarks = dataset
            .records
            .iter()
            .map(|r| (r.rel_path.clone(), r.landmarks))
            .collect();
        DiskImageSource { root, landmarks }
    }
}

impl ImageSource for DiskImageSource {
    fn load(&self, rel_path: &str) -> Result<FaceImage> {
        load_face(&self.root, rel_path, self.landmarks.get(rel_path).copied())
    }
}

/// Holds every image in memory; used by the toy generator and tests.
pub struct InMemorySource {
    images: HashMap<String, FaceImage>,
}

impl InMemorySource {
    pub fn new(images: HashMap<String, FaceImage>) -> Self {
        InMemorySource { images }
    }
}

impl ImageSource for InMemorySource {
    fn load(&self, rel_path: &str) -> Result<FaceImage> {
        self.images
            .get(rel_path)
            .cloned()
            .ok_or_else(|| Error::Scoring(format!("no such image `{rel_path}`")))
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::dataio::toy::{write_toy_dataset, ToyOptions};

    fn small_opts() -> ToyOptions {
        ToyOptions {
            num_identities: 3,
            images_per_identity: 2,
            noise: 0.05,
            seed: 9,
        }
    }

    #[test]
    fn toy_tree_loads_with_expected_counts() {
        let dir = tempfile::tempdir().unwrap();
        write_toy_dataset(&small_opts(), dir.path()).unwrap();
        let ds = load_dataset(dir.path()).unwrap();
        assert_eq!(ds.num_identities, 3);
        assert_eq!(ds.len(), 6);
        let labels: Vec<usize> = ds.records.iter().map(|r| r.label).collect();
        assert_eq!(labels, vec![0, 0, 1, 1, 2, 2]);
    }

    #[test]
    fn loading_is_order_deterministic() {
        let dir = tempfile::tempdir().unwrap();
        write_toy_dataset(&small_opts(), dir.path()).unwrap();
        let a = load_dataset(dir.path()).unwrap();
        let b = load_dataset(dir.path()).unwrap();
        let paths_a: Vec<&str> = a.records.iter().map(|r| r.rel_path.as_str()).collect();
        let paths_b: Vec<&str> = b.records.iter().map(|r| r.rel_path.as_str()).collect();
        assert_eq!(paths_a, paths_b);
    }

    #[test]
    fn empty_identity_directory_rejected() {
        let dir = tempfile::tempdir().unwrap();
        write_toy_dataset(&small_opts(), dir.path()).unwrap();
        std::fs::create_dir(dir.path().join("zz_empty")).unwrap();
        let err = load_dataset(dir.path()).unwrap_err();
        assert!(err.to_string().contains("no images"), "{err}");
    }

    #[test]
    fn missing_sidecar_named_in_error() {
        let dir = tempfile::tempdir().unwrap();
        write_toy_dataset(&small_opts(), dir.path()).unwrap();
        let victim = dir.path().join("id_0000/img_0000.landmarks");
        std::fs::remove_file(&victim).unwrap();
        let err = load_dataset(dir.path()).unwrap_err();
        assert!(err.to_string().contains("img_0000.landmarks"), "{err}");
    }

    #[test]
    fn disk_source_round_trips_pixels() {
        let dir = tempfile::tempdir().unwrap();
        write_toy_dataset(&small_opts(), dir.path()).unwrap();
        let ds = load_dataset(dir.path()).unwrap();
        let source = DiskImageSource::with_dataset(dir.path().to_path_buf(), &ds);
        let img = source.load(&ds.records[0].rel_path).unwrap();
        assert!(img.pixels().iter().all(|&v| (-1.0..=1.0).contains(&v)));
    }
}
