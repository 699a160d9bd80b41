//! Dataset export: a JSON manifest next to a flat little-endian `f32` pixel blob.

use std::fs;
use std::path::Path;

use ndarray::Array2;
use serde::{Deserialize, Serialize};

use super::{io_err, DataError, MultiTaskData};

const BLOB_FORMAT: &str = "f32-le-row-major";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DatasetManifest {
    pub num_examples: usize,
    pub image_dim: usize,
    pub task_names: Vec<String>,
    pub classes: Vec<usize>,
    pub task_labels: Vec<Vec<usize>>,
    pub blob: String,
    pub blob_format: String,
}

/// A dataset read back from disk.
#[derive(Debug, Clone, PartialEq)]
pub struct LoadedDataset {
    pub manifest: DatasetManifest,
    pub images: Array2<f32>,
}

impl MultiTaskData for LoadedDataset {
    fn images(&self) -> &Array2<f32> {
        &self.images
    }

    fn task_names(&self) -> Vec<String> {
        self.manifest.task_names.clone()
    }

    fn classes(&self) -> Vec<usize> {
        self.manifest.classes.clone()
    }

    fn task_labels(&self) -> Vec<&[usize]> {
        self.manifest.task_labels.iter().map(Vec::as_slice).collect()
    }
}

/// Writes `<dir>/<name>.json` and `<dir>/<name>.bin`.
pub fn export_dataset<D: MultiTaskData + ?Sized>(data: &D, dir: &Path, name: &str) -> Result<DatasetManifest, DataError> {
    fs::create_dir_all(dir).map_err(|e| io_err(dir, e))?;
    let blob_name = format!("{name}.bin");
    let mut blob = Vec::with_capacity(data.images().len() * 4);
    for &p in data.images() {
        blob.extend(p.to_le_bytes());
    }
    let blob_path = dir.join(&blob_name);
    fs::write(&blob_path, blob).map_err(|e| io_err(&blob_path, e))?;
    let manifest = DatasetManifest {
        num_examples: data.len(),
        image_dim: data.images().ncols(),
        task_names: data.task_names(),
        classes: data.classes(),
        task_labels: data.task_labels().iter().map(|l| l.to_vec()).collect(),
        blob: blob_name,
        blob_format: BLOB_FORMAT.into(),
    };
    let manifest_path = dir.join(format!("{name}.json"));
    fs::write(&manifest_path, serde_json::to_vec(&manifest)?).map_err(|e| io_err(&manifest_path, e))?;
    Ok(manifest)
}

pub fn import_dataset(manifest_path: &Path) -> Result<LoadedDataset, DataError> {
    let text = fs::read_to_string(manifest_path).map_err(|e| io_err(manifest_path, e))?;
    let manifest: DatasetManifest = serde_json::from_str(&text)?;
    if manifest.blob_format != BLOB_FORMAT {
        return Err(DataError::Manifest(format!("unsupported blob format `{}`", manifest.blob_format)));
    }
    let tasks = manifest.classes.len();
    if manifest.task_names.len() != tasks || manifest.task_labels.len() != tasks {
        return Err(DataError::Manifest("task fields disagree in length".into()));
    }
    for (labels, &k) in manifest.task_labels.iter().zip(&manifest.classes) {
        if labels.len() != manifest.num_examples || labels.iter().any(|&l| l >= k) {
            return Err(DataError::Manifest("task labels inconsistent with classes".into()));
        }
    }
    let blob_path = manifest_path
        .parent()
        .unwrap_or_else(|| Path::new("."))
        .join(&manifest.blob);
    let bytes = fs::read(&blob_path).map_err(|e| io_err(&blob_path, e))?;
    let expected = manifest.num_examples * manifest.image_dim * 4;
    if bytes.len() != expected {
        return Err(DataError::TruncatedFile {
            path: blob_path.display().to_string(),
            expected,
            found: bytes.len(),
        });
    }
    let pixels = bytes
        .chunks_exact(4)
        .map(|c| f32::from_le_bytes(c.try_into().expect("4 bytes")))
        .collect();
    let images = Array2::from_shape_vec((manifest.num_examples, manifest.image_dim), pixels)
        .map_err(|e| DataError::Manifest(e.to_string()))?;
    Ok(LoadedDataset { manifest, images })
}
