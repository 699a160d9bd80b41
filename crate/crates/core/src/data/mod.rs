//! MNIST ingestion and the two synthetic multi-task datasets built on it.

mod batch;
mod export;
mod grouped;
mod idx;
mod multimnist;

use std::path::Path;

use ndarray::{Array2, Axis};
use thiserror::Error;

use crate::model::Batch;

pub use batch::batches;
pub use export::{export_dataset, import_dataset, DatasetManifest, LoadedDataset};
pub use grouped::{make_grouped, GroupedTaskDataset, TaskGroup};
pub use idx::{load_idx, load_mnist, parse_idx_images, parse_idx_labels, MnistDataset, Split};
pub use multimnist::{make_multimnist, overlay, shift_image, MultiMnistDataset, PARTNER_OFFSET};

pub const IMAGE_SIDE: usize = 28;
pub const IMAGE_DIM: usize = IMAGE_SIDE * IMAGE_SIDE;

#[derive(Debug, Error)]
pub enum DataError {
    #[error("{path}: bad magic number {found:#010x}, expected {expected:#010x}")]
    BadMagic {
        path: String,
        found: u32,
        expected: u32,
    },
    #[error("{images} images but {labels} labels")]
    CountMismatch { images: usize, labels: usize },
    #[error("{path}: truncated, expected {expected} bytes, found {found}")]
    TruncatedFile {
        path: String,
        expected: usize,
        found: usize,
    },
    #[error("{path}: {extra} unexpected trailing bytes")]
    TrailingBytes { path: String, extra: usize },
    #[error("{path}: label {label} at index {index} is not a digit")]
    InvalidLabel {
        path: String,
        index: usize,
        label: u8,
    },
    #[error("invalid task group: {0}")]
    InvalidGroup(String),
    #[error("dataset is empty")]
    Empty,
    #[error("manifest: {0}")]
    Manifest(String),
    #[error("{path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },
    #[error("json: {0}")]
    Json(#[from] serde_json::Error),
}

pub(crate) fn io_err(path: &Path, source: std::io::Error) -> DataError {
    DataError::Io {
        path: path.display().to_string(),
        source,
    }
}

/// Images with one label vector per classification task.
pub trait MultiTaskData: Sync {
    /// `N x 784` pixels in `[0, 1]`.
    fn images(&self) -> &Array2<f32>;
    fn task_names(&self) -> Vec<String>;
    /// Number of classes per task.
    fn classes(&self) -> Vec<usize>;
    /// `labels[j][n]` for task `j`.
    fn task_labels(&self) -> Vec<&[usize]>;

    fn len(&self) -> usize {
        self.images().nrows()
    }

    fn is_empty(&self) -> bool {
        self.len() == 0
    }

    fn num_tasks(&self) -> usize {
        self.classes().len()
    }

    /// Copies the selected rows into a training batch.
    fn gather(&self, indices: &[usize]) -> Batch {
        let inputs = self.images().select(Axis(0), indices).mapv(f64::from);
        let labels = self
            .task_labels()
            .iter()
            .map(|l| indices.iter().map(|&i| l[i]).collect())
            .collect();
        Batch { inputs, labels }
    }
}
