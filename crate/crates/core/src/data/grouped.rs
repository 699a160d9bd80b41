//! Grouped-MNIST: each task asks "which of these digits is it, or none of them?".

use std::fmt;

use ndarray::Array2;
use serde::{Deserialize, Serialize};

use super::{DataError, MnistDataset, MultiTaskData, IMAGE_DIM};

/// Ordered list of distinct digits defining one task.
#[derive(Debug, Clone, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(try_from = "Vec<u8>", into = "Vec<u8>")]
pub struct TaskGroup {
    digits: Vec<u8>,
}

impl TaskGroup {
    pub fn new(digits: Vec<u8>) -> Result<Self, DataError> {
        if !(2..=9).contains(&digits.len()) {
            return Err(DataError::InvalidGroup(format!(
                "{digits:?}: a group needs 2 to 9 digits"
            )));
        }
        if let Some(d) = digits.iter().find(|&&d| d > 9) {
            return Err(DataError::InvalidGroup(format!("{digits:?}: {d} is not a digit")));
        }
        for (i, d) in digits.iter().enumerate() {
            if digits[..i].contains(d) {
                return Err(DataError::InvalidGroup(format!("{digits:?}: duplicate digit {d}")));
            }
        }
        Ok(TaskGroup { digits })
    }

    pub fn digits(&self) -> &[u8] {
        &self.digits
    }

    /// Member digits plus the trailing "none of them" class.
    pub fn num_classes(&self) -> usize {
        self.digits.len() + 1
    }

    pub fn none_class(&self) -> usize {
        self.digits.len()
    }

    pub fn class_of(&self, digit: u8) -> usize {
        self.digits
            .iter()
            .position(|&d| d == digit)
            .unwrap_or(self.none_class())
    }

    /// Inverse of [`class_of`](Self::class_of); `None` for the "none" class.
    pub fn digit_of(&self, class: usize) -> Option<u8> {
        self.digits.get(class).copied()
    }
}

impl TryFrom<Vec<u8>> for TaskGroup {
    type Error = DataError;

    fn try_from(digits: Vec<u8>) -> Result<Self, Self::Error> {
        TaskGroup::new(digits)
    }
}

impl From<TaskGroup> for Vec<u8> {
    fn from(g: TaskGroup) -> Self {
        g.digits
    }
}

impl fmt::Display for TaskGroup {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let parts: Vec<String> = self.digits.iter().map(u8::to_string).collect();
        write!(f, "[{}]", parts.join(","))
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct GroupedTaskDataset {
    pub images: Array2<f32>,
    pub digit_labels: Vec<u8>,
    pub groups: Vec<TaskGroup>,
    /// `task_labels[j][n]`; class `k < |digits|` means `digits[k]`, `|digits|` means none.
    pub task_labels: Vec<Vec<usize>>,
}

pub(crate) fn normalized_images(pixels: &[u8], n: usize) -> Array2<f32> {
    Array2::from_shape_vec((n, IMAGE_DIM), pixels.iter().map(|&p| f32::from(p) / 255.0).collect())
        .expect("pixel count matches")
}

/// Labels every image for every group and scales pixels by `1/255`.
pub fn make_grouped(dataset: &MnistDataset, groups: &[TaskGroup]) -> Result<GroupedTaskDataset, DataError> {
    if groups.is_empty() {
        return Err(DataError::InvalidGroup("no groups given".into()));
    }
    let task_labels = groups
        .iter()
        .map(|g| dataset.labels.iter().map(|&d| g.class_of(d)).collect())
        .collect();
    Ok(GroupedTaskDataset {
        images: normalized_images(&dataset.images, dataset.len()),
        digit_labels: dataset.labels.clone(),
        groups: groups.to_vec(),
        task_labels,
    })
}

impl MultiTaskData for GroupedTaskDataset {
    fn images(&self) -> &Array2<f32> {
        &self.images
    }

    fn task_names(&self) -> Vec<String> {
        self.groups.iter().map(ToString::to_string).collect()
    }

    fn classes(&self) -> Vec<usize> {
        self.groups.iter().map(TaskGroup::num_classes).collect()
    }

    fn task_labels(&self) -> Vec<&[usize]> {
        self.task_labels.iter().map(Vec::as_slice).collect()
    }
}
