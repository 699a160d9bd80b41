//! MultiMNIST: two digits overlaid on one 28x28 canvas.
//!
//! Each base image gets a partner with a different label. The partner is shifted by
//! [`PARTNER_OFFSET`] pixels (down and right, zero padded, cropped to 28x28) and the
//! two are merged by pixel-wise maximum.

use ndarray::Array2;
use rand::Rng;

use super::grouped::normalized_images;
use super::{DataError, MnistDataset, MultiTaskData, IMAGE_DIM, IMAGE_SIDE};
use crate::rng::{stream, Purpose};

pub const PARTNER_OFFSET: (usize, usize) = (4, 4);

#[derive(Debug, Clone, PartialEq)]
pub struct MultiMnistDataset {
    pub images: Array2<f32>,
    /// Digit of the base (unshifted) image.
    pub label1: Vec<usize>,
    /// Digit of the shifted partner.
    pub label2: Vec<usize>,
    /// Source index of the partner image.
    pub partner: Vec<usize>,
}

/// Translates a 28x28 image by `(down, right)` pixels with zero fill.
pub fn shift_image(image: &[u8], offset: (usize, usize)) -> Vec<u8> {
    let (dr, dc) = offset;
    let mut out = vec![0u8; IMAGE_DIM];
    for r in dr..IMAGE_SIDE {
        for c in dc..IMAGE_SIDE {
            out[r * IMAGE_SIDE + c] = image[(r - dr) * IMAGE_SIDE + (c - dc)];
        }
    }
    out
}

/// Pixel-wise maximum.
pub fn overlay(a: &[u8], b: &[u8]) -> Vec<u8> {
    a.iter().zip(b).map(|(&x, &y)| x.max(y)).collect()
}

pub fn make_multimnist(dataset: &MnistDataset, seed: u64) -> Result<MultiMnistDataset, DataError> {
    let n = dataset.len();
    if n == 0 {
        return Err(DataError::Empty);
    }
    let first = dataset.labels[0];
    if dataset.labels.iter().all(|&l| l == first) {
        return Err(DataError::InvalidGroup(
            "MultiMNIST needs at least two distinct digits".into(),
        ));
    }
    let mut rng = stream(seed, Purpose::MultiMnist, 0);
    let mut pixels = Vec::with_capacity(n * IMAGE_DIM);
    let mut partner = Vec::with_capacity(n);
    for i in 0..n {
        let j = loop {
            let j = rng.random_range(0..n);
            if dataset.labels[j] != dataset.labels[i] {
                break j;
            }
        };
        let shifted = shift_image(dataset.image(j), PARTNER_OFFSET);
        pixels.extend(overlay(dataset.image(i), &shifted));
        partner.push(j);
    }
    Ok(MultiMnistDataset {
        images: normalized_images(&pixels, n),
        label1: dataset.labels.iter().map(|&l| usize::from(l)).collect(),
        label2: partner.iter().map(|&j| usize::from(dataset.labels[j])).collect(),
        partner,
    })
}

impl MultiTaskData for MultiMnistDataset {
    fn images(&self) -> &Array2<f32> {
        &self.images
    }

    fn task_names(&self) -> Vec<String> {
        vec!["digit1".into(), "digit2".into()]
    }

    fn classes(&self) -> Vec<usize> {
        vec![10, 10]
    }

    fn task_labels(&self) -> Vec<&[usize]> {
        vec![&self.label1, &self.label2]
    }
}
