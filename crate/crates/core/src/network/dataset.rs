//! Synthetic labelled datasets for training the toy networks.

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};

use crate::error::{Error, Result};

use super::descriptor::TensorShape;
use super::im2col::Tensor;

#[derive(Clone, Debug, PartialEq)]
pub struct Dataset {
    pub inputs: Tensor,
    pub labels: Vec<usize>,
    pub classes: usize,
}

#[derive(Clone, Debug, PartialEq)]
pub struct SplitDataset {
    pub train: Dataset,
    pub test: Dataset,
}

impl Dataset {
    pub fn new(inputs: Tensor, labels: Vec<usize>, classes: usize) -> Result<Self> {
        if labels.len() != inputs.shape.batch {
            return Err(Error::Dimension(format!(
                "{} labels for {} inputs",
                labels.len(),
                inputs.shape.batch
            )));
        }
        if let Some(&bad) = labels.iter().find(|&&l| l >= classes) {
            return Err(Error::Domain(format!("label {bad} out of range for {classes} classes")));
        }
        Ok(Dataset {
            inputs,
            labels,
            classes,
        })
    }

    pub fn len(&self) -> usize {
        self.labels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.labels.is_empty()
    }

    /// Items at `indices`, in that order.
    pub fn select(&self, indices: &[usize]) -> Dataset {
        let item = self.inputs.shape.item_len();
        let mut data = Vec::with_capacity(indices.len() * item);
        for &i in indices {
            data.extend_from_slice(&self.inputs.data[i * item..(i + 1) * item]);
        }
        Dataset {
            inputs: Tensor {
                shape: self.inputs.shape.with_batch(indices.len()),
                data,
            },
            labels: indices.iter().map(|&i| self.labels[i]).collect(),
            classes: self.classes,
        }
    }

    /// The first `count` items.
    pub fn head(&self, count: usize) -> Dataset {
        let count = count.min(self.len());
        Dataset {
            inputs: self.inputs.slice_batch(0, count),
            labels: self.labels[..count].to_vec(),
            classes: self.classes,
        }
    }

    /// First `train` items for training, the rest held out.
    pub fn split_at(&self, train: usize) -> Result<SplitDataset> {
        if train == 0 || train >= self.len() {
            return Err(Error::Domain(format!(
                "cannot split {} items with {train} for training",
                self.len()
            )));
        }
        let rest: Vec<usize> = (train..self.len()).collect();
        Ok(SplitDataset {
            train: self.head(train),
            test: self.select(&rest),
        })
    }
}

/// Oriented sinusoidal gratings, 3 x 32 x 32.
///
/// Eight classes: four orientations (0, 45, 90, 135 degrees) times two
/// spatial periods (8 and 4 pixels). Phase, amplitude, colour mix and a
/// small orientation jitter are random; Gaussian pixel noise is added.
pub fn patterned_images(count: usize, seed: u64) -> Result<Dataset> {
    const SIDE: usize = 32;
    if count == 0 {
        return Err(Error::Domain("dataset must be non-empty".into()));
    }
    let shape = TensorShape::new(count, 3, SIDE, SIDE);
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let pixel_noise = Normal::new(0.0, 1.0).expect("valid std");
    let mut data = Vec::with_capacity(shape.len());
    let mut labels = Vec::with_capacity(count);
    for s in 0..count {
        let label = s % 8;
        let theta = (label % 4) as f64 * std::f64::consts::FRAC_PI_4 + rng.random_range(-0.12..0.12);
        let period = if label < 4 { 8.0 } else { 4.0 } * rng.random_range(0.92..1.08);
        let phase = rng.random_range(0.0..std::f64::consts::TAU);
        let amp = rng.random_range(0.7..1.3);
        let colour: [f64; 3] = std::array::from_fn(|_| rng.random_range(0.3..1.0));
        let (ct, st) = (theta.cos(), theta.sin());
        for w in colour {
            for y in 0..SIDE {
                for x in 0..SIDE {
                    let t = (x as f64 * ct + y as f64 * st) / period;
                    let v = amp * w * (std::f64::consts::TAU * t + phase).sin();
                    data.push(v + pixel_noise.sample(&mut rng));
                }
            }
        }
        labels.push(label);
    }
    let mut order: Vec<usize> = (0..count).collect();
    order.shuffle(&mut rng);
    Dataset::new(Tensor::new(shape, data)?, labels, 8).map(|d| d.select(&order))
}

/// Gaussian blobs in `features` dimensions, stored as `(count, features, 1, 1)`.
///
/// Class centres sit on `separation * e_c` (one axis per class); points get
/// unit-variance noise.
pub fn gaussian_blobs(count: usize, classes: usize, features: usize, separation: f64, seed: u64) -> Result<Dataset> {
    if count == 0 || classes < 2 || features < classes {
        return Err(Error::Domain(format!(
            "need count > 0 and 2 <= classes <= features, got {count}, {classes}, {features}"
        )));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let noise = Normal::new(0.0, 1.0).expect("valid std");
    let mut data = Vec::with_capacity(count * features);
    let mut labels = Vec::with_capacity(count);
    for _ in 0..count {
        let label = rng.random_range(0..classes);
        for f in 0..features {
            let centre = if f == label { separation } else { 0.0 };
            data.push(centre + noise.sample(&mut rng));
        }
        labels.push(label);
    }
    Dataset::new(Tensor::new(TensorShape::new(count, features, 1, 1), data)?, labels, classes)
}
