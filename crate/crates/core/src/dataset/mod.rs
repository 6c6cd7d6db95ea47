//! Labeled image datasets: loaders, synthetic glyphs, augmentation and
//! input standardization.

mod augment;
mod cifar;
mod idx;
mod synth;

pub use augment::{augment, draw_translation, rotated_test_set, AugmentMode, AugmentSpec};
pub use cifar::{encode_cifar10, load_cifar10, parse_cifar10};
pub use idx::{encode_idx_images, encode_idx_labels, load_mnist, parse_idx, IdxArray};
pub use synth::synth_dataset;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::error::{Error, Result};
use crate::polar::{to_polar, ImageGrid, PolarConfig};
use crate::tensor::{Scalar, Tensor};

#[derive(Debug, Clone, PartialEq)]
pub struct LabeledDataset {
    pub images: Vec<ImageGrid>,
    pub labels: Vec<usize>,
    pub class_count: usize,
}

impl LabeledDataset {
    pub fn new(images: Vec<ImageGrid>, labels: Vec<usize>, class_count: usize) -> Result<Self> {
        if images.len() != labels.len() {
            return Err(Error::InvalidShape(format!(
                "{} images but {} labels",
                images.len(),
                labels.len()
            )));
        }
        if let Some(&label) = labels.iter().find(|&&l| l >= class_count) {
            return Err(Error::LabelOutOfRange {
                label,
                classes: class_count,
            });
        }
        if let Some(first) = images.first() {
            let dims = (first.channels(), first.height(), first.width());
            if images
                .iter()
                .any(|im| (im.channels(), im.height(), im.width()) != dims)
            {
                return Err(Error::InvalidShape("images differ in size".into()));
            }
        }
        Ok(LabeledDataset {
            images,
            labels,
            class_count,
        })
    }

    pub fn len(&self) -> usize {
        self.images.len()
    }

    pub fn is_empty(&self) -> bool {
        self.images.is_empty()
    }

    /// `(channels, height, width)` of the images, if any.
    pub fn dims(&self) -> Option<(usize, usize, usize)> {
        self.images
            .first()
            .map(|im| (im.channels(), im.height(), im.width()))
    }

    pub fn subset(&self, indices: &[usize]) -> LabeledDataset {
        LabeledDataset {
            images: indices.iter().map(|&i| self.images[i].clone()).collect(),
            labels: indices.iter().map(|&i| self.labels[i]).collect(),
            class_count: self.class_count,
        }
    }

    pub fn take(&self, n: usize) -> LabeledDataset {
        let idx: Vec<usize> = (0..n.min(self.len())).collect();
        self.subset(&idx)
    }

    pub fn class_histogram(&self) -> Vec<usize> {
        let mut h = vec![0; self.class_count];
        for &l in &self.labels {
            h[l] += 1;
        }
        h
    }
}

/// Shuffles with `seed` and holds out the last `val_fraction` of the
/// shuffled order. Returns `(train, val)`.
pub fn split_train_val(
    ds: &LabeledDataset,
    val_fraction: f64,
    seed: u64,
) -> (LabeledDataset, LabeledDataset) {
    let mut order: Vec<usize> = (0..ds.len()).collect();
    order.shuffle(&mut ChaCha8Rng::seed_from_u64(seed));
    let n_val = ((ds.len() as f64) * val_fraction).round() as usize;
    let n_val = n_val.min(ds.len().saturating_sub(1));
    let cut = ds.len() - n_val;
    (ds.subset(&order[..cut]), ds.subset(&order[cut..]))
}

/// Relabels with `mapping[old] = new`.
pub fn remap_labels(
    ds: &LabeledDataset,
    mapping: &[usize],
    class_count: usize,
) -> Result<LabeledDataset> {
    if mapping.len() < ds.class_count {
        return Err(Error::Config(format!(
            "label map covers {} of {} classes",
            mapping.len(),
            ds.class_count
        )));
    }
    let labels = ds.labels.iter().map(|&l| mapping[l]).collect();
    LabeledDataset::new(ds.images.clone(), labels, class_count)
}

/// Digit map that folds 9 into 6, leaving nine classes.
pub fn merge_six_nine() -> ([usize; 10], usize) {
    ([0, 1, 2, 3, 4, 5, 6, 7, 8, 6], 9)
}

/// Per-channel mean and standard deviation.
#[derive(Debug, Clone, PartialEq)]
pub struct Standardizer {
    pub mean: Vec<f64>,
    pub std: Vec<f64>,
}

impl Standardizer {
    pub fn fit<'a>(images: impl IntoIterator<Item = &'a ImageGrid>) -> Result<Self> {
        let images: Vec<&ImageGrid> = images.into_iter().collect();
        let first = images.first().ok_or(Error::EmptyDataset)?;
        let c = first.channels();
        let mut mean = vec![0.0; c];
        let mut count = 0usize;
        for im in &images {
            for (ch, m) in mean.iter_mut().enumerate() {
                *m += im.plane(ch).iter().map(|&v| v as f64).sum::<f64>();
            }
            count += im.height() * im.width();
        }
        for m in &mut mean {
            *m /= count as f64;
        }
        let mut var = vec![0.0; c];
        for im in &images {
            for (ch, v) in var.iter_mut().enumerate() {
                *v += im
                    .plane(ch)
                    .iter()
                    .map(|&p| (p as f64 - mean[ch]).powi(2))
                    .sum::<f64>();
            }
        }
        let std = var
            .iter()
            .map(|v| {
                let s = (v / count as f64).sqrt();
                if s > 1e-12 {
                    s
                } else {
                    1.0
                }
            })
            .collect();
        Ok(Standardizer { mean, std })
    }

    pub fn identity(channels: usize) -> Self {
        Standardizer {
            mean: vec![0.0; channels],
            std: vec![1.0; channels],
        }
    }

    pub fn apply(&self, img: &ImageGrid) -> ImageGrid {
        let mut out = img.clone();
        let plane = img.height() * img.width();
        for (ch, chunk) in out.pixels_mut().chunks_mut(plane).enumerate() {
            let (m, s) = (self.mean[ch], self.std[ch]);
            for v in chunk {
                *v = ((*v as f64 - m) / s) as f32;
            }
        }
        out
    }
}

/// Everything between a raw image and the network input: optional polar
/// resampling followed by standardization.
#[derive(Debug, Clone, PartialEq)]
pub struct Preprocess {
    pub polar: Option<PolarConfig>,
    pub standardizer: Standardizer,
}

impl Preprocess {
    /// Fits the standardizer on the (converted) training images.
    pub fn fit(train: &LabeledDataset, polar: Option<PolarConfig>) -> Result<Self> {
        if train.is_empty() {
            return Err(Error::EmptyDataset);
        }
        let converted = convert_all(&train.images, polar.as_ref())?;
        Ok(Preprocess {
            standardizer: Standardizer::fit(&converted)?,
            polar,
        })
    }

    pub fn apply(&self, img: &ImageGrid) -> Result<ImageGrid> {
        let img = match &self.polar {
            Some(cfg) => to_polar(img, cfg)?,
            None => img.clone(),
        };
        Ok(self.standardizer.apply(&img))
    }

    pub fn batch<T: Scalar>(&self, images: &[&ImageGrid]) -> Result<Tensor<T>> {
        let converted = images
            .iter()
            .map(|im| self.apply(im))
            .collect::<Result<Vec<_>>>()?;
        ImageGrid::batch_tensor(converted.iter())
    }
}

fn convert_all(images: &[ImageGrid], polar: Option<&PolarConfig>) -> Result<Vec<ImageGrid>> {
    match polar {
        Some(cfg) => images.iter().map(|im| to_polar(im, cfg)).collect(),
        None => Ok(images.to_vec()),
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn ramp(n: usize) -> LabeledDataset {
        let images = (0..n)
            .map(|i| {
                ImageGrid::from_fn(2, 4, 4, |c, y, x| (i * 3 + c * 7 + y * 4 + x) as f32 / 50.0)
            })
            .collect();
        LabeledDataset::new(images, (0..n).map(|i| i % 3).collect(), 3).unwrap()
    }

    #[test]
    fn standardized_training_set_has_zero_mean_unit_std() {
        let ds = ramp(20);
        let st = Standardizer::fit(&ds.images).unwrap();
        let out: Vec<ImageGrid> = ds.images.iter().map(|im| st.apply(im)).collect();
        let check = Standardizer::fit(&out).unwrap();
        for ch in 0..2 {
            assert!(check.mean[ch].abs() < 1e-6, "{:?}", check.mean);
            assert!((check.std[ch] - 1.0).abs() < 1e-6, "{:?}", check.std);
        }
    }

    #[test]
    fn split_holds_out_a_tenth() {
        let ds = ramp(50);
        let (tr, va) = split_train_val(&ds, 0.1, 3);
        assert_eq!((tr.len(), va.len()), (45, 5));
        let (tr2, va2) = split_train_val(&ds, 0.1, 3);
        assert_eq!(tr, tr2);
        assert_eq!(va, va2);
        let single = ds.take(1);
        let (tr, va) = split_train_val(&single, 0.1, 3);
        assert_eq!((tr.len(), va.len()), (1, 0));
    }

    #[test]
    fn six_nine_merge() {
        let images = vec![ImageGrid::zeros(1, 2, 2); 10];
        let ds = LabeledDataset::new(images, (0..10).collect(), 10).unwrap();
        let (map, classes) = merge_six_nine();
        let merged = remap_labels(&ds, &map, classes).unwrap();
        assert_eq!(merged.class_count, 9);
        assert_eq!(merged.labels[9], 6);
        assert_eq!(merged.labels[8], 8);
    }

    #[test]
    fn rejects_bad_labels_and_lengths() {
        let images = vec![ImageGrid::zeros(1, 2, 2); 2];
        assert!(matches!(
            LabeledDataset::new(images.clone(), vec![0, 5], 3),
            Err(Error::LabelOutOfRange {
                label: 5,
                classes: 3
            })
        ));
        assert!(LabeledDataset::new(images, vec![0], 3).is_err());
    }
}
