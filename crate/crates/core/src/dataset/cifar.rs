//! CIFAR-10 binary batches: 3073-byte records of one label byte followed
//! by 1024 red, 1024 green and 1024 blue pixels.

use std::fs;
use std::path::Path;

use super::LabeledDataset;
use crate::error::{Error, Result};
use crate::polar::ImageGrid;

const RECORD: usize = 1 + 3 * 32 * 32;

pub fn parse_cifar10(bytes: &[u8], path: &Path) -> Result<LabeledDataset> {
    if bytes.len() % RECORD != 0 {
        return Err(Error::Parse {
            path: path.to_path_buf(),
            offset: (bytes.len() - bytes.len() % RECORD) as u64,
            message: format!("size {} is not a multiple of {RECORD}", bytes.len()),
        });
    }
    let mut images = Vec::with_capacity(bytes.len() / RECORD);
    let mut labels = Vec::with_capacity(bytes.len() / RECORD);
    for (i, rec) in bytes.chunks_exact(RECORD).enumerate() {
        if rec[0] > 9 {
            return Err(Error::Parse {
                path: path.to_path_buf(),
                offset: (i * RECORD) as u64,
                message: format!("label {} out of range", rec[0]),
            });
        }
        labels.push(rec[0] as usize);
        images.push(ImageGrid::new(
            3,
            32,
            32,
            rec[1..].iter().map(|&p| p as f32 / 255.0).collect(),
        )?);
    }
    LabeledDataset::new(images, labels, 10)
}

pub fn load_cifar10<P: AsRef<Path>>(batch_paths: &[P]) -> Result<LabeledDataset> {
    let mut all = LabeledDataset {
        images: Vec::new(),
        labels: Vec::new(),
        class_count: 10,
    };
    for p in batch_paths {
        let p = p.as_ref();
        let bytes = fs::read(p).map_err(|e| Error::io(p, e))?;
        let ds = parse_cifar10(&bytes, p)?;
        all.images.extend(ds.images);
        all.labels.extend(ds.labels);
    }
    Ok(all)
}

/// Inverse of [`parse_cifar10`] for 3x32x32 images.
pub fn encode_cifar10(ds: &LabeledDataset) -> Result<Vec<u8>> {
    let mut out = Vec::with_capacity(ds.len() * RECORD);
    for (img, &label) in ds.images.iter().zip(&ds.labels) {
        if (img.channels(), img.height(), img.width()) != (3, 32, 32) || label > 255 {
            return Err(Error::InvalidShape(
                "cifar records hold 3x32x32 images".into(),
            ));
        }
        out.push(label as u8);
        out.extend(
            img.pixels()
                .iter()
                .map(|&v| (v.clamp(0.0, 1.0) * 255.0).round() as u8),
        );
    }
    Ok(out)
}
