//! MNIST in the IDX container format.

use std::fs;
use std::path::Path;

use super::LabeledDataset;
use crate::error::{Error, Result};
use crate::polar::{resize_bilinear, ImageGrid};

const IMAGES_MAGIC: u32 = 0x0000_0803;
const LABELS_MAGIC: u32 = 0x0000_0801;

/// A parsed IDX file of unsigned bytes.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct IdxArray {
    pub magic: u32,
    pub dims: Vec<usize>,
    pub data: Vec<u8>,
}

fn parse_error(path: &Path, offset: usize, message: impl Into<String>) -> Error {
    Error::Parse {
        path: path.to_path_buf(),
        offset: offset as u64,
        message: message.into(),
    }
}

fn read_u32(bytes: &[u8], offset: usize, path: &Path, what: &str) -> Result<u32> {
    bytes
        .get(offset..offset + 4)
        .map(|b| u32::from_be_bytes([b[0], b[1], b[2], b[3]]))
        .ok_or_else(|| parse_error(path, offset, format!("truncated header: missing {what}")))
}

/// Parses an IDX file whose magic must equal `expected_magic`.
pub fn parse_idx(bytes: &[u8], expected_magic: u32, path: &Path) -> Result<IdxArray> {
    let magic = read_u32(bytes, 0, path, "magic number")?;
    if magic != expected_magic {
        return Err(parse_error(
            path,
            0,
            format!("bad magic 0x{magic:08x}, expected 0x{expected_magic:08x}"),
        ));
    }
    let rank = (magic & 0xff) as usize;
    let mut dims = Vec::with_capacity(rank);
    for i in 0..rank {
        dims.push(read_u32(bytes, 4 + 4 * i, path, "dimension")? as usize);
    }
    let header = 4 + 4 * rank;
    let len: usize = dims.iter().product();
    let end = header + len;
    if bytes.len() < end {
        return Err(parse_error(
            path,
            bytes.len(),
            format!(
                "truncated data: expected {len} bytes after the header, found {}",
                bytes.len() - header
            ),
        ));
    }
    if bytes.len() > end {
        return Err(parse_error(path, end, "trailing bytes after data"));
    }
    Ok(IdxArray {
        magic,
        dims,
        data: bytes[header..].to_vec(),
    })
}

fn read(path: &Path) -> Result<Vec<u8>> {
    fs::read(path).map_err(|e| Error::io(path, e))
}

/// Loads an MNIST image/label pair, scales pixels to `[0, 1]` and resizes
/// each digit to 32x32.
pub fn load_mnist(
    images_path: impl AsRef<Path>,
    labels_path: impl AsRef<Path>,
) -> Result<LabeledDataset> {
    let (ip, lp) = (images_path.as_ref(), labels_path.as_ref());
    let images = parse_idx(&read(ip)?, IMAGES_MAGIC, ip)?;
    let labels = parse_idx(&read(lp)?, LABELS_MAGIC, lp)?;
    let (n, h, w) = (images.dims[0], images.dims[1], images.dims[2]);
    if labels.dims[0] != n {
        return Err(parse_error(
            lp,
            4,
            format!("{} labels for {n} images", labels.dims[0]),
        ));
    }
    if let Some(pos) = labels.data.iter().position(|&l| l > 9) {
        return Err(parse_error(
            lp,
            8 + pos,
            format!("label {} out of range", labels.data[pos]),
        ));
    }
    let grids = images
        .data
        .chunks_exact(h * w)
        .map(|px| {
            let img = ImageGrid::new(1, h, w, px.iter().map(|&p| p as f32 / 255.0).collect())?;
            Ok(if (h, w) == (32, 32) {
                img
            } else {
                resize_bilinear(&img, 32, 32)
            })
        })
        .collect::<Result<Vec<_>>>()?;
    LabeledDataset::new(grids, labels.data.iter().map(|&l| l as usize).collect(), 10)
}

pub fn encode_idx_images(images: &[Vec<u8>], height: usize, width: usize) -> Vec<u8> {
    let mut out = Vec::with_capacity(16 + images.len() * height * width);
    out.extend_from_slice(&IMAGES_MAGIC.to_be_bytes());
    for d in [images.len(), height, width] {
        out.extend_from_slice(&(d as u32).to_be_bytes());
    }
    for img in images {
        out.extend_from_slice(img);
    }
    out
}

pub fn encode_idx_labels(labels: &[u8]) -> Vec<u8> {
    let mut out = Vec::with_capacity(8 + labels.len());
    out.extend_from_slice(&LABELS_MAGIC.to_be_bytes());
    out.extend_from_slice(&(labels.len() as u32).to_be_bytes());
    out.extend_from_slice(labels);
    out
}
