//! Binary 8-bit PGM (P5) and PPM (P6) images.

use std::fs;
use std::path::Path;

use crate::error::{Error, Result};
use crate::polar::ImageGrid;

fn parse_error(path: &Path, offset: usize, message: impl Into<String>) -> Error {
    Error::Parse {
        path: path.to_path_buf(),
        offset: offset as u64,
        message: message.into(),
    }
}

/// Reads the next whitespace-delimited header token, skipping `#` comments.
fn header_token<'a>(bytes: &'a [u8], pos: &mut usize) -> Option<&'a [u8]> {
    loop {
        while *pos < bytes.len() && bytes[*pos].is_ascii_whitespace() {
            *pos += 1;
        }
        if *pos < bytes.len() && bytes[*pos] == b'#' {
            while *pos < bytes.len() && bytes[*pos] != b'\n' {
                *pos += 1;
            }
            continue;
        }
        break;
    }
    let start = *pos;
    while *pos < bytes.len() && !bytes[*pos].is_ascii_whitespace() {
        *pos += 1;
    }
    (start < *pos).then(|| &bytes[start..*pos])
}

pub fn decode_pnm(bytes: &[u8], path: &Path) -> Result<ImageGrid> {
    let mut pos = 0;
    let channels = match header_token(bytes, &mut pos) {
        Some(b"P5") => 1,
        Some(b"P6") => 3,
        _ => return Err(parse_error(path, 0, "expected P5 or P6 magic")),
    };
    let mut fields = [0usize; 3];
    for field in &mut fields {
        let at = pos;
        let token = header_token(bytes, &mut pos)
            .ok_or_else(|| parse_error(path, at, "truncated header"))?;
        *field = std::str::from_utf8(token)
            .ok()
            .and_then(|s| s.parse().ok())
            .ok_or_else(|| parse_error(path, at, "expected a decimal integer"))?;
    }
    let [width, height, maxval] = fields;
    if width == 0 || height == 0 {
        return Err(parse_error(path, pos, "zero image dimension"));
    }
    if maxval == 0 || maxval > 255 {
        return Err(parse_error(
            path,
            pos,
            format!("unsupported maxval {maxval} (8-bit only)"),
        ));
    }
    // Exactly one whitespace byte separates the header from the raster.
    pos += 1;
    let needed = width * height * channels;
    if bytes.len() < pos + needed {
        return Err(parse_error(
            path,
            bytes.len(),
            format!("raster needs {needed} bytes"),
        ));
    }
    let raster = &bytes[pos..pos + needed];
    let scale = maxval as f32;
    let mut img = ImageGrid::zeros(channels, height, width);
    for y in 0..height {
        for x in 0..width {
            for c in 0..channels {
                let v = raster[(y * width + x) * channels + c];
                img.set(c, y, x, v as f32 / scale);
            }
        }
    }
    Ok(img)
}

pub fn encode_pnm(img: &ImageGrid) -> Result<Vec<u8>> {
    let magic = match img.channels() {
        1 => "P5",
        3 => "P6",
        c => {
            return Err(Error::InvalidShape(format!(
                "PNM output needs 1 or 3 channels, image has {c}"
            )))
        }
    };
    let (h, w, channels) = (img.height(), img.width(), img.channels());
    let mut out = format!("{magic}\n{w} {h}\n255\n").into_bytes();
    out.reserve(h * w * channels);
    for y in 0..h {
        for x in 0..w {
            for c in 0..channels {
                let v = img.get(c, y, x).clamp(0.0, 1.0);
                out.push((v * 255.0).round() as u8);
            }
        }
    }
    Ok(out)
}

pub fn read_pnm(path: impl AsRef<Path>) -> Result<ImageGrid> {
    let path = path.as_ref();
    let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
    decode_pnm(&bytes, path)
}

pub fn write_pnm(path: impl AsRef<Path>, img: &ImageGrid) -> Result<()> {
    let path = path.as_ref();
    fs::write(path, encode_pnm(img)?).map_err(|e| Error::io(path, e))
}
