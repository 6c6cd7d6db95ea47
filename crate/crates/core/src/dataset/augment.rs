//! Random rotation and translation of whole datasets.

use std::f64::consts::PI;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::LabeledDataset;
use crate::polar::{rotate_image, translate_image, ImageGrid};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum AugmentMode {
    None,
    Rotate,
    Translate,
    RotateTranslate,
}

impl std::str::FromStr for AugmentMode {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, String> {
        match s {
            "none" => Ok(AugmentMode::None),
            "r" | "rotate" => Ok(AugmentMode::Rotate),
            "t" | "translate" => Ok(AugmentMode::Translate),
            "rt" | "rotate_translate" => Ok(AugmentMode::RotateTranslate),
            other => Err(format!("unknown augmentation '{other}' (none|r|t|rt)")),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct AugmentSpec {
    pub mode: AugmentMode,
    pub seed: u64,
}

/// Integer shift with `|dx| <= width / 4` and `|dy| <= height / 4`.
pub fn draw_translation(rng: &mut impl Rng, height: usize, width: usize) -> (i64, i64) {
    let (mx, my) = ((width / 4) as i64, (height / 4) as i64);
    (rng.gen_range(-mx..=mx), rng.gen_range(-my..=my))
}

fn augment_one(img: &ImageGrid, mode: AugmentMode, rng: &mut ChaCha8Rng) -> ImageGrid {
    match mode {
        AugmentMode::None => img.clone(),
        AugmentMode::Rotate => rotate_image(img, rng.gen_range(0.0..2.0 * PI)),
        AugmentMode::Translate => {
            let (dx, dy) = draw_translation(rng, img.height(), img.width());
            translate_image(img, dx, dy)
        }
        AugmentMode::RotateTranslate => {
            let rotated = rotate_image(img, rng.gen_range(0.0..2.0 * PI));
            let (dx, dy) = draw_translation(rng, img.height(), img.width());
            translate_image(&rotated, dx, dy)
        }
    }
}

/// Applies independent random draws per image; image `i` uses the RNG
/// stream `(seed, i)`.
pub fn augment(ds: &LabeledDataset, spec: AugmentSpec) -> LabeledDataset {
    if spec.mode == AugmentMode::None {
        return ds.clone();
    }
    let images = ds
        .images
        .iter()
        .enumerate()
        .map(|(i, img)| {
            let mut rng = ChaCha8Rng::seed_from_u64(spec.seed);
            rng.set_stream(i as u64);
            augment_one(img, spec.mode, &mut rng)
        })
        .collect();
    LabeledDataset {
        images,
        labels: ds.labels.clone(),
        class_count: ds.class_count,
    }
}

/// Every image rotated by its own uniform angle in `[0, 2π)`.
pub fn rotated_test_set(ds: &LabeledDataset, seed: u64) -> LabeledDataset {
    augment(
        ds,
        AugmentSpec {
            mode: AugmentMode::Rotate,
            seed,
        },
    )
}
