use std::path::{Path, PathBuf};

use anyhow::{bail, Result};
use cycnn::dataset::{load_cifar10, load_mnist, synth_dataset, LabeledDataset};

pub const SYNTH_TRAIN_COUNT: usize = 2000;
pub const SYNTH_TEST_COUNT: usize = 500;
pub const SYNTH_CLASSES: usize = 6;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Split {
    Train,
    Test,
}

impl std::str::FromStr for Split {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, String> {
        match s {
            "train" => Ok(Split::Train),
            "test" => Ok(Split::Test),
            other => Err(format!("unknown split '{other}' (train|test)")),
        }
    }
}

fn default_dir(dataset: &str) -> PathBuf {
    match dataset {
        "mnist" => PathBuf::from("data/mnist-subset"),
        _ => PathBuf::from("data/cifar-10-batches-bin"),
    }
}

pub struct DataRequest<'a> {
    pub dataset: &'a str,
    pub data_dir: Option<&'a Path>,
    pub split: Split,
    pub synth_count: Option<usize>,
    pub synth_classes: Option<usize>,
}

pub fn load(req: &DataRequest) -> Result<LabeledDataset> {
    let dir = req
        .data_dir
        .map(Path::to_path_buf)
        .unwrap_or_else(|| default_dir(req.dataset));
    Ok(match (req.dataset, req.split) {
        ("mnist", Split::Train) => load_mnist(
            dir.join("train-images-idx3-ubyte"),
            dir.join("train-labels-idx1-ubyte"),
        )?,
        ("mnist", Split::Test) => load_mnist(
            dir.join("t10k-images-idx3-ubyte"),
            dir.join("t10k-labels-idx1-ubyte"),
        )?,
        ("cifar10", Split::Train) => {
            let paths: Vec<PathBuf> = (1..=5)
                .map(|i| dir.join(format!("data_batch_{i}.bin")))
                .collect();
            load_cifar10(&paths)?
        }
        ("cifar10", Split::Test) => load_cifar10(&[dir.join("test_batch.bin")])?,
        ("synth", split) => {
            let classes = req.synth_classes.unwrap_or(SYNTH_CLASSES);
            // Fixed data seeds keep the two splits disjoint and independent
            // of the run seed.
            match split {
                Split::Train => {
                    synth_dataset(req.synth_count.unwrap_or(SYNTH_TRAIN_COUNT), classes, 1)
                }
                Split::Test => {
                    synth_dataset(req.synth_count.unwrap_or(SYNTH_TEST_COUNT), classes, 2)
                }
            }
        }
        (other, _) => bail!("unknown dataset '{other}' (mnist|cifar10|synth)"),
    })
}
