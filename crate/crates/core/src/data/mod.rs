//! Synthetic scenes, their on-disk format, augmentation and batching.

mod augment;
mod dataset;
pub mod pnm;
mod synth;

pub use augment::{augment, augment_with, flip_horizontal, resize_image, resize_label, Augmentation};
pub use dataset::{load_pair, save_pair, write_dataset, Dataset, Manifest, SegBatch};
pub use synth::{generate, SceneSpec, ShapeKind};

use crate::error::{Error, Result};

/// An 8-bit RGB image with its per-pixel class labels.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Pair {
    pub height: usize,
    pub width: usize,
    /// Interleaved RGB, row-major.
    pub rgb: Vec<u8>,
    pub label: Vec<u8>,
}

impl Pair {
    pub fn new(height: usize, width: usize, rgb: Vec<u8>, label: Vec<u8>) -> Result<Self> {
        let plane = height * width;
        if rgb.len() != 3 * plane || label.len() != plane {
            return Err(Error::Pairing(format!(
                "{height}x{width} pair needs {} image bytes and {plane} labels, got {} and {}",
                3 * plane,
                rgb.len(),
                label.len()
            )));
        }
        Ok(Pair {
            height,
            width,
            rgb,
            label,
        })
    }

    /// Sorted distinct label values.
    pub fn label_set(&self) -> Vec<u8> {
        let mut seen = [false; 256];
        for &l in &self.label {
            seen[l as usize] = true;
        }
        (0..=255u8).filter(|&l| seen[l as usize]).collect()
    }
}
