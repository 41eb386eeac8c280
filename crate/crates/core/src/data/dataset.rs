use std::fmt;
use std::fs;
use std::path::{Path, PathBuf};

use super::{generate, pnm, Pair, SceneSpec};
use crate::error::{Error, Result};
use crate::scalar::Scalar;
use crate::tensor::{Labels, Shape, Tensor};

const MANIFEST: &str = "manifest.txt";

/// Contents of `DIR/manifest.txt`.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct Manifest {
    pub count: usize,
    pub classes: usize,
    pub size: usize,
    pub seed: u64,
}

impl fmt::Display for Manifest {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(
            f,
            "count={} classes={} size={} seed={}",
            self.count, self.classes, self.size, self.seed
        )
    }
}

impl Manifest {
    /// Parses whitespace-separated `key=value` tokens; unknown keys are
    /// ignored.
    pub fn parse(text: &str) -> Result<Self> {
        let (mut count, mut classes, mut size, mut seed) = (None, None, None, None);
        for token in text.split_whitespace() {
            let Some((key, value)) = token.split_once('=') else {
                return Err(Error::Format(format!("manifest token {token:?} is not key=value")));
            };
            let bad = || Error::Format(format!("manifest value {token:?} is not a number"));
            match key {
                "count" => count = Some(value.parse().map_err(|_| bad())?),
                "classes" => classes = Some(value.parse().map_err(|_| bad())?),
                "size" => size = Some(value.parse().map_err(|_| bad())?),
                "seed" => seed = Some(value.parse().map_err(|_| bad())?),
                _ => {}
            }
        }
        let missing = |k: &str| Error::Format(format!("manifest lacks {k}"));
        Ok(Manifest {
            count: count.ok_or_else(|| missing("count"))?,
            classes: classes.ok_or_else(|| missing("classes"))?,
            size: size.ok_or_else(|| missing("size"))?,
            seed: seed.ok_or_else(|| missing("seed"))?,
        })
    }
}

fn image_path(dir: &Path, index: usize) -> PathBuf {
    dir.join("images").join(format!("{index:06}.ppm"))
}

fn label_path(dir: &Path, index: usize) -> PathBuf {
    dir.join("labels").join(format!("{index:06}.pgm"))
}

fn create_dir(path: &Path) -> Result<()> {
    fs::create_dir_all(path).map_err(|e| Error::io(path, e))
}

pub fn save_pair(dir: &Path, index: usize, pair: &Pair) -> Result<()> {
    create_dir(&dir.join("images"))?;
    create_dir(&dir.join("labels"))?;
    pnm::write(&image_path(dir, index), pair.width, pair.height, 3, &pair.rgb)?;
    pnm::write(&label_path(dir, index), pair.width, pair.height, 1, &pair.label)
}

/// Loads pair `index`. Label values are not checked against a class count
/// here; that happens in the loss.
pub fn load_pair(dir: &Path, index: usize) -> Result<Pair> {
    let image = pnm::read(&image_path(dir, index), 3)?;
    let label = pnm::read(&label_path(dir, index), 1)?;
    if (image.width, image.height) != (label.width, label.height) {
        return Err(Error::Pairing(format!(
            "pair {index}: image {}x{} but label {}x{}",
            image.width, image.height, label.width, label.height
        )));
    }
    Pair::new(image.height, image.width, image.data, label.data)
}

/// Generates `count` scenes into `dir` and writes the manifest.
pub fn write_dataset(dir: &Path, spec: &SceneSpec, count: usize) -> Result<Manifest> {
    spec.validate()?;
    create_dir(dir)?;
    for i in 0..count {
        save_pair(dir, i, &generate(spec, i as u64)?)?;
    }
    let manifest = Manifest {
        count,
        classes: spec.classes,
        size: spec.size,
        seed: spec.seed,
    };
    let path = dir.join(MANIFEST);
    fs::write(&path, format!("{manifest}\n")).map_err(|e| Error::io(&path, e))?;
    Ok(manifest)
}

/// A dataset directory with every pair loaded.
#[derive(Clone, Debug)]
pub struct Dataset {
    pub dir: PathBuf,
    pub manifest: Manifest,
    pub pairs: Vec<Pair>,
}

impl Dataset {
    pub fn open(dir: &Path) -> Result<Self> {
        let path = dir.join(MANIFEST);
        let text = fs::read_to_string(&path).map_err(|e| Error::io(&path, e))?;
        let manifest = Manifest::parse(&text)?;
        let pairs = (0..manifest.count)
            .map(|i| load_pair(dir, i))
            .collect::<Result<Vec<_>>>()?;
        Ok(Dataset {
            dir: dir.to_path_buf(),
            manifest,
            pairs,
        })
    }

    pub fn len(&self) -> usize {
        self.pairs.len()
    }

    pub fn is_empty(&self) -> bool {
        self.pairs.is_empty()
    }

    /// Deterministic split by index: the first `⌈0.9·n⌉` pairs train, the
    /// rest are held out.
    pub fn split_index(&self) -> usize {
        (self.len() * 9).div_ceil(10)
    }
}

/// Images scaled to `[0, 1]` in `N×3×H×W` plus their labels.
#[derive(Clone, Debug)]
pub struct SegBatch<T> {
    pub images: Tensor<T>,
    pub labels: Labels,
}

impl<T: Scalar> SegBatch<T> {
    pub fn from_pairs(pairs: &[&Pair]) -> Result<Self> {
        let first = pairs
            .first()
            .ok_or_else(|| Error::Contract("cannot batch zero pairs".into()))?;
        let (h, w) = (first.height, first.width);
        let plane = h * w;
        let inv = T::lit(1.0 / 255.0);
        let mut images = Vec::with_capacity(pairs.len() * 3 * plane);
        let mut labels = Vec::with_capacity(pairs.len() * plane);
        for p in pairs {
            if (p.height, p.width) != (h, w) {
                return Err(Error::Pairing(format!(
                    "batch mixes {h}x{w} and {}x{} pairs",
                    p.height, p.width
                )));
            }
            for c in 0..3 {
                images.extend(p.rgb[c..].iter().step_by(3).map(|&v| T::from_u8(v).unwrap() * inv));
            }
            labels.extend_from_slice(&p.label);
        }
        Ok(SegBatch {
            images: Tensor::from_vec(Shape::new(pairs.len(), 3, h, w), images)?,
            labels: Labels::new(pairs.len(), h, w, labels)?,
        })
    }
}
