//! Paired datasets: ingestion from directories, the JSONL manifest, and the
//! padded in-memory samples the training loop consumes.

use std::collections::BTreeMap;
use std::fs;
use std::io::{BufRead, BufReader, Write};
use std::path::{Path, PathBuf};

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::imaging::{load_image, pad_to_square, resize_longer_edge, Image, Mask, PaddedImage};
use crate::prnet::network_size;
use crate::tensor::Tensor;

pub const MANIFEST_VERSION: u32 = 1;

const IMAGE_EXTENSIONS: [&str; 5] = ["png", "ppm", "pgm", "pnm", "pbm"];

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Split {
    Train,
    Val,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ManifestEntry {
    pub stem: String,
    pub raw: PathBuf,
    pub target: PathBuf,
    pub split: Split,
    /// Dimensions after the longer-edge resize.
    pub width: usize,
    pub height: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct ManifestHeader {
    version: u32,
    longer_edge: usize,
    pad_size: usize,
}

#[derive(Debug, Clone, PartialEq)]
pub struct DatasetManifest {
    pub longer_edge: usize,
    pub pad_size: usize,
    pub entries: Vec<ManifestEntry>,
}

/// How ingested pairs are divided between training and validation.
#[derive(Debug, Clone, PartialEq)]
pub enum SplitSpec {
    /// Everything is training data.
    AllTrain,
    /// `count` stems drawn by a seeded shuffle go to validation.
    RandomVal { count: usize, seed: u64 },
    /// The listed stems go to validation.
    ValStems(Vec<String>),
}

impl DatasetManifest {
    pub fn split(&self, split: Split) -> impl Iterator<Item = &ManifestEntry> {
        self.entries.iter().filter(move |e| e.split == split)
    }

    pub fn count(&self, split: Split) -> usize {
        self.split(split).count()
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        let mut out = String::new();
        let header = ManifestHeader {
            version: MANIFEST_VERSION,
            longer_edge: self.longer_edge,
            pad_size: self.pad_size,
        };
        out.push_str(&serde_json::to_string(&header).expect("serializable"));
        out.push('\n');
        for e in &self.entries {
            out.push_str(&serde_json::to_string(e).expect("serializable"));
            out.push('\n');
        }
        let mut f = fs::File::create(path).map_err(|e| Error::io(path, e))?;
        f.write_all(out.as_bytes()).map_err(|e| Error::io(path, e))
    }

    pub fn load(path: &Path) -> Result<Self> {
        let f = fs::File::open(path).map_err(|e| Error::io(path, e))?;
        let mut lines = BufReader::new(f).lines().enumerate();
        let bad = |line: usize, msg: String| {
            Error::Data(format!("{}:{}: {msg}", path.display(), line + 1))
        };
        let (i, first) = lines
            .next()
            .ok_or_else(|| bad(0, "empty manifest".into()))?;
        let first = first.map_err(|e| Error::io(path, e))?;
        let header: ManifestHeader =
            serde_json::from_str(&first).map_err(|e| bad(i, e.to_string()))?;
        if header.version != MANIFEST_VERSION {
            return Err(bad(
                i,
                format!("unsupported manifest version {}", header.version),
            ));
        }
        let mut entries = Vec::new();
        for (i, line) in lines {
            let line = line.map_err(|e| Error::io(path, e))?;
            if line.trim().is_empty() {
                continue;
            }
            entries.push(serde_json::from_str(&line).map_err(|e| bad(i, e.to_string()))?);
        }
        Ok(Self {
            longer_edge: header.longer_edge,
            pad_size: header.pad_size,
            entries,
        })
    }
}

fn image_files(dir: &Path) -> Result<BTreeMap<String, PathBuf>> {
    let read = fs::read_dir(dir).map_err(|e| Error::io(dir, e))?;
    let mut out = BTreeMap::new();
    for entry in read {
        let path = entry.map_err(|e| Error::io(dir, e))?.path();
        let ext = path
            .extension()
            .and_then(|e| e.to_str())
            .map(str::to_ascii_lowercase)
            .unwrap_or_default();
        if !path.is_file() || !IMAGE_EXTENSIONS.contains(&ext.as_str()) {
            continue;
        }
        let stem = path
            .file_stem()
            .and_then(|s| s.to_str())
            .unwrap_or_default()
            .to_string();
        if let Some(prev) = out.insert(stem.clone(), path.clone()) {
            return Err(Error::Data(format!(
                "stem {stem} appears twice: {} and {}",
                prev.display(),
                path.display()
            )));
        }
    }
    Ok(out)
}

/// Pairs files by stem, resizes both sides to `longer_edge`, checks that the
/// pair dimensions agree, and assigns splits. Entries are sorted by stem.
pub fn ingest_dataset(
    raw_dir: &Path,
    target_dir: &Path,
    longer_edge: usize,
    pad_size: usize,
    split: &SplitSpec,
) -> Result<DatasetManifest> {
    if longer_edge == 0 || longer_edge > pad_size {
        return Err(Error::Config(format!(
            "longer edge {longer_edge} must be between 1 and the pad size {pad_size}"
        )));
    }
    let raws = image_files(raw_dir)?;
    let targets = image_files(target_dir)?;
    if let Some(stem) = raws.keys().find(|s| !targets.contains_key(*s)) {
        return Err(Error::Data(format!(
            "raw image {stem} has no target in {}",
            target_dir.display()
        )));
    }
    if let Some(stem) = targets.keys().find(|s| !raws.contains_key(*s)) {
        return Err(Error::Data(format!(
            "target image {stem} has no raw in {}",
            raw_dir.display()
        )));
    }
    if raws.is_empty() {
        return Err(Error::Data(format!(
            "no images found in {}",
            raw_dir.display()
        )));
    }
    let stems: Vec<String> = raws.keys().cloned().collect();
    let val: Vec<String> = match split {
        SplitSpec::AllTrain => Vec::new(),
        SplitSpec::RandomVal { count, seed } => {
            if *count > stems.len() {
                return Err(Error::Config(format!(
                    "validation count {count} exceeds the {} available pairs",
                    stems.len()
                )));
            }
            let mut shuffled = stems.clone();
            shuffled.shuffle(&mut ChaCha8Rng::seed_from_u64(*seed));
            shuffled.truncate(*count);
            shuffled
        }
        SplitSpec::ValStems(list) => {
            if let Some(s) = list.iter().find(|s| !raws.contains_key(*s)) {
                return Err(Error::Data(format!(
                    "validation stem {s} is not in the dataset"
                )));
            }
            list.clone()
        }
    };
    let mut entries = Vec::with_capacity(stems.len());
    for stem in stems {
        let raw_path = &raws[&stem];
        let target_path = &targets[&stem];
        let raw = resize_longer_edge(&load_image(raw_path)?, longer_edge)?;
        let target = resize_longer_edge(&load_image(target_path)?, longer_edge)?;
        if raw.same_size(&target).is_err() {
            return Err(Error::Data(format!(
                "{stem}: raw {} is {}x{} but target {} is {}x{} after resizing",
                raw_path.display(),
                raw.width(),
                raw.height(),
                target_path.display(),
                target.width(),
                target.height()
            )));
        }
        entries.push(ManifestEntry {
            split: if val.contains(&stem) {
                Split::Val
            } else {
                Split::Train
            },
            raw: absolute(raw_path),
            target: absolute(target_path),
            width: raw.width(),
            height: raw.height(),
            stem,
        });
    }
    Ok(DatasetManifest {
        longer_edge,
        pad_size,
        entries,
    })
}

fn absolute(path: &Path) -> PathBuf {
    fs::canonicalize(path).unwrap_or_else(|_| path.to_path_buf())
}

/// One training pair, padded and masked, ready for the networks.
#[derive(Debug, Clone)]
pub struct Sample {
    pub stem: String,
    /// `(1, 3, S', S')` with padded pixels set to zero.
    pub raw: Tensor,
    pub target: Tensor,
    /// `(1, 3, S', S')` with 1 on valid pixels.
    pub mask: Tensor,
    pub valid: Mask,
    pub width: usize,
    pub height: usize,
}

impl Sample {
    /// Pads a pair to `network_size(pad_size)`.
    pub fn from_images(
        stem: impl Into<String>,
        raw: &Image,
        target: &Image,
        pad_size: usize,
    ) -> Result<Self> {
        raw.same_size(target)?;
        let size = network_size(pad_size);
        let raw_p = pad_to_square(raw, size)?;
        let target_p = pad_to_square(target, size)?;
        Ok(Self {
            stem: stem.into(),
            raw: raw_p.image.to_tensor(),
            target: target_p.image.to_tensor(),
            mask: raw_p.mask.to_tensor(3),
            valid: raw_p.mask,
            width: raw.width(),
            height: raw.height(),
        })
    }

    pub fn raw_image(&self) -> Image {
        Image::from_tensor(&self.raw, 0)
            .expect("sample tensor")
            .crop(self.width, self.height)
            .expect("valid region")
    }

    pub fn target_image(&self) -> Image {
        Image::from_tensor(&self.target, 0)
            .expect("sample tensor")
            .crop(self.width, self.height)
            .expect("valid region")
    }

    /// Crops a `(1, 3, S', S')` network output back to the original size.
    pub fn unpad(&self, t: &Tensor) -> Result<Image> {
        let padded = PaddedImage {
            image: Image::from_tensor(t, 0)?,
            mask: self.valid.clone(),
            original_width: self.width,
            original_height: self.height,
        };
        Ok(padded.unpad())
    }
}

/// Loads and pads one split of a manifest.
pub fn load_samples(manifest: &DatasetManifest, split: Split) -> Result<Vec<Sample>> {
    manifest
        .split(split)
        .map(|e| {
            let raw = resize_longer_edge(&load_image(&e.raw)?, manifest.longer_edge)?;
            let target = resize_longer_edge(&load_image(&e.target)?, manifest.longer_edge)?;
            if (raw.width(), raw.height()) != (e.width, e.height) {
                return Err(Error::Data(format!(
                    "{}: manifest records {}x{} but the image resizes to {}x{}",
                    e.raw.display(),
                    e.width,
                    e.height,
                    raw.width(),
                    raw.height()
                )));
            }
            Sample::from_images(&e.stem, &raw, &target, manifest.pad_size)
        })
        .collect()
}

/// Stacks samples into `(raw, target, mask)` batch tensors.
pub fn stack_batch(samples: &[&Sample]) -> Result<(Tensor, Tensor, Tensor)> {
    let raw: Vec<&Tensor> = samples.iter().map(|s| &s.raw).collect();
    let target: Vec<&Tensor> = samples.iter().map(|s| &s.target).collect();
    let mask: Vec<&Tensor> = samples.iter().map(|s| &s.mask).collect();
    Ok((
        Tensor::stack(&raw)?,
        Tensor::stack(&target)?,
        Tensor::stack(&mask)?,
    ))
}

/// Sample indices of the batch used at `step`. The permutation of each epoch
/// is a pure function of `(seed, epoch)`, so resuming at any step reproduces
/// the same order.
pub fn batch_indices(len: usize, batch_size: usize, seed: u64, step: u64) -> Vec<usize> {
    let per_epoch = len.div_ceil(batch_size) as u64;
    let epoch = step / per_epoch;
    let pos = (step % per_epoch) as usize;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(epoch);
    let mut order: Vec<usize> = (0..len).collect();
    order.shuffle(&mut rng);
    let start = pos * batch_size;
    order[start..(start + batch_size).min(len)].to_vec()
}
