use std::path::{Path, PathBuf};

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::synth::{synth_texture, SynthConfig};
use super::{preprocess, CropMode, PreprocessSpec};
use crate::error::{validation, Result};
use crate::image::Image;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum DatasetSource {
    /// Flat folder of PNG files, or the relative paths listed in `manifest`.
    Directory { root: PathBuf, manifest: Option<PathBuf> },
    Synthetic(SynthConfig),
}

impl Default for DatasetSource {
    fn default() -> Self {
        DatasetSource::Synthetic(SynthConfig::default())
    }
}

#[derive(Debug, Clone)]
enum Items {
    Images(Vec<Image>),
    Files(Vec<PathBuf>),
}

/// Indexed image collection with a seeded per-epoch shuffle.
#[derive(Debug, Clone)]
pub struct Dataset {
    items: Items,
    preprocess: PreprocessSpec,
    shuffle_seed: u64,
}

fn list_directory(root: &Path, manifest: Option<&Path>) -> Result<Vec<PathBuf>> {
    let mut files: Vec<PathBuf> = match manifest {
        Some(m) => {
            let text = std::fs::read_to_string(if m.is_absolute() { m.to_path_buf() } else { root.join(m) })?;
            text.lines().map(str::trim).filter(|l| !l.is_empty()).map(|l| root.join(l)).collect()
        }
        None => {
            let mut v = Vec::new();
            for entry in std::fs::read_dir(root)? {
                let path = entry?.path();
                let is_png = path.extension().and_then(|e| e.to_str()).is_some_and(|e| e.eq_ignore_ascii_case("png"));
                if path.is_file() && is_png {
                    v.push(path);
                }
            }
            v.sort();
            v
        }
    };
    files.dedup();
    Ok(files)
}

impl Dataset {
    pub fn open(source: &DatasetSource, preprocess: PreprocessSpec, shuffle_seed: u64) -> Result<Self> {
        match source {
            DatasetSource::Synthetic(cfg) => Self::synthetic(cfg, shuffle_seed),
            DatasetSource::Directory { root, manifest } => {
                preprocess.validate()?;
                let files = list_directory(root, manifest.as_deref())?;
                if files.is_empty() {
                    return Err(validation(format!("dataset directory {} has no PNG images", root.display())));
                }
                Ok(Self { items: Items::Files(files), preprocess, shuffle_seed })
            }
        }
    }

    /// Generated textures are already at their final size; no preprocessing applies.
    pub fn synthetic(cfg: &SynthConfig, shuffle_seed: u64) -> Result<Self> {
        cfg.validate()?;
        let images = (0..cfg.count as u64).map(|i| synth_texture(cfg, i)).collect();
        Self::from_images(images, shuffle_seed)
    }

    pub fn from_images(images: Vec<Image>, shuffle_seed: u64) -> Result<Self> {
        let first = images.first().ok_or_else(|| validation("dataset is empty"))?;
        for img in &images {
            img.ensure_same_dims(first)?;
        }
        let size = first.width().min(first.height());
        let preprocess = PreprocessSpec { intermediate_short_side: size, crop_size: size, ..PreprocessSpec::default() };
        Ok(Self { items: Items::Images(images), preprocess, shuffle_seed })
    }

    pub fn len(&self) -> usize {
        match &self.items {
            Items::Images(v) => v.len(),
            Items::Files(v) => v.len(),
        }
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    /// Path of a directory item, for reports.
    pub fn label(&self, index: usize) -> String {
        match &self.items {
            Items::Images(_) => format!("synthetic/{index:05}"),
            Items::Files(v) => v[index].display().to_string(),
        }
    }

    fn load(&self, index: usize, mode: CropMode, epoch: u64) -> Result<Image> {
        match &self.items {
            Items::Images(v) => Ok(v[index].clone()),
            Items::Files(v) => {
                let img = Image::load_png(&v[index])?;
                let mut rng = ChaCha8Rng::seed_from_u64(self.shuffle_seed);
                rng.set_stream((epoch << 32) | index as u64);
                preprocess(&img, &PreprocessSpec { crop_mode: mode, ..self.preprocess.clone() }, &mut rng)
            }
        }
    }

    /// Evaluation view: center crop.
    pub fn eval_item(&self, index: usize) -> Result<Image> {
        self.load(index, CropMode::Center, 0)
    }

    pub fn eval_items(&self, limit: Option<usize>) -> Result<Vec<Image>> {
        (0..limit.map_or(self.len(), |l| l.min(self.len()))).map(|i| self.eval_item(i)).collect()
    }

    fn permutation(&self, epoch: u64) -> Vec<usize> {
        let mut order: Vec<usize> = (0..self.len()).collect();
        let mut rng = ChaCha8Rng::seed_from_u64(self.shuffle_seed);
        rng.set_stream(epoch);
        order.shuffle(&mut rng);
        order
    }

    /// Batch number `step`: positions `step*bs .. (step+1)*bs` of the concatenated epoch shuffles.
    pub fn batch(&self, step: u64, batch_size: usize) -> Result<Vec<Image>> {
        if batch_size == 0 {
            return Err(validation("batch_size must be positive"));
        }
        let n = self.len() as u64;
        let start = step * batch_size as u64;
        let mut cached: Option<(u64, Vec<usize>)> = None;
        (start..start + batch_size as u64)
            .map(|p| {
                let epoch = p / n;
                if cached.as_ref().is_none_or(|(e, _)| *e != epoch) {
                    cached = Some((epoch, self.permutation(epoch)));
                }
                let idx = cached.as_ref().expect("permutation cached").1[(p % n) as usize];
                self.load(idx, self.preprocess.crop_mode, epoch)
            })
            .collect()
    }
}
