//! Datasets on disk.
//!
//! ```text
//! <dir>/manifest.json
//! <dir>/mask.json
//! <dir>/<split>/<index>.{x1,y,x0}.fla
//! ```

use std::fs;
use std::path::{Path, PathBuf};

use flat_core::phantom::{noise_seed, phantom_seed, DataConfig, Sample, Split};
use flat_core::physics::{NoiseSpec, SamplingMask};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::{fla, json};

pub const MANIFEST: &str = "manifest.json";
pub const MASK: &str = "mask.json";
pub const FORMAT: &str = "flat-dataset";
pub const FORMAT_VERSION: u32 = 1;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Counts {
    pub train: usize,
    pub val: usize,
    pub test: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DatasetManifest {
    pub format: String,
    pub version: u32,
    pub root_seed: u64,
    pub counts: Counts,
    pub size: usize,
    pub ellipses: (usize, usize),
    pub mask: flat_core::phantom::MaskConfig,
    pub noise_std: f64,
}

impl DatasetManifest {
    pub fn from_config(cfg: &DataConfig) -> Self {
        Self {
            format: FORMAT.into(),
            version: FORMAT_VERSION,
            root_seed: cfg.root_seed,
            counts: Counts { train: cfg.train, val: cfg.val, test: cfg.test },
            size: cfg.size,
            ellipses: cfg.ellipses,
            mask: cfg.mask,
            noise_std: cfg.noise_std,
        }
    }

    pub fn data_config(&self) -> DataConfig {
        DataConfig {
            root_seed: self.root_seed,
            train: self.counts.train,
            val: self.counts.val,
            test: self.counts.test,
            size: self.size,
            ellipses: self.ellipses,
            mask: self.mask,
            noise_std: self.noise_std,
        }
    }

    pub fn count(&self, split: Split) -> usize {
        self.data_config().count(split)
    }

    pub fn noise(&self, split: Split, index: usize) -> NoiseSpec {
        NoiseSpec {
            std: self.noise_std,
            seed: noise_seed(phantom_seed(self.root_seed, split, index)),
        }
    }
}

pub fn sample_path(dir: &Path, split: Split, index: usize, part: &str) -> PathBuf {
    dir.join(split.name()).join(format!("{index}.{part}.fla"))
}

/// Creates `dir`, or empties it when `force` is set. A nonempty directory is
/// refused otherwise, before anything is written.
pub fn prepare_output_dir(dir: &Path, force: bool) -> Result<()> {
    match fs::read_dir(dir) {
        Ok(mut entries) => {
            if entries.next().is_some() {
                if !force {
                    return Err(Error::NotEmpty(dir.to_path_buf()));
                }
                fs::remove_dir_all(dir).map_err(|e| Error::io(dir, e))?;
            }
        }
        Err(e) if e.kind() == std::io::ErrorKind::NotFound => {}
        Err(e) => return Err(Error::io(dir, e)),
    }
    fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))
}

/// Generates every split of `cfg` and writes it under `dir`.
pub fn make_dataset(dir: &Path, cfg: &DataConfig, force: bool) -> Result<DatasetManifest> {
    cfg.validate()?;
    prepare_output_dir(dir, force)?;
    let manifest = DatasetManifest::from_config(cfg);
    json::write(&dir.join(MASK), &cfg.mask.build(cfg.size)?)?;
    for split in Split::ALL {
        let sub = dir.join(split.name());
        fs::create_dir_all(&sub).map_err(|e| Error::io(&sub, e))?;
        (0..cfg.count(split)).into_par_iter().try_for_each(|i| {
            let (_, sample) = cfg.sample(split, i)?;
            fla::write_grid(&sample_path(dir, split, i, "x1"), &sample.x1)?;
            fla::write_grid(&sample_path(dir, split, i, "y"), &sample.y)?;
            fla::write_grid(&sample_path(dir, split, i, "x0"), &sample.x0)
        })?;
    }
    // The manifest goes last: a directory without one is an interrupted write.
    json::write(&dir.join(MANIFEST), &manifest)?;
    Ok(manifest)
}

#[derive(Debug, Clone, PartialEq)]
pub struct Dataset {
    pub manifest: DatasetManifest,
    pub mask: SamplingMask,
    pub train: Vec<Sample>,
    pub val: Vec<Sample>,
    pub test: Vec<Sample>,
}

impl Dataset {
    pub fn split(&self, split: Split) -> &[Sample] {
        match split {
            Split::Train => &self.train,
            Split::Val => &self.val,
            Split::Test => &self.test,
        }
    }
}

pub fn read_manifest(dir: &Path) -> Result<DatasetManifest> {
    let path = dir.join(MANIFEST);
    let manifest: DatasetManifest = json::read(&path)?;
    if manifest.format != FORMAT || manifest.version != FORMAT_VERSION {
        return Err(Error::format(
            &path,
            format!("expected {FORMAT} v{FORMAT_VERSION}, found {} v{}", manifest.format, manifest.version),
        ));
    }
    Ok(manifest)
}

fn load_split(dir: &Path, manifest: &DatasetManifest, mask: &SamplingMask, split: Split) -> Result<Vec<Sample>> {
    (0..manifest.count(split))
        .into_par_iter()
        .map(|i| {
            let grid = |part| fla::read_grid(&sample_path(dir, split, i, part));
            let sample = Sample {
                x1: grid("x1")?,
                y: grid("y")?,
                x0: grid("x0")?,
                mask: mask.clone(),
                noise: manifest.noise(split, i),
            };
            if sample.x1.height() != manifest.size || sample.x1.width() != manifest.size {
                return Err(Error::format(
                    &sample_path(dir, split, i, "x1"),
                    format!("expected {0}x{0} grid", manifest.size),
                ));
            }
            Ok(sample)
        })
        .collect()
}

pub fn load_dataset(dir: &Path) -> Result<Dataset> {
    let manifest = read_manifest(dir)?;
    let mask: SamplingMask = json::read(&dir.join(MASK))?;
    Ok(Dataset {
        train: load_split(dir, &manifest, &mask, Split::Train)?,
        val: load_split(dir, &manifest, &mask, Split::Val)?,
        test: load_split(dir, &manifest, &mask, Split::Test)?,
        manifest,
        mask,
    })
}

/// Outcome of [`check_dataset`].
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct DatasetCheck {
    pub samples: usize,
    /// `(split, index, problem)` for every sample that failed.
    pub failures: Vec<(Split, usize, String)>,
}

impl DatasetCheck {
    pub fn ok(&self) -> bool {
        self.failures.is_empty()
    }
}

/// Reloads every sample and checks it: the stored observation and
/// zero-filled estimate must follow exactly from `x1`, the mask and the
/// recorded noise, and `x1` must match regeneration from the root seed.
pub fn check_dataset(dir: &Path) -> Result<DatasetCheck> {
    let data = load_dataset(dir)?;
    let cfg = data.manifest.data_config();
    let mut failures = Vec::new();
    let mut samples = 0;
    for split in Split::ALL {
        for (i, sample) in data.split(split).iter().enumerate() {
            samples += 1;
            if let Err(e) = sample.check() {
                failures.push((split, i, e.to_string()));
                continue;
            }
            match cfg.sample(split, i) {
                Ok((_, fresh)) if fresh == *sample => {}
                Ok(_) => failures.push((split, i, "differs from regeneration".into())),
                Err(e) => failures.push((split, i, e.to_string())),
            }
        }
    }
    Ok(DatasetCheck { samples, failures })
}
