//! Seeded ellipse phantoms and their undersampled k-space samples.

use alloc::vec::Vec;

use crate::array::RealArray;
use crate::error::{config_err, shape_err, Error, Result};
use crate::grid::ComplexGrid;
use crate::physics::{adjoint, apply_forward, fft2_centered, ifft2_centered, make_equispaced_mask, NoiseSpec, SamplingMask};
use crate::rng::Rng;

#[derive(Debug, Clone, Copy, PartialEq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
pub struct Ellipse {
    /// Center in normalized coordinates, `[-1, 1]` across the image.
    pub center: (f64, f64),
    /// Semi-axes in normalized units.
    pub axes: (f64, f64),
    /// Rotation in radians.
    pub angle: f64,
    pub intensity: f64,
}

impl Ellipse {
    fn contains(&self, x: f64, y: f64) -> bool {
        let (dx, dy) = (x - self.center.0, y - self.center.1);
        let (s, c) = (libm::sin(self.angle), libm::cos(self.angle));
        let u = (c * dx + s * dy) / self.axes.0;
        let v = (-s * dx + c * dy) / self.axes.1;
        u * u + v * v <= 1.0
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Phantom {
    /// `[size, size]`, values in `[0, 1]`.
    pub image: RealArray,
    pub seed: u64,
    pub ellipses: Vec<Ellipse>,
}

/// Sum of random ellipses on a zero background, clipped to `[0, 1]`. The
/// ellipse count is drawn uniformly from `n_ellipses.0..=n_ellipses.1`.
pub fn make_phantom(seed: u64, size: usize, n_ellipses: (usize, usize)) -> Result<Phantom> {
    if size < 8 || !size.is_power_of_two() {
        return Err(config_err!("phantom size must be a power of two >= 8, got {size}"));
    }
    if n_ellipses.0 > n_ellipses.1 {
        return Err(config_err!("empty ellipse count range {:?}", n_ellipses));
    }
    let mut rng = Rng::new(seed);
    let count = rng.int_in(n_ellipses.0, n_ellipses.1);
    let ellipses: Vec<Ellipse> = (0..count)
        .map(|_| Ellipse {
            center: (rng.uniform_in(-0.5, 0.5), rng.uniform_in(-0.5, 0.5)),
            axes: (rng.uniform_in(0.1, 0.5), rng.uniform_in(0.1, 0.5)),
            angle: rng.uniform_in(0.0, core::f64::consts::PI),
            intensity: rng.uniform_in(0.1, 0.6),
        })
        .collect();
    let mut data = alloc::vec![0.0; size * size];
    let step = 2.0 / size as f64;
    for r in 0..size {
        let y = -1.0 + (r as f64 + 0.5) * step;
        for c in 0..size {
            let x = -1.0 + (c as f64 + 0.5) * step;
            let v: f64 = ellipses.iter().filter(|e| e.contains(x, y)).map(|e| e.intensity).sum();
            data[r * size + c] = v.clamp(0.0, 1.0);
        }
    }
    Ok(Phantom {
        image: RealArray::new(&[size, size], data)?,
        seed,
        ellipses,
    })
}

/// Parameters of the equispaced column mask.
#[derive(Debug, Clone, Copy, PartialEq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
#[cfg_attr(feature = "serde", serde(default, deny_unknown_fields))]
pub struct MaskConfig {
    pub acceleration: usize,
    pub center_fraction: f64,
    pub offset: usize,
}

impl Default for MaskConfig {
    fn default() -> Self {
        Self {
            acceleration: 8,
            center_fraction: 0.08,
            offset: 0,
        }
    }
}

impl MaskConfig {
    pub fn build(&self, width: usize) -> Result<SamplingMask> {
        make_equispaced_mask(width, self.acceleration, self.center_fraction, self.offset)
    }
}

/// Fully sampled k-space `x1`, its undersampled observation `y` and the
/// zero-filled estimate `x0 = A^T y`.
#[derive(Debug, Clone, PartialEq)]
pub struct Sample {
    pub x1: ComplexGrid,
    pub y: ComplexGrid,
    pub x0: ComplexGrid,
    pub mask: SamplingMask,
    pub noise: NoiseSpec,
}

pub fn make_sample(phantom: &Phantom, mask: &SamplingMask, noise: &NoiseSpec) -> Result<Sample> {
    let d = phantom.image.dims();
    let image = ComplexGrid::from_real(d[0], d[1], phantom.image.data())?;
    let x1 = fft2_centered(&image)?;
    let y = apply_forward(&x1, mask, noise)?;
    let x0 = adjoint(&y, mask)?;
    Ok(Sample {
        x1,
        y,
        x0,
        mask: mask.clone(),
        noise: *noise,
    })
}

impl Sample {
    /// Magnitude image of the fully sampled k-space.
    pub fn ground_truth(&self) -> Result<RealArray> {
        magnitude_image(&self.x1)
    }

    /// Re-derives `y` and `x0` and demands exact agreement.
    pub fn check(&self) -> Result<()> {
        self.mask.validate()?;
        let y = apply_forward(&self.x1, &self.mask, &self.noise)?;
        if y != self.y {
            return Err(Error::Contract(alloc::string::String::from(
                "observation does not match the recorded mask and noise",
            )));
        }
        if adjoint(&self.y, &self.mask)? != self.x0 {
            return Err(Error::Contract(alloc::string::String::from(
                "zero-filled estimate does not match the observation",
            )));
        }
        Ok(())
    }
}

/// `|F^-1 x|` as a `[H, W]` array.
pub fn magnitude_image(x: &ComplexGrid) -> Result<RealArray> {
    let image = ifft2_centered(x)?;
    RealArray::new(&[x.height(), x.width()], image.magnitude())
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
#[cfg_attr(feature = "serde", serde(rename_all = "lowercase"))]
pub enum Split {
    Train,
    Val,
    Test,
}

impl Split {
    pub const ALL: [Split; 3] = [Split::Train, Split::Val, Split::Test];

    pub fn name(self) -> &'static str {
        match self {
            Split::Train => "train",
            Split::Val => "val",
            Split::Test => "test",
        }
    }

    fn index(self) -> u64 {
        match self {
            Split::Train => 0,
            Split::Val => 1,
            Split::Test => 2,
        }
    }
}

/// Samples per split are capped so the seed ranges below never overlap.
pub const MAX_SPLIT_COUNT: usize = 1 << 30;

/// Phantom seed of sample `index` in `split`: each split owns the block
/// `root * 2^32 + split * 2^30 + [0, 2^30)` (wrapping).
pub fn phantom_seed(root_seed: u64, split: Split, index: usize) -> u64 {
    root_seed
        .wrapping_shl(32)
        .wrapping_add(split.index() << 30)
        .wrapping_add(index as u64)
}

/// Noise seed paired with a phantom seed.
pub fn noise_seed(phantom_seed: u64) -> u64 {
    phantom_seed ^ 0x9e37_79b9_7f4a_7c15
}

/// Everything needed to regenerate a dataset.
#[derive(Debug, Clone, PartialEq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
#[cfg_attr(feature = "serde", serde(default, deny_unknown_fields))]
pub struct DataConfig {
    pub root_seed: u64,
    pub train: usize,
    pub val: usize,
    pub test: usize,
    pub size: usize,
    pub ellipses: (usize, usize),
    pub mask: MaskConfig,
    pub noise_std: f64,
}

impl Default for DataConfig {
    fn default() -> Self {
        Self {
            root_seed: 0,
            train: 200,
            val: 40,
            test: 40,
            size: 32,
            ellipses: (3, 8),
            mask: MaskConfig::default(),
            noise_std: 0.0,
        }
    }
}

impl DataConfig {
    pub fn count(&self, split: Split) -> usize {
        match split {
            Split::Train => self.train,
            Split::Val => self.val,
            Split::Test => self.test,
        }
    }

    pub fn validate(&self) -> Result<()> {
        for split in Split::ALL {
            let n = self.count(split);
            if n == 0 || n > MAX_SPLIT_COUNT {
                return Err(config_err!("{} count must be in 1..=2^30, got {n}", split.name()));
            }
        }
        if !(self.noise_std >= 0.0) {
            return Err(config_err!("noise std must be >= 0"));
        }
        if self.size < 8 || !self.size.is_power_of_two() {
            return Err(shape_err!("image size must be a power of two >= 8, got {}", self.size));
        }
        self.mask.build(self.size).map(|_| ())
    }

    /// Sample `index` of `split`.
    pub fn sample(&self, split: Split, index: usize) -> Result<(Phantom, Sample)> {
        let seed = phantom_seed(self.root_seed, split, index);
        let phantom = make_phantom(seed, self.size, self.ellipses)?;
        let noise = NoiseSpec {
            std: self.noise_std,
            seed: noise_seed(seed),
        };
        let sample = make_sample(&phantom, &self.mask.build(self.size)?, &noise)?;
        Ok((phantom, sample))
    }

    pub fn split(&self, split: Split) -> Result<Vec<Sample>> {
        self.validate()?;
        (0..self.count(split)).map(|i| Ok(self.sample(split, i)?.1)).collect()
    }
}
