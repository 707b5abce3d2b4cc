//! Image containers, log/exp domain transforms and L-look speckle synthesis.
//!
//! Images are row-major grids of `f64`. The same container is used for the
//! intensity domain (`u`, `v`) and the log domain (`x = ln u`); the domain is
//! carried as a type parameter so the two cannot be mixed up by accident.

use std::fmt;
use std::marker::PhantomData;

use rand::{Rng, SeedableRng};
use rand_distr::{Distribution, Exp1, Gamma};
use rand_xoshiro::Xoshiro256PlusPlus;

use crate::error::{Error, Result};

/// Marker for intensity-domain images.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Intensity {}

/// Marker for log-domain images.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Log {}

/// Row-major grid of 64-bit reals tagged with its value domain.
pub struct Image<D> {
    width: usize,
    height: usize,
    data: Vec<f64>,
    _domain: PhantomData<D>,
}

/// Intensity image `u` or `v`.
pub type IntensityImage = Image<Intensity>;
/// Log-transformed image `x = ln u`.
pub type LogImage = Image<Log>;

impl<D> Clone for Image<D> {
    fn clone(&self) -> Self {
        Self {
            width: self.width,
            height: self.height,
            data: self.data.clone(),
            _domain: PhantomData,
        }
    }
}

impl<D> PartialEq for Image<D> {
    fn eq(&self, other: &Self) -> bool {
        self.width == other.width && self.height == other.height && self.data == other.data
    }
}

impl<D> fmt::Debug for Image<D> {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("Image")
            .field("width", &self.width)
            .field("height", &self.height)
            .field("len", &self.data.len())
            .finish()
    }
}

impl<D> Image<D> {
    pub fn new(width: usize, height: usize, data: Vec<f64>) -> Result<Self> {
        if width == 0 || height == 0 {
            return Err(Error::ImageTooSmall {
                width,
                height,
                reason: "image must have at least one pixel".into(),
            });
        }
        if data.len() != width * height {
            return Err(Error::dims(
                format!("{} samples ({width}x{height})", width * height),
                format!("{} samples", data.len()),
            ));
        }
        Ok(Self {
            width,
            height,
            data,
            _domain: PhantomData,
        })
    }

    pub fn filled(width: usize, height: usize, value: f64) -> Self {
        assert!(width > 0 && height > 0, "empty image");
        Self {
            width,
            height,
            data: vec![value; width * height],
            _domain: PhantomData,
        }
    }

    pub fn zeros(width: usize, height: usize) -> Self {
        Self::filled(width, height, 0.0)
    }

    pub fn from_fn(width: usize, height: usize, mut f: impl FnMut(usize, usize) -> f64) -> Self {
        assert!(width > 0 && height > 0, "empty image");
        let mut data = Vec::with_capacity(width * height);
        for r in 0..height {
            for c in 0..width {
                data.push(f(r, c));
            }
        }
        Self {
            width,
            height,
            data,
            _domain: PhantomData,
        }
    }

    #[inline]
    pub fn width(&self) -> usize {
        self.width
    }

    #[inline]
    pub fn height(&self) -> usize {
        self.height
    }

    #[inline]
    pub fn len(&self) -> usize {
        self.data.len()
    }

    #[inline]
    pub fn is_empty(&self) -> bool {
        self.data.is_empty()
    }

    #[inline]
    pub fn data(&self) -> &[f64] {
        &self.data
    }

    #[inline]
    pub fn data_mut(&mut self) -> &mut [f64] {
        &mut self.data
    }

    pub fn into_data(self) -> Vec<f64> {
        self.data
    }

    #[inline]
    pub fn get(&self, row: usize, col: usize) -> f64 {
        self.data[row * self.width + col]
    }

    #[inline]
    pub fn set(&mut self, row: usize, col: usize, value: f64) {
        self.data[row * self.width + col] = value;
    }

    pub fn same_shape<E>(&self, other: &Image<E>) -> bool {
        self.width == other.width && self.height == other.height
    }

    pub(crate) fn check_shape<E>(&self, other: &Image<E>) -> Result<()> {
        if self.same_shape(other) {
            Ok(())
        } else {
            Err(Error::dims(
                format!("{}x{}", self.width, self.height),
                format!("{}x{}", other.width, other.height),
            ))
        }
    }

    /// Applies `f` pixelwise, possibly changing the domain tag.
    pub fn map<E>(&self, f: impl Fn(f64) -> f64) -> Image<E> {
        Image {
            width: self.width,
            height: self.height,
            data: self.data.iter().map(|&v| f(v)).collect(),
            _domain: PhantomData,
        }
    }

    /// Copies a rectangular window `[top, top+height) x [left, left+width)`.
    pub fn crop(&self, top: usize, left: usize, height: usize, width: usize) -> Result<Self> {
        if height == 0 || width == 0 || top + height > self.height || left + width > self.width {
            return Err(Error::invalid(
                "crop",
                format!(
                    "window {height}x{width} at ({top}, {left}) outside {}x{} image",
                    self.height, self.width
                ),
            ));
        }
        Ok(Self::from_fn(width, height, |r, c| {
            self.get(top + r, left + c)
        }))
    }

    pub fn max_value(&self) -> f64 {
        self.data.iter().copied().fold(f64::NEG_INFINITY, f64::max)
    }

    pub fn min_value(&self) -> f64 {
        self.data.iter().copied().fold(f64::INFINITY, f64::min)
    }
}

/// Parameters of the L-look multiplicative Gamma speckle model.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct NoiseSpec {
    pub looks: u32,
    pub seed: u64,
}

impl NoiseSpec {
    pub fn new(looks: u32, seed: u64) -> Result<Self> {
        if looks == 0 {
            return Err(Error::invalid("looks", "must be at least 1"));
        }
        Ok(Self { looks, seed })
    }
}

/// Above this look count the speckle field is drawn from a Gamma sampler
/// directly instead of summing `L` exponentials.
pub const EXPONENTIAL_SUM_MAX_LOOKS: u32 = 64;

/// Draws the speckle field `eta` with `eta_i ~ Gamma(L, 1/L)`.
///
/// The generator is xoshiro256++ seeded through SplitMix64 from
/// `spec.seed`; samples are drawn in raster order. For
/// `L <= EXPONENTIAL_SUM_MAX_LOOKS` each sample is `(1/L) * sum of L Exp(1)`
/// draws, otherwise a Marsaglia-Tsang Gamma draw.
pub fn gamma_noise_field(width: usize, height: usize, spec: NoiseSpec) -> Result<IntensityImage> {
    if spec.looks == 0 {
        return Err(Error::invalid("looks", "must be at least 1"));
    }
    let mut rng = Xoshiro256PlusPlus::seed_from_u64(spec.seed);
    let looks = f64::from(spec.looks);
    let n = width * height;
    let mut data = Vec::with_capacity(n);
    if spec.looks <= EXPONENTIAL_SUM_MAX_LOOKS {
        for _ in 0..n {
            let mut acc = 0.0;
            for _ in 0..spec.looks {
                let e: f64 = rng.sample(Exp1);
                acc += e;
            }
            data.push(acc / looks);
        }
    } else {
        let gamma = Gamma::new(looks, 1.0 / looks)
            .map_err(|e| Error::invalid("looks", e.to_string()))?;
        data.extend((0..n).map(|_| gamma.sample(&mut rng)));
    }
    Image::new(width, height, data)
}

/// Multiplies `u` by a seeded L-look speckle field: `v = u * eta`.
pub fn apply_gamma_noise(u: &IntensityImage, spec: NoiseSpec) -> Result<IntensityImage> {
    let eta = gamma_noise_field(u.width(), u.height(), spec)?;
    let data = u
        .data()
        .iter()
        .zip(eta.data())
        .map(|(&a, &b)| a * b)
        .collect();
    Image::new(u.width(), u.height(), data)
}

/// Raises every pixel to at least `floor_ratio * max(img)`.
pub fn clip_positive(img: &IntensityImage, floor_ratio: f64) -> Result<IntensityImage> {
    if !(floor_ratio > 0.0) || !floor_ratio.is_finite() {
        return Err(Error::invalid("floor_ratio", "must be a positive finite number"));
    }
    let max = img.max_value();
    if !(max > 0.0) {
        return Err(Error::AllZeroImage);
    }
    let floor = floor_ratio * max;
    Ok(img.map(|v| v.max(floor)))
}

/// `x = ln u` componentwise.
pub fn to_log(img: &IntensityImage) -> Result<LogImage> {
    if let Some((index, &value)) = img.data().iter().enumerate().find(|(_, &v)| !(v > 0.0)) {
        return Err(Error::NonPositivePixel { index, value });
    }
    Ok(img.map(f64::ln))
}

/// `u = exp x` componentwise.
pub fn from_log(x: &LogImage) -> IntensityImage {
    x.map(f64::exp)
}
