//! Canonical map and mask types.
//!
//! All maps are row-major with `x` as the column and `y` as the row,
//! origin top-left.

mod io;
mod window;

pub use io::{read_map, read_mask, read_scores, write_map, write_mask, MapFormat};
pub use window::{box_mean, reflect_index};

use serde::{Deserialize, Serialize};

use crate::{Error, Result, Scalar};

/// Default binarization threshold, applied with a strict `>`.
pub const DEFAULT_THRESHOLD: f64 = 0.5;

/// Plain row-major 2-D container with no value constraints.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Grid<T> {
    width: usize,
    height: usize,
    data: Vec<T>,
}

impl<T: Copy> Grid<T> {
    pub fn new(width: usize, height: usize, data: Vec<T>) -> Result<Self> {
        if width == 0 || height == 0 {
            return Err(Error::InvalidArgument(format!(
                "map dimensions must be positive, got {width}x{height}"
            )));
        }
        let len = width.checked_mul(height).ok_or_else(|| {
            Error::InvalidArgument(format!("map dimensions overflow: {width}x{height}"))
        })?;
        if data.len() != len {
            return Err(Error::InvalidArgument(format!(
                "data length {} does not match {width}x{height}",
                data.len()
            )));
        }
        Ok(Self {
            width,
            height,
            data,
        })
    }

    pub fn filled(width: usize, height: usize, value: T) -> Result<Self> {
        Self::new(width, height, vec![value; width.saturating_mul(height)])
    }

    pub fn from_fn(width: usize, height: usize, mut f: impl FnMut(usize, usize) -> T) -> Result<Self> {
        let mut data = Vec::with_capacity(width.saturating_mul(height));
        for y in 0..height {
            for x in 0..width {
                data.push(f(x, y));
            }
        }
        Self::new(width, height, data)
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn len(&self) -> usize {
        self.data.len()
    }

    pub fn is_empty(&self) -> bool {
        self.data.is_empty()
    }

    pub fn data(&self) -> &[T] {
        &self.data
    }

    pub fn into_data(self) -> Vec<T> {
        self.data
    }

    #[inline]
    pub fn get(&self, x: usize, y: usize) -> T {
        self.data[y * self.width + x]
    }

    pub fn same_shape<U>(&self, other: &Grid<U>) -> bool {
        self.width == other.width && self.height == other.height
    }

    pub fn check_shape<U>(&self, other: &Grid<U>) -> Result<()> {
        if self.same_shape(other) {
            Ok(())
        } else {
            Err(Error::DimensionMismatch {
                left_w: self.width,
                left_h: self.height,
                right_w: other.width,
                right_h: other.height,
            })
        }
    }

    pub fn map<U: Copy>(&self, f: impl FnMut(T) -> U) -> Grid<U> {
        Grid {
            width: self.width,
            height: self.height,
            data: self.data.iter().copied().map(f).collect(),
        }
    }

    /// Mirror image about the vertical axis.
    pub fn flip_horizontal(&self) -> Self {
        let mut data = Vec::with_capacity(self.data.len());
        for row in self.data.chunks_exact(self.width) {
            data.extend(row.iter().rev().copied());
        }
        Self {
            width: self.width,
            height: self.height,
            data,
        }
    }
}

fn check_unit_interval<S: Scalar>(data: &[S], what: &str) -> Result<()> {
    if let Some(i) = data
        .iter()
        .position(|v| !(*v >= S::zero() && *v <= S::one()))
    {
        return Err(Error::InvalidArgument(format!(
            "{what} value {} at index {i} is outside [0,1]",
            data[i]
        )));
    }
    Ok(())
}

/// Foreground probability per pixel, every value in `[0,1]`.
#[derive(Debug, Clone, PartialEq)]
pub struct ProbMap<S>(Grid<S>);

impl<S: Scalar> ProbMap<S> {
    pub fn new(width: usize, height: usize, data: Vec<S>) -> Result<Self> {
        let grid = Grid::new(width, height, data)?;
        Self::from_grid(grid)
    }

    pub fn from_grid(grid: Grid<S>) -> Result<Self> {
        check_unit_interval(grid.data(), "probability")?;
        Ok(Self(grid))
    }

    pub fn filled(width: usize, height: usize, value: S) -> Result<Self> {
        Self::from_grid(Grid::filled(width, height, value)?)
    }

    pub fn from_fn(width: usize, height: usize, f: impl FnMut(usize, usize) -> S) -> Result<Self> {
        Self::from_grid(Grid::from_fn(width, height, f)?)
    }

    /// Builds a map from values already known to lie in `[0,1]`.
    pub(crate) fn from_grid_unchecked(grid: Grid<S>) -> Self {
        debug_assert!(check_unit_interval(grid.data(), "probability").is_ok());
        Self(grid)
    }

    pub fn grid(&self) -> &Grid<S> {
        &self.0
    }

    pub fn into_grid(self) -> Grid<S> {
        self.0
    }

    pub fn width(&self) -> usize {
        self.0.width
    }

    pub fn height(&self) -> usize {
        self.0.height
    }

    pub fn len(&self) -> usize {
        self.0.data.len()
    }

    pub fn is_empty(&self) -> bool {
        self.0.data.is_empty()
    }

    pub fn data(&self) -> &[S] {
        &self.0.data
    }

    pub fn get(&self, x: usize, y: usize) -> S {
        self.0.get(x, y)
    }

    pub fn check_shape<U: Copy>(&self, other: &Grid<U>) -> Result<()> {
        self.0.check_shape(other)
    }

    pub fn mean(&self) -> S {
        let n = S::from_usize(self.len()).expect("pixel count fits scalar");
        self.0.data.iter().copied().sum::<S>() / n
    }

    pub fn flip_horizontal(&self) -> Self {
        Self(self.0.flip_horizontal())
    }

    /// Casts to another scalar type, clamping rounding excursions.
    pub fn cast<T: Scalar>(&self) -> ProbMap<T> {
        ProbMap(self.0.map(|v| T::lit(v.as_f64()).max(T::zero()).min(T::one())))
    }
}

/// Per-pixel binary entropy, every value in `[0, max_entropy]` for the chosen log base.
#[derive(Debug, Clone, PartialEq)]
pub struct EntropyMap<S>(Grid<S>);

impl<S: Scalar> EntropyMap<S> {
    pub fn new(width: usize, height: usize, data: Vec<S>) -> Result<Self> {
        let grid = Grid::new(width, height, data)?;
        if let Some(v) = grid.data().iter().find(|v| v.is_nan() || **v < S::zero()) {
            return Err(Error::InvalidArgument(format!("negative entropy {v}")));
        }
        Ok(Self(grid))
    }

    pub(crate) fn from_grid_unchecked(grid: Grid<S>) -> Self {
        Self(grid)
    }

    pub fn grid(&self) -> &Grid<S> {
        &self.0
    }

    pub fn width(&self) -> usize {
        self.0.width
    }

    pub fn height(&self) -> usize {
        self.0.height
    }

    pub fn data(&self) -> &[S] {
        &self.0.data
    }

    pub fn get(&self, x: usize, y: usize) -> S {
        self.0.get(x, y)
    }

    pub fn mean(&self) -> S {
        let n = S::from_usize(self.0.len()).expect("pixel count fits scalar");
        self.0.data.iter().copied().sum::<S>() / n
    }
}

/// Mask with exactly 0 or 1 per pixel.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct BinaryMask(Grid<u8>);

impl BinaryMask {
    pub fn new(width: usize, height: usize, data: Vec<u8>) -> Result<Self> {
        let grid = Grid::new(width, height, data)?;
        if let Some(i) = grid.data().iter().position(|v| *v > 1) {
            return Err(Error::InvalidArgument(format!(
                "mask value {} at index {i} is not 0 or 1",
                grid.data()[i]
            )));
        }
        Ok(Self(grid))
    }

    pub fn zeros(width: usize, height: usize) -> Result<Self> {
        Self::new(width, height, vec![0; width.saturating_mul(height)])
    }

    pub fn from_fn(width: usize, height: usize, mut f: impl FnMut(usize, usize) -> bool) -> Result<Self> {
        Ok(Self(Grid::from_fn(width, height, |x, y| u8::from(f(x, y)))?))
    }

    pub fn grid(&self) -> &Grid<u8> {
        &self.0
    }

    pub fn width(&self) -> usize {
        self.0.width
    }

    pub fn height(&self) -> usize {
        self.0.height
    }

    pub fn data(&self) -> &[u8] {
        &self.0.data
    }

    #[inline]
    pub fn is_set(&self, x: usize, y: usize) -> bool {
        self.0.get(x, y) == 1
    }

    pub fn count_ones(&self) -> usize {
        self.0.data.iter().filter(|v| **v == 1).count()
    }

    pub fn to_prob<S: Scalar>(&self) -> ProbMap<S> {
        ProbMap(self.0.map(|v| if v == 1 { S::one() } else { S::zero() }))
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum NormMode {
    /// Clip each value into `[0,1]`.
    #[default]
    Clamp,
    /// Rescale to `(v - min) / (max - min)`.
    Minmax,
}

const MINMAX_DEGENERATE_RANGE: f64 = 1e-12;

/// Maps raw scores onto `[0,1]`. Total on any finite grid.
pub fn normalize<S: Scalar>(map: &Grid<S>, mode: NormMode) -> ProbMap<S> {
    let clamp = |v: S| v.max(S::zero()).min(S::one());
    match mode {
        NormMode::Clamp => ProbMap(map.map(clamp)),
        NormMode::Minmax => {
            let (lo, hi) = map
                .data()
                .iter()
                .fold((S::infinity(), S::neg_infinity()), |(lo, hi), v| {
                    (lo.min(*v), hi.max(*v))
                });
            let range = hi - lo;
            if range < S::lit(MINMAX_DEGENERATE_RANGE) {
                ProbMap(map.map(clamp))
            } else {
                ProbMap(map.map(|v| clamp((v - lo) / range)))
            }
        }
    }
}

/// Foreground where the probability is strictly above `threshold`.
pub fn binarize<S: Scalar>(map: &ProbMap<S>, threshold: f64) -> Result<BinaryMask> {
    if !(0.0..=1.0).contains(&threshold) {
        return Err(Error::InvalidArgument(format!(
            "threshold {threshold} outside [0,1]"
        )));
    }
    let t = S::lit(threshold);
    Ok(BinaryMask(map.grid().map(|v| u8::from(v > t))))
}
