//! Raster containers shared by every pipeline stage.
//!
//! A [`Grid`] is a dense row-major 2-D array of one scalar type. Three pixel
//! types are used throughout the crate: `u8` intensities for orthoimages,
//! `f32` elevations for DEMs and `bool` for masks. The [`Pixel`] trait ties
//! each of them to its on-disk dtype code.

mod format;
mod resample;

use std::fmt;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

pub use format::{
    grid_read, grid_read_any, grid_write, AnyGrid, MGRD_HEADER_LEN, MGRD_MAGIC, MGRD_VERSION,
};
pub use resample::{resample, Method};
pub(crate) use resample::{
    sample_bilinear as sample_bilinear_at, sample_nearest as sample_nearest_at,
};

/// On-disk element type of a grid.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum DType {
    Intensity,
    Elevation,
    Mask,
}

impl DType {
    pub fn code(self) -> u8 {
        match self {
            DType::Intensity => 0,
            DType::Elevation => 1,
            DType::Mask => 2,
        }
    }

    pub fn from_code(code: u8) -> Option<Self> {
        match code {
            0 => Some(DType::Intensity),
            1 => Some(DType::Elevation),
            2 => Some(DType::Mask),
            _ => None,
        }
    }

    /// Bytes per element in the payload.
    pub fn size(self) -> usize {
        match self {
            DType::Intensity | DType::Mask => 1,
            DType::Elevation => 4,
        }
    }
}

impl fmt::Display for DType {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            DType::Intensity => "u8",
            DType::Elevation => "f32",
            DType::Mask => "bool",
        })
    }
}

/// Scalar types storable in a [`Grid`].
pub trait Pixel: Copy + Send + Sync + fmt::Debug + Default + 'static {
    const DTYPE: DType;

    fn to_f64(self) -> f64;

    /// Converts an interpolated value back, rounding and saturating where needed.
    fn from_f64(v: f64) -> Self;

    /// Raw bit pattern, used for bitwise comparisons.
    fn to_bits(self) -> u32;

    /// Appends the little-endian encoding.
    fn put_le(self, out: &mut Vec<u8>);

    /// Decodes one element from exactly `DTYPE.size()` bytes; `None` if invalid.
    fn take_le(bytes: &[u8]) -> Option<Self>;
}

impl Pixel for u8 {
    const DTYPE: DType = DType::Intensity;

    fn to_f64(self) -> f64 {
        self as f64
    }

    fn from_f64(v: f64) -> Self {
        v.round().clamp(0.0, 255.0) as u8
    }

    fn to_bits(self) -> u32 {
        self as u32
    }

    fn put_le(self, out: &mut Vec<u8>) {
        out.push(self);
    }

    fn take_le(bytes: &[u8]) -> Option<Self> {
        Some(bytes[0])
    }
}

impl Pixel for f32 {
    const DTYPE: DType = DType::Elevation;

    fn to_f64(self) -> f64 {
        self as f64
    }

    fn from_f64(v: f64) -> Self {
        v as f32
    }

    fn to_bits(self) -> u32 {
        f32::to_bits(self)
    }

    fn put_le(self, out: &mut Vec<u8>) {
        out.extend_from_slice(&self.to_le_bytes());
    }

    fn take_le(bytes: &[u8]) -> Option<Self> {
        Some(f32::from_le_bytes([bytes[0], bytes[1], bytes[2], bytes[3]]))
    }
}

impl Pixel for bool {
    const DTYPE: DType = DType::Mask;

    fn to_f64(self) -> f64 {
        if self {
            1.0
        } else {
            0.0
        }
    }

    fn from_f64(v: f64) -> Self {
        v >= 0.5
    }

    fn to_bits(self) -> u32 {
        self as u32
    }

    fn put_le(self, out: &mut Vec<u8>) {
        out.push(self as u8);
    }

    fn take_le(bytes: &[u8]) -> Option<Self> {
        match bytes[0] {
            0 => Some(false),
            1 => Some(true),
            _ => None,
        }
    }
}

/// Dense row-major raster.
#[derive(Debug, Clone, PartialEq)]
pub struct Grid<T> {
    width: usize,
    height: usize,
    data: Vec<T>,
}

pub type Ortho = Grid<u8>;
pub type Dem = Grid<f32>;
pub type Mask = Grid<bool>;

impl<T: Pixel> Grid<T> {
    pub fn new(width: usize, height: usize, data: Vec<T>) -> Result<Self> {
        if data.len() != width * height {
            return Err(Error::InvalidArgument(format!(
                "grid data length {} does not match {}x{}",
                data.len(),
                width,
                height
            )));
        }
        if width > u32::MAX as usize || height > u32::MAX as usize {
            return Err(Error::InvalidArgument(format!(
                "grid dimensions {width}x{height} exceed the u32 range"
            )));
        }
        Ok(Self {
            width,
            height,
            data,
        })
    }

    pub fn filled(width: usize, height: usize, value: T) -> Self {
        Self {
            width,
            height,
            data: vec![value; width * height],
        }
    }

    pub fn from_fn(width: usize, height: usize, mut f: impl FnMut(usize, usize) -> T) -> Self {
        let mut data = Vec::with_capacity(width * height);
        for y in 0..height {
            for x in 0..width {
                data.push(f(x, y));
            }
        }
        Self {
            width,
            height,
            data,
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
    pub fn dims(&self) -> (usize, usize) {
        (self.width, self.height)
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
    pub fn data(&self) -> &[T] {
        &self.data
    }

    #[inline]
    pub fn data_mut(&mut self) -> &mut [T] {
        &mut self.data
    }

    pub fn into_data(self) -> Vec<T> {
        self.data
    }

    #[inline]
    pub fn get(&self, x: usize, y: usize) -> T {
        self.data[y * self.width + x]
    }

    #[inline]
    pub fn set(&mut self, x: usize, y: usize, value: T) {
        self.data[y * self.width + x] = value;
    }

    #[inline]
    pub fn row(&self, y: usize) -> &[T] {
        &self.data[y * self.width..(y + 1) * self.width]
    }

    pub fn same_dims<U>(&self, other: &Grid<U>) -> bool {
        self.width == other.width && self.height == other.height
    }

    /// Equality on raw bit patterns; unlike `==`, NaN payloads compare equal to themselves.
    pub fn bitwise_eq(&self, other: &Self) -> bool {
        self.same_dims(other)
            && self
                .data
                .iter()
                .zip(&other.data)
                .all(|(a, b)| a.to_bits() == b.to_bits())
    }

    /// Copies the window `[x0, x0 + w) × [y0, y0 + h)`.
    pub fn crop(&self, x0: usize, y0: usize, w: usize, h: usize) -> Result<Self> {
        if x0 + w > self.width || y0 + h > self.height {
            return Err(Error::InvalidArgument(format!(
                "crop {w}x{h}+{x0}+{y0} exceeds grid {}x{}",
                self.width, self.height
            )));
        }
        let mut data = Vec::with_capacity(w * h);
        for y in y0..y0 + h {
            let start = y * self.width + x0;
            data.extend_from_slice(&self.data[start..start + w]);
        }
        Ok(Self {
            width: w,
            height: h,
            data,
        })
    }

    pub fn mirror_horizontal(&self) -> Self {
        let mut data = Vec::with_capacity(self.data.len());
        for y in 0..self.height {
            data.extend(self.row(y).iter().rev().copied());
        }
        Self {
            width: self.width,
            height: self.height,
            data,
        }
    }

    pub fn map<U: Pixel>(&self, f: impl Fn(T) -> U) -> Grid<U> {
        Grid {
            width: self.width,
            height: self.height,
            data: self.data.iter().map(|&v| f(v)).collect(),
        }
    }
}

impl Grid<bool> {
    pub fn count_ones(&self) -> usize {
        self.data.iter().filter(|&&v| v).count()
    }

    pub fn fraction(&self) -> f64 {
        if self.data.is_empty() {
            0.0
        } else {
            self.count_ones() as f64 / self.data.len() as f64
        }
    }

    /// Element-wise OR. Panics on dimension mismatch.
    pub fn or(&self, other: &Self) -> Self {
        assert!(self.same_dims(other), "mask dimension mismatch");
        Grid {
            width: self.width,
            height: self.height,
            data: self
                .data
                .iter()
                .zip(&other.data)
                .map(|(&a, &b)| a || b)
                .collect(),
        }
    }

    pub fn or_assign(&mut self, other: &Self) {
        assert!(self.same_dims(other), "mask dimension mismatch");
        for (a, &b) in self.data.iter_mut().zip(&other.data) {
            *a |= b;
        }
    }

    pub fn any_and(&self, other: &Self) -> bool {
        self.data.iter().zip(&other.data).any(|(&a, &b)| a && b)
    }
}

/// Geographic lon/lat rectangle, treated as planar.
///
/// Antimeridian-crossing rectangles are not representable.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct GeoFootprint {
    pub lon_min: f64,
    pub lon_max: f64,
    pub lat_min: f64,
    pub lat_max: f64,
}

impl GeoFootprint {
    pub fn new(lon_min: f64, lon_max: f64, lat_min: f64, lat_max: f64) -> Result<Self> {
        let fp = Self {
            lon_min,
            lon_max,
            lat_min,
            lat_max,
        };
        fp.validate()?;
        Ok(fp)
    }

    pub fn validate(&self) -> Result<()> {
        let finite = [self.lon_min, self.lon_max, self.lat_min, self.lat_max]
            .iter()
            .all(|v| v.is_finite());
        if !finite {
            return Err(Error::Validation("footprint has non-finite bounds".into()));
        }
        if !(-180.0..=180.0).contains(&self.lon_min) || !(-180.0..=180.0).contains(&self.lon_max) {
            return Err(Error::Validation(format!(
                "longitude out of [-180, 180]: [{}, {}]",
                self.lon_min, self.lon_max
            )));
        }
        if !(-90.0..=90.0).contains(&self.lat_min) || !(-90.0..=90.0).contains(&self.lat_max) {
            return Err(Error::Validation(format!(
                "latitude out of [-90, 90]: [{}, {}]",
                self.lat_min, self.lat_max
            )));
        }
        if self.lon_min > self.lon_max {
            return Err(Error::Validation(format!(
                "lon_min {} > lon_max {}",
                self.lon_min, self.lon_max
            )));
        }
        if self.lat_min > self.lat_max {
            return Err(Error::Validation(format!(
                "lat_min {} > lat_max {}",
                self.lat_min, self.lat_max
            )));
        }
        Ok(())
    }

    /// Closed-interval intersection test: touching edges count.
    pub fn intersects(&self, other: &Self) -> bool {
        self.lon_min <= other.lon_max
            && other.lon_min <= self.lon_max
            && self.lat_min <= other.lat_max
            && other.lat_min <= self.lat_max
    }

    pub fn contains(&self, other: &Self) -> bool {
        self.lon_min <= other.lon_min
            && self.lon_max >= other.lon_max
            && self.lat_min <= other.lat_min
            && self.lat_max >= other.lat_max
    }
}

/// One source sample: orthoimage, DEM and the two repair masks.
///
/// Masks always share the DEM's dimensions; the ortho may be at a different
/// resolution until [`crate::patching::match_resolution`] runs.
#[derive(Debug, Clone)]
pub struct RasterSample {
    pub id: String,
    pub ortho: Ortho,
    pub dem: Dem,
    pub nodata_mask: Mask,
    pub outlier_mask: Mask,
    pub left_footprint: GeoFootprint,
    pub right_footprint: GeoFootprint,
}

impl RasterSample {
    /// Builds a sample with empty masks sized to the DEM.
    pub fn new(
        id: impl Into<String>,
        ortho: Ortho,
        dem: Dem,
        left_footprint: GeoFootprint,
        right_footprint: GeoFootprint,
    ) -> Self {
        let (w, h) = dem.dims();
        Self {
            id: id.into(),
            ortho,
            dem,
            nodata_mask: Grid::filled(w, h, false),
            outlier_mask: Grid::filled(w, h, false),
            left_footprint,
            right_footprint,
        }
    }

    pub fn check_invariants(&self) -> Result<()> {
        if !self.nodata_mask.same_dims(&self.dem) || !self.outlier_mask.same_dims(&self.dem) {
            return Err(Error::Validation(format!(
                "sample {}: mask dimensions differ from DEM",
                self.id
            )));
        }
        if self.nodata_mask.any_and(&self.outlier_mask) {
            return Err(Error::Validation(format!(
                "sample {}: nodata and outlier masks overlap",
                self.id
            )));
        }
        Ok(())
    }
}
