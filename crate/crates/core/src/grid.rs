//! Dense sampling grids: 2D images and 3D volumes with physical spacing.
//!
//! Both grids store samples x-fastest. Pixel `(ix, iy)` lives at
//! `iy * dim + ix`; voxel `(ix, iy, iz)` at `(iz * dim + iy) * dim + ix`.
//! The default origin puts sample `dim / 2` on every axis at world zero.

use crate::error::{Error, Result};

/// Square image sampling: `dim` pixels per axis of `pixel_size` Å.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct ImageSpec {
    pub dim: usize,
    pub pixel_size: f64,
    /// World coordinate (Å) of the center of pixel (0, 0).
    pub origin: [f64; 2],
}

impl ImageSpec {
    /// Centered spec: pixel `dim / 2` sits at world zero.
    pub fn new(dim: usize, pixel_size: f64) -> Result<Self> {
        let half = (dim / 2) as f64 * pixel_size;
        Self::with_origin(dim, pixel_size, [-half, -half])
    }

    pub fn with_origin(dim: usize, pixel_size: f64, origin: [f64; 2]) -> Result<Self> {
        if dim < 2 || !dim.is_multiple_of(2) {
            return Err(Error::InvalidArgument(format!(
                "image dim must be even and >= 2, got {dim}"
            )));
        }
        if !(pixel_size > 0.0 && pixel_size.is_finite()) {
            return Err(Error::InvalidArgument(format!(
                "pixel size must be positive, got {pixel_size}"
            )));
        }
        Ok(Self { dim, pixel_size, origin })
    }

    pub fn len(&self) -> usize {
        self.dim * self.dim
    }

    pub fn is_empty(&self) -> bool {
        self.dim == 0
    }

    #[inline]
    pub fn pixel_x(&self, ix: usize) -> f64 {
        self.origin[0] + ix as f64 * self.pixel_size
    }

    #[inline]
    pub fn pixel_y(&self, iy: usize) -> f64 {
        self.origin[1] + iy as f64 * self.pixel_size
    }

    /// Box edge length in Å.
    pub fn box_size(&self) -> f64 {
        self.dim as f64 * self.pixel_size
    }

    /// The cubic grid whose x/y faces match this image sampling.
    pub fn grid_spec(&self) -> Result<GridSpec> {
        GridSpec::with_origin(self.dim, self.pixel_size, [self.origin[0], self.origin[1], self.origin[0]])
    }
}

/// Cubic volume sampling.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct GridSpec {
    pub dim: usize,
    pub voxel_size: f64,
    /// World coordinate (Å) of the center of voxel (0, 0, 0).
    pub origin: [f64; 3],
}

impl GridSpec {
    pub fn new(dim: usize, voxel_size: f64) -> Result<Self> {
        let half = (dim / 2) as f64 * voxel_size;
        Self::with_origin(dim, voxel_size, [-half, -half, -half])
    }

    pub fn with_origin(dim: usize, voxel_size: f64, origin: [f64; 3]) -> Result<Self> {
        if dim < 2 {
            return Err(Error::InvalidArgument(format!("grid dim must be >= 2, got {dim}")));
        }
        if !(voxel_size > 0.0 && voxel_size.is_finite()) {
            return Err(Error::InvalidArgument(format!(
                "voxel size must be positive, got {voxel_size}"
            )));
        }
        Ok(Self { dim, voxel_size, origin })
    }

    pub fn len(&self) -> usize {
        self.dim * self.dim * self.dim
    }

    pub fn is_empty(&self) -> bool {
        self.dim == 0
    }

    #[inline]
    pub fn coord(&self, axis: usize, i: usize) -> f64 {
        self.origin[axis] + i as f64 * self.voxel_size
    }

    /// The image spec matching one face of this grid.
    pub fn image_spec(&self) -> Result<ImageSpec> {
        ImageSpec::with_origin(self.dim, self.voxel_size, [self.origin[0], self.origin[1]])
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct Image {
    pub spec: ImageSpec,
    pub data: Vec<f64>,
}

impl Image {
    pub fn zeros(spec: ImageSpec) -> Self {
        Self { spec, data: vec![0.0; spec.len()] }
    }

    pub fn from_data(spec: ImageSpec, data: Vec<f64>) -> Result<Self> {
        if data.len() != spec.len() {
            return Err(Error::Dimension(format!(
                "image data has {} samples, spec needs {}",
                data.len(),
                spec.len()
            )));
        }
        Ok(Self { spec, data })
    }

    #[inline]
    pub fn get(&self, ix: usize, iy: usize) -> f64 {
        self.data[iy * self.spec.dim + ix]
    }

    pub fn energy(&self) -> f64 {
        self.data.iter().map(|v| v * v).sum()
    }

    pub fn max_abs(&self) -> f64 {
        self.data.iter().fold(0.0f64, |m, v| m.max(v.abs()))
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct Volume {
    pub grid: GridSpec,
    pub data: Vec<f64>,
}

impl Volume {
    pub fn zeros(grid: GridSpec) -> Self {
        Self { grid, data: vec![0.0; grid.len()] }
    }

    pub fn from_data(grid: GridSpec, data: Vec<f64>) -> Result<Self> {
        if data.len() != grid.len() {
            return Err(Error::Dimension(format!(
                "volume data has {} samples, grid needs {}",
                data.len(),
                grid.len()
            )));
        }
        Ok(Self { grid, data })
    }

    #[inline]
    pub fn index(&self, ix: usize, iy: usize, iz: usize) -> usize {
        let d = self.grid.dim;
        (iz * d + iy) * d + ix
    }

    #[inline]
    pub fn get(&self, ix: usize, iy: usize, iz: usize) -> f64 {
        self.data[self.index(ix, iy, iz)]
    }

    pub fn scaled(&self, factor: f64) -> Self {
        Self { grid: self.grid, data: self.data.iter().map(|v| v * factor).collect() }
    }

    /// Voxelwise mean of two volumes on the same grid.
    pub fn average(a: &Volume, b: &Volume) -> Result<Self> {
        if a.grid != b.grid {
            return Err(Error::Dimension("volumes live on different grids".into()));
        }
        let data = a.data.iter().zip(&b.data).map(|(x, y)| 0.5 * (x + y)).collect();
        Ok(Self { grid: a.grid, data })
    }
}
