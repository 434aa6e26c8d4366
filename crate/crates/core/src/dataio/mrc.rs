//! MRC maps and particle stacks: mode 2 (32-bit float), little-endian,
//! 1024-byte header. Any extended header is skipped on read. Stacks store
//! one image per z-section.

use std::io::Write;
use std::path::Path;

use crate::atomic::{read_all, write_atomic};
use crate::error::{Error, FormatError, Result};
use crate::grid::{GridSpec, Image, ImageSpec, Volume};

pub const HEADER_BYTES: usize = 1024;
const MAP_MAGIC: &[u8; 4] = b"MAP ";
const STAMP_LITTLE: [u8; 4] = [0x44, 0x44, 0x00, 0x00];

#[derive(Clone, Debug, PartialEq)]
pub struct MrcHeader {
    pub nx: usize,
    pub ny: usize,
    pub nz: usize,
    pub mode: i32,
    /// Sampling along each axis (the `mx, my, mz` words).
    pub sampling: [usize; 3],
    /// Cell dimensions, Å.
    pub cella: [f32; 3],
    pub origin: [f32; 3],
    /// Space group: 1 for a volume, 0 for an image stack.
    pub ispg: i32,
    pub ext_header_bytes: usize,
}

impl MrcHeader {
    /// Voxel size per axis, Å.
    pub fn voxel_size(&self) -> [f64; 3] {
        std::array::from_fn(|a| self.cella[a] as f64 / self.sampling[a].max(1) as f64)
    }

    pub fn voxel_count(&self) -> usize {
        self.nx * self.ny * self.nz
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct MrcFile {
    pub header: MrcHeader,
    /// Voxel values, x fastest, then y, then z.
    pub data: Vec<f32>,
}

fn word_i32(bytes: &[u8], word: usize) -> i32 {
    i32::from_le_bytes(bytes[word * 4..word * 4 + 4].try_into().unwrap())
}

fn word_f32(bytes: &[u8], word: usize) -> f32 {
    f32::from_le_bytes(bytes[word * 4..word * 4 + 4].try_into().unwrap())
}

pub fn decode_mrc(bytes: &[u8]) -> Result<MrcFile> {
    if bytes.len() < HEADER_BYTES {
        return Err(FormatError::Truncated { needed: HEADER_BYTES as u64, found: bytes.len() as u64 }.into());
    }
    if &bytes[208..212] != MAP_MAGIC {
        return Err(FormatError::BadMagic {
            expected: String::from_utf8_lossy(MAP_MAGIC).into_owned(),
            found: String::from_utf8_lossy(&bytes[208..212]).into_owned(),
        }
        .into());
    }
    if bytes[212] == 0x11 {
        return Err(FormatError::Schema("big-endian MRC files are not supported".into()).into());
    }
    let mode = word_i32(bytes, 3);
    if mode != 2 {
        return Err(FormatError::UnsupportedMode(mode).into());
    }
    let dims: Vec<i32> = (0..3).map(|w| word_i32(bytes, w)).collect();
    if dims.iter().any(|d| *d <= 0) {
        return Err(FormatError::Schema(format!("non-positive dimensions {dims:?}")).into());
    }
    let (nx, ny, nz) = (dims[0] as usize, dims[1] as usize, dims[2] as usize);
    let sampling: [usize; 3] = std::array::from_fn(|a| {
        let m = word_i32(bytes, 7 + a);
        if m > 0 {
            m as usize
        } else {
            dims[a] as usize
        }
    });
    let ext = word_i32(bytes, 23).max(0) as usize;
    let header = MrcHeader {
        nx,
        ny,
        nz,
        mode,
        sampling,
        cella: std::array::from_fn(|a| word_f32(bytes, 10 + a)),
        origin: std::array::from_fn(|a| word_f32(bytes, 49 + a)),
        ispg: word_i32(bytes, 22),
        ext_header_bytes: ext,
    };
    let start = HEADER_BYTES + ext;
    let needed = start as u64 + header.voxel_count() as u64 * 4;
    if (bytes.len() as u64) < needed {
        return Err(FormatError::Truncated { needed, found: bytes.len() as u64 }.into());
    }
    let data = bytes[start..start + header.voxel_count() * 4]
        .chunks_exact(4)
        .map(|c| f32::from_le_bytes(c.try_into().unwrap()))
        .collect();
    Ok(MrcFile { header, data })
}

pub fn read_mrc(path: &Path) -> Result<MrcFile> {
    decode_mrc(&read_all(path)?)
}

pub fn encode_mrc(header: &MrcHeader, data: &[f32], out: &mut dyn Write) -> Result<()> {
    if data.len() != header.voxel_count() {
        return Err(Error::Dimension(format!(
            "{} values for a {}x{}x{} map",
            data.len(),
            header.nx,
            header.ny,
            header.nz
        )));
    }
    let mut h = [0u8; HEADER_BYTES];
    let mut put = |word: usize, bytes: [u8; 4]| h[word * 4..word * 4 + 4].copy_from_slice(&bytes);
    put(0, (header.nx as i32).to_le_bytes());
    put(1, (header.ny as i32).to_le_bytes());
    put(2, (header.nz as i32).to_le_bytes());
    put(3, 2i32.to_le_bytes());
    for a in 0..3 {
        put(7 + a, (header.sampling[a] as i32).to_le_bytes());
        put(10 + a, header.cella[a].to_le_bytes());
        put(13 + a, 90.0f32.to_le_bytes());
        put(16 + a, (a as i32 + 1).to_le_bytes());
        put(49 + a, header.origin[a].to_le_bytes());
    }
    let n = data.len().max(1) as f64;
    let (mut lo, mut hi, mut sum) = (f32::INFINITY, f32::NEG_INFINITY, 0.0f64);
    for v in data {
        lo = lo.min(*v);
        hi = hi.max(*v);
        sum += *v as f64;
    }
    let mean = sum / n;
    let rms = (data.iter().map(|v| (*v as f64 - mean).powi(2)).sum::<f64>() / n).sqrt();
    put(19, lo.to_le_bytes());
    put(20, hi.to_le_bytes());
    put(21, (mean as f32).to_le_bytes());
    put(22, header.ispg.to_le_bytes());
    put(23, 0i32.to_le_bytes());
    put(28, 20140i32.to_le_bytes());
    put(52, *MAP_MAGIC);
    put(53, STAMP_LITTLE);
    put(54, (rms as f32).to_le_bytes());
    out.write_all(&h)?;
    let mut body = Vec::with_capacity(data.len() * 4);
    for v in data {
        body.extend_from_slice(&v.to_le_bytes());
    }
    out.write_all(&body)?;
    Ok(())
}

pub fn write_mrc(path: &Path, header: &MrcHeader, data: &[f32]) -> Result<()> {
    write_atomic(path, |w| encode_mrc(header, data, w))
}

fn cubic_header(dim: usize, nz: usize, voxel: f64, ispg: i32) -> MrcHeader {
    let v = voxel as f32;
    MrcHeader {
        nx: dim,
        ny: dim,
        nz,
        mode: 2,
        sampling: [dim, dim, nz],
        cella: [v * dim as f32, v * dim as f32, v * nz as f32],
        origin: [0.0; 3],
        ispg,
        ext_header_bytes: 0,
    }
}

fn same_size(a: f64, b: f64) -> bool {
    (a - b).abs() <= 1e-6 * a.abs().max(b.abs())
}

pub fn write_volume(path: &Path, vol: &Volume) -> Result<()> {
    let g = vol.grid;
    let data: Vec<f32> = vol.data.iter().map(|v| *v as f32).collect();
    write_mrc(path, &cubic_header(g.dim, g.dim, g.voxel_size, 1), &data)
}

/// Reads a cubic volume; the voxel size is taken from the x axis after
/// checking the others agree. The returned grid is centered.
pub fn read_volume(path: &Path) -> Result<Volume> {
    let f = read_mrc(path)?;
    let h = &f.header;
    if h.nx != h.ny || h.nx != h.nz {
        return Err(FormatError::Schema(format!("volume is not cubic: {}x{}x{}", h.nx, h.ny, h.nz)).into());
    }
    let vs = h.voxel_size();
    if !same_size(vs[0], vs[1]) || !same_size(vs[0], vs[2]) {
        return Err(FormatError::Schema(format!("anisotropic voxel size {vs:?}")).into());
    }
    let grid = GridSpec::new(h.nx, f32_to_size(vs[0]))?;
    Volume::from_data(grid, f.data.iter().map(|v| *v as f64).collect())
}

/// Cell dimensions are stored as f32; snap the recovered voxel size back to
/// the closest short decimal so a 1.5 Å grid reads as exactly 1.5.
fn f32_to_size(v: f64) -> f64 {
    let shortest: f64 = format!("{}", v as f32).parse().unwrap_or(v);
    if same_size(shortest, v) {
        shortest
    } else {
        v
    }
}

pub fn write_stack(path: &Path, images: &[Image]) -> Result<()> {
    let first = images.first().ok_or_else(|| Error::InvalidArgument("cannot write an empty stack".into()))?;
    let spec = first.spec;
    if images.iter().any(|im| im.spec.dim != spec.dim) {
        return Err(Error::Dimension("stack images differ in size".into()));
    }
    let header = cubic_header(spec.dim, images.len(), spec.pixel_size, 0);
    let data: Vec<f32> = images.iter().flat_map(|im| im.data.iter().map(|v| *v as f32)).collect();
    write_mrc(path, &header, &data)
}

pub fn read_stack(path: &Path) -> Result<(ImageSpec, Vec<Image>)> {
    let f = read_mrc(path)?;
    let h = &f.header;
    if h.nx != h.ny {
        return Err(FormatError::Schema(format!("stack images are not square: {}x{}", h.nx, h.ny)).into());
    }
    let vs = h.voxel_size();
    if !same_size(vs[0], vs[1]) {
        return Err(FormatError::Schema(format!("anisotropic pixel size {vs:?}")).into());
    }
    let spec = ImageSpec::new(h.nx, f32_to_size(vs[0]))?;
    let plane = h.nx * h.ny;
    let images = f
        .data
        .chunks_exact(plane)
        .map(|c| Image { spec, data: c.iter().map(|v| *v as f64).collect() })
        .collect();
    Ok((spec, images))
}
