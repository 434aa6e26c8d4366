//! File formats and synthetic data.

pub mod meta;
pub mod mrc;
pub mod simulate;

use std::path::Path;

use crate::ctf::CtfParams;
use crate::error::{Error, FormatError, Result};
use crate::grid::{Image, ImageSpec, Volume};
use crate::projector::Pose;

pub use meta::{read_meta, write_meta, ParticleMeta};
pub use mrc::{read_mrc, read_stack, read_volume, write_stack, write_volume, MrcFile, MrcHeader};
pub use simulate::{simulate_dataset, CtfRanges, PoseSampling, SimConfig};

pub const STACK_FILE: &str = "stack.mrc";
pub const META_FILE: &str = "meta.csv";
pub const GROUND_TRUTH_FILE: &str = "gt.mrc";

/// Particle images with their known poses and CTFs.
#[derive(Clone, Debug, PartialEq)]
pub struct Dataset {
    pub images: Vec<Image>,
    pub poses: Vec<Pose>,
    pub ctfs: Vec<CtfParams>,
    pub spec: ImageSpec,
}

impl Dataset {
    pub fn new(images: Vec<Image>, poses: Vec<Pose>, ctfs: Vec<CtfParams>, spec: ImageSpec) -> Result<Self> {
        let d = Self { images, poses, ctfs, spec };
        d.validate()?;
        Ok(d)
    }

    pub fn validate(&self) -> Result<()> {
        let n = self.images.len();
        if self.poses.len() != n || self.ctfs.len() != n {
            return Err(Error::Dimension(format!(
                "{} images, {} poses, {} CTFs",
                n,
                self.poses.len(),
                self.ctfs.len()
            )));
        }
        if let Some(bad) = self.images.iter().position(|im| im.spec.dim != self.spec.dim) {
            return Err(Error::Dimension(format!("image {bad} is {}px, dataset is {}px", self.images[bad].spec.dim, self.spec.dim)));
        }
        Ok(())
    }

    pub fn len(&self) -> usize {
        self.images.len()
    }

    pub fn is_empty(&self) -> bool {
        self.images.is_empty()
    }

    /// The particles at `indices`, in that order.
    pub fn subset(&self, indices: &[usize]) -> Dataset {
        Dataset {
            images: indices.iter().map(|i| self.images[*i].clone()).collect(),
            poses: indices.iter().map(|i| self.poses[*i]).collect(),
            ctfs: indices.iter().map(|i| self.ctfs[*i]).collect(),
            spec: self.spec,
        }
    }

    pub fn meta_rows(&self) -> Vec<ParticleMeta> {
        self.poses
            .iter()
            .zip(&self.ctfs)
            .enumerate()
            .map(|(image_index, (pose, ctf))| ParticleMeta { image_index, pose: *pose, ctf: *ctf })
            .collect()
    }
}

/// Writes `stack.mrc` and `meta.csv` (and `gt.mrc` when given) into `dir`.
pub fn write_dataset(dir: &Path, data: &Dataset, ground_truth: Option<&Volume>) -> Result<()> {
    write_stack(&dir.join(STACK_FILE), &data.images)?;
    write_meta(&dir.join(META_FILE), &data.meta_rows())?;
    if let Some(gt) = ground_truth {
        write_volume(&dir.join(GROUND_TRUTH_FILE), gt)?;
    }
    Ok(())
}

/// Pairs a particle stack with its metadata table. Rows may come in any
/// order but must index every section of the stack exactly once.
pub fn load_dataset(stack: &Path, meta: &Path) -> Result<Dataset> {
    let (spec, images) = read_stack(stack)?;
    let rows = read_meta(meta)?;
    if rows.len() != images.len() {
        return Err(FormatError::Schema(format!(
            "metadata has {} rows but the stack holds {} images",
            rows.len(),
            images.len()
        ))
        .into());
    }
    let mut slots: Vec<Option<&ParticleMeta>> = vec![None; images.len()];
    for row in &rows {
        match slots.get_mut(row.image_index) {
            Some(slot @ None) => *slot = Some(row),
            Some(Some(_)) => {
                return Err(FormatError::Schema(format!("image_index {} appears twice", row.image_index)).into())
            }
            None => {
                return Err(FormatError::Schema(format!(
                    "image_index {} is outside the stack (0..{})",
                    row.image_index,
                    images.len()
                ))
                .into())
            }
        }
    }
    let poses = slots.iter().map(|r| r.unwrap().pose).collect();
    let ctfs = slots.iter().map(|r| r.unwrap().ctf).collect();
    Dataset::new(images, poses, ctfs, spec)
}
