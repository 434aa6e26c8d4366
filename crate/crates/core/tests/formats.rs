//! File-format compatibility with MRC files produced by an independent writer
//! (Python `mrcfile`), and the model format's tolerance of trailing state.

use std::path::PathBuf;

use splatem::dataio::{read_mrc, read_stack, read_volume, write_volume};
use splatem::phantom::ribo_toy;
use splatem::trainer::{save_checkpoint, Ablation, TrainState};
use splatem::GaussianSet;

fn data(name: &str) -> PathBuf {
    PathBuf::from(env!("CARGO_MANIFEST_DIR")).join("tests/data").join(name)
}

#[test]
fn reads_volume_written_by_mrcfile() {
    let v = read_volume(&data("golden_volume.mrc")).unwrap();
    assert_eq!(v.grid.dim, 4);
    assert!((v.grid.voxel_size - 2.5).abs() < 1e-12);
    for (k, x) in v.data.iter().enumerate() {
        assert_eq!(*x, k as f64 * 0.25 - 3.0, "voxel {k}");
    }
}

#[test]
fn reads_stack_written_by_mrcfile() {
    let (spec, images) = read_stack(&data("golden_stack.mrc")).unwrap();
    assert_eq!(spec.dim, 4);
    assert!((spec.pixel_size - 1.5).abs() < 1e-12);
    assert_eq!(images.len(), 3);
    for (i, img) in images.iter().enumerate() {
        for (k, x) in img.data.iter().enumerate() {
            assert_eq!(*x, (i * 16 + k) as f64 - 10.0);
        }
    }
}

#[test]
fn rewritten_volume_keeps_header_geometry() {
    let golden = read_mrc(&data("golden_volume.mrc")).unwrap();
    let dir = tempfile::tempdir().unwrap();
    let out = dir.path().join("again.mrc");
    write_volume(&out, &read_volume(&data("golden_volume.mrc")).unwrap()).unwrap();
    let again = read_mrc(&out).unwrap();
    assert_eq!((again.header.nx, again.header.ny, again.header.nz), (golden.header.nx, golden.header.ny, golden.header.nz));
    assert_eq!(again.header.mode, 2);
    assert_eq!(again.header.cella, golden.header.cella);
    assert_eq!(again.data, golden.data);
}

#[test]
fn checkpoint_loads_as_a_model() {
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("state.ckpt");
    let state = TrainState::new(ribo_toy(), Ablation::Full);
    save_checkpoint(&state, &path).unwrap();
    assert_eq!(GaussianSet::load(&path).unwrap(), ribo_toy());
}
