//! Per-particle pose and CTF table (CSV).
//!
//! ```text
//! # splatem-meta v1
//! image_index,r11,r12,r13,r21,r22,r23,r31,r32,r33,tx,ty,defocus_u,defocus_v,astig_angle,voltage,cs,amplitude_contrast,phase_shift,b_factor
//! ```
//!
//! Rotations are row-major and map the particle frame into the camera
//! frame's parent (see [`Pose`]); translations are in Å; CTF columns use the
//! units of [`CtfParams`]. Instead of `r11..r33` a file may declare
//! `euler_convention` (only `zyz`) and `euler1, euler2, euler3` in radians,
//! meaning `Rz(euler1) * Ry(euler2) * Rz(euler3)`. Floats carry 9
//! significant digits. Lines starting with `#` are comments.

use std::collections::HashMap;
use std::io::Write;
use std::path::Path;

use nalgebra::Matrix3;

use crate::atomic::{read_all, write_atomic};
use crate::ctf::CtfParams;
use crate::error::{FormatError, Result};
use crate::projector::Pose;

pub const META_HEADER_COMMENT: &str = "# splatem-meta v1";

/// Orthonormality tolerance applied when reading rotations.
pub const ROTATION_TOLERANCE: f64 = 1e-6;

const ROTATION_COLUMNS: [&str; 9] = ["r11", "r12", "r13", "r21", "r22", "r23", "r31", "r32", "r33"];
const EULER_COLUMNS: [&str; 3] = ["euler1", "euler2", "euler3"];
const TAIL_COLUMNS: [&str; 10] = [
    "tx",
    "ty",
    "defocus_u",
    "defocus_v",
    "astig_angle",
    "voltage",
    "cs",
    "amplitude_contrast",
    "phase_shift",
    "b_factor",
];

#[derive(Clone, Debug, PartialEq)]
pub struct ParticleMeta {
    pub image_index: usize,
    pub pose: Pose,
    pub ctf: CtfParams,
}

fn rot_z(a: f64) -> Matrix3<f64> {
    let (s, c) = a.sin_cos();
    Matrix3::new(c, -s, 0.0, s, c, 0.0, 0.0, 0.0, 1.0)
}

fn rot_y(a: f64) -> Matrix3<f64> {
    let (s, c) = a.sin_cos();
    Matrix3::new(c, 0.0, s, 0.0, 1.0, 0.0, -s, 0.0, c)
}

pub fn euler_zyz_to_matrix(angles: [f64; 3]) -> Matrix3<f64> {
    rot_z(angles[0]) * rot_y(angles[1]) * rot_z(angles[2])
}

/// Inverse of [`euler_zyz_to_matrix`] with the middle angle in `[0, pi]`.
/// At gimbal lock (middle angle 0 or pi) the third angle is set to 0.
pub fn matrix_to_euler_zyz(r: &Matrix3<f64>) -> [f64; 3] {
    let beta = r[(2, 2)].clamp(-1.0, 1.0).acos();
    let sb = beta.sin();
    if sb > 1e-12 {
        let alpha = r[(1, 2)].atan2(r[(0, 2)]);
        let gamma = r[(2, 1)].atan2(-r[(2, 0)]);
        [alpha, beta, gamma]
    } else if r[(2, 2)] > 0.0 {
        [r[(1, 0)].atan2(r[(0, 0)]), 0.0, 0.0]
    } else {
        [(-r[(1, 0)]).atan2(-r[(0, 0)]), std::f64::consts::PI, 0.0]
    }
}

fn orthonormality_deviation(r: &Matrix3<f64>) -> f64 {
    let dev = (r.transpose() * r - Matrix3::identity()).abs().max();
    dev.max((r.determinant() - 1.0).abs())
}

/// Nearest proper rotation (polar factor).
fn reorthonormalize(r: &Matrix3<f64>) -> Matrix3<f64> {
    let svd = r.svd(true, true);
    let (u, vt) = (svd.u.unwrap(), svd.v_t.unwrap());
    let mut q = u * vt;
    if q.determinant() < 0.0 {
        let mut u = u;
        u.column_mut(2).neg_mut();
        q = u * vt;
    }
    q
}

fn fmt(v: f64) -> String {
    format!("{v:.8e}")
}

pub fn format_meta(rows: &[ParticleMeta], w: &mut dyn Write) -> Result<()> {
    writeln!(w, "{META_HEADER_COMMENT}")?;
    let mut header = vec!["image_index"];
    header.extend(ROTATION_COLUMNS);
    header.extend(TAIL_COLUMNS);
    writeln!(w, "{}", header.join(","))?;
    for row in rows {
        let r = &row.pose.rotation;
        let c = &row.ctf;
        let mut fields = vec![row.image_index.to_string()];
        for i in 0..3 {
            for j in 0..3 {
                fields.push(fmt(r[(i, j)]));
            }
        }
        for v in [
            row.pose.translation[0],
            row.pose.translation[1],
            c.defocus_u,
            c.defocus_v,
            c.astig_angle,
            c.voltage,
            c.cs,
            c.amplitude_contrast,
            c.phase_shift,
            c.b_factor,
        ] {
            fields.push(fmt(v));
        }
        writeln!(w, "{}", fields.join(","))?;
    }
    Ok(())
}

pub fn write_meta(path: &Path, rows: &[ParticleMeta]) -> Result<()> {
    write_atomic(path, |w| format_meta(rows, w))
}

pub fn read_meta(path: &Path) -> Result<Vec<ParticleMeta>> {
    let bytes = read_all(path)?;
    let text = String::from_utf8(bytes)
        .map_err(|e| FormatError::Parse { line: 0, message: format!("not UTF-8: {e}") })?;
    parse_meta(&text)
}

pub fn parse_meta(text: &str) -> Result<Vec<ParticleMeta>> {
    let mut lines = text
        .lines()
        .enumerate()
        .map(|(i, l)| (i + 1, l.trim()))
        .filter(|(_, l)| !l.is_empty() && !l.starts_with('#'));
    let (_, header_line) = lines.next().ok_or_else(|| FormatError::Schema("missing header line".into()))?;
    let columns: HashMap<&str, usize> = header_line.split(',').map(str::trim).enumerate().map(|(i, c)| (c, i)).collect();
    let find = |name: &str| -> Result<usize> {
        columns.get(name).copied().ok_or_else(|| FormatError::Schema(format!("missing column {name:?}")).into())
    };
    let index_col = find("image_index")?;
    let tail: Vec<usize> = TAIL_COLUMNS.iter().map(|c| find(c)).collect::<Result<_>>()?;
    enum RotationSource {
        Matrix(Vec<usize>),
        Euler(usize, Vec<usize>),
    }
    let rotation = if ROTATION_COLUMNS.iter().all(|c| columns.contains_key(c)) {
        RotationSource::Matrix(ROTATION_COLUMNS.iter().map(|c| columns[c]).collect())
    } else if columns.contains_key("euler_convention") {
        RotationSource::Euler(columns["euler_convention"], EULER_COLUMNS.iter().map(|c| find(c)).collect::<Result<_>>()?)
    } else {
        let missing = ROTATION_COLUMNS.iter().find(|c| !columns.contains_key(*c)).unwrap();
        return Err(FormatError::Schema(format!("missing column {missing:?} (and no euler_convention column)")).into());
    };

    let mut rows = Vec::new();
    for (line, raw) in lines {
        let fields: Vec<&str> = raw.split(',').map(str::trim).collect();
        if fields.len() != columns.len() {
            return Err(FormatError::Parse {
                line,
                message: format!("expected {} fields, found {}", columns.len(), fields.len()),
            }
            .into());
        }
        let num = |col: usize| -> Result<f64> {
            fields[col].parse::<f64>().map_err(|e| {
                FormatError::Parse { line, message: format!("field {:?}: {e}", fields[col]) }.into()
            })
        };
        let image_index = fields[index_col]
            .parse::<usize>()
            .map_err(|e| FormatError::Parse { line, message: format!("image_index {:?}: {e}", fields[index_col]) })?;
        let r = match &rotation {
            RotationSource::Matrix(cols) => {
                let v: Vec<f64> = cols.iter().map(|c| num(*c)).collect::<Result<_>>()?;
                Matrix3::from_row_slice(&v)
            }
            RotationSource::Euler(conv, cols) => {
                if !fields[*conv].eq_ignore_ascii_case("zyz") {
                    return Err(FormatError::Parse {
                        line,
                        message: format!("unsupported Euler convention {:?} (only zyz)", fields[*conv]),
                    }
                    .into());
                }
                euler_zyz_to_matrix([num(cols[0])?, num(cols[1])?, num(cols[2])?])
            }
        };
        let deviation = orthonormality_deviation(&r);
        if !(deviation <= ROTATION_TOLERANCE) {
            return Err(FormatError::NonOrthonormal { row: rows.len(), deviation }.into());
        }
        let t: Vec<f64> = tail.iter().map(|c| num(*c)).collect::<Result<_>>()?;
        let ctf = CtfParams {
            defocus_u: t[2],
            defocus_v: t[3],
            astig_angle: t[4],
            voltage: t[5],
            cs: t[6],
            amplitude_contrast: t[7],
            phase_shift: t[8],
            b_factor: t[9],
        };
        ctf.validate().map_err(|e| FormatError::Parse { line, message: e.to_string() })?;
        let pose = Pose::new(reorthonormalize(&r), [t[0], t[1]])
            .map_err(|e| FormatError::Parse { line, message: e.to_string() })?;
        rows.push(ParticleMeta { image_index, pose, ctf });
    }
    Ok(rows)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::error::Error;
    use crate::gauss_model::uniform_quaternion;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn random_rows(n: usize, seed: u64) -> Vec<ParticleMeta> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        (0..n)
            .map(|i| ParticleMeta {
                image_index: i,
                pose: Pose::from_quat(uniform_quaternion(&mut rng), [rng.random_range(-3.0..3.0), rng.random_range(-3.0..3.0)])
                    .unwrap(),
                ctf: CtfParams {
                    defocus_u: rng.random_range(10000.0..25000.0),
                    defocus_v: rng.random_range(10000.0..25000.0),
                    astig_angle: rng.random_range(0.0..std::f64::consts::PI),
                    phase_shift: rng.random_range(0.0..0.5),
                    b_factor: rng.random_range(0.0..50.0),
                    ..CtfParams::default()
                },
            })
            .collect()
    }

    fn to_text(rows: &[ParticleMeta]) -> String {
        let mut out = Vec::new();
        format_meta(rows, &mut out).unwrap();
        String::from_utf8(out).unwrap()
    }

    fn params(r: &ParticleMeta) -> Vec<f64> {
        let c = &r.ctf;
        let mut v: Vec<f64> = r.pose.rotation.transpose().iter().cloned().collect();
        v.extend([
            r.pose.translation[0],
            r.pose.translation[1],
            c.defocus_u,
            c.defocus_v,
            c.astig_angle,
            c.voltage,
            c.cs,
            c.amplitude_contrast,
            c.phase_shift,
            c.b_factor,
        ]);
        v
    }

    #[test]
    fn round_trip_drift_is_below_print_precision() {
        let rows = random_rows(100, 1);
        let back = parse_meta(&to_text(&rows)).unwrap();
        assert_eq!(back.len(), 100);
        for (a, b) in rows.iter().zip(&back) {
            assert_eq!(a.image_index, b.image_index);
            for (x, y) in params(a).iter().zip(params(b)) {
                // Nine significant digits: relative drift, with an absolute
                // floor for entries near zero.
                assert!((x - y).abs() <= 1e-8 * x.abs().max(1.0), "{x} vs {y}");
            }
            assert!(orthonormality_deviation(&b.pose.rotation) < 1e-12);
        }
    }

    #[test]
    fn missing_column_is_a_schema_error() {
        let text = to_text(&random_rows(2, 2)).replace(",tx,", ",tz,");
        match parse_meta(&text) {
            Err(Error::Format(FormatError::Schema(msg))) => assert!(msg.contains("tx")),
            other => panic!("{other:?}"),
        }
    }

    #[test]
    fn non_orthonormal_rotation_is_rejected() {
        let text = to_text(&random_rows(3, 3));
        let mut lines: Vec<String> = text.lines().map(String::from).collect();
        let mut fields: Vec<String> = lines[3].split(',').map(String::from).collect();
        fields[1] = "1.5".into();
        lines[3] = fields.join(",");
        assert!(matches!(
            parse_meta(&lines.join("\n")),
            Err(Error::Format(FormatError::NonOrthonormal { row: 1, .. }))
        ));
    }

    #[test]
    fn euler_zyz_round_trip() {
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        for _ in 0..200 {
            let angles = [
                rng.random_range(-3.1..3.1),
                rng.random_range(0.01..3.13),
                rng.random_range(-3.1..3.1),
            ];
            let r = euler_zyz_to_matrix(angles);
            // Oracle: compose elementary rotations by explicit axis-angle products.
            let axis = |axis: usize, a: f64| {
                let mut m = Matrix3::identity();
                let (s, c) = a.sin_cos();
                let (i, j) = match axis {
                    1 => (2, 0),
                    _ => (0, 1),
                };
                m[(i, i)] = c;
                m[(j, j)] = c;
                m[(i, j)] = -s;
                m[(j, i)] = s;
                m
            };
            let oracle = axis(2, angles[0]) * axis(1, angles[1]) * axis(2, angles[2]);
            assert!((r - oracle).abs().max() < 1e-12);
            let back = euler_zyz_to_matrix(matrix_to_euler_zyz(&r));
            assert!((back - r).abs().max() < 1e-9);
        }
        let lock = euler_zyz_to_matrix([0.3, 0.0, 0.4]);
        assert!((euler_zyz_to_matrix(matrix_to_euler_zyz(&lock)) - lock).abs().max() < 1e-9);
    }

    #[test]
    fn euler_columns_are_accepted() {
        let angles = [0.4, 1.1, -2.0];
        let text = format!(
            "{META_HEADER_COMMENT}\nimage_index,euler_convention,euler1,euler2,euler3,tx,ty,defocus_u,defocus_v,astig_angle,voltage,cs,amplitude_contrast,phase_shift,b_factor\n0,zyz,{},{},{},1,2,15000,14000,0.5,300,2.7,0.1,0,0\n",
            angles[0], angles[1], angles[2]
        );
        let rows = parse_meta(&text).unwrap();
        assert!((rows[0].pose.rotation - euler_zyz_to_matrix(angles)).abs().max() < 1e-12);
        assert_eq!(rows[0].pose.translation, [1.0, 2.0]);
        let bad = text.replace(",zyz,", ",xyz,");
        assert!(matches!(parse_meta(&bad), Err(Error::Format(FormatError::Parse { line: 3, .. }))));
    }
}
