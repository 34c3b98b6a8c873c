//! Synthetic data generators and plain-text / binary loaders.

use std::fs::File;
use std::io::{BufRead, BufReader, Read};
use std::path::Path;

use nalgebra::{DMatrix, Matrix3xX};
use rand::Rng;
use rand_distr::{Distribution, StandardNormal};

use crate::error::{Error, Result};
use crate::opq::random_rotation;
use crate::seeded_rng;

/// Gaussian blobs with known centers.
#[derive(Debug, Clone)]
pub struct ClusterData {
    /// `d x n`.
    pub points: DMatrix<f64>,
    /// `d x k_true`.
    pub centers: DMatrix<f64>,
    pub labels: Vec<usize>,
    pub sizes: Vec<usize>,
}

/// Blob sizes proportional to `balance^j`, at least one point each.
fn blob_sizes(n: usize, k: usize, balance: f64) -> Vec<usize> {
    let weights: Vec<f64> = (0..k).map(|j| balance.powi(j as i32)).collect();
    let total: f64 = weights.iter().sum();
    let spare = (n - k) as f64;
    let mut sizes: Vec<usize> = weights
        .iter()
        .map(|w| 1 + (spare * w / total).floor() as usize)
        .collect();
    let mut rem: Vec<(f64, usize)> = weights
        .iter()
        .enumerate()
        .map(|(j, w)| {
            let exact = spare * w / total;
            (exact - exact.floor(), j)
        })
        .collect();
    rem.sort_by(|a, b| b.0.total_cmp(&a.0).then(a.1.cmp(&b.1)));
    let mut missing = n - sizes.iter().sum::<usize>();
    for &(_, j) in rem.iter().cycle() {
        if missing == 0 {
            break;
        }
        sizes[j] += 1;
        missing -= 1;
    }
    sizes
}

/// `k_true` unit-variance Gaussian blobs in `d` dimensions.
///
/// Centers are at least `separation` apart. Blob `j` holds a share of the
/// points proportional to `balance^j`: `balance = 1` gives equal blobs, smaller
/// values give a few dominant blobs and many small ones.
pub fn gen_clusters(
    n: usize,
    d: usize,
    k_true: usize,
    separation: f64,
    balance: f64,
    seed: u64,
) -> Result<ClusterData> {
    if k_true < 1 || n < k_true || d < 1 {
        return Err(Error::InvalidParameter(format!(
            "need n >= k_true >= 1 and d >= 1 (n={n}, k_true={k_true}, d={d})"
        )));
    }
    if !(balance > 0.0 && balance <= 1.0) || separation.is_nan() || separation < 0.0 {
        return Err(Error::InvalidParameter(
            "balance must lie in (0, 1] and separation be >= 0".into(),
        ));
    }
    let mut rng = seeded_rng(seed);
    let side = separation * (k_true as f64).powf(1.0 / d as f64) * 1.5 + 1.0;
    let mut centers = DMatrix::<f64>::zeros(d, k_true);
    let mut placed = 0;
    let mut attempts = 0usize;
    while placed < k_true {
        let c: Vec<f64> = (0..d).map(|_| rng.random_range(0.0..side)).collect();
        let far = (0..placed).all(|j| {
            let dist2: f64 = centers
                .column(j)
                .iter()
                .zip(&c)
                .map(|(a, b)| (a - b) * (a - b))
                .sum();
            dist2 >= separation * separation
        });
        attempts += 1;
        // relax if the box is too crowded to satisfy the spacing
        if far || attempts > 10_000 {
            centers.column_mut(placed).copy_from_slice(&c);
            placed += 1;
            attempts = 0;
        }
    }
    let sizes = blob_sizes(n, k_true, balance);
    let mut points = DMatrix::zeros(d, n);
    let mut labels = Vec::with_capacity(n);
    let mut col = 0;
    for (j, &size) in sizes.iter().enumerate() {
        for _ in 0..size {
            for r in 0..d {
                let z: f64 = StandardNormal.sample(&mut rng);
                points[(r, col)] = centers[(r, j)] + z;
            }
            labels.push(j);
            col += 1;
        }
    }
    Ok(ClusterData {
        points,
        centers,
        labels,
        sizes,
    })
}

/// Zero-mean Gaussian data with a decaying spectrum `decay^j` in a random
/// orthonormal basis, `d x n`.
pub fn correlated_gaussians(n: usize, d: usize, decay: f64, seed: u64) -> DMatrix<f64> {
    let mut rng = seeded_rng(seed);
    let basis = random_rotation(d, &mut rng);
    let scales: Vec<f64> = (0..d).map(|j| decay.powf(j as f64 / 2.0)).collect();
    let z = DMatrix::from_fn(d, n, |r, _| {
        let g: f64 = StandardNormal.sample(&mut rng);
        g * scales[r]
    });
    basis * z
}

/// Points sampled on a bumpy, asymmetric height field, `3 x n`, unnormalized.
pub fn curved_surface_cloud(n: usize, seed: u64) -> Matrix3xX<f64> {
    let mut rng = seeded_rng(seed);
    let mut m = Matrix3xX::zeros(n);
    for mut c in m.column_iter_mut() {
        let u: f64 = rng.random_range(-1.0..1.0);
        let v: f64 = rng.random_range(-1.0..1.0);
        let h = 0.5 * (-4.0 * ((u - 0.45).powi(2) + (v + 0.2).powi(2))).exp()
            + 0.4 * (5.0 * u).sin() * (4.0 * v).cos()
            + 0.25 * u * u
            - 0.3 * (-8.0 * ((u + 0.5).powi(2) + (v - 0.35).powi(2))).exp();
        c[0] = u;
        c[1] = v;
        c[2] = h;
    }
    m
}

fn parse_floats(line: &str, line_no: usize, split: impl Fn(&str) -> Vec<&str>) -> Result<Vec<f64>> {
    split(line)
        .into_iter()
        .map(|tok| {
            tok.trim().parse::<f64>().map_err(|e| Error::Parse {
                line: line_no,
                message: format!("{tok:?}: {e}"),
            })
        })
        .collect()
}

fn is_blank_or_comment(line: &str) -> bool {
    let t = line.trim();
    t.is_empty() || t.starts_with('#')
}

/// Rows of comma-separated floats; one point per row. Returns `d x n`.
pub fn read_points_csv<R: BufRead>(reader: R) -> Result<DMatrix<f64>> {
    let mut rows: Vec<Vec<f64>> = Vec::new();
    for (i, line) in reader.lines().enumerate() {
        let line = line?;
        if is_blank_or_comment(&line) {
            continue;
        }
        let row = parse_floats(&line, i + 1, |l| l.split(',').collect())?;
        if let Some(first) = rows.first() {
            if first.len() != row.len() {
                return Err(Error::Parse {
                    line: i + 1,
                    message: format!("expected {} columns, found {}", first.len(), row.len()),
                });
            }
        }
        rows.push(row);
    }
    let d = rows.first().map_or(0, Vec::len);
    Ok(DMatrix::from_fn(d, rows.len(), |r, c| rows[c][r]))
}

pub fn load_points_csv(path: impl AsRef<Path>) -> Result<DMatrix<f64>> {
    read_points_csv(BufReader::new(File::open(path)?))
}

/// Whitespace-separated `x y z` per line; extra columns (normals, colors)
/// are ignored.
pub fn read_xyz<R: BufRead>(reader: R) -> Result<Matrix3xX<f64>> {
    let mut pts: Vec<[f64; 3]> = Vec::new();
    for (i, line) in reader.lines().enumerate() {
        let line = line?;
        if is_blank_or_comment(&line) {
            continue;
        }
        let vals = parse_floats(&line, i + 1, |l| l.split_whitespace().take(3).collect())?;
        if vals.len() < 3 {
            return Err(Error::Parse {
                line: i + 1,
                message: "expected three coordinates".into(),
            });
        }
        pts.push([vals[0], vals[1], vals[2]]);
    }
    Ok(Matrix3xX::from_fn(pts.len(), |r, c| pts[c][r]))
}

pub fn load_xyz(path: impl AsRef<Path>) -> Result<Matrix3xX<f64>> {
    read_xyz(BufReader::new(File::open(path)?))
}

/// `.fvecs`: per vector a little-endian `i32` dimension followed by that many
/// little-endian `f32`. Reads at most `limit` vectors. Returns `d x n`.
pub fn read_fvecs<R: Read>(mut reader: R, limit: Option<usize>) -> Result<DMatrix<f64>> {
    let mut data = Vec::new();
    let mut dim: Option<usize> = None;
    let mut count = 0usize;
    let mut header = [0u8; 4];
    while limit.is_none_or(|l| count < l) {
        match reader.read_exact(&mut header) {
            Ok(()) => {}
            Err(e) if e.kind() == std::io::ErrorKind::UnexpectedEof => break,
            Err(e) => return Err(e.into()),
        }
        let d = i32::from_le_bytes(header);
        if d <= 0 {
            return Err(Error::Parse {
                line: count + 1,
                message: format!("invalid vector dimension {d}"),
            });
        }
        let d = d as usize;
        if let Some(expected) = dim {
            if expected != d {
                return Err(Error::Parse {
                    line: count + 1,
                    message: format!("dimension {d} differs from {expected}"),
                });
            }
        }
        dim = Some(d);
        let mut buf = vec![0u8; 4 * d];
        reader.read_exact(&mut buf)?;
        data.extend(
            buf.chunks_exact(4)
                .map(|b| f32::from_le_bytes([b[0], b[1], b[2], b[3]]) as f64),
        );
        count += 1;
    }
    Ok(DMatrix::from_vec(dim.unwrap_or(0), count, data))
}

pub fn load_fvecs(path: impl AsRef<Path>, limit: Option<usize>) -> Result<DMatrix<f64>> {
    read_fvecs(BufReader::new(File::open(path)?), limit)
}

/// First column of a CSV file as a signal. A non-numeric first row is taken
/// as a header.
pub fn read_signal_csv<R: BufRead>(reader: R) -> Result<Vec<f64>> {
    let mut out = Vec::new();
    for (i, line) in reader.lines().enumerate() {
        let line = line?;
        if is_blank_or_comment(&line) {
            continue;
        }
        let first = line.split(',').next().unwrap_or("").trim();
        match first.parse::<f64>() {
            Ok(v) => out.push(v),
            Err(_) if i == 0 => continue,
            Err(e) => {
                return Err(Error::Parse {
                    line: i + 1,
                    message: format!("{first:?}: {e}"),
                })
            }
        }
    }
    Ok(out)
}
