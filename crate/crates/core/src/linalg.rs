//! Dense linear algebra helpers.

use faer::Mat;
use nalgebra::DMatrix;
use num_complex::Complex64;

/// Eigenvalues of a general real square matrix.
///
/// Members of a tight cluster (a defective eigenvalue splits into a ring of
/// radius about `sqrt(eps * |A|)` under rounding) are replaced by the cluster
/// mean, which is the well-conditioned quantity.
pub fn eigenvalues(m: &DMatrix<f64>) -> Vec<Complex64> {
    let raw = raw_eigenvalues(m);
    let scale = m.amax().max(1.0);
    polish_clusters(raw, 1e-6 * scale)
}

// nalgebra's real Schur driver stalls on some exactly structured Jacobians,
// so the general eigenproblem goes through faer.
fn raw_eigenvalues(m: &DMatrix<f64>) -> Vec<Complex64> {
    let n = m.nrows();
    if n == 0 {
        return Vec::new();
    }
    let a = Mat::<f64>::from_fn(n, m.ncols(), |i, j| m[(i, j)]);
    a.eigenvalues()
        .expect("eigenvalue iteration failed to converge")
        .into_iter()
        .map(|z| Complex64::new(z.re, z.im))
        .collect()
}

fn polish_clusters(values: Vec<Complex64>, radius: f64) -> Vec<Complex64> {
    let n = values.len();
    let mut cluster = vec![usize::MAX; n];
    let mut next = 0;
    for i in 0..n {
        if cluster[i] != usize::MAX {
            continue;
        }
        cluster[i] = next;
        // Single-linkage grouping.
        let mut stack = vec![i];
        while let Some(a) = stack.pop() {
            for b in 0..n {
                if cluster[b] == usize::MAX && (values[a] - values[b]).norm() < radius {
                    cluster[b] = next;
                    stack.push(b);
                }
            }
        }
        next += 1;
    }
    let mut out = values.clone();
    for c in 0..next {
        let members: Vec<usize> = (0..n).filter(|&k| cluster[k] == c).collect();
        if members.len() < 2 {
            continue;
        }
        let mean = members.iter().map(|&k| values[k]).sum::<Complex64>() / members.len() as f64;
        for &k in &members {
            // Keep conjugate pairs apart when the cluster straddles the axis
            // only if the mean is genuinely complex.
            out[k] = if mean.im.abs() < radius {
                Complex64::new(mean.re, 0.0)
            } else {
                mean
            };
        }
    }
    out
}

/// Maximum real part of the eigenvalues.
pub fn max_real_part(values: &[Complex64]) -> f64 {
    values.iter().map(|z| z.re).fold(f64::NEG_INFINITY, f64::max)
}

/// Eigenvalues of a symmetric matrix (symmetrized first), ascending.
pub fn symmetric_eigenvalues(m: &DMatrix<f64>) -> Vec<f64> {
    let sym = (m + m.transpose()) * 0.5;
    let mut v: Vec<f64> = sym.symmetric_eigenvalues().iter().copied().collect();
    v.sort_by(f64::total_cmp);
    v
}

/// Gershgorin centers and radii of the leading `rows x cols` block.
pub fn gershgorin(m: &DMatrix<f64>, rows: usize, cols: usize) -> (Vec<f64>, Vec<f64>) {
    (0..rows)
        .map(|i| {
            let radius: f64 = (0..cols).filter(|&j| j != i).map(|j| m[(i, j)].abs()).sum();
            (m[(i, i)], radius)
        })
        .unzip()
}

pub fn flatten(blocks: &[Vec<f64>]) -> Vec<f64> {
    blocks.iter().flatten().copied().collect()
}

pub fn unflatten(flat: &[f64], counts: &[usize]) -> Vec<Vec<f64>> {
    let mut out = Vec::with_capacity(counts.len());
    let mut offset = 0;
    for &k in counts {
        out.push(flat[offset..offset + k].to_vec());
        offset += k;
    }
    out
}

pub fn sup_norm(v: &[f64]) -> f64 {
    v.iter().fold(0.0_f64, |m, x| m.max(x.abs()))
}

pub fn sup_distance(a: &[Vec<f64>], b: &[Vec<f64>]) -> f64 {
    a.iter()
        .flatten()
        .zip(b.iter().flatten())
        .fold(0.0_f64, |m, (x, y)| m.max((x - y).abs()))
}

pub fn squared_distance(a: &[Vec<f64>], b: &[Vec<f64>]) -> f64 {
    a.iter()
        .flatten()
        .zip(b.iter().flatten())
        .map(|(x, y)| (x - y) * (x - y))
        .sum()
}
