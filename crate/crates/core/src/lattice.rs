//! Learned lattice vector quantizer.
//!
//! The codebook is the lattice `{ B u : u in Z^n }` with `B = U diag(sigma) V^T`.
//! A latent vector is mapped into lattice coordinates with `B^-1 (y - mu)`,
//! rounded elementwise (Babai rounding), and mapped back with `B u + mu`.
//! Coordinates are handled in double precision so the forward and inverse
//! maps agree to well under the rounding granularity.

use nalgebra::DMatrix;

use crate::error::{Error, Result};

/// Latent channels quantized jointly as one lattice vector.
pub const LATTICE_DIM: usize = 4;
pub const ORTHOGONALITY_TOL: f64 = 1e-4;
pub const MAX_CONDITION: f64 = 100.0;
const BRUTE_FORCE_MAX_DIM: usize = 4;
const BRUTE_FORCE_MAX_RADIUS: i64 = 6;

#[derive(Clone, Debug, PartialEq)]
pub struct LatticeBasis {
    n: usize,
    u_mat: Vec<f64>,
    v_mat: Vec<f64>,
    sigma: Vec<f64>,
    b_mat: Vec<f64>,
    b_inv: Vec<f64>,
}

fn mat_mul(a: &[f64], b: &[f64], n: usize) -> Vec<f64> {
    let mut out = vec![0.0; n * n];
    for i in 0..n {
        for j in 0..n {
            let mut acc = 0.0;
            for k in 0..n {
                acc += a[i * n + k] * b[k * n + j];
            }
            out[i * n + j] = acc;
        }
    }
    out
}

fn transpose(a: &[f64], n: usize) -> Vec<f64> {
    let mut out = vec![0.0; n * n];
    for i in 0..n {
        for j in 0..n {
            out[j * n + i] = a[i * n + j];
        }
    }
    out
}

fn orthogonality_error(m: &[f64], n: usize) -> f64 {
    let gram = mat_mul(&transpose(m, n), m, n);
    let mut worst = 0.0f64;
    for i in 0..n {
        for j in 0..n {
            let target = if i == j { 1.0 } else { 0.0 };
            worst = worst.max((gram[i * n + j] - target).abs());
        }
    }
    worst
}

impl LatticeBasis {
    /// Builds `B = U diag(sigma) V^T` from row-major `n x n` factors.
    ///
    /// Rejects non-orthogonal factors (max-abs deviation of `M^T M` from `I`
    /// above 1e-4), non-positive singular values and condition numbers above
    /// 100.
    pub fn from_svd(u_mat: &[f64], sigma: &[f64], v_mat: &[f64]) -> Result<Self> {
        let n = sigma.len();
        if n == 0 || u_mat.len() != n * n || v_mat.len() != n * n {
            return Err(Error::invalid(format!(
                "lattice factors must be {n}x{n} with {n} singular values"
            )));
        }
        if let Some(s) = sigma.iter().find(|s| !(**s > 0.0) || !s.is_finite()) {
            return Err(Error::invalid(format!("singular value {s} is not positive")));
        }
        let (lo, hi) = sigma
            .iter()
            .fold((f64::INFINITY, 0.0f64), |(lo, hi), &s| (lo.min(s), hi.max(s)));
        if hi / lo > MAX_CONDITION {
            return Err(Error::invalid(format!(
                "condition number {:.3} exceeds {MAX_CONDITION}",
                hi / lo
            )));
        }
        for (label, m) in [("U", u_mat), ("V", v_mat)] {
            let err = orthogonality_error(m, n);
            if !(err < ORTHOGONALITY_TOL) {
                return Err(Error::invalid(format!("{label} deviates from orthogonal by {err:.2e}")));
            }
        }
        let scaled_u: Vec<f64> = (0..n * n).map(|k| u_mat[k] * sigma[k % n]).collect();
        let b_mat = mat_mul(&scaled_u, &transpose(v_mat, n), n);
        let ut = transpose(u_mat, n);
        let v_scaled: Vec<f64> = (0..n * n).map(|k| v_mat[k] / sigma[k % n]).collect();
        let b_inv = mat_mul(&v_scaled, &ut, n);
        Ok(Self {
            n,
            u_mat: u_mat.to_vec(),
            v_mat: v_mat.to_vec(),
            sigma: sigma.to_vec(),
            b_mat,
            b_inv,
        })
    }

    /// Factorizes an arbitrary row-major basis matrix and builds the lattice from its SVD.
    pub fn from_matrix(b: &[f64], n: usize) -> Result<Self> {
        if b.len() != n * n {
            return Err(Error::invalid("basis matrix must be n x n"));
        }
        let m = DMatrix::from_row_slice(n, n, b);
        let svd = m.svd(true, true);
        let u = svd.u.ok_or_else(|| Error::invalid("svd failed"))?;
        let vt = svd.v_t.ok_or_else(|| Error::invalid("svd failed"))?;
        let mut u_rows = vec![0.0; n * n];
        let mut v_rows = vec![0.0; n * n];
        for i in 0..n {
            for j in 0..n {
                u_rows[i * n + j] = u[(i, j)];
                v_rows[i * n + j] = vt[(j, i)];
            }
        }
        Self::from_svd(&u_rows, svd.singular_values.as_slice(), &v_rows)
    }

    pub fn identity(n: usize) -> Self {
        let eye: Vec<f64> = (0..n * n).map(|k| if k / n == k % n { 1.0 } else { 0.0 }).collect();
        Self::from_svd(&eye, &vec![1.0; n], &eye).expect("identity basis is valid")
    }

    pub fn dim(&self) -> usize {
        self.n
    }

    pub fn matrix(&self) -> &[f64] {
        &self.b_mat
    }

    pub fn inverse(&self) -> &[f64] {
        &self.b_inv
    }

    pub fn singular_values(&self) -> &[f64] {
        &self.sigma
    }

    pub fn u(&self) -> &[f64] {
        &self.u_mat
    }

    pub fn v(&self) -> &[f64] {
        &self.v_mat
    }

    fn check_len(&self, v: &[f64], label: &str) -> Result<()> {
        if v.len() != self.n {
            return Err(Error::invalid(format!(
                "{label} has length {}, lattice dimension is {}",
                v.len(),
                self.n
            )));
        }
        Ok(())
    }
}

fn mat_vec(m: &[f64], v: &[f64], n: usize) -> Vec<f64> {
    (0..n)
        .map(|i| {
            let mut acc = 0.0;
            for k in 0..n {
                acc += m[i * n + k] * v[k];
            }
            acc
        })
        .collect()
}

/// `B^-1 (y - mu)`.
pub fn lattice_transform(y: &[f64], mu: &[f64], basis: &LatticeBasis) -> Result<Vec<f64>> {
    basis.check_len(y, "y")?;
    basis.check_len(mu, "mu")?;
    let centered: Vec<f64> = y.iter().zip(mu).map(|(a, b)| a - b).collect();
    Ok(mat_vec(&basis.b_inv, &centered, basis.n))
}

/// Elementwise rounding with ties away from zero.
pub fn babai_round(y_tr: &[f64]) -> Vec<i64> {
    y_tr.iter().map(|v| v.round() as i64).collect()
}

/// `B u + mu`.
pub fn lattice_reconstruct(coords: &[i64], mu: &[f64], basis: &LatticeBasis) -> Result<Vec<f64>> {
    if coords.len() != basis.n {
        return Err(Error::invalid(format!(
            "coordinates have length {}, lattice dimension is {}",
            coords.len(),
            basis.n
        )));
    }
    basis.check_len(mu, "mu")?;
    let u: Vec<f64> = coords.iter().map(|&c| c as f64).collect();
    Ok(mat_vec(&basis.b_mat, &u, basis.n)
        .into_iter()
        .zip(mu)
        .map(|(a, b)| a + b)
        .collect())
}

fn check_density(a: f64) -> Result<()> {
    if !(a > 0.0) || !a.is_finite() {
        return Err(Error::invalid(format!("density scalar must be positive, got {a}")));
    }
    Ok(())
}

/// Multiplies by the density scalar `a` before quantization.
pub fn density_scale(y: &[f64], a: f64) -> Result<Vec<f64>> {
    check_density(a)?;
    Ok(y.iter().map(|v| v * a).collect())
}

/// Multiplies decoded coefficients by `1 / a`.
pub fn density_unscale(y_hat: &[f64], a: f64) -> Result<Vec<f64>> {
    check_density(a)?;
    let inv = 1.0 / a;
    Ok(y_hat.iter().map(|v| v * inv).collect())
}

fn squared_distance(y: &[f64], coords: &[i64], basis: &LatticeBasis) -> f64 {
    let n = basis.n;
    (0..n)
        .map(|i| {
            let mut p = 0.0;
            for k in 0..n {
                p += basis.b_mat[i * n + k] * coords[k] as f64;
            }
            (y[i] - p) * (y[i] - p)
        })
        .sum()
}

/// Exact nearest lattice point (zero mean) among integer coordinates within
/// `radius` of the Babai answer in every coordinate. Ties resolve to the
/// lexicographically smallest coordinate vector.
pub fn brute_force_nearest(y: &[f64], basis: &LatticeBasis, radius: i64) -> Result<Vec<i64>> {
    let n = basis.n;
    if n > BRUTE_FORCE_MAX_DIM || !(0..=BRUTE_FORCE_MAX_RADIUS).contains(&radius) {
        return Err(Error::invalid(format!(
            "exhaustive search limited to n <= {BRUTE_FORCE_MAX_DIM}, radius <= {BRUTE_FORCE_MAX_RADIUS}"
        )));
    }
    basis.check_len(y, "y")?;
    let center = babai_round(&lattice_transform(y, &vec![0.0; n], basis)?);
    let width = (2 * radius + 1) as usize;
    let total = width.pow(n as u32);
    let mut best: Option<(f64, Vec<i64>)> = None;
    let mut cand = vec![0i64; n];
    for idx in 0..total {
        let mut rem = idx;
        // most significant digit first so iteration order is lexicographic
        for k in (0..n).rev() {
            cand[k] = center[k] - radius + (rem % width) as i64;
            rem /= width;
        }
        let dist = squared_distance(y, &cand, basis);
        let better = match &best {
            None => true,
            Some((d, c)) => dist < *d || (dist == *d && cand < *c),
        };
        if better {
            best = Some((dist, cand.clone()));
        }
    }
    Ok(best.expect("search space is non-empty").1)
}

/// Euclidean distance from `y` to the zero-mean lattice point `B u`.
pub fn lattice_distance(y: &[f64], coords: &[i64], basis: &LatticeBasis) -> f64 {
    squared_distance(y, coords, basis).sqrt()
}
