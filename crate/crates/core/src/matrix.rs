//! Dense-matrix utilities: trajectories, the ROMX1 persistence format and a
//! handful of factorization helpers shared by the reduction solvers.
//!
//! All matrices are column-major 64-bit floats; states are matrix columns.

use std::fs::File;
use std::io::{BufReader, BufWriter, Read, Write};
use std::path::Path;

use nalgebra::{DMatrix, DVector};

use crate::error::{Error, Result};

/// An n x T matrix whose columns are the states of a discretized system.
///
/// Entries are finite by construction and the shape is immutable.
#[derive(Clone, Debug, PartialEq)]
pub struct Trajectory {
    data: DMatrix<f64>,
}

impl Trajectory {
    pub fn new(data: DMatrix<f64>) -> Result<Self> {
        if data.nrows() == 0 || data.ncols() == 0 {
            return Err(Error::Dimension(format!(
                "trajectory must be non-empty, got {}x{}",
                data.nrows(),
                data.ncols()
            )));
        }
        if let Some(idx) = data.iter().position(|v| !v.is_finite()) {
            let t = idx / data.nrows() + 1;
            return Err(Error::Diverged {
                step: t,
                detail: "non-finite entry in trajectory".into(),
            });
        }
        Ok(Self { data })
    }

    pub fn from_columns(columns: &[DVector<f64>]) -> Result<Self> {
        if columns.is_empty() {
            return Err(Error::Dimension("trajectory needs at least one column".into()));
        }
        Self::new(DMatrix::from_columns(columns))
    }

    /// State dimension n.
    pub fn state_dim(&self) -> usize {
        self.data.nrows()
    }

    /// Number of time steps T.
    pub fn len(&self) -> usize {
        self.data.ncols()
    }

    pub fn is_empty(&self) -> bool {
        false
    }

    /// State at 0-based time index t.
    pub fn state(&self, t: usize) -> DVector<f64> {
        self.data.column(t).into_owned()
    }

    pub fn data(&self) -> &DMatrix<f64> {
        &self.data
    }

    pub fn into_inner(self) -> DMatrix<f64> {
        self.data
    }

    pub fn norm(&self) -> f64 {
        self.data.norm()
    }
}

/// Frobenius norm of the difference between two equally-shaped trajectories.
pub fn frobenius_error(x: &Trajectory, x_tilde: &Trajectory) -> Result<f64> {
    if x.data.shape() != x_tilde.data.shape() {
        return Err(Error::Dimension(format!(
            "trajectory shapes differ: {:?} vs {:?}",
            x.data.shape(),
            x_tilde.data.shape()
        )));
    }
    Ok((&x.data - &x_tilde.data).norm())
}

const ROMX1_MAGIC: &[u8; 5] = b"ROMX1";

/// Encodes a matrix in the ROMX1 format: magic "ROMX1", two little-endian
/// u64 (rows, cols), then rows*cols little-endian f64 in column-major order.
pub fn encode_matrix(m: &DMatrix<f64>) -> Vec<u8> {
    let mut out = Vec::with_capacity(5 + 16 + 8 * m.len());
    out.extend_from_slice(ROMX1_MAGIC);
    out.extend_from_slice(&(m.nrows() as u64).to_le_bytes());
    out.extend_from_slice(&(m.ncols() as u64).to_le_bytes());
    for v in m.as_slice() {
        out.extend_from_slice(&v.to_le_bytes());
    }
    out
}

pub fn decode_matrix(bytes: &[u8], origin: &str) -> Result<DMatrix<f64>> {
    let bad = |detail: &str| Error::Format {
        path: origin.to_string(),
        detail: detail.to_string(),
    };
    if bytes.len() < 21 || &bytes[..5] != ROMX1_MAGIC {
        return Err(bad("missing ROMX1 magic"));
    }
    let rows = u64::from_le_bytes(bytes[5..13].try_into().unwrap()) as usize;
    let cols = u64::from_le_bytes(bytes[13..21].try_into().unwrap()) as usize;
    let expected = 21 + 8 * rows.checked_mul(cols).ok_or_else(|| bad("size overflow"))?;
    if bytes.len() != expected {
        return Err(bad(&format!(
            "payload length {} does not match {}x{} header",
            bytes.len() - 21,
            rows,
            cols
        )));
    }
    let values: Vec<f64> = bytes[21..]
        .chunks_exact(8)
        .map(|c| f64::from_le_bytes(c.try_into().unwrap()))
        .collect();
    Ok(DMatrix::from_vec(rows, cols, values))
}

pub fn write_matrix(path: &Path, m: &DMatrix<f64>) -> Result<()> {
    let mut w = BufWriter::new(File::create(path)?);
    w.write_all(&encode_matrix(m))?;
    Ok(())
}

pub fn read_matrix(path: &Path) -> Result<DMatrix<f64>> {
    let mut bytes = Vec::new();
    BufReader::new(File::open(path)?).read_to_end(&mut bytes)?;
    decode_matrix(&bytes, &path.display().to_string())
}

/// Thin singular value decomposition m = u * diag(s) * v^T with singular
/// values sorted in descending order.
pub struct ThinSvd {
    /// rows x r, orthonormal columns.
    pub u: DMatrix<f64>,
    /// r singular values, descending.
    pub s: DVector<f64>,
    /// cols x r, orthonormal columns.
    pub v: DMatrix<f64>,
}

/// Computes a thin SVD, reducing fat or tall inputs to a square problem
/// through a QR factorization first. Keeps small singular values accurate,
/// which the pseudo-inverse truncation relies on.
pub fn thin_svd(m: &DMatrix<f64>) -> Result<ThinSvd> {
    let (rows, cols) = m.shape();
    if cols > rows {
        let t = thin_svd(&m.transpose())?;
        return Ok(ThinSvd { u: t.v, s: t.s, v: t.u });
    }
    // Tall case: m = q r with q rows x cols, then svd of the small square r.
    let (u, s, v) = if rows > cols {
        let qr = m.clone().qr();
        let q = qr.q();
        let r = qr.unpack_r();
        let svd = r
            .svd(true, true);
        let su = svd.u.ok_or_else(|| Error::Config("svd failed to produce u".into()))?;
        let vt = svd.v_t.ok_or_else(|| Error::Config("svd failed to produce v".into()))?;
        (q * su, svd.singular_values, vt.transpose())
    } else {
        let svd = m.clone().svd(true, true);
        let su = svd.u.ok_or_else(|| Error::Config("svd failed to produce u".into()))?;
        let vt = svd.v_t.ok_or_else(|| Error::Config("svd failed to produce v".into()))?;
        (su, svd.singular_values, vt.transpose())
    };
    // nalgebra returns descending values, but do not rely on it.
    let mut order: Vec<usize> = (0..s.len()).collect();
    order.sort_by(|&a, &b| s[b].partial_cmp(&s[a]).unwrap());
    let sorted = order.iter().all(|&i| order[i] == i);
    if sorted {
        return Ok(ThinSvd { u, s, v });
    }
    let u2 = DMatrix::from_columns(&order.iter().map(|&i| u.column(i)).collect::<Vec<_>>());
    let v2 = DMatrix::from_columns(&order.iter().map(|&i| v.column(i)).collect::<Vec<_>>());
    let s2 = DVector::from_iterator(s.len(), order.iter().map(|&i| s[i]));
    Ok(ThinSvd { u: u2, s: s2, v: v2 })
}

/// Flips column signs so the entry of largest magnitude in each column is
/// positive. First index wins on ties, keeping bases reproducible.
pub fn sign_fix_columns(m: &mut DMatrix<f64>) {
    let flips = column_sign_flips(m);
    apply_sign_flips(m, &flips);
}

/// Sign flips for `left` applied to both factors of a paired decomposition,
/// preserving left * diag * right^T.
pub fn sign_fix_pair(left: &mut DMatrix<f64>, right: &mut DMatrix<f64>) {
    let flips = column_sign_flips(left);
    apply_sign_flips(left, &flips);
    apply_sign_flips(right, &flips);
}

fn column_sign_flips(m: &DMatrix<f64>) -> Vec<bool> {
    (0..m.ncols())
        .map(|j| {
            let col = m.column(j);
            let mut best = 0usize;
            for i in 1..col.len() {
                if col[i].abs() > col[best].abs() {
                    best = i;
                }
            }
            col[best] < 0.0
        })
        .collect()
}

fn apply_sign_flips(m: &mut DMatrix<f64>, flips: &[bool]) {
    for (j, flip) in flips.iter().enumerate() {
        if *flip {
            m.column_mut(j).neg_mut();
        }
    }
}

/// Orthonormalizes the columns of `m` in order by modified Gram-Schmidt,
/// dropping columns whose residual falls below `tol` times their norm.
pub fn gram_schmidt(m: &DMatrix<f64>, tol: f64) -> DMatrix<f64> {
    let mut kept: Vec<DVector<f64>> = Vec::new();
    for j in 0..m.ncols() {
        let mut v = m.column(j).into_owned();
        let original = v.norm();
        if original == 0.0 {
            continue;
        }
        for _ in 0..2 {
            for q in &kept {
                let coeff = q.dot(&v);
                v.axpy(-coeff, q, 1.0);
            }
        }
        if v.norm() > tol * original {
            let n = v.norm();
            kept.push(v / n);
        }
    }
    if kept.is_empty() {
        DMatrix::zeros(m.nrows(), 0)
    } else {
        DMatrix::from_columns(&kept)
    }
}

/// Extends an orthonormal basis to `k` columns with vectors obtained by
/// Gram-Schmidt over the standard basis e_1, e_2, ... in order.
pub fn pad_orthonormal(basis: &DMatrix<f64>, k: usize) -> Result<DMatrix<f64>> {
    let n = basis.nrows();
    if k > n {
        return Err(Error::Dimension(format!(
            "cannot pad to {k} columns in dimension {n}"
        )));
    }
    let mut cols: Vec<DVector<f64>> = (0..basis.ncols()).map(|j| basis.column(j).into_owned()).collect();
    let mut e = 0usize;
    while cols.len() < k {
        if e >= n {
            return Err(Error::Config("ran out of directions while padding basis".into()));
        }
        let mut v = DVector::zeros(n);
        v[e] = 1.0;
        e += 1;
        for _ in 0..2 {
            for q in &cols {
                let coeff = q.dot(&v);
                v.axpy(-coeff, q, 1.0);
            }
        }
        let norm = v.norm();
        if norm > 0.5 {
            cols.push(v / norm);
        }
    }
    Ok(DMatrix::from_columns(&cols))
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;
    use proptest::prelude::*;
    use rand::Rng;

    fn random_matrix(rows: usize, cols: usize, seed: u64) -> DMatrix<f64> {
        let mut rng = crate::rng::stream(seed, crate::rng::StreamDomain::Generic, 0, 0);
        DMatrix::from_fn(rows, cols, |_, _| rng.gen::<f64>() - 0.5)
    }

    #[test]
    fn frobenius_identical_inputs_is_zero() {
        let x = Trajectory::new(random_matrix(6, 3, 1)).unwrap();
        assert_eq!(frobenius_error(&x, &x).unwrap(), 0.0);
    }

    #[test]
    fn frobenius_three_four_five() {
        let x = Trajectory::new(DMatrix::from_row_slice(2, 2, &[3.0, 0.0, 0.0, 4.0])).unwrap();
        let z = Trajectory::new(DMatrix::zeros(2, 2)).unwrap();
        assert_relative_eq!(frobenius_error(&x, &z).unwrap(), 5.0, max_relative = 1e-15);
    }

    #[test]
    fn frobenius_matches_summation_oracle() {
        let x = random_matrix(10, 4, 2);
        let y = random_matrix(10, 4, 3);
        let direct: f64 = x
            .iter()
            .zip(y.iter())
            .map(|(a, b)| (a - b) * (a - b))
            .sum::<f64>()
            .sqrt();
        let got = frobenius_error(
            &Trajectory::new(x).unwrap(),
            &Trajectory::new(y).unwrap(),
        )
        .unwrap();
        assert_relative_eq!(got, direct, max_relative = 1e-12);
    }

    #[test]
    fn frobenius_shape_mismatch_errors() {
        let x = Trajectory::new(random_matrix(4, 3, 4)).unwrap();
        let y = Trajectory::new(random_matrix(4, 2, 5)).unwrap();
        assert!(matches!(frobenius_error(&x, &y), Err(Error::Dimension(_))));
    }

    #[test]
    fn trajectory_rejects_non_finite() {
        let mut m = random_matrix(3, 3, 6);
        m[(1, 2)] = f64::NAN;
        match Trajectory::new(m) {
            Err(Error::Diverged { step, .. }) => assert_eq!(step, 3),
            other => panic!("expected diverged error, got {other:?}"),
        }
    }

    #[test]
    fn romx1_round_trip_bytes() {
        let m = random_matrix(5, 7, 7);
        let bytes = encode_matrix(&m);
        assert_eq!(&bytes[..5], b"ROMX1");
        let back = decode_matrix(&bytes, "mem").unwrap();
        assert_eq!(m, back);
    }

    #[test]
    fn romx1_rejects_truncated_payload() {
        let m = random_matrix(3, 2, 8);
        let mut bytes = encode_matrix(&m);
        bytes.pop();
        assert!(matches!(decode_matrix(&bytes, "mem"), Err(Error::Format { .. })));
    }

    #[test]
    fn thin_svd_reconstructs_fat_and_tall() {
        for (r, c) in [(9, 4), (4, 9), (6, 6)] {
            let m = random_matrix(r, c, 100 + (r * c) as u64);
            let f = thin_svd(&m).unwrap();
            let rec = &f.u * DMatrix::from_diagonal(&f.s) * f.v.transpose();
            assert_relative_eq!((rec - &m).norm(), 0.0, epsilon = 1e-12 * m.norm());
            let k = f.s.len();
            assert_relative_eq!(
                (f.u.transpose() * &f.u - DMatrix::identity(k, k)).norm(),
                0.0,
                epsilon = 1e-12
            );
            for i in 1..k {
                assert!(f.s[i - 1] >= f.s[i]);
            }
        }
    }

    #[test]
    fn sign_fix_makes_peak_entry_positive() {
        let mut m = DMatrix::from_row_slice(3, 2, &[0.1, -0.2, -0.9, 0.3, 0.2, 0.9]);
        sign_fix_columns(&mut m);
        assert!(m[(1, 0)] > 0.0);
        assert!(m[(2, 1)] > 0.0);
    }

    #[test]
    fn pad_orthonormal_completes_basis() {
        let m = random_matrix(6, 2, 11);
        let q = gram_schmidt(&m, 1e-10);
        let padded = pad_orthonormal(&q, 5).unwrap();
        assert_eq!(padded.ncols(), 5);
        let gram = padded.transpose() * &padded;
        assert_relative_eq!((gram - DMatrix::identity(5, 5)).norm(), 0.0, epsilon = 1e-10);
        // The original columns are untouched.
        assert_eq!(padded.columns(0, 2), q.columns(0, 2));
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(64))]

        #[test]
        fn frobenius_triangle_and_homogeneity(seed in 0u64..1000, alpha in -3.0f64..3.0) {
            let a = random_matrix(5, 4, seed);
            let b = random_matrix(5, 4, seed + 1);
            let c = random_matrix(5, 4, seed + 2);
            let ta = Trajectory::new(a.clone()).unwrap();
            let tb = Trajectory::new(b.clone()).unwrap();
            let tc = Trajectory::new(c.clone()).unwrap();
            let ab = frobenius_error(&ta, &tb).unwrap();
            let bc = frobenius_error(&tb, &tc).unwrap();
            let ac = frobenius_error(&ta, &tc).unwrap();
            prop_assert!(ac <= ab + bc + 1e-10 * (1.0 + ab + bc));

            let scaled = Trajectory::new(&a * alpha).unwrap();
            let zero = Trajectory::new(DMatrix::zeros(5, 4)).unwrap();
            let lhs = frobenius_error(&scaled, &zero).unwrap();
            let rhs = alpha.abs() * frobenius_error(&ta, &zero).unwrap();
            prop_assert!((lhs - rhs).abs() <= 1e-10 * (1.0 + rhs));
        }

        #[test]
        fn romx1_round_trip_any_shape(rows in 1usize..8, cols in 1usize..8, seed in 0u64..100) {
            let m = random_matrix(rows, cols, seed);
            let back = decode_matrix(&encode_matrix(&m), "mem").unwrap();
            prop_assert_eq!(m, back);
        }
    }
}
