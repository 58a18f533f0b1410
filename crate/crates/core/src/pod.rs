//! Galerkin/POD reduced model: an orthonormal basis fitted from weighted
//! snapshots, the reduced recursion `z_t = u^T f(u z_{t-1})`, and the
//! idealized projection variant.
//!
//! The basis columns are eigenvectors of `c c^T` for its largest eigenvalues,
//! computed through the smaller Gram matrix `c^T c` whenever the snapshot
//! count is below the state dimension.

use std::fs;
use std::path::Path;

use nalgebra::{DMatrix, DVector, SymmetricEigen};

use crate::error::{Error, Result};
use crate::matrix::{pad_orthonormal, read_matrix, sign_fix_columns, write_matrix, Trajectory};
use crate::model::{FullOrderModel, ModelParameters};
use crate::smc::WeightedSnapshots;

/// Eigenvalues this far below the leading one count as numerically zero.
const RANK_TOL: f64 = 1e-13;

/// Column-orthonormal basis of a POD subspace with the retained eigenvalues
/// of the snapshot second-moment matrix (descending).
#[derive(Clone, Debug)]
pub struct PodBasis {
    basis: DMatrix<f64>,
    eigenvalues: DVector<f64>,
    numerical_rank: usize,
}

impl PodBasis {
    pub fn basis(&self) -> &DMatrix<f64> {
        &self.basis
    }

    pub fn k(&self) -> usize {
        self.basis.ncols()
    }

    pub fn eigenvalues(&self) -> &DVector<f64> {
        &self.eigenvalues
    }

    /// Rank of the snapshot matrix; columns beyond it are deterministic
    /// orthonormal padding.
    pub fn numerical_rank(&self) -> usize {
        self.numerical_rank
    }

    pub fn is_padded(&self) -> bool {
        self.k() > self.numerical_rank
    }

    /// u u^T x per column.
    pub fn project_states(&self, x: &DMatrix<f64>) -> DMatrix<f64> {
        &self.basis * (self.basis.transpose() * x)
    }
}

/// One eigendecomposition serving every requested basis size.
pub struct PodSolver {
    modes: DMatrix<f64>,
    eigenvalues: DVector<f64>,
    total_energy: f64,
    rank: usize,
    max_k: usize,
}

impl PodSolver {
    pub fn new(c: &DMatrix<f64>) -> Result<Self> {
        let (n, cols) = c.shape();
        if n == 0 || cols == 0 {
            return Err(Error::Config("empty snapshot matrix".into()));
        }
        let total_energy = c.norm_squared();
        let (eigenvalues, modes) = if cols < n {
            // Gram route: eigenvectors v of c^T c lift to u = c v / sqrt(l).
            let gram = c.transpose() * c;
            let (values, vectors) = sorted_symmetric_eigen(gram);
            let lead = values.max().max(0.0);
            let mut kept = Vec::new();
            for i in 0..values.len() {
                if values[i] > RANK_TOL * lead && values[i] > 0.0 {
                    kept.push(c * vectors.column(i) / values[i].sqrt());
                }
            }
            let modes = if kept.is_empty() {
                DMatrix::zeros(n, 0)
            } else {
                orthonormalize_in_place(DMatrix::from_columns(&kept))
            };
            (values, modes)
        } else {
            let second_moment = c * c.transpose();
            let (values, vectors) = sorted_symmetric_eigen(second_moment);
            (values, vectors)
        };
        let lead = eigenvalues.max().max(0.0);
        let rank = (0..eigenvalues.len())
            .take_while(|&i| eigenvalues[i] > RANK_TOL * lead && eigenvalues[i] > 0.0)
            .count();
        let mut modes = modes;
        sign_fix_columns(&mut modes);
        Ok(Self {
            modes,
            eigenvalues,
            total_energy,
            rank,
            max_k: n.min(cols),
        })
    }

    pub fn rank(&self) -> usize {
        self.rank
    }

    pub fn max_k(&self) -> usize {
        self.max_k
    }

    pub fn total_energy(&self) -> f64 {
        self.total_energy
    }

    /// Basis for the k leading directions. Requests beyond the numerical
    /// rank are honored by padding with an orthonormal completion, so error
    /// curves plateau instead of failing.
    pub fn basis(&self, k: usize) -> Result<PodBasis> {
        if k == 0 || k > self.max_k {
            return Err(Error::Config(format!(
                "k = {k} outside the valid range 1..={}",
                self.max_k
            )));
        }
        let usable = k.min(self.rank).min(self.modes.ncols());
        let kept = self.modes.columns(0, usable).into_owned();
        let basis = if usable < k {
            pad_orthonormal(&kept, k)?
        } else {
            kept
        };
        let eigenvalues = DVector::from_fn(k, |i, _| {
            if i < self.eigenvalues.len() {
                self.eigenvalues[i].max(0.0)
            } else {
                0.0
            }
        });
        Ok(PodBasis {
            basis,
            eigenvalues,
            numerical_rank: self.rank,
        })
    }

    /// Value of the weighted projection objective at the k-dimensional
    /// optimum: total energy minus the sum of the k leading eigenvalues.
    pub fn fit_cost_sq(&self, k: usize) -> f64 {
        let retained: f64 = (0..k.min(self.eigenvalues.len()))
            .map(|i| self.eigenvalues[i].max(0.0))
            .sum();
        (self.total_energy - retained).max(0.0)
    }
}

fn sorted_symmetric_eigen(m: DMatrix<f64>) -> (DVector<f64>, DMatrix<f64>) {
    let eig = SymmetricEigen::new(m);
    let mut order: Vec<usize> = (0..eig.eigenvalues.len()).collect();
    order.sort_by(|&a, &b| eig.eigenvalues[b].partial_cmp(&eig.eigenvalues[a]).unwrap());
    let values = DVector::from_iterator(order.len(), order.iter().map(|&i| eig.eigenvalues[i]));
    let vectors = DMatrix::from_columns(
        &order
            .iter()
            .map(|&i| eig.eigenvectors.column(i))
            .collect::<Vec<_>>(),
    );
    (values, vectors)
}

/// One modified Gram-Schmidt pass; the lifted Gram-route modes can lose
/// orthogonality near the rank boundary.
fn orthonormalize_in_place(m: DMatrix<f64>) -> DMatrix<f64> {
    let k = m.ncols();
    let gram = m.transpose() * &m;
    if (gram - DMatrix::identity(k, k)).norm() <= 1e-12 {
        return m;
    }
    crate::matrix::gram_schmidt(&m, 1e-8)
}

/// Fits the basis of the k leading eigenvectors of `c c^T`.
pub fn pod_fit(snapshots: &WeightedSnapshots, k: usize) -> Result<PodBasis> {
    PodSolver::new(&snapshots.c)?.basis(k)
}

/// Galerkin recursion: `z_1 = u^T g(theta)`, `z_t = u^T f(u z_{t-1})`,
/// returning the lifted states `u z_t`. The full-order map is evaluated in
/// ambient dimension; state information between steps is k-dimensional.
pub fn pod_rom_simulate(
    basis: &PodBasis,
    model: &dyn FullOrderModel,
    theta: &ModelParameters,
    t_len: usize,
) -> Result<Trajectory> {
    if t_len == 0 {
        return Err(Error::Config("trajectory length must be at least 1".into()));
    }
    let u = basis.basis();
    if u.nrows() != model.state_dim() {
        return Err(Error::Dimension(format!(
            "basis has {} rows, model state dimension is {}",
            u.nrows(),
            model.state_dim()
        )));
    }
    let mut z = u.transpose() * model.init(theta)?;
    let mut columns = Vec::with_capacity(t_len);
    columns.push(u * &z);
    for t in 2..=t_len {
        let lifted = u * &z;
        let next = model.step(&lifted, theta, t)?;
        if next.iter().any(|v| !v.is_finite()) {
            return Err(Error::Diverged {
                step: t,
                detail: "reduced simulation produced non-finite state".into(),
            });
        }
        z = u.transpose() * next;
        columns.push(u * &z);
    }
    Trajectory::from_columns(&columns)
}

/// Idealized variant: orthogonal projection `u u^T x_t` of the true states.
pub fn pod_star_project(basis: &PodBasis, x: &Trajectory) -> Result<Trajectory> {
    if basis.basis().nrows() != x.state_dim() {
        return Err(Error::Dimension(format!(
            "basis has {} rows, trajectory state dimension is {}",
            basis.basis().nrows(),
            x.state_dim()
        )));
    }
    Trajectory::new(basis.project_states(x.data()))
}

/// Persists u as ROMX1 plus a small text header (k, eigenvalues).
pub fn save_pod_basis(dir: &Path, basis: &PodBasis) -> Result<()> {
    fs::create_dir_all(dir)?;
    write_matrix(&dir.join("pod_u.romx"), basis.basis())?;
    let mut header = format!("k {}\nnumerical_rank {}\neigenvalues", basis.k(), basis.numerical_rank());
    for v in basis.eigenvalues().iter() {
        header.push_str(&format!(" {v:.17e}"));
    }
    header.push('\n');
    fs::write(dir.join("pod_meta.txt"), header)?;
    Ok(())
}

pub fn load_pod_basis(dir: &Path) -> Result<PodBasis> {
    let basis = read_matrix(&dir.join("pod_u.romx"))?;
    let meta = fs::read_to_string(dir.join("pod_meta.txt"))?;
    let mut k = None;
    let mut rank = None;
    let mut eigenvalues = Vec::new();
    for line in meta.lines() {
        let mut parts = line.split_whitespace();
        match parts.next() {
            Some("k") => k = parts.next().and_then(|v| v.parse().ok()),
            Some("numerical_rank") => rank = parts.next().and_then(|v| v.parse().ok()),
            Some("eigenvalues") => {
                eigenvalues = parts.filter_map(|v| v.parse().ok()).collect();
            }
            _ => {}
        }
    }
    let (Some(k), Some(rank)) = (k, rank) else {
        return Err(Error::Format {
            path: dir.display().to_string(),
            detail: "pod_meta.txt missing k or numerical_rank".into(),
        });
    };
    if basis.ncols() != k || eigenvalues.len() != k {
        return Err(Error::Format {
            path: dir.display().to_string(),
            detail: "basis shape does not match header".into(),
        });
    }
    Ok(PodBasis {
        basis,
        eigenvalues: DVector::from_vec(eigenvalues),
        numerical_rank: rank,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng::{stream, StreamDomain};
    use approx::assert_relative_eq;
    use nalgebra::dvector;
    use rand::Rng;

    fn snapshots_from(c: DMatrix<f64>) -> WeightedSnapshots {
        WeightedSnapshots {
            a: DMatrix::zeros(c.nrows(), 0),
            b: DMatrix::zeros(c.nrows(), 0),
            c,
        }
    }

    fn random_matrix(rows: usize, cols: usize, seed: u64) -> DMatrix<f64> {
        let mut rng = stream(seed, StreamDomain::Generic, 0, 0);
        DMatrix::from_fn(rows, cols, |_, _| rng.gen::<f64>() - 0.5)
    }

    fn random_orthonormal(n: usize, k: usize, seed: u64) -> DMatrix<f64> {
        let qr = random_matrix(n, k, seed).qr();
        qr.q()
    }

    #[test]
    fn diagonal_second_moment_picks_leading_axis() {
        let c = DMatrix::from_row_slice(3, 2, &[2.0, 0.0, 0.0, 1.0, 0.0, 0.0]);
        let basis = pod_fit(&snapshots_from(c), 1).unwrap();
        let u = basis.basis();
        assert_relative_eq!(u[(0, 0)], 1.0, epsilon = 1e-12);
        assert!(u[(1, 0)].abs() < 1e-12 && u[(2, 0)].abs() < 1e-12);
        assert_relative_eq!(basis.eigenvalues()[0], 4.0, epsilon = 1e-12);
    }

    #[test]
    fn plane_snapshots_reproduce_projector() {
        let q = random_orthonormal(6, 2, 3);
        // Snapshots spanning exactly that plane.
        let mix = random_matrix(2, 5, 4);
        let c = &q * mix;
        let basis = pod_fit(&snapshots_from(c.clone()), 2).unwrap();
        let fitted = basis.project_states(&DMatrix::identity(6, 6));
        let oracle = &q * q.transpose();
        assert!((fitted - oracle).norm() <= 1e-10);
    }

    #[test]
    fn fit_beats_random_bases() {
        let c = random_matrix(6, 10, 5);
        let solver = PodSolver::new(&c).unwrap();
        let basis = solver.basis(3).unwrap();
        let cost = (&c - basis.project_states(&c)).norm_squared();
        assert_relative_eq!(cost, solver.fit_cost_sq(3), max_relative = 1e-10);
        for trial in 0..200 {
            let other = random_orthonormal(6, 3, 1000 + trial);
            let other_cost = (&c - &other * (other.transpose() * &c)).norm_squared();
            assert!(cost < other_cost, "random basis beat the fit at trial {trial}");
        }
    }

    #[test]
    fn optimality_certificate_both_routes() {
        // Gram route (cols < n) and direct route (cols >= n).
        for (n, cols, seed) in [(12usize, 5usize, 7u64), (5, 12, 8)] {
            let c = random_matrix(n, cols, seed);
            let solver = PodSolver::new(&c).unwrap();
            for k in 1..=n.min(cols) {
                let basis = solver.basis(k).unwrap();
                let cost = (&c - basis.project_states(&c)).norm_squared();
                let certificate = solver.fit_cost_sq(k);
                assert_relative_eq!(cost, certificate, max_relative = 1e-8, epsilon = 1e-10);
            }
        }
    }

    #[test]
    fn cost_is_non_increasing_in_k() {
        let c = random_matrix(8, 14, 9);
        let solver = PodSolver::new(&c).unwrap();
        let mut last = f64::INFINITY;
        for k in 1..=8 {
            let cost = solver.fit_cost_sq(k);
            assert!(cost <= last + 1e-12);
            last = cost;
        }
    }

    #[test]
    fn projector_is_idempotent_and_orthonormal() {
        let c = random_matrix(7, 9, 11);
        let basis = PodSolver::new(&c).unwrap().basis(4).unwrap();
        let u = basis.basis();
        let gram = u.transpose() * u;
        assert!((gram - DMatrix::identity(4, 4)).norm() <= 1e-10);
        let p = basis.project_states(&DMatrix::identity(7, 7));
        assert!((&p * &p - &p).norm() <= 1e-10);
        // Eigenvalues non-negative, non-increasing.
        for i in 1..4 {
            assert!(basis.eigenvalues()[i - 1] >= basis.eigenvalues()[i]);
            assert!(basis.eigenvalues()[i] >= 0.0);
        }
    }

    #[test]
    fn rank_deficient_requests_are_padded() {
        let q = random_orthonormal(8, 2, 13);
        let c = &q * random_matrix(2, 6, 14);
        let solver = PodSolver::new(&c).unwrap();
        assert_eq!(solver.rank(), 2);
        let basis = solver.basis(5).unwrap();
        assert!(basis.is_padded());
        assert_eq!(basis.k(), 5);
        let gram = basis.basis().transpose() * basis.basis();
        assert!((gram - DMatrix::identity(5, 5)).norm() <= 1e-10);
        // Padding cannot reduce the data cost below the rank-2 optimum (zero).
        let cost = (&c - basis.project_states(&c)).norm_squared();
        assert!(cost <= 1e-18 * c.norm_squared().max(1.0));
        // Out-of-range k still errors.
        assert!(solver.basis(0).is_err());
        assert!(solver.basis(7).is_err());
    }

    struct LinearModel {
        a: DMatrix<f64>,
        g: DVector<f64>,
    }

    impl FullOrderModel for LinearModel {
        fn state_dim(&self) -> usize {
            self.g.len()
        }
        fn init(&self, _: &ModelParameters) -> Result<DVector<f64>> {
            Ok(self.g.clone())
        }
        fn step(&self, x: &DVector<f64>, _: &ModelParameters, _: usize) -> Result<DVector<f64>> {
            Ok(&self.a * x)
        }
    }

    fn dummy_theta() -> ModelParameters {
        ModelParameters::new(dvector![0.0], DVector::zeros(0), (0.0, 0.0)).unwrap()
    }

    #[test]
    fn full_basis_reproduces_full_simulation() {
        let model = LinearModel {
            a: random_matrix(4, 4, 15) * 0.4,
            g: dvector![1.0, -0.5, 0.25, 2.0],
        };
        let basis = PodBasis {
            basis: DMatrix::identity(4, 4),
            eigenvalues: DVector::zeros(4),
            numerical_rank: 4,
        };
        let full = crate::model::simulate(&model, &dummy_theta(), 5).unwrap();
        let reduced = pod_rom_simulate(&basis, &model, &dummy_theta(), 5).unwrap();
        assert!((full.data() - reduced.data()).amax() <= 1e-12);
    }

    #[test]
    fn invariant_subspace_dynamics_are_exact() {
        // f preserves span(q); starting inside it, the Galerkin recursion is
        // exact.
        let q = random_orthonormal(6, 2, 17);
        let small = random_matrix(2, 2, 18) * 0.5;
        let model = LinearModel {
            a: &q * &small * q.transpose(),
            g: &q * dvector![1.0, -2.0],
        };
        let basis = PodBasis {
            basis: q.clone(),
            eigenvalues: DVector::zeros(2),
            numerical_rank: 2,
        };
        let full = crate::model::simulate(&model, &dummy_theta(), 4).unwrap();
        let reduced = pod_rom_simulate(&basis, &model, &dummy_theta(), 4).unwrap();
        assert!((full.data() - reduced.data()).amax() <= 1e-10);
    }

    #[test]
    fn single_column_basis_gives_hand_recursion() {
        // u = e1, f = diag(2, 3), g = (1, 1): z_t = 2 z_{t-1}, lifted states
        // (2^{t-1}, 0).
        let model = LinearModel {
            a: DMatrix::from_diagonal(&dvector![2.0, 3.0]),
            g: dvector![1.0, 1.0],
        };
        let basis = PodBasis {
            basis: DMatrix::from_column_slice(2, 1, &[1.0, 0.0]),
            eigenvalues: DVector::zeros(1),
            numerical_rank: 1,
        };
        let x = pod_rom_simulate(&basis, &model, &dummy_theta(), 4).unwrap();
        for t in 0..4 {
            assert_relative_eq!(x.data()[(0, t)], 2f64.powi(t as i32), epsilon = 1e-12);
            assert_eq!(x.data()[(1, t)], 0.0);
        }
    }

    #[test]
    fn star_projection_cases() {
        let q = random_orthonormal(5, 2, 19);
        let basis = PodBasis {
            basis: q.clone(),
            eigenvalues: DVector::zeros(2),
            numerical_rank: 2,
        };
        // Columns inside span(u) are fixed points.
        let inside = Trajectory::new(&q * random_matrix(2, 3, 20)).unwrap();
        let projected = pod_star_project(&basis, &inside).unwrap();
        assert!((projected.data() - inside.data()).amax() <= 1e-12);

        // Full basis: identity.
        let full = PodBasis {
            basis: DMatrix::identity(5, 5),
            eigenvalues: DVector::zeros(5),
            numerical_rank: 5,
        };
        let x = Trajectory::new(random_matrix(5, 3, 21)).unwrap();
        assert!((pod_star_project(&full, &x).unwrap().data() - x.data()).amax() <= 1e-12);

        // Residual energy against the direct oracle.
        let y = Trajectory::new(random_matrix(5, 4, 22)).unwrap();
        let star = pod_star_project(&basis, &y).unwrap();
        let residual_direct: f64 = (0..4)
            .map(|t| {
                let col = y.data().column(t).into_owned();
                (&col - &q * (q.transpose() * &col)).norm_squared()
            })
            .sum();
        let err = crate::matrix::frobenius_error(&y, &star).unwrap();
        assert_relative_eq!(err * err, residual_direct, max_relative = 1e-10);
    }

    #[test]
    fn basis_round_trips_through_disk() {
        let dir = tempfile::tempdir().unwrap();
        let c = random_matrix(6, 4, 23);
        let basis = PodSolver::new(&c).unwrap().basis(3).unwrap();
        save_pod_basis(dir.path(), &basis).unwrap();
        let back = load_pod_basis(dir.path()).unwrap();
        assert_eq!(back.basis(), basis.basis());
        assert_eq!(back.numerical_rank(), basis.numerical_rank());
        assert!((back.eigenvalues() - basis.eigenvalues()).amax() <= 1e-15);
    }
}
