//! Optimal low-rank linear one-step model: the closed-form solution
//! `u* = p p^T b a'` of `min |b - u a|_F` over rank-k operators, its reduced
//! k-dimensional recursion, the idealized one-step predictor, and the
//! error-bound constant of the accompanying lemma.
//!
//! `a'` is the truncated Moore-Penrose pseudo-inverse of `a` and the columns
//! of `p` are orthonormal eigenvectors of `b a' a b^T` for its largest
//! eigenvalues. Products of that size are never formed explicitly: with the
//! thin SVD `a = w_a s_a v_a^T`, the matrix `b a' a b^T` equals
//! `(b v_a)(b v_a)^T`, so `p` comes from a thin SVD of `b v_a`.

use std::fs;
use std::path::Path;

use nalgebra::{DMatrix, DVector};

use crate::error::{Error, Result};
use crate::matrix::{
    pad_orthonormal, read_matrix, sign_fix_pair, thin_svd, write_matrix, Trajectory,
};
use crate::model::{FullOrderModel, ModelParameters};
use crate::smc::WeightedSnapshots;

/// Relative cut-off below which singular values of `a` are treated as zero
/// when inverting; near-duplicate particles make the snapshot matrix
/// numerically rank-deficient.
const PINV_TOL: f64 = 1e-12;

/// Rank-limited operator stored in factored SVD form `u = w s v^T`.
#[derive(Clone, Debug)]
pub struct LowRankOperator {
    left: DMatrix<f64>,
    singular_values: DVector<f64>,
    right: DMatrix<f64>,
}

impl LowRankOperator {
    pub fn new(left: DMatrix<f64>, singular_values: DVector<f64>, right: DMatrix<f64>) -> Result<Self> {
        let k = singular_values.len();
        if left.ncols() != k || right.ncols() != k || left.nrows() != right.nrows() {
            return Err(Error::Dimension("inconsistent low-rank factor shapes".into()));
        }
        if singular_values.iter().any(|s| !s.is_finite() || *s < 0.0) {
            return Err(Error::Config("singular values must be finite and non-negative".into()));
        }
        Ok(Self { left, singular_values, right })
    }

    pub fn dim(&self) -> usize {
        self.left.nrows()
    }

    pub fn k(&self) -> usize {
        self.singular_values.len()
    }

    pub fn left(&self) -> &DMatrix<f64> {
        &self.left
    }

    pub fn singular_values(&self) -> &DVector<f64> {
        &self.singular_values
    }

    pub fn right(&self) -> &DMatrix<f64> {
        &self.right
    }

    /// Spectral norm |u|_2,2 = largest singular value.
    pub fn spectral_norm(&self) -> f64 {
        self.singular_values.iter().cloned().fold(0.0, f64::max)
    }

    /// u x without materializing u.
    pub fn apply(&self, x: &DVector<f64>) -> DVector<f64> {
        let mut z = self.right.transpose() * x;
        z.component_mul_assign(&self.singular_values);
        &self.left * z
    }

    pub fn apply_matrix(&self, x: &DMatrix<f64>) -> DMatrix<f64> {
        let mut z = self.right.transpose() * x;
        for (i, s) in self.singular_values.iter().enumerate() {
            z.row_mut(i).scale_mut(*s);
        }
        &self.left * z
    }

    pub fn to_dense(&self) -> DMatrix<f64> {
        &self.left * DMatrix::from_diagonal(&self.singular_values) * self.right.transpose()
    }
}

/// One pair of thin SVDs serving every requested rank.
pub struct DmdSolver {
    /// Left factor of a (n x ra).
    w_a: DMatrix<f64>,
    /// Retained singular values of a.
    sv_a: DVector<f64>,
    /// Thin SVD factors of b v_a: p (n x rb), s_bv (rb), q_bv (ra x rb).
    p: DMatrix<f64>,
    s_bv: DVector<f64>,
    q_bv: DMatrix<f64>,
    /// Unconstrained least-squares cost |b - b a'a|_F^2.
    ls_cost_sq: f64,
    n: usize,
    max_k: usize,
}

impl DmdSolver {
    pub fn new(a: &DMatrix<f64>, b: &DMatrix<f64>) -> Result<Self> {
        if a.shape() != b.shape() {
            return Err(Error::Dimension(format!(
                "snapshot matrices differ in shape: {:?} vs {:?}",
                a.shape(),
                b.shape()
            )));
        }
        let (n, cols) = a.shape();
        if cols == 0 {
            return Err(Error::Config("empty snapshot matrices".into()));
        }
        if a.amax() == 0.0 {
            return Err(Error::Config("degenerate snapshot data: a is all-zero".into()));
        }
        let svd_a = thin_svd(a)?;
        let cutoff = PINV_TOL * svd_a.s.max();
        let ra = svd_a.s.iter().take_while(|&&s| s > cutoff).count();
        let w_a = svd_a.u.columns(0, ra).into_owned();
        let sv_a = DVector::from_fn(ra, |i, _| svd_a.s[i]);
        let v_a = svd_a.v.columns(0, ra).into_owned();

        let bva = b * &v_a;
        let svd_bv = thin_svd(&bva)?;
        let lead = svd_bv.s.max();
        let rb = if lead > 0.0 {
            svd_bv.s.iter().take_while(|&&s| s > PINV_TOL * lead).count()
        } else {
            0
        };
        let p = svd_bv.u.columns(0, rb).into_owned();
        let s_bv = DVector::from_fn(rb, |i, _| svd_bv.s[i]);
        let q_bv = svd_bv.v.columns(0, rb).into_owned();

        let ls_cost_sq = (b.norm_squared() - bva.norm_squared()).max(0.0);
        Ok(Self {
            w_a,
            sv_a,
            p,
            s_bv,
            q_bv,
            ls_cost_sq,
            n,
            max_k: n.min(cols),
        })
    }

    /// Rank of b a'a b^T; requests beyond it add only zero singular values.
    pub fn rank(&self) -> usize {
        self.s_bv.len()
    }

    pub fn max_k(&self) -> usize {
        self.max_k
    }

    /// Closed-form optimum p p^T b a' at rank k, in factored form.
    pub fn operator(&self, k: usize) -> Result<LowRankOperator> {
        if k == 0 || k > self.max_k {
            return Err(Error::Config(format!(
                "k = {k} outside the valid range 1..={}",
                self.max_k
            )));
        }
        let k_eff = k.min(self.rank());
        if k_eff == 0 {
            // b a' is numerically zero: the operator is zero.
            let left = pad_orthonormal(&DMatrix::zeros(self.n, 0), k)?;
            let right = left.clone();
            return LowRankOperator::new(left, DVector::zeros(k), right);
        }
        // m = p_k^T (b v_a) s_a^{-1} = diag(s_bv) q_bv^T diag(1/s_a), size k_eff x ra.
        let ra = self.sv_a.len();
        let mut m = DMatrix::zeros(k_eff, ra);
        for i in 0..k_eff {
            for j in 0..ra {
                m[(i, j)] = self.s_bv[i] * self.q_bv[(j, i)] / self.sv_a[j];
            }
        }
        let svd_m = thin_svd(&m)?;
        let q = svd_m.s.len();
        let mut left = self.p.columns(0, k_eff) * svd_m.u.columns(0, q);
        let mut right = &self.w_a * svd_m.v.columns(0, q);
        let mut sigma = DVector::from_fn(q, |i, _| svd_m.s[i].max(0.0));
        if q < k {
            left = pad_orthonormal(&left, k)?;
            right = pad_orthonormal(&right, k)?;
            sigma = sigma.resize_vertically(k, 0.0);
        }
        sign_fix_pair(&mut left, &mut right);
        LowRankOperator::new(left, sigma, right)
    }

    /// |b - u_k a|_F^2 at the rank-k optimum: the unconstrained cost plus the
    /// discarded spectral tail of b v_a.
    pub fn fit_cost_sq(&self, k: usize) -> f64 {
        let tail: f64 = (k.min(self.rank())..self.rank())
            .map(|i| self.s_bv[i] * self.s_bv[i])
            .sum();
        self.ls_cost_sq + tail
    }

    pub fn unconstrained_cost_sq(&self) -> f64 {
        self.ls_cost_sq
    }
}

/// Fits the rank-k minimizer of |b - u a|_F over the weighted snapshots.
pub fn dmd_fit(snapshots: &WeightedSnapshots, k: usize) -> Result<LowRankOperator> {
    DmdSolver::new(&snapshots.a, &snapshots.b)?.operator(k)
}

/// Reduced linear recursion: `x~_1 = g(theta)`, then with `u = w s v^T` the
/// k-dimensional coordinates follow `z_2 = (v s)^T x~_1`,
/// `z_t = (v s)^T w z_{t-1}` and lift as `x~_t = w z_t`. Equivalent to
/// `x~_t = u x~_{t-1}`.
pub fn dmd_rom_simulate(
    op: &LowRankOperator,
    model: &dyn FullOrderModel,
    theta: &ModelParameters,
    t_len: usize,
) -> Result<Trajectory> {
    if t_len == 0 {
        return Err(Error::Config("trajectory length must be at least 1".into()));
    }
    if op.dim() != model.state_dim() {
        return Err(Error::Dimension(format!(
            "operator dimension {} does not match model state dimension {}",
            op.dim(),
            model.state_dim()
        )));
    }
    let x1 = model.init(theta)?;
    let mut columns = Vec::with_capacity(t_len);
    let mut z = {
        let mut z = op.right.transpose() * &x1;
        z.component_mul_assign(&op.singular_values);
        z
    };
    columns.push(x1);
    for _t in 2..=t_len {
        columns.push(&op.left * &z);
        let mut next = op.right.transpose() * (&op.left * &z);
        next.component_mul_assign(&op.singular_values);
        z = next;
    }
    Trajectory::from_columns(&columns)
}

/// Idealized one-step predictor: `x~_1 = x_1`, `x~_t = u x_{t-1}`.
pub fn dmd_star_predict(op: &LowRankOperator, x: &Trajectory) -> Result<Trajectory> {
    if op.dim() != x.state_dim() {
        return Err(Error::Dimension(format!(
            "operator dimension {} does not match trajectory state dimension {}",
            op.dim(),
            x.state_dim()
        )));
    }
    let mut columns = Vec::with_capacity(x.len());
    columns.push(x.state(0));
    for t in 1..x.len() {
        columns.push(op.apply(&x.state(t - 1)));
    }
    Trajectory::from_columns(&columns)
}

/// Constant of the trajectory-error lemma:
/// `c = max_{t in 2..=T} sum_{k=t}^{T} (1 + 4(k-1)) |u|_{2,2}^{2(k-t)}`,
/// with the convention 0^0 = 1.
pub fn bound_constant(op: &LowRankOperator, t_len: usize) -> Result<f64> {
    if t_len < 2 {
        return Err(Error::Config("bound constant needs T >= 2".into()));
    }
    let s2 = op.spectral_norm().powi(2);
    let mut c: f64 = 0.0;
    for t in 2..=t_len {
        let mut sum = 0.0;
        for k in t..=t_len {
            let weight = (1 + 4 * (k - 1)) as f64;
            let power = if k == t { 1.0 } else { s2.powi((k - t) as i32) };
            sum += weight * power;
        }
        c = c.max(sum);
    }
    Ok(c)
}

/// Persists the operator as three ROMX1 matrices (w, sigma as k x 1, v) plus
/// a text header (n, k).
pub fn save_low_rank_operator(dir: &Path, op: &LowRankOperator) -> Result<()> {
    fs::create_dir_all(dir)?;
    write_matrix(&dir.join("dmd_w.romx"), &op.left)?;
    let sigma = DMatrix::from_column_slice(op.k(), 1, op.singular_values.as_slice());
    write_matrix(&dir.join("dmd_sigma.romx"), &sigma)?;
    write_matrix(&dir.join("dmd_v.romx"), &op.right)?;
    fs::write(
        dir.join("dmd_meta.txt"),
        format!("n {}\nk {}\n", op.dim(), op.k()),
    )?;
    Ok(())
}

pub fn load_low_rank_operator(dir: &Path) -> Result<LowRankOperator> {
    let left = read_matrix(&dir.join("dmd_w.romx"))?;
    let sigma = read_matrix(&dir.join("dmd_sigma.romx"))?;
    let right = read_matrix(&dir.join("dmd_v.romx"))?;
    LowRankOperator::new(left, DVector::from_column_slice(sigma.as_slice()), right)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng::{stream, StreamDomain};
    use approx::assert_relative_eq;
    use nalgebra::dvector;
    use rand::Rng;

    fn random_matrix(rows: usize, cols: usize, seed: u64) -> DMatrix<f64> {
        let mut rng = stream(seed, StreamDomain::Generic, 0, 0);
        DMatrix::from_fn(rows, cols, |_, _| rng.gen::<f64>() - 0.5)
    }

    fn snapshots_from(a: DMatrix<f64>, b: DMatrix<f64>) -> WeightedSnapshots {
        WeightedSnapshots {
            c: DMatrix::zeros(a.nrows(), 0),
            a,
            b,
        }
    }

    #[test]
    fn identity_dynamics_are_recovered_at_full_rank() {
        let a = random_matrix(3, 5, 1);
        let op = dmd_fit(&snapshots_from(a.clone(), a.clone()), 3).unwrap();
        assert!((op.to_dense() - DMatrix::identity(3, 3)).amax() <= 1e-10);
        let solver = DmdSolver::new(&a, &a).unwrap();
        assert!(solver.fit_cost_sq(3) <= 1e-20);
    }

    #[test]
    fn diagonal_target_hand_solution() {
        let a = DMatrix::identity(3, 3);
        let b = DMatrix::from_diagonal(&dvector![3.0, 2.0, 1.0]);
        let solver = DmdSolver::new(&a, &b).unwrap();
        let op = solver.operator(1).unwrap();
        let mut expected = DMatrix::zeros(3, 3);
        expected[(0, 0)] = 3.0;
        assert!((op.to_dense() - expected).amax() <= 1e-12);
        assert_relative_eq!(solver.fit_cost_sq(1), 5.0, epsilon = 1e-12);
        let cost = (&b - op.to_dense() * &a).norm_squared();
        assert_relative_eq!(cost, 5.0, epsilon = 1e-12);
    }

    #[test]
    fn fit_beats_random_rank_k_candidates() {
        let a = random_matrix(5, 8, 2);
        let b = random_matrix(5, 8, 3);
        let solver = DmdSolver::new(&a, &b).unwrap();
        let op = solver.operator(2).unwrap();
        let cost = (&b - op.apply_matrix(&a)).norm_squared();
        assert_relative_eq!(cost, solver.fit_cost_sq(2), max_relative = 1e-10);
        let mut rng = stream(4, StreamDomain::Generic, 0, 0);
        for trial in 0..200 {
            let g1 = DMatrix::<f64>::from_fn(5, 2, |_, _| rng.gen::<f64>() - 0.5);
            let g2 = DMatrix::<f64>::from_fn(2, 5, |_, _| rng.gen::<f64>() - 0.5);
            let candidate = &g1 * &g2;
            let c = (&b - candidate * &a).norm_squared();
            assert!(cost < c, "random candidate beat the closed form at trial {trial}");
        }
    }

    #[test]
    fn cost_monotone_and_saturates_at_unconstrained_optimum() {
        let a = random_matrix(6, 9, 5);
        let b = random_matrix(6, 9, 6);
        let solver = DmdSolver::new(&a, &b).unwrap();
        let mut last = f64::INFINITY;
        for k in 1..=6 {
            let cost = (&b - solver.operator(k).unwrap().apply_matrix(&a)).norm_squared();
            assert!(cost <= last * (1.0 + 1e-12) + 1e-12);
            last = cost;
        }
        // At k >= rank the cost equals |b - b a'a|^2.
        let pinv_cost = solver.unconstrained_cost_sq();
        assert_relative_eq!(last, pinv_cost, max_relative = 1e-8, epsilon = 1e-12);
    }

    #[test]
    fn factored_and_dense_agree_on_random_vectors() {
        let a = random_matrix(7, 10, 7);
        let b = random_matrix(7, 10, 8);
        let op = DmdSolver::new(&a, &b).unwrap().operator(3).unwrap();
        let dense = op.to_dense();
        for seed in 0..5 {
            let x = DVector::from_column_slice(random_matrix(7, 1, 100 + seed).as_slice());
            assert!((op.apply(&x) - &dense * &x).amax() <= 1e-10);
        }
        // Factors are orthonormal.
        let k = op.k();
        assert!((op.left().transpose() * op.left() - DMatrix::identity(k, k)).norm() <= 1e-10);
        assert!((op.right().transpose() * op.right() - DMatrix::identity(k, k)).norm() <= 1e-10);
    }

    struct FixedInit {
        g: DVector<f64>,
    }

    impl FullOrderModel for FixedInit {
        fn state_dim(&self) -> usize {
            self.g.len()
        }
        fn init(&self, _: &ModelParameters) -> Result<DVector<f64>> {
            Ok(self.g.clone())
        }
        fn step(&self, x: &DVector<f64>, _: &ModelParameters, _: usize) -> Result<DVector<f64>> {
            Ok(x.clone())
        }
    }

    fn dummy_theta() -> ModelParameters {
        ModelParameters::new(dvector![0.0], nalgebra::DVector::zeros(0), (0.0, 0.0)).unwrap()
    }

    #[test]
    fn identity_operator_propagates_initial_state() {
        let e = DMatrix::identity(3, 3);
        let op = LowRankOperator::new(e.clone(), DVector::from_element(3, 1.0), e).unwrap();
        let model = FixedInit { g: dvector![1.0, 2.0, 3.0] };
        let x = dmd_rom_simulate(&op, &model, &dummy_theta(), 4).unwrap();
        for t in 0..4 {
            assert!((x.state(t) - &model.g).amax() <= 1e-14);
        }
    }

    #[test]
    fn zero_operator_annihilates_after_first_step() {
        let e = DMatrix::identity(3, 3);
        let op = LowRankOperator::new(e.clone(), DVector::zeros(3), e).unwrap();
        let model = FixedInit { g: dvector![1.0, 2.0, 3.0] };
        let x = dmd_rom_simulate(&op, &model, &dummy_theta(), 4).unwrap();
        assert!((x.state(0) - &model.g).amax() <= 1e-14);
        for t in 1..4 {
            assert_eq!(x.state(t).amax(), 0.0);
        }
        let truth = Trajectory::new(random_matrix(3, 3, 9)).unwrap();
        let star = dmd_star_predict(&op, &truth).unwrap();
        assert_eq!(star.state(0), truth.state(0));
        assert_eq!(star.state(1).amax(), 0.0);
        assert_eq!(star.state(2).amax(), 0.0);
    }

    #[test]
    fn reduced_recursion_matches_dense_powers() {
        let a = random_matrix(6, 8, 10);
        let b = random_matrix(6, 8, 11);
        // Scale down so powers stay tame.
        let op = DmdSolver::new(&a, &b).unwrap().operator(3).unwrap();
        let dense = op.to_dense() * 0.5;
        let scaled = LowRankOperator::new(
            op.left().clone(),
            op.singular_values() * 0.5,
            op.right().clone(),
        )
        .unwrap();
        let g = dvector![1.0, -1.0, 0.5, 0.25, 2.0, -0.75];
        let model = FixedInit { g: g.clone() };
        let x = dmd_rom_simulate(&scaled, &model, &dummy_theta(), 4).unwrap();
        let mut expected = g.clone();
        for t in 1..4 {
            expected = &dense * expected;
            assert!((x.state(t) - &expected).amax() <= 1e-10, "mismatch at t = {t}");
        }
    }

    #[test]
    fn star_predictor_is_exact_on_linear_trajectories() {
        let a = random_matrix(4, 6, 12);
        let b = random_matrix(4, 6, 13);
        let op = DmdSolver::new(&a, &b).unwrap().operator(2).unwrap();
        // Build a trajectory that follows u exactly.
        let mut cols = vec![DVector::from_column_slice(random_matrix(4, 1, 14).as_slice())];
        for t in 1..4 {
            let prev = cols[t - 1].clone();
            cols.push(op.apply(&prev));
        }
        let x = Trajectory::from_columns(&cols).unwrap();
        let star = dmd_star_predict(&op, &x).unwrap();
        assert!((star.data() - x.data()).amax() <= 1e-12);
    }

    #[test]
    fn two_step_error_is_single_residual() {
        let a = random_matrix(4, 5, 15);
        let b = random_matrix(4, 5, 16);
        let op = DmdSolver::new(&a, &b).unwrap().operator(2).unwrap();
        let x = Trajectory::new(random_matrix(4, 2, 17)).unwrap();
        let star = dmd_star_predict(&op, &x).unwrap();
        let err = crate::matrix::frobenius_error(&x, &star).unwrap();
        let residual = (x.state(1) - op.apply(&x.state(0))).norm();
        assert_relative_eq!(err, residual, epsilon = 1e-13);
    }

    #[test]
    fn bound_constant_reference_values() {
        let e = DMatrix::identity(2, 2);
        let unit = LowRankOperator::new(e.clone(), DVector::from_element(2, 1.0), e.clone()).unwrap();
        // T = 2: single term 1 + 4*1 = 5 for any operator norm.
        assert_relative_eq!(bound_constant(&unit, 2).unwrap(), 5.0, epsilon = 1e-14);
        // T = 3 at unit norm: max(5 + 9, 9) = 14.
        assert_relative_eq!(bound_constant(&unit, 3).unwrap(), 14.0, epsilon = 1e-14);
        // Zero norm: only the k = t term survives; the max sits at t = T.
        let zero = LowRankOperator::new(e.clone(), DVector::zeros(2), e).unwrap();
        for t_len in [2usize, 3, 5] {
            assert_relative_eq!(
                bound_constant(&zero, t_len).unwrap(),
                (1 + 4 * (t_len - 1)) as f64,
                epsilon = 1e-14
            );
        }
        assert!(bound_constant(&unit, 1).is_err());
    }

    #[test]
    fn upper_bound_holds_on_random_instances() {
        // The lemma: |x - x~(u)|_F^2 <= c * sum_t |x_t - u x_{t-1}|^2 for the
        // linear recursion started at x_1.
        for seed in 0..10 {
            let a = random_matrix(4, 6, 20 + seed);
            let b = random_matrix(4, 6, 40 + seed);
            let op = DmdSolver::new(&a, &b).unwrap().operator(2).unwrap();
            let x = Trajectory::new(random_matrix(4, 5, 60 + seed)).unwrap();
            let t_len = x.len();
            // ROM trajectory from x_1.
            let mut cols = vec![x.state(0)];
            for t in 1..t_len {
                let prev = cols[t - 1].clone();
                cols.push(op.apply(&prev));
            }
            let rom = Trajectory::from_columns(&cols).unwrap();
            let rom_err_sq = crate::matrix::frobenius_error(&x, &rom).unwrap().powi(2);
            let one_step_sq: f64 = (1..t_len)
                .map(|t| (x.state(t) - op.apply(&x.state(t - 1))).norm_squared())
                .sum();
            let c = bound_constant(&op, t_len).unwrap();
            assert!(
                rom_err_sq <= c * one_step_sq * (1.0 + 1e-8) + 1e-12,
                "upper bound violated: {rom_err_sq} vs {}",
                c * one_step_sq
            );
        }
    }

    #[test]
    fn operator_round_trips_through_disk() {
        let dir = tempfile::tempdir().unwrap();
        let a = random_matrix(5, 7, 18);
        let b = random_matrix(5, 7, 19);
        let op = DmdSolver::new(&a, &b).unwrap().operator(2).unwrap();
        save_low_rank_operator(dir.path(), &op).unwrap();
        let back = load_low_rank_operator(dir.path()).unwrap();
        assert_eq!(back.left(), op.left());
        assert_eq!(back.right(), op.right());
        assert!((back.singular_values() - op.singular_values()).amax() <= 1e-15);
    }

    #[test]
    fn degenerate_inputs_are_rejected() {
        let zero = DMatrix::zeros(3, 4);
        let b = random_matrix(3, 4, 21);
        assert!(matches!(DmdSolver::new(&zero, &b), Err(Error::Config(_))));
        let a = random_matrix(3, 4, 22);
        let solver = DmdSolver::new(&a, &b).unwrap();
        assert!(solver.operator(0).is_err());
        assert!(solver.operator(4).is_err());
    }
}
