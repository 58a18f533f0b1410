//! Linear-Gaussian observation model `p(y_t | x_t) = N(h x_t, zeta^2 I_m)`.
//!
//! The benchmark operator `h` is an ideal low-pass filter degrading each
//! physical field's resolution by an integer factor per axis: 2-D FFT, drop
//! every mode above the Nyquist band of the coarse grid, inverse FFT on the
//! coarse grid. Buoyancy and temperature are filtered independently and then
//! re-stacked. The operator is realized implicitly; a dense materialization
//! is available for tests.

use nalgebra::{DMatrix, DVector};
use rand::Rng;
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;

use crate::error::{Error, Result};
use crate::fft::{bin_of, signed_freq, Fft2d, Spectrum};
use crate::matrix::{thin_svd, Trajectory};
use crate::rb::Grid;

/// Linear observation operator with isotropic Gaussian noise.
pub trait ObservationOperator: Sync {
    fn state_dim(&self) -> usize;
    fn obs_dim(&self) -> usize;

    /// Noise standard deviation (state units).
    fn zeta(&self) -> f64;

    /// h x
    fn apply(&self, x: &DVector<f64>) -> DVector<f64>;

    /// Moore-Penrose pseudo-inverse h' y.
    fn pseudo_inverse(&self, y: &DVector<f64>) -> DVector<f64>;

    /// Dense m x n realization, column by column. Intended for tests.
    fn materialize_dense(&self) -> DMatrix<f64> {
        let (m, n) = (self.obs_dim(), self.state_dim());
        let mut h = DMatrix::zeros(m, n);
        let mut e = DVector::zeros(n);
        for j in 0..n {
            e[j] = 1.0;
            h.set_column(j, &self.apply(&e));
            e[j] = 0.0;
        }
        h
    }
}

/// Ideal low-pass restriction of the two stacked fields.
pub struct LowpassObservation {
    grid: Grid,
    factor: usize,
    zeta: f64,
    fft_fine: Fft2d,
    fft_coarse: Fft2d,
}

/// Builds the noiseless low-pass operator for a grid. `factor` halves (or
/// more) the resolution along both axes and must divide both extents.
pub fn build_lowpass(grid: &Grid, factor: usize) -> Result<LowpassObservation> {
    if factor < 2 {
        return Err(Error::Config(format!(
            "downsampling factor must be at least 2, got {factor}"
        )));
    }
    if grid.n1 % factor != 0 || grid.n2 % factor != 0 || grid.n1 / factor < 2 || grid.n2 / factor < 2
    {
        return Err(Error::Config(format!(
            "factor {factor} does not divide the {}x{} grid into a usable coarse grid",
            grid.n1, grid.n2
        )));
    }
    Ok(LowpassObservation {
        grid: grid.clone(),
        factor,
        zeta: 0.0,
        fft_fine: Fft2d::new(grid.n1, grid.n2),
        fft_coarse: Fft2d::new(grid.n1 / factor, grid.n2 / factor),
    })
}

impl LowpassObservation {
    pub fn with_zeta(mut self, zeta: f64) -> Result<Self> {
        if !(zeta >= 0.0) {
            return Err(Error::Config(format!("zeta must be non-negative, got {zeta}")));
        }
        self.zeta = zeta;
        Ok(self)
    }

    pub fn coarse_shape(&self) -> (usize, usize) {
        (self.grid.n1 / self.factor, self.grid.n2 / self.factor)
    }

    /// Restricts one fine field to the coarse grid. Modes at exactly the
    /// coarse Nyquist frequency aggregate their two fine-grid bins, which
    /// keeps `restrict . prolong` equal to the identity on the coarse grid.
    fn restrict(&self, field: &DMatrix<f64>) -> DMatrix<f64> {
        let (n1, n2) = (self.grid.n1, self.grid.n2);
        let (m1, m2) = self.coarse_shape();
        let fine = self.fft_fine.forward(field);
        let mut coarse: Spectrum = DMatrix::zeros(m1, m2);
        for k1 in 0..n1 {
            let f1 = signed_freq(k1, n1);
            if f1.unsigned_abs() as usize > m1 / 2 {
                continue;
            }
            for k2 in 0..n2 {
                let f2 = signed_freq(k2, n2);
                if f2.unsigned_abs() as usize > m2 / 2 {
                    continue;
                }
                coarse[(bin_of(f1, m1), bin_of(f2, m2))] += fine[(k1, k2)];
            }
        }
        self.fft_coarse.inverse(&coarse)
    }

    /// Adjoint prolongation: zero-pad the coarse spectrum onto the fine grid,
    /// splitting coarse Nyquist bins evenly between their two fine bins.
    fn prolong(&self, coarse_field: &DMatrix<f64>) -> DMatrix<f64> {
        let (n1, n2) = (self.grid.n1, self.grid.n2);
        let (m1, m2) = self.coarse_shape();
        let coarse = self.fft_coarse.forward(coarse_field);
        let mut fine: Spectrum = DMatrix::zeros(n1, n2);
        let split = |q: usize, m: usize| -> Vec<(i64, f64)> {
            let f = signed_freq(q, m);
            if f.unsigned_abs() as usize == m / 2 {
                vec![(f, 0.5), (-f, 0.5)]
            } else {
                vec![(f, 1.0)]
            }
        };
        for q1 in 0..m1 {
            for q2 in 0..m2 {
                let v = coarse[(q1, q2)];
                for &(f1, w1) in &split(q1, m1) {
                    for &(f2, w2) in &split(q2, m2) {
                        fine[(bin_of(f1, n1), bin_of(f2, n2))] += v * (w1 * w2);
                    }
                }
            }
        }
        self.fft_fine.inverse(&fine)
    }

    fn fine_field(&self, x: &DVector<f64>, which: usize) -> DMatrix<f64> {
        let p = self.grid.points();
        DMatrix::from_column_slice(
            self.grid.n1,
            self.grid.n2,
            &x.as_slice()[which * p..(which + 1) * p],
        )
    }
}

impl ObservationOperator for LowpassObservation {
    fn state_dim(&self) -> usize {
        self.grid.state_dim()
    }

    fn obs_dim(&self) -> usize {
        let (m1, m2) = self.coarse_shape();
        2 * m1 * m2
    }

    fn zeta(&self) -> f64 {
        self.zeta
    }

    fn apply(&self, x: &DVector<f64>) -> DVector<f64> {
        assert_eq!(x.len(), self.state_dim(), "state dimension mismatch");
        let (m1, m2) = self.coarse_shape();
        let mp = m1 * m2;
        let mut y = DVector::zeros(2 * mp);
        for which in 0..2 {
            let coarse = self.restrict(&self.fine_field(x, which));
            y.rows_mut(which * mp, mp).copy_from_slice(coarse.as_slice());
        }
        y
    }

    fn pseudo_inverse(&self, y: &DVector<f64>) -> DVector<f64> {
        assert_eq!(y.len(), self.obs_dim(), "observation dimension mismatch");
        let (m1, m2) = self.coarse_shape();
        let mp = m1 * m2;
        let p = self.grid.points();
        let mut x = DVector::zeros(2 * p);
        for which in 0..2 {
            let coarse =
                DMatrix::from_column_slice(m1, m2, &y.as_slice()[which * mp..(which + 1) * mp]);
            let fine = self.prolong(&coarse);
            x.rows_mut(which * p, p).copy_from_slice(fine.as_slice());
        }
        x
    }
}

/// Explicit dense observation operator; used by the small closed-form test
/// problems.
pub struct DenseObservation {
    h: DMatrix<f64>,
    pinv: DMatrix<f64>,
    zeta: f64,
}

impl DenseObservation {
    pub fn new(h: DMatrix<f64>, zeta: f64) -> Result<Self> {
        if !(zeta >= 0.0) {
            return Err(Error::Config(format!("zeta must be non-negative, got {zeta}")));
        }
        let svd = thin_svd(&h)?;
        let cutoff = 1e-12 * svd.s.max();
        let inv_s = DVector::from_iterator(
            svd.s.len(),
            svd.s.iter().map(|&s| if s > cutoff { 1.0 / s } else { 0.0 }),
        );
        let pinv = &svd.v * DMatrix::from_diagonal(&inv_s) * svd.u.transpose();
        Ok(Self { h, pinv, zeta })
    }
}

impl ObservationOperator for DenseObservation {
    fn state_dim(&self) -> usize {
        self.h.ncols()
    }
    fn obs_dim(&self) -> usize {
        self.h.nrows()
    }
    fn zeta(&self) -> f64 {
        self.zeta
    }
    fn apply(&self, x: &DVector<f64>) -> DVector<f64> {
        &self.h * x
    }
    fn pseudo_inverse(&self, y: &DVector<f64>) -> DVector<f64> {
        &self.pinv * y
    }
    fn materialize_dense(&self) -> DMatrix<f64> {
        self.h.clone()
    }
}

/// m x T matrix of noisy low-pass observations.
#[derive(Clone, Debug, PartialEq)]
pub struct ObservationSequence {
    data: DMatrix<f64>,
}

impl ObservationSequence {
    pub fn new(data: DMatrix<f64>) -> Result<Self> {
        if data.iter().any(|v| !v.is_finite()) {
            return Err(Error::Config("non-finite observation entry".into()));
        }
        Ok(Self { data })
    }

    pub fn data(&self) -> &DMatrix<f64> {
        &self.data
    }

    pub fn dim(&self) -> usize {
        self.data.nrows()
    }

    pub fn len(&self) -> usize {
        self.data.ncols()
    }

    pub fn is_empty(&self) -> bool {
        self.data.ncols() == 0
    }

    pub fn column(&self, t: usize) -> DVector<f64> {
        self.data.column(t).into_owned()
    }

    pub fn peak_abs(&self) -> f64 {
        self.data.amax()
    }
}

/// Observes every state of a trajectory: `y_t = h x_t + zeta w_t` with
/// standard normal `w_t` drawn from the supplied stream.
pub fn observe(
    x: &Trajectory,
    op: &dyn ObservationOperator,
    rng: &mut ChaCha8Rng,
) -> Result<ObservationSequence> {
    if x.state_dim() != op.state_dim() {
        return Err(Error::Dimension(format!(
            "trajectory state dimension {} does not match operator {}",
            x.state_dim(),
            op.state_dim()
        )));
    }
    let zeta = op.zeta();
    let mut data = DMatrix::zeros(op.obs_dim(), x.len());
    for t in 0..x.len() {
        let mut y = op.apply(&x.state(t));
        if zeta > 0.0 {
            for v in y.iter_mut() {
                let w: f64 = rng.sample(StandardNormal);
                *v += zeta * w;
            }
        }
        data.set_column(t, &y);
    }
    ObservationSequence::new(data)
}

/// Gaussian log-density of one observation given one state:
/// `-|y - h x|^2 / (2 zeta^2) - (m/2) log(2 pi zeta^2)`.
pub fn log_likelihood(
    y_t: &DVector<f64>,
    x_t: &DVector<f64>,
    op: &dyn ObservationOperator,
) -> Result<f64> {
    let zeta = op.zeta();
    if zeta <= 0.0 {
        return Err(Error::DegenerateLikelihood);
    }
    let residual = y_t - op.apply(x_t);
    let m = op.obs_dim() as f64;
    Ok(-residual.norm_squared() / (2.0 * zeta * zeta)
        - 0.5 * m * (2.0 * std::f64::consts::PI * zeta * zeta).ln())
}

/// Noise level inducing a given peak-signal-to-noise ratio over the
/// noiseless observations: `zeta = max |y| / 10^(psnr/20)`.
pub fn calibrate_noise(clean_obs: &ObservationSequence, psnr_db: f64) -> Result<f64> {
    let peak = clean_obs.peak_abs();
    if peak == 0.0 {
        return Err(Error::Calibration(
            "cannot calibrate against all-zero observations".into(),
        ));
    }
    Ok(peak / 10f64.powf(psnr_db / 20.0))
}
