//! Holographic surface geometry, phase patterns, multipath channels and the
//! sum spectral efficiency objective.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal, Uniform};
use rayon::prelude::*;

use crate::error::{Error, Result};
use crate::linalg::{singular_values, CMatrix};
use crate::scalar::{Real, C};

/// Speed of light in vacuum (m/s).
pub const SPEED_OF_LIGHT: f64 = 299_792_458.0;

/// Default carrier frequency (Hz).
pub const DEFAULT_CARRIER_HZ: f64 = 30e9;

/// Default element spacing along both axes (m).
pub const DEFAULT_SPACING_M: f64 = 0.0025;

/// Default per-path gain variances: one line-of-sight and one scattered path.
pub const DEFAULT_PATH_VARIANCES: [f64; 2] = [1.0, 0.01];

/// Geometry of a holographic surface and its feeds.
#[derive(Clone, Debug, PartialEq)]
pub struct SurfaceConfig<T> {
    pub n_x: usize,
    pub n_y: usize,
    pub d_x: T,
    pub d_y: T,
    /// In-plane `(x, y)` positions of the feeds (m).
    pub feed_positions: Vec<[T; 2]>,
    pub carrier_freq: T,
    /// Magnitude of the surface (reference-wave) wave vector (rad/m).
    pub ks_mag: T,
}

impl<T: Real> SurfaceConfig<T> {
    /// Surface with the default 30 GHz carrier, quarter-wavelength spacing,
    /// `|k_s| = sqrt(3) k_f` and `n_feeds` feeds spread evenly along the
    /// `y = 0` edge.
    pub fn new(n_x: usize, n_y: usize, n_feeds: usize) -> Result<Self> {
        let d = T::lit(DEFAULT_SPACING_M);
        let f = T::lit(DEFAULT_CARRIER_HZ);
        let k_f = free_space_wavenumber(f);
        let cfg = Self {
            n_x,
            n_y,
            d_x: d,
            d_y: d,
            feed_positions: edge_feed_positions(n_x, d, n_feeds),
            carrier_freq: f,
            ks_mag: T::lit(3.0).sqrt() * k_f,
        };
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn validate(&self) -> Result<()> {
        if self.n_x == 0 || self.n_y == 0 {
            return Err(Error::arg("surface needs at least one element along each axis"));
        }
        if self.feed_positions.is_empty() {
            return Err(Error::arg("surface needs at least one feed"));
        }
        if !(self.d_x > T::zero() && self.d_y > T::zero()) {
            return Err(Error::arg("element spacing must be positive"));
        }
        if !(self.carrier_freq > T::zero()) || !self.carrier_freq.is_finite() {
            return Err(Error::arg("carrier frequency must be positive and finite"));
        }
        if !self.ks_mag.is_finite() || self.ks_mag < self.k_f() * (T::one() - T::epsilon() * T::lit(8.0)) {
            return Err(Error::arg(
                "surface wavenumber must be finite and at least the free-space wavenumber",
            ));
        }
        if self
            .feed_positions
            .iter()
            .any(|p| !p[0].is_finite() || !p[1].is_finite())
        {
            return Err(Error::arg("feed positions must be finite"));
        }
        Ok(())
    }

    #[inline]
    pub fn n_t(&self) -> usize {
        self.n_x * self.n_y
    }

    #[inline]
    pub fn n_feeds(&self) -> usize {
        self.feed_positions.len()
    }

    /// Free-space wavenumber `2 pi f / c`.
    pub fn k_f(&self) -> T {
        free_space_wavenumber(self.carrier_freq)
    }

    /// Position of element with flat index `i = m * n_y + n` (zero-based).
    pub fn element_position(&self, i: usize) -> [T; 2] {
        let (m, n) = (i / self.n_y, i % self.n_y);
        [T::from_count(m) * self.d_x, T::from_count(n) * self.d_y]
    }
}

fn free_space_wavenumber<T: Real>(f: T) -> T {
    T::lit(2.0) * T::PI() * f / T::lit(SPEED_OF_LIGHT)
}

/// Feeds equally spaced along the `y = 0` edge at `x = (l + 1/2) n_x d / L`.
pub fn edge_feed_positions<T: Real>(n_x: usize, d_x: T, n_feeds: usize) -> Vec<[T; 2]> {
    let width = T::from_count(n_x) * d_x;
    (0..n_feeds)
        .map(|l| {
            [
                (T::from_count(l) + T::lit(0.5)) * width / T::from_count(n_feeds),
                T::zero(),
            ]
        })
        .collect()
}

/// Phase pattern `M_p` (`N_t x L`): phase of each feed's reference wave at each element.
#[derive(Clone, Debug, PartialEq)]
pub struct PhasePattern<T> {
    matrix: CMatrix<T>,
}

impl<T: Real> PhasePattern<T> {
    /// Wraps an arbitrary matrix; used for permuted or synthetic patterns.
    pub fn from_matrix(matrix: CMatrix<T>) -> Self {
        Self { matrix }
    }

    #[inline]
    pub fn matrix(&self) -> &CMatrix<T> {
        &self.matrix
    }

    pub fn into_matrix(self) -> CMatrix<T> {
        self.matrix
    }

    pub fn n_t(&self) -> usize {
        self.matrix.rows()
    }

    pub fn n_rf(&self) -> usize {
        self.matrix.cols()
    }

    /// Ratio of smallest to largest singular value.
    pub fn conditioning_ratio(&self) -> T {
        let sv = singular_values(&self.matrix);
        match (sv.first(), sv.last()) {
            (Some(&hi), Some(&lo)) if hi > T::zero() => lo / hi,
            _ => T::zero(),
        }
    }
}

/// `[M_p]_{i,l} = exp(-j |k_s| dist(feed_l, element_i))`.
pub fn build_phase_pattern<T: Real>(cfg: &SurfaceConfig<T>) -> Result<PhasePattern<T>> {
    cfg.validate()?;
    let matrix = CMatrix::from_fn(cfg.n_t(), cfg.n_feeds(), |i, l| {
        let [ex, ey] = cfg.element_position(i);
        let [fx, fy] = cfg.feed_positions[l];
        let dist = ((ex - fx).powi(2) + (ey - fy).powi(2)).sqrt();
        C::from_polar(T::one(), -cfg.ks_mag * dist)
    });
    Ok(PhasePattern { matrix })
}

/// Unit-norm transmit steering vector for azimuth `theta` and elevation `phi`.
pub fn steering_vector<T: Real>(cfg: &SurfaceConfig<T>, theta: T, phi: T) -> Vec<C<T>> {
    let n_t = cfg.n_t();
    let amp = (T::one() / T::from_count(n_t)).sqrt();
    let k_f = cfg.k_f();
    let (ux, uy) = (theta.sin() * phi.cos(), theta.sin() * phi.sin());
    (0..n_t)
        .map(|i| {
            let [x, y] = cfg.element_position(i);
            C::from_polar(amp, k_f * (x * ux + y * uy))
        })
        .collect()
}

/// One propagation path: complex gain and departure angles.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Path<T> {
    pub gain: C<T>,
    pub theta: T,
    pub phi: T,
}

/// Paths for every user, `paths[k][i]`.
#[derive(Clone, Debug, PartialEq)]
pub struct PathSet<T> {
    pub paths: Vec<Vec<Path<T>>>,
}

impl<T> PathSet<T> {
    pub fn n_users(&self) -> usize {
        self.paths.len()
    }
}

/// Draws `gain_variances.len()` paths per user for `n_users` users.
///
/// Gains are circularly-symmetric complex Gaussian with the given variance,
/// angles uniform on the open interval `(-pi/2, pi/2)`.
pub fn sample_paths<T: Real, R: Rng + ?Sized>(n_users: usize, gain_variances: &[T], rng: &mut R) -> Result<PathSet<T>> {
    if gain_variances.is_empty() {
        return Err(Error::arg("at least one path per user is required"));
    }
    if gain_variances.iter().any(|v| !(*v > T::zero()) || !v.is_finite()) {
        return Err(Error::arg("path gain variances must be positive and finite"));
    }
    let half_pi = std::f64::consts::FRAC_PI_2;
    let angle = Uniform::new(-half_pi, half_pi);
    let draw_angle = |rng: &mut R| loop {
        let x: f64 = angle.sample(rng);
        if x > -half_pi {
            return T::lit(x);
        }
    };
    let mut paths = Vec::with_capacity(n_users);
    for _ in 0..n_users {
        let mut user = Vec::with_capacity(gain_variances.len());
        for &var in gain_variances {
            let sd = (var.to_f64_lossy() / 2.0).sqrt();
            let re: f64 = StandardNormal.sample(rng);
            let im: f64 = StandardNormal.sample(rng);
            let gain = C::new(T::lit(re * sd), T::lit(im * sd));
            let theta = draw_angle(rng);
            let phi = draw_angle(rng);
            user.push(Path { gain, theta, phi });
        }
        paths.push(user);
    }
    Ok(PathSet { paths })
}

/// `h_k = sqrt(N_t / I) sum_i alpha_i^k b(theta_i^k, phi_i^k)`, stacked as columns.
pub fn assemble_channel<T: Real>(cfg: &SurfaceConfig<T>, paths: &PathSet<T>) -> Result<CMatrix<T>> {
    let n_t = cfg.n_t();
    let mut h = CMatrix::zeros(n_t, paths.n_users());
    for (k, user) in paths.paths.iter().enumerate() {
        if user.is_empty() {
            return Err(Error::arg(format!("user {k} has no paths")));
        }
        let scale = (T::from_count(n_t) / T::from_count(user.len())).sqrt();
        for p in user {
            let b = steering_vector(cfg, p.theta, p.phi);
            for (i, bi) in b.into_iter().enumerate() {
                h[(i, k)] = h[(i, k)] + p.gain * bi * scale;
            }
        }
    }
    Ok(h)
}

/// Noise variance for a transmit SNR in dB with unit power budget.
pub fn noise_var_from_snr_db<T: Real>(snr_db: T) -> T {
    T::lit(10.0).powf(-snr_db / T::lit(10.0))
}

/// One channel realisation with its noise level and power budget.
#[derive(Clone, Debug, PartialEq)]
pub struct ChannelSample<T> {
    /// `N_t x K`, column `k` is `h_k`.
    pub h: CMatrix<T>,
    pub noise_var: T,
    pub p_max: T,
    pub paths: Option<PathSet<T>>,
}

impl<T: Real> ChannelSample<T> {
    pub fn new(h: CMatrix<T>, noise_var: T, p_max: T) -> Result<Self> {
        if !(noise_var > T::zero()) {
            return Err(Error::arg("noise variance must be positive"));
        }
        if !(p_max > T::zero()) {
            return Err(Error::arg("power budget must be positive"));
        }
        Ok(Self {
            h,
            noise_var,
            p_max,
            paths: None,
        })
    }

    pub fn n_t(&self) -> usize {
        self.h.rows()
    }

    pub fn n_users(&self) -> usize {
        self.h.cols()
    }
}

/// Draws one sample: paths, channel, and noise level for `snr_db`.
pub fn sample_channel<T: Real, R: Rng + ?Sized>(
    cfg: &SurfaceConfig<T>,
    n_users: usize,
    gain_variances: &[T],
    snr_db: T,
    rng: &mut R,
) -> Result<ChannelSample<T>> {
    let paths = sample_paths(n_users, gain_variances, rng)?;
    let h = assemble_channel(cfg, &paths)?;
    let mut sample = ChannelSample::new(h, noise_var_from_snr_db(snr_db), T::one())?;
    sample.paths = Some(paths);
    Ok(sample)
}

/// `count` samples drawn independently; sample `i` uses its own stream of a
/// ChaCha generator seeded with `seed`, so the result does not depend on
/// how the work is scheduled.
pub fn generate_samples<T: Real>(
    cfg: &SurfaceConfig<T>,
    n_users: usize,
    gain_variances: &[T],
    snr_db: T,
    count: usize,
    seed: u64,
) -> Result<Vec<ChannelSample<T>>> {
    cfg.validate()?;
    (0..count)
        .into_par_iter()
        .map(|i| {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            rng.set_stream(i as u64);
            sample_channel(cfg, n_users, gain_variances, snr_db, &mut rng)
        })
        .collect()
}

/// Cross gains `g[k][j] = h_k^H diag(a) v_{e,j}` as a `K x K` matrix.
pub(crate) fn cross_gains<T: Real>(h: &CMatrix<T>, a: &[T], ve: &CMatrix<T>) -> CMatrix<T> {
    let k_users = h.cols();
    let mut g = CMatrix::zeros(k_users, ve.cols());
    for n in 0..h.rows() {
        let an = a[n];
        let h_row = h.row(n);
        let v_row = ve.row(n);
        for (k, hk) in h_row.iter().enumerate() {
            let w = hk.conj() * an;
            let g_row = g.row_mut(k);
            for (gj, vj) in g_row.iter_mut().zip(v_row) {
                *gj = *gj + w * *vj;
            }
        }
    }
    g
}

fn check_dims<T: Real>(h: &CMatrix<T>, a: &[T], ve: &CMatrix<T>, noise_var: T) -> Result<()> {
    if !(noise_var > T::zero()) {
        return Err(Error::arg("noise variance must be positive"));
    }
    if a.len() != h.rows() || ve.rows() != h.rows() {
        return Err(Error::dim(format!(
            "channel has {} antennas, amplitudes {}, beamformer rows {}",
            h.rows(),
            a.len(),
            ve.rows()
        )));
    }
    if ve.cols() != h.cols() {
        return Err(Error::dim(format!(
            "channel has {} users, beamformer {} columns",
            h.cols(),
            ve.cols()
        )));
    }
    Ok(())
}

pub(crate) fn rate_from_gains<T: Real>(g: &CMatrix<T>, noise_var: T) -> T {
    let k_users = g.rows();
    let mut total = T::zero();
    for k in 0..k_users {
        let row = g.row(k);
        let signal = row[k].norm_sqr();
        let interference: T = row
            .iter()
            .enumerate()
            .filter(|(j, _)| *j != k)
            .map(|(_, z)| z.norm_sqr())
            .sum();
        total = total + (T::one() + signal / (interference + noise_var)).log2();
    }
    total
}

/// Sum spectral efficiency (bits/s/Hz) in terms of the equivalent beamformer `V_e`.
pub fn sum_rate_equiv<T: Real>(h: &CMatrix<T>, a: &[T], ve: &CMatrix<T>, noise_var: T) -> Result<T> {
    check_dims(h, a, ve, noise_var)?;
    Ok(rate_from_gains(&cross_gains(h, a, ve), noise_var))
}

/// Sum spectral efficiency of the holographic beamformer `a` and digital beamformer `V`.
pub fn sum_rate<T: Real>(h: &CMatrix<T>, a: &[T], m_p: &PhasePattern<T>, v: &CMatrix<T>, noise_var: T) -> Result<T> {
    if m_p.n_rf() != v.rows() || m_p.n_t() != h.rows() {
        return Err(Error::dim(format!(
            "phase pattern is {}x{}, digital beamformer has {} rows, channel {} rows",
            m_p.n_t(),
            m_p.n_rf(),
            v.rows(),
            h.rows()
        )));
    }
    sum_rate_equiv(h, a, &m_p.matrix().matmul(v), noise_var)
}

/// Transmit power `||diag(a) V_e||_F^2`.
pub fn transmit_power<T: Real>(a: &[T], ve: &CMatrix<T>) -> T {
    (0..ve.rows())
        .map(|n| a[n] * a[n] * ve.row(n).iter().map(|z| z.norm_sqr()).sum::<T>())
        .sum()
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn cfg(nx: usize, ny: usize, l: usize) -> SurfaceConfig<f64> {
        SurfaceConfig::new(nx, ny, l).unwrap()
    }

    #[test]
    fn rejects_invalid_geometry() {
        assert!(SurfaceConfig::<f64>::new(0, 3, 1).is_err());
        assert!(SurfaceConfig::<f64>::new(3, 3, 0).is_err());
        let mut c = cfg(2, 2, 1);
        c.feed_positions[0][0] = f64::NAN;
        assert!(build_phase_pattern(&c).is_err());
        let mut c = cfg(2, 2, 1);
        c.ks_mag = c.k_f() * 0.5;
        assert!(c.validate().is_err());
    }

    #[test]
    fn feed_on_element_has_zero_phase() {
        let mut c = cfg(3, 3, 1);
        c.feed_positions = vec![c.element_position(4)];
        let mp = build_phase_pattern(&c).unwrap();
        assert_eq!(mp.matrix()[(4, 0)], C::new(1.0, 0.0));
    }

    #[test]
    fn phase_follows_distance() {
        let mut c = cfg(2, 1, 1);
        c.feed_positions = vec![[0.0, 0.0]];
        let mp = build_phase_pattern(&c).unwrap();
        let expected = C::from_polar(1.0, -(3f64).sqrt() * c.k_f() * c.d_x);
        assert!((mp.matrix()[(1, 0)] - expected).norm() < 1e-12);
    }

    #[test]
    fn default_feeds_sit_on_bottom_edge() {
        let c = cfg(4, 4, 2);
        let w = 4.0 * DEFAULT_SPACING_M;
        assert!((c.feed_positions[0][0] - w / 4.0).abs() < 1e-15);
        assert!((c.feed_positions[1][0] - 3.0 * w / 4.0).abs() < 1e-15);
        assert_eq!(c.feed_positions[1][1], 0.0);
    }

    #[test]
    fn steering_broadside_is_uniform() {
        let c = cfg(3, 2, 1);
        let b = steering_vector(&c, 0.0, 1.3);
        let amp = (1.0 / 6.0f64).sqrt();
        for z in b {
            assert!((z - C::new(amp, 0.0)).norm() < 1e-15);
        }
        assert_eq!(steering_vector(&cfg(1, 1, 1), 0.7, -0.2).len(), 1);
        assert!((steering_vector(&cfg(1, 1, 1), 0.7, -0.2)[0] - C::new(1.0, 0.0)).norm() < 1e-15);
    }

    #[test]
    fn steering_half_wavelength_endfire() {
        let mut c = cfg(2, 1, 1);
        let lambda = SPEED_OF_LIGHT / c.carrier_freq;
        c.d_x = lambda / 2.0;
        let b = steering_vector(&c, std::f64::consts::FRAC_PI_2, 0.0);
        let s = 1.0 / 2f64.sqrt();
        assert!((b[0] - C::new(s, 0.0)).norm() < 1e-12);
        assert!((b[1] - C::new(-s, 0.0)).norm() < 1e-12);
    }

    #[test]
    fn sample_paths_is_deterministic_and_validates() {
        let mut r1 = ChaCha8Rng::seed_from_u64(5);
        let mut r2 = ChaCha8Rng::seed_from_u64(5);
        let a = sample_paths::<f64, _>(3, &[1.0, 0.01], &mut r1).unwrap();
        let b = sample_paths::<f64, _>(3, &[1.0, 0.01], &mut r2).unwrap();
        assert_eq!(a, b);
        assert!(sample_paths::<f64, _>(3, &[1.0, 0.0], &mut r1).is_err());
        assert!(sample_paths::<f64, _>(3, &[], &mut r1).is_err());
    }

    #[test]
    fn single_broadside_path_gives_all_ones() {
        let c = cfg(3, 3, 1);
        let paths = PathSet {
            paths: vec![vec![Path {
                gain: C::new(1.0, 0.0),
                theta: 0.0,
                phi: 0.4,
            }]],
        };
        let h = assemble_channel(&c, &paths).unwrap();
        for i in 0..9 {
            assert!((h[(i, 0)] - C::new(1.0, 0.0)).norm() < 1e-14);
        }
    }

    #[test]
    fn sum_rate_scalar_case() {
        let h = CMatrix::from_vec(1, 1, vec![C::new(1.0, 0.0)]).unwrap();
        let mp = PhasePattern::from_matrix(CMatrix::identity(1));
        let v = CMatrix::identity(1);
        let r: f64 = sum_rate(&h, &[1.0], &mp, &v, 1.0).unwrap();
        assert!((r - 1.0).abs() < 1e-15);
        let zero = CMatrix::zeros(1, 1);
        assert_eq!(sum_rate(&h, &[1.0], &mp, &zero, 1.0).unwrap(), 0.0);
        assert!(sum_rate(&h, &[1.0], &mp, &v, 0.0).is_err());
    }

    #[test]
    fn sum_rate_rejects_mismatched_dims() {
        let h = CMatrix::<f64>::zeros(4, 2);
        let ve = CMatrix::<f64>::zeros(4, 3);
        assert!(sum_rate_equiv(&h, &[1.0; 4], &ve, 1.0).is_err());
        assert!(sum_rate_equiv(&h, &[1.0; 3], &CMatrix::zeros(4, 2), 1.0).is_err());
    }

    #[test]
    fn snr_conversion() {
        assert!((noise_var_from_snr_db(20.0f64) - 0.01).abs() < 1e-15);
        assert!((noise_var_from_snr_db(0.0f64) - 1.0).abs() < 1e-15);
    }
}
