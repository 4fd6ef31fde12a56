//! Executable checks of the permutation properties: 3D permutation
//! equivariance of the full pipeline, joint PE/PI of the network, PE of the
//! two projection stages, and permutation invariance of the KKT residuals.
//!
//! Permutations are index vectors applied by gather: `(P^T x)_i = x[p[i]]`.

use rand::seq::SliceRandom;
use rand::Rng;
use rand_distr::{Distribution, StandardNormal};

use crate::ao::kkt_residuals;
use crate::beamform::{normalize_power, project_to_range};
use crate::error::{Error, Result};
use crate::ggnn::GgnnOutput;
use crate::holo::PhasePattern;
use crate::linalg::CMatrix;
use crate::scalar::{Real, C};

/// Permutations of users, antennas and RF chains.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct PermTriple {
    pub users: Vec<usize>,
    pub antennas: Vec<usize>,
    pub rf: Vec<usize>,
}

fn check_perm(p: &[usize], what: &str) -> Result<()> {
    let mut seen = vec![false; p.len()];
    for &i in p {
        if i >= p.len() || seen[i] {
            return Err(Error::InvalidPermutation(format!(
                "{what} permutation {p:?} is not a bijection"
            )));
        }
        seen[i] = true;
    }
    Ok(())
}

fn invert(p: &[usize]) -> Vec<usize> {
    let mut inv = vec![0; p.len()];
    for (i, &j) in p.iter().enumerate() {
        inv[j] = i;
    }
    inv
}

fn gather<T: Copy>(x: &[T], p: &[usize]) -> Vec<T> {
    p.iter().map(|&i| x[i]).collect()
}

impl PermTriple {
    pub fn new(users: Vec<usize>, antennas: Vec<usize>, rf: Vec<usize>) -> Result<Self> {
        let t = Self { users, antennas, rf };
        t.validate()?;
        Ok(t)
    }

    pub fn identity(n_users: usize, n_t: usize, n_rf: usize) -> Self {
        Self {
            users: (0..n_users).collect(),
            antennas: (0..n_t).collect(),
            rf: (0..n_rf).collect(),
        }
    }

    /// Uniformly random permutations of each index set.
    pub fn random<R: Rng + ?Sized>(n_users: usize, n_t: usize, n_rf: usize, rng: &mut R) -> Self {
        let mut t = Self::identity(n_users, n_t, n_rf);
        t.users.shuffle(rng);
        t.antennas.shuffle(rng);
        t.rf.shuffle(rng);
        t
    }

    pub fn validate(&self) -> Result<()> {
        check_perm(&self.users, "user")?;
        check_perm(&self.antennas, "antenna")?;
        check_perm(&self.rf, "RF-chain")
    }

    pub fn inverse(&self) -> Self {
        Self {
            users: invert(&self.users),
            antennas: invert(&self.antennas),
            rf: invert(&self.rf),
        }
    }

    fn check_sizes(&self, n_t: usize, n_users: usize, n_rf: usize) -> Result<()> {
        self.validate()?;
        if self.antennas.len() != n_t || self.users.len() != n_users || self.rf.len() != n_rf {
            return Err(Error::dim(format!(
                "permutation sizes (N_t {}, K {}, L {}) do not match data (N_t {n_t}, K {n_users}, L {n_rf})",
                self.antennas.len(),
                self.users.len(),
                self.rf.len()
            )));
        }
        Ok(())
    }

    /// `P_Nt^T a`.
    pub fn permute_amplitudes<T: Copy>(&self, a: &[T]) -> Vec<T> {
        gather(a, &self.antennas)
    }

    /// `P_RF^T V P_K`.
    pub fn permute_digital<T: Real>(&self, v: &CMatrix<T>) -> CMatrix<T> {
        v.gather_rows(&self.rf).gather_cols(&self.users)
    }

    /// `P_Nt^T V_e P_K` (also used for the channel).
    pub fn permute_equivalent<T: Real>(&self, ve: &CMatrix<T>) -> CMatrix<T> {
        ve.gather_rows(&self.antennas).gather_cols(&self.users)
    }

    /// `P_Nt^T M_p P_RF`.
    pub fn permute_pattern<T: Real>(&self, m_p: &CMatrix<T>) -> CMatrix<T> {
        m_p.gather_rows(&self.antennas).gather_cols(&self.rf)
    }
}

/// `(P_Nt^T H P_K, P_Nt^T M_p P_RF)`.
pub fn permute_inputs<T: Real>(
    h: &CMatrix<T>,
    m_p: &PhasePattern<T>,
    perms: &PermTriple,
) -> Result<(CMatrix<T>, PhasePattern<T>)> {
    if h.rows() != m_p.n_t() {
        return Err(Error::dim(format!(
            "channel has {} rows, phase pattern {}",
            h.rows(),
            m_p.n_t()
        )));
    }
    perms.check_sizes(h.rows(), h.cols(), m_p.n_rf())?;
    Ok((
        perms.permute_equivalent(h),
        PhasePattern::from_matrix(perms.permute_pattern(m_p.matrix())),
    ))
}

/// Outcome of one permutation check.
#[derive(Clone, Debug, PartialEq)]
pub struct CheckReport {
    /// Max absolute entrywise difference after alignment.
    pub max_discrepancy: f64,
    pub tol: f64,
    pub passed: bool,
}

impl CheckReport {
    fn new(max_discrepancy: f64, tol: f64) -> Self {
        Self {
            max_discrepancy,
            tol,
            passed: max_discrepancy <= tol,
        }
    }
}

fn max_diff_vec<T: Real>(x: &[T], y: &[T]) -> f64 {
    x.iter()
        .zip(y)
        .map(|(a, b)| (*a - *b).abs().to_f64_lossy())
        .fold(0.0, f64::max)
}

/// Full-pipeline 3DPE: running on permuted inputs must give `(P_Nt^T a, P_RF^T V P_K)`.
///
/// `pipeline` maps `(H, M_p)` to `(a, V)`.
pub fn check_3dpe<T: Real, F>(
    pipeline: F,
    h: &CMatrix<T>,
    m_p: &PhasePattern<T>,
    perms: &PermTriple,
    tol: f64,
) -> Result<CheckReport>
where
    F: Fn(&CMatrix<T>, &PhasePattern<T>) -> Result<(Vec<T>, CMatrix<T>)>,
{
    let (hp, mpp) = permute_inputs(h, m_p, perms)?;
    let (a, v) = pipeline(h, m_p)?;
    let (ap, vp) = pipeline(&hp, &mpp)?;
    let d_a = max_diff_vec(&ap, &perms.permute_amplitudes(&a));
    let d_v = vp.max_abs_diff(&perms.permute_digital(&v)).to_f64_lossy();
    Ok(CheckReport::new(d_a.max(d_v), tol))
}

/// Network PEPI: antenna and user permutations equivary `(a, V_e)`, RF
/// permutations leave them unchanged.
pub fn check_pepi_ggnn<T: Real, F>(
    forward: F,
    h: &CMatrix<T>,
    m_p: &PhasePattern<T>,
    perms: &PermTriple,
    tol: f64,
) -> Result<CheckReport>
where
    F: Fn(&CMatrix<T>, &PhasePattern<T>) -> Result<GgnnOutput<T>>,
{
    let (hp, mpp) = permute_inputs(h, m_p, perms)?;
    let base = forward(h, m_p)?;
    let perm = forward(&hp, &mpp)?;
    let d_a = max_diff_vec(&perm.a, &perms.permute_amplitudes(&base.a));
    let d_v = perm.ve.max_abs_diff(&perms.permute_equivalent(&base.ve)).to_f64_lossy();
    Ok(CheckReport::new(d_a.max(d_v), tol))
}

/// Projection-stage PE, reported separately for the range projection and
/// the power normalisation.
#[derive(Clone, Debug, PartialEq)]
pub struct ProjectionReport {
    pub projection: CheckReport,
    pub normalization: CheckReport,
}

impl ProjectionReport {
    pub fn passed(&self) -> bool {
        self.projection.passed && self.normalization.passed
    }

    pub fn max_discrepancy(&self) -> f64 {
        self.projection.max_discrepancy.max(self.normalization.max_discrepancy)
    }
}

/// `M_p^+ V_e` and `normalize(V~, a, M_p)` both map permuted inputs to
/// `P_RF^T (.) P_K` of the base output.
pub fn check_projection_pe<T: Real>(
    ve: &CMatrix<T>,
    a: &[T],
    m_p: &PhasePattern<T>,
    p_max: T,
    perms: &PermTriple,
    tol: f64,
) -> Result<ProjectionReport> {
    if a.len() != m_p.n_t() {
        return Err(Error::dim(format!("{} amplitudes for {} antennas", a.len(), m_p.n_t())));
    }
    let (vep, mpp) = permute_inputs(ve, m_p, perms)?;
    let ap = perms.permute_amplitudes(a);

    let vt = project_to_range(m_p, ve)?;
    let vtp = project_to_range(&mpp, &vep)?;
    let d_proj = vtp.max_abs_diff(&perms.permute_digital(&vt)).to_f64_lossy();

    let v = normalize_power(&vt, a, m_p.matrix(), p_max)?;
    let vp = normalize_power(&perms.permute_digital(&vt), &ap, mpp.matrix(), p_max)?;
    let d_norm = vp.max_abs_diff(&perms.permute_digital(&v)).to_f64_lossy();
    Ok(ProjectionReport {
        projection: CheckReport::new(d_proj, tol),
        normalization: CheckReport::new(d_norm, tol),
    })
}

/// KKT residuals at `(a, V)` versus at the permuted point on permuted inputs.
/// Residual norms and the power multiplier must agree; the box multipliers
/// must follow the antenna permutation.
pub fn check_kkt_pe<T: Real>(
    h: &CMatrix<T>,
    m_p: &PhasePattern<T>,
    a: &[T],
    v: &CMatrix<T>,
    p_max: T,
    noise_var: T,
    perms: &PermTriple,
    tol: f64,
) -> Result<CheckReport> {
    let (hp, mpp) = permute_inputs(h, m_p, perms)?;
    let base = kkt_residuals(h, m_p, a, v, p_max, noise_var)?;
    let perm = kkt_residuals(
        &hp,
        &mpp,
        &perms.permute_amplitudes(a),
        &perms.permute_digital(v),
        p_max,
        noise_var,
    )?;
    let scalars = [
        (base.stationarity_v, perm.stationarity_v),
        (base.stationarity_a, perm.stationarity_a),
        (base.slack_mu, perm.slack_mu),
        (base.slack_nu, perm.slack_nu),
        (base.slack_lambda, perm.slack_lambda),
        (base.lambda, perm.lambda),
        (base.grad_norm, perm.grad_norm),
    ];
    let d_scalar = scalars
        .iter()
        .map(|(x, y)| (*x - *y).abs().to_f64_lossy())
        .fold(0.0, f64::max);
    let d_mu = max_diff_vec(&perm.mu, &perms.permute_amplitudes(&base.mu));
    let d_nu = max_diff_vec(&perm.nu, &perms.permute_amplitudes(&base.nu));
    Ok(CheckReport::new(d_scalar.max(d_mu).max(d_nu), tol))
}

/// Fully-connected control network on the flattened inputs.
///
/// It has no weight sharing, so it is not permutation equivariant; running
/// [`check_3dpe`] on it shows that the check can fail.
#[derive(Clone, Debug)]
pub struct DenseControl {
    n_t: usize,
    n_users: usize,
    n_rf: usize,
    /// `(weights row-major out x in, bias)` per layer.
    layers: Vec<(Vec<f64>, Vec<f64>)>,
}

impl DenseControl {
    pub fn random<R: Rng + ?Sized>(n_t: usize, n_users: usize, n_rf: usize, hidden: &[usize], rng: &mut R) -> Self {
        let input = 2 * n_t * n_users + 2 * n_t * n_rf;
        let output = n_t + 2 * n_rf * n_users;
        let mut widths = vec![input];
        widths.extend_from_slice(hidden);
        widths.push(output);
        let layers = widths
            .windows(2)
            .map(|w| {
                let sd = 1.0 / (w[0] as f64).sqrt();
                let weights = (0..w[0] * w[1])
                    .map(|_| sd * Distribution::<f64>::sample(&StandardNormal, rng))
                    .collect::<Vec<f64>>();
                let bias = (0..w[1])
                    .map(|_| 0.1 * Distribution::<f64>::sample(&StandardNormal, rng))
                    .collect::<Vec<f64>>();
                (weights, bias)
            })
            .collect();
        Self {
            n_t,
            n_users,
            n_rf,
            layers,
        }
    }

    /// `(a, V)` with `V` power-normalised like the real pipeline.
    pub fn forward<T: Real>(&self, h: &CMatrix<T>, m_p: &PhasePattern<T>, p_max: T) -> Result<(Vec<T>, CMatrix<T>)> {
        if h.shape() != (self.n_t, self.n_users) || m_p.matrix().shape() != (self.n_t, self.n_rf) {
            return Err(Error::dim("control network built for a different size"));
        }
        let mut x: Vec<f64> = h
            .as_slice()
            .iter()
            .chain(m_p.matrix().as_slice())
            .flat_map(|z| [z.re.to_f64_lossy(), z.im.to_f64_lossy()])
            .collect();
        for (l, (w, b)) in self.layers.iter().enumerate() {
            let last = l + 1 == self.layers.len();
            x = b
                .iter()
                .enumerate()
                .map(|(o, bo)| {
                    let s = bo
                        + w[o * x.len()..(o + 1) * x.len()]
                            .iter()
                            .zip(&x)
                            .map(|(wi, xi)| wi * xi)
                            .sum::<f64>();
                    if last {
                        s
                    } else {
                        s.tanh()
                    }
                })
                .collect();
        }
        let a: Vec<T> = x[..self.n_t].iter().map(|s| T::lit(1.0 / (1.0 + (-s).exp()))).collect();
        let vt = CMatrix::from_fn(self.n_rf, self.n_users, |r, k| {
            let o = self.n_t + 2 * (r * self.n_users + k);
            C::new(T::lit(x[o]), T::lit(x[o + 1]))
        });
        let v = normalize_power(&vt, &a, m_p.matrix(), p_max)?;
        Ok((a, v))
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn random_matrix(rows: usize, cols: usize, rng: &mut ChaCha8Rng) -> CMatrix<f64> {
        CMatrix::from_fn(rows, cols, |_, _| {
            C::new(StandardNormal.sample(rng), StandardNormal.sample(rng))
        })
    }

    #[test]
    fn rejects_non_bijections() {
        assert!(PermTriple::new(vec![0, 0], vec![0], vec![0]).is_err());
        assert!(PermTriple::new(vec![0, 2], vec![0], vec![0]).is_err());
        assert!(PermTriple::new(vec![1, 0], vec![0], vec![0]).is_ok());
    }

    #[test]
    fn permute_then_inverse_is_bit_exact() {
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        let h = random_matrix(6, 3, &mut rng);
        let m_p = PhasePattern::from_matrix(random_matrix(6, 2, &mut rng));
        let t = PermTriple::random(3, 6, 2, &mut rng);
        let (hp, mpp) = permute_inputs(&h, &m_p, &t).unwrap();
        let (hb, mpb) = permute_inputs(&hp, &mpp, &t.inverse()).unwrap();
        assert_eq!(hb, h);
        assert_eq!(mpb.matrix(), m_p.matrix());
    }

    #[test]
    fn two_cycles_are_involutions() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let h = random_matrix(4, 2, &mut rng);
        let m_p = PhasePattern::from_matrix(random_matrix(4, 2, &mut rng));
        let t = PermTriple::new(vec![1, 0], vec![1, 0, 3, 2], vec![1, 0]).unwrap();
        let (hp, mpp) = permute_inputs(&h, &m_p, &t).unwrap();
        let (hb, mpb) = permute_inputs(&hp, &mpp, &t).unwrap();
        assert_eq!(hb, h);
        assert_eq!(mpb.matrix(), m_p.matrix());
    }

    #[test]
    fn size_mismatch_is_an_error() {
        let mut rng = ChaCha8Rng::seed_from_u64(6);
        let h = random_matrix(4, 2, &mut rng);
        let m_p = PhasePattern::from_matrix(random_matrix(4, 2, &mut rng));
        assert!(permute_inputs(&h, &m_p, &PermTriple::identity(3, 4, 2)).is_err());
    }

    #[test]
    fn projection_pe_holds_for_random_data() {
        let mut rng = ChaCha8Rng::seed_from_u64(7);
        for _ in 0..10 {
            let ve = random_matrix(8, 3, &mut rng);
            let m_p = PhasePattern::from_matrix(random_matrix(8, 3, &mut rng));
            let a: Vec<f64> = (0..8).map(|_| rng.gen_range(0.1..1.0)).collect();
            let t = PermTriple::random(3, 8, 3, &mut rng);
            let r = check_projection_pe(&ve, &a, &m_p, 1.0, &t, 1e-9).unwrap();
            assert!(r.passed(), "{r:?}");
            let id = check_projection_pe(&ve, &a, &m_p, 1.0, &PermTriple::identity(3, 8, 3), 0.0).unwrap();
            assert_eq!(id.max_discrepancy(), 0.0);
        }
    }

    #[test]
    fn rf_permutation_permutes_projected_rows() {
        let mut rng = ChaCha8Rng::seed_from_u64(8);
        let ve = random_matrix(6, 2, &mut rng);
        let m_p = PhasePattern::from_matrix(random_matrix(6, 3, &mut rng));
        let t = PermTriple::new(vec![0, 1], (0..6).collect(), vec![2, 0, 1]).unwrap();
        let vt = project_to_range(&m_p, &ve).unwrap();
        let (_, mpp) = permute_inputs(&ve, &m_p, &t).unwrap();
        let vtp = project_to_range(&mpp, &ve).unwrap();
        assert!(vtp.max_abs_diff(&vt.gather_rows(&t.rf)) < 1e-12);
    }
}
