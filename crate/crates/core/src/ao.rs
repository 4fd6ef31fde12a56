//! Analytic sum-rate gradients, the alternating-optimisation baseline and a
//! KKT residual checker for the joint amplitude / digital beamforming problem.
//!
//! Gradients with respect to complex matrices are returned in real-pair form,
//! `dR/dRe + i dR/dIm`, which is what central differences over the real and
//! imaginary parts measure. The Wirtinger derivative `dR/dV^*` is half of it.

use crate::beamform::{normalize_power, BeamformerSet};
use crate::error::{Error, Result};
use crate::holo::{cross_gains, rate_from_gains, sum_rate_equiv, transmit_power, PhasePattern};
use crate::linalg::{lu_solve, CMatrix};
use crate::scalar::Real;

/// Gradient of the sum rate with respect to `V_e` and `a`.
///
/// With `h~_k = diag(a) h_k`, `D_k = sum_j |h~_k^H v_j|^2 + s^2` and
/// `E_k = D_k - |h~_k^H v_k|^2`, column `k` of the `V_e` gradient is
///
/// `b1_k (h~_k^H v_k) h~_k - sum_{j != k} b2_j (h~_j^H v_k) h~_j`
///
/// with `b1_k = c / D_k`, `b2_j = c |h~_j^H v_j|^2 / (D_j E_j)` and
/// `c = 2 / ln 2`.
pub fn sum_rate_gradients<T: Real>(
    h: &CMatrix<T>,
    a: &[T],
    ve: &CMatrix<T>,
    noise_var: T,
) -> Result<(CMatrix<T>, Vec<T>)> {
    // validates dimensions and noise
    sum_rate_equiv(h, a, ve, noise_var)?;
    let g = cross_gains(h, a, ve);
    let k_users = h.cols();
    let scale = T::lit(2.0) / T::LN_2();
    let mut coef = CMatrix::zeros(k_users, k_users);
    for k in 0..k_users {
        let row = g.row(k);
        let own = row[k].norm_sqr();
        let total: T = row.iter().map(|z| z.norm_sqr()).sum::<T>() + noise_var;
        let rest = total - own;
        let beta1 = scale / total;
        let beta2 = scale * own / (total * rest);
        for j in 0..k_users {
            coef[(k, j)] = if j == k { row[j] * beta1 } else { -(row[j] * beta2) };
        }
    }
    // G_ve[n, j] = a_n sum_k h[n,k] coef[k,j]
    let g_ve = h.matmul(&coef).scale_rows(a);
    // G_a[n] = sum_{k,j} Re(conj(coef[k,j]) conj(h[n,k]) ve[n,j])
    let hc = h.matmul(&coef);
    let g_a = (0..h.rows())
        .map(|n| hc.row(n).iter().zip(ve.row(n)).map(|(x, v)| (x.conj() * *v).re).sum())
        .collect();
    Ok((g_ve, g_a))
}

/// Sum-rate gradient with respect to the equivalent beamformer (real-pair form).
pub fn grad_sum_rate_ve<T: Real>(h: &CMatrix<T>, a: &[T], ve: &CMatrix<T>, noise_var: T) -> Result<CMatrix<T>> {
    Ok(sum_rate_gradients(h, a, ve, noise_var)?.0)
}

/// Sum-rate gradient with respect to the holographic amplitudes.
pub fn grad_sum_rate_a<T: Real>(h: &CMatrix<T>, a: &[T], ve: &CMatrix<T>, noise_var: T) -> Result<Vec<T>> {
    Ok(sum_rate_gradients(h, a, ve, noise_var)?.1)
}

/// Alternating-optimisation controls.
#[derive(Clone, Debug, PartialEq)]
pub struct AoOptions<T> {
    pub max_outer_iters: usize,
    /// Projected-gradient steps on `a` per outer iteration.
    pub inner_steps: usize,
    /// Backtracking step shrink factor.
    pub shrink: T,
    /// Armijo sufficient-increase factor.
    pub armijo: T,
    pub max_backtracks: usize,
    /// Stop once an outer iteration improves the SE by less than this.
    pub tol: T,
}

impl<T: Real> Default for AoOptions<T> {
    fn default() -> Self {
        Self {
            max_outer_iters: 500,
            inner_steps: 20,
            shrink: T::lit(0.5),
            armijo: T::lit(1e-4),
            max_backtracks: 40,
            tol: T::lit(1e-9),
        }
    }
}

impl<T: Real> AoOptions<T> {
    fn validate(&self) -> Result<()> {
        if self.max_outer_iters == 0 || self.inner_steps == 0 || self.max_backtracks == 0 {
            return Err(Error::arg("AO iteration counts must be positive"));
        }
        if !(self.shrink > T::zero() && self.shrink < T::one()) {
            return Err(Error::arg("backtracking shrink must lie in (0, 1)"));
        }
        if !(self.armijo > T::zero() && self.armijo < T::one()) {
            return Err(Error::arg("Armijo factor must lie in (0, 1)"));
        }
        if !(self.tol > T::zero()) {
            return Err(Error::arg("AO tolerance must be positive"));
        }
        Ok(())
    }
}

#[derive(Clone, Debug)]
pub struct AoResult<T> {
    pub beamformers: BeamformerSet<T>,
    pub se: T,
    pub outer_iters: usize,
    /// `false` when `max_outer_iters` was hit before the SE settled.
    pub converged: bool,
    /// SE after initialisation and after every outer iteration.
    pub trajectory: Vec<T>,
}

struct Problem<'a, T> {
    h: &'a CMatrix<T>,
    m_p: &'a CMatrix<T>,
    p_max: T,
    noise_var: T,
}

impl<T: Real> Problem<'_, T> {
    fn rate(&self, a: &[T], v: &CMatrix<T>) -> T {
        rate_from_gains(&cross_gains(self.h, a, &self.m_p.matmul(v)), self.noise_var)
    }

    /// `M_p^H diag(a) H`.
    fn digital_channel(&self, a: &[T]) -> CMatrix<T> {
        self.m_p.adjoint_matmul(&self.h.scale_rows(a))
    }

    /// `M_p^H diag(a)^2 M_p`.
    fn power_form(&self, a: &[T]) -> CMatrix<T> {
        let sq: Vec<T> = a.iter().map(|x| *x * *x).collect();
        self.m_p.adjoint_matmul(&self.m_p.scale_rows(&sq))
    }

    fn normalize(&self, v: &CMatrix<T>, a: &[T]) -> Result<CMatrix<T>> {
        normalize_power(v, a, self.m_p, self.p_max)
    }

    /// SE with `V` rescaled onto the power budget for amplitudes `a`.
    fn rate_normalized(&self, a: &[T], v: &CMatrix<T>) -> Option<T> {
        self.normalize(v, a).ok().map(|vn| self.rate(a, &vn))
    }

    /// One weighted-MMSE update of the digital beamformer for fixed `a`.
    fn wmmse_step(&self, a: &[T], v: &CMatrix<T>) -> Result<CMatrix<T>> {
        let g = self.digital_channel(a);
        let c = g.adjoint_matmul(v); // c[k, j] = g_k^H v_j
        let (n_rf, k_users) = g.shape();
        let mut lhs = CMatrix::<T>::zeros(n_rf, n_rf);
        let mut rhs = CMatrix::<T>::zeros(n_rf, k_users);
        for k in 0..k_users {
            let total: T = c.row(k).iter().map(|z| z.norm_sqr()).sum::<T>() + self.noise_var;
            let u = c[(k, k)] / total;
            let e = total - c[(k, k)].norm_sqr();
            let w = total / e;
            let weight = w * u.norm_sqr();
            for p in 0..n_rf {
                rhs[(p, k)] = g[(p, k)] * u * w;
                for q in 0..n_rf {
                    lhs[(p, q)] = lhs[(p, q)] + g[(p, k)] * g[(q, k)].conj() * weight;
                }
            }
        }
        let b = self.power_form(a);
        let solve = |mu: T| -> Option<CMatrix<T>> {
            let m = CMatrix::from_fn(n_rf, n_rf, |p, q| lhs[(p, q)] + b[(p, q)] * mu);
            lu_solve(&m, &rhs).ok().filter(|x| x.is_finite())
        };
        let power = |x: &CMatrix<T>| transmit_power(a, &self.m_p.matmul(x));

        // Bisection on the power-constraint multiplier (power decreases in mu).
        let scale = (0..n_rf)
            .map(|p| lhs[(p, p)].re + b[(p, p)].re)
            .fold(T::zero(), T::max)
            .max(T::min_positive_value());
        if let Some(x) = solve(T::zero()) {
            if power(&x) <= self.p_max {
                return self.normalize(&x, a);
            }
        }
        let mut lo = scale * T::lit(1e-14);
        let mut hi = scale;
        let mut guard = 0;
        while solve(hi).map(|x| power(&x) > self.p_max).unwrap_or(true) {
            hi = hi * T::lit(4.0);
            guard += 1;
            if guard > 200 {
                return Err(Error::arg("WMMSE multiplier bracket failed"));
            }
        }
        for _ in 0..100 {
            let mid = (lo * hi).sqrt();
            match solve(mid) {
                Some(x) if power(&x) > self.p_max => lo = mid,
                _ => hi = mid,
            }
            if hi / lo < T::one() + T::lit(1e-13) {
                break;
            }
        }
        let x = solve(hi).ok_or_else(|| Error::arg("WMMSE update singular"))?;
        self.normalize(&x, a)
    }

    /// Gradient of `a -> SE(a, normalize(V; a))`.
    fn amplitude_gradient(&self, a: &[T], v: &CMatrix<T>) -> Result<Vec<T>> {
        let vn = self.normalize(v, a)?;
        let ve = self.m_p.matmul(&vn);
        let g = grad_sum_rate_a(self.h, a, &ve, self.noise_var)?;
        let q: Vec<T> = (0..ve.rows())
            .map(|n| ve.row(n).iter().map(|z| z.norm_sqr()).sum())
            .collect();
        let denom: T = a.iter().zip(&q).map(|(x, qn)| *x * *x * *qn).sum();
        let ag: T = a.iter().zip(&g).map(|(x, gn)| *x * *gn).sum();
        Ok(g.iter()
            .zip(a)
            .zip(&q)
            .map(|((gn, an), qn)| *gn - ag * *an * *qn / denom)
            .collect())
    }

    /// Projected gradient ascent with Armijo backtracking on the box `[0, 1]`.
    fn amplitude_step(&self, a: &[T], v: &CMatrix<T>, opts: &AoOptions<T>) -> Result<(Vec<T>, T)> {
        let mut a = a.to_vec();
        let mut f = self.rate_normalized(&a, v).ok_or(Error::ZeroPower)?;
        let mut step: Option<T> = None;
        for _ in 0..opts.inner_steps {
            let d = self.amplitude_gradient(&a, v)?;
            let d_max = d.iter().fold(T::zero(), |m, x| m.max(x.abs()));
            if !(d_max > T::zero()) {
                break;
            }
            let mut t = step.map(|s| s / opts.shrink).unwrap_or(T::one() / d_max);
            let mut accepted = false;
            for _ in 0..opts.max_backtracks {
                let cand: Vec<T> = a
                    .iter()
                    .zip(&d)
                    .map(|(x, dx)| (*x + t * *dx).max(T::zero()).min(T::one()))
                    .collect();
                let slope: T = cand.iter().zip(&a).zip(&d).map(|((c, x), dx)| (*c - *x) * *dx).sum();
                if let Some(fc) = self.rate_normalized(&cand, v) {
                    if fc >= f + opts.armijo * slope && slope > T::zero() {
                        a = cand;
                        f = fc;
                        accepted = true;
                        break;
                    }
                }
                t = t * opts.shrink;
            }
            if !accepted {
                break;
            }
            step = Some(t);
            // The objective only depends on the direction of a; pin the
            // largest amplitude to 1 so the iterate cannot shrink away.
            let peak = a.iter().fold(T::zero(), |m, x| m.max(*x));
            if peak > T::zero() {
                let rescaled: Vec<T> = a.iter().map(|x| (*x / peak).min(T::one())).collect();
                if let Some(fr) = self.rate_normalized(&rescaled, v) {
                    if fr >= f {
                        a = rescaled;
                        f = fr;
                    }
                }
            }
        }
        Ok((a, f))
    }
}

/// Maximum-ratio digital beamformer with all amplitudes at 1.
pub fn mrt_baseline<T: Real>(h: &CMatrix<T>, m_p: &PhasePattern<T>, p_max: T) -> Result<BeamformerSet<T>> {
    let a = vec![T::one(); h.rows()];
    let g = m_p.matrix().adjoint_matmul(h);
    let v = normalize_power(&g, &a, m_p.matrix(), p_max)?;
    let ve = m_p.matrix().matmul(&v);
    Ok(BeamformerSet { a, v, ve })
}

/// Zero-forcing digital beamformer on `M_p^H H` with all amplitudes at 1.
/// Needs at least as many RF chains as users.
pub fn zf_baseline<T: Real>(h: &CMatrix<T>, m_p: &PhasePattern<T>, p_max: T) -> Result<BeamformerSet<T>> {
    let a = vec![T::one(); h.rows()];
    let g = m_p.matrix().adjoint_matmul(h);
    if g.rows() < g.cols() {
        return Err(Error::arg("zero forcing needs at least as many RF chains as users"));
    }
    let gram = g.adjoint_matmul(&g);
    let v = g.matmul(&lu_solve(&gram, &CMatrix::identity(g.cols()))?);
    let v = normalize_power(&v, &a, m_p.matrix(), p_max)?;
    let ve = m_p.matrix().matmul(&v);
    Ok(BeamformerSet { a, v, ve })
}

/// Alternating optimisation of the digital beamformer (weighted MMSE) and
/// the holographic amplitudes (projected gradient ascent).
///
/// Starts from the better of the maximum-ratio and zero-forcing beamformers
/// with unit amplitudes. Each outer iteration keeps a block update only when
/// it does not lower the SE, so the trajectory is nondecreasing.
pub fn ao_solve<T: Real>(
    h: &CMatrix<T>,
    m_p: &PhasePattern<T>,
    p_max: T,
    noise_var: T,
    opts: &AoOptions<T>,
) -> Result<AoResult<T>> {
    opts.validate()?;
    if h.rows() != m_p.n_t() {
        return Err(Error::dim(format!(
            "channel has {} rows, phase pattern {}",
            h.rows(),
            m_p.n_t()
        )));
    }
    if !(noise_var > T::zero()) || !(p_max > T::zero()) {
        return Err(Error::arg("noise variance and power budget must be positive"));
    }
    let prob = Problem {
        h,
        m_p: m_p.matrix(),
        p_max,
        noise_var,
    };

    let mut start = mrt_baseline(h, m_p, p_max)?;
    let mut se = prob.rate(&start.a, &start.v);
    if let Ok(zf) = zf_baseline(h, m_p, p_max) {
        let zf_se = prob.rate(&zf.a, &zf.v);
        if zf_se > se {
            start = zf;
            se = zf_se;
        }
    }
    let (mut a, mut v) = (start.a, start.v);
    let mut trajectory = vec![se];
    let mut converged = false;
    let mut iters = 0;

    while iters < opts.max_outer_iters {
        iters += 1;
        let prev = se;
        if let Ok(v_new) = prob.wmmse_step(&a, &v) {
            let se_new = prob.rate(&a, &v_new);
            if se_new >= se {
                v = v_new;
                se = se_new;
            }
        }
        let (a_new, _) = prob.amplitude_step(&a, &v, opts)?;
        let v_new = prob.normalize(&v, &a_new)?;
        let se_new = prob.rate(&a_new, &v_new);
        if se_new >= se {
            a = a_new;
            v = v_new;
            se = se_new;
        }
        trajectory.push(se);
        if se - prev < opts.tol {
            converged = true;
            break;
        }
    }
    let ve = m_p.matrix().matmul(&v);
    Ok(AoResult {
        beamformers: BeamformerSet { a, v, ve },
        se,
        outer_iters: iters,
        converged,
        trajectory,
    })
}

/// Activity threshold for the amplitude bounds in [`kkt_residuals`].
pub const ACT_TOL: f64 = 1e-6;

/// First-order optimality report with fitted dual variables.
#[derive(Clone, Debug, PartialEq)]
pub struct KktReport<T> {
    /// `||dR/dV^* - lambda M_p^H diag(a)^2 M_p V||_F`.
    pub stationarity_v: T,
    /// `||dR/da - 2 lambda a . Q(V) + mu - nu||`.
    pub stationarity_a: T,
    /// `||mu . a||`.
    pub slack_mu: T,
    /// `||nu . (1 - a)||`.
    pub slack_nu: T,
    /// `|lambda (||diag(a) M_p V||^2 - P_max)|`.
    pub slack_lambda: T,
    pub lambda: T,
    pub mu: Vec<T>,
    pub nu: Vec<T>,
    /// `sqrt(||dR/dV^*||^2 + ||dR/da||^2)`.
    pub grad_norm: T,
}

impl<T: Real> KktReport<T> {
    /// Combined stationarity residual relative to the objective gradient.
    pub fn relative_stationarity(&self) -> T {
        let r = (self.stationarity_v.powi(2) + self.stationarity_a.powi(2)).sqrt();
        if self.grad_norm > T::zero() {
            r / self.grad_norm
        } else {
            r
        }
    }
}

/// Fits nonnegative duals `(lambda, mu, nu)` minimising the stationarity
/// residuals of the Lagrangian and reports what is left.
///
/// `mu_i` may be nonzero only where `a_i <= ACT_TOL`, `nu_i` only where
/// `a_i >= 1 - ACT_TOL`, and `lambda` only when the power constraint is tight.
pub fn kkt_residuals<T: Real>(
    h: &CMatrix<T>,
    m_p: &PhasePattern<T>,
    a: &[T],
    v: &CMatrix<T>,
    p_max: T,
    noise_var: T,
) -> Result<KktReport<T>> {
    let mp = m_p.matrix();
    let ve = mp.matmul(v);
    let (g_ve, g_a) = sum_rate_gradients(h, a, &ve, noise_var)?;
    let grad_v = mp.adjoint_matmul(&g_ve).scale(T::lit(0.5));
    let sq: Vec<T> = a.iter().map(|x| *x * *x).collect();
    let bv = mp.adjoint_matmul(&ve.scale_rows(&sq));
    let q: Vec<T> = (0..ve.rows())
        .map(|n| ve.row(n).iter().map(|z| z.norm_sqr()).sum())
        .collect();
    let power = transmit_power(a, &ve);
    let act = T::lit(ACT_TOL);
    let lower: Vec<bool> = a.iter().map(|x| *x <= act).collect();
    let upper: Vec<bool> = a.iter().map(|x| *x >= T::one() - act).collect();

    let residual_a = |lambda: T, i: usize| -> T {
        let base = g_a[i] - T::lit(2.0) * lambda * a[i] * q[i];
        if (lower[i] && base < T::zero()) || (upper[i] && base > T::zero()) {
            T::zero()
        } else {
            base
        }
    };
    let objective = |lambda: T| -> T {
        let rv = grad_v.sub(&bv.scale(lambda)).norm_sqr();
        let ra: T = (0..a.len()).map(|i| residual_a(lambda, i).powi(2)).sum();
        rv + ra
    };

    let tight = (power - p_max).abs() <= T::lit(1e-8) * p_max;
    let lambda = if tight {
        fit_power_multiplier(&grad_v, &bv, &g_a, a, &q, &lower, &upper, objective)
    } else {
        T::zero()
    };

    let mut mu = vec![T::zero(); a.len()];
    let mut nu = vec![T::zero(); a.len()];
    for i in 0..a.len() {
        let base = g_a[i] - T::lit(2.0) * lambda * a[i] * q[i];
        if lower[i] && base < T::zero() {
            mu[i] = -base;
        } else if upper[i] && base > T::zero() {
            nu[i] = base;
        }
    }
    let stationarity_v = grad_v.sub(&bv.scale(lambda)).norm();
    let stationarity_a = (0..a.len()).map(|i| residual_a(lambda, i).powi(2)).sum::<T>().sqrt();
    let slack_mu = mu.iter().zip(a).map(|(m, x)| (*m * *x).powi(2)).sum::<T>().sqrt();
    let slack_nu = nu
        .iter()
        .zip(a)
        .map(|(n, x)| (*n * (T::one() - *x)).powi(2))
        .sum::<T>()
        .sqrt();
    let slack_lambda = (lambda * (power - p_max)).abs();
    let grad_norm = (grad_v.norm_sqr() + g_a.iter().map(|x| *x * *x).sum::<T>()).sqrt();
    Ok(KktReport {
        stationarity_v,
        stationarity_a,
        slack_mu,
        slack_nu,
        slack_lambda,
        lambda,
        mu,
        nu,
        grad_norm,
    })
}

/// Exact minimiser over `lambda >= 0` of the convex piecewise-quadratic
/// stationarity residual. Each amplitude term `c_i - lambda d_i` can only
/// switch between live and absorbed by a box multiplier where it crosses
/// zero, so the minimum is found interval by interval in closed form.
#[allow(clippy::too_many_arguments)]
fn fit_power_multiplier<T: Real>(
    grad_v: &CMatrix<T>,
    bv: &CMatrix<T>,
    g_a: &[T],
    a: &[T],
    q: &[T],
    lower: &[bool],
    upper: &[bool],
    objective: impl Fn(T) -> T,
) -> T {
    let c = g_a;
    let d: Vec<T> = a.iter().zip(q).map(|(x, qn)| T::lit(2.0) * *x * *qn).collect();
    let mut breaks: Vec<T> = (0..a.len())
        .filter(|&i| (lower[i] || upper[i]) && d[i] != T::zero())
        .map(|i| c[i] / d[i])
        .filter(|x| *x > T::zero() && x.is_finite())
        .collect();
    breaks.sort_by(|x, y| x.partial_cmp(y).unwrap());
    breaks.dedup();
    let gb: T = grad_v
        .as_slice()
        .iter()
        .zip(bv.as_slice())
        .map(|(g, b)| (b.conj() * *g).re)
        .sum();
    let bb = bv.norm_sqr();
    let live = |i: usize, lambda: T| {
        let base = c[i] - lambda * d[i];
        !(lower[i] && base < T::zero()) && !(upper[i] && base > T::zero())
    };

    let mut best = (objective(T::zero()), T::zero());
    let mut lo = T::zero();
    for idx in 0..=breaks.len() {
        let hi = breaks.get(idx).copied();
        let probe = match hi {
            Some(h) => (lo + h) * T::lit(0.5),
            None => lo + T::one() + lo.abs(),
        };
        let (mut num, mut den) = (gb, bb);
        for i in 0..a.len() {
            if live(i, probe) {
                num = num + c[i] * d[i];
                den = den + d[i] * d[i];
            }
        }
        if den > T::zero() {
            let mut x = num / den;
            if x < lo {
                x = lo;
            }
            if let Some(h) = hi {
                if x > h {
                    x = h;
                }
            }
            let f = objective(x);
            if f < best.0 {
                best = (f, x);
            }
        }
        if let Some(h) = hi {
            lo = h;
        }
    }
    best.1
}
