//! Equivalent-beamformer representation and the two projection stages that
//! turn an unconstrained `V_e` into a feasible digital beamformer.
//!
//! The range projection solves `min ||V_e - M_p V||_F` through a QR-based
//! pseudo-inverse of the (fixed) phase pattern; power normalisation then
//! rescales the result so that `||diag(a) M_p V||_F^2 = P_max`.

use crate::error::{Error, Result};
use crate::holo::PhasePattern;
use crate::linalg::{full_rank_pinv, CMatrix};
use crate::scalar::Real;

/// Relative singular-value threshold below which `M_p` is treated as rank deficient.
pub const RANK_TOL: f64 = 1e-9;

/// Holographic amplitudes, digital beamformer and equivalent beamformer.
#[derive(Clone, Debug, PartialEq)]
pub struct BeamformerSet<T> {
    /// Per-element amplitudes in `[0, 1]`.
    pub a: Vec<T>,
    /// Digital beamformer, `L x K`.
    pub v: CMatrix<T>,
    /// Equivalent beamformer, `N_t x K`, as produced by the stage that built
    /// this set (network output before projection, or `M_p V` for solvers).
    pub ve: CMatrix<T>,
}

/// Least-squares projector onto the column space of a phase pattern.
///
/// Caches `M_p^+ = (M_p^H M_p)^{-1} M_p^H`, so projecting is a single product
/// and the map is linear in `V_e`.
#[derive(Clone, Debug)]
pub struct RangeProjector<T> {
    m_p: CMatrix<T>,
    pinv: CMatrix<T>,
}

impl<T: Real> RangeProjector<T> {
    pub fn new(m_p: &PhasePattern<T>) -> Result<Self> {
        let pinv = full_rank_pinv(m_p.matrix(), T::lit(RANK_TOL))?;
        Ok(Self {
            m_p: m_p.matrix().clone(),
            pinv,
        })
    }

    pub fn phase_pattern(&self) -> &CMatrix<T> {
        &self.m_p
    }

    pub fn pinv(&self) -> &CMatrix<T> {
        &self.pinv
    }

    pub fn n_t(&self) -> usize {
        self.m_p.rows()
    }

    pub fn n_rf(&self) -> usize {
        self.m_p.cols()
    }

    /// `V~ = M_p^+ V_e`.
    pub fn project(&self, ve: &CMatrix<T>) -> Result<CMatrix<T>> {
        if ve.rows() != self.n_t() {
            return Err(Error::dim(format!(
                "equivalent beamformer has {} rows, phase pattern {}",
                ve.rows(),
                self.n_t()
            )));
        }
        Ok(self.pinv.matmul(ve))
    }

    /// Adjoint of [`project`](Self::project): `(M_p^+)^H G`.
    pub fn project_adjoint(&self, grad: &CMatrix<T>) -> CMatrix<T> {
        self.pinv.adjoint_matmul(grad)
    }
}

/// Least-squares digital beamformer whose image `M_p V~` is closest to `V_e`.
pub fn project_to_range<T: Real>(m_p: &PhasePattern<T>, ve: &CMatrix<T>) -> Result<CMatrix<T>> {
    RangeProjector::new(m_p)?.project(ve)
}

/// Rescales `V~` so that `||diag(a) M_p V||_F^2 = P_max`.
pub fn normalize_power<T: Real>(vt: &CMatrix<T>, a: &[T], m_p: &CMatrix<T>, p_max: T) -> Result<CMatrix<T>> {
    if a.len() != m_p.rows() || vt.rows() != m_p.cols() {
        return Err(Error::dim(format!(
            "amplitudes {}, phase pattern {}x{}, digital beamformer {} rows",
            a.len(),
            m_p.rows(),
            m_p.cols(),
            vt.rows()
        )));
    }
    if !(p_max > T::zero()) {
        return Err(Error::arg("power budget must be positive"));
    }
    let norm = m_p.matmul(vt).scale_rows(a).norm();
    if !(norm > T::zero()) || !norm.is_finite() {
        return Err(Error::ZeroPower);
    }
    Ok(vt.scale(p_max.sqrt() / norm))
}

/// `H~ = diag(a) H`.
pub fn effective_channel<T: Real>(h: &CMatrix<T>, a: &[T]) -> Result<CMatrix<T>> {
    if a.len() != h.rows() {
        return Err(Error::dim(format!(
            "channel has {} rows, amplitudes {}",
            h.rows(),
            a.len()
        )));
    }
    Ok(h.scale_rows(a))
}
