//! Optimization variables shared by the three stages.

use crate::numerics::CMatrix;
use crate::scalar::Real;

/// Precoder Gram matrices, power splits, common-rate shares and the
/// scattering matrix of one design.
#[derive(Debug, Clone, PartialEq)]
pub struct DesignState<T> {
    /// Common-stream precoder `V_0`, `K x K`.
    pub v0: CMatrix<T>,
    /// Private-stream precoders `V_m`, one per user.
    pub v: Vec<CMatrix<T>>,
    /// Power-split ratios `β_m`.
    pub beta: Vec<T>,
    /// Common-rate shares `r̄ᶜ_m` (bits/s/Hz).
    pub r_common: Vec<T>,
    /// Scattering matrix `Θ`, `L x L`.
    pub theta: CMatrix<T>,
}

impl<T: Real> DesignState<T> {
    /// All-zero precoders, `β = 1/2`, identity scattering.
    pub fn zeros(k: usize, m: usize, l: usize) -> Self {
        Self {
            v0: CMatrix::zeros(k, k),
            v: vec![CMatrix::zeros(k, k); m],
            beta: vec![T::lit(0.5); m],
            r_common: vec![T::zero(); m],
            theta: CMatrix::identity(l),
        }
    }

    pub fn users(&self) -> usize {
        self.v.len()
    }

    /// `tr V_0 + Σ tr V_m`.
    pub fn total_power(&self) -> T {
        self.v0.trace().re + self.v.iter().map(|v| v.trace().re).sum::<T>()
    }

    /// Rank-one Gram matrices from precoding vectors.
    pub fn set_vectors(&mut self, w0: &CMatrix<T>, w: &[CMatrix<T>]) {
        self.v0 = CMatrix::outer(w0, w0);
        self.v = w.iter().map(|x| CMatrix::outer(x, x)).collect();
    }
}
