//! Closed-form performance quantities: worst-case rates, sum-rate, the
//! nonlinear harvester and its inverse threshold, and constraint residuals.

use rand::Rng;
use thiserror::Error;

use crate::channel::{unitarity_residual, ChannelSet};
use crate::design::DesignState;
use crate::numerics::{hermitian_eig, random_unitary, CMatrix, NumericsError};
use crate::scalar::Real;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum MetricsError {
    #[error("required harvest {target:e} W is not below the saturation power {saturation:e} W")]
    ThresholdAboveSaturation { target: f64, saturation: f64 },
    #[error("harvester curve cannot be inverted at the required harvest (log argument {0:e})")]
    ThresholdUninvertible(f64),
    #[error("rate entries must be non-negative (entry {index} is {value:e})")]
    NegativeRate { index: usize, value: f64 },
    #[error("rate vectors differ in length ({0} vs {1})")]
    LengthMismatch(usize, usize),
    #[error("matrix is not rank one (eigenvalue ratio {0:e})")]
    NotRankOne(f64),
    #[error(transparent)]
    Numerics(#[from] NumericsError),
}

/// `x` dBm in watts.
pub fn dbm_to_watts(dbm: f64) -> f64 {
    10f64.powf(dbm / 10.0) * 1e-3
}

pub fn watts_to_dbm(watts: f64) -> f64 {
    10.0 * (watts / 1e-3).log10()
}

/// Antenna and decoder noise powers.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Noise<T> {
    pub antenna: T,
    pub decoder: T,
}

impl<T: Real> Noise<T> {
    /// Effective information-branch noise `β σ̃² + σ̃²_dec`.
    #[inline]
    pub fn sigma_bar(&self, beta: T) -> T {
        beta * self.antenna + self.decoder
    }
}

/// Logistic energy-harvesting curve.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct EhParams<T> {
    /// Saturation power `C̄` (W).
    pub saturation: T,
    /// Slope `c̄` (1/W).
    pub slope: T,
    /// Midpoint `d̄` (W).
    pub midpoint: T,
    /// Required harvested power `ϑ` (W).
    pub target: T,
}

impl<T: Real> EhParams<T> {
    /// Zero-input offset `D̄ = 1/(1 + exp(c̄ d̄))`.
    pub fn offset(&self) -> T {
        T::one() / (T::one() + (self.slope * self.midpoint).exp())
    }

    /// Raw logistic output `Λ(E)`.
    pub fn logistic(&self, e: T) -> T {
        self.saturation / (T::one() + (-self.slope * (e - self.midpoint)).exp())
    }

    /// Harvested power for RF input `e`, normalized so zero input gives zero.
    pub fn harvested(&self, e: T) -> T {
        let d = self.offset();
        (self.logistic(e.max(T::zero())) - self.saturation * d) / (T::one() - d)
    }
}

/// Minimum worst-case RF power `Ψ` at which the harvester delivers `ϑ`.
pub fn psi_threshold<T: Real>(eh: &EhParams<T>) -> Result<T, MetricsError> {
    if eh.target >= eh.saturation {
        return Err(MetricsError::ThresholdAboveSaturation {
            target: eh.target.as_f64(),
            saturation: eh.saturation.as_f64(),
        });
    }
    let d = eh.offset();
    let arg = eh.saturation / (eh.saturation * d + (T::one() - d) * eh.target) - T::one();
    if !(arg > T::zero()) || !arg.is_finite() {
        return Err(MetricsError::ThresholdUninvertible(arg.as_f64()));
    }
    Ok(eh.midpoint - arg.ln() / eh.slope)
}

/// Worst-case traces of one user's channel against every stream.
///
/// Index 0 is the common stream, index `i + 1` the private stream of user `i`.
#[derive(Debug, Clone, PartialEq)]
pub struct StreamPowers<T> {
    /// `tr((H − δ²I) V_i)`.
    pub signal: Vec<T>,
    /// `tr((H + δ²I) V_i)`.
    pub interference: Vec<T>,
}

impl<T: Real> StreamPowers<T> {
    pub fn new(cov: &CMatrix<T>, delta_sq: T, v0: &CMatrix<T>, v: &[CMatrix<T>]) -> Self {
        let mut signal = Vec::with_capacity(v.len() + 1);
        let mut interference = Vec::with_capacity(v.len() + 1);
        for vi in core::iter::once(v0).chain(v.iter()) {
            let hv = cov.re_trace_mul(vi);
            let tv = vi.trace().re;
            signal.push(hv - delta_sq * tv);
            interference.push(hv + delta_sq * tv);
        }
        Self { signal, interference }
    }

    /// Same quantities from the channel vector, for rank-one covariances.
    pub fn from_vector(h: &CMatrix<T>, delta_sq: T, v0: &CMatrix<T>, v: &[CMatrix<T>]) -> Self {
        let mut signal = Vec::with_capacity(v.len() + 1);
        let mut interference = Vec::with_capacity(v.len() + 1);
        for vi in core::iter::once(v0).chain(v.iter()) {
            let hv = vi.quad_form(h);
            let tv = vi.trace().re;
            signal.push(hv - delta_sq * tv);
            interference.push(hv + delta_sq * tv);
        }
        Self { signal, interference }
    }

    /// Private interference seen by user `m`, excluding its own stream.
    pub fn private_interference(&self, m: usize) -> T {
        self.interference[1..]
            .iter()
            .enumerate()
            .filter(|&(i, _)| i != m)
            .map(|(_, &x)| x)
            .sum()
    }

    pub fn all_private_interference(&self) -> T {
        self.interference[1..].iter().copied().sum()
    }

    /// Worst-case private rate of user `m`.
    pub fn private_rate(&self, m: usize, beta: T, noise: &Noise<T>) -> T {
        let num = beta * self.signal[m + 1].max(T::zero());
        let den = beta * self.private_interference(m) + noise.sigma_bar(beta);
        (T::one() + num / den).log2()
    }

    /// Worst-case common rate.
    pub fn common_rate(&self, beta: T, noise: &Noise<T>) -> T {
        let num = beta * self.signal[0].max(T::zero());
        let den = beta * self.all_private_interference() + noise.sigma_bar(beta);
        (T::one() + num / den).log2()
    }

    /// Worst-case RF input power before splitting, `Σ tr((H − δ²I)V_i) + σ̃²`.
    pub fn received(&self, noise: &Noise<T>) -> T {
        (self.signal.iter().copied().sum::<T>() + noise.antenna).max(T::zero())
    }
}

/// Everything needed to evaluate one user's worst-case rates.
#[derive(Debug, Clone, Copy)]
pub struct RobustRateInputs<'a, T> {
    pub cov: &'a CMatrix<T>,
    pub delta_sq: T,
    pub v0: &'a CMatrix<T>,
    pub v: &'a [CMatrix<T>],
    pub beta: T,
    pub noise: Noise<T>,
}

impl<T: Real> RobustRateInputs<'_, T> {
    fn powers(&self) -> StreamPowers<T> {
        StreamPowers::new(self.cov, self.delta_sq, self.v0, self.v)
    }
}

/// Worst-case rate of private stream `m` (bits/s/Hz).
pub fn worst_case_private_rate<T: Real>(inputs: &RobustRateInputs<'_, T>, m: usize) -> T {
    inputs.powers().private_rate(m, inputs.beta, &inputs.noise)
}

/// Worst-case common-stream rate at this user (bits/s/Hz).
pub fn worst_case_common_rate<T: Real>(inputs: &RobustRateInputs<'_, T>) -> T {
    inputs.powers().common_rate(inputs.beta, &inputs.noise)
}

/// Harvested power after splitting off a fraction `1 − β` of the
/// worst-case RF input.
pub fn harvested_power<T: Real>(inputs: &RobustRateInputs<'_, T>, eh: &EhParams<T>) -> T {
    let e_hat = (T::one() - inputs.beta) * inputs.powers().received(&inputs.noise);
    eh.harvested(e_hat)
}

/// `Σ_m (r̄ᶜ_m + R_m)`.
pub fn sum_rate<T: Real>(r_common: &[T], r_private: &[T]) -> Result<T, MetricsError> {
    if r_common.len() != r_private.len() {
        return Err(MetricsError::LengthMismatch(r_common.len(), r_private.len()));
    }
    for (i, &x) in r_common.iter().chain(r_private).enumerate() {
        if !(x >= T::zero()) {
            return Err(MetricsError::NegativeRate {
                index: i,
                value: x.as_f64(),
            });
        }
    }
    Ok(r_common.iter().zip(r_private).map(|(&a, &b)| a + b).sum())
}

/// Worst-case inner product bound for a rank-one PSD `Y` and Hermitian
/// perturbations with spectral norm at most `δ²`.
///
/// Returns the analytic maximum `δ² tr(Y)` and the largest `tr(YZ)` found
/// over `samples` random feasible `Z`. Samples are drawn as
/// `δ² U diag(d) Uᴴ` with random unitary `U` and `d ∈ [−1, 1]`, biased
/// towards the boundary so that near-maximal draws occur.
pub fn lemma1_oracle<T: Real, R: Rng + ?Sized>(
    y: &CMatrix<T>,
    delta_sq: T,
    samples: usize,
    rng: &mut R,
) -> Result<(T, T), MetricsError> {
    let eig = hermitian_eig(y)?;
    let top = eig.values[0];
    let second = eig.values.get(1).copied().unwrap_or(T::zero());
    if top <= T::zero() || second.abs() > T::lit(1e-10) * top || *eig.values.last().unwrap() < -T::lit(1e-10) * top {
        let ratio = if top > T::zero() { (second / top).as_f64() } else { f64::INFINITY };
        return Err(MetricsError::NotRankOne(ratio));
    }
    let n = y.rows();
    let analytic = delta_sq * y.trace().re;
    let mut best = T::neg_infinity();
    for s in 0..samples {
        let u = random_unitary::<T, R>(n, rng)?;
        let d: Vec<T> = (0..n)
            .map(|_| {
                let x: f64 = rng.random();
                let v = if s % 2 == 0 { 2.0 * x.powf(0.125) - 1.0 } else { 2.0 * x - 1.0 };
                T::lit(v)
            })
            .collect();
        let z = u
            .matmul(&CMatrix::from_real_diag(&d))
            .matmul(&u.adjoint())
            .scale_real(delta_sq);
        best = best.max(y.re_trace_mul(&z));
    }
    if samples == 0 {
        best = T::zero();
    }
    Ok((analytic, best))
}

/// Constraint levels against which a design is checked.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Requirements<T> {
    pub p_max: T,
    /// Minimum rate per user (bits/s/Hz).
    pub r_min: T,
    /// Worst-case RF threshold; `≤ 0` disables the harvesting constraint.
    pub psi: T,
    pub noise: Noise<T>,
    pub rho_tilde: T,
}

/// Per-user rates and received powers of a design.
#[derive(Debug, Clone, PartialEq)]
pub struct Evaluation<T> {
    pub private: Vec<T>,
    pub common: Vec<T>,
    /// Worst-case RF input power (W) before splitting.
    pub received: Vec<T>,
    /// Binding common rate `min_m R̃ᵒ_m`.
    pub common_bound: T,
    /// `Σ_m R̃ᵖ_m + min_m R̃ᵒ_m`.
    pub sum_rate: T,
}

/// Rates of `design` under `channels`, independent of its `r_common`.
pub fn evaluate<T: Real>(design: &DesignState<T>, channels: &ChannelSet<T>, req: &Requirements<T>) -> Evaluation<T> {
    let m_users = channels.users();
    let mut private = Vec::with_capacity(m_users);
    let mut common = Vec::with_capacity(m_users);
    let mut received = Vec::with_capacity(m_users);
    for m in 0..m_users {
        let eq = channels.user_channel(&design.theta, m, req.rho_tilde);
        let p = StreamPowers::from_vector(&eq.h, eq.delta_sq, &design.v0, &design.v);
        private.push(p.private_rate(m, design.beta[m], &req.noise));
        common.push(p.common_rate(design.beta[m], &req.noise));
        received.push(p.received(&req.noise));
    }
    let common_bound = common.iter().copied().fold(T::infinity(), T::min);
    let sum_rate = private.iter().copied().sum::<T>() + common_bound;
    Evaluation {
        private,
        common,
        received,
        common_bound,
        sum_rate,
    }
}

/// Absolute constraint violations of one design.
#[derive(Debug, Clone, PartialEq)]
pub struct ResidualReport<T> {
    /// `max(0, R_min − r̄ᶜ_m − R̃ᵖ_m)` per user (bits/s/Hz).
    pub qos: Vec<T>,
    /// `max(0, Σ r̄ᶜ − min_m R̃ᵒ_m)` (bits/s/Hz).
    pub common: T,
    /// `max(0, Σ tr V − P_max)` (W).
    pub power: T,
    /// `max(0, Ψ − (1 − β_m) Ê_m)` per user (W).
    pub eh: Vec<T>,
    /// Distance of any `β_m` outside `[0, 1]`.
    pub beta: T,
    /// `‖ΘΘᴴ − I‖_F`.
    pub unitarity: T,
    r_min: T,
    p_max: T,
    psi: T,
}

impl<T: Real> ResidualReport<T> {
    fn rel(x: T, scale: T) -> T {
        if scale > T::zero() {
            x / scale
        } else {
            x
        }
    }

    pub fn qos_relative(&self) -> T {
        Self::rel(self.qos.iter().copied().fold(T::zero(), T::max), self.r_min)
    }

    pub fn power_relative(&self) -> T {
        Self::rel(self.power, self.p_max)
    }

    pub fn eh_relative(&self) -> T {
        Self::rel(self.eh.iter().copied().fold(T::zero(), T::max), self.psi)
    }

    /// Largest residual, using relative scales for QoS, power and harvesting.
    pub fn max_relative(&self) -> T {
        [
            self.qos_relative(),
            self.common,
            self.power_relative(),
            self.eh_relative(),
            self.beta,
            self.unitarity,
        ]
        .into_iter()
        .fold(T::zero(), T::max)
    }

    pub fn is_feasible(&self, tol: T) -> bool {
        self.max_relative() <= tol
    }
}

/// Constraint violations of `design`.
pub fn feasibility_residuals<T: Real>(
    design: &DesignState<T>,
    channels: &ChannelSet<T>,
    req: &Requirements<T>,
) -> ResidualReport<T> {
    let ev = evaluate(design, channels, req);
    let zero = T::zero();
    let qos = (0..channels.users())
        .map(|m| (req.r_min - design.r_common[m] - ev.private[m]).max(zero))
        .collect();
    let total_common: T = design.r_common.iter().copied().sum();
    let common = (total_common - ev.common_bound).max(zero);
    let power = (design.total_power() - req.p_max).max(zero);
    let eh = (0..channels.users())
        .map(|m| {
            if req.psi <= zero {
                zero
            } else {
                (req.psi - (T::one() - design.beta[m]) * ev.received[m]).max(zero)
            }
        })
        .collect();
    let beta = design
        .beta
        .iter()
        .fold(zero, |acc, &b| acc.max(-b).max(b - T::one()));
    ResidualReport {
        qos,
        common,
        power,
        eh,
        beta,
        unitarity: unitarity_residual(&design.theta),
        r_min: req.r_min,
        p_max: req.p_max,
        psi: req.psi,
    }
}
