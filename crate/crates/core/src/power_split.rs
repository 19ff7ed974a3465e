//! Stage 2: power-splitting ratios and common-rate shares.
//!
//! With precoders and `Θ` fixed, every worst-case rate has the form
//! `log₂(1 + aβ/(bβ + βσ̃² + σ̃²_dec))`, strictly increasing in `β` because
//! `σ̃²_dec > 0`. The harvesting constraint caps `β` from above, so the
//! optimum sits at the cap and the common-rate shares follow from a linear
//! allocation. A grid search over the boxed `β` set verifies the claim.

use thiserror::Error;

use crate::channel::ChannelSet;
use crate::design::DesignState;
use crate::metrics::{Noise, Requirements, StreamPowers};
use crate::scalar::Real;

/// Margin that keeps `β` strictly below one.
pub const EPS_BETA: f64 = 1e-6;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum SplitError {
    #[error("received power {received:.3e} W cannot supply threshold {psi:.3e} W")]
    EhInfeasible { received: f64, psi: f64 },
    #[error("QoS deficits {deficit:.6} exceed the common rate {total:.6}")]
    QosInfeasible { deficit: f64, total: f64 },
    #[error("rates must be non-negative and of equal length")]
    BadRates,
}

/// Largest `β` that still harvests `Ψ` from `received` watts.
///
/// # Errors
/// [`SplitError::EhInfeasible`] when the bound is not positive.
pub fn beta_upper_bound<T: Real>(received: T, psi: T) -> Result<T, SplitError> {
    let cap = T::one() - T::lit(EPS_BETA);
    if psi <= T::zero() {
        return Ok(cap);
    }
    let bound = if received > T::zero() {
        T::one() - psi / received
    } else {
        T::neg_infinity()
    };
    if !(bound > T::zero()) {
        return Err(SplitError::EhInfeasible {
            received: received.as_f64(),
            psi: psi.as_f64(),
        });
    }
    Ok(bound.min(cap))
}

/// Splits `min_m R_o` among users: QoS deficits first, remainder equally.
///
/// # Errors
/// [`SplitError::QosInfeasible`] when deficits exceed the total, and
/// [`SplitError::BadRates`] for negative or mismatched inputs.
pub fn allocate_common_rate<T: Real>(r_o: &[T], r_p: &[T], r_min: T) -> Result<Vec<T>, SplitError> {
    if r_o.len() != r_p.len() || r_o.is_empty() || r_o.iter().chain(r_p).any(|x| !(*x >= T::zero())) {
        return Err(SplitError::BadRates);
    }
    let total = r_o.iter().copied().fold(T::infinity(), T::min);
    let deficits: Vec<T> = r_p.iter().map(|&r| (r_min - r).max(T::zero())).collect();
    let need: T = deficits.iter().copied().sum();
    if need > total {
        return Err(SplitError::QosInfeasible {
            deficit: need.as_f64(),
            total: total.as_f64(),
        });
    }
    let share = (total - need) / T::lit(r_o.len() as f64);
    Ok(deficits.into_iter().map(|d| d + share).collect())
}

/// Result of Stage 2.
#[derive(Debug, Clone, PartialEq)]
pub struct SplitSolution<T> {
    pub beta: Vec<T>,
    pub r_common: Vec<T>,
    /// `Σ r̄ᶜ + Σ R̃ᵖ` at the returned point (bits/s/Hz).
    pub objective: T,
    pub feasible: bool,
    /// Users whose harvesting constraint cannot be met.
    pub eh_infeasible: Vec<usize>,
    /// Unmet QoS deficit when the common rate is too small.
    pub qos_gap: T,
}

/// Per-user rate pieces that do not depend on `β`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct UserSplit<T> {
    /// Worst-case private signal and interference.
    pub private_signal: T,
    pub private_interference: T,
    pub common_signal: T,
    pub common_interference: T,
    /// Worst-case RF input before splitting.
    pub received: T,
}

impl<T: Real> UserSplit<T> {
    fn rate(signal: T, interference: T, beta: T, noise: &Noise<T>) -> T {
        let num = beta * signal.max(T::zero());
        (T::one() + num / (beta * interference + noise.sigma_bar(beta))).log2()
    }

    pub fn private_rate(&self, beta: T, noise: &Noise<T>) -> T {
        Self::rate(self.private_signal, self.private_interference, beta, noise)
    }

    pub fn common_rate(&self, beta: T, noise: &Noise<T>) -> T {
        Self::rate(self.common_signal, self.common_interference, beta, noise)
    }
}

pub fn user_splits<T: Real>(design: &DesignState<T>, channels: &ChannelSet<T>, req: &Requirements<T>) -> Vec<UserSplit<T>> {
    (0..channels.users())
        .map(|m| {
            let eq = channels.user_channel(&design.theta, m, req.rho_tilde);
            let p = StreamPowers::from_vector(&eq.h, eq.delta_sq, &design.v0, &design.v);
            UserSplit {
                private_signal: p.signal[m + 1],
                private_interference: p.private_interference(m),
                common_signal: p.signal[0],
                common_interference: p.all_private_interference(),
                received: p.received(&req.noise),
            }
        })
        .collect()
}

/// Closed-form Stage 2: `β_m` at its harvesting cap, then
/// [`allocate_common_rate`].
///
/// Infeasible users keep their incoming `β`; the flag and diagnostics are
/// set instead of failing, so callers can name the binding constraint.
pub fn optimize_beta<T: Real>(design: &DesignState<T>, channels: &ChannelSet<T>, req: &Requirements<T>) -> SplitSolution<T> {
    let splits = user_splits(design, channels, req);
    let mut beta = Vec::with_capacity(splits.len());
    let mut eh_infeasible = Vec::new();
    for (m, s) in splits.iter().enumerate() {
        match beta_upper_bound(s.received, req.psi) {
            Ok(b) => beta.push(b),
            Err(_) => {
                eh_infeasible.push(m);
                beta.push(design.beta[m]);
            }
        }
    }
    let r_p: Vec<T> = splits.iter().zip(&beta).map(|(s, &b)| s.private_rate(b, &req.noise)).collect();
    let r_o: Vec<T> = splits.iter().zip(&beta).map(|(s, &b)| s.common_rate(b, &req.noise)).collect();
    let total = r_o.iter().copied().fold(T::infinity(), T::min);
    let (r_common, qos_gap) = match allocate_common_rate(&r_o, &r_p, req.r_min) {
        Ok(rc) => (rc, T::zero()),
        Err(_) => {
            let need: T = r_p.iter().map(|&r| (req.r_min - r).max(T::zero())).sum();
            let share = total / T::lit(r_o.len() as f64);
            (vec![share; r_o.len()], need - total)
        }
    };
    let objective = r_common.iter().copied().sum::<T>() + r_p.iter().copied().sum::<T>();
    SplitSolution {
        feasible: eh_infeasible.is_empty() && qos_gap <= T::zero(),
        beta,
        r_common,
        objective,
        eh_infeasible,
        qos_gap,
    }
}

/// Best feasible `Σ R̃ᵖ + min R̃ᵒ` over the product grid
/// `β_m ∈ {step, 2·step, …} ∪ {β_m^max}`, or `None` when no grid point
/// meets the QoS requirement.
///
/// The cost is `(1/step)^M`; intended for `M ≤ 2`.
pub fn grid_oracle<T: Real>(splits: &[UserSplit<T>], req: &Requirements<T>, step: T) -> Option<T> {
    let grids: Vec<Vec<(T, T, T)>> = splits
        .iter()
        .map(|s| {
            let cap = beta_upper_bound(s.received, req.psi).unwrap_or(T::zero());
            let mut pts = Vec::new();
            let mut b = step;
            while b < cap {
                pts.push(b);
                b += step;
            }
            if cap > T::zero() {
                pts.push(cap);
            }
            pts.into_iter()
                .map(|b| {
                    let rp = s.private_rate(b, &req.noise);
                    let ro = s.common_rate(b, &req.noise);
                    (rp, ro, (req.r_min - rp).max(T::zero()))
                })
                .collect()
        })
        .collect();
    fn rec<T: Real>(grids: &[Vec<(T, T, T)>], sum_p: T, min_o: T, need: T, best: &mut Option<T>) {
        match grids.split_first() {
            None => {
                if need <= min_o {
                    let v = sum_p + min_o;
                    if best.is_none_or(|b| v > b) {
                        *best = Some(v);
                    }
                }
            }
            Some((g, rest)) => {
                for &(rp, ro, d) in g {
                    rec(rest, sum_p + rp, min_o.min(ro), need + d, best);
                }
            }
        }
    }
    let mut best = None;
    rec(&grids, T::zero(), T::infinity(), T::zero(), &mut best);
    best
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn noise() -> Noise<f64> {
        Noise {
            antenna: 0.3,
            decoder: 0.7,
        }
    }

    fn req(psi: f64, r_min: f64) -> Requirements<f64> {
        Requirements {
            p_max: 1.0,
            r_min,
            psi,
            noise: noise(),
            rho_tilde: 0.0,
        }
    }

    #[test]
    fn upper_bound_examples() {
        assert!((beta_upper_bound(4.0f64, 1.0).unwrap() - 0.75).abs() < 1e-15);
        assert!(matches!(beta_upper_bound(1.0, 1.0), Err(SplitError::EhInfeasible { .. })));
        assert_eq!(beta_upper_bound(1.0, 0.0).unwrap(), 1.0 - EPS_BETA);
        assert!(beta_upper_bound(0.0, 1e-3).is_err());
    }

    #[test]
    fn allocation_examples() {
        let rc = allocate_common_rate(&[1.0f64, 1.5], &[0.5, 2.0], 1.0).unwrap();
        assert!((rc[0] - 0.75).abs() < 1e-15 && (rc[1] - 0.25).abs() < 1e-15);
        assert!(matches!(
            allocate_common_rate(&[0.3, 0.3], &[0.0, 0.0], 0.2),
            Err(SplitError::QosInfeasible { .. })
        ));
        let rc = allocate_common_rate(&[0.9, 0.6], &[0.1, 0.1], 0.0).unwrap();
        assert_eq!(rc, vec![0.3, 0.3]);
        assert!(allocate_common_rate(&[-0.1], &[0.0], 0.0).is_err());
    }

    #[test]
    fn single_user_at_four_psi() {
        let s = UserSplit {
            private_signal: 2.0,
            private_interference: 0.0,
            common_signal: 1.0,
            common_interference: 2.0,
            received: 4.0,
        };
        let r = req(1.0, 0.0);
        let oracle = grid_oracle(&[s], &r, 1e-3).unwrap();
        let closed = s.private_rate(0.75, &r.noise) + s.common_rate(0.75, &r.noise);
        assert!((oracle - closed).abs() < 1e-12);
    }

    #[test]
    fn symmetric_users_get_equal_beta() {
        use crate::channel::ChannelSet;
        use crate::numerics::CMatrix;
        use crate::scalar::creal;
        let h = CMatrix::column(vec![creal(1.0), creal(0.5)]);
        let ch = ChannelSet {
            g_br: CMatrix::zeros(1, 2),
            h_rm: vec![CMatrix::zeros(1, 1); 2],
            f_bm: vec![h.clone(), h.clone()],
        };
        let mut d = DesignState::zeros(2, 2, 1);
        d.set_vectors(&h.scale_real(0.5), &[h.scale_real(0.4), h.scale_real(0.4)]);
        let s = optimize_beta(&d, &ch, &req(0.2, 0.0));
        assert!(s.feasible);
        assert_eq!(s.beta[0], s.beta[1]);
    }

    proptest! {
        #[test]
        fn rate_increases_in_beta(a in 0.01f64..10.0, b in 0.0f64..10.0, s2 in 0.0f64..1.0,
                                  sd in 0.01f64..1.0, beta in 0.01f64..0.98) {
            let n = Noise { antenna: s2, decoder: sd };
            let u = UserSplit { private_signal: a, private_interference: b,
                                common_signal: a, common_interference: b, received: 1.0 };
            let h = 1e-4;
            prop_assert!(u.private_rate(beta + h, &n) > u.private_rate(beta, &n));
        }

        #[test]
        fn allocation_invariants(ro in prop::collection::vec(0.0f64..5.0, 1..5),
                                 rp_seed in prop::collection::vec(0.0f64..2.0, 5),
                                 r_min in 0.0f64..1.0) {
            let rp: Vec<f64> = rp_seed[..ro.len()].to_vec();
            if let Ok(rc) = allocate_common_rate(&ro, &rp, r_min) {
                let total = ro.iter().copied().fold(f64::INFINITY, f64::min);
                prop_assert!((rc.iter().sum::<f64>() - total).abs() <= 1e-12 * (1.0 + total));
                for (c, p) in rc.iter().zip(&rp) {
                    prop_assert!(*c >= 0.0);
                    prop_assert!(c + p >= r_min - 1e-12);
                }
            }
        }

        #[test]
        fn closed_form_matches_grid(sig in prop::collection::vec(0.1f64..5.0, 4),
                                    intf in prop::collection::vec(0.0f64..2.0, 4),
                                    recv in prop::collection::vec(1.5f64..6.0, 2)) {
            let r = req(1.0, 0.05);
            let splits: Vec<UserSplit<f64>> = (0..2).map(|m| UserSplit {
                private_signal: sig[2 * m], private_interference: intf[2 * m],
                common_signal: sig[2 * m + 1], common_interference: intf[2 * m + 1],
                received: recv[m],
            }).collect();
            let beta: Vec<f64> = splits.iter().map(|s| beta_upper_bound(s.received, r.psi).unwrap()).collect();
            let rp: Vec<f64> = splits.iter().zip(&beta).map(|(s, &b)| s.private_rate(b, &r.noise)).collect();
            let ro: Vec<f64> = splits.iter().zip(&beta).map(|(s, &b)| s.common_rate(b, &r.noise)).collect();
            let oracle = grid_oracle(&splits, &r, 1e-2);
            if let Ok(rc) = allocate_common_rate(&ro, &rp, r.r_min) {
                let closed = rc.iter().sum::<f64>() + rp.iter().sum::<f64>();
                let o = oracle.unwrap();
                prop_assert!(closed >= o - 1e-12);
                prop_assert!(closed <= o + 1e-12);
            } else {
                prop_assert!(oracle.is_none());
            }
        }
    }
}
