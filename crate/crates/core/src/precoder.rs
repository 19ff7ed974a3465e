//! Stage 1: common and private precoders by successive convex approximation.
//!
//! Each iteration solves a semidefinite program in the precoder Gram
//! matrices. Both logarithms of every worst-case rate are linearized at the
//! current point: the subtracted one by its tangent (an upper bound), the
//! remaining one through a 2x2 semidefinite block that encodes
//! `ln A ≥ ln a₀ + 1 − a₀/A` (a lower bound, tight at `A = a₀`). The
//! surrogate is therefore an inner approximation and its optimum is
//! non-decreasing over the iterations.

use rand::Rng;
use thiserror::Error;

use crate::channel::ChannelSet;
use crate::conic::{solve_conic, ConicError, ConicProblem, Relation, Sense, SolverStatus, Term, VarId};
use crate::design::DesignState;
use crate::metrics::{Noise, Requirements, StreamPowers};
use crate::numerics::{complex_gaussian, hermitian_eig, CMatrix, NumericsError};
use crate::scalar::{creal, Real};

#[derive(Debug, Clone, PartialEq, Error)]
pub enum PrecoderError {
    #[error("harvesting threshold is not a finite number")]
    InvalidPsi,
    #[error("expected {expected} precoders, got {got}")]
    StreamCount { expected: usize, got: usize },
    #[error("conic builder: {0}")]
    Conic(#[from] ConicError),
    #[error(transparent)]
    Numerics(#[from] NumericsError),
}

/// Estimated channel of one user with its uncertainty radius and split.
#[derive(Debug, Clone, PartialEq)]
pub struct UserLink<T> {
    /// Equivalent channel `h_m`, `K x 1`.
    pub h: CMatrix<T>,
    /// Error radius `δ²_m`.
    pub delta_sq: T,
    /// Power-split ratio `β_m`.
    pub beta: T,
}

impl<T: Real> UserLink<T> {
    fn cov(&self) -> CMatrix<T> {
        CMatrix::outer(&self.h, &self.h)
    }

    fn powers(&self, v0: &CMatrix<T>, v: &[CMatrix<T>]) -> StreamPowers<T> {
        StreamPowers::from_vector(&self.h, self.delta_sq, v0, v)
    }
}

/// Loop controls for Stage 1.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Stage1Settings<T> {
    /// Relative change of the surrogate optimum that ends the loop.
    pub tol: T,
    pub max_iter: usize,
    /// Gaussian-randomization candidates per non-rank-one matrix.
    pub candidates: usize,
    /// Weight of the elastic QoS and harvesting slacks.
    pub penalty: T,
}

impl<T: Real> Default for Stage1Settings<T> {
    fn default() -> Self {
        Self {
            tol: T::lit(1e-4),
            max_iter: 50,
            candidates: 200,
            penalty: T::lit(1e3),
        }
    }
}

/// Everything Stage 1 sees: channels at the current `Θ`, fixed `β`, and
/// constraint levels.
#[derive(Debug, Clone, PartialEq)]
pub struct Stage1Params<T> {
    pub users: Vec<UserLink<T>>,
    pub noise: Noise<T>,
    pub p_max: T,
    pub r_min: T,
    /// Worst-case RF threshold; `≤ 0` disables the harvesting rows.
    pub psi: T,
    pub settings: Stage1Settings<T>,
}

impl<T: Real> Stage1Params<T> {
    pub fn from_design(
        design: &DesignState<T>,
        channels: &ChannelSet<T>,
        req: &Requirements<T>,
        settings: Stage1Settings<T>,
    ) -> Self {
        let users = (0..channels.users())
            .map(|m| {
                let eq = channels.user_channel(&design.theta, m, req.rho_tilde);
                UserLink {
                    h: eq.h,
                    delta_sq: eq.delta_sq,
                    beta: design.beta[m],
                }
            })
            .collect();
        Self {
            users,
            noise: req.noise,
            p_max: req.p_max,
            r_min: req.r_min,
            psi: req.psi,
            settings,
        }
    }

    fn antennas(&self) -> usize {
        self.users[0].h.rows()
    }
}

/// Affine power functional `c + Σ_i Re tr(Q_i V_i)`; index 0 is the common
/// stream and `i + 1` the private stream of user `i`.
#[derive(Debug, Clone, PartialEq)]
pub struct AffinePower<T> {
    pub constant: T,
    pub weights: Vec<Option<CMatrix<T>>>,
}

impl<T: Real> AffinePower<T> {
    pub fn eval(&self, v0: &CMatrix<T>, v: &[CMatrix<T>]) -> T {
        let mut s = self.constant;
        for (w, x) in self.weights.iter().zip(core::iter::once(v0).chain(v)) {
            if let Some(q) = w {
                s += q.re_trace_mul(x);
            }
        }
        s
    }
}

/// First-order expansion of `log₂ B(V)` at `B₀ = B(V⁽ʳ⁾)`.
#[derive(Debug, Clone, PartialEq)]
pub struct LogTangent<T> {
    pub arg: AffinePower<T>,
    pub b0: T,
}

impl<T: Real> LogTangent<T> {
    /// Tangent value at `V`; never below [`Self::exact`] by concavity.
    pub fn value(&self, v0: &CMatrix<T>, v: &[CMatrix<T>]) -> T {
        self.b0.log2() + (self.arg.eval(v0, v) - self.b0) / (T::LN_2() * self.b0)
    }

    pub fn exact(&self, v0: &CMatrix<T>, v: &[CMatrix<T>]) -> T {
        self.arg.eval(v0, v).log2()
    }
}

fn interference_weight<T: Real>(u: &UserLink<T>, cov: &CMatrix<T>) -> CMatrix<T> {
    let mut q = cov.clone();
    q.axpy_real(u.delta_sq, &CMatrix::identity(cov.rows()));
    q.scale_real(u.beta)
}

fn signal_weight<T: Real>(u: &UserLink<T>, cov: &CMatrix<T>) -> CMatrix<T> {
    let mut q = cov.clone();
    q.axpy_real(-u.delta_sq, &CMatrix::identity(cov.rows()));
    q.scale_real(u.beta)
}

/// Denominator of user `m`'s private rate: `β Σ_{i≠m} tr((H+δ²I)V_i) + σ̄²`.
pub fn private_denominator<T: Real>(u: &UserLink<T>, noise: &Noise<T>, m: usize, users: usize) -> AffinePower<T> {
    let q = interference_weight(u, &u.cov());
    let mut weights = vec![None; users + 1];
    for (i, w) in weights.iter_mut().enumerate().skip(1) {
        if i != m + 1 {
            *w = Some(q.clone());
        }
    }
    AffinePower {
        constant: noise.sigma_bar(u.beta),
        weights,
    }
}

/// Denominator of the common rate at user `u`: all private streams.
pub fn common_denominator<T: Real>(u: &UserLink<T>, noise: &Noise<T>, users: usize) -> AffinePower<T> {
    let q = interference_weight(u, &u.cov());
    let mut weights = vec![Some(q); users + 1];
    weights[0] = None;
    AffinePower {
        constant: noise.sigma_bar(u.beta),
        weights,
    }
}

/// Tangent upper bound of user `m`'s subtracted private log term.
pub fn fta_private<T: Real>(
    u: &UserLink<T>,
    noise: &Noise<T>,
    m: usize,
    v0: &CMatrix<T>,
    v: &[CMatrix<T>],
) -> LogTangent<T> {
    let arg = private_denominator(u, noise, m, v.len());
    let b0 = arg.eval(v0, v);
    LogTangent { arg, b0 }
}

/// Tangent upper bound of the subtracted common-rate log term.
pub fn fta_common<T: Real>(u: &UserLink<T>, noise: &Noise<T>, v0: &CMatrix<T>, v: &[CMatrix<T>]) -> LogTangent<T> {
    let arg = common_denominator(u, noise, v.len());
    let b0 = arg.eval(v0, v);
    LogTangent { arg, b0 }
}

/// Variable handles of one surrogate program.
#[derive(Debug, Clone, PartialEq)]
pub struct P4Vars {
    pub v0: VarId,
    pub v: Vec<VarId>,
    pub w_private: Vec<VarId>,
    pub w_common: Vec<VarId>,
    pub r_common: Vec<VarId>,
    pub phi: Vec<VarId>,
    pub qos_slack: Vec<VarId>,
    pub eh_slack: Vec<VarId>,
}

fn e11<T: Real>() -> CMatrix<T> {
    let mut m = CMatrix::zeros(2, 2);
    m[(1, 1)] = creal(T::one());
    m
}

fn e01_sym<T: Real>() -> CMatrix<T> {
    let mut m = CMatrix::zeros(2, 2);
    m[(0, 1)] = creal(T::lit(0.5));
    m[(1, 0)] = creal(T::lit(0.5));
    m
}

fn e00<T: Real>() -> CMatrix<T> {
    let mut m = CMatrix::zeros(2, 2);
    m[(0, 0)] = creal(T::one());
    m
}

/// Rate bound `ln2·lhs ≤ ln A − ln B` with `A = 1 + num` and `B = 1 + den`
/// (both normalized by `σ̄²`), linearized at `(a₀, b₀)`.
struct RateRow<T> {
    num: Vec<(VarId, CMatrix<T>)>,
    den: Vec<(VarId, CMatrix<T>)>,
    a0: T,
    b0: T,
}

fn add_rate_bound<T: Real>(
    p: &mut ConicProblem<T>,
    row: RateRow<T>,
    lhs: Vec<Term<T>>,
) -> Result<VarId, PrecoderError> {
    let w = p.add_psd(2);
    // W₂₂ = A
    let mut terms = vec![Term::Trace(w, e11())];
    for (id, q) in &row.num {
        terms.push(Term::Trace(*id, q.scale_real(-T::one())));
    }
    p.add_constraint(terms, Relation::Eq, T::one())?;
    // Re W₁₂ = √a₀, so W ⪰ 0 forces W₁₁ ≥ a₀ / A
    p.add_constraint(vec![Term::Trace(w, e01_sym())], Relation::Eq, row.a0.sqrt())?;
    let mut terms = lhs;
    terms.push(Term::Trace(w, e00()));
    for (id, q) in &row.den {
        terms.push(Term::Trace(*id, q.scale_real(T::one() / row.b0)));
    }
    let two = T::lit(2.0);
    let rhs = row.a0.ln() - row.b0.ln() + two - T::one() / row.b0;
    p.add_constraint(terms, Relation::Le, rhs)?;
    Ok(w)
}

/// Builds the surrogate program at `(v0, v)` in units of `P_max`.
///
/// # Errors
/// [`PrecoderError::InvalidPsi`] for a non-finite threshold and
/// [`PrecoderError::StreamCount`] when `v` has the wrong length.
pub fn build_p4<T: Real>(
    params: &Stage1Params<T>,
    v0: &CMatrix<T>,
    v: &[CMatrix<T>],
) -> Result<(ConicProblem<T>, P4Vars), PrecoderError> {
    let mu = params.users.len();
    if v.len() != mu {
        return Err(PrecoderError::StreamCount { expected: mu, got: v.len() });
    }
    if !params.psi.is_finite() {
        return Err(PrecoderError::InvalidPsi);
    }
    let k = params.antennas();
    let pm = params.p_max;
    let pn = if pm > T::zero() { pm } else { T::one() };
    let v0n = v0.scale_real(T::one() / pn);
    let vn: Vec<CMatrix<T>> = v.iter().map(|x| x.scale_real(T::one() / pn)).collect();

    let mut p = ConicProblem::new(Sense::Maximize);
    let x0 = p.add_psd(k);
    let xs: Vec<VarId> = (0..mu).map(|_| p.add_psd(k)).collect();
    let rc: Vec<VarId> = (0..mu).map(|_| p.add_nonneg()).collect();
    let phi: Vec<VarId> = (0..mu).map(|_| p.add_free()).collect();
    let qs: Vec<VarId> = (0..mu).map(|_| p.add_nonneg()).collect();
    let es: Vec<VarId> = if params.psi > T::zero() {
        (0..mu).map(|_| p.add_nonneg()).collect()
    } else {
        Vec::new()
    };
    let ln2 = T::LN_2();
    let mut w_private = Vec::with_capacity(mu);
    let mut w_common = Vec::with_capacity(mu);

    for (m, u) in params.users.iter().enumerate() {
        let s = params.noise.sigma_bar(u.beta);
        let cov = u.cov();
        let qint = interference_weight(u, &cov).scale_real(pm / s);
        let qsig = signal_weight(u, &cov).scale_real(pm / s);
        let at = |q: &CMatrix<T>, x: &CMatrix<T>| q.re_trace_mul(x);

        let interf_others: T = (0..mu).filter(|&i| i != m).map(|i| at(&qint, &vn[i])).sum();
        let b0 = T::one() + interf_others;
        let a0 = (b0 + at(&qsig, &vn[m])).max(b0);
        let mut den: Vec<(VarId, CMatrix<T>)> = Vec::new();
        for (i, xi) in xs.iter().enumerate() {
            if i != m {
                den.push((*xi, qint.clone()));
            }
        }
        let mut num = den.clone();
        num.push((xs[m], qsig.clone()));
        w_private.push(add_rate_bound(
            &mut p,
            RateRow { num, den, a0, b0 },
            vec![Term::Scalar(phi[m], ln2)],
        )?);

        let interf_all: T = vn.iter().map(|x| at(&qint, x)).sum();
        let b0 = T::one() + interf_all;
        let a0 = (b0 + at(&qsig, &v0n)).max(b0);
        let den: Vec<(VarId, CMatrix<T>)> = xs.iter().map(|xi| (*xi, qint.clone())).collect();
        let mut num = den.clone();
        num.push((x0, qsig.clone()));
        w_common.push(add_rate_bound(
            &mut p,
            RateRow { num, den, a0, b0 },
            rc.iter().map(|r| Term::Scalar(*r, ln2)).collect(),
        )?);

        // QoS with elastic slack
        p.add_constraint(
            vec![Term::Scalar(rc[m], T::one()), Term::Scalar(phi[m], T::one()), Term::Scalar(qs[m], T::one())],
            Relation::Ge,
            params.r_min,
        )?;

        // signal-nonnegativity cuts
        p.add_constraint(vec![Term::Trace(xs[m], qsig.clone())], Relation::Ge, T::zero())?;
        p.add_constraint(vec![Term::Trace(x0, qsig.clone())], Relation::Ge, T::zero())?;

        if params.psi > T::zero() {
            let mut g = cov.clone();
            g.axpy_real(-u.delta_sq, &CMatrix::identity(k));
            let c = (T::one() - u.beta) * pm / params.psi;
            let g = g.scale_real(c);
            let mut terms: Vec<Term<T>> = core::iter::once(x0)
                .chain(xs.iter().copied())
                .map(|id| Term::Trace(id, g.clone()))
                .collect();
            terms.push(Term::Scalar(es[m], T::one()));
            let rhs = T::one() - (T::one() - u.beta) * params.noise.antenna / params.psi;
            p.add_constraint(terms, Relation::Ge, rhs)?;
        }
    }

    let eye = CMatrix::identity(k);
    let power: Vec<Term<T>> = core::iter::once(x0)
        .chain(xs.iter().copied())
        .map(|id| Term::Trace(id, eye.clone()))
        .collect();
    if pm > T::zero() {
        p.add_constraint(power, Relation::Le, T::one())?;
    } else {
        p.add_constraint(power, Relation::Le, T::zero())?;
    }

    let mut obj: Vec<Term<T>> = Vec::new();
    for m in 0..mu {
        obj.push(Term::Scalar(rc[m], T::one()));
        obj.push(Term::Scalar(phi[m], T::one()));
        obj.push(Term::Scalar(qs[m], -params.settings.penalty));
    }
    for e in &es {
        obj.push(Term::Scalar(*e, -params.settings.penalty));
    }
    p.set_objective(obj)?;

    Ok((
        p,
        P4Vars {
            v0: x0,
            v: xs,
            w_private,
            w_common,
            r_common: rc,
            phi,
            qos_slack: qs,
            eh_slack: es,
        },
    ))
}

/// True worst-case objective of a precoder set at the fixed `β`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PrecoderScore<T> {
    /// `Σ R̃ᵖ + min R̃ᵒ`.
    pub sum_rate: T,
    /// Largest relative violation of QoS (after the best common-rate
    /// split), harvesting and power.
    pub violation: T,
}

pub fn score_precoders<T: Real>(params: &Stage1Params<T>, v0: &CMatrix<T>, v: &[CMatrix<T>]) -> PrecoderScore<T> {
    let mut private = Vec::with_capacity(v.len());
    let mut common = T::infinity();
    let mut eh = T::zero();
    for (m, u) in params.users.iter().enumerate() {
        let pw = u.powers(v0, v);
        private.push(pw.private_rate(m, u.beta, &params.noise));
        common = common.min(pw.common_rate(u.beta, &params.noise));
        if params.psi > T::zero() {
            let got = (T::one() - u.beta) * pw.received(&params.noise);
            eh = eh.max((params.psi - got).max(T::zero()) / params.psi);
        }
    }
    let deficit: T = private.iter().map(|&r| (params.r_min - r).max(T::zero())).sum();
    let mut qos = (deficit - common).max(T::zero());
    if params.r_min > T::zero() {
        qos /= params.r_min;
    }
    let power_used = v0.trace().re + v.iter().map(|x| x.trace().re).sum::<T>();
    let mut power = (power_used - params.p_max).max(T::zero());
    if params.p_max > T::zero() {
        power /= params.p_max;
    }
    PrecoderScore {
        sum_rate: private.iter().copied().sum::<T>() + common,
        violation: qos.max(eh).max(power),
    }
}

/// Matched-filter start: `P_max/(M+1)` per stream along each estimated
/// channel, the common stream towards the strongest user.
pub fn matched_filter_init<T: Real>(params: &Stage1Params<T>) -> (CMatrix<T>, Vec<CMatrix<T>>) {
    let k = params.antennas();
    let share = params.p_max / T::lit((params.users.len() + 1) as f64);
    let dir = |h: &CMatrix<T>| {
        let n = h.norm_sq();
        if n > T::zero() {
            CMatrix::outer(h, h).scale_real(share / n)
        } else {
            CMatrix::identity(k).scale_real(share / T::lit(k as f64))
        }
    };
    let v: Vec<CMatrix<T>> = params.users.iter().map(|u| dir(&u.h)).collect();
    let strongest = params
        .users
        .iter()
        .enumerate()
        .max_by(|a, b| a.1.h.norm_sq().partial_cmp(&b.1.h.norm_sq()).unwrap_or(core::cmp::Ordering::Equal))
        .map(|(i, _)| i)
        .unwrap_or(0);
    (dir(&params.users[strongest].h), v)
}

/// Rank-one precoding vector from a relaxed Gram matrix.
///
/// Returns `√tr(V)·u₁` when `V` is numerically rank one. Otherwise draws
/// `candidates` vectors `U Λ^{1/2} z` with `z ~ CN(0, I)`, each rescaled to
/// `‖v‖² = tr(V)`, and keeps the one with the best `score` among those for
/// which `score` returns `Some`. The principal direction competes too and
/// is the fallback.
pub fn extract_rank_one<T: Real, R: Rng + ?Sized>(
    v: &CMatrix<T>,
    candidates: usize,
    rng: &mut R,
    mut score: impl FnMut(&CMatrix<T>) -> Option<T>,
) -> Result<CMatrix<T>, NumericsError> {
    let k = v.rows();
    let tr = v.trace().re.max(T::zero());
    if tr <= T::zero() {
        return Ok(CMatrix::zeros(k, 1));
    }
    let eig = hermitian_eig(&v.hermitian_part())?;
    let l1 = eig.values[0];
    let l2 = eig.values.get(1).copied().unwrap_or(T::zero()).max(T::zero());
    let principal = eig.vectors.column_vec(0).scale_real(tr.sqrt());
    if l2 <= T::lit(1e-10) || l1 >= T::lit(1e6) * l2 {
        return Ok(principal);
    }
    let shape = CMatrix::from_fn(k, k, |i, j| eig.vectors[(i, j)] * eig.values[j].max(T::zero()).sqrt());
    let mut best = score(&principal).map(|s| (s, principal.clone()));
    for _ in 0..candidates {
        let z = CMatrix::from_fn(k, 1, |_, _| complex_gaussian::<T, R>(rng));
        let c = shape.matmul(&z);
        let n = c.norm_sq();
        if !(n > T::zero()) {
            continue;
        }
        let c = c.scale_real((tr / n).sqrt());
        if let Some(s) = score(&c) {
            if best.as_ref().is_none_or(|(b, _)| s > *b) {
                best = Some((s, c));
            }
        }
    }
    Ok(best.map(|(_, c)| c).unwrap_or(principal))
}

/// Output of [`stage1`].
#[derive(Debug, Clone, PartialEq)]
pub struct Stage1Result<T> {
    /// Rank-one common Gram matrix.
    pub v0: CMatrix<T>,
    pub v: Vec<CMatrix<T>>,
    /// Common-rate shares from the last surrogate solve.
    pub r_common: Vec<T>,
    /// Surrogate optimum per solved iteration.
    pub trace: Vec<T>,
    /// Relaxed Gram matrices before rank-one recovery.
    pub relaxed_v0: CMatrix<T>,
    pub relaxed_v: Vec<CMatrix<T>>,
    pub converged: bool,
    /// Set when a solve failed and the previous iterate was kept.
    pub solver_failed: bool,
    /// Largest elastic slack at the last accepted solve; positive means
    /// the QoS or harvesting rows could not be met.
    pub slack: T,
}

/// Runs the SCA loop from `(v0, v)` with shares `r_common` and recovers
/// rank-one precoders.
///
/// # Errors
/// Propagates builder and eigen-solver errors.
pub fn stage1<T: Real, R: Rng + ?Sized>(
    params: &Stage1Params<T>,
    v0: &CMatrix<T>,
    v: &[CMatrix<T>],
    r_common: &[T],
    rng: &mut R,
) -> Result<Stage1Result<T>, PrecoderError> {
    let mu = params.users.len();
    if v.len() != mu {
        return Err(PrecoderError::StreamCount { expected: mu, got: v.len() });
    }
    let k = params.antennas();
    if params.p_max <= T::zero() {
        return Ok(Stage1Result {
            v0: CMatrix::zeros(k, k),
            v: vec![CMatrix::zeros(k, k); mu],
            r_common: vec![T::zero(); mu],
            trace: Vec::new(),
            relaxed_v0: CMatrix::zeros(k, k),
            relaxed_v: vec![CMatrix::zeros(k, k); mu],
            converged: true,
            solver_failed: false,
            slack: if params.r_min > T::zero() { params.r_min } else { T::zero() },
        });
    }
    let s = &params.settings;
    let mut cur_v0 = v0.clone();
    let mut cur_v = v.to_vec();
    let mut cur_rc = r_common.to_vec();
    let mut trace: Vec<T> = Vec::new();
    let mut converged = false;
    let mut solver_failed = false;
    let mut slack = T::zero();

    for _ in 0..s.max_iter {
        let (prob, vars) = build_p4(params, &cur_v0, &cur_v)?;
        let sol = solve_conic(&prob);
        if sol.status != SolverStatus::Optimal {
            solver_failed = true;
            break;
        }
        let f = sol.objective_value;
        cur_v0 = sol.matrix(vars.v0).hermitian_part().scale_real(params.p_max);
        cur_v = vars
            .v
            .iter()
            .map(|id| sol.matrix(*id).hermitian_part().scale_real(params.p_max))
            .collect();
        cur_rc = vars.r_common.iter().map(|id| sol.scalar(*id).max(T::zero())).collect();
        slack = vars
            .qos_slack
            .iter()
            .chain(&vars.eh_slack)
            .map(|id| sol.scalar(*id))
            .fold(T::zero(), T::max);
        let prev = trace.last().copied();
        trace.push(f);
        if let Some(prev) = prev {
            if (f - prev).abs() <= s.tol * prev.abs().max(T::one()) {
                converged = true;
                break;
            }
        }
    }

    let relaxed_v0 = cur_v0.clone();
    let relaxed_v = cur_v.clone();
    let mut out_v0 = cur_v0;
    let mut out_v = cur_v;
    let tol = T::lit(1e-6);
    for idx in 0..=mu {
        let target = if idx == 0 { out_v0.clone() } else { out_v[idx - 1].clone() };
        let vec = extract_rank_one(&target, s.candidates, rng, |c| {
            let g = CMatrix::outer(c, c);
            let sc = if idx == 0 {
                score_precoders(params, &g, &out_v)
            } else {
                let mut trial = out_v.clone();
                trial[idx - 1] = g;
                score_precoders(params, &out_v0, &trial)
            };
            (sc.violation <= tol).then_some(sc.sum_rate)
        })?;
        let g = CMatrix::outer(&vec, &vec);
        if idx == 0 {
            out_v0 = g;
        } else {
            out_v[idx - 1] = g;
        }
    }

    Ok(Stage1Result {
        v0: out_v0,
        v: out_v,
        r_common: cur_rc,
        trace,
        relaxed_v0,
        relaxed_v,
        converged,
        solver_failed,
        slack,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::numerics::gaussian_matrix;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn rand_params(seed: u64, k: usize, m: usize, rho: f64) -> Stage1Params<f64> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let users = (0..m)
            .map(|_| {
                let h = gaussian_matrix::<f64, _>(k, 1, &mut rng).scale_real(3.0);
                UserLink {
                    delta_sq: rho * h.norm_sq(),
                    h,
                    beta: 0.4 + 0.5 * rng.random::<f64>(),
                }
            })
            .collect();
        Stage1Params {
            users,
            noise: Noise {
                antenna: 0.1,
                decoder: 0.2,
            },
            p_max: 1.0,
            r_min: 0.1,
            psi: 0.5,
            settings: Stage1Settings::default(),
        }
    }

    fn rand_psd(k: usize, scale: f64, rng: &mut ChaCha8Rng) -> CMatrix<f64> {
        let g = gaussian_matrix::<f64, _>(k, k, rng);
        g.adjoint_mul(&g).scale_real(scale)
    }

    #[test]
    fn tangents_touch_at_expansion_point() {
        let p = rand_params(1, 3, 3, 0.01);
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let v0 = rand_psd(3, 0.1, &mut rng);
        let v: Vec<_> = (0..3).map(|_| rand_psd(3, 0.1, &mut rng)).collect();
        for (m, u) in p.users.iter().enumerate() {
            let t = fta_private(u, &p.noise, m, &v0, &v);
            assert!((t.value(&v0, &v) - t.exact(&v0, &v)).abs() < 1e-12);
            let t = fta_common(u, &p.noise, &v0, &v);
            assert!((t.value(&v0, &v) - t.exact(&v0, &v)).abs() < 1e-12);
        }
    }

    #[test]
    fn tangents_constant_without_interference() {
        let p = rand_params(3, 2, 1, 0.0);
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let v0 = rand_psd(2, 0.3, &mut rng);
        let v = vec![rand_psd(2, 0.3, &mut rng)];
        let sb = p.noise.sigma_bar(p.users[0].beta);
        let t = fta_private(&p.users[0], &p.noise, 0, &v0, &v);
        assert!((t.value(&v0, &v) - sb.log2()).abs() < 1e-12);
        let z = CMatrix::zeros(2, 2);
        let t = fta_common(&p.users[0], &p.noise, &z, std::slice::from_ref(&z));
        assert!((t.value(&z, std::slice::from_ref(&z)) - sb.log2()).abs() < 1e-12);
    }

    #[test]
    fn tangents_overestimate() {
        let p = rand_params(5, 3, 2, 0.02);
        let mut rng = ChaCha8Rng::seed_from_u64(6);
        let v0 = rand_psd(3, 0.1, &mut rng);
        let v: Vec<_> = (0..2).map(|_| rand_psd(3, 0.1, &mut rng)).collect();
        for _ in 0..100 {
            let w0 = &v0 + &rand_psd(3, 0.05, &mut rng);
            let w: Vec<_> = v.iter().map(|x| x + &rand_psd(3, 0.05, &mut rng)).collect();
            for (m, u) in p.users.iter().enumerate() {
                let t = fta_private(u, &p.noise, m, &v0, &v);
                assert!(t.value(&w0, &w) >= t.exact(&w0, &w) - 1e-9);
                let t = fta_common(u, &p.noise, &v0, &v);
                assert!(t.value(&w0, &w) >= t.exact(&w0, &w) - 1e-9);
            }
        }
    }

    #[test]
    fn expansion_point_is_feasible_for_surrogate() {
        let p = rand_params(7, 3, 2, 0.01);
        let (_, v) = matched_filter_init(&p);
        // isotropic common stream keeps every signal cut satisfied
        let v0 = CMatrix::identity(3).scale_real(1.0 / 9.0);
        let (prob, vars) = build_p4(&p, &v0, &v).unwrap();
        // assemble the expansion point in normalized units
        let mut values: Vec<crate::conic::VarValue<f64>> = prob
            .vars()
            .iter()
            .map(|k| match k {
                crate::conic::VarKind::Psd(n) => crate::conic::VarValue::Matrix(CMatrix::zeros(*n, *n)),
                _ => crate::conic::VarValue::Scalar(0.0),
            })
            .collect();
        use crate::conic::VarValue::{Matrix, Scalar};
        values[vars.v0.0] = Matrix(v0.clone());
        for (id, x) in vars.v.iter().zip(&v) {
            values[id.0] = Matrix(x.clone());
        }
        for (m, u) in p.users.iter().enumerate() {
            let s = p.noise.sigma_bar(u.beta);
            let pw = u.powers(&v0, &v);
            let b = 1.0 + u.beta * pw.private_interference(m) / s;
            let a = b + u.beta * pw.signal[m + 1].max(0.0) / s;
            values[vars.phi[m].0] = Scalar(pw.private_rate(m, u.beta, &p.noise));
            let mut w = CMatrix::zeros(2, 2);
            w[(0, 0)] = creal(1.0);
            w[(0, 1)] = creal(a.sqrt());
            w[(1, 0)] = creal(a.sqrt());
            w[(1, 1)] = creal(a);
            values[vars.w_private[m].0] = Matrix(w);
            let bc = 1.0 + u.beta * pw.all_private_interference() / s;
            let ac = bc + u.beta * pw.signal[0].max(0.0) / s;
            let mut w = CMatrix::zeros(2, 2);
            w[(0, 0)] = creal(1.0);
            w[(0, 1)] = creal(ac.sqrt());
            w[(1, 0)] = creal(ac.sqrt());
            w[(1, 1)] = creal(ac);
            values[vars.w_common[m].0] = Matrix(w);
            let qos = (p.r_min - pw.private_rate(m, u.beta, &p.noise)).max(0.0);
            values[vars.qos_slack[m].0] = Scalar(qos);
            let got = (1.0 - u.beta) * pw.received(&p.noise);
            values[vars.eh_slack[m].0] = Scalar(((p.psi - got) / p.psi).max(0.0));
        }
        assert!(prob.max_violation(&values) < 1e-9, "{}", prob.max_violation(&values));
    }

    #[test]
    fn block_count_for_single_user_single_antenna() {
        let p = Stage1Params {
            users: vec![UserLink {
                h: CMatrix::column(vec![creal(1.0)]),
                delta_sq: 0.0,
                beta: 1.0,
            }],
            noise: Noise {
                antenna: 0.0,
                decoder: 1.0,
            },
            p_max: 1.0,
            r_min: 0.0,
            psi: 0.0,
            settings: Stage1Settings::default(),
        };
        let (prob, _) = build_p4(&p, &CMatrix::zeros(1, 1), &[CMatrix::zeros(1, 1)]).unwrap();
        // V₀ and V₁ (1x1) plus one 2x2 log block per rate bound
        let sizes: Vec<_> = prob
            .vars()
            .iter()
            .filter_map(|k| match k {
                crate::conic::VarKind::Psd(n) => Some(*n),
                _ => None,
            })
            .collect();
        assert_eq!(sizes, vec![1, 1, 2, 2]);
        assert_eq!(prob.scalar_count(), 3);
    }

    #[test]
    fn scalar_instance_reaches_log2_3() {
        let p = Stage1Params {
            users: vec![UserLink {
                h: CMatrix::column(vec![creal(2f64.sqrt())]),
                delta_sq: 0.0,
                beta: 1.0,
            }],
            noise: Noise {
                antenna: 0.0,
                decoder: 1.0,
            },
            p_max: 1.0,
            r_min: 0.0,
            psi: 0.0,
            settings: Stage1Settings::default(),
        };
        let (v0, v) = matched_filter_init(&p);
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let r = stage1(&p, &v0, &v, &[0.0], &mut rng).unwrap();
        let got = score_precoders(&p, &r.v0, &r.v).sum_rate;
        // grid oracle over the split between common and private power
        let best = (0..=1000)
            .map(|i| {
                let p1 = i as f64 / 1000.0;
                let p0 = 1.0 - p1;
                (1.0 + 2.0 * p1).log2() + (1.0 + 2.0 * p0 / (1.0 + 2.0 * p1)).log2()
            })
            .fold(f64::MIN, f64::max);
        assert!((got - best).abs() < 1e-3, "{got} vs {best}");
        assert!((got - 3f64.log2()).abs() < 1e-3);
    }

    #[test]
    fn sca_trace_is_monotone_and_budget_holds() {
        for seed in 0..4 {
            let p = rand_params(seed, 3, 2, 0.01);
            let (v0, v) = matched_filter_init(&p);
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let r = stage1(&p, &v0, &v, &[0.0, 0.0], &mut rng).unwrap();
            assert!(!r.solver_failed);
            for w in r.trace.windows(2) {
                assert!(w[1] >= w[0] - 1e-6, "seed {seed}: {:?}", r.trace);
            }
            let used = r.relaxed_v0.trace().re + r.relaxed_v.iter().map(|x| x.trace().re).sum::<f64>();
            assert!(used <= p.p_max + 1e-9);
            let used = r.v0.trace().re + r.v.iter().map(|x| x.trace().re).sum::<f64>();
            assert!(used <= p.p_max + 1e-9);
        }
    }

    #[test]
    fn restart_from_converged_point_stops_quickly() {
        let p = rand_params(11, 3, 2, 0.01);
        let (v0, v) = matched_filter_init(&p);
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let r = stage1(&p, &v0, &v, &[0.0, 0.0], &mut rng).unwrap();
        assert!(r.converged);
        let again = stage1(&p, &r.relaxed_v0, &r.relaxed_v, &r.r_common, &mut rng).unwrap();
        assert!(again.trace.len() <= 2, "{:?}", again.trace);
    }

    #[test]
    fn uncertainty_does_not_help() {
        for seed in 0..3 {
            let exact = rand_params(seed + 20, 3, 2, 0.0);
            let mut robust = exact.clone();
            for u in robust.users.iter_mut() {
                u.delta_sq = 0.05 * u.h.norm_sq();
            }
            let mut rng = ChaCha8Rng::seed_from_u64(0);
            let (v0, v) = matched_filter_init(&exact);
            let a = stage1(&exact, &v0, &v, &[0.0, 0.0], &mut rng).unwrap();
            let b = stage1(&robust, &v0, &v, &[0.0, 0.0], &mut rng).unwrap();
            assert!(b.trace.last().unwrap() <= &(a.trace.last().unwrap() + 1e-6));
        }
    }

    #[test]
    fn zero_budget_short_circuits() {
        let mut p = rand_params(2, 2, 2, 0.0);
        p.p_max = 0.0;
        let z = CMatrix::zeros(2, 2);
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let r = stage1(&p, &z, &[z.clone(), z.clone()], &[0.0, 0.0], &mut rng).unwrap();
        assert_eq!(r.v0, z);
        assert!(r.slack > 0.0);
    }

    #[test]
    fn rank_one_extraction() {
        let mut rng = ChaCha8Rng::seed_from_u64(9);
        let v = gaussian_matrix::<f64, _>(3, 1, &mut rng);
        let g = CMatrix::outer(&v, &v);
        let got = extract_rank_one(&g, 10, &mut rng, |_| Some(0.0)).unwrap();
        // equal up to a global phase
        let overlap = v.adjoint_mul(&got)[(0, 0)].norm();
        assert!((overlap - v.norm_sq()).abs() < 1e-9);

        let eye = CMatrix::<f64>::identity(2);
        let got = extract_rank_one(&eye, 500, &mut rng, |_| Some(0.0)).unwrap();
        assert!((got.norm_sq() - 2.0).abs() < 1e-9);

        let z = CMatrix::<f64>::zeros(2, 2);
        assert_eq!(extract_rank_one(&z, 5, &mut rng, |_| Some(0.0)).unwrap(), CMatrix::zeros(2, 1));
    }

    #[test]
    fn randomization_prefers_higher_scores() {
        let mut rng = ChaCha8Rng::seed_from_u64(10);
        let eye = CMatrix::<f64>::identity(2);
        // score the first coordinate's power; the winner leans towards e₁
        let got = extract_rank_one(&eye, 200, &mut rng, |c| Some(c[(0, 0)].norm_sqr())).unwrap();
        assert!(got[(0, 0)].norm_sqr() > 1.8);
    }
}
