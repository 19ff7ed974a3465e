//! Primal-dual interior-point solver for small linear programs over complex
//! Hermitian positive semidefinite blocks, nonnegative scalars and free
//! scalars.
//!
//! The method is an infeasible path-following scheme with the HKM search
//! direction and Mehrotra's predictor-corrector. Every inequality row gets
//! its own nonnegative slack, every row is normalized, and the Newton
//! system is reduced to the Schur complement (augmented with the free
//! columns) and solved by dense LU.

use thiserror::Error;

use crate::numerics::{cholesky, hermitian_eig, hpd_inverse, lower_inverse, CMatrix, LuFactor};
use crate::scalar::Real;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum ConicError {
    #[error("constraint references undeclared variable {0}")]
    UnknownVariable(usize),
    #[error("trace term on variable {var} has a {rows}x{cols} coefficient, expected {n}x{n}")]
    TermShape {
        var: usize,
        rows: usize,
        cols: usize,
        n: usize,
    },
    #[error("trace term applied to scalar variable {0}")]
    TraceOnScalar(usize),
    #[error("scalar term applied to matrix variable {0}")]
    ScalarOnMatrix(usize),
    #[error("block size must be at least 1")]
    EmptyBlock,
}

/// Handle to a declared variable.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct VarId(pub usize);

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum VarKind {
    /// `n x n` Hermitian positive semidefinite matrix.
    Psd(usize),
    Nonneg,
    Free,
}

/// One linear term.
#[derive(Debug, Clone, PartialEq)]
pub enum Term<T> {
    /// `Re tr(C X)` for a matrix variable `X`.
    Trace(VarId, CMatrix<T>),
    /// `c x` for a scalar variable `x`.
    Scalar(VarId, T),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Relation {
    Eq,
    Le,
    Ge,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Sense {
    Maximize,
    Minimize,
}

#[derive(Debug, Clone, PartialEq)]
pub struct LinearConstraint<T> {
    pub terms: Vec<Term<T>>,
    pub relation: Relation,
    pub rhs: T,
}

/// A linear objective over declared variables subject to linear
/// constraints.
#[derive(Debug, Clone, PartialEq)]
pub struct ConicProblem<T> {
    sense: Sense,
    vars: Vec<VarKind>,
    objective: Vec<Term<T>>,
    constraints: Vec<LinearConstraint<T>>,
}

#[derive(Debug, Clone, PartialEq)]
pub enum VarValue<T> {
    Matrix(CMatrix<T>),
    Scalar(T),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum SolverStatus {
    Optimal,
    Infeasible,
    Unbounded,
    NumericalFailure,
}

#[derive(Debug, Clone, PartialEq)]
pub struct SolverSolution<T> {
    pub status: SolverStatus,
    pub values: Vec<VarValue<T>>,
    pub objective_value: T,
    pub iterations: usize,
    /// Largest violation over the normalized constraint rows.
    pub primal_residual: T,
    /// Relative dual infeasibility at exit.
    pub dual_residual: T,
    /// Relative duality gap at exit.
    pub gap: T,
}

impl<T: Real> SolverSolution<T> {
    /// # Panics
    /// Panics if `id` is not a matrix variable.
    pub fn matrix(&self, id: VarId) -> &CMatrix<T> {
        match &self.values[id.0] {
            VarValue::Matrix(m) => m,
            VarValue::Scalar(_) => panic!("variable {} is scalar", id.0),
        }
    }

    /// # Panics
    /// Panics if `id` is not a scalar variable.
    pub fn scalar(&self, id: VarId) -> T {
        match &self.values[id.0] {
            VarValue::Scalar(x) => *x,
            VarValue::Matrix(_) => panic!("variable {} is a matrix", id.0),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SolverSettings {
    /// Target for relative gap and residuals; `None` uses `eps^0.6`.
    pub tol: Option<f64>,
    pub max_iter: usize,
}

impl Default for SolverSettings {
    fn default() -> Self {
        Self {
            tol: None,
            max_iter: 100,
        }
    }
}

impl<T: Real> ConicProblem<T> {
    pub fn new(sense: Sense) -> Self {
        Self {
            sense,
            vars: Vec::new(),
            objective: Vec::new(),
            constraints: Vec::new(),
        }
    }

    /// # Panics
    /// Panics if `n == 0`.
    pub fn add_psd(&mut self, n: usize) -> VarId {
        assert!(n > 0, "PSD block size must be positive");
        self.vars.push(VarKind::Psd(n));
        VarId(self.vars.len() - 1)
    }

    pub fn add_nonneg(&mut self) -> VarId {
        self.vars.push(VarKind::Nonneg);
        VarId(self.vars.len() - 1)
    }

    pub fn add_free(&mut self) -> VarId {
        self.vars.push(VarKind::Free);
        VarId(self.vars.len() - 1)
    }

    pub fn vars(&self) -> &[VarKind] {
        &self.vars
    }

    pub fn constraints(&self) -> &[LinearConstraint<T>] {
        &self.constraints
    }

    pub fn sense(&self) -> Sense {
        self.sense
    }

    pub fn psd_block_count(&self) -> usize {
        self.vars.iter().filter(|v| matches!(v, VarKind::Psd(_))).count()
    }

    pub fn scalar_count(&self) -> usize {
        self.vars.len() - self.psd_block_count()
    }

    fn check_terms(&self, terms: &[Term<T>]) -> Result<(), ConicError> {
        for t in terms {
            match t {
                Term::Trace(id, c) => match self.vars.get(id.0) {
                    None => return Err(ConicError::UnknownVariable(id.0)),
                    Some(VarKind::Psd(n)) => {
                        if c.rows() != *n || c.cols() != *n {
                            return Err(ConicError::TermShape {
                                var: id.0,
                                rows: c.rows(),
                                cols: c.cols(),
                                n: *n,
                            });
                        }
                    }
                    Some(_) => return Err(ConicError::TraceOnScalar(id.0)),
                },
                Term::Scalar(id, _) => match self.vars.get(id.0) {
                    None => return Err(ConicError::UnknownVariable(id.0)),
                    Some(VarKind::Psd(_)) => return Err(ConicError::ScalarOnMatrix(id.0)),
                    Some(_) => {}
                },
            }
        }
        Ok(())
    }

    pub fn set_objective(&mut self, terms: Vec<Term<T>>) -> Result<(), ConicError> {
        self.check_terms(&terms)?;
        self.objective = terms;
        Ok(())
    }

    pub fn add_constraint(&mut self, terms: Vec<Term<T>>, relation: Relation, rhs: T) -> Result<usize, ConicError> {
        self.check_terms(&terms)?;
        self.constraints.push(LinearConstraint { terms, relation, rhs });
        Ok(self.constraints.len() - 1)
    }

    fn eval_terms(terms: &[Term<T>], values: &[VarValue<T>]) -> T {
        terms
            .iter()
            .map(|t| match t {
                Term::Trace(id, c) => match &values[id.0] {
                    VarValue::Matrix(x) => c.re_trace_mul(x),
                    VarValue::Scalar(_) => T::nan(),
                },
                Term::Scalar(id, a) => match &values[id.0] {
                    VarValue::Scalar(x) => *a * *x,
                    VarValue::Matrix(_) => T::nan(),
                },
            })
            .sum()
    }

    pub fn objective_at(&self, values: &[VarValue<T>]) -> T {
        Self::eval_terms(&self.objective, values)
    }

    /// Left-hand side of constraint `i` at `values`.
    pub fn lhs_at(&self, i: usize, values: &[VarValue<T>]) -> T {
        Self::eval_terms(&self.constraints[i].terms, values)
    }

    /// Largest absolute violation over constraints and cone memberships.
    pub fn max_violation(&self, values: &[VarValue<T>]) -> T {
        let mut worst = T::zero();
        for (i, c) in self.constraints.iter().enumerate() {
            let lhs = self.lhs_at(i, values);
            let v = match c.relation {
                Relation::Eq => (lhs - c.rhs).abs(),
                Relation::Le => (lhs - c.rhs).max(T::zero()),
                Relation::Ge => (c.rhs - lhs).max(T::zero()),
            };
            worst = worst.max(v);
        }
        for (kind, val) in self.vars.iter().zip(values) {
            match (kind, val) {
                (VarKind::Psd(_), VarValue::Matrix(x)) => {
                    if let Ok(e) = hermitian_eig(&x.hermitian_part()) {
                        worst = worst.max(-*e.values.last().unwrap());
                    }
                }
                (VarKind::Nonneg, VarValue::Scalar(x)) => worst = worst.max(-*x),
                _ => {}
            }
        }
        worst
    }
}

#[derive(Clone, Copy, Debug)]
enum Loc {
    Block(usize),
    Lp(usize),
    Free(usize),
}

/// Row of the standard form `A(x) = b`.
struct Row<T> {
    mats: Vec<(usize, CMatrix<T>)>,
    lp: Vec<(usize, T)>,
    free: Vec<(usize, T)>,
}

/// `min <C,X> + c_lpᵀx + c_fᵀx_f  s.t.  A(X, x, x_f) = b`.
struct StandardForm<T> {
    blocks: Vec<usize>,
    n_lp: usize,
    n_free: usize,
    rows: Vec<Row<T>>,
    b: Vec<T>,
    c_blocks: Vec<CMatrix<T>>,
    c_lp: Vec<T>,
    c_free: Vec<T>,
    locs: Vec<Loc>,
}

/// Primal-dual iterate.
#[derive(Clone)]
struct Point<T> {
    x: Vec<CMatrix<T>>,
    z: Vec<CMatrix<T>>,
    xl: Vec<T>,
    zl: Vec<T>,
    xf: Vec<T>,
    y: Vec<T>,
}

struct Direction<T> {
    dx: Vec<CMatrix<T>>,
    dz: Vec<CMatrix<T>>,
    dxl: Vec<T>,
    dzl: Vec<T>,
    dxf: Vec<T>,
    dy: Vec<T>,
}

fn norm2<T: Real>(v: &[T]) -> T {
    v.iter().map(|x| *x * *x).sum::<T>().sqrt()
}

impl<T: Real> StandardForm<T> {
    fn build(p: &ConicProblem<T>) -> Self {
        let mut blocks = Vec::new();
        let mut n_lp = 0;
        let mut n_free = 0;
        let mut locs = Vec::with_capacity(p.vars.len());
        for v in &p.vars {
            locs.push(match v {
                VarKind::Psd(n) => {
                    blocks.push(*n);
                    Loc::Block(blocks.len() - 1)
                }
                VarKind::Nonneg => {
                    n_lp += 1;
                    Loc::Lp(n_lp - 1)
                }
                VarKind::Free => {
                    n_free += 1;
                    Loc::Free(n_free - 1)
                }
            });
        }
        let user_lp = n_lp;
        let slack_count = p.constraints.iter().filter(|c| c.relation != Relation::Eq).count();
        n_lp += slack_count;

        let mut rows = Vec::with_capacity(p.constraints.len());
        let mut b = Vec::with_capacity(p.constraints.len());
        let mut next_slack = user_lp;
        for c in &p.constraints {
            let mut mats: Vec<(usize, CMatrix<T>)> = Vec::new();
            let mut lp: Vec<(usize, T)> = Vec::new();
            let mut free: Vec<(usize, T)> = Vec::new();
            for t in &c.terms {
                match t {
                    Term::Trace(id, cm) => {
                        let Loc::Block(k) = locs[id.0] else { unreachable!() };
                        let h = cm.hermitian_part();
                        if let Some(e) = mats.iter_mut().find(|(kk, _)| *kk == k) {
                            e.1 = &e.1 + &h;
                        } else {
                            mats.push((k, h));
                        }
                    }
                    Term::Scalar(id, a) => match locs[id.0] {
                        Loc::Lp(j) => lp.push((j, *a)),
                        Loc::Free(j) => free.push((j, *a)),
                        Loc::Block(_) => unreachable!(),
                    },
                }
            }
            match c.relation {
                Relation::Eq => {}
                Relation::Le => {
                    lp.push((next_slack, T::one()));
                    next_slack += 1;
                }
                Relation::Ge => {
                    lp.push((next_slack, -T::one()));
                    next_slack += 1;
                }
            }
            let mut nrm = mats.iter().map(|(_, m)| m.frobenius_norm_sq()).sum::<T>();
            nrm += lp.iter().map(|(_, a)| *a * *a).sum::<T>();
            nrm += free.iter().map(|(_, a)| *a * *a).sum::<T>();
            let nrm = nrm.sqrt();
            let s = if nrm > T::zero() { T::one() / nrm } else { T::one() };
            for (_, m) in mats.iter_mut() {
                *m = m.scale_real(s);
            }
            for (_, a) in lp.iter_mut().chain(free.iter_mut()) {
                *a *= s;
            }
            rows.push(Row { mats, lp, free });
            b.push(c.rhs * s);
        }

        let sign = match p.sense {
            Sense::Minimize => T::one(),
            Sense::Maximize => -T::one(),
        };
        let mut c_blocks: Vec<CMatrix<T>> = blocks.iter().map(|&n| CMatrix::zeros(n, n)).collect();
        let mut c_lp = vec![T::zero(); n_lp];
        let mut c_free = vec![T::zero(); n_free];
        for t in &p.objective {
            match t {
                Term::Trace(id, cm) => {
                    let Loc::Block(k) = locs[id.0] else { unreachable!() };
                    c_blocks[k].axpy_real(sign, &cm.hermitian_part());
                }
                Term::Scalar(id, a) => match locs[id.0] {
                    Loc::Lp(j) => c_lp[j] += sign * *a,
                    Loc::Free(j) => c_free[j] += sign * *a,
                    Loc::Block(_) => unreachable!(),
                },
            }
        }
        let cn = (c_blocks.iter().map(|m| m.frobenius_norm_sq()).sum::<T>()
            + c_lp.iter().map(|a| *a * *a).sum::<T>()
            + c_free.iter().map(|a| *a * *a).sum::<T>())
        .sqrt();
        let obj_scale = T::one().max(cn);
        for m in c_blocks.iter_mut() {
            *m = m.scale_real(T::one() / obj_scale);
        }
        for a in c_lp.iter_mut().chain(c_free.iter_mut()) {
            *a /= obj_scale;
        }
        Self {
            blocks,
            n_lp,
            n_free,
            rows,
            b,
            c_blocks,
            c_lp,
            c_free,
            locs,
        }
    }

    fn m(&self) -> usize {
        self.rows.len()
    }

    fn apply(&self, x: &[CMatrix<T>], xl: &[T], xf: &[T]) -> Vec<T> {
        self.rows
            .iter()
            .map(|r| {
                let mut s = T::zero();
                for (k, a) in &r.mats {
                    s += a.re_trace_mul(&x[*k]);
                }
                for (j, a) in &r.lp {
                    s += *a * xl[*j];
                }
                for (j, a) in &r.free {
                    s += *a * xf[*j];
                }
                s
            })
            .collect()
    }

    /// `Aᵀ y` split into cone blocks, LP entries and free entries.
    fn adjoint(&self, y: &[T]) -> (Vec<CMatrix<T>>, Vec<T>, Vec<T>) {
        let mut mats: Vec<CMatrix<T>> = self.blocks.iter().map(|&n| CMatrix::zeros(n, n)).collect();
        let mut lp = vec![T::zero(); self.n_lp];
        let mut free = vec![T::zero(); self.n_free];
        for (r, &yi) in self.rows.iter().zip(y) {
            for (k, a) in &r.mats {
                mats[*k].axpy_real(yi, a);
            }
            for (j, a) in &r.lp {
                lp[*j] += *a * yi;
            }
            for (j, a) in &r.free {
                free[*j] += *a * yi;
            }
        }
        (mats, lp, free)
    }

    fn primal_obj(&self, pt: &Point<T>) -> T {
        let mut s = T::zero();
        for (c, x) in self.c_blocks.iter().zip(&pt.x) {
            s += c.re_trace_mul(x);
        }
        for (c, x) in self.c_lp.iter().zip(&pt.xl) {
            s += *c * *x;
        }
        for (c, x) in self.c_free.iter().zip(&pt.xf) {
            s += *c * *x;
        }
        s
    }

    fn dual_obj(&self, pt: &Point<T>) -> T {
        self.b.iter().zip(&pt.y).map(|(a, b)| *a * *b).sum()
    }

    fn c_norm(&self) -> T {
        (self.c_blocks.iter().map(|m| m.frobenius_norm_sq()).sum::<T>()
            + self.c_lp.iter().map(|a| *a * *a).sum::<T>()
            + self.c_free.iter().map(|a| *a * *a).sum::<T>())
        .sqrt()
    }

    fn start(&self) -> Point<T> {
        let ten = T::lit(10.0);
        let mut x = Vec::new();
        let mut z = Vec::new();
        for (k, &n) in self.blocks.iter().enumerate() {
            let nf = T::lit(n as f64);
            let mut xi = ten.max(nf.sqrt());
            let mut eta = ten.max(nf.sqrt()).max(self.c_blocks[k].frobenius_norm());
            for (r, &bi) in self.rows.iter().zip(&self.b) {
                for (kk, a) in &r.mats {
                    if *kk == k {
                        let an = a.frobenius_norm();
                        xi = xi.max(nf * (T::one() + bi.abs()) / (T::one() + an));
                        eta = eta.max(an);
                    }
                }
            }
            x.push(CMatrix::identity(n).scale_real(xi));
            z.push(CMatrix::identity(n).scale_real(eta));
        }
        let mut xl = vec![T::one(); self.n_lp];
        let mut zl = vec![T::one(); self.n_lp];
        for j in 0..self.n_lp {
            let mut xi = T::one();
            let mut eta = T::one().max(self.c_lp[j].abs());
            for (r, &bi) in self.rows.iter().zip(&self.b) {
                for (jj, a) in &r.lp {
                    if *jj == j {
                        xi = xi.max((T::one() + bi.abs()) / (T::one() + a.abs()));
                        eta = eta.max(a.abs());
                    }
                }
            }
            xl[j] = xi;
            zl[j] = eta;
        }
        Point {
            x,
            z,
            xl,
            zl,
            xf: vec![T::zero(); self.n_free],
            y: vec![T::zero(); self.m()],
        }
    }
}

fn max_step_psd<T: Real>(x: &CMatrix<T>, dx: &CMatrix<T>) -> Option<T> {
    let l = cholesky(x).ok()?;
    let li = lower_inverse(&l);
    let s = li.matmul(dx).matmul(&li.adjoint()).hermitian_part();
    let e = hermitian_eig(&s).ok()?;
    let lmin = *e.values.last().unwrap();
    Some(if lmin < T::zero() { -T::one() / lmin } else { T::infinity() })
}

fn max_step_lp<T: Real>(x: &[T], dx: &[T]) -> T {
    x.iter()
        .zip(dx)
        .filter(|(_, d)| **d < T::zero())
        .map(|(x, d)| -*x / *d)
        .fold(T::infinity(), T::min)
}

struct Residuals<T> {
    rp: Vec<T>,
    rd: Vec<CMatrix<T>>,
    rdl: Vec<T>,
    rf: Vec<T>,
}

struct Solver<'a, T> {
    sf: &'a StandardForm<T>,
}

impl<T: Real> Solver<'_, T> {
    fn residuals(&self, pt: &Point<T>) -> Residuals<T> {
        let sf = self.sf;
        let ax = sf.apply(&pt.x, &pt.xl, &pt.xf);
        let rp: Vec<T> = sf.b.iter().zip(&ax).map(|(b, a)| *b - *a).collect();
        let (aty, atyl, atyf) = sf.adjoint(&pt.y);
        let rd = sf
            .c_blocks
            .iter()
            .zip(&aty)
            .zip(&pt.z)
            .map(|((c, a), z)| &(c - a) - z)
            .collect();
        let rdl = (0..sf.n_lp).map(|j| sf.c_lp[j] - atyl[j] - pt.zl[j]).collect();
        let rf = (0..sf.n_free).map(|j| sf.c_free[j] - atyf[j]).collect();
        Residuals { rp, rd, rdl, rf }
    }

    /// Assembles and factors the augmented Schur system at `pt`.
    fn factor(&self, pt: &Point<T>, zinv: &[CMatrix<T>]) -> Option<LuFactor<T>> {
        let sf = self.sf;
        let m = sf.m();
        let n = m + sf.n_free;
        let mut a = vec![T::zero(); n * n];
        // X A_j Z⁻¹ for every row touching each block
        let mut prods: Vec<Vec<(usize, CMatrix<T>)>> = vec![Vec::new(); sf.blocks.len()];
        for (j, r) in sf.rows.iter().enumerate() {
            for (k, aj) in &r.mats {
                prods[*k].push((j, pt.x[*k].matmul(aj).matmul(&zinv[*k])));
            }
        }
        for (i, r) in sf.rows.iter().enumerate() {
            for (k, ai) in &r.mats {
                for (j, p) in &prods[*k] {
                    if *j < i {
                        continue;
                    }
                    a[i * n + *j] += ai.re_trace_mul(p);
                }
            }
        }
        let dl: Vec<T> = pt.xl.iter().zip(&pt.zl).map(|(x, z)| *x / *z).collect();
        let mut lp_cols: Vec<Vec<(usize, T)>> = vec![Vec::new(); sf.n_lp];
        for (i, r) in sf.rows.iter().enumerate() {
            for (j, aij) in &r.lp {
                lp_cols[*j].push((i, *aij));
            }
        }
        for (j, col) in lp_cols.iter().enumerate() {
            for &(i1, a1) in col {
                for &(i2, a2) in col {
                    if i2 >= i1 {
                        a[i1 * n + i2] += a1 * dl[j] * a2;
                    }
                }
            }
        }
        for i in 0..m {
            for j in 0..i {
                a[i * n + j] = a[j * n + i];
            }
        }
        for (i, r) in sf.rows.iter().enumerate() {
            for (j, f) in &r.free {
                a[i * n + m + *j] = *f;
                a[(m + *j) * n + i] = *f;
            }
        }
        LuFactor::new(a, n).ok()
    }

    /// Solves for the direction with centering target `sigma_mu` and
    /// second-order corrections `corr`.
    #[allow(clippy::too_many_arguments)]
    fn direction(
        &self,
        pt: &Point<T>,
        res: &Residuals<T>,
        zinv: &[CMatrix<T>],
        lu: &LuFactor<T>,
        sigma_mu: T,
        corr: Option<(&[CMatrix<T>], &[T])>,
    ) -> Direction<T> {
        let sf = self.sf;
        let m = sf.m();
        // Rc = σμ Z⁻¹ − X − corr,  G = Rc − herm(X R_d Z⁻¹)
        let mut g_blocks = Vec::with_capacity(sf.blocks.len());
        let mut rc_blocks = Vec::with_capacity(sf.blocks.len());
        for k in 0..sf.blocks.len() {
            let mut rc = zinv[k].scale_real(sigma_mu);
            rc = &rc - &pt.x[k];
            if let Some((cb, _)) = corr {
                rc = &rc - &cb[k];
            }
            let t = pt.x[k].matmul(&res.rd[k]).matmul(&zinv[k]).hermitian_part();
            g_blocks.push(&rc - &t);
            rc_blocks.push(rc);
        }
        let mut rcl = Vec::with_capacity(sf.n_lp);
        let mut gl = Vec::with_capacity(sf.n_lp);
        for j in 0..sf.n_lp {
            let mut rc = sigma_mu / pt.zl[j] - pt.xl[j];
            if let Some((_, cl)) = corr {
                rc -= cl[j];
            }
            gl.push(rc - pt.xl[j] / pt.zl[j] * res.rdl[j]);
            rcl.push(rc);
        }
        let ag = sf.apply(&g_blocks, &gl, &vec![T::zero(); sf.n_free]);
        let mut rhs: Vec<T> = res.rp.iter().zip(&ag).map(|(r, a)| *r - *a).collect();
        rhs.extend(res.rf.iter().copied());
        let sol = lu.solve(&rhs);
        let dy = sol[..m].to_vec();
        let dxf = sol[m..].to_vec();
        let (aty, atyl, _) = sf.adjoint(&dy);
        let mut dx = Vec::with_capacity(sf.blocks.len());
        let mut dz = Vec::with_capacity(sf.blocks.len());
        for k in 0..sf.blocks.len() {
            let dzk = &res.rd[k] - &aty[k];
            let t = pt.x[k].matmul(&dzk).matmul(&zinv[k]).hermitian_part();
            dx.push(&rc_blocks[k] - &t);
            dz.push(dzk);
        }
        let mut dxl = Vec::with_capacity(sf.n_lp);
        let mut dzl = Vec::with_capacity(sf.n_lp);
        for j in 0..sf.n_lp {
            let dzj = res.rdl[j] - atyl[j];
            dxl.push(rcl[j] - pt.xl[j] / pt.zl[j] * dzj);
            dzl.push(dzj);
        }
        Direction {
            dx,
            dz,
            dxl,
            dzl,
            dxf,
            dy,
        }
    }

    fn step_lengths(&self, pt: &Point<T>, d: &Direction<T>) -> Option<(T, T)> {
        let mut ap = max_step_lp(&pt.xl, &d.dxl);
        let mut ad = max_step_lp(&pt.zl, &d.dzl);
        for k in 0..self.sf.blocks.len() {
            ap = ap.min(max_step_psd(&pt.x[k], &d.dx[k])?);
            ad = ad.min(max_step_psd(&pt.z[k], &d.dz[k])?);
        }
        Some((ap, ad))
    }
}

fn inner_xz<T: Real>(pt: &Point<T>) -> T {
    let mut s = T::zero();
    for (x, z) in pt.x.iter().zip(&pt.z) {
        s += x.re_trace_mul(z);
    }
    for (x, z) in pt.xl.iter().zip(&pt.zl) {
        s += *x * *z;
    }
    s
}

/// Solves with default settings.
pub fn solve_conic<T: Real>(p: &ConicProblem<T>) -> SolverSolution<T> {
    solve_conic_with(p, &SolverSettings::default())
}

pub fn solve_conic_with<T: Real>(p: &ConicProblem<T>, settings: &SolverSettings) -> SolverSolution<T> {
    let sf = StandardForm::build(p);
    let solver = Solver { sf: &sf };
    let tol = settings
        .tol
        .map(T::lit)
        .unwrap_or_else(|| T::epsilon().powf(T::lit(0.6)));
    let nu = T::lit((sf.blocks.iter().sum::<usize>() + sf.n_lp).max(1) as f64);
    let bnorm = norm2(&sf.b);
    let cnorm = sf.c_norm();

    let mut pt = sf.start();
    let mut status = SolverStatus::NumericalFailure;
    let mut iterations = 0;
    let mut stalls = 0;
    let (mut dinf, mut gap) = (T::infinity(), T::infinity());
    let mut best: Option<(T, Point<T>)> = None;

    for it in 0..=settings.max_iter {
        iterations = it;
        let res = solver.residuals(&pt);
        let pobj = sf.primal_obj(&pt);
        let dobj = sf.dual_obj(&pt);
        let pinf = norm2(&res.rp) / (T::one() + bnorm);
        let rd_norm = (res.rd.iter().map(|m| m.frobenius_norm_sq()).sum::<T>()
            + res.rdl.iter().map(|a| *a * *a).sum::<T>()
            + res.rf.iter().map(|a| *a * *a).sum::<T>())
        .sqrt();
        dinf = rd_norm / (T::one() + cnorm);
        let xz = inner_xz(&pt);
        gap = xz.max((pobj - dobj).abs()) / (T::one() + pobj.abs() + dobj.abs());
        let merit = pinf.max(dinf).max(gap);
        if best.as_ref().is_none_or(|(b, _)| merit < *b) {
            best = Some((merit, pt.clone()));
        }
        if merit < tol {
            status = SolverStatus::Optimal;
            break;
        }
        // Certificates of infeasibility along diverging iterates.
        if dobj > T::zero() {
            let (aty, atyl, atyf) = sf.adjoint(&pt.y);
            let mut ray = T::zero();
            for (a, z) in aty.iter().zip(&pt.z) {
                ray += (a + z).frobenius_norm_sq();
            }
            for (a, z) in atyl.iter().zip(&pt.zl) {
                ray += (*a + *z) * (*a + *z);
            }
            ray += atyf.iter().map(|a| *a * *a).sum::<T>();
            if ray.sqrt() < T::lit(1e-8) * dobj && dobj > T::lit(1e6) {
                status = SolverStatus::Infeasible;
                break;
            }
        }
        if pobj < T::zero() {
            let ax = sf.apply(&pt.x, &pt.xl, &pt.xf);
            if norm2(&ax) < T::lit(1e-8) * (-pobj) && -pobj > T::lit(1e6) {
                status = SolverStatus::Unbounded;
                break;
            }
        }
        if it == settings.max_iter {
            break;
        }

        let mu = xz / nu;
        let zinv: Option<Vec<CMatrix<T>>> = pt.z.iter().map(|z| hpd_inverse(z).ok()).collect();
        let Some(zinv) = zinv else { break };
        let Some(lu) = solver.factor(&pt, &zinv) else { break };

        let aff = solver.direction(&pt, &res, &zinv, &lu, T::zero(), None);
        let Some((ap_aff, ad_aff)) = solver.step_lengths(&pt, &aff) else { break };
        let (ap_aff, ad_aff) = (ap_aff.min(T::one()), ad_aff.min(T::one()));
        let mut xz_aff = T::zero();
        for k in 0..sf.blocks.len() {
            let mut xk = pt.x[k].clone();
            xk.axpy_real(ap_aff, &aff.dx[k]);
            let mut zk = pt.z[k].clone();
            zk.axpy_real(ad_aff, &aff.dz[k]);
            xz_aff += xk.re_trace_mul(&zk);
        }
        for j in 0..sf.n_lp {
            xz_aff += (pt.xl[j] + ap_aff * aff.dxl[j]) * (pt.zl[j] + ad_aff * aff.dzl[j]);
        }
        let ratio = (xz_aff / nu / mu).max(T::zero());
        let sigma = ratio.powi(3).min(T::one());

        let corr_blocks: Vec<CMatrix<T>> = (0..sf.blocks.len())
            .map(|k| aff.dx[k].matmul(&aff.dz[k]).matmul(&zinv[k]).hermitian_part())
            .collect();
        let corr_lp: Vec<T> = (0..sf.n_lp).map(|j| aff.dxl[j] * aff.dzl[j] / pt.zl[j]).collect();
        let d = solver.direction(&pt, &res, &zinv, &lu, sigma * mu, Some((&corr_blocks, &corr_lp)));
        let Some((ap, ad)) = solver.step_lengths(&pt, &d) else { break };
        let gamma = T::lit(0.9) + T::lit(0.09) * ap_aff.min(ad_aff);
        let ap = (gamma * ap).min(T::one());
        let ad = (gamma * ad).min(T::one());
        if ap < T::lit(1e-10) && ad < T::lit(1e-10) {
            stalls += 1;
            if stalls >= 3 {
                break;
            }
        } else {
            stalls = 0;
        }
        for k in 0..sf.blocks.len() {
            pt.x[k].axpy_real(ap, &d.dx[k]);
            pt.x[k] = pt.x[k].hermitian_part();
            pt.z[k].axpy_real(ad, &d.dz[k]);
            pt.z[k] = pt.z[k].hermitian_part();
        }
        for j in 0..sf.n_lp {
            pt.xl[j] += ap * d.dxl[j];
            pt.zl[j] += ad * d.dzl[j];
        }
        for j in 0..sf.n_free {
            pt.xf[j] += ap * d.dxf[j];
        }
        for i in 0..sf.m() {
            pt.y[i] += ad * d.dy[i];
        }
    }

    if status == SolverStatus::NumericalFailure {
        // Accept the best iterate when it meets the looser contract tolerance.
        if let Some((merit, bp)) = best {
            if merit < T::lit(1e-7) {
                status = SolverStatus::Optimal;
            }
            pt = bp;
        }
    }

    let values: Vec<VarValue<T>> = sf
        .locs
        .iter()
        .map(|loc| match *loc {
            Loc::Block(k) => VarValue::Matrix(pt.x[k].clone()),
            Loc::Lp(j) => VarValue::Scalar(pt.xl[j]),
            Loc::Free(j) => VarValue::Scalar(pt.xf[j]),
        })
        .collect();
    let ax = sf.apply(&pt.x, &pt.xl, &pt.xf);
    let primal_residual = sf
        .b
        .iter()
        .zip(&ax)
        .fold(T::zero(), |m, (b, a)| m.max((*b - *a).abs()));
    SolverSolution {
        status,
        objective_value: p.objective_at(&values),
        values,
        iterations,
        primal_residual,
        dual_residual: dinf,
        gap,
    }
}
