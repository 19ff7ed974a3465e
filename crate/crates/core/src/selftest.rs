//! Quick oracle checks exposed by the `selftest` command.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::channel::{unitarity_residual, ChannelSet};
use crate::config::SystemConfig;
use crate::design::DesignState;
use crate::manifold::{euclidean_grad, lagrangian, stage3, tangent_project, DualState, Stage3Context, Stage3Settings, UnitaryGroup};
use crate::metrics::{lemma1_oracle, psi_threshold, Noise, Requirements};
use crate::numerics::{gaussian_matrix, random_unitary, CMatrix};
use crate::power_split::{grid_oracle, optimize_beta, user_splits};
use crate::precoder::{matched_filter_init, score_precoders, stage1, Stage1Params, Stage1Settings, UserLink};
use crate::scalar::creal;

/// Outcome of one check.
#[derive(Debug, Clone, PartialEq)]
pub struct Check {
    pub name: &'static str,
    pub passed: bool,
    pub detail: String,
}

fn check(name: &'static str, passed: bool, detail: String) -> Check {
    Check { name, passed, detail }
}

fn worst_case_bound(rng: &mut ChaCha8Rng) -> Check {
    let mut worst = f64::NEG_INFINITY;
    for i in 0..20 {
        let y = gaussian_matrix::<f64, _>(1 + i % 4, 1, rng);
        let y = CMatrix::outer(&y, &y);
        match lemma1_oracle(&y, 0.3, 500, rng) {
            Ok((bound, sampled)) => worst = worst.max(sampled - bound),
            Err(e) => return check("worst-case bound", false, e.to_string()),
        }
    }
    check("worst-case bound", worst <= 1e-12, format!("max sampled excess {worst:.2e}"))
}

fn harvester_inverse() -> Check {
    let eh = SystemConfig::default().eh();
    match psi_threshold(&eh) {
        Ok(psi) => {
            let rel = (eh.harvested(psi) - eh.target).abs() / eh.target;
            check("harvester inverse", rel <= 1e-9, format!("Ψ = {psi:.6e} W, round-trip error {rel:.2e}"))
        }
        Err(e) => check("harvester inverse", false, e.to_string()),
    }
}

fn random_stage3_instance(rng: &mut ChaCha8Rng, l: usize, m: usize) -> (ChannelSet<f64>, CMatrix<f64>, Vec<CMatrix<f64>>, Requirements<f64>) {
    let k = 2;
    let ch = ChannelSet {
        g_br: gaussian_matrix(l, k, rng),
        h_rm: (0..m).map(|_| gaussian_matrix(l, 1, rng)).collect(),
        f_bm: (0..m).map(|_| gaussian_matrix(k, 1, rng)).collect(),
    };
    let mut gram = || {
        let w = gaussian_matrix::<f64, _>(k, 1, rng).scale_real(0.4);
        CMatrix::outer(&w, &w)
    };
    let v0 = gram();
    let v = (0..m).map(|_| gram()).collect();
    let req = Requirements {
        p_max: 1.0,
        r_min: 0.1,
        psi: 0.05,
        noise: Noise {
            antenna: 0.05,
            decoder: 0.1,
        },
        rho_tilde: 0.02,
    };
    (ch, v0, v, req)
}

fn gradient(rng: &mut ChaCha8Rng) -> Check {
    let mut worst: f64 = 0.0;
    for inst in 0..2 {
        let (ch, v0, v, req) = random_stage3_instance(rng, 2 + 2 * inst, 1 + inst);
        let beta = vec![0.6; v.len()];
        let ctx = Stage3Context::new(&ch, &v0, &v, &beta, &req);
        let theta = random_unitary(ch.ris_elements(), rng).expect("L >= 1");
        let mut duals = DualState::new(v.len());
        for x in duals.rho.iter_mut().chain(duals.lambda.iter_mut().map(|l| &mut l[4])) {
            *x = rng.random();
        }
        duals.pin(&ctx, &theta);
        let rc = vec![0.05; v.len()];
        let g = euclidean_grad(&theta, &ctx, &duals);
        for _ in 0..5 {
            let d = gaussian_matrix::<f64, _>(theta.rows(), theta.rows(), rng);
            let t = 1e-6;
            let mut p = theta.clone();
            p.axpy_real(t, &d);
            let mut q = theta.clone();
            q.axpy_real(-t, &d);
            let (Ok(lp), Ok(lq)) = (lagrangian(&p, &ctx, &duals, &rc), lagrangian(&q, &ctx, &duals, &rc)) else {
                return check("gradient", false, "Lagrangian evaluation failed".into());
            };
            let fd = (lp - lq) / (2.0 * t);
            let an = 2.0 * g.re_inner(&d);
            worst = worst.max((fd - an).abs() / an.abs().max(1e-8));
        }
    }
    check("gradient", worst <= 1e-5, format!("max relative finite-difference error {worst:.2e}"))
}

fn manifold(rng: &mut ChaCha8Rng) -> Check {
    let (ch, v0, v, req) = random_stage3_instance(rng, 4, 2);
    let beta = vec![0.6; 2];
    let ctx = Stage3Context::new(&ch, &v0, &v, &beta, &req);
    let theta = random_unitary(4, rng).expect("L >= 1");
    let settings = Stage3Settings {
        tol: 0.0,
        ..Stage3Settings::default()
    };
    let mut duals = DualState::new(2);
    let Ok(out) = stage3(&UnitaryGroup, &ctx, &theta, &[0.0, 0.0], &mut duals, &settings) else {
        return check("manifold", false, "stage 3 failed".into());
    };
    let unit = unitarity_residual(&out.theta);
    let g = gaussian_matrix::<f64, _>(4, 4, rng);
    let p = tangent_project(&out.theta, &g).omega;
    let idem = (&tangent_project(&out.theta, &p).omega - &p).frobenius_norm();
    check(
        "manifold",
        unit <= 1e-8 && idem <= 1e-12,
        format!("unitarity {unit:.2e}, projection idempotence {idem:.2e}"),
    )
}

fn scalar_rate() -> Check {
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
    match stage1(&p, &v0, &v, &[0.0], &mut rng) {
        Ok(r) => {
            let got = score_precoders(&p, &r.v0, &r.v).sum_rate;
            let err = (got - 3f64.log2()).abs();
            check("scalar rate", err <= 1e-3, format!("sum-rate {got:.6}, error {err:.2e}"))
        }
        Err(e) => check("scalar rate", false, e.to_string()),
    }
}

fn power_split(rng: &mut ChaCha8Rng) -> Check {
    let (ch, v0, v, mut req) = random_stage3_instance(rng, 3, 2);
    req.psi = 0.01;
    let mut d = DesignState::zeros(2, 2, 3);
    d.theta = random_unitary(3, rng).expect("L >= 1");
    d.v0 = v0;
    d.v = v;
    let sol = optimize_beta(&d, &ch, &req);
    let splits = user_splits(&d, &ch, &req);
    match grid_oracle(&splits, &req, 1e-3) {
        Some(best) if sol.feasible => {
            let gap = (sol.objective - best).abs();
            check("power split", gap <= 1e-3, format!("closed form {:.6}, grid {best:.6}", sol.objective))
        }
        other => check(
            "power split",
            other.is_none() && !sol.feasible,
            format!("feasibility mismatch: grid {other:?}, closed form {}", sol.feasible),
        ),
    }
}

/// Runs every check with a fixed seed.
pub fn run_all() -> Vec<Check> {
    let mut rng = ChaCha8Rng::seed_from_u64(0x5e1f);
    vec![
        worst_case_bound(&mut rng),
        harvester_inverse(),
        gradient(&mut rng),
        manifold(&mut rng),
        scalar_rate(),
        power_split(&mut rng),
    ]
}

#[cfg(test)]
mod tests {
    #[test]
    fn all_checks_pass() {
        for c in super::run_all() {
            assert!(c.passed, "{}: {}", c.name, c.detail);
        }
    }
}
