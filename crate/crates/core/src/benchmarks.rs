//! Comparison schemes built from the same stages.

use std::fmt;
use std::str::FromStr;

use rand::Rng;

use crate::algorithm::{
    run_pipeline, AlgorithmError, IterationRecord, IterationTrace, PipelineOptions, RunOutcome, Scenario, Standing,
    ThetaSet,
};
use crate::channel::Stream;
use crate::config::SystemConfig;
use crate::design::DesignState;
use crate::numerics::{gaussian_matrix, random_unitary};
use crate::power_split::{beta_upper_bound, user_splits};

/// Lower and upper ends of the random power-split draw.
pub const RANDOM_BETA_RANGE: (f64, f64) = (0.05, 0.95);

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Arm {
    /// Full design with a fully connected surface.
    OptBdris,
    /// Full design with a diagonal, unit-modulus surface.
    DiagRis,
    /// Random `β`; precoders and `Θ` optimized.
    RandomBeta,
    /// Random `β` and precoders; `Θ` optimized.
    RandomPrecoder,
    /// Every variable random.
    AllRandom,
}

impl Arm {
    pub const ALL: [Arm; 5] = [Arm::OptBdris, Arm::DiagRis, Arm::RandomBeta, Arm::RandomPrecoder, Arm::AllRandom];

    pub fn name(self) -> &'static str {
        match self {
            Arm::OptBdris => "opt-bdris",
            Arm::DiagRis => "diag-ris",
            Arm::RandomBeta => "random-beta",
            Arm::RandomPrecoder => "random-precoder",
            Arm::AllRandom => "all-random",
        }
    }
}

impl fmt::Display for Arm {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for Arm {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        Arm::ALL
            .into_iter()
            .find(|a| a.name() == s.trim())
            .ok_or_else(|| format!("unknown arm `{s}` (expected one of opt-bdris, diag-ris, random-beta, random-precoder, all-random)"))
    }
}

/// Gaussian precoders scaled to spend exactly `P_max`.
fn random_precoders<R: Rng + ?Sized>(design: &mut DesignState<f64>, p_max: f64, rng: &mut R) {
    let k = design.v0.rows();
    let w0 = gaussian_matrix::<f64, _>(k, 1, rng);
    let w: Vec<_> = (0..design.users()).map(|_| gaussian_matrix::<f64, _>(k, 1, rng)).collect();
    design.set_vectors(&w0, &w);
    let used = design.total_power();
    if used > 0.0 {
        let s = p_max / used;
        design.v0 = design.v0.scale_real(s);
        design.v = design.v.iter().map(|v| v.scale_real(s)).collect();
    }
}

/// Uniform `β` clamped to each user's harvesting cap, when it has one.
fn random_beta<R: Rng + ?Sized>(scn: &Scenario, design: &mut DesignState<f64>, rng: &mut R) {
    let (lo, hi) = RANDOM_BETA_RANGE;
    let draws: Vec<f64> = (0..design.users()).map(|_| lo + (hi - lo) * rng.random::<f64>()).collect();
    let splits = user_splits(design, &scn.channels, &scn.req);
    design.beta = draws
        .into_iter()
        .zip(&splits)
        .map(|(b, s)| match beta_upper_bound(s.received, scn.req.psi) {
            Ok(cap) => b.min(cap),
            Err(_) => b,
        })
        .collect();
}

/// Runs one arm on one drop. Infeasible outcomes are returned, not raised;
/// see [`RunOutcome::infeasibility`].
pub fn run_benchmark(arm: Arm, config: &SystemConfig, seed: u64) -> Result<RunOutcome, AlgorithmError> {
    let scn = Scenario::new(config, seed)?;
    let mut rng = scn.rng(Stream::Benchmark);
    match arm {
        Arm::OptBdris => run_pipeline(&scn, scn.initial_design(ThetaSet::Unitary)?, PipelineOptions::FULL),
        Arm::DiagRis => run_pipeline(
            &scn,
            scn.initial_design(ThetaSet::Diagonal)?,
            PipelineOptions {
                theta: ThetaSet::Diagonal,
                ..PipelineOptions::FULL
            },
        ),
        Arm::RandomBeta => {
            let mut d = scn.initial_design(ThetaSet::Unitary)?;
            random_beta(&scn, &mut d, &mut rng);
            run_pipeline(
                &scn,
                d,
                PipelineOptions {
                    split: false,
                    ..PipelineOptions::FULL
                },
            )
        }
        Arm::RandomPrecoder => {
            let mut d = scn.initial_design(ThetaSet::Unitary)?;
            random_precoders(&mut d, config.p_max, &mut rng);
            random_beta(&scn, &mut d, &mut rng);
            run_pipeline(
                &scn,
                d,
                PipelineOptions {
                    precoders: false,
                    split: false,
                    theta: ThetaSet::Unitary,
                },
            )
        }
        Arm::AllRandom => {
            let mut d = scn.initial_design(ThetaSet::Unitary)?;
            d.theta = random_unitary(config.ris_elements, &mut rng)?;
            random_precoders(&mut d, config.p_max, &mut rng);
            random_beta(&scn, &mut d, &mut rng);
            let standing = Standing::of(&mut d, &scn.channels, &scn.req);
            Ok(RunOutcome {
                trace: IterationTrace {
                    records: vec![IterationRecord {
                        sum_rate: standing.sum_rate,
                        stage1_objective: None,
                        stage2_objective: None,
                        stage3_lagrangian: None,
                        residuals: standing.residuals,
                    }],
                    converged: true,
                },
                design: d,
                standing,
                wall_ms: vec![0.0],
            })
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn small() -> SystemConfig {
        SystemConfig {
            ris_elements: 4,
            ..SystemConfig::desk()
        }
    }

    #[test]
    fn names_roundtrip() {
        for a in Arm::ALL {
            assert_eq!(a.name().parse::<Arm>().unwrap(), a);
        }
        assert!("best".parse::<Arm>().is_err());
    }

    #[test]
    fn diagonal_arm_stays_diagonal() {
        let out = run_benchmark(Arm::DiagRis, &small(), 2).unwrap();
        let t = &out.design.theta;
        for i in 0..t.rows() {
            for j in 0..t.cols() {
                if i == j {
                    assert!((t[(i, i)].norm() - 1.0).abs() <= 1e-10);
                } else {
                    assert_eq!(t[(i, j)].norm(), 0.0);
                }
            }
        }
    }

    #[test]
    fn random_beta_is_feasible_or_flagged() {
        for seed in 0..3 {
            let out = run_benchmark(Arm::RandomBeta, &small(), seed).unwrap();
            assert!(out.design.beta.iter().all(|&b| b > 0.0 && b <= RANDOM_BETA_RANGE.1));
            assert!(out.feasible() || out.infeasibility().is_some());
            assert!(out.standing.residuals.eh <= 1e-6 || !out.feasible());
        }
    }

    #[test]
    fn random_precoders_spend_the_budget() {
        let out = run_benchmark(Arm::AllRandom, &small(), 4).unwrap();
        assert!((out.design.total_power() - 1.0).abs() < 1e-12);
        assert_eq!(out.trace.len(), 1);
    }
}
