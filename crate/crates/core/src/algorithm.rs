//! Alternating three-stage optimization with per-stage safeguards.

use std::fmt;
use std::time::Instant;

use rand_chacha::ChaCha8Rng;
use thiserror::Error;

use crate::channel::{gen_channels, stream, ChannelError, ChannelSet, Stream};
use crate::config::{ConfigError, SystemConfig};
use crate::design::DesignState;
use crate::manifold::{stage3, DiagonalPhases, DualState, ManifoldError, Stage3Context, Stage3Settings, UnitaryGroup};
use crate::metrics::{evaluate, feasibility_residuals, psi_threshold, MetricsError, Requirements, ResidualReport};
use crate::numerics::{random_unitary, CMatrix, NumericsError};
use crate::power_split::{allocate_common_rate, optimize_beta};
use crate::precoder::{matched_filter_init, stage1, PrecoderError, Stage1Params, Stage1Settings};
use crate::scalar::cplx;

/// Tolerance on relative residuals for a design to count as feasible.
pub const FEASIBILITY_TOL: f64 = 1e-6;

/// Constraint that keeps a run from reaching a feasible design.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Binding {
    EnergyHarvesting,
    Qos,
    Power,
    CommonRate,
    Unitarity,
}

impl fmt::Display for Binding {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Binding::EnergyHarvesting => "energy-harvesting",
            Binding::Qos => "minimum-rate (QoS)",
            Binding::Power => "transmit-power",
            Binding::CommonRate => "common-rate",
            Binding::Unitarity => "unitarity",
        })
    }
}

#[derive(Debug, Error)]
pub enum AlgorithmError {
    #[error(transparent)]
    Config(#[from] ConfigError),
    #[error(transparent)]
    Channel(#[from] ChannelError),
    #[error(transparent)]
    Metrics(#[from] MetricsError),
    #[error(transparent)]
    Precoder(#[from] PrecoderError),
    #[error(transparent)]
    Manifold(#[from] ManifoldError),
    #[error(transparent)]
    Numerics(#[from] NumericsError),
    #[error("infeasible scenario: {constraint} constraint violated by {residual:.3e} (relative)")]
    Infeasible { constraint: Binding, residual: f64 },
}

/// Relative residuals of one design.
#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct Residuals {
    pub qos: f64,
    pub eh: f64,
    pub power: f64,
    pub common: f64,
    pub unitarity: f64,
}

impl Residuals {
    pub fn from_report(r: &ResidualReport<f64>) -> Self {
        Self {
            qos: r.qos_relative(),
            eh: r.eh_relative(),
            power: r.power_relative(),
            common: r.common,
            unitarity: r.unitarity,
        }
    }

    pub fn max(&self) -> f64 {
        self.qos.max(self.eh).max(self.power).max(self.common).max(self.unitarity)
    }

    /// Largest residual and the constraint it belongs to.
    pub fn binding(&self) -> (Binding, f64) {
        [
            (Binding::EnergyHarvesting, self.eh),
            (Binding::Qos, self.qos),
            (Binding::Power, self.power),
            (Binding::CommonRate, self.common),
            (Binding::Unitarity, self.unitarity),
        ]
        .into_iter()
        .fold((Binding::EnergyHarvesting, f64::NEG_INFINITY), |a, b| if b.1 > a.1 { b } else { a })
    }

    pub fn is_feasible(&self) -> bool {
        self.max() <= FEASIBILITY_TOL
    }
}

/// One outer iteration.
#[derive(Debug, Clone, PartialEq)]
pub struct IterationRecord {
    /// `Σ R̃ᵖ + min R̃ᵒ` of the accepted design (bits/s/Hz).
    pub sum_rate: f64,
    /// Last surrogate optimum of Stage 1, if it ran.
    pub stage1_objective: Option<f64>,
    /// Stage-2 objective `Σ r̄ᶜ + Σ R̃ᵖ`, if it ran.
    pub stage2_objective: Option<f64>,
    /// Lagrangian at the last CG iteration, if Stage 3 ran.
    pub stage3_lagrangian: Option<f64>,
    pub residuals: Residuals,
}

/// Per-iteration records. Wall time is kept apart so that equal seeds give
/// equal traces.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct IterationTrace {
    pub records: Vec<IterationRecord>,
    pub converged: bool,
}

impl IterationTrace {
    pub fn len(&self) -> usize {
        self.records.len()
    }

    pub fn is_empty(&self) -> bool {
        self.records.is_empty()
    }

    pub fn final_sum_rate(&self) -> Option<f64> {
        self.records.last().map(|r| r.sum_rate)
    }
}

/// Feasible set used for `Θ` in Stage 3.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ThetaSet {
    Unitary,
    Diagonal,
    /// Keep the initial `Θ`.
    Fixed,
}

/// Which stages run.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct PipelineOptions {
    pub precoders: bool,
    pub split: bool,
    pub theta: ThetaSet,
}

impl PipelineOptions {
    pub const FULL: Self = Self {
        precoders: true,
        split: true,
        theta: ThetaSet::Unitary,
    };
}

/// Channels and constraint levels of one `(config, seed)` pair.
#[derive(Debug, Clone)]
pub struct Scenario {
    pub config: SystemConfig,
    pub seed: u64,
    pub channels: ChannelSet<f64>,
    pub req: Requirements<f64>,
}

impl Scenario {
    /// # Errors
    /// Invalid configuration, degenerate geometry or an uninvertible
    /// harvesting target.
    pub fn new(config: &SystemConfig, seed: u64) -> Result<Self, AlgorithmError> {
        config.validate()?;
        let (_, channels) = gen_channels(config, seed)?;
        Ok(Self {
            config: config.clone(),
            seed,
            channels,
            req: requirements(config)?,
        })
    }

    pub fn rng(&self, purpose: Stream) -> ChaCha8Rng {
        stream(self.seed, purpose)
    }

    fn stage1_settings(&self) -> Stage1Settings<f64> {
        Stage1Settings {
            tol: self.config.sca_tol,
            max_iter: self.config.sca_max_iter,
            candidates: self.config.randomization_candidates,
            penalty: self.config.elastic_penalty,
        }
    }

    fn stage3_settings(&self) -> Stage3Settings<f64> {
        Stage3Settings {
            tol: self.config.cg_tol,
            max_iter: self.config.cg_max_iter,
            ..Stage3Settings::default()
        }
    }

    /// Matched-filter precoders, `β = 1/2` and a random scattering matrix
    /// from the set the run optimizes over.
    pub fn initial_design(&self, theta: ThetaSet) -> Result<DesignState<f64>, AlgorithmError> {
        let c = &self.config;
        let mut d = DesignState::zeros(c.antennas, c.users, c.ris_elements);
        let mut rng = self.rng(Stream::Scattering);
        d.theta = match theta {
            ThetaSet::Diagonal => random_phases(c.ris_elements, &mut rng),
            _ => random_unitary(c.ris_elements, &mut rng)?,
        };
        let params = Stage1Params::from_design(&d, &self.channels, &self.req, self.stage1_settings());
        let (v0, v) = matched_filter_init(&params);
        d.v0 = v0;
        d.v = v;
        Ok(d)
    }
}

/// Diagonal scattering matrix with uniform random phases.
pub fn random_phases<R: rand::Rng + ?Sized>(l: usize, rng: &mut R) -> CMatrix<f64> {
    let phases: Vec<f64> = (0..l).map(|_| rng.random::<f64>() * std::f64::consts::TAU).collect();
    CMatrix::from_fn(l, l, |i, j| if i == j { cplx(phases[i].cos(), phases[i].sin()) } else { cplx(0.0, 0.0) })
}

/// Constraint levels in solver units.
pub fn requirements(config: &SystemConfig) -> Result<Requirements<f64>, AlgorithmError> {
    Ok(Requirements {
        p_max: config.p_max,
        r_min: config.r_min(),
        psi: psi_threshold(&config.eh())?,
        noise: config.noise(),
        rho_tilde: config.rho_tilde,
    })
}

/// Replaces the shares by the QoS-first allocation of the current common
/// rate, or an equal split when the deficits exceed it.
pub fn repair_common_rate(design: &mut DesignState<f64>, channels: &ChannelSet<f64>, req: &Requirements<f64>) {
    let ev = evaluate(design, channels, req);
    let m = ev.private.len();
    let bound = ev.common_bound.max(0.0);
    design.r_common = allocate_common_rate(&vec![bound; m], &ev.private, req.r_min)
        .unwrap_or_else(|_| vec![bound / m as f64; m]);
}

/// Sum-rate and residuals of a design after common-rate repair.
#[derive(Debug, Clone, PartialEq)]
pub struct Standing {
    pub sum_rate: f64,
    pub residuals: Residuals,
}

impl Standing {
    pub fn of(design: &mut DesignState<f64>, channels: &ChannelSet<f64>, req: &Requirements<f64>) -> Self {
        repair_common_rate(design, channels, req);
        let ev = evaluate(design, channels, req);
        Self {
            sum_rate: ev.sum_rate,
            residuals: Residuals::from_report(&feasibility_residuals(design, channels, req)),
        }
    }

    /// Feasible beats infeasible; then larger sum-rate or smaller violation.
    pub fn better_than(&self, other: &Self) -> bool {
        match (self.residuals.is_feasible(), other.residuals.is_feasible()) {
            (true, true) => self.sum_rate > other.sum_rate,
            (true, false) => true,
            (false, true) => false,
            (false, false) => self.residuals.max() < other.residuals.max(),
        }
    }
}

/// Result of one pipeline run.
#[derive(Debug, Clone, PartialEq)]
pub struct RunOutcome {
    pub design: DesignState<f64>,
    pub trace: IterationTrace,
    pub standing: Standing,
    /// Milliseconds per outer iteration.
    pub wall_ms: Vec<f64>,
}

impl RunOutcome {
    pub fn feasible(&self) -> bool {
        self.standing.residuals.is_feasible()
    }

    /// Error naming the binding constraint, if the final design is
    /// infeasible.
    pub fn infeasibility(&self) -> Option<AlgorithmError> {
        (!self.feasible()).then(|| {
            let (constraint, residual) = self.standing.residuals.binding();
            AlgorithmError::Infeasible { constraint, residual }
        })
    }
}

/// Runs the enabled stages from `initial` until the relative sum-rate
/// change drops below `outer_tol` or `outer_max_iter` is reached. Each
/// stage's output replaces the incumbent only if it is better by
/// [`Standing::better_than`]; Stage 1 is judged at the current `β`.
pub fn run_pipeline(
    scn: &Scenario,
    initial: DesignState<f64>,
    opts: PipelineOptions,
) -> Result<RunOutcome, AlgorithmError> {
    let ch = &scn.channels;
    let req = &scn.req;
    let mut design = initial;
    let mut standing = Standing::of(&mut design, ch, req);
    let mut rng = scn.rng(Stream::Randomization);
    let mut duals = DualState::new(scn.config.users);
    let mut trace = IterationTrace::default();
    let mut wall = Vec::new();

    for _ in 0..scn.config.outer_max_iter {
        let start = Instant::now();
        let previous = trace.final_sum_rate();
        let mut rec = IterationRecord {
            sum_rate: 0.0,
            stage1_objective: None,
            stage2_objective: None,
            stage3_lagrangian: None,
            residuals: Residuals::default(),
        };

        if opts.precoders {
            let params = Stage1Params::from_design(&design, ch, req, scn.stage1_settings());
            let out = stage1(&params, &design.v0, &design.v, &design.r_common, &mut rng)?;
            rec.stage1_objective = out.trace.last().copied();
            let mut cand = design.clone();
            cand.v0 = out.v0;
            cand.v = out.v;
            let s = Standing::of(&mut cand, ch, req);
            if s.better_than(&standing) {
                design = cand;
                standing = s;
            }
        }

        if opts.split {
            let sol = optimize_beta(&design, ch, req);
            rec.stage2_objective = Some(sol.objective);
            let mut cand = design.clone();
            cand.beta = sol.beta;
            let s = Standing::of(&mut cand, ch, req);
            if s.better_than(&standing) {
                design = cand;
                standing = s;
            }
        }

        if opts.theta != ThetaSet::Fixed {
            let ctx = Stage3Context::new(ch, &design.v0, &design.v, &design.beta, req);
            let settings = scn.stage3_settings();
            let out = match opts.theta {
                ThetaSet::Diagonal => stage3(&DiagonalPhases, &ctx, &design.theta, &design.r_common, &mut duals, &settings)?,
                _ => stage3(&UnitaryGroup, &ctx, &design.theta, &design.r_common, &mut duals, &settings)?,
            };
            rec.stage3_lagrangian = out.trace.last().map(|r| r.lagrangian);
            if out.improved {
                let mut cand = design.clone();
                cand.theta = out.theta;
                let s = Standing::of(&mut cand, ch, req);
                if s.better_than(&standing) {
                    design = cand;
                    standing = s;
                }
            }
        }

        rec.sum_rate = standing.sum_rate;
        rec.residuals = standing.residuals;
        trace.records.push(rec);
        wall.push(start.elapsed().as_secs_f64() * 1e3);
        if let Some(prev) = previous {
            if (standing.sum_rate - prev).abs() < scn.config.outer_tol * prev.abs().max(1e-12) {
                trace.converged = true;
                break;
            }
        }
    }

    Ok(RunOutcome {
        design,
        trace,
        standing,
        wall_ms: wall,
    })
}

/// Full three-stage design for `(config, seed)`.
///
/// # Errors
/// [`AlgorithmError::Infeasible`] names the binding constraint when the
/// final design violates a constraint by more than [`FEASIBILITY_TOL`].
pub fn run_algorithm1(config: &SystemConfig, seed: u64) -> Result<(DesignState<f64>, IterationTrace), AlgorithmError> {
    let scn = Scenario::new(config, seed)?;
    let out = run_pipeline(&scn, scn.initial_design(ThetaSet::Unitary)?, PipelineOptions::FULL)?;
    if let Some(e) = out.infeasibility() {
        return Err(e);
    }
    Ok((out.design, out.trace))
}
