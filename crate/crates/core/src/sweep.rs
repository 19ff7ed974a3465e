//! Seeded parameter sweeps and the CSV output format.

use std::fmt;
use std::io::{self, Write};
use std::str::FromStr;
use std::time::Instant;

use rayon::prelude::*;
use thiserror::Error;

use crate::algorithm::{AlgorithmError, RunOutcome};
use crate::benchmarks::{run_benchmark, Arm};
use crate::config::SystemConfig;

/// Column order of every CSV file.
pub const CSV_HEADER: &str = "iter,arm,param,value,seed,sum_rate,qos_resid,eh_resid,pow_resid,common_resid,unitary_resid,wall_ms";

/// Version of the column layout, recorded in the metadata file.
pub const CSV_SCHEMA_VERSION: u32 = 1;

/// Version string for metadata files; a build may override it through
/// `BDRIS_VERSION` (e.g. with `git describe` output).
pub fn version_string() -> String {
    option_env!("BDRIS_VERSION")
        .map(str::to_string)
        .unwrap_or_else(|| format!("v{}", env!("CARGO_PKG_VERSION")))
}

#[derive(Debug, Error)]
pub enum SweepError {
    #[error("sweep needs at least one seed")]
    NoSeeds,
    #[error("sweep needs at least one value")]
    NoValues,
    #[error("sweep needs at least one arm")]
    NoArms,
    #[error("value {value} is not valid for {param}")]
    BadValue { param: Param, value: f64 },
    #[error("unknown sweep parameter `{0}` (expected p_max, L, K, M, r_min or rho_tilde)")]
    UnknownParam(String),
    #[error(transparent)]
    Algorithm(#[from] AlgorithmError),
}

/// Swept quantity.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Param {
    PMax,
    RisElements,
    Antennas,
    Users,
    /// Minimum rate in Mbps.
    RMin,
    RhoTilde,
}

impl Param {
    pub fn name(self) -> &'static str {
        match self {
            Param::PMax => "p_max",
            Param::RisElements => "L",
            Param::Antennas => "K",
            Param::Users => "M",
            Param::RMin => "r_min",
            Param::RhoTilde => "rho_tilde",
        }
    }

    /// Copy of `base` with this parameter set to `value`.
    pub fn apply(self, base: &SystemConfig, value: f64) -> Result<SystemConfig, SweepError> {
        let mut c = base.clone();
        let count = || {
            if value >= 1.0 && value.fract() == 0.0 {
                Ok(value as usize)
            } else {
                Err(SweepError::BadValue { param: self, value })
            }
        };
        match self {
            Param::PMax => c.p_max = value,
            Param::RisElements => c.ris_elements = count()?,
            Param::Antennas => c.antennas = count()?,
            Param::Users => c.users = count()?,
            Param::RMin => c.r_min_mbps = value,
            Param::RhoTilde => c.rho_tilde = value,
        }
        c.validate().map_err(|_| SweepError::BadValue { param: self, value })?;
        Ok(c)
    }
}

impl fmt::Display for Param {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for Param {
    type Err = SweepError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        Ok(match s.trim() {
            "p_max" | "P_max" | "pmax" => Param::PMax,
            "L" | "l" | "ris_elements" => Param::RisElements,
            "K" | "k" | "antennas" => Param::Antennas,
            "M" | "m" | "users" => Param::Users,
            "r_min" | "R_min" | "r_min_mbps" => Param::RMin,
            "rho_tilde" | "rho" => Param::RhoTilde,
            other => return Err(SweepError::UnknownParam(other.to_string())),
        })
    }
}

/// One CSV line.
#[derive(Debug, Clone, PartialEq)]
pub struct Row {
    /// Outer iteration (trace rows) or iterations used (summary rows).
    pub iter: usize,
    pub arm: Arm,
    pub param: String,
    pub value: f64,
    pub seed: u64,
    pub sum_rate: f64,
    pub qos_resid: f64,
    pub eh_resid: f64,
    pub pow_resid: f64,
    pub common_resid: f64,
    pub unitary_resid: f64,
    pub wall_ms: f64,
}

impl Row {
    /// Summary row of a finished run.
    pub fn summary(arm: Arm, param: &str, value: f64, seed: u64, out: &RunOutcome, wall_ms: f64) -> Self {
        let r = &out.standing.residuals;
        Self {
            iter: out.trace.len(),
            arm,
            param: param.to_string(),
            value,
            seed,
            sum_rate: out.standing.sum_rate,
            qos_resid: r.qos,
            eh_resid: r.eh,
            pow_resid: r.power,
            common_resid: r.common,
            unitary_resid: r.unitarity,
            wall_ms,
        }
    }

    /// One row per outer iteration.
    pub fn trace(arm: Arm, param: &str, value: f64, seed: u64, out: &RunOutcome) -> Vec<Self> {
        out.trace
            .records
            .iter()
            .enumerate()
            .map(|(i, rec)| Self {
                iter: i + 1,
                arm,
                param: param.to_string(),
                value,
                seed,
                sum_rate: rec.sum_rate,
                qos_resid: rec.residuals.qos,
                eh_resid: rec.residuals.eh,
                pow_resid: rec.residuals.power,
                common_resid: rec.residuals.common,
                unitary_resid: rec.residuals.unitarity,
                wall_ms: out.wall_ms.get(i).copied().unwrap_or(0.0),
            })
            .collect()
    }

    /// Row for a point whose run failed outright; rates and residuals are
    /// `NaN`.
    pub fn failed(arm: Arm, param: &str, value: f64, seed: u64) -> Self {
        Self {
            iter: 0,
            arm,
            param: param.to_string(),
            value,
            seed,
            sum_rate: f64::NAN,
            qos_resid: f64::NAN,
            eh_resid: f64::NAN,
            pow_resid: f64::NAN,
            common_resid: f64::NAN,
            unitary_resid: f64::NAN,
            wall_ms: 0.0,
        }
    }

    /// Largest residual; `NaN` for failed rows.
    pub fn max_residual(&self) -> f64 {
        [self.qos_resid, self.eh_resid, self.pow_resid, self.common_resid, self.unitary_resid]
            .into_iter()
            .fold(0.0, |a, x| if x.is_nan() || a.is_nan() { f64::NAN } else { a.max(x) })
    }

    /// `wall_ms` is written only when `timing` is set, so untimed files
    /// are byte-identical across runs.
    pub fn to_csv(&self, timing: bool) -> String {
        format!(
            "{},{},{},{},{},{:.12e},{:.6e},{:.6e},{:.6e},{:.6e},{:.6e},{}",
            self.iter,
            self.arm,
            self.param,
            self.value,
            self.seed,
            self.sum_rate,
            self.qos_resid,
            self.eh_resid,
            self.pow_resid,
            self.common_resid,
            self.unitary_resid,
            if timing { format!("{:.3}", self.wall_ms) } else { "0".to_string() }
        )
    }
}

/// Writes the header and rows.
pub fn write_csv<W: Write>(mut w: W, rows: &[Row], timing: bool) -> io::Result<()> {
    writeln!(w, "{CSV_HEADER}")?;
    for r in rows {
        writeln!(w, "{}", r.to_csv(timing))?;
    }
    Ok(())
}

/// Resolved configuration plus version and run description.
pub fn metadata(config: &SystemConfig, extra: &[(&str, String)]) -> String {
    let mut s = format!("# version = {}\n# csv_schema = {CSV_SCHEMA_VERSION}\n", version_string());
    for (k, v) in extra {
        s.push_str(&format!("# {k} = {v}\n"));
    }
    s.push_str(&config.to_text());
    s
}

/// Sweep definition. Seed `i` of `seeds` is `config.seed + i`.
#[derive(Debug, Clone)]
pub struct SweepPlan {
    pub param: Param,
    pub values: Vec<f64>,
    pub seeds: usize,
    pub arms: Vec<Arm>,
}

/// Runs every `(value, seed, arm)` point in parallel and returns summary
/// rows ordered by value, then seed, then arm. A point that fails gets a
/// [`Row::failed`] row instead of aborting the sweep.
pub fn sweep(config: &SystemConfig, plan: &SweepPlan) -> Result<Vec<Row>, SweepError> {
    if plan.seeds == 0 {
        return Err(SweepError::NoSeeds);
    }
    if plan.values.is_empty() {
        return Err(SweepError::NoValues);
    }
    if plan.arms.is_empty() {
        return Err(SweepError::NoArms);
    }
    let configs = plan
        .values
        .iter()
        .map(|&v| plan.param.apply(config, v).map(|c| (v, c)))
        .collect::<Result<Vec<_>, _>>()?;
    let jobs: Vec<(f64, &SystemConfig, u64, Arm)> = configs
        .iter()
        .flat_map(|(v, c)| {
            (0..plan.seeds as u64).flat_map(move |s| plan.arms.iter().map(move |&a| (*v, c, config.seed + s, a)))
        })
        .collect();
    let name = plan.param.name();
    Ok(jobs
        .par_iter()
        .map(|&(v, c, seed, arm)| {
            let start = Instant::now();
            match run_benchmark(arm, c, seed) {
                Ok(out) => Row::summary(arm, name, v, seed, &out, start.elapsed().as_secs_f64() * 1e3),
                Err(_) => Row::failed(arm, name, v, seed),
            }
        })
        .collect())
}

/// Mean sum-rate of the rows of `arm` at `value`, ignoring failed rows.
pub fn mean_sum_rate(rows: &[Row], arm: Arm, value: f64) -> Option<f64> {
    let xs: Vec<f64> = rows
        .iter()
        .filter(|r| r.arm == arm && r.value == value && r.sum_rate.is_finite())
        .map(|r| r.sum_rate)
        .collect();
    (!xs.is_empty()).then(|| xs.iter().sum::<f64>() / xs.len() as f64)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn small() -> SystemConfig {
        SystemConfig {
            ris_elements: 4,
            outer_max_iter: 3,
            ..SystemConfig::desk()
        }
    }

    #[test]
    fn empty_inputs_are_rejected() {
        let plan = SweepPlan {
            param: Param::PMax,
            values: vec![1.0],
            seeds: 0,
            arms: vec![Arm::AllRandom],
        };
        assert!(matches!(sweep(&small(), &plan), Err(SweepError::NoSeeds)));
        let plan = SweepPlan { seeds: 1, values: vec![], ..plan };
        assert!(matches!(sweep(&small(), &plan), Err(SweepError::NoValues)));
        assert!(matches!("Q".parse::<Param>(), Err(SweepError::UnknownParam(_))));
        assert!(Row::failed(Arm::OptBdris, "p_max", 1.0, 0).max_residual().is_nan());
        assert!(Param::RisElements.apply(&small(), 2.5).is_err());
    }

    #[test]
    fn rows_are_ordered_and_reproducible() {
        let plan = SweepPlan {
            param: Param::PMax,
            values: vec![0.5, 1.0],
            seeds: 2,
            arms: vec![Arm::AllRandom, Arm::OptBdris],
        };
        let a = sweep(&small(), &plan).unwrap();
        let b = sweep(&small(), &plan).unwrap();
        assert_eq!(a.len(), 8);
        let key: Vec<_> = a.iter().map(|r| (r.value, r.seed, r.arm)).collect();
        assert_eq!(key[1], (0.5, 0, Arm::OptBdris));
        assert_eq!(key[2], (0.5, 1, Arm::AllRandom));
        let text = |rows: &[Row]| {
            let mut buf = Vec::new();
            write_csv(&mut buf, rows, false).unwrap();
            String::from_utf8(buf).unwrap()
        };
        assert_eq!(text(&a), text(&b));
        assert!(text(&a).starts_with(CSV_HEADER));
    }

    #[test]
    fn metadata_parses_back() {
        let c = small();
        let meta = metadata(&c, &[("command", "test".into())]);
        assert_eq!(SystemConfig::parse(&meta).unwrap(), c);
        assert!(meta.contains(&version_string()));
    }
}
