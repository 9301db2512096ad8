//! Running planners over many scenarios.
//!
//! Scenarios are independent, so a batch is a data-parallel map when the
//! `parallel` feature is on. Each job carries its own seed and results come
//! back in job order, so parallel and sequential runs are identical.

use serde::{Deserialize, Serialize};

use crate::baseline::plan_baseline;
use crate::config::Config;
use crate::metrics::{discomfort, longitudinal_distance, risk, RunMetrics};
use crate::planner::{PlanOutcome, Trajectory};
use crate::scenario::{gen_traffic_with, Density, Scenario, ScenarioError};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum PlannerKind {
    Stg,
    Baseline,
}

impl PlannerKind {
    pub fn name(self) -> &'static str {
        match self {
            PlannerKind::Stg => "stg",
            PlannerKind::Baseline => "baseline",
        }
    }
}

impl std::str::FromStr for PlannerKind {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "stg" => Ok(PlannerKind::Stg),
            "baseline" => Ok(PlannerKind::Baseline),
            other => Err(format!("unknown planner {other}; expected stg or baseline")),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Job {
    pub id: String,
    pub traffic: String,
    pub scenario: Scenario,
    pub seed: u64,
}

#[derive(Debug, Clone)]
pub struct RunOutput {
    pub metrics: RunMetrics,
    pub trajectory: Option<Trajectory>,
    pub plan: Option<PlanOutcome>,
    pub error: Option<String>,
}

/// splitmix64 of `base + index`, so neighbouring jobs get unrelated seeds.
pub fn derive_seed(base: u64, index: u64) -> u64 {
    let mut z = base.wrapping_add(index.wrapping_mul(0x9E37_79B9_7F4A_7C15));
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

/// `count` generated scenarios of one density band.
pub fn traffic_jobs(density: Density, count: usize, seed: u64, cfg: &Config) -> Result<Vec<Job>, ScenarioError> {
    (0..count as u64)
        .map(|i| {
            let s = derive_seed(seed, i);
            let scenario = gen_traffic_with(density, s, &cfg.traffic)?;
            Ok(Job {
                id: format!("{}-{i}", density.name()),
                traffic: density.name().to_string(),
                scenario,
                seed: s,
            })
        })
        .collect()
}

/// Risk, discomfort and distance of a trajectory that starts at `t0`.
pub fn score(scenario: &Scenario, traj: &Trajectory, cfg: &Config) -> Result<(f64, f64, f64), String> {
    let k0 = (traj.t0 / traj.t_s).round() as usize;
    let actors = (0..traj.states.len())
        .map(|k| scenario.actor_positions(k0 + k, traj.t_s))
        .collect::<Result<Vec<_>, _>>()
        .map_err(|e| e.to_string())?;
    let r = risk(&traj.states, &actors, &cfg.potential, traj.t_s).map_err(|e| e.to_string())?;
    let j = discomfort(&traj.states, traj.t_s).map_err(|e| e.to_string())?;
    Ok((j, r, longitudinal_distance(&traj.states)))
}

/// Plans one job with one planner. Failures become infeasible results.
pub fn run_job(job: &Job, kind: PlannerKind, cfg: &Config) -> RunOutput {
    let fail = |e: String| RunOutput {
        metrics: RunMetrics::infeasible(&job.id, &job.traffic, kind.name()),
        trajectory: None,
        plan: None,
        error: Some(e),
    };
    let (traj, plan) = match kind {
        PlannerKind::Stg => {
            let mut c = cfg.clone();
            c.plan.seed = job.seed;
            let planner = match c.planner() {
                Ok(p) => p,
                Err(e) => return fail(e.to_string()),
            };
            match planner.plan(&job.scenario) {
                Ok(out) => {
                    let violations = out.trajectory.violations(&job.scenario, 1e-9);
                    if let Some(v) = violations.first() {
                        return fail(format!("{v:?}"));
                    }
                    (out.trajectory.clone(), Some(out))
                }
                Err(e) => return fail(e.to_string()),
            }
        }
        PlannerKind::Baseline => {
            match plan_baseline(&job.scenario, &cfg.baseline, &cfg.potential, cfg.plan.t_s, cfg.plan.horizon) {
                Ok(out) => (out.trajectory, None),
                Err(e) => return fail(e.to_string()),
            }
        }
    };
    match score(&job.scenario, &traj, cfg) {
        Ok((discomfort, risk, distance)) => RunOutput {
            metrics: RunMetrics {
                scenario_id: job.id.clone(),
                traffic: job.traffic.clone(),
                planner: kind.name().to_string(),
                feasible: true,
                discomfort,
                risk,
                distance,
            },
            trajectory: Some(traj),
            plan,
            error: None,
        },
        Err(e) => fail(e),
    }
}

fn pairs(jobs: &[Job], kinds: &[PlannerKind]) -> Vec<(usize, PlannerKind)> {
    (0..jobs.len())
        .flat_map(|i| kinds.iter().map(move |&k| (i, k)))
        .collect()
}

/// Every job with every planner, one after another.
pub fn run_batch_sequential(jobs: &[Job], kinds: &[PlannerKind], cfg: &Config) -> Vec<RunOutput> {
    pairs(jobs, kinds)
        .into_iter()
        .map(|(i, k)| run_job(&jobs[i], k, cfg))
        .collect()
}

/// Same results as [`run_batch_sequential`], spread over the rayon pool.
#[cfg(feature = "parallel")]
pub fn run_batch_parallel(jobs: &[Job], kinds: &[PlannerKind], cfg: &Config) -> Vec<RunOutput> {
    use rayon::prelude::*;
    pairs(jobs, kinds)
        .into_par_iter()
        .map(|(i, k)| run_job(&jobs[i], k, cfg))
        .collect()
}

/// Parallel when the `parallel` feature is enabled, sequential otherwise.
pub fn run_batch(jobs: &[Job], kinds: &[PlannerKind], cfg: &Config) -> Vec<RunOutput> {
    #[cfg(feature = "parallel")]
    {
        run_batch_parallel(jobs, kinds, cfg)
    }
    #[cfg(not(feature = "parallel"))]
    {
        run_batch_sequential(jobs, kinds, cfg)
    }
}
