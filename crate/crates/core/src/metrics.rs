//! Trajectory scores and batch summaries.

use std::fmt::Write as _;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::frenet::FrenetState;
use crate::potential::{u_obstacles, PotentialParams};

#[derive(Debug, Clone, PartialEq, Error)]
pub enum MetricsError {
    #[error("expected {expected} samples, got {found}")]
    LengthMismatch { expected: usize, found: usize },
    #[error("need at least 4 samples for jerk, got {0}")]
    TooShort(usize),
    #[error("sampling period must be positive, got {0}")]
    BadPeriod(f64),
}

/// Trapezoidal integral of uniformly spaced samples.
pub fn trapezoid(values: &[f64], h: f64) -> f64 {
    match values {
        [] | [_] => 0.0,
        [first, mid @ .., last] => h * (0.5 * (first + last) + mid.iter().sum::<f64>()),
    }
}

/// Time-averaged obstacle potential: `(1/T) * integral of U_o dt` with
/// `T = (len - 1) t_s`. `actors[k]` holds actor positions at sample `k`.
pub fn risk(
    states: &[FrenetState],
    actors: &[Vec<(f64, f64)>],
    p: &PotentialParams,
    t_s: f64,
) -> Result<f64, MetricsError> {
    if !(t_s > 0.0) {
        return Err(MetricsError::BadPeriod(t_s));
    }
    if actors.len() != states.len() {
        return Err(MetricsError::LengthMismatch {
            expected: states.len(),
            found: actors.len(),
        });
    }
    if states.len() < 2 {
        return Ok(0.0);
    }
    let u: Vec<f64> = states
        .iter()
        .zip(actors)
        .map(|(st, a)| u_obstacles((st.s, st.d), a, p))
        .collect();
    let span = (states.len() - 1) as f64 * t_s;
    Ok(trapezoid(&u, t_s) / span)
}

/// Third derivative of uniformly spaced samples. Interior points use the
/// five-point central stencil, the two points at each end one-sided
/// four-point stencils.
pub fn third_derivative(x: &[f64], h: f64) -> Result<Vec<f64>, MetricsError> {
    let n = x.len();
    if n < 4 {
        return Err(MetricsError::TooShort(n));
    }
    let h3 = h * h * h;
    let forward = |i: usize| (-x[i] + 3.0 * x[i + 1] - 3.0 * x[i + 2] + x[i + 3]) / h3;
    let backward = |i: usize| (x[i] - 3.0 * x[i - 1] + 3.0 * x[i - 2] - x[i - 3]) / h3;
    Ok((0..n)
        .map(|i| {
            if i >= 2 && i + 2 < n {
                (x[i + 2] - 2.0 * x[i + 1] + 2.0 * x[i - 1] - x[i - 2]) / (2.0 * h3)
            } else if i + 3 < n {
                forward(i)
            } else {
                backward(i)
            }
        })
        .collect())
}

/// Time-averaged magnitude of the combined longitudinal and lateral jerk.
pub fn discomfort(states: &[FrenetState], t_s: f64) -> Result<f64, MetricsError> {
    if !(t_s > 0.0) {
        return Err(MetricsError::BadPeriod(t_s));
    }
    let s: Vec<f64> = states.iter().map(|st| st.s).collect();
    let d: Vec<f64> = states.iter().map(|st| st.d).collect();
    let js = third_derivative(&s, t_s)?;
    let jd = third_derivative(&d, t_s)?;
    let mag: Vec<f64> = js.iter().zip(&jd).map(|(a, b)| a.hypot(*b)).collect();
    let span = (states.len() - 1) as f64 * t_s;
    Ok(trapezoid(&mag, t_s) / span)
}

pub fn longitudinal_distance(states: &[FrenetState]) -> f64 {
    match (states.first(), states.last()) {
        (Some(a), Some(b)) => b.s - a.s,
        _ => 0.0,
    }
}

/// One scored run.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunMetrics {
    pub scenario_id: String,
    /// Traffic band or task name, used to group the report.
    pub traffic: String,
    pub planner: String,
    pub feasible: bool,
    pub discomfort: f64,
    pub risk: f64,
    pub distance: f64,
}

impl RunMetrics {
    pub fn infeasible(scenario_id: &str, traffic: &str, planner: &str) -> Self {
        Self {
            scenario_id: scenario_id.to_string(),
            traffic: traffic.to_string(),
            planner: planner.to_string(),
            feasible: false,
            discomfort: f64::NAN,
            risk: f64::NAN,
            distance: f64::NAN,
        }
    }
}

pub const RUN_CSV_HEADER: &str = "scenario_id,planner,feasible,discomfort,risk,distance";

pub fn runs_to_csv(runs: &[RunMetrics]) -> String {
    let mut out = format!("{RUN_CSV_HEADER}\n");
    for r in runs {
        let _ = writeln!(
            out,
            "{},{},{},{},{},{}",
            r.scenario_id, r.planner, r.feasible, r.discomfort, r.risk, r.distance
        );
    }
    out
}

/// Median; the mean of the two middle values for even counts, NaN when
/// empty.
pub fn median(values: &[f64]) -> f64 {
    if values.is_empty() {
        return f64::NAN;
    }
    let mut v = values.to_vec();
    v.sort_by(f64::total_cmp);
    let m = v.len() / 2;
    if v.len() % 2 == 1 {
        v[m]
    } else {
        0.5 * (v[m - 1] + v[m])
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ReportRow {
    pub traffic: String,
    pub planner: String,
    pub runs: usize,
    pub feasibility: f64,
    pub discomfort: f64,
    pub risk: f64,
    pub distance: f64,
}

/// Medians over feasible runs per `(traffic, planner)`, in order of first
/// appearance.
pub fn batch_report(runs: &[RunMetrics]) -> Vec<ReportRow> {
    let mut keys: Vec<(&str, &str)> = Vec::new();
    for r in runs {
        let key = (r.traffic.as_str(), r.planner.as_str());
        if !keys.contains(&key) {
            keys.push(key);
        }
    }
    keys.into_iter()
        .map(|(traffic, planner)| {
            let group: Vec<&RunMetrics> = runs
                .iter()
                .filter(|r| r.traffic == traffic && r.planner == planner)
                .collect();
            let ok: Vec<&&RunMetrics> = group.iter().filter(|r| r.feasible).collect();
            let col = |f: fn(&RunMetrics) -> f64| median(&ok.iter().map(|r| f(r)).collect::<Vec<_>>());
            ReportRow {
                traffic: traffic.to_string(),
                planner: planner.to_string(),
                runs: group.len(),
                feasibility: ok.len() as f64 / group.len() as f64,
                discomfort: col(|r| r.discomfort),
                risk: col(|r| r.risk),
                distance: col(|r| r.distance),
            }
        })
        .collect()
}

pub fn report_to_csv(rows: &[ReportRow]) -> String {
    let mut out = String::from("traffic,planner,runs,feasibility,discomfort,risk,distance\n");
    for r in rows {
        let _ = writeln!(
            out,
            "{},{},{},{},{},{},{}",
            r.traffic, r.planner, r.runs, r.feasibility, r.discomfort, r.risk, r.distance
        );
    }
    out
}

pub fn report_to_table(rows: &[ReportRow]) -> String {
    let header = ["traffic", "planner", "runs", "feasible", "discomfort", "risk", "distance"];
    let body: Vec<[String; 7]> = rows
        .iter()
        .map(|r| {
            [
                r.traffic.clone(),
                r.planner.clone(),
                r.runs.to_string(),
                format!("{:.2}", r.feasibility),
                format!("{:.4}", r.discomfort),
                format!("{:.4}", r.risk),
                format!("{:.2}", r.distance),
            ]
        })
        .collect();
    let mut width: [usize; 7] = header.map(str::len);
    for row in &body {
        for (w, cell) in width.iter_mut().zip(row) {
            *w = (*w).max(cell.len());
        }
    }
    let mut out = String::new();
    let line = |cells: &[&str], out: &mut String| {
        let parts: Vec<String> = cells
            .iter()
            .zip(width)
            .enumerate()
            .map(|(i, (c, w))| if i < 2 { format!("{c:<w$}") } else { format!("{c:>w$}") })
            .collect();
        out.push_str(parts.join("  ").trim_end());
        out.push('\n');
    };
    line(&header, &mut out);
    for row in &body {
        line(&row.iter().map(String::as_str).collect::<Vec<_>>(), &mut out);
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;

    fn line(f: impl Fn(f64) -> (f64, f64), n: usize, h: f64) -> Vec<FrenetState> {
        (0..n)
            .map(|k| {
                let (s, d) = f(k as f64 * h);
                FrenetState::new(s, d, 0.0, 0.0)
            })
            .collect()
    }

    #[test]
    fn zero_jerk_cases() {
        let cv = line(|t| (20.0 * t, 1.8), 51, 0.1);
        assert!(discomfort(&cv, 0.1).unwrap() < 1e-9);
        let ca = line(|t| (3.0 + 20.0 * t + 1.5 * t * t, 1.8 - 0.2 * t * t), 51, 0.1);
        assert!(discomfort(&ca, 0.1).unwrap() < 1e-6);
        assert!(matches!(discomfort(&cv[..3], 0.1), Err(MetricsError::TooShort(3))));
    }

    #[test]
    fn distance_telescopes() {
        let traj = line(|t| (20.0 * t, 0.0), 51, 0.1);
        assert!((longitudinal_distance(&traj) - 100.0).abs() < 1e-9);
        let steps: f64 = traj.windows(2).map(|w| w[1].s - w[0].s).sum();
        assert!((steps - longitudinal_distance(&traj)).abs() < 1e-9);
        assert_eq!(longitudinal_distance(&line(|_| (4.0, 1.0), 10, 0.1)), 0.0);
    }

    #[test]
    fn risk_edge_cases() {
        let p = PotentialParams::default();
        let traj = line(|t| (10.0 * t, 0.0), 11, 0.1);
        let none = vec![Vec::new(); 11];
        assert_eq!(risk(&traj, &none, &p, 0.1).unwrap(), 0.0);
        let short = vec![Vec::new(); 10];
        assert!(matches!(risk(&traj, &short, &p, 0.1), Err(MetricsError::LengthMismatch { .. })));
        let follow: Vec<Vec<(f64, f64)>> = traj.iter().map(|st| vec![(st.s + 8.0, 3.6)]).collect();
        let c = u_obstacles((0.0, 0.0), &[(8.0, 3.6)], &p);
        assert!((risk(&traj, &follow, &p, 0.1).unwrap() - c).abs() < 1e-12);
    }

    #[test]
    fn medians() {
        assert_eq!(median(&[3.0]), 3.0);
        assert_eq!(median(&[5.0, 1.0, 3.0]), 3.0);
        assert_eq!(median(&[4.0, 1.0, 3.0, 2.0]), 2.5);
        assert!(median(&[]).is_nan());
    }

    #[test]
    fn report_groups_and_rates() {
        let run = |id: &str, planner: &str, feasible: bool, x: f64| RunMetrics {
            scenario_id: id.into(),
            traffic: "medium".into(),
            planner: planner.into(),
            feasible,
            discomfort: x,
            risk: x,
            distance: x,
        };
        let runs = vec![
            run("a", "stg", true, 1.0),
            run("a", "baseline", false, f64::NAN),
            run("b", "stg", true, 3.0),
            run("b", "baseline", true, 7.0),
            run("c", "stg", true, 2.0),
        ];
        let rows = batch_report(&runs);
        assert_eq!(rows.len(), 2);
        assert_eq!((rows[0].planner.as_str(), rows[0].runs, rows[0].feasibility), ("stg", 3, 1.0));
        assert_eq!(rows[0].risk, 2.0);
        assert_eq!((rows[1].feasibility, rows[1].distance), (0.5, 7.0));
        let table = report_to_table(&rows);
        assert_eq!(table.lines().count(), 3);
        assert!(runs_to_csv(&runs).starts_with(RUN_CSV_HEADER));
    }
}
