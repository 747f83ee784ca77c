//! CSV and JSON artifacts. Floats are written in shortest round-trip form.

use std::fmt::Write as _;

use serde::Serialize;

use curved_nbody::dynamics::{BodySystem, Trajectory};
use curved_nbody::equilibria::{REProblem, RESolution, VerificationReport};
use curved_nbody::probe::{BoundScanResult, ProbeRow};

/// Shortest decimal string that parses back to `x`.
pub fn fmt_f64(x: f64) -> String {
    if x.is_nan() {
        "NaN".into()
    } else if x.is_infinite() {
        if x > 0.0 { "inf" } else { "-inf" }.into()
    } else {
        serde_json::to_string(&x).expect("finite floats serialize")
    }
}

fn rows(config: &BodySystem<f64>) -> Vec<Vec<f64>> {
    config
        .positions()
        .iter()
        .map(|p| p.as_slice().to_vec())
        .collect()
}

fn to_json<T: Serialize>(value: &T) -> Vec<u8> {
    let mut out = serde_json::to_vec_pretty(value).expect("report serializes");
    out.push(b'\n');
    out
}

/// `t,body,x1..xk,v1..vk`, one row per body per sample.
pub fn trajectory_csv(traj: &Trajectory<f64>) -> Vec<u8> {
    let k = traj.samples.first().map_or(0, |s| s.state.system().dim());
    let mut out = String::from("t,body");
    for prefix in ["x", "v"] {
        for c in 1..=k {
            let _ = write!(out, ",{prefix}{c}");
        }
    }
    out.push('\n');
    for s in &traj.samples {
        let t = fmt_f64(s.t);
        let sys = s.state.system();
        for (i, (q, v)) in sys.positions().iter().zip(s.state.velocities()).enumerate() {
            out.push_str(&t);
            let _ = write!(out, ",{i}");
            for x in q.as_slice().iter().chain(v.as_slice()) {
                out.push(',');
                out.push_str(&fmt_f64(*x));
            }
            out.push('\n');
        }
    }
    out.into_bytes()
}

#[derive(Serialize)]
struct SampleRecord {
    t: f64,
    positions: Vec<Vec<f64>>,
    velocities: Vec<Vec<f64>>,
}

#[derive(Serialize)]
struct TrajectoryRecord<'a> {
    sigma: i32,
    k: usize,
    masses: &'a [f64],
    steps: usize,
    rejected: usize,
    max_drift: f64,
    samples: Vec<SampleRecord>,
}

pub fn trajectory_json(traj: &Trajectory<f64>) -> Vec<u8> {
    let first = traj.samples[0].state.system();
    let samples = traj
        .samples
        .iter()
        .map(|s| SampleRecord {
            t: s.t,
            positions: rows(s.state.system()),
            velocities: s
                .state
                .velocities()
                .iter()
                .map(|v| v.as_slice().to_vec())
                .collect(),
        })
        .collect();
    to_json(&TrajectoryRecord {
        sigma: first.sigma().sign(),
        k: first.dim(),
        masses: first.masses(),
        steps: traj.steps.len(),
        rejected: traj.rejected,
        max_drift: traj.max_drift(),
        samples,
    })
}

#[derive(Serialize)]
pub struct SolutionRecord {
    masses: Vec<f64>,
    rates: Vec<f64>,
    k: usize,
    positions: Vec<Vec<f64>>,
    residual_norm: f64,
    classification: String,
    min_distance: Option<f64>,
}

impl SolutionRecord {
    pub fn new(solution: &RESolution<f64>, problem: &REProblem<f64>) -> Self {
        Self {
            masses: problem.masses().to_vec(),
            rates: problem.spec().rates().to_vec(),
            k: problem.k(),
            positions: rows(&solution.configuration),
            residual_norm: solution.residual_norm,
            classification: solution.classification.to_string(),
            min_distance: solution.min_distance(),
        }
    }
}

pub fn solutions_json(solutions: &[RESolution<f64>], problem: &REProblem<f64>) -> Vec<u8> {
    let records: Vec<_> = solutions
        .iter()
        .map(|s| SolutionRecord::new(s, problem))
        .collect();
    to_json(&records)
}

#[derive(Serialize)]
struct ProblemRecord<'a> {
    sigma: i32,
    k: usize,
    masses: &'a [f64],
    rates: &'a [f64],
}

impl<'a> ProblemRecord<'a> {
    fn new(problem: &'a REProblem<f64>) -> Self {
        Self {
            sigma: 1,
            k: problem.k(),
            masses: problem.masses(),
            rates: problem.spec().rates(),
        }
    }
}

#[derive(Serialize)]
struct ScanRecord<'a> {
    problem: ProblemRecord<'a>,
    seed: u64,
    starts_attempted: usize,
    starts_converged: usize,
    empirical_c: Option<f64>,
    empirical_c_by_label: &'a std::collections::BTreeMap<String, f64>,
    solutions: Vec<SolutionRecord>,
}

pub fn scan_json(scan: &BoundScanResult<f64>) -> Vec<u8> {
    to_json(&ScanRecord {
        problem: ProblemRecord::new(&scan.problem),
        seed: scan.seed,
        starts_attempted: scan.attempted,
        starts_converged: scan.converged,
        empirical_c: scan.empirical_c,
        empirical_c_by_label: &scan.empirical_c_by_label,
        solutions: scan
            .solutions
            .iter()
            .map(|s| SolutionRecord::new(s, &scan.problem))
            .collect(),
    })
}

#[derive(Serialize)]
struct VerifyRecord<'a> {
    problem: ProblemRecord<'a>,
    positions: Vec<Vec<f64>>,
    residual_norm: f64,
    periods: f64,
    t_end: f64,
    tol_dyn: f64,
    max_deviation: f64,
    max_drift: f64,
    samples: usize,
    pass: bool,
}

pub fn verify_json(
    problem: &REProblem<f64>,
    config: &BodySystem<f64>,
    residual_norm: f64,
    periods: f64,
    tol_dyn: f64,
    report: &VerificationReport<f64>,
) -> Vec<u8> {
    to_json(&VerifyRecord {
        problem: ProblemRecord::new(problem),
        positions: rows(config),
        residual_norm,
        periods,
        t_end: report.t_end,
        tol_dyn,
        max_deviation: report.max_deviation,
        max_drift: report.max_drift,
        samples: report.samples,
        pass: report.pass,
    })
}

pub fn probe_csv(table: &[ProbeRow<f64>]) -> Vec<u8> {
    let mut out = String::from("d,lhs_value,rhs_value,rhs_lower_half,min_cos_alpha\n");
    for r in table {
        let fields = [
            r.d,
            r.lhs_value,
            r.rhs_value,
            r.rhs_lower_half,
            r.min_cos_alpha,
        ]
        .map(fmt_f64);
        out.push_str(&fields.join(","));
        out.push('\n');
    }
    out.into_bytes()
}

#[derive(Serialize)]
struct ProbeRecord {
    d: f64,
    lhs_value: f64,
    rhs_value: f64,
    rhs_lower_half: f64,
    min_cos_alpha: f64,
    w_norm: f64,
}

#[derive(Serialize)]
struct ProbeReport<'a> {
    problem: ProblemRecord<'a>,
    cluster: &'a [usize],
    rhs_lower_half_slope: Option<f64>,
    rows: Vec<ProbeRecord>,
}

pub fn probe_json(problem: &REProblem<f64>, cluster: &[usize], table: &[ProbeRow<f64>]) -> Vec<u8> {
    let d: Vec<f64> = table.iter().map(|r| r.d).collect();
    let lower: Vec<f64> = table.iter().map(|r| r.rhs_lower_half).collect();
    to_json(&ProbeReport {
        problem: ProblemRecord::new(problem),
        cluster,
        rhs_lower_half_slope: curved_nbody::probe::loglog_slope(&d, &lower),
        rows: table
            .iter()
            .map(|r| ProbeRecord {
                d: r.d,
                lhs_value: r.lhs_value,
                rhs_value: r.rhs_value,
                rhs_lower_half: r.rhs_lower_half,
                min_cos_alpha: r.min_cos_alpha,
                w_norm: r.w_norm,
            })
            .collect(),
    })
}
