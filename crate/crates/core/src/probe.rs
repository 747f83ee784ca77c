//! Empirical study of the minimal pairwise distance of relative equilibria.
//!
//! [`scan_bound`] runs the solver from many random starts and records the
//! smallest pairwise distance over the distinct solutions found.
//! [`blowup_diagnostic`] evaluates, for an arbitrary configuration and a
//! cluster of bodies containing body 0, both sides of the squared-norm
//! identity obtained from body 0's equilibrium equation after rotating
//! `Q_0` to `e₁` and dropping the first coordinate:
//!
//! ```text
//! ‖W − Σ_{j∉C} m_j V̂_j / (1 − V_{j1}²)^{3/2}‖²  =  Σ_{i,j∈C∖0} m_i m_j ⟨V̂_i, V̂_j⟩ / ((1 − V_{i1}²)(1 − V_{j1}²))^{3/2}
//! ```
//!
//! where `V_j = R·Q_j`, `V̂_j` drops the first coordinate, and `W` is the
//! lower part of `−R𝐀²Rᵀe₁`. The identity holds at equilibria. When every
//! pairwise cosine between the `V̂_j` exceeds 1/2 the right side is at
//! least `½ Σ m_i m_j / ((1 − V_{i1}²)(1 − V_{j1}²))`, which grows like
//! `d⁻⁴` as the cluster diameter `d` shrinks while the left side stays
//! bounded.

use std::collections::BTreeMap;

use nalgebra::{DMatrix, DVector};
use rayon::prelude::*;

use crate::dynamics::{pair_denominator, BodySystem, EPS_SING};
use crate::equilibria::{dedup, solve_re, REProblem, RESolution, SolverOptions};
use crate::error::{Error, Result};
use crate::geometry::{chordal_distance, random_sphere_point, substream, Sigma, SpacePoint};
use crate::scalar::{from_usize, lit, Real};

/// Random starts are redrawn while any pair denominator is below this.
pub const START_SEPARATION: f64 = 1e-4;

#[derive(Debug, Clone, PartialEq)]
pub struct ScanOptions<T: Real> {
    pub solver: SolverOptions<T>,
    pub match_tol: T,
}

impl<T: Real> Default for ScanOptions<T> {
    fn default() -> Self {
        Self {
            solver: SolverOptions::default(),
            match_tol: lit(1e-6),
        }
    }
}

/// Distinct solutions of a multi-start scan and their distance statistics.
#[derive(Debug, Clone, PartialEq)]
pub struct BoundScanResult<T: Real> {
    pub problem: REProblem<T>,
    pub seed: u64,
    pub attempted: usize,
    pub converged: usize,
    /// Deduplicated converged solutions in canonical order.
    pub solutions: Vec<RESolution<T>>,
    /// `min_pairwise_distance` per solution; `None` for a single body.
    pub min_distances: Vec<Option<T>>,
    /// Smallest entry of `min_distances`; `None` when undefined (no
    /// solutions, or a single body).
    pub empirical_c: Option<T>,
    /// Same minimum, per classification label.
    pub empirical_c_by_label: BTreeMap<String, T>,
}

/// Random start `index` of a scan: one uniform point per body, redrawn until
/// every pair is well separated.
pub fn random_start<T: Real>(
    problem: &REProblem<T>,
    seed: u64,
    index: u64,
) -> Result<BodySystem<T>> {
    let mut rng = substream(seed, index);
    let floor = lit::<T>(START_SEPARATION);
    loop {
        let positions = (0..problem.n())
            .map(|_| random_sphere_point(problem.k(), &mut rng))
            .collect::<Result<Vec<_>>>()?;
        let sys = BodySystem::new(problem.masses().to_vec(), positions)?;
        if sys.check_nonsingular(floor).is_ok() {
            return Ok(sys);
        }
    }
}

/// Multi-start search with default solver settings.
pub fn scan_bound<T: Real>(
    problem: &REProblem<T>,
    n_starts: usize,
    seed: u64,
) -> Result<BoundScanResult<T>> {
    scan_bound_with(problem, n_starts, seed, &ScanOptions::default())
}

pub fn scan_bound_with<T: Real>(
    problem: &REProblem<T>,
    n_starts: usize,
    seed: u64,
    opts: &ScanOptions<T>,
) -> Result<BoundScanResult<T>> {
    if n_starts == 0 {
        return Err(Error::InvalidArgument("n_starts must be at least 1".into()));
    }
    let runs: Vec<Option<RESolution<T>>> = (0..n_starts as u64)
        .into_par_iter()
        .map(|i| {
            let start = random_start(problem, seed, i).ok()?;
            solve_re(problem, &start, &opts.solver).ok()
        })
        .collect();
    let converged: Vec<RESolution<T>> =
        runs.into_iter().flatten().filter(|s| s.converged).collect();
    let solutions = dedup(&converged, problem, opts.match_tol);
    let min_distances: Vec<Option<T>> = solutions.iter().map(RESolution::min_distance).collect();
    let empirical_c = min_distances
        .iter()
        .flatten()
        .copied()
        .fold(None, |acc: Option<T>, d| Some(acc.map_or(d, |a| a.min(d))));
    let mut empirical_c_by_label = BTreeMap::new();
    for (sol, d) in solutions.iter().zip(&min_distances) {
        if let Some(d) = d {
            empirical_c_by_label
                .entry(sol.classification.to_string())
                .and_modify(|c: &mut T| *c = c.min(*d))
                .or_insert(*d);
        }
    }
    Ok(BoundScanResult {
        problem: problem.clone(),
        seed,
        attempted: n_starts,
        converged: converged.len(),
        solutions,
        min_distances,
        empirical_c,
        empirical_c_by_label,
    })
}

/// Both sides of the cluster identity for one configuration.
#[derive(Debug, Clone, PartialEq)]
pub struct BlowupDiagnostic<T: Real> {
    /// Cluster members, sorted; always contains body 0.
    pub cluster: Vec<usize>,
    /// Rotation with `R·Q_0 = e₁`.
    pub frame: DMatrix<T>,
    /// `V_{j1}`, first coordinate of `R·Q_j`, per body.
    pub first_coords: Vec<T>,
    /// `V̂_j`, the remaining `k − 1` coordinates, per body.
    pub truncated: Vec<DVector<T>>,
    /// Lower `k − 1` coordinates of `−R𝐀²Rᵀe₁`.
    pub w: DVector<T>,
    pub lhs_value: T,
    pub rhs_value: T,
    pub rhs_lower_half: T,
    /// `(i, j, cos α_ij)` for distinct cluster members `i < j`, both ≠ 0.
    pub cos_alphas: Vec<(usize, usize, T)>,
}

impl<T: Real> BlowupDiagnostic<T> {
    /// Smallest cosine over cluster pairs; 1 when the cluster has a single
    /// body besides body 0 (the only term is `α_jj = 0`).
    pub fn min_cos_alpha(&self) -> T {
        self.cos_alphas
            .iter()
            .fold(T::one(), |m, (_, _, c)| m.min(*c))
    }

    pub fn w_norm(&self) -> T {
        self.w.norm()
    }
}

/// Rotation taking the unit vector `q` to `e₁`: a Householder reflection
/// followed by flipping the last axis, which keeps `e₁` and makes the
/// determinant `+1`.
pub fn frame_rotation<T: Real>(q: &DVector<T>) -> DMatrix<T> {
    let k = q.len();
    let mut v = q.clone();
    v[0] -= T::one();
    let vv = v.norm_squared();
    let mut h = DMatrix::identity(k, k);
    if vv > T::EPSILON * T::EPSILON {
        h -= (&v * v.transpose()) * (lit::<T>(2.0) / vv);
    } else {
        return h;
    }
    for c in 0..k {
        h[(k - 1, c)] = -h[(k - 1, c)];
    }
    h
}

fn validate_cluster(cluster: &[usize], n: usize) -> Result<Vec<usize>> {
    let mut c = cluster.to_vec();
    c.sort_unstable();
    c.dedup();
    if c.len() != cluster.len() {
        return Err(Error::InvalidArgument(
            "cluster indices must be distinct".into(),
        ));
    }
    if c.first() != Some(&0) {
        return Err(Error::InvalidArgument("cluster must contain body 0".into()));
    }
    if let Some(&bad) = c.iter().find(|&&i| i >= n) {
        return Err(Error::InvalidArgument(format!(
            "cluster index {bad} out of range for {n} bodies"
        )));
    }
    Ok(c)
}

/// Evaluates the cluster identity for `config` (not necessarily an
/// equilibrium).
pub fn blowup_diagnostic<T: Real>(
    problem: &REProblem<T>,
    config: &BodySystem<T>,
    cluster: &[usize],
) -> Result<BlowupDiagnostic<T>> {
    if config.sigma() != Sigma::Sphere {
        return Err(Error::UnsupportedMetric);
    }
    if config.n() != problem.n() || config.dim() != problem.k() {
        return Err(Error::DimensionMismatch {
            expected: problem.n() * problem.k(),
            found: config.n() * config.dim(),
        });
    }
    let cluster = validate_cluster(cluster, config.n())?;
    config.check_nonsingular(lit(EPS_SING))?;
    let masses = problem.masses();
    let k = config.dim();
    let q0 = config.positions()[0].coords();
    let frame = frame_rotation(q0);

    let rotated: Vec<DVector<T>> = config
        .positions()
        .iter()
        .map(|q| &frame * q.coords())
        .collect();
    let first_coords: Vec<T> = rotated.iter().map(|v| v[0]).collect();
    let truncated: Vec<DVector<T>> = rotated
        .iter()
        .map(|v| v.rows(1, k - 1).into_owned())
        .collect();
    // 1 − V_{j1}²
    let gap: Vec<T> = first_coords.iter().map(|v| T::one() - *v * *v).collect();

    let a2 = problem.spec().rate_diagonal().map(|a| a * a);
    let full_w =
        -(&frame * DVector::from_iterator(k, a2.iter().zip(q0.iter()).map(|(a, q)| *a * *q)));
    let w = full_w.rows(1, k - 1).into_owned();

    let mut outside = DVector::zeros(k - 1);
    for j in 1..config.n() {
        if cluster.binary_search(&j).is_err() {
            outside +=
                &truncated[j] * (masses[j] / pair_denominator(first_coords[j], Sigma::Sphere));
        }
    }
    let lhs_value = (&w - outside).norm_squared();

    let members: Vec<usize> = cluster[1..].to_vec();
    let mut rhs_value = T::zero();
    let mut rhs_lower_sum = T::zero();
    for &i in &members {
        for &j in &members {
            let den_i = pair_denominator(first_coords[i], Sigma::Sphere);
            let den_j = pair_denominator(first_coords[j], Sigma::Sphere);
            rhs_value += masses[i] * masses[j] * truncated[i].dot(&truncated[j]) / (den_i * den_j);
            rhs_lower_sum += masses[i] * masses[j] / (gap[i] * gap[j]);
        }
    }
    let mut cos_alphas = Vec::new();
    for (a, &i) in members.iter().enumerate() {
        for &j in &members[a + 1..] {
            let c = truncated[i].dot(&truncated[j]) / (truncated[i].norm() * truncated[j].norm());
            cos_alphas.push((i, j, c));
        }
    }
    Ok(BlowupDiagnostic {
        cluster,
        frame,
        first_coords,
        truncated,
        w,
        lhs_value,
        rhs_value,
        rhs_lower_half: rhs_lower_sum / lit(2.0),
        cos_alphas,
    })
}

/// One row of [`shrink_family_probe`].
#[derive(Debug, Clone, PartialEq)]
pub struct ProbeRow<T: Real> {
    /// Chordal diameter of the contracted cluster.
    pub d: T,
    pub lhs_value: T,
    pub rhs_value: T,
    pub rhs_lower_half: T,
    pub min_cos_alpha: T,
    pub w_norm: T,
}

/// Moves `q` along the great circle toward `base`, keeping the fraction
/// `tau` of the arc.
fn slerp_toward<T: Real>(base: &DVector<T>, q: &DVector<T>, tau: T) -> Result<DVector<T>> {
    let c = base.dot(q).max(-T::one()).min(T::one());
    let theta = c.acos();
    if theta <= T::EPSILON {
        return Ok(q.clone());
    }
    let s = theta.sin();
    if s <= lit(1e-12) {
        return Err(Error::InvalidArgument(
            "cannot contract an antipodal body".into(),
        ));
    }
    let out = base * (((T::one() - tau) * theta).sin() / s) + q * ((tau * theta).sin() / s);
    let norm = out.norm();
    Ok(out / norm)
}

fn cluster_diameter<T: Real>(pts: &[DVector<T>]) -> T {
    let mut d = T::zero();
    for i in 0..pts.len() {
        for j in i + 1..pts.len() {
            d = d.max((&pts[i] - &pts[j]).norm());
        }
    }
    d
}

/// `base` with the cluster contracted toward body 0 along great circles so
/// that its chordal diameter equals `d`.
pub fn contract_cluster<T: Real>(
    base: &BodySystem<T>,
    cluster: &[usize],
    d: T,
) -> Result<BodySystem<T>> {
    if base.sigma() != Sigma::Sphere {
        return Err(Error::UnsupportedMetric);
    }
    let cluster = validate_cluster(cluster, base.n())?;
    let q0 = base.positions()[0].coords().clone();
    let originals: Vec<DVector<T>> = cluster
        .iter()
        .map(|&j| base.positions()[j].coords().clone())
        .collect();
    let full = cluster_diameter(&originals);
    if !(d > T::zero() && d <= full) {
        return Err(Error::InvalidArgument(format!(
            "target diameter must lie in (0, {}]",
            full
        )));
    }
    let contracted = |tau: T| -> Result<Vec<DVector<T>>> {
        originals
            .iter()
            .map(|q| slerp_toward(&q0, q, tau))
            .collect()
    };
    let (mut lo, mut hi) = (T::zero(), T::one());
    for _ in 0..200 {
        let mid = (lo + hi) / lit(2.0);
        if cluster_diameter(&contracted(mid)?) < d {
            lo = mid;
        } else {
            hi = mid;
        }
        if hi - lo <= T::EPSILON * hi {
            break;
        }
    }
    let pts = contracted(hi)?;
    let mut positions = base.positions().to_vec();
    for (&j, p) in cluster.iter().zip(pts) {
        positions[j] = SpacePoint::project(p.as_slice().to_vec(), Sigma::Sphere)?;
    }
    base.with_positions(positions)
}

/// Contracts the cluster to each diameter in `d_values` and evaluates the
/// diagnostic there.
pub fn shrink_family_probe<T: Real>(
    problem: &REProblem<T>,
    base: &BodySystem<T>,
    cluster: &[usize],
    d_values: &[T],
) -> Result<Vec<ProbeRow<T>>> {
    if d_values.is_empty() {
        return Err(Error::InvalidArgument("d_values must not be empty".into()));
    }
    if d_values.iter().any(|d| !(*d > T::zero())) {
        return Err(Error::InvalidArgument("d_values must be positive".into()));
    }
    if d_values.windows(2).any(|w| !(w[1] < w[0])) {
        return Err(Error::InvalidArgument(
            "d_values must be strictly decreasing".into(),
        ));
    }
    if cluster.len() < 2 {
        return Err(Error::InvalidArgument(
            "cluster needs at least two bodies".into(),
        ));
    }
    d_values
        .iter()
        .map(|&d| {
            let cfg = contract_cluster(base, cluster, d)?;
            let members: Vec<SpacePoint<T>> = cluster
                .iter()
                .map(|&j| cfg.positions()[j].clone())
                .collect();
            let mut achieved = T::zero();
            for i in 0..members.len() {
                for j in i + 1..members.len() {
                    achieved = achieved.max(chordal_distance(&members[i], &members[j])?);
                }
            }
            let diag = blowup_diagnostic(problem, &cfg, cluster)?;
            Ok(ProbeRow {
                d: achieved,
                lhs_value: diag.lhs_value,
                rhs_value: diag.rhs_value,
                rhs_lower_half: diag.rhs_lower_half,
                min_cos_alpha: diag.min_cos_alpha(),
                w_norm: diag.w_norm(),
            })
        })
        .collect()
}

/// Least-squares slope of `ln y` against `ln x`.
pub fn loglog_slope<T: Real>(x: &[T], y: &[T]) -> Option<T> {
    if x.len() != y.len() || x.len() < 2 {
        return None;
    }
    let lx: Vec<T> = x.iter().map(|v| v.ln()).collect();
    let ly: Vec<T> = y.iter().map(|v| v.ln()).collect();
    let n = from_usize::<T>(x.len());
    let mx = lx.iter().fold(T::zero(), |a, v| a + *v) / n;
    let my = ly.iter().fold(T::zero(), |a, v| a + *v) / n;
    let (mut sxy, mut sxx) = (T::zero(), T::zero());
    for (a, b) in lx.iter().zip(&ly) {
        sxy += (*a - mx) * (*b - my);
        sxx += (*a - mx) * (*a - mx);
    }
    (sxx > T::zero()).then(|| sxy / sxx)
}
