//! Relative equilibria on the sphere.
//!
//! A configuration `Q_1, …, Q_n` on `𝕊^{k−1}` rotates rigidly as
//! `q_i(t) = T_k(At)Q_i` exactly when every
//!
//! ```text
//! F_i(Q) = −𝐀²Q_i − Σ_{j≠i} m_j (Q_j − ⟨Q_i,Q_j⟩Q_i) / (1 − ⟨Q_i,Q_j⟩²)^{3/2} + ‖𝐀Q_i‖² Q_i
//! ```
//!
//! vanishes. `F_i` is tangent to the sphere at `Q_i`, and
//! `F(R·Q) = R·F(Q)` for every orthogonal `R` commuting with `𝐀`.

use std::cmp::Ordering;
use std::fmt;

use nalgebra::{DMatrix, DVector};

use crate::dynamics::{
    check_pairs, integrate_with, min_pair_denominator, min_pairwise_distance, pair_force,
    tangent_velocity, BodySystem, IntegratorOptions, PhaseState, EPS_SING,
};
use crate::error::{Error, Result};
use crate::geometry::{project_coords, RotationSpec, Sigma};
use crate::scalar::{from_usize, lit, to_f64, Real};

/// A rate or projection counts as nonzero above this.
pub const ACTIVITY_TOL: f64 = 1e-9;

/// Masses and rotation rates of a relative-equilibrium search.
#[derive(Debug, Clone, PartialEq)]
pub struct REProblem<T: Real> {
    masses: Vec<T>,
    spec: RotationSpec<T>,
}

impl<T: Real> REProblem<T> {
    pub fn new(masses: impl Into<Vec<T>>, spec: RotationSpec<T>) -> Result<Self> {
        let masses: Vec<T> = masses.into();
        if masses.is_empty() {
            return Err(Error::InvalidArgument(
                "at least one body is required".into(),
            ));
        }
        if let Some(i) = masses
            .iter()
            .position(|m| !(m.is_finite() && *m > T::zero()))
        {
            return Err(Error::InvalidArgument(format!(
                "mass {i} must be positive and finite"
            )));
        }
        Ok(Self { masses, spec })
    }

    pub fn masses(&self) -> &[T] {
        &self.masses
    }

    pub fn spec(&self) -> &RotationSpec<T> {
        &self.spec
    }

    pub fn n(&self) -> usize {
        self.masses.len()
    }

    pub fn k(&self) -> usize {
        self.spec.dim()
    }

    fn squared_rates(&self) -> Vec<T> {
        self.spec.rate_diagonal().iter().map(|a| *a * *a).collect()
    }

    fn check_config(&self, config: &BodySystem<T>) -> Result<()> {
        if config.sigma() != Sigma::Sphere {
            return Err(Error::UnsupportedMetric);
        }
        if config.n() != self.n() {
            return Err(Error::DimensionMismatch {
                expected: self.n(),
                found: config.n(),
            });
        }
        if config.dim() != self.k() {
            return Err(Error::DimensionMismatch {
                expected: self.k(),
                found: config.dim(),
            });
        }
        Ok(())
    }
}

/// Per-body residual vectors of the equilibrium system.
#[derive(Debug, Clone, PartialEq)]
pub struct REResidual<T: Real> {
    /// `F_i` as defined by the equilibrium equations.
    pub per_body: Vec<DVector<T>>,
    /// `F_i` with its component along `Q_i` removed.
    pub tangential: Vec<DVector<T>>,
    /// `max_i ‖F_i‖`.
    pub norm: T,
    /// Root-sum-square over all components.
    pub rss: T,
}

/// Raw residual for flat coordinates into `out`.
fn residual_flat<T: Real>(
    masses: &[T],
    a2: &[T],
    coords: &[T],
    k: usize,
    out: &mut [T],
) -> Result<()> {
    let eps = lit::<T>(EPS_SING);
    for o in out.iter_mut() {
        *o = T::zero();
    }
    for i in 0..masses.len() {
        let range = i * k..(i + 1) * k;
        let fi = &mut out[range.clone()];
        pair_force(masses, coords, k, Sigma::Sphere, i, eps, fi)?;
        let qi = &coords[range];
        let spin = (0..k).fold(T::zero(), |acc, d| acc + a2[d] * qi[d] * qi[d]);
        for d in 0..k {
            fi[d] = -a2[d] * qi[d] - fi[d] + spin * qi[d];
        }
    }
    Ok(())
}

/// Removes the component of each `F_i` along `Q_i`.
fn tangentialize<T: Real>(coords: &[T], k: usize, f: &mut [T]) {
    for (q, fi) in coords.chunks(k).zip(f.chunks_mut(k)) {
        let qq = q.iter().fold(T::zero(), |a, x| a + *x * *x);
        let c = q
            .iter()
            .zip(fi.iter())
            .fold(T::zero(), |a, (x, y)| a + *x * *y)
            / qq;
        for (fd, qd) in fi.iter_mut().zip(q) {
            *fd -= c * *qd;
        }
    }
}

fn body_max_norm<T: Real>(f: &[T], k: usize) -> T {
    f.chunks(k)
        .map(|fi| fi.iter().fold(T::zero(), |a, x| a + *x * *x).sqrt())
        .fold(T::zero(), |m, x| m.max(x))
}

/// Evaluates the equilibrium residual of `config`. Masses come from `problem`.
pub fn re_residual<T: Real>(
    problem: &REProblem<T>,
    config: &BodySystem<T>,
) -> Result<REResidual<T>> {
    problem.check_config(config)?;
    let k = problem.k();
    let coords = config.flat_coords();
    let mut raw = vec![T::zero(); coords.len()];
    residual_flat(
        problem.masses(),
        &problem.squared_rates(),
        &coords,
        k,
        &mut raw,
    )?;
    let mut tang = raw.clone();
    tangentialize(&coords, k, &mut tang);
    let rss = raw.iter().fold(T::zero(), |a, x| a + *x * *x).sqrt();
    Ok(REResidual {
        per_body: raw.chunks(k).map(DVector::from_column_slice).collect(),
        tangential: tang.chunks(k).map(DVector::from_column_slice).collect(),
        norm: body_max_norm(&raw, k),
        rss,
    })
}

/// Kind of relative equilibrium, by which rotation blocks move the bodies.
#[derive(Debug, Clone, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum Classification {
    /// No block with a nonzero rate moves any body.
    FixedPoint,
    /// `k = 4`, one block active.
    PositiveElliptic,
    /// `k = 4`, both blocks active.
    PositiveEllipticElliptic,
    /// Any other dimension: count of nonzero rates and the active blocks.
    Rotating {
        nonzero_blocks: usize,
        active_blocks: Vec<usize>,
    },
}

impl fmt::Display for Classification {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Classification::FixedPoint => f.write_str("fixed point"),
            Classification::PositiveElliptic => f.write_str("positive elliptic"),
            Classification::PositiveEllipticElliptic => f.write_str("positive elliptic-elliptic"),
            Classification::Rotating {
                nonzero_blocks,
                active_blocks,
            } => {
                let active: Vec<String> = active_blocks.iter().map(|b| b.to_string()).collect();
                write!(
                    f,
                    "rotating ({nonzero_blocks} nonzero blocks, active [{}])",
                    active.join(",")
                )
            }
        }
    }
}

/// Classifies a configuration by the rotation blocks acting on it.
pub fn classify_config<T: Real>(config: &BodySystem<T>, problem: &REProblem<T>) -> Classification {
    let thresh = lit::<T>(ACTIVITY_TOL);
    let rates = problem.spec().rates();
    let nonzero: Vec<usize> = (0..rates.len())
        .filter(|&l| rates[l].abs() > thresh)
        .collect();
    let active: Vec<usize> = nonzero
        .iter()
        .copied()
        .filter(|&l| {
            config.positions().iter().any(|q| {
                let c = q.as_slice();
                (c[2 * l] * c[2 * l] + c[2 * l + 1] * c[2 * l + 1]).sqrt() > thresh
            })
        })
        .collect();
    if active.is_empty() {
        Classification::FixedPoint
    } else if problem.k() == 4 {
        if active.len() == 1 {
            Classification::PositiveElliptic
        } else {
            Classification::PositiveEllipticElliptic
        }
    } else {
        Classification::Rotating {
            nonzero_blocks: nonzero.len(),
            active_blocks: active,
        }
    }
}

/// Classifies a solved relative equilibrium.
pub fn classify<T: Real>(solution: &RESolution<T>, problem: &REProblem<T>) -> Classification {
    classify_config(&solution.configuration, problem)
}

/// Output of [`solve_re`].
#[derive(Debug, Clone, PartialEq)]
pub struct RESolution<T: Real> {
    pub configuration: BodySystem<T>,
    pub residual_norm: T,
    pub classification: Classification,
    pub converged: bool,
    pub iterations: usize,
}

impl<T: Real> RESolution<T> {
    /// Minimum pairwise chordal distance, `None` for a single body.
    pub fn min_distance(&self) -> Option<T> {
        min_pairwise_distance(&self.configuration).ok()
    }
}

/// Levenberg–Marquardt settings.
#[derive(Debug, Clone, PartialEq)]
pub struct SolverOptions<T: Real> {
    /// Target `max_i ‖F_i‖`, in `[1e−14, 1e−4]`.
    pub tol: T,
    pub max_iter: usize,
    /// Forward-difference step of the Jacobian.
    pub fd_step: T,
    pub initial_damping: T,
    /// Extra steps taken after reaching `tol`, continued only while each
    /// one at least halves the cost. Degenerate (fold) equilibria converge
    /// linearly, so a small residual alone does not pin the positions.
    pub polish_steps: usize,
    /// Central-difference step used while polishing.
    pub polish_fd_step: T,
}

impl<T: Real> Default for SolverOptions<T> {
    fn default() -> Self {
        Self {
            tol: lit(1e-10),
            max_iter: 200,
            fd_step: lit::<T>(1e-7).max(T::EPSILON.sqrt()),
            initial_damping: lit(1e-3),
            polish_steps: 40,
            polish_fd_step: T::EPSILON.cbrt(),
        }
    }
}

impl<T: Real> SolverOptions<T> {
    pub fn new(tol: T, max_iter: usize) -> Self {
        Self {
            tol,
            max_iter,
            ..Self::default()
        }
    }
}

struct LeastSquares<'a, T: Real> {
    masses: &'a [T],
    a2: Vec<T>,
    n: usize,
    k: usize,
}

impl<T: Real> LeastSquares<'_, T> {
    fn rows(&self) -> usize {
        self.n * self.k + self.n
    }

    /// `[tangential F ; ‖Q_i‖² − 1]`.
    fn residual(&self, x: &[T], out: &mut [T]) -> Result<()> {
        let nk = self.n * self.k;
        let (f, c) = out.split_at_mut(nk);
        residual_flat(self.masses, &self.a2, x, self.k, f)?;
        tangentialize(x, self.k, f);
        for (ci, q) in c.iter_mut().zip(x.chunks(self.k)) {
            *ci = q.iter().fold(T::zero(), |a, v| a + *v * *v) - T::one();
        }
        Ok(())
    }

    /// Forward differences at `step`, or central differences at `step`
    /// when `central` is set.
    fn jacobian(&self, x: &[T], r0: &[T], step: T, central: bool) -> Result<DMatrix<T>> {
        let m = self.rows();
        let nk = x.len();
        let mut jac = DMatrix::zeros(m, nk);
        let mut xp = x.to_vec();
        let mut rp = vec![T::zero(); m];
        let mut rm = vec![T::zero(); m];
        for col in 0..nk {
            let h = step * (T::one() + x[col].abs());
            xp[col] = x[col] + h;
            self.residual(&xp, &mut rp)?;
            if central {
                xp[col] = x[col] - h;
                self.residual(&xp, &mut rm)?;
            }
            xp[col] = x[col];
            for row in 0..m {
                jac[(row, col)] = if central {
                    (rp[row] - rm[row]) / (h + h)
                } else {
                    (rp[row] - r0[row]) / h
                };
            }
        }
        Ok(jac)
    }

    /// `max_i ‖F_i‖` of the raw residual, for unit-norm `x`.
    fn body_norm(&self, r: &[T]) -> T {
        body_max_norm(&r[..self.n * self.k], self.k)
    }
}

fn sum_sq<T: Real>(v: &[T]) -> T {
    v.iter().fold(T::zero(), |a, x| a + *x * *x)
}

fn renormalize<T: Real>(x: &mut [T], k: usize) -> bool {
    x.chunks_mut(k)
        .all(|q| project_coords(q, Sigma::Sphere).is_some())
}

/// Solves the equilibrium system from `start` with damped Gauss–Newton
/// steps. Non-convergence is reported through `converged`, not as an error.
pub fn solve_re<T: Real>(
    problem: &REProblem<T>,
    start: &BodySystem<T>,
    opts: &SolverOptions<T>,
) -> Result<RESolution<T>> {
    problem.check_config(start)?;
    if !(opts.tol >= lit(1e-14) && opts.tol <= lit(1e-4)) {
        return Err(Error::InvalidArgument(format!(
            "tolerance {} outside [1e-14, 1e-4]",
            to_f64(opts.tol)
        )));
    }
    let (n, k) = (problem.n(), problem.k());
    let eps = lit::<T>(EPS_SING);
    let mut x = start.flat_coords();
    check_pairs(&x, n, k, Sigma::Sphere, eps)
        .map_err(|e| Error::InvalidArgument(format!("singular start: {e}")))?;

    let ls = LeastSquares {
        masses: problem.masses(),
        a2: problem.squared_rates(),
        n,
        k,
    };
    let m = ls.rows();
    let mut r = vec![T::zero(); m];
    ls.residual(&x, &mut r)?;
    let mut cost = sum_sq(&r);
    let mut norm = ls.body_norm(&r);
    let mut lambda = opts.initial_damping;
    let lambda_max = lit::<T>(1e16);
    let lambda_min = lit::<T>(1e-15);
    let mut iterations = 0usize;
    let mut polish_left = opts.polish_steps;
    let mut trial = vec![T::zero(); x.len()];
    let mut r_trial = vec![T::zero(); m];

    while iterations < opts.max_iter {
        let polishing = norm <= opts.tol;
        if polishing {
            if polish_left == 0 {
                break;
            }
            polish_left -= 1;
        }
        iterations += 1;
        let jac = if polishing {
            ls.jacobian(&x, &r, opts.polish_fd_step, true)?
        } else {
            ls.jacobian(&x, &r, opts.fd_step, false)?
        };
        let jt = jac.transpose();
        let jtj = &jt * &jac;
        let g = &jt * DVector::from_column_slice(&r);

        let mut improved = false;
        while lambda <= lambda_max {
            let mut lhs = jtj.clone();
            for d in 0..lhs.nrows() {
                lhs[(d, d)] += lambda;
            }
            let Some(chol) = lhs.cholesky() else {
                if polishing && lambda <= lambda_min {
                    break;
                }
                lambda = if polishing {
                    lambda_min
                } else {
                    lambda * lit(10.0)
                };
                continue;
            };
            let delta = chol.solve(&(-&g));
            for (t, (xi, di)) in trial.iter_mut().zip(x.iter().zip(delta.iter())) {
                *t = *xi + *di;
            }
            let ok = renormalize(&mut trial, k)
                && check_pairs(&trial, n, k, Sigma::Sphere, eps).is_ok()
                && ls.residual(&trial, &mut r_trial).is_ok();
            let trial_cost = if ok { sum_sq(&r_trial) } else { T::zero() };
            let target = if polishing { cost / lit(2.0) } else { cost };
            if ok && trial_cost.is_finite() && trial_cost < target {
                x.copy_from_slice(&trial);
                std::mem::swap(&mut r, &mut r_trial);
                cost = trial_cost;
                norm = ls.body_norm(&r);
                lambda = (lambda / lit(10.0)).max(lambda_min);
                improved = true;
                break;
            }
            if polishing {
                // less damping is the only way to a markedly better point
                if lambda <= lambda_min {
                    break;
                }
                lambda = (lambda / lit(1000.0)).max(lambda_min);
                continue;
            }
            lambda *= lit(10.0);
        }
        if !improved {
            break;
        }
    }

    let configuration = BodySystem::from_flat(problem.masses(), &x, k, Sigma::Sphere)?;
    let residual_norm = re_residual(problem, &configuration)?.norm;
    let classification = classify_config(&configuration, problem);
    Ok(RESolution {
        configuration,
        residual_norm,
        classification,
        converged: residual_norm <= opts.tol,
        iterations,
    })
}

/// Outcome of integrating a relative equilibrium and comparing it with the
/// rigid rotation.
#[derive(Debug, Clone, PartialEq)]
pub struct VerificationReport<T: Real> {
    pub max_deviation: T,
    pub pass: bool,
    pub t_end: T,
    pub max_drift: T,
    pub samples: usize,
}

/// Integrates from `(Q, G·Q)` for `periods` rotation periods and measures
/// `max_i max_t ‖q_i(t) − T_k(At)Q_i‖`.
pub fn verify_orbit<T: Real>(
    solution: &RESolution<T>,
    problem: &REProblem<T>,
    periods: T,
    tol_dyn: T,
) -> Result<VerificationReport<T>> {
    verify_orbit_with(solution, problem, periods, tol_dyn, lit(1e-9))
}

/// [`verify_orbit`] with an explicit integration tolerance.
pub fn verify_orbit_with<T: Real>(
    solution: &RESolution<T>,
    problem: &REProblem<T>,
    periods: T,
    tol_dyn: T,
    integration_tol: T,
) -> Result<VerificationReport<T>> {
    if !solution.converged {
        return Err(Error::InvalidArgument("solution did not converge".into()));
    }
    verify_configuration(
        &solution.configuration,
        problem,
        periods,
        tol_dyn,
        integration_tol,
    )
}

/// Runs the verification on any candidate configuration, converged or not.
pub fn verify_configuration<T: Real>(
    config: &BodySystem<T>,
    problem: &REProblem<T>,
    periods: T,
    tol_dyn: T,
    integration_tol: T,
) -> Result<VerificationReport<T>> {
    if !(periods > T::zero()) {
        return Err(Error::InvalidArgument("periods must be positive".into()));
    }
    problem.check_config(config)?;
    let spec = problem.spec();
    let t_end = spec.period().map_or(T::one(), |p| p * periods);
    let velocities = tangent_velocity(config, spec)?;
    let state = PhaseState::projected(config.clone(), velocities)?;
    let mut opts = IntegratorOptions::for_spec(integration_tol, spec);
    if opts.max_step.is_none() {
        opts.max_step = Some(t_end / lit(1000.0));
    }
    let traj = integrate_with(&state, t_end, &opts)?;
    let mut max_dev = T::zero();
    for s in &traj.samples {
        let rot = spec.rotation_at(s.t);
        for (q, q0) in s.state.system().positions().iter().zip(config.positions()) {
            max_dev = max_dev.max((q.coords() - &rot * q0.coords()).norm());
        }
    }
    Ok(VerificationReport {
        max_deviation: max_dev,
        pass: max_dev <= tol_dyn,
        t_end,
        max_drift: traj.max_drift(),
        samples: traj.samples.len(),
    })
}

/// Permutations `π` with `m[π(i)] = m[i]` for every `i`.
fn mass_preserving_permutations<T: Real>(masses: &[T]) -> Vec<Vec<usize>> {
    fn extend<T: Real>(
        masses: &[T],
        used: &mut [bool],
        cur: &mut Vec<usize>,
        out: &mut Vec<Vec<usize>>,
    ) {
        let i = cur.len();
        if i == masses.len() {
            out.push(cur.clone());
            return;
        }
        for j in 0..masses.len() {
            if !used[j] && masses[j] == masses[i] {
                used[j] = true;
                cur.push(j);
                extend(masses, used, cur, out);
                cur.pop();
                used[j] = false;
            }
        }
    }
    let mut out = Vec::new();
    extend(
        masses,
        &mut vec![false; masses.len()],
        &mut Vec::new(),
        &mut out,
    );
    out
}

/// Squared residual of the best rotation in `SO(d)` mapping the columns of
/// `x` onto those of `y` (Kabsch).
fn procrustes_sq<T: Real>(x: &DMatrix<T>, y: &DMatrix<T>) -> T {
    let base = x.norm_squared() + y.norm_squared();
    if x.nrows() == 1 {
        return (x - y).norm_squared();
    }
    let cross = y * x.transpose();
    let svd = cross.clone().svd(true, true);
    let (u, vt) = (svd.u.expect("u requested"), svd.v_t.expect("v_t requested"));
    let mut s = svd.singular_values.clone();
    let flip = (&u * &vt).determinant() < T::zero();
    if flip {
        let (imin, _) = s.iter().enumerate().fold(
            (0, T::max_value().unwrap_or_else(T::one)),
            |(bi, bv), (i, v)| {
                if *v < bv {
                    (i, *v)
                } else {
                    (bi, bv)
                }
            },
        );
        s[imin] = -s[imin];
    }
    (base - lit::<T>(2.0) * s.sum()).max(T::zero())
}

/// Distance between two configurations modulo rotations commuting with the
/// rate matrix and permutations of equal-mass bodies.
pub fn orbit_distance<T: Real>(
    a: &BodySystem<T>,
    b: &BodySystem<T>,
    problem: &REProblem<T>,
) -> Result<T> {
    problem.check_config(a)?;
    problem.check_config(b)?;
    let spaces = problem.spec().eigenspaces();
    let n = problem.n();
    let block = |cfg: &BodySystem<T>, idx: &[usize], perm: Option<&[usize]>| {
        DMatrix::from_fn(idx.len(), n, |r, c| {
            let body = perm.map_or(c, |p| p[c]);
            cfg.positions()[body].as_slice()[idx[r]]
        })
    };
    let xs: Vec<DMatrix<T>> = spaces.iter().map(|idx| block(a, idx, None)).collect();
    let mut best = T::max_value().unwrap_or_else(T::one);
    for perm in mass_preserving_permutations(problem.masses()) {
        let total = spaces.iter().zip(&xs).fold(T::zero(), |acc, (idx, x)| {
            acc + procrustes_sq(x, &block(b, idx, Some(&perm)))
        });
        best = best.min(total);
    }
    Ok(best.sqrt())
}

fn canonical_order<T: Real>(a: &RESolution<T>, b: &RESolution<T>) -> Ordering {
    let key = |s: &RESolution<T>| s.min_distance().unwrap_or_else(T::zero);
    key(a)
        .partial_cmp(&key(b))
        .unwrap_or(Ordering::Equal)
        .then_with(|| {
            let (x, y) = (a.configuration.flat_coords(), b.configuration.flat_coords());
            x.iter()
                .zip(&y)
                .map(|(p, q)| p.partial_cmp(q).unwrap_or(Ordering::Equal))
                .find(|o| *o != Ordering::Equal)
                .unwrap_or(Ordering::Equal)
        })
}

/// Keeps one representative per symmetry class. Solutions are first put in
/// a canonical order, so the result does not depend on input order.
pub fn dedup<T: Real>(
    solutions: &[RESolution<T>],
    problem: &REProblem<T>,
    match_tol: T,
) -> Vec<RESolution<T>> {
    let mut sorted: Vec<&RESolution<T>> = solutions.iter().collect();
    sorted.sort_by(|a, b| canonical_order(a, b));
    let mut reps: Vec<RESolution<T>> = Vec::new();
    for cand in sorted {
        let md = cand.min_distance();
        let duplicate = reps.iter().any(|rep| {
            if let (Some(x), Some(y)) = (md, rep.min_distance()) {
                if (x - y).abs() > match_tol {
                    return false;
                }
            }
            orbit_distance(&cand.configuration, &rep.configuration, problem)
                .is_ok_and(|d| d <= match_tol)
        });
        if !duplicate {
            reps.push(cand.clone());
        }
    }
    reps
}

/// Average number of iterations, for reporting.
pub fn mean_iterations<T: Real>(solutions: &[RESolution<T>]) -> T {
    if solutions.is_empty() {
        return T::zero();
    }
    let total: usize = solutions.iter().map(|s| s.iterations).sum();
    from_usize::<T>(total) / from_usize(solutions.len())
}

/// Smallest pair denominator of a configuration, `None` for one body.
pub fn min_denominator<T: Real>(config: &BodySystem<T>) -> Option<T> {
    let coords = config.flat_coords();
    min_pair_denominator(&coords, config.n(), config.dim(), config.sigma()).map(|(_, _, d)| d)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::dynamics::acceleration;
    use crate::geometry::{random_sphere_point, substream, SpacePoint};
    use approx::assert_abs_diff_eq;
    use proptest::prelude::*;
    use rand::Rng;
    use std::f64::consts::{FRAC_1_SQRT_2, SQRT_2};

    fn pt(c: &[f64]) -> SpacePoint<f64> {
        SpacePoint::new(c.to_vec(), Sigma::Sphere).unwrap()
    }

    fn problem(masses: &[f64], rates: &[f64], k: usize) -> REProblem<f64> {
        REProblem::new(
            masses.to_vec(),
            RotationSpec::new(rates.to_vec(), k).unwrap(),
        )
        .unwrap()
    }

    fn two_body() -> BodySystem<f64> {
        BodySystem::new(
            vec![1.0, 1.0],
            vec![
                pt(&[FRAC_1_SQRT_2, 0.0, FRAC_1_SQRT_2]),
                pt(&[-FRAC_1_SQRT_2, 0.0, FRAC_1_SQRT_2]),
            ],
        )
        .unwrap()
    }

    /// Direct transcription of the equilibrium equations, body by body.
    fn direct_residual(masses: &[f64], rates: &[f64], q: &[Vec<f64>]) -> Vec<Vec<f64>> {
        let k = q[0].len();
        let mut a2 = vec![0.0; k];
        for (l, a) in rates.iter().enumerate() {
            a2[2 * l] = a * a;
            a2[2 * l + 1] = a * a;
        }
        (0..q.len())
            .map(|i| {
                let norm_aq2: f64 = (0..k).map(|d| a2[d] * q[i][d] * q[i][d]).sum();
                let mut f: Vec<f64> = (0..k)
                    .map(|d| -a2[d] * q[i][d] + norm_aq2 * q[i][d])
                    .collect();
                for j in 0..q.len() {
                    if j == i {
                        continue;
                    }
                    let c: f64 = (0..k).map(|d| q[i][d] * q[j][d]).sum();
                    let den = (1.0 - c * c).powf(1.5);
                    for d in 0..k {
                        f[d] -= masses[j] * (q[j][d] - c * q[i][d]) / den;
                    }
                }
                f
            })
            .collect()
    }

    #[test]
    fn single_equatorial_body() {
        let p = problem(&[1.0], &[0.7], 3);
        let sys = BodySystem::new(vec![1.0], vec![pt(&[1.0, 0.0, 0.0])]).unwrap();
        assert_eq!(re_residual(&p, &sys).unwrap().norm, 0.0);
    }

    #[test]
    fn two_body_equilibrium_residual() {
        let p = problem(&[1.0, 1.0], &[SQRT_2], 3);
        let res = re_residual(&p, &two_body()).unwrap();
        assert!(res.norm <= 1e-12);
        let oracle = direct_residual(
            &[1.0, 1.0],
            &[SQRT_2],
            &[
                vec![FRAC_1_SQRT_2, 0.0, FRAC_1_SQRT_2],
                vec![-FRAC_1_SQRT_2, 0.0, FRAC_1_SQRT_2],
            ],
        );
        assert!(oracle.iter().flatten().all(|x| x.abs() <= 1e-12));
    }

    #[test]
    fn two_body_wrong_rate_residual() {
        // hand-derived components at A₁² = 1, r = z = 1/√2:
        //   x: −A²r + m/(4r²z) + A²r³ = r/2,  z: −m/(4rz²) + A²r²z = −z/2
        let p = problem(&[1.0, 1.0], &[1.0], 3);
        let res = re_residual(&p, &two_body()).unwrap();
        let h = 0.5 * FRAC_1_SQRT_2;
        assert_abs_diff_eq!(
            res.per_body[0],
            DVector::from_vec(vec![h, 0.0, -h]),
            epsilon = 1e-12
        );
        assert_abs_diff_eq!(
            res.per_body[1],
            DVector::from_vec(vec![-h, 0.0, -h]),
            epsilon = 1e-12
        );
        assert!((res.norm - 0.5).abs() <= 1e-5);
        assert!((res.rss - 0.5f64.sqrt()).abs() <= 1e-12);
        let oracle = direct_residual(
            &[1.0, 1.0],
            &[1.0],
            &[
                vec![FRAC_1_SQRT_2, 0.0, FRAC_1_SQRT_2],
                vec![-FRAC_1_SQRT_2, 0.0, FRAC_1_SQRT_2],
            ],
        );
        for (f, o) in res.per_body.iter().zip(&oracle) {
            assert_abs_diff_eq!(f.as_slice(), o.as_slice(), epsilon = 1e-14);
        }
    }

    #[test]
    fn singular_configuration_is_rejected() {
        let p = problem(&[1.0, 1.0], &[1.0], 3);
        let sys = BodySystem::new(
            vec![1.0, 1.0],
            vec![pt(&[0.0, 1.0, 0.0]), pt(&[0.0, 1.0, 0.0])],
        )
        .unwrap();
        assert!(matches!(
            re_residual(&p, &sys),
            Err(Error::Singularity { .. })
        ));
        let opts = SolverOptions::default();
        assert!(matches!(
            solve_re(&p, &sys, &opts),
            Err(Error::InvalidArgument(_))
        ));
    }

    #[test]
    fn solver_recovers_perturbed_two_body() {
        let p = problem(&[1.0, 1.0], &[SQRT_2], 3);
        let mut rng = substream(5, 0);
        let exact = two_body();
        let mut coords = exact.flat_coords();
        for c in coords.iter_mut() {
            *c += 1e-3 * rng.random_range(-1.0..1.0);
        }
        let start = BodySystem::from_flat(&[1.0, 1.0], &coords, 3, Sigma::Sphere).unwrap();
        let sol = solve_re(&p, &start, &SolverOptions::default()).unwrap();
        assert!(sol.converged);
        assert!(sol.residual_norm <= 1e-10);
        assert!(re_residual(&p, &sol.configuration).unwrap().norm <= 1e-10);
        let d = orbit_distance(&sol.configuration, &exact, &p).unwrap();
        assert!(d <= 1e-6, "distance to equilibrium orbit {d}");
    }

    #[test]
    fn restart_from_solution_is_idle() {
        let p = problem(&[1.0, 1.0], &[SQRT_2], 3);
        let start = BodySystem::from_flat(
            &[1.0, 1.0],
            &[0.72, 0.01, 0.69, -0.70, 0.0, 0.72],
            3,
            Sigma::Sphere,
        )
        .unwrap();
        let sol = solve_re(&p, &start, &SolverOptions::default()).unwrap();
        assert!(sol.converged);
        let again = solve_re(&p, &sol.configuration, &SolverOptions::default()).unwrap();
        assert!(again.iterations <= 2);
        assert!(again.residual_norm <= sol.residual_norm);
    }

    #[test]
    fn single_body_converges_to_pole_or_equator() {
        let p = problem(&[1.0], &[1.3], 3);
        let mut rng = substream(9, 0);
        for _ in 0..20 {
            let start = BodySystem::new(vec![1.0], vec![random_sphere_point(3, &mut rng).unwrap()])
                .unwrap();
            let sol = solve_re(&p, &start, &SolverOptions::default()).unwrap();
            assert!(sol.converged);
            let q = sol.configuration.positions()[0].as_slice();
            let on_equator = q[2].abs() <= 1e-6;
            let at_pole = (q[2].abs() - 1.0).abs() <= 1e-6;
            assert!(on_equator || at_pole, "{q:?}");
        }
    }

    #[test]
    fn verify_two_body_orbit() {
        let p = problem(&[1.0, 1.0], &[SQRT_2], 3);
        let sol = solve_re(&p, &two_body(), &SolverOptions::default()).unwrap();
        let report = verify_orbit(&sol, &p, 1.0, 1e-6).unwrap();
        assert!(report.pass, "{report:?}");
        assert!(report.max_drift <= 1e-9);
    }

    #[test]
    fn verify_detects_wrong_rate() {
        let p = problem(&[1.0, 1.0], &[SQRT_2], 3);
        let wrong = problem(&[1.0, 1.0], &[1.0], 3);
        let mut sol = solve_re(&p, &two_body(), &SolverOptions::default()).unwrap();
        sol.residual_norm = re_residual(&wrong, &sol.configuration).unwrap().norm;
        let report = verify_orbit(&sol, &wrong, 1.0, 1e-6).unwrap();
        assert!(report.max_deviation > 1e-2);
        assert!(!report.pass);
    }

    #[test]
    fn verify_fixed_point() {
        let p = problem(&[1.0], &[0.0], 3);
        let sys = BodySystem::new(vec![1.0], vec![pt(&[0.0, 0.0, 1.0])]).unwrap();
        let sol = solve_re(&p, &sys, &SolverOptions::default()).unwrap();
        assert_eq!(sol.classification, Classification::FixedPoint);
        let report = verify_orbit(&sol, &p, 1.0, 1e-9).unwrap();
        assert_eq!(report.t_end, 1.0);
        assert!(report.max_deviation <= 1e-9);
    }

    #[test]
    fn verify_requires_convergence() {
        let p = problem(&[1.0, 1.0], &[1.0], 3);
        let sol = RESolution {
            configuration: two_body(),
            residual_norm: 0.5,
            classification: Classification::FixedPoint,
            converged: false,
            iterations: 0,
        };
        assert!(verify_orbit(&sol, &p, 1.0, 1e-6).is_err());
    }

    fn solution(cfg: BodySystem<f64>, p: &REProblem<f64>) -> RESolution<f64> {
        RESolution {
            residual_norm: re_residual(p, &cfg).unwrap().norm,
            classification: classify_config(&cfg, p),
            configuration: cfg,
            converged: true,
            iterations: 0,
        }
    }

    #[test]
    fn dedup_merges_phase_shift() {
        let p = problem(&[1.0, 1.0], &[SQRT_2], 3);
        let a = two_body();
        let b = a.transformed(&p.spec().rotation_at(0.7)).unwrap();
        let reps = dedup(&[solution(a, &p), solution(b, &p)], &p, 1e-6);
        assert_eq!(reps.len(), 1);
    }

    #[test]
    fn dedup_merges_label_swap() {
        let p = problem(&[1.0, 1.0], &[SQRT_2], 3);
        let a = two_body();
        let b = a.permuted(&[1, 0]).unwrap();
        assert_eq!(
            dedup(&[solution(a, &p), solution(b, &p)], &p, 1e-6).len(),
            1
        );
    }

    #[test]
    fn dedup_keeps_distinct_orbits() {
        let p = problem(&[1.0, 1.0], &[SQRT_2], 3);
        let a = two_body();
        let b = BodySystem::new(
            vec![1.0, 1.0],
            vec![pt(&[0.8, 0.0, 0.6]), pt(&[-0.8, 0.0, 0.6])],
        )
        .unwrap();
        assert_eq!(
            dedup(&[solution(a, &p), solution(b, &p)], &p, 1e-6).len(),
            2
        );
        // unequal masses: swapping labels is not a symmetry
        let q = problem(&[1.0, 2.0], &[SQRT_2], 3);
        let a = BodySystem::new(
            vec![1.0, 2.0],
            vec![pt(&[0.6, 0.0, 0.8]), pt(&[-0.8, 0.0, 0.6])],
        )
        .unwrap();
        let b = a.permuted(&[1, 0]).unwrap();
        let b = BodySystem::new(vec![1.0, 2.0], b.positions().to_vec()).unwrap();
        assert_eq!(
            dedup(&[solution(a, &q), solution(b, &q)], &q, 1e-6).len(),
            2
        );
    }

    #[test]
    fn dedup_uses_full_commutant_for_repeated_rates() {
        // equal rates in k = 4: any rotation of ℝ⁴ in SO(4) commutes with 𝐀
        let p = problem(&[1.0, 1.0, 1.0], &[1.0, 1.0], 4);
        let mut rng = substream(3, 0);
        let cfg = BodySystem::new(
            vec![1.0; 3],
            (0..3)
                .map(|_| random_sphere_point(4, &mut rng).unwrap())
                .collect(),
        )
        .unwrap();
        let m = DMatrix::from_fn(4, 4, |_, _| rng.random_range(-1.0..1.0));
        let qr = m.qr();
        let mut rot = qr.q();
        if rot.determinant() < 0.0 {
            rot.column_mut(0).neg_mut();
        }
        let moved = cfg.transformed(&rot).unwrap().permuted(&[2, 0, 1]).unwrap();
        assert!(orbit_distance(&cfg, &moved, &p).unwrap() <= 1e-12);
        // distinct rates: a generic rotation is not a symmetry
        let q = problem(&[1.0, 1.0, 1.0], &[1.0, 2.0], 4);
        assert!(orbit_distance(&cfg, &cfg.transformed(&rot).unwrap(), &q).unwrap() > 1e-3);
    }

    #[test]
    fn classification_labels() {
        let p = problem(&[1.0], &[1.0, 0.0], 4);
        let sys = BodySystem::new(vec![1.0], vec![pt(&[0.6, 0.0, 0.8, 0.0])]).unwrap();
        assert_eq!(classify_config(&sys, &p), Classification::PositiveElliptic);
        assert_eq!(
            Classification::PositiveElliptic.to_string(),
            "positive elliptic"
        );

        let p = problem(&[1.0], &[1.0, 3.0], 4);
        assert_eq!(
            classify_config(&sys, &p),
            Classification::PositiveEllipticElliptic
        );
        assert_eq!(
            Classification::PositiveEllipticElliptic.to_string(),
            "positive elliptic-elliptic"
        );

        let p = problem(&[1.0], &[0.0, 0.0], 4);
        assert_eq!(classify_config(&sys, &p), Classification::FixedPoint);

        let p = problem(&[1.0], &[2.0], 3);
        let pole = BodySystem::new(vec![1.0], vec![pt(&[0.0, 0.0, 1.0])]).unwrap();
        assert_eq!(classify_config(&pole, &p), Classification::FixedPoint);
        let c = classify_config(&two_body(), &problem(&[1.0, 1.0], &[2.0], 3));
        assert_eq!(
            c,
            Classification::Rotating {
                nonzero_blocks: 1,
                active_blocks: vec![0]
            }
        );
    }

    #[test]
    fn rotating_solution_residual_is_rotated_residual() {
        // x(t) = T(t)Q: ẍ − RHS(x, ẋ) = T(t)·F(Q)
        let mut rng = substream(21, 0);
        let spec = RotationSpec::new(vec![0.9, -1.4], 5).unwrap();
        let p = REProblem::new(vec![1.0, 2.0, 0.5], spec.clone()).unwrap();
        let cfg = BodySystem::new(
            vec![1.0, 2.0, 0.5],
            (0..3)
                .map(|_| random_sphere_point(5, &mut rng).unwrap())
                .collect(),
        )
        .unwrap();
        let f = re_residual(&p, &cfg).unwrap();
        let g = spec.rotation_generator();
        for _ in 0..10 {
            let t = rng.random_range(-5.0..5.0);
            let rot = spec.rotation_at(t);
            let moved = cfg.transformed(&rot).unwrap();
            let vel: Vec<DVector<f64>> =
                moved.positions().iter().map(|q| &g * q.coords()).collect();
            let state = PhaseState::new(moved.clone(), vel).unwrap();
            let rhs = acceleration(&state).unwrap();
            for ((q, a), fi) in moved.positions().iter().zip(&rhs).zip(&f.per_body) {
                let lhs = &g * &g * q.coords() - a;
                let expected = &rot * fi;
                assert!((lhs - expected).norm() <= 1e-10);
            }
        }
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(64))]

        #[test]
        fn residual_is_tangent_and_equivariant(seed in any::<u64>(), n in 1usize..5, p_blocks in 1usize..4, odd in any::<bool>()) {
            let k = 2 * p_blocks + usize::from(odd);
            let mut rng = substream(seed, 0);
            let rates: Vec<f64> = (0..p_blocks).map(|_| rng.random_range(-2.0..2.0)).collect();
            let spec = RotationSpec::new(rates, k).unwrap();
            let masses: Vec<f64> = (0..n).map(|_| rng.random_range(0.1..3.0)).collect();
            let p = REProblem::new(masses.clone(), spec.clone()).unwrap();
            let cfg = BodySystem::new(masses.clone(), (0..n).map(|_| random_sphere_point(k, &mut rng).unwrap()).collect()).unwrap();
            prop_assume!(cfg.check_nonsingular(1e-6).is_ok());
            let res = re_residual(&p, &cfg).unwrap();
            for (f, q) in res.per_body.iter().zip(cfg.positions()) {
                prop_assert!(f.dot(q.coords()).abs() <= 1e-12 * (1.0 + f.norm()));
            }
            let t = rng.random_range(-10.0..10.0);
            let moved = cfg.transformed(&spec.rotation_at(t)).unwrap();
            let res2 = re_residual(&p, &moved).unwrap();
            prop_assert!((res.norm - res2.norm).abs() <= 1e-12 * (1.0 + res.norm));

            // homogeneity in (m, A²)
            let lambda: f64 = rng.random_range(0.2..5.0);
            let scaled_rates: Vec<f64> = spec.rates().iter().map(|a| a * lambda.sqrt()).collect();
            let scaled = REProblem::new(
                masses.iter().map(|m| m * lambda).collect::<Vec<_>>(),
                RotationSpec::new(scaled_rates, k).unwrap(),
            ).unwrap();
            let res3 = re_residual(&scaled, &cfg).unwrap();
            for (a, b) in res.per_body.iter().zip(&res3.per_body) {
                prop_assert!((a * lambda - b).norm() <= 1e-12 * (1.0 + b.norm()));
            }
        }
    }
}
