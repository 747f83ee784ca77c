//! Curved n-body equations of motion and a projected adaptive integrator.
//!
//! For bodies `q_i` of mass `m_i` on the model space of sign `σ`,
//!
//! ```text
//! q̈_i = Σ_{j≠i} m_j (q_j − σ(q_i⊙q_j) q_i) / (σ − σ(q_i⊙q_j)²)^{3/2} − σ(q̇_i⊙q̇_i) q_i
//! ```
//!
//! The integrator is an embedded Dormand–Prince 5(4) pair. After every
//! accepted step positions are rescaled back onto the manifold and
//! velocities are projected onto the tangent space, and the constraint
//! drift is recorded.

use nalgebra::{DMatrix, DVector};

use crate::error::{Error, Result, SingularityKind};
use crate::geometry::{
    chordal_distance, inner_unchecked, project_coords, RotationSpec, Sigma, SpacePoint,
};
use crate::scalar::{lit, to_f64, Real};

/// Smallest admissible pair denominator `(σ − σ(q_i⊙q_j)²)^{3/2}`.
pub const EPS_SING: f64 = 1e-12;

/// Tangency tolerance `|q_i ⊙ q̇_i|` for phase states.
pub const TANGENCY_TOL: f64 = 1e-10;

/// Masses and positions of `n` bodies on a common model space.
///
/// Coincident or antipodal pairs are representable; the operations that
/// evaluate the pair interaction reject them.
#[derive(Debug, Clone, PartialEq)]
pub struct BodySystem<T: Real> {
    masses: Vec<T>,
    positions: Vec<SpacePoint<T>>,
}

impl<T: Real> BodySystem<T> {
    pub fn new(masses: impl Into<Vec<T>>, positions: Vec<SpacePoint<T>>) -> Result<Self> {
        let masses: Vec<T> = masses.into();
        if masses.is_empty() {
            return Err(Error::InvalidArgument(
                "at least one body is required".into(),
            ));
        }
        if masses.len() != positions.len() {
            return Err(Error::DimensionMismatch {
                expected: masses.len(),
                found: positions.len(),
            });
        }
        if let Some(i) = masses
            .iter()
            .position(|m| !(m.is_finite() && *m > T::zero()))
        {
            return Err(Error::InvalidArgument(format!(
                "mass {i} must be positive and finite"
            )));
        }
        let (k, sigma) = (positions[0].dim(), positions[0].sigma());
        for p in &positions[1..] {
            if p.dim() != k {
                return Err(Error::DimensionMismatch {
                    expected: k,
                    found: p.dim(),
                });
            }
            if p.sigma() != sigma {
                return Err(Error::InvalidArgument(
                    "bodies live in different spaces".into(),
                ));
            }
        }
        Ok(Self { masses, positions })
    }

    /// Builds a system from flat row-major coordinates (`n × k`), projecting
    /// each row onto the model space.
    pub fn from_flat(masses: &[T], coords: &[T], k: usize, sigma: Sigma) -> Result<Self> {
        if coords.len() != masses.len() * k {
            return Err(Error::DimensionMismatch {
                expected: masses.len() * k,
                found: coords.len(),
            });
        }
        let positions = coords
            .chunks(k)
            .map(|row| SpacePoint::project(row.to_vec(), sigma))
            .collect::<Result<Vec<_>>>()?;
        Self::new(masses.to_vec(), positions)
    }

    pub fn n(&self) -> usize {
        self.masses.len()
    }

    pub fn dim(&self) -> usize {
        self.positions[0].dim()
    }

    pub fn sigma(&self) -> Sigma {
        self.positions[0].sigma()
    }

    pub fn masses(&self) -> &[T] {
        &self.masses
    }

    pub fn positions(&self) -> &[SpacePoint<T>] {
        &self.positions
    }

    /// Row-major `n × k` coordinates.
    pub fn flat_coords(&self) -> Vec<T> {
        self.positions
            .iter()
            .flat_map(|p| p.as_slice().iter().copied())
            .collect()
    }

    /// Replaces the positions, keeping masses.
    pub fn with_positions(&self, positions: Vec<SpacePoint<T>>) -> Result<Self> {
        Self::new(self.masses.clone(), positions)
    }

    /// Applies the ambient map `m` to every body.
    pub fn transformed(&self, m: &DMatrix<T>) -> Result<Self> {
        let positions = self
            .positions
            .iter()
            .map(|p| p.transformed(m))
            .collect::<Result<Vec<_>>>()?;
        self.with_positions(positions)
    }

    /// Reorders bodies: body `i` of the result is body `perm[i]` of `self`.
    pub fn permuted(&self, perm: &[usize]) -> Result<Self> {
        if perm.len() != self.n() {
            return Err(Error::DimensionMismatch {
                expected: self.n(),
                found: perm.len(),
            });
        }
        Self::new(
            perm.iter().map(|&j| self.masses[j]).collect::<Vec<_>>(),
            perm.iter().map(|&j| self.positions[j].clone()).collect(),
        )
    }

    /// Smallest pair denominator and the pair attaining it.
    pub fn min_pair_denominator(&self) -> Option<(usize, usize, T)> {
        let coords = self.flat_coords();
        min_pair_denominator(&coords, self.n(), self.dim(), self.sigma())
    }

    /// Fails with a singularity error if any pair denominator is below `eps`.
    pub fn check_nonsingular(&self, eps: T) -> Result<()> {
        let coords = self.flat_coords();
        check_pairs(&coords, self.n(), self.dim(), self.sigma(), eps)
    }
}

/// `(σ − σ s²)^{3/2}` for `s = q_i ⊙ q_j`; zero when the base is not positive.
#[inline]
pub(crate) fn pair_denominator<T: Real>(s: T, sigma: Sigma) -> T {
    let base = sigma.value::<T>() * (T::one() - s * s);
    if base > T::zero() {
        base * base.sqrt()
    } else {
        T::zero()
    }
}

pub(crate) fn min_pair_denominator<T: Real>(
    coords: &[T],
    n: usize,
    k: usize,
    sigma: Sigma,
) -> Option<(usize, usize, T)> {
    let mut best: Option<(usize, usize, T)> = None;
    for i in 0..n {
        for j in i + 1..n {
            let s = inner_unchecked(
                &coords[i * k..(i + 1) * k],
                &coords[j * k..(j + 1) * k],
                sigma,
            );
            let d = pair_denominator(s, sigma);
            if best.is_none_or(|(_, _, b)| d < b) {
                best = Some((i, j, d));
            }
        }
    }
    best
}

fn singularity<T: Real>(i: usize, j: usize, s: T, den: T, sigma: Sigma) -> Error {
    let kind = if sigma == Sigma::Sphere && s < T::zero() {
        SingularityKind::Antipodal
    } else {
        SingularityKind::Collision
    };
    Error::Singularity {
        i,
        j,
        kind,
        denominator: to_f64(den),
    }
}

pub(crate) fn check_pairs<T: Real>(
    coords: &[T],
    n: usize,
    k: usize,
    sigma: Sigma,
    eps: T,
) -> Result<()> {
    for i in 0..n {
        for j in i + 1..n {
            let s = inner_unchecked(
                &coords[i * k..(i + 1) * k],
                &coords[j * k..(j + 1) * k],
                sigma,
            );
            let d = pair_denominator(s, sigma);
            if !(d >= eps) {
                return Err(singularity(i, j, s, d, sigma));
            }
        }
    }
    Ok(())
}

/// Gravitational part of the right-hand side for body `i`, accumulated into
/// `out` (length `k`).
pub(crate) fn pair_force<T: Real>(
    masses: &[T],
    coords: &[T],
    k: usize,
    sigma: Sigma,
    i: usize,
    eps: T,
    out: &mut [T],
) -> Result<()> {
    let s_sign = sigma.value::<T>();
    let qi = &coords[i * k..(i + 1) * k];
    for (j, &mj) in masses.iter().enumerate() {
        if j == i {
            continue;
        }
        let qj = &coords[j * k..(j + 1) * k];
        let s = inner_unchecked(qi, qj, sigma);
        let den = pair_denominator(s, sigma);
        if !(den >= eps) {
            let (a, b) = if i < j { (i, j) } else { (j, i) };
            return Err(singularity(a, b, s, den, sigma));
        }
        let w = mj / den;
        let c = s_sign * s;
        for d in 0..k {
            out[d] += w * (qj[d] - c * qi[d]);
        }
    }
    Ok(())
}

/// Accelerations for flat positions and velocities, written into `out`.
pub(crate) fn acceleration_flat<T: Real>(
    masses: &[T],
    q: &[T],
    v: &[T],
    k: usize,
    sigma: Sigma,
    out: &mut [T],
) -> Result<()> {
    let s_sign = sigma.value::<T>();
    let eps = lit::<T>(EPS_SING);
    for o in out.iter_mut() {
        *o = T::zero();
    }
    for i in 0..masses.len() {
        let range = i * k..(i + 1) * k;
        pair_force(masses, q, k, sigma, i, eps, &mut out[range.clone()])?;
        let vi = &v[range.clone()];
        let speed2 = s_sign * inner_unchecked(vi, vi, sigma);
        for d in range {
            out[d] -= speed2 * q[d];
        }
    }
    Ok(())
}

/// Positions plus velocities.
#[derive(Debug, Clone, PartialEq)]
pub struct PhaseState<T: Real> {
    system: BodySystem<T>,
    velocities: Vec<DVector<T>>,
}

impl<T: Real> PhaseState<T> {
    /// Checks lengths and tangency `|q_i ⊙ q̇_i| ≤ 1e−10`.
    pub fn new(system: BodySystem<T>, velocities: Vec<DVector<T>>) -> Result<Self> {
        check_velocity_shape(&system, &velocities)?;
        let tol = lit::<T>(TANGENCY_TOL);
        for (i, (q, v)) in system.positions().iter().zip(&velocities).enumerate() {
            let dot = inner_unchecked(q.as_slice(), v.as_slice(), system.sigma());
            if !(dot.abs() <= tol) {
                return Err(Error::InvalidArgument(format!(
                    "velocity {i} is not tangent (q⊙v = {:e})",
                    to_f64(dot)
                )));
            }
        }
        Ok(Self { system, velocities })
    }

    /// Projects each velocity onto the tangent space at its body.
    pub fn projected(system: BodySystem<T>, mut velocities: Vec<DVector<T>>) -> Result<Self> {
        check_velocity_shape(&system, &velocities)?;
        let sigma = system.sigma();
        for (q, v) in system.positions().iter().zip(velocities.iter_mut()) {
            tangent_project(q.as_slice(), v.as_mut_slice(), sigma);
        }
        Ok(Self { system, velocities })
    }

    /// All bodies at rest.
    pub fn at_rest(system: BodySystem<T>) -> Self {
        let k = system.dim();
        let velocities = vec![DVector::zeros(k); system.n()];
        Self { system, velocities }
    }

    pub fn system(&self) -> &BodySystem<T> {
        &self.system
    }

    pub fn velocities(&self) -> &[DVector<T>] {
        &self.velocities
    }

    fn flat_velocities(&self) -> Vec<T> {
        self.velocities
            .iter()
            .flat_map(|v| v.as_slice().iter().copied())
            .collect()
    }

    /// Largest `|q_i ⊙ q_i − σ|`.
    pub fn constraint_drift(&self) -> T {
        self.system
            .positions()
            .iter()
            .fold(T::zero(), |m, p| m.max(p.constraint_violation()))
    }
}

fn check_velocity_shape<T: Real>(system: &BodySystem<T>, velocities: &[DVector<T>]) -> Result<()> {
    if velocities.len() != system.n() {
        return Err(Error::DimensionMismatch {
            expected: system.n(),
            found: velocities.len(),
        });
    }
    if let Some(v) = velocities.iter().find(|v| v.len() != system.dim()) {
        return Err(Error::DimensionMismatch {
            expected: system.dim(),
            found: v.len(),
        });
    }
    Ok(())
}

/// `v ← v − σ(q⊙v) q`, exact when `q⊙q = σ`.
fn tangent_project<T: Real>(q: &[T], v: &mut [T], sigma: Sigma) {
    let c = sigma.value::<T>() * inner_unchecked(q, v, sigma);
    for (vd, qd) in v.iter_mut().zip(q) {
        *vd -= c * *qd;
    }
}

/// Right-hand side of the equations of motion.
pub fn acceleration<T: Real>(state: &PhaseState<T>) -> Result<Vec<DVector<T>>> {
    let sys = state.system();
    let (n, k) = (sys.n(), sys.dim());
    let q = sys.flat_coords();
    let v = state.flat_velocities();
    let mut out = vec![T::zero(); n * k];
    acceleration_flat(sys.masses(), &q, &v, k, sys.sigma(), &mut out)?;
    Ok(out.chunks(k).map(DVector::from_column_slice).collect())
}

/// Initial velocities `G·Q_i` of the rigidly rotating motion `T_k(At)Q_i`.
pub fn tangent_velocity<T: Real>(
    config: &BodySystem<T>,
    spec: &RotationSpec<T>,
) -> Result<Vec<DVector<T>>> {
    if spec.dim() != config.dim() {
        return Err(Error::DimensionMismatch {
            expected: config.dim(),
            found: spec.dim(),
        });
    }
    if config.sigma() != Sigma::Sphere {
        return Err(Error::UnsupportedMetric);
    }
    let g = spec.rotation_generator();
    Ok(config.positions().iter().map(|q| &g * q.coords()).collect())
}

/// Minimum chordal distance over all pairs.
pub fn min_pairwise_distance<T: Real>(config: &BodySystem<T>) -> Result<T> {
    if config.n() < 2 {
        return Err(Error::InvalidArgument(
            "minimum distance needs at least two bodies".into(),
        ));
    }
    let ps = config.positions();
    let mut best = T::max_value().unwrap_or_else(T::one);
    for i in 0..ps.len() {
        for j in i + 1..ps.len() {
            best = best.min(chordal_distance(&ps[i], &ps[j])?);
        }
    }
    Ok(best)
}

/// Integrator settings.
#[derive(Debug, Clone, PartialEq)]
pub struct IntegratorOptions<T: Real> {
    /// Local error tolerance (absolute and relative), in `[1e−13, 1e−3]`.
    pub tol: T,
    /// Upper bound on the step; `None` means `t_end / 1000`.
    pub max_step: Option<T>,
    /// Hard cap on the number of attempted steps.
    pub max_attempts: usize,
}

impl<T: Real> Default for IntegratorOptions<T> {
    fn default() -> Self {
        Self {
            tol: lit(1e-9),
            max_step: None,
            max_attempts: 50_000_000,
        }
    }
}

impl<T: Real> IntegratorOptions<T> {
    pub fn with_tol(tol: T) -> Self {
        Self {
            tol,
            ..Self::default()
        }
    }

    /// Caps the step at `period / 1000` when the rotation has a period.
    pub fn for_spec(tol: T, spec: &RotationSpec<T>) -> Self {
        Self {
            tol,
            max_step: spec.period().map(|p| p / lit(1000.0)),
            ..Self::default()
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Sample<T: Real> {
    pub t: T,
    pub state: PhaseState<T>,
}

/// Accepted samples of an integration run plus step diagnostics.
#[derive(Debug, Clone, PartialEq)]
pub struct Trajectory<T: Real> {
    pub samples: Vec<Sample<T>>,
    /// Accepted step sizes; `steps[i]` leads from sample `i` to `i + 1`.
    pub steps: Vec<T>,
    /// Constraint drift per sample after projection.
    pub drift: Vec<T>,
    /// Constraint drift per accepted step before projection.
    pub raw_drift: Vec<T>,
    pub rejected: usize,
}

impl<T: Real> Trajectory<T> {
    fn start(initial: PhaseState<T>) -> Self {
        let d = initial.constraint_drift();
        Self {
            samples: vec![Sample {
                t: T::zero(),
                state: initial,
            }],
            steps: Vec::new(),
            drift: vec![d],
            raw_drift: Vec::new(),
            rejected: 0,
        }
    }

    pub fn final_state(&self) -> &PhaseState<T> {
        &self
            .samples
            .last()
            .expect("trajectory has an initial sample")
            .state
    }

    pub fn final_time(&self) -> T {
        self.samples
            .last()
            .expect("trajectory has an initial sample")
            .t
    }

    pub fn max_drift(&self) -> T {
        self.drift.iter().fold(T::zero(), |m, d| m.max(*d))
    }

    pub fn max_raw_drift(&self) -> T {
        self.raw_drift.iter().fold(T::zero(), |m, d| m.max(*d))
    }
}

/// Integration stopped early; `partial` holds the accepted samples.
#[derive(Debug, Clone)]
pub struct Interrupted<T: Real> {
    pub partial: Trajectory<T>,
    pub cause: Error,
}

impl<T: Real> std::fmt::Display for Interrupted<T> {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        write!(
            f,
            "integration stopped at t = {}: {}",
            self.partial.final_time(),
            self.cause
        )
    }
}

impl<T: Real> std::error::Error for Interrupted<T> {
    fn source(&self) -> Option<&(dyn std::error::Error + 'static)> {
        Some(&self.cause)
    }
}

impl<T: Real> From<Interrupted<T>> for Error {
    fn from(e: Interrupted<T>) -> Self {
        e.cause
    }
}

// Dormand–Prince 5(4) tableau; the system is autonomous so the nodes are unused.
const A: [[f64; 6]; 7] = [
    [0.0; 6],
    [1.0 / 5.0, 0.0, 0.0, 0.0, 0.0, 0.0],
    [3.0 / 40.0, 9.0 / 40.0, 0.0, 0.0, 0.0, 0.0],
    [44.0 / 45.0, -56.0 / 15.0, 32.0 / 9.0, 0.0, 0.0, 0.0],
    [
        19372.0 / 6561.0,
        -25360.0 / 2187.0,
        64448.0 / 6561.0,
        -212.0 / 729.0,
        0.0,
        0.0,
    ],
    [
        9017.0 / 3168.0,
        -355.0 / 33.0,
        46732.0 / 5247.0,
        49.0 / 176.0,
        -5103.0 / 18656.0,
        0.0,
    ],
    [
        35.0 / 384.0,
        0.0,
        500.0 / 1113.0,
        125.0 / 192.0,
        -2187.0 / 6784.0,
        11.0 / 84.0,
    ],
];
const B: [f64; 7] = [
    35.0 / 384.0,
    0.0,
    500.0 / 1113.0,
    125.0 / 192.0,
    -2187.0 / 6784.0,
    11.0 / 84.0,
    0.0,
];
// fifth-order minus embedded fourth-order weights
const E: [f64; 7] = [
    71.0 / 57600.0,
    0.0,
    -71.0 / 16695.0,
    71.0 / 1920.0,
    -17253.0 / 339200.0,
    22.0 / 525.0,
    -1.0 / 40.0,
];

struct Rhs<'a, T: Real> {
    masses: &'a [T],
    k: usize,
    sigma: Sigma,
}

impl<T: Real> Rhs<'_, T> {
    /// `y = [q; v]`, `dy = [v; a(q, v)]`.
    fn eval(&self, y: &[T], dy: &mut [T]) -> Result<()> {
        let half = y.len() / 2;
        let (q, v) = y.split_at(half);
        let (dq, dv) = dy.split_at_mut(half);
        dq.copy_from_slice(v);
        acceleration_flat(self.masses, q, v, self.k, self.sigma, dv)
    }
}

/// Adaptive Dormand–Prince integration with manifold projection.
pub fn integrate<T: Real>(
    initial: &PhaseState<T>,
    t_end: T,
    tol: T,
) -> Result<Trajectory<T>, Interrupted<T>> {
    integrate_with(initial, t_end, &IntegratorOptions::with_tol(tol))
}

pub fn integrate_with<T: Real>(
    initial: &PhaseState<T>,
    t_end: T,
    opts: &IntegratorOptions<T>,
) -> Result<Trajectory<T>, Interrupted<T>> {
    let mut traj = Trajectory::start(initial.clone());
    let fail = |traj: Trajectory<T>, cause: Error| Interrupted {
        partial: traj,
        cause,
    };

    if !(opts.tol >= lit(1e-13) && opts.tol <= lit(1e-3)) {
        let cause = Error::InvalidArgument(format!(
            "tolerance {} outside [1e-13, 1e-3]",
            to_f64(opts.tol)
        ));
        return Err(fail(traj, cause));
    }
    if !(t_end > T::zero() && t_end.is_finite()) {
        let cause = Error::InvalidArgument("t_end must be positive and finite".into());
        return Err(fail(traj, cause));
    }
    let max_step = opts.max_step.unwrap_or(t_end / lit(1000.0)).min(t_end);
    if !(max_step > T::zero()) {
        let cause = Error::InvalidArgument("max_step must be positive".into());
        return Err(fail(traj, cause));
    }

    let sys = initial.system();
    let (n, k, sigma) = (sys.n(), sys.dim(), sys.sigma());
    let masses = sys.masses().to_vec();
    let rhs = Rhs {
        masses: &masses,
        k,
        sigma,
    };
    let dim = 2 * n * k;
    let mut y: Vec<T> = sys.flat_coords();
    y.extend(initial.flat_velocities());

    if let Err(cause) = check_pairs(&y[..n * k], n, k, sigma, lit(EPS_SING)) {
        return Err(fail(traj, cause));
    }

    let mut stages = vec![vec![T::zero(); dim]; 7];
    let mut tmp = vec![T::zero(); dim];
    let mut y_new = vec![T::zero(); dim];
    let mut t = T::zero();
    let mut h = max_step;
    let safety = lit::<T>(0.9);
    let fifth = lit::<T>(0.2);
    let (grow, shrink) = (lit::<T>(5.0), lit::<T>(0.2));
    let mut attempts = 0usize;

    while t < t_end {
        attempts += 1;
        if attempts > opts.max_attempts {
            let cause = Error::StepUnderflow {
                t: to_f64(t),
                h: to_f64(h),
            };
            return Err(fail(traj, cause));
        }
        let last = t + h >= t_end;
        if last {
            h = t_end - t;
        }
        let floor = T::EPSILON * lit(16.0) * t.abs().max(T::one());
        if h < floor {
            let cause = Error::StepUnderflow {
                t: to_f64(t),
                h: to_f64(h),
            };
            return Err(fail(traj, cause));
        }

        if let Err(cause) = rhs.eval(&y, &mut stages[0]) {
            return Err(fail(traj, cause));
        }
        for s in 1..7 {
            for d in 0..dim {
                let mut acc = T::zero();
                for (r, a) in A[s][..s].iter().enumerate() {
                    if *a != 0.0 {
                        acc += lit::<T>(*a) * stages[r][d];
                    }
                }
                tmp[d] = y[d] + h * acc;
            }
            if let Err(cause) = rhs.eval(&tmp, &mut stages[s]) {
                return Err(fail(traj, cause));
            }
        }

        let mut err = T::zero();
        for d in 0..dim {
            let mut inc = T::zero();
            let mut e = T::zero();
            for s in 0..7 {
                inc += lit::<T>(B[s]) * stages[s][d];
                e += lit::<T>(E[s]) * stages[s][d];
            }
            y_new[d] = y[d] + h * inc;
            let scale = opts.tol * (T::one() + y[d].abs().max(y_new[d].abs()));
            err = err.max((h * e).abs() / scale);
        }

        if !err.is_finite() {
            h *= shrink;
            traj.rejected += 1;
            continue;
        }
        if err <= T::one() {
            t = if last { t_end } else { t + h };
            let (q, v) = y_new.split_at_mut(n * k);
            let mut raw = T::zero();
            for i in 0..n {
                let qi = &mut q[i * k..(i + 1) * k];
                raw = raw.max((inner_unchecked(qi, qi, sigma) - sigma.value::<T>()).abs());
                if project_coords(qi, sigma).is_none() {
                    let cause = Error::OffManifold {
                        violation: to_f64(raw),
                    };
                    return Err(fail(traj, cause));
                }
                tangent_project(qi, &mut v[i * k..(i + 1) * k], sigma);
            }
            y.copy_from_slice(&y_new);
            let state = unflatten(&masses, &y, n, k, sigma);
            traj.drift.push(state.constraint_drift());
            traj.raw_drift.push(raw);
            traj.steps.push(h);
            traj.samples.push(Sample { t, state });

            let factor = if err > T::zero() {
                (safety * err.powf(-fifth)).min(grow)
            } else {
                grow
            };
            h = (h * factor).min(max_step);
        } else {
            traj.rejected += 1;
            h *= (safety * err.powf(-fifth)).max(shrink);
        }
    }
    Ok(traj)
}

fn unflatten<T: Real>(masses: &[T], y: &[T], n: usize, k: usize, sigma: Sigma) -> PhaseState<T> {
    let positions = (0..n)
        .map(|i| {
            SpacePoint::from_trusted(DVector::from_column_slice(&y[i * k..(i + 1) * k]), sigma)
        })
        .collect();
    let velocities = (0..n)
        .map(|i| DVector::from_column_slice(&y[n * k + i * k..n * k + (i + 1) * k]))
        .collect();
    PhaseState {
        system: BodySystem {
            masses: masses.to_vec(),
            positions,
        },
        velocities,
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::geometry::{random_sphere_point, substream};
    use approx::assert_abs_diff_eq;
    use proptest::prelude::*;
    use std::f64::consts::{FRAC_1_SQRT_2, PI, SQRT_2};

    fn pt(c: &[f64]) -> SpacePoint<f64> {
        SpacePoint::new(c.to_vec(), Sigma::Sphere).unwrap()
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

    #[test]
    fn system_validation() {
        assert!(BodySystem::<f64>::new(vec![], vec![]).is_err());
        assert!(BodySystem::new(vec![1.0, -1.0], vec![pt(&[1.0, 0.0]), pt(&[0.0, 1.0])]).is_err());
        assert!(
            BodySystem::new(vec![1.0, 1.0], vec![pt(&[1.0, 0.0]), pt(&[0.0, 1.0, 0.0])]).is_err()
        );
        assert!(BodySystem::new(vec![1.0], vec![pt(&[1.0, 0.0]), pt(&[0.0, 1.0])]).is_err());
    }

    #[test]
    fn single_body_centripetal() {
        let a = 1.3;
        let sys = BodySystem::new(vec![2.0], vec![pt(&[1.0, 0.0, 0.0])]).unwrap();
        let state = PhaseState::new(sys, vec![DVector::from_vec(vec![0.0, a, 0.0])]).unwrap();
        let acc = acceleration(&state).unwrap();
        assert_abs_diff_eq!(
            acc[0],
            DVector::from_vec(vec![-a * a, 0.0, 0.0]),
            epsilon = 1e-15
        );
    }

    #[test]
    fn two_body_equilibrium_acceleration() {
        let sys = two_body();
        let spec = RotationSpec::new(vec![SQRT_2], 3).unwrap();
        let v = tangent_velocity(&sys, &spec).unwrap();
        let state = PhaseState::new(sys.clone(), v).unwrap();
        let acc = acceleration(&state).unwrap();
        let a = spec.rate_matrix();
        for (ai, q) in acc.iter().zip(sys.positions()) {
            let expected = -(&a * &a) * q.coords();
            assert_abs_diff_eq!(*ai, expected, epsilon = 1e-14);
        }
        assert_abs_diff_eq!(
            acc[0],
            DVector::from_vec(vec![-SQRT_2, 0.0, 0.0]),
            epsilon = 1e-14
        );
    }

    #[test]
    fn label_swap_permutes_accelerations() {
        let mut rng = substream(11, 0);
        let sys = BodySystem::new(
            vec![1.0, 1.0, 2.5],
            (0..3)
                .map(|_| random_sphere_point(4, &mut rng).unwrap())
                .collect(),
        )
        .unwrap();
        let vel: Vec<DVector<f64>> = (0..3)
            .map(|_| {
                random_sphere_point::<f64, _>(4, &mut rng)
                    .unwrap()
                    .into_coords()
            })
            .collect();
        let state = PhaseState::projected(sys.clone(), vel.clone()).unwrap();
        let swapped = PhaseState::projected(
            sys.permuted(&[1, 0, 2]).unwrap(),
            vec![vel[1].clone(), vel[0].clone(), vel[2].clone()],
        )
        .unwrap();
        let a = acceleration(&state).unwrap();
        let b = acceleration(&swapped).unwrap();
        assert_abs_diff_eq!(a[0], b[1], epsilon = 1e-14);
        assert_abs_diff_eq!(a[1], b[0], epsilon = 1e-14);
        assert_abs_diff_eq!(a[2], b[2], epsilon = 1e-14);
    }

    #[test]
    fn singular_pairs_are_reported() {
        let sys = BodySystem::new(
            vec![1.0, 1.0],
            vec![pt(&[1.0, 0.0, 0.0]), pt(&[1.0, 0.0, 0.0])],
        )
        .unwrap();
        match acceleration(&PhaseState::at_rest(sys)) {
            Err(Error::Singularity {
                i: 0,
                j: 1,
                kind: SingularityKind::Collision,
                ..
            }) => {}
            other => panic!("unexpected {other:?}"),
        }
        let sys = BodySystem::new(
            vec![1.0, 1.0],
            vec![pt(&[1.0, 0.0, 0.0]), pt(&[-1.0, 0.0, 0.0])],
        )
        .unwrap();
        match acceleration(&PhaseState::at_rest(sys)) {
            Err(Error::Singularity {
                kind: SingularityKind::Antipodal,
                ..
            }) => {}
            other => panic!("unexpected {other:?}"),
        }
    }

    #[test]
    fn tangent_velocity_examples() {
        let a = 0.6;
        let spec = RotationSpec::new(vec![a], 3).unwrap();
        let sys = BodySystem::new(
            vec![1.0, 1.0],
            vec![pt(&[1.0, 0.0, 0.0]), pt(&[0.0, 0.0, 1.0])],
        )
        .unwrap();
        let v = tangent_velocity(&sys, &spec).unwrap();
        assert_eq!(v[0], DVector::from_vec(vec![0.0, a, 0.0]));
        assert_eq!(v[1], DVector::zeros(3));
        let zero = RotationSpec::new(vec![0.0], 3).unwrap();
        assert!(tangent_velocity(&sys, &zero)
            .unwrap()
            .iter()
            .all(|v| v.norm() == 0.0));
        let wrong = RotationSpec::new(vec![1.0, 1.0], 4).unwrap();
        assert!(tangent_velocity(&sys, &wrong).is_err());
    }

    #[test]
    fn min_distance_examples() {
        let sys = BodySystem::new(
            vec![1.0; 3],
            vec![
                pt(&[1.0, 0.0, 0.0]),
                pt(&[0.0, 1.0, 0.0]),
                pt(&[-1.0, 0.0, 0.0]),
            ],
        )
        .unwrap();
        assert_abs_diff_eq!(
            min_pairwise_distance(&sys).unwrap(),
            SQRT_2,
            epsilon = 1e-15
        );
        let sys = BodySystem::new(
            vec![1.0; 2],
            vec![pt(&[1.0, 0.0, 0.0]), pt(&[1.0, 0.0, 0.0])],
        )
        .unwrap();
        assert_eq!(min_pairwise_distance(&sys).unwrap(), 0.0);
        assert_abs_diff_eq!(
            min_pairwise_distance(&two_body()).unwrap(),
            SQRT_2,
            epsilon = 1e-15
        );
        let one = BodySystem::new(vec![1.0], vec![pt(&[1.0, 0.0, 0.0])]).unwrap();
        assert!(min_pairwise_distance(&one).is_err());
    }

    #[test]
    fn great_circle_returns() {
        let sys = BodySystem::new(vec![1.0], vec![pt(&[1.0, 0.0, 0.0])]).unwrap();
        let state = PhaseState::new(sys, vec![DVector::from_vec(vec![0.0, 1.0, 0.0])]).unwrap();
        let traj = integrate(&state, 2.0 * PI, 1e-9).unwrap();
        assert_eq!(traj.final_time(), 2.0 * PI);
        // oracle: q(t) = (cos t, sin t, 0)
        for s in &traj.samples {
            let q = s.state.system().positions()[0].coords();
            let exact = DVector::from_vec(vec![s.t.cos(), s.t.sin(), 0.0]);
            assert!((q - exact).norm() <= 1e-6);
        }
        let end = traj.final_state().system().positions()[0].coords().clone();
        assert!((end - DVector::from_vec(vec![1.0, 0.0, 0.0])).norm() <= 1e-6);
        assert!(traj.max_drift() <= 1e-9);
        assert!(traj.samples.windows(2).all(|w| w[0].t < w[1].t));
    }

    #[test]
    fn resting_body_stays_put() {
        let sys = BodySystem::new(vec![1.0], vec![pt(&[0.0, 0.6, 0.8])]).unwrap();
        let state = PhaseState::at_rest(sys);
        let traj = integrate(&state, 3.0, 1e-9).unwrap();
        assert!(traj.max_drift() <= 1e-12);
        assert_eq!(traj.final_state(), &state);
    }

    #[test]
    fn two_body_orbit_is_periodic() {
        let sys = two_body();
        let spec = RotationSpec::new(vec![SQRT_2], 3).unwrap();
        let v = tangent_velocity(&sys, &spec).unwrap();
        let state = PhaseState::new(sys.clone(), v).unwrap();
        let period = 2.0 * PI / SQRT_2;
        let traj =
            integrate_with(&state, period, &IntegratorOptions::for_spec(1e-9, &spec)).unwrap();
        for (q, q0) in traj
            .final_state()
            .system()
            .positions()
            .iter()
            .zip(sys.positions())
        {
            assert!((q.coords() - q0.coords()).norm() <= 1e-6);
        }
        assert!(traj.max_drift() <= 1e-9);
    }

    #[test]
    fn collision_interrupts_with_partial_trajectory() {
        // two bodies at rest fall into each other
        let sys = BodySystem::new(
            vec![1.0, 1.0],
            vec![pt(&[1.0, 0.0, 0.0]), pt(&[0.8, 0.6, 0.0])],
        )
        .unwrap();
        let err = integrate(&PhaseState::at_rest(sys), 10.0, 1e-9).unwrap_err();
        assert!(matches!(
            err.cause,
            Error::Singularity { i: 0, j: 1, .. } | Error::StepUnderflow { .. }
        ));
        assert!(err.partial.samples.len() > 1);
        assert!(err.partial.final_time() < 10.0);
    }

    #[test]
    fn rejects_bad_tolerance() {
        let sys = BodySystem::new(vec![1.0], vec![pt(&[1.0, 0.0])]).unwrap();
        assert!(integrate(&PhaseState::at_rest(sys.clone()), 1.0, 1e-2).is_err());
        assert!(integrate(&PhaseState::at_rest(sys), 1.0, 1e-14).is_err());
    }

    #[test]
    fn hyperbolic_orbit_stays_on_sheet() {
        let x = 0.5f64;
        let q1 = SpacePoint::new(vec![x, 0.0, (1.0 + x * x).sqrt()], Sigma::Hyperboloid).unwrap();
        let q2 = SpacePoint::new(vec![-x, 0.0, (1.0 + x * x).sqrt()], Sigma::Hyperboloid).unwrap();
        let sys = BodySystem::new(vec![1.0, 1.0], vec![q1, q2]).unwrap();
        let v = vec![
            DVector::from_vec(vec![0.0, 0.8, 0.0]),
            DVector::from_vec(vec![0.0, -0.8, 0.0]),
        ];
        let state = PhaseState::new(sys, v).unwrap();
        let traj = integrate(&state, 2.0, 1e-10).unwrap();
        assert!(traj.max_drift() <= 1e-9);
        for s in &traj.samples {
            for q in s.state.system().positions() {
                assert!(q.as_slice()[2] > 0.0);
            }
        }
    }

    #[test]
    fn hyperbolic_constraint_identity() {
        let x = 0.3f64;
        let q = SpacePoint::new(vec![x, 0.0, (1.0 + x * x).sqrt()], Sigma::Hyperboloid).unwrap();
        let r =
            SpacePoint::new(vec![0.0, -0.7, (1.0 + 0.49f64).sqrt()], Sigma::Hyperboloid).unwrap();
        let sys = BodySystem::new(vec![1.0, 3.0], vec![q, r]).unwrap();
        let state =
            PhaseState::projected(sys, vec![DVector::from_vec(vec![0.1, 0.4, 0.2]); 2]).unwrap();
        let acc = acceleration(&state).unwrap();
        for ((a, q), v) in acc
            .iter()
            .zip(state.system().positions())
            .zip(state.velocities())
        {
            let lhs = inner_unchecked(q.as_slice(), a.as_slice(), Sigma::Hyperboloid)
                + inner_unchecked(v.as_slice(), v.as_slice(), Sigma::Hyperboloid);
            assert!(lhs.abs() <= 1e-10);
        }
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(64))]

        #[test]
        fn constraint_second_derivative(seed in any::<u64>(), n in 1usize..5, k in 2usize..7) {
            let mut rng = substream(seed, 1);
            let positions: Vec<SpacePoint<f64>> =
                (0..n).map(|_| random_sphere_point(k, &mut rng).unwrap()).collect();
            let sys = BodySystem::new(vec![1.0; n], positions).unwrap();
            prop_assume!(sys.check_nonsingular(1e-6).is_ok());
            let vel = (0..n)
                .map(|_| random_sphere_point::<f64, _>(k, &mut rng).unwrap().into_coords())
                .collect();
            let state = PhaseState::projected(sys, vel).unwrap();
            let acc = acceleration(&state).unwrap();
            for ((a, q), v) in acc.iter().zip(state.system().positions()).zip(state.velocities()) {
                let lhs = q.coords().dot(a) + v.dot(v);
                prop_assert!(lhs.abs() <= 1e-10 * (1.0 + a.norm()));
            }
        }
    }
}
