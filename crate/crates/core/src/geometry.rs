//! Points on the constant-curvature model spaces and the block rotation
//! family acting on them.
//!
//! The model space of curvature sign `σ` in `ℝ^k` is
//! `{x : x₁² + … + x_{k−1}² + σ·x_k² = σ}`: the unit sphere for `σ = +1`
//! and the upper sheet of the hyperboloid for `σ = −1`.

use nalgebra::{DMatrix, DVector};
use rand::Rng;
use rand_chacha::rand_core::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;

use crate::error::{Error, Result};
use crate::scalar::{lit, to_f64, Real};

/// Violation of the manifold constraint accepted verbatim at construction.
pub const CONSTRAINT_TOL: f64 = 1e-12;

/// Violations below this are repaired by renormalizing; larger ones are rejected.
pub const RENORMALIZE_LIMIT: f64 = 1e-6;

/// Curvature sign of the model space.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Sigma {
    /// `σ = +1`, the unit sphere.
    Sphere,
    /// `σ = −1`, the upper hyperboloid sheet.
    Hyperboloid,
}

impl Sigma {
    pub fn from_sign(sign: i32) -> Result<Self> {
        match sign {
            1 => Ok(Sigma::Sphere),
            -1 => Ok(Sigma::Hyperboloid),
            other => Err(Error::InvalidArgument(format!(
                "sigma must be +1 or -1, got {other}"
            ))),
        }
    }

    pub fn sign(self) -> i32 {
        match self {
            Sigma::Sphere => 1,
            Sigma::Hyperboloid => -1,
        }
    }

    pub fn value<T: Real>(self) -> T {
        match self {
            Sigma::Sphere => T::one(),
            Sigma::Hyperboloid => -T::one(),
        }
    }
}

/// `x₁y₁ + … + x_{k−1}y_{k−1} + σ·x_k y_k`, without length checks.
#[inline]
pub(crate) fn inner_unchecked<T: Real>(x: &[T], y: &[T], sigma: Sigma) -> T {
    let k = x.len();
    let mut acc = T::zero();
    for i in 0..k - 1 {
        acc += x[i] * y[i];
    }
    acc + sigma.value::<T>() * x[k - 1] * y[k - 1]
}

/// The σ-inner product of two ambient vectors.
pub fn sigma_inner<T: Real>(x: &[T], y: &[T], sigma: Sigma) -> Result<T> {
    if x.len() != y.len() {
        return Err(Error::DimensionMismatch {
            expected: x.len(),
            found: y.len(),
        });
    }
    if x.len() < 2 {
        return Err(Error::InvalidArgument(format!(
            "ambient dimension must be at least 2, got {}",
            x.len()
        )));
    }
    Ok(inner_unchecked(x, y, sigma))
}

/// Scales `x` onto the model space. Returns `None` when no positive
/// rescaling lands on it (wrong sign of `x ⊙ x`, or the lower sheet).
pub(crate) fn project_coords<T: Real>(x: &mut [T], sigma: Sigma) -> Option<()> {
    let q = inner_unchecked(x, x, sigma);
    let s = sigma.value::<T>();
    // x ⊙ x must have the sign of σ
    if !(q * s > T::zero()) {
        return None;
    }
    if sigma == Sigma::Hyperboloid && !(x[x.len() - 1] > T::zero()) {
        return None;
    }
    let scale = (q * s).sqrt().recip();
    for c in x.iter_mut() {
        *c *= scale;
    }
    Some(())
}

/// A point of the model space `𝕄_σ^{k−1} ⊂ ℝ^k`.
#[derive(Debug, Clone, PartialEq)]
pub struct SpacePoint<T: Real> {
    coords: DVector<T>,
    sigma: Sigma,
}

impl<T: Real> SpacePoint<T> {
    /// Validates `coords` against the manifold constraint. Violations up to
    /// [`RENORMALIZE_LIMIT`] are repaired by rescaling.
    pub fn new(coords: impl Into<Vec<T>>, sigma: Sigma) -> Result<Self> {
        let mut coords: Vec<T> = coords.into();
        let k = coords.len();
        if k < 2 {
            return Err(Error::InvalidArgument(format!(
                "ambient dimension must be at least 2, got {k}"
            )));
        }
        if coords.iter().any(|c| !c.is_finite()) {
            return Err(Error::InvalidArgument("non-finite coordinate".into()));
        }
        if sigma == Sigma::Hyperboloid && !(coords[k - 1] > T::zero()) {
            return Err(Error::InvalidArgument(
                "hyperboloid points must lie on the upper sheet (x_k > 0)".into(),
            ));
        }
        let s = sigma.value::<T>();
        let violation = (inner_unchecked(&coords, &coords, sigma) - s).abs();
        if violation > lit(RENORMALIZE_LIMIT) {
            return Err(Error::OffManifold {
                violation: to_f64(violation),
            });
        }
        if violation > lit(CONSTRAINT_TOL) {
            project_coords(&mut coords, sigma).ok_or(Error::OffManifold {
                violation: to_f64(violation),
            })?;
        }
        Ok(Self {
            coords: DVector::from_vec(coords),
            sigma,
        })
    }

    /// Radially projects an arbitrary nonzero vector onto the model space.
    pub fn project(coords: impl Into<Vec<T>>, sigma: Sigma) -> Result<Self> {
        let mut coords: Vec<T> = coords.into();
        if coords.len() < 2 {
            return Err(Error::InvalidArgument(format!(
                "ambient dimension must be at least 2, got {}",
                coords.len()
            )));
        }
        project_coords(&mut coords, sigma).ok_or_else(|| {
            Error::InvalidArgument("vector cannot be projected onto the model space".into())
        })?;
        Ok(Self {
            coords: DVector::from_vec(coords),
            sigma,
        })
    }

    /// The ambient basis vector `e_index`; only valid on the sphere, or for
    /// the last axis on the hyperboloid.
    pub fn basis(k: usize, index: usize, sigma: Sigma) -> Result<Self> {
        if index >= k {
            return Err(Error::InvalidArgument(format!(
                "basis index {index} out of range for dimension {k}"
            )));
        }
        let mut v = vec![T::zero(); k];
        v[index] = T::one();
        Self::new(v, sigma)
    }

    pub(crate) fn from_trusted(coords: DVector<T>, sigma: Sigma) -> Self {
        Self { coords, sigma }
    }

    pub fn dim(&self) -> usize {
        self.coords.len()
    }

    pub fn sigma(&self) -> Sigma {
        self.sigma
    }

    pub fn coords(&self) -> &DVector<T> {
        &self.coords
    }

    pub fn as_slice(&self) -> &[T] {
        self.coords.as_slice()
    }

    pub fn into_coords(self) -> DVector<T> {
        self.coords
    }

    /// `|x ⊙ x − σ|`.
    pub fn constraint_violation(&self) -> T {
        (inner_unchecked(self.as_slice(), self.as_slice(), self.sigma) - self.sigma.value::<T>())
            .abs()
    }

    /// σ-inner product with another point of the same space.
    pub fn inner(&self, other: &Self) -> Result<T> {
        if self.sigma != other.sigma {
            return Err(Error::InvalidArgument(
                "points from different spaces".into(),
            ));
        }
        sigma_inner(self.as_slice(), other.as_slice(), self.sigma)
    }

    /// Applies an ambient linear map that preserves the space, e.g. a
    /// rotation commuting with the curvature form.
    pub fn transformed(&self, m: &DMatrix<T>) -> Result<Self> {
        if m.nrows() != self.dim() || m.ncols() != self.dim() {
            return Err(Error::DimensionMismatch {
                expected: self.dim(),
                found: m.nrows(),
            });
        }
        Self::new((m * &self.coords).as_slice().to_vec(), self.sigma)
    }
}

/// Ambient Euclidean distance between two sphere points.
pub fn chordal_distance<T: Real>(x: &SpacePoint<T>, y: &SpacePoint<T>) -> Result<T> {
    if x.sigma() != Sigma::Sphere || y.sigma() != Sigma::Sphere {
        return Err(Error::UnsupportedMetric);
    }
    if x.dim() != y.dim() {
        return Err(Error::DimensionMismatch {
            expected: x.dim(),
            found: y.dim(),
        });
    }
    Ok((x.coords() - y.coords()).norm())
}

/// Great-circle distance `arccos⟨x, y⟩`, for reporting.
pub fn geodesic_distance<T: Real>(x: &SpacePoint<T>, y: &SpacePoint<T>) -> Result<T> {
    if x.sigma() != Sigma::Sphere || y.sigma() != Sigma::Sphere {
        return Err(Error::UnsupportedMetric);
    }
    let c = x.inner(y)?;
    Ok(c.max(-T::one()).min(T::one()).acos())
}

/// Deterministic random stream `index` derived from `seed`.
pub fn substream(seed: u64, index: u64) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(index);
    rng
}

/// Uniform point on `𝕊^{k−1}` from normalized standard normal draws.
pub fn random_sphere_point<T: Real, R: Rng + ?Sized>(
    k: usize,
    rng: &mut R,
) -> Result<SpacePoint<T>> {
    if k < 2 {
        return Err(Error::InvalidArgument(format!(
            "ambient dimension must be at least 2, got {k}"
        )));
    }
    loop {
        let draw: Vec<f64> = (0..k).map(|_| rng.sample(StandardNormal)).collect();
        let norm = draw.iter().map(|x| x * x).sum::<f64>().sqrt();
        if norm > 1e-8 {
            let coords: Vec<T> = draw.iter().map(|x| lit(x / norm)).collect();
            return SpacePoint::project(coords, Sigma::Sphere);
        }
    }
}

/// Angular rates `A = (A₁, …, A_p)` of the block rotation family acting on
/// `ℝ^k`, `k ∈ {2p, 2p+1}`.
#[derive(Debug, Clone, PartialEq)]
pub struct RotationSpec<T: Real> {
    rates: Vec<T>,
    dim: usize,
}

impl<T: Real> RotationSpec<T> {
    pub fn new(rates: impl Into<Vec<T>>, dim: usize) -> Result<Self> {
        let rates: Vec<T> = rates.into();
        let p = rates.len();
        if p == 0 {
            return Err(Error::InvalidArgument(
                "at least one rate is required".into(),
            ));
        }
        if dim != 2 * p && dim != 2 * p + 1 {
            return Err(Error::InvalidArgument(format!(
                "{p} rates need dimension {} or {}, got {dim}",
                2 * p,
                2 * p + 1
            )));
        }
        if rates.iter().any(|r| !r.is_finite()) {
            return Err(Error::InvalidArgument("non-finite rate".into()));
        }
        Ok(Self { rates, dim })
    }

    pub fn rates(&self) -> &[T] {
        &self.rates
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    /// Number of 2×2 blocks.
    pub fn blocks(&self) -> usize {
        self.rates.len()
    }

    pub fn has_fixed_axis(&self) -> bool {
        self.dim % 2 == 1
    }

    pub fn max_abs_rate(&self) -> T {
        self.rates.iter().fold(T::zero(), |m, r| m.max(r.abs()))
    }

    /// `2π / max|A_l|`, or `None` when every rate vanishes.
    pub fn period(&self) -> Option<T> {
        let w = self.max_abs_rate();
        (w > T::zero()).then(|| T::two_pi() / w)
    }

    /// The block-diagonal rotation `T_k(At)`.
    pub fn rotation_at(&self, t: T) -> DMatrix<T> {
        let mut m = DMatrix::zeros(self.dim, self.dim);
        for (l, &a) in self.rates.iter().enumerate() {
            let (s, c) = (a * t).sin_cos();
            let i = 2 * l;
            m[(i, i)] = c;
            m[(i, i + 1)] = -s;
            m[(i + 1, i)] = s;
            m[(i + 1, i + 1)] = c;
        }
        if self.has_fixed_axis() {
            m[(self.dim - 1, self.dim - 1)] = T::one();
        }
        m
    }

    /// `diag(A₁, A₁, …, A_p, A_p[, 0])`.
    pub fn rate_matrix(&self) -> DMatrix<T> {
        DMatrix::from_diagonal(&self.rate_diagonal())
    }

    /// Diagonal of [`rate_matrix`](Self::rate_matrix).
    pub fn rate_diagonal(&self) -> DVector<T> {
        let mut d = DVector::zeros(self.dim);
        for (l, &a) in self.rates.iter().enumerate() {
            d[2 * l] = a;
            d[2 * l + 1] = a;
        }
        d
    }

    /// Generator `G` with `d/dt T_k(At) = G·T_k(At)`; block-diagonal with
    /// blocks `A_l·[[0, −1], [1, 0]]`.
    pub fn rotation_generator(&self) -> DMatrix<T> {
        let mut g = DMatrix::zeros(self.dim, self.dim);
        for (l, &a) in self.rates.iter().enumerate() {
            let i = 2 * l;
            g[(i, i + 1)] = -a;
            g[(i + 1, i)] = a;
        }
        g
    }

    /// Coordinate groups on which `rate_matrix` is a constant multiple of the
    /// identity. Zero-rate blocks share a group with the fixed axis. Groups
    /// are ordered by their first coordinate.
    pub fn eigenspaces(&self) -> Vec<Vec<usize>> {
        let diag = self.rate_diagonal();
        let scale = self.max_abs_rate().max(T::one());
        let tol = lit::<T>(1e-12) * scale;
        let mut groups: Vec<(T, Vec<usize>)> = Vec::new();
        for i in 0..self.dim {
            let v = diag[i];
            match groups.iter_mut().find(|(g, _)| (*g - v).abs() <= tol) {
                Some((_, idx)) => idx.push(i),
                None => groups.push((v, vec![i])),
            }
        }
        groups.into_iter().map(|(_, idx)| idx).collect()
    }
}
