use thiserror::Error;

/// Which singularity of the pair interaction was hit.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum SingularityKind {
    /// The two bodies coincide.
    Collision,
    /// The two bodies are antipodal.
    Antipodal,
}

impl std::fmt::Display for SingularityKind {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            SingularityKind::Collision => f.write_str("collision"),
            SingularityKind::Antipodal => f.write_str("antipodal"),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Error)]
pub enum Error {
    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    #[error("dimension mismatch: expected {expected}, found {found}")]
    DimensionMismatch { expected: usize, found: usize },

    #[error("point is off the manifold (constraint violation {violation:e})")]
    OffManifold { violation: f64 },

    #[error("{kind} singularity between bodies {i} and {j} (denominator {denominator:e})")]
    Singularity {
        i: usize,
        j: usize,
        kind: SingularityKind,
        denominator: f64,
    },

    #[error("chordal distance is only defined on the sphere")]
    UnsupportedMetric,

    #[error("step size underflow at t = {t} (h = {h:e})")]
    StepUnderflow { t: f64, h: f64 },
}

pub type Result<T, E = Error> = std::result::Result<T, E>;
