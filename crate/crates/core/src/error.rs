use alloc::string::String;

pub type Result<T, E = Error> = core::result::Result<T, E>;

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum Error {
    #[error("expected {expected} {what}, got {got}")]
    CountMismatch {
        what: &'static str,
        expected: usize,
        got: usize,
    },
    #[error("rotation of joint {joint} is not orthonormal (deviation {deviation:.3e})")]
    NotOrthonormal { joint: usize, deviation: f64 },
    #[error("index {index} out of range for {what} of length {len}")]
    IndexOutOfRange {
        what: &'static str,
        index: usize,
        len: usize,
    },
    #[error("face {face} is degenerate (area {area:.3e})")]
    DegenerateFace { face: usize, area: f64 },
    #[error("invalid input: {0}")]
    Invalid(String),
    #[error("point is behind the camera (z = {z:.3e})")]
    BehindCamera { z: f64 },
    #[error("degenerate configuration: {0}")]
    Degenerate(String),
    #[error("ray is parallel to the target height plane")]
    ParallelRay,
    #[error("no visible joints")]
    NoVisibleJoints,
    #[error("line mask is empty, no gradient signal for refinement")]
    EmptyMask,
    #[error("non-finite value in {0}")]
    NonFinite(&'static str),
    #[error("optimizer diverged: {0}")]
    Diverged(String),
    #[error("voxelization produced no interior cells")]
    EmptyVoxelization,
    #[error("bone {0} lies outside the voxelized volume")]
    BoneOutsideVolume(usize),
    #[error("garment mesh is empty")]
    EmptyGarment,
    #[error("point set is empty")]
    EmptyPointSet,
}

impl Error {
    /// Errors caused by a numerical breakdown rather than by malformed input.
    pub fn is_numerical(&self) -> bool {
        matches!(
            self,
            Error::NonFinite(_) | Error::Diverged(_) | Error::ParallelRay | Error::BehindCamera { .. }
        )
    }
}
