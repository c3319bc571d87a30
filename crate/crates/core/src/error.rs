use thiserror::Error;

#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid instance: {0}")]
    InvalidInstance(String),

    #[error("infeasible schedule: job {job} assigned to machine {machine} where it is forbidden")]
    InfeasibleSchedule { job: usize, machine: usize },

    #[error("invalid schedule: {0}")]
    InvalidSchedule(String),

    #[error("brute-force enumeration needs {required} assignments, above the cap of {cap}")]
    EnumerationCap { required: u128, cap: u128 },

    #[error("matrix is not symmetric (|a[{row}][{col}] - a[{col}][{row}]| = {diff:e})")]
    NotSymmetric { row: usize, col: usize, diff: f64 },

    #[error("invalid fractional assignment: {0}")]
    InvalidAssignment(String),

    #[error("instance is not scaled: minimum positive processing time is {min_ptime}, expected 1 (use Instance::normalized)")]
    Unscaled { min_ptime: f64 },

    #[error("invalid rounding instance: {0}")]
    InvalidRoundingInstance(String),

    #[error("pipage step with alpha + beta = 0 at tuple {tuple:?}; all four edges should be floating")]
    DegenerateStep { tuple: [usize; 4] },

    #[error("job subset is not contained in the first {prefix} jobs of the Smith order on machine {machine}")]
    SubsetOutsidePrefix { machine: usize, prefix: usize },

    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    #[error("json: {0}")]
    Json(#[from] serde_json::Error),
}

pub type Result<T> = std::result::Result<T, Error>;
