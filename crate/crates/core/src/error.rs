use alloc::string::String;

/// Errors raised by scene construction, channel assembly and the solvers.
#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum Error {
    #[error("invalid scene: {0}")]
    InvalidScene(String),
    #[error("zero-length link: {0}")]
    DegenerateLink(String),
    #[error("dimension mismatch: {0}")]
    Dimension(String),
    #[error("invalid parameter: {0}")]
    InvalidParameter(String),
    #[error("infeasible power budget: bias power {bias_power} exceeds total power {p_total}")]
    InfeasibleBudget { bias_power: f64, p_total: f64 },
    #[error("detector system is singular (zero noise with rank-deficient HW)")]
    SingularDetector,
    #[error("channel has rank {rank}, fewer than the {n_s} requested streams")]
    RankDeficient { rank: usize, n_s: usize },
    #[error("no signal power left for a zero-forcing design")]
    ZeroSignalBudget,
    #[error("LED {led} emits negative intensity {value}")]
    NegativeIntensity { led: usize, value: f64 },
}

pub type Result<T> = core::result::Result<T, Error>;
