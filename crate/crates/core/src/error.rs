use thiserror::Error;

#[derive(Debug, Error)]
pub enum Error {
    #[error("dimension mismatch: {0}")]
    Dimension(String),
    #[error("invalid parameter: {0}")]
    InvalidParameter(String),
    #[error("non-finite value at t = {t}: {what}")]
    NonFinite { t: f64, what: String },
    #[error("non-finite state on path {path} at step {step}")]
    NonFiniteState { path: usize, step: usize },
    #[error("time {t} outside [0, {t_final}]")]
    OutOfRange { t: f64, t_final: f64 },
    #[error("normal equations are rank deficient (pivot {pivot:e})")]
    RankDeficient { pivot: f64 },
    #[error("closed loop is not Hurwitz (max real eigenvalue part {max_re:e})")]
    NotHurwitz { max_re: f64 },
    #[error("CFL condition violated: dt * rate = {number:.4} > 1 (dt must be <= {dt_max:e})")]
    Cfl { number: f64, dt_max: f64 },
    #[error("fixed-point iteration did not converge in {iters} iterations (residual {residual:e})")]
    NoConvergence { iters: usize, residual: f64 },
    #[error("population config: {0}")]
    Config(String),
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

pub type Result<T> = std::result::Result<T, Error>;
