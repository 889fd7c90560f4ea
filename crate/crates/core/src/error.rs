use thiserror::Error;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Clone, Error, PartialEq)]
pub enum Error {
    #[error("dimension error: {0}")]
    Dimension(String),

    #[error("domain error: {0}")]
    Domain(String),

    #[error("samples do not cover the integration interval: need {needed} samples, have {available}")]
    Coverage { needed: usize, available: usize },

    #[error("grid alignment error: {0}")]
    Alignment(String),

    #[error("invalid system: {0}")]
    InvalidSystem(String),

    #[error("no stopping time within {horizon} s (y_dot = {y_dot:.6e})")]
    NoStoppingTime { horizon: f64, y_dot: f64 },

    #[error("safety QP infeasible: P = {p:.6e}, q = {q:.6e}, box = [{lo:.6e}, {hi:.6e}]")]
    Infeasible { p: f64, q: f64, lo: f64, hi: f64 },

    #[error("configuration infeasible: {0}")]
    ConfigInfeasible(String),

    #[error("config error: {0}")]
    Config(String),
}
