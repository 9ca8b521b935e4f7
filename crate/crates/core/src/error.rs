use thiserror::Error;

#[derive(Debug, Error)]
pub enum Error {
    #[error("configuration error: {0}")]
    Config(String),
    #[error("model error: {0}")]
    Model(String),
    #[error("constraint block is rank deficient; redundant control volumes {cvs:?}")]
    RankDeficient { cvs: Vec<usize> },
    #[error("linear solver failed: {0}")]
    Solver(String),
    #[error("singular ratio f(u)/u at u = {u} (f(0) = {f0} is nonzero)")]
    SingularRatio { u: f64, f0: f64 },
    #[error("CFL violated: M·dt = {md} exceeds h/2 = {half_h}")]
    Cfl { md: f64, half_h: f64 },
    #[error("non-finite state at cell ({i}, {j})")]
    NonFinite { i: usize, j: usize },
    #[error("saturation {value} out of [0,1] at cell ({i}, {j})")]
    Saturation { i: usize, j: usize, value: f64 },
    #[error("{context}: {source}")]
    Io {
        context: String,
        #[source]
        source: std::io::Error,
    },
    #[error("parse error in {context}: {message}")]
    Parse { context: String, message: String },
}

pub type Result<T> = std::result::Result<T, Error>;

impl Error {
    pub fn io(context: impl Into<String>, source: std::io::Error) -> Self {
        Error::Io { context: context.into(), source }
    }
}
