use thiserror::Error;

/// Everything that can go wrong while setting up, integrating or solving a
/// shooting problem.
#[derive(Debug, Clone, PartialEq, Error)]
pub enum ShootError {
    #[error("configuration error: {0}")]
    Config(String),

    /// The coefficient matrix of the singular control in the second time
    /// derivative of the switching function is (numerically) singular.
    #[error("Legendre-Clebsch violation{}: condition number {cond:e}", fmt_time(.t))]
    LegendreClebsch { t: Option<f64>, cond: f64 },

    #[error("integration diverged at t = {t}")]
    IntegrationDiverged { t: f64 },

    /// The classical reduction did not produce as many residuals as unknowns.
    #[error("classical system is not square ({rows} residuals, {unknowns} unknowns): {detail}")]
    NotSquare {
        rows: usize,
        unknowns: usize,
        detail: String,
    },

    #[error("Jacobian rank deficient: normal-equation condition number {cond:e}")]
    JacobianRankDeficient { cond: f64 },

    #[error("Jacobian singular")]
    JacobianSingular,

    #[error("residual diverged at iteration {iteration}")]
    Diverged { iteration: usize },

    #[error("residual evaluation failed at probe coordinate {coord}: {source}")]
    Probe {
        coord: usize,
        #[source]
        source: Box<ShootError>,
    },

    #[error("{0}")]
    Io(String),
}

fn fmt_time(t: &Option<f64>) -> String {
    match t {
        Some(t) => format!(" at t = {t}"),
        None => String::new(),
    }
}

pub type Result<T> = std::result::Result<T, ShootError>;

impl From<std::io::Error> for ShootError {
    fn from(e: std::io::Error) -> Self {
        ShootError::Io(e.to_string())
    }
}
