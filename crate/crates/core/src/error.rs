use crate::stationary::TransitionModel;

/// Errors raised by ingestion, fitting and evaluation.
#[derive(Debug, thiserror::Error)]
pub enum Error {
    #[error("row {row}: {message}")]
    Parse { row: usize, message: String },

    #[error("invalid dataset: {0}")]
    Validation(String),

    #[error("invalid configuration: {0}")]
    Config(String),

    /// A linear system whose reciprocal condition number fell below the
    /// singularity threshold. `direction` is the eigenvector of the
    /// smallest eigenvalue when it was computed.
    #[error("{what} is singular (reciprocal condition {rcond:.3e}{}); {hint}", fmt_direction(.direction))]
    Singular {
        what: String,
        rcond: f64,
        hint: String,
        direction: Option<Vec<f64>>,
    },

    /// The discounted series for `policy` does not converge.
    #[error(
        "policy {policy}: spectral radius of gamma*M is {scaled_radius:.6} >= 1, \
         value diverges (requires the spectral norm of M to be smaller than 1/gamma)"
    )]
    Divergent {
        policy: usize,
        scaled_radius: f64,
        fitted: Option<Box<TransitionModel>>,
    },

    #[error("iteration {iteration}: {source}")]
    AtIteration {
        iteration: usize,
        #[source]
        source: Box<Error>,
    },

    #[error("csv: {0}")]
    Csv(#[from] csv::Error),

    #[error("json: {0}")]
    Json(#[from] serde_json::Error),

    #[error("io: {0}")]
    Io(#[from] std::io::Error),
}

fn fmt_direction(direction: &Option<Vec<f64>>) -> String {
    match direction {
        Some(v) => {
            let parts: Vec<String> = v.iter().map(|x| format!("{x:.4}")).collect();
            format!(", near-null direction [{}]", parts.join(", "))
        }
        None => String::new(),
    }
}

pub type Result<T, E = Error> = std::result::Result<T, E>;
