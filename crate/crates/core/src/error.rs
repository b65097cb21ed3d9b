use thiserror::Error;

pub type Result<T> = std::result::Result<T, DesignError>;

#[derive(Debug, Error)]
pub enum DesignError {
    #[error("invalid {field}: {reason}")]
    InvalidInput { field: String, reason: String },

    #[error("{name} is not positive definite (smallest eigenvalue {min_eigenvalue:e}, largest {max_eigenvalue:e})")]
    NotPositiveDefinite {
        name: String,
        min_eigenvalue: f64,
        max_eigenvalue: f64,
    },

    #[error("{name} is not symmetric (max asymmetry {asymmetry:e})")]
    NotSymmetric { name: String, asymmetry: f64 },

    #[error("matrix is numerically singular (condition number {condition:e})")]
    IllConditioned { condition: f64 },

    #[error("numerical failure: {0}")]
    Numerical(String),

    #[error("solver did not converge after {iterations} iterations (residual {residual:e})")]
    NotConverged { iterations: usize, residual: f64 },

    #[error("enumeration needs {required} compositions but the budget is {budget}; use efficient rounding instead")]
    BudgetExceeded { required: u128, budget: u64 },

    #[error("cannot round a design with {support} support points to {total} locations")]
    TooFewLocations { total: usize, support: usize },

    #[error("config error at `{path}`: {message}")]
    Config { path: String, message: String },

    #[error(transparent)]
    Io(#[from] std::io::Error),
}

impl DesignError {
    pub(crate) fn invalid(field: impl Into<String>, reason: impl Into<String>) -> Self {
        DesignError::InvalidInput {
            field: field.into(),
            reason: reason.into(),
        }
    }

    pub(crate) fn config(path: impl Into<String>, message: impl Into<String>) -> Self {
        DesignError::Config {
            path: path.into(),
            message: message.into(),
        }
    }

    /// Process exit code used by the command line front end.
    pub fn exit_code(&self) -> i32 {
        match self {
            DesignError::InvalidInput { .. }
            | DesignError::NotPositiveDefinite { .. }
            | DesignError::NotSymmetric { .. }
            | DesignError::Config { .. }
            | DesignError::TooFewLocations { .. }
            | DesignError::Io(_) => 2,
            DesignError::IllConditioned { .. }
            | DesignError::Numerical(_)
            | DesignError::NotConverged { .. } => 3,
            DesignError::BudgetExceeded { .. } => 4,
        }
    }
}
