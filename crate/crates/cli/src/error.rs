use std::path::Path;

use colrel::analysis::AnalysisError;
use colrel::objectives::ObjectiveError;
use colrel::protocol::SimulationError;
use colrel::topology::GraphError;
use colrel::weights::WeightsError;
use thiserror::Error;

#[derive(Debug, Error)]
pub enum CliError {
    #[error("{0}")]
    Usage(String),
    #[error("{0}")]
    Parse(String),
    #[error("{field}: {constraint}")]
    Config { field: String, constraint: String },
    #[error("{path}: {message}")]
    Io { path: String, message: String },
    #[error(transparent)]
    Graph(#[from] GraphError),
    #[error(transparent)]
    Objective(#[from] ObjectiveError),
    #[error(transparent)]
    Weights(#[from] WeightsError),
    #[error(transparent)]
    Simulation(#[from] SimulationError),
    #[error(transparent)]
    Analysis(#[from] AnalysisError),
    #[error("{0}")]
    Trace(String),
}

impl CliError {
    pub fn config(field: &str, constraint: impl Into<String>) -> Self {
        Self::Config { field: field.into(), constraint: constraint.into() }
    }

    pub fn io(path: &Path, err: std::io::Error) -> Self {
        Self::Io { path: path.display().to_string(), message: err.to_string() }
    }

    /// Stable machine-readable class.
    pub fn class(&self) -> &'static str {
        match self {
            Self::Usage(_) => "usage",
            Self::Parse(_) => "parse",
            Self::Config { .. } | Self::Graph(_) | Self::Objective(_) => "config",
            Self::Io { .. } => "io",
            Self::Weights(_) => "weights",
            Self::Simulation(SimulationError::Diverged { .. }) => "divergence",
            Self::Simulation(_) => "simulation",
            Self::Analysis(_) => "analysis",
            Self::Trace(_) => "trace",
        }
    }

    pub fn exit_code(&self) -> u8 {
        match self {
            Self::Usage(_) | Self::Parse(_) | Self::Config { .. } => 2,
            _ => 1,
        }
    }

    /// `error: class=<class> detail=<message>` on one line.
    pub fn report_line(&self) -> String {
        let text = self.to_string();
        let detail: Vec<&str> = text.split_whitespace().collect();
        format!("error: class={} detail={}", self.class(), detail.join(" "))
    }
}
