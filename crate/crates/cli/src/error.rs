use std::path::Path;

use bcilm::alarm::AlarmError;
use bcilm::analysis::AnalysisError;
use bcilm::epidemic::EpidemicError;
use bcilm::inference::InferenceError;
use bcilm::model::ModelError;
use bcilm::population::PopulationError;
use bcilm::screening::ScreeningError;
use bcilm::simulate::SimulateError;
use thiserror::Error;

/// Errors reported by the CLI. The variant decides the exit code.
#[derive(Debug, Error)]
pub enum CliError {
    #[error("{0}")]
    Config(String),
    #[error("{path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },
    #[error("{0}")]
    Unsupported(String),
    #[error("{0}")]
    Runtime(String),
}

impl CliError {
    pub fn io(path: &Path, source: std::io::Error) -> Self {
        CliError::Io {
            path: path.display().to_string(),
            source,
        }
    }

    pub fn exit_code(&self) -> i32 {
        match self {
            CliError::Runtime(_) => 1,
            CliError::Config(_) | CliError::Io { .. } => 2,
            CliError::Unsupported(_) => 3,
        }
    }
}

impl From<PopulationError> for CliError {
    fn from(e: PopulationError) -> Self {
        match e {
            PopulationError::Coincident(..) => CliError::Runtime(e.to_string()),
            _ => CliError::Config(e.to_string()),
        }
    }
}

impl From<EpidemicError> for CliError {
    fn from(e: EpidemicError) -> Self {
        match e {
            EpidemicError::OutOfWindow { .. } => CliError::Runtime(e.to_string()),
            _ => CliError::Config(e.to_string()),
        }
    }
}

impl From<AlarmError> for CliError {
    fn from(e: AlarmError) -> Self {
        match e {
            AlarmError::Domain(_) | AlarmError::MissingTimes(_) => CliError::Runtime(e.to_string()),
            _ => CliError::Config(e.to_string()),
        }
    }
}

impl From<ModelError> for CliError {
    fn from(e: ModelError) -> Self {
        match e {
            ModelError::Spec(_) | ModelError::OutOfSupport(_) | ModelError::SizeMismatch { .. } => {
                CliError::Config(e.to_string())
            }
            ModelError::Alarm(a) => a.into(),
            ModelError::Epidemic(ep) => ep.into(),
            ModelError::NotSusceptible { .. } => CliError::Runtime(e.to_string()),
        }
    }
}

impl From<SimulateError> for CliError {
    fn from(e: SimulateError) -> Self {
        match e {
            SimulateError::Config(_) => CliError::Config(e.to_string()),
            SimulateError::Model(m) => m.into(),
            SimulateError::Epidemic(ep) => ep.into(),
            SimulateError::Population(p) => p.into(),
        }
    }
}

impl From<InferenceError> for CliError {
    fn from(e: InferenceError) -> Self {
        match e {
            InferenceError::Prior(_) | InferenceError::Config(_) | InferenceError::Chain { .. } => {
                CliError::Config(e.to_string())
            }
            InferenceError::Model(m) => m.into(),
            InferenceError::Diagnostic(_) | InferenceError::Initialization(_) => {
                CliError::Runtime(e.to_string())
            }
        }
    }
}

impl From<ScreeningError> for CliError {
    fn from(e: ScreeningError) -> Self {
        match e {
            ScreeningError::Unsupported(_) => CliError::Unsupported(e.to_string()),
            ScreeningError::Config(_) => CliError::Config(e.to_string()),
            ScreeningError::Inference(i) => i.into(),
            ScreeningError::Model(m) => m.into(),
        }
    }
}

impl From<AnalysisError> for CliError {
    fn from(e: AnalysisError) -> Self {
        match e {
            AnalysisError::Config(_) => CliError::Config(e.to_string()),
            AnalysisError::Simulate(s) => s.into(),
            AnalysisError::Inference(i) => i.into(),
            AnalysisError::Model(m) => m.into(),
            AnalysisError::Io(io) => CliError::Io {
                path: String::new(),
                source: io,
            },
        }
    }
}
