use std::process::ExitCode;

use synplug::config::ConfigError;
use synplug::corpus::CorpusError;
use synplug::eval::EvalError;
use synplug::gateway::GatewayError;
use synplug::hub::HubError;
use synplug::knowledge::ExtractError;
use synplug::plugin::PluginError;
use thiserror::Error;

#[derive(Debug, Error)]
pub enum CliError {
    /// Bad inputs: arguments, config, corpus files, templates.
    #[error("{0}")]
    Validation(String),
    /// The remote endpoint failed or could not be reached.
    #[error("{0}")]
    Network(String),
    #[error("{0}")]
    Other(String),
}

impl CliError {
    pub fn exit_code(&self) -> ExitCode {
        match self {
            CliError::Validation(_) => ExitCode::from(2),
            CliError::Network(_) => ExitCode::from(3),
            CliError::Other(_) => ExitCode::from(1),
        }
    }

    pub fn invalid(msg: impl Into<String>) -> Self {
        CliError::Validation(msg.into())
    }

    pub fn io(path: &std::path::Path, e: std::io::Error) -> Self {
        CliError::Other(format!("{}: {e}", path.display()))
    }
}

impl From<ConfigError> for CliError {
    fn from(e: ConfigError) -> Self {
        CliError::Validation(e.to_string())
    }
}

impl From<CorpusError> for CliError {
    fn from(e: CorpusError) -> Self {
        CliError::Validation(e.to_string())
    }
}

impl From<ExtractError> for CliError {
    fn from(e: ExtractError) -> Self {
        CliError::Validation(e.to_string())
    }
}

impl From<PluginError> for CliError {
    fn from(e: PluginError) -> Self {
        match e {
            PluginError::NonFinite { .. } | PluginError::Tensor(_) => CliError::Other(e.to_string()),
            _ => CliError::Validation(e.to_string()),
        }
    }
}

impl From<HubError> for CliError {
    fn from(e: HubError) -> Self {
        match e {
            HubError::Plugin(p) => p.into(),
            HubError::NonFinite { .. } | HubError::LmMutated { .. } | HubError::Tensor(_) => {
                CliError::Other(e.to_string())
            }
            _ => CliError::Validation(e.to_string()),
        }
    }
}

impl From<GatewayError> for CliError {
    fn from(e: GatewayError) -> Self {
        if e.is_network() {
            CliError::Network(e.to_string())
        } else {
            CliError::Validation(e.to_string())
        }
    }
}

impl From<EvalError> for CliError {
    fn from(e: EvalError) -> Self {
        match e {
            EvalError::Plugin(p) => p.into(),
            EvalError::Sweep { .. } | EvalError::Io(_) => CliError::Other(e.to_string()),
            _ => CliError::Validation(e.to_string()),
        }
    }
}
