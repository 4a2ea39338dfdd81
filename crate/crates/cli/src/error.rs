use std::fmt;
use std::process::ExitCode;

use sellkit_core::config::ConfigError;

/// A failed command. Config problems exit with 2, everything else with 1.
#[derive(Debug)]
pub enum Failure {
    Config(anyhow::Error),
    Domain(anyhow::Error),
}

impl Failure {
    pub fn exit_code(&self) -> ExitCode {
        match self {
            Failure::Config(_) => ExitCode::from(2),
            Failure::Domain(_) => ExitCode::from(1),
        }
    }

    pub fn config(e: impl Into<anyhow::Error>) -> Self {
        Failure::Config(e.into())
    }

    pub fn domain(e: impl Into<anyhow::Error>) -> Self {
        Failure::Domain(e.into())
    }

    /// Stdout was closed by the reader, e.g. `sellkit ... | head`.
    pub fn is_broken_pipe(&self) -> bool {
        let (Failure::Config(e) | Failure::Domain(e)) = self;
        e.chain().any(|c| {
            c.downcast_ref::<std::io::Error>()
                .is_some_and(|io| io.kind() == std::io::ErrorKind::BrokenPipe)
        })
    }
}

impl fmt::Display for Failure {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Failure::Config(e) => write!(f, "config error: {e:#}"),
            Failure::Domain(e) => write!(f, "error: {e:#}"),
        }
    }
}

impl From<ConfigError> for Failure {
    fn from(e: ConfigError) -> Self {
        Failure::Config(e.into())
    }
}

macro_rules! domain_errors {
    ($($t:ty),* $(,)?) => {
        $(impl From<$t> for Failure {
            fn from(e: $t) -> Self {
                Failure::Domain(e.into())
            }
        })*
    };
}

domain_errors!(
    anyhow::Error,
    std::io::Error,
    serde_json::Error,
    sellkit_core::sell::ParseError,
    sellkit_core::sell::CardError,
    sellkit_core::targeting::TargetingError,
    sellkit_core::synth::SynthError,
    sellkit_core::metrics::MetricsError,
    sellkit_core::prompt::PromptError,
    sellkit_core::retrieval::StoreError,
    sellkit_core::retrieval::LibraryBuildError,
    sellkit_core::jsonl::JsonlError,
    sellkit_core::llm::LlmError,
    sellkit_core::llm::JudgeError,
);

pub type CmdResult<T = ()> = Result<T, Failure>;
