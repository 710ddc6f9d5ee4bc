use std::fmt;

use thiserror::Error;

/// Pipeline stage, for exit codes.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Stage {
    Solve,
    Weiss,
    Blowup,
    Fbgeom,
}

impl Stage {
    pub fn exit_code(self) -> i32 {
        match self {
            Stage::Solve => 10,
            Stage::Weiss => 20,
            Stage::Blowup => 30,
            Stage::Fbgeom => 40,
        }
    }
}

impl fmt::Display for Stage {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Stage::Solve => "minimize",
            Stage::Weiss => "weiss",
            Stage::Blowup => "blowup",
            Stage::Fbgeom => "fbgeom",
        })
    }
}

#[derive(Debug, Error)]
pub enum CliError {
    #[error("invalid configuration: {0}")]
    Config(String),
    #[error("{stage} stage failed: {source}")]
    Stage {
        stage: Stage,
        #[source]
        source: weisslab_core::Error,
    },
}

impl CliError {
    pub fn stage(stage: Stage) -> impl Fn(weisslab_core::Error) -> CliError {
        move |source| CliError::Stage { stage, source }
    }

    pub fn exit_code(&self) -> i32 {
        match self {
            CliError::Config(_) => 2,
            CliError::Stage { stage, .. } => stage.exit_code(),
        }
    }
}
