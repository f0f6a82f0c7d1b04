//! Engine-wide error type. Every error names the pipeline stage it came
//! from so front ends can report partial progress and map failures to
//! distinct exit codes.

use thiserror::Error;

use crate::automaton::AutomatonError;
use crate::compiler::CompileError;
use crate::executor::ExecError;
use crate::lm::LmError;
use crate::preprocess::PreprocessError;
use crate::regex::ParseError;

/// Pipeline stage classes, in pipeline order.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Stage {
    Parse,
    Compile,
    Preprocess,
    TokenCompile,
    Model,
    Execute,
    Io,
}

impl std::fmt::Display for Stage {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        let name = match self {
            Stage::Parse => "parse",
            Stage::Compile => "compile",
            Stage::Preprocess => "preprocess",
            Stage::TokenCompile => "token-compile",
            Stage::Model => "model",
            Stage::Execute => "execute",
            Stage::Io => "io",
        };
        write!(f, "{name}")
    }
}

#[derive(Debug, Error)]
pub enum EngineError {
    #[error("parse: {0}")]
    Parse(#[from] ParseError),
    #[error("compile: {0}")]
    Compile(AutomatonError),
    #[error("preprocess: {0}")]
    Preprocess(#[from] PreprocessError),
    #[error("token-compile: {0}")]
    TokenCompile(#[from] CompileError),
    #[error("model: {0}")]
    Model(#[from] LmError),
    #[error("execute: {0}")]
    Execute(#[from] ExecError),
    #[error("io: {0}")]
    Io(#[from] std::io::Error),
    #[error("invalid query: {0}")]
    InvalidQuery(String),
}

impl EngineError {
    pub fn stage(&self) -> Stage {
        match self {
            EngineError::Parse(_) => Stage::Parse,
            EngineError::Compile(_) => Stage::Compile,
            EngineError::Preprocess(_) => Stage::Preprocess,
            EngineError::TokenCompile(_) => Stage::TokenCompile,
            EngineError::Model(_) => Stage::Model,
            EngineError::Execute(_) => Stage::Execute,
            EngineError::Io(_) => Stage::Io,
            EngineError::InvalidQuery(_) => Stage::Parse,
        }
    }
}
