//! Run configuration shared by the subcommands.

use std::fs;
use std::path::{Path, PathBuf};

use dtctrl_core::analysis::VerdictOptions;
use dtctrl_core::system::builtin;
use dtctrl_core::{ControlSequence, DiscreteSystem, ProblemFile, SystemFile};
use nalgebra::DVector;

use crate::CliError;

#[derive(Debug, Clone, PartialEq, Eq)]
pub enum SystemSource {
    Builtin(String),
    File(PathBuf),
}

impl SystemSource {
    /// Registry names win over paths of the same spelling.
    pub fn from_arg(arg: &str) -> Self {
        if builtin::REGISTRY.iter().any(|(name, _, _)| *name == arg) {
            SystemSource::Builtin(arg.to_string())
        } else {
            SystemSource::File(PathBuf::from(arg))
        }
    }

    pub fn label(&self) -> String {
        match self {
            SystemSource::Builtin(name) => name.clone(),
            SystemSource::File(path) => path.display().to_string(),
        }
    }

    pub fn load(&self) -> Result<DiscreteSystem, CliError> {
        match self {
            SystemSource::Builtin(name) => Ok(builtin::by_name(name)?),
            SystemSource::File(path) => {
                let file = SystemFile::parse(&read(path)?).map_err(|e| CliError::file(path, e))?;
                Ok(DiscreteSystem::new(file_stem(path), file))
            }
        }
    }
}

pub fn read(path: &Path) -> Result<String, CliError> {
    fs::read_to_string(path).map_err(|source| CliError::Io {
        path: path.display().to_string(),
        source,
    })
}

pub fn file_stem(path: &Path) -> String {
    path.file_stem()
        .map_or_else(|| "system".into(), |s| s.to_string_lossy().into_owned())
}

pub fn load_problem(path: &Path) -> Result<ProblemFile, CliError> {
    ProblemFile::parse(&read(path)?).map_err(|e| CliError::file(path, e))
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, clap::ValueEnum)]
pub enum OutputFormat {
    Text,
    Structured,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct OracleParams {
    pub seed: u64,
    pub radius: f64,
    pub samples: usize,
}

impl Default for OracleParams {
    fn default() -> Self {
        Self {
            seed: 0,
            radius: 0.05,
            samples: 20_000,
        }
    }
}

#[derive(Debug, Clone)]
pub struct RunConfig {
    pub system: Option<SystemSource>,
    pub x0: Vec<f64>,
    /// Flattened controls: either all `N·m` values or one step repeated
    /// `steps` times.
    pub controls: Vec<f64>,
    pub steps: Option<usize>,
    pub rank_tol: f64,
    pub eig_tol: f64,
    pub oracle: OracleParams,
    pub format: OutputFormat,
}

impl RunConfig {
    pub fn verdict_options(&self) -> VerdictOptions {
        VerdictOptions {
            rank_tol: self.rank_tol,
            eig_tol: self.eig_tol,
            seed: self.oracle.seed,
            ..VerdictOptions::default()
        }
    }

    pub fn system(&self) -> Result<DiscreteSystem, CliError> {
        self.system
            .as_ref()
            .ok_or_else(|| CliError::Usage("--system is required".into()))?
            .load()
    }

    pub fn x0(&self, n: usize) -> Result<DVector<f64>, CliError> {
        if self.x0.len() != n {
            return Err(CliError::Usage(format!(
                "--x0 has {} values, the system has n = {n}",
                self.x0.len()
            )));
        }
        Ok(DVector::from_column_slice(&self.x0))
    }

    pub fn controls(&self, m: usize) -> Result<ControlSequence, CliError> {
        let given = self.controls.len();
        let values = match self.steps {
            Some(0) => return Err(CliError::Usage("--steps must be positive".into())),
            Some(steps) if given == m => self.controls.repeat(steps),
            Some(steps) if given == steps * m => self.controls.clone(),
            Some(steps) => {
                return Err(CliError::Usage(format!(
                    "--u has {given} values; with --steps {steps} and m = {m} expected {m} or {}",
                    steps * m
                )))
            }
            None if given == 0 || !given.is_multiple_of(m) => {
                return Err(CliError::Usage(format!(
                    "--u has {given} values, not a positive multiple of m = {m}"
                )))
            }
            None => self.controls.clone(),
        };
        Ok(ControlSequence::from_flat(m, &values)?)
    }
}
