use std::fmt;

use graphocog::harness::HarnessError;
use graphocog::micronet::NetError;
use graphocog::synth::SynthError;
use graphocog::telemetry::TelemetryError;

pub const EXIT_CONFIG: u8 = 1;
pub const EXIT_IO: u8 = 2;
pub const EXIT_DATA: u8 = 3;
pub const EXIT_COHORT: u8 = 4;
pub const EXIT_SHAPE: u8 = 5;

#[derive(Debug)]
pub struct CliError {
    pub code: u8,
    pub message: String,
}

impl CliError {
    pub fn config(message: impl Into<String>) -> Self {
        Self {
            code: EXIT_CONFIG,
            message: message.into(),
        }
    }

    pub fn io(message: impl Into<String>) -> Self {
        Self {
            code: EXIT_IO,
            message: message.into(),
        }
    }

    pub fn data(message: impl Into<String>) -> Self {
        Self {
            code: EXIT_DATA,
            message: message.into(),
        }
    }
}

impl fmt::Display for CliError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.message)
    }
}

impl From<HarnessError> for CliError {
    fn from(e: HarnessError) -> Self {
        let code = match &e {
            HarnessError::InvalidConfig(_) | HarnessError::DuplicateCombination(_) => EXIT_CONFIG,
            HarnessError::Io(_) => EXIT_IO,
            HarnessError::Data(_) | HarnessError::EmptyTaskSubset(_) => EXIT_DATA,
            HarnessError::TooFewSubjects { .. }
            | HarnessError::EmptyTestSet(_)
            | HarnessError::Leakage(_) => EXIT_COHORT,
            HarnessError::Net(NetError::Io(_)) => EXIT_IO,
            HarnessError::Net(_) => EXIT_SHAPE,
            HarnessError::Dsp(graphocog::dsp::DspError::Io(_)) => EXIT_IO,
            HarnessError::Dsp(
                graphocog::dsp::DspError::LengthMismatch | graphocog::dsp::DspError::Format(_),
            ) => EXIT_SHAPE,
            HarnessError::Dsp(_) => EXIT_CONFIG,
        };
        // list every failing recording on its own line
        let message = match e {
            HarnessError::Data(list) => format!(
                "{} recording(s) failed validation:\n  {}",
                list.len(),
                list.join("\n  ")
            ),
            other => other.to_string(),
        };
        Self { code, message }
    }
}

impl From<TelemetryError> for CliError {
    fn from(e: TelemetryError) -> Self {
        match e {
            TelemetryError::Io { .. } => CliError::io(e.to_string()),
            _ => CliError::data(e.to_string()),
        }
    }
}

impl From<SynthError> for CliError {
    fn from(e: SynthError) -> Self {
        match e {
            SynthError::InvalidSpec(_) => CliError::config(e.to_string()),
            SynthError::Io { .. } => CliError::io(e.to_string()),
            _ => CliError::data(e.to_string()),
        }
    }
}
