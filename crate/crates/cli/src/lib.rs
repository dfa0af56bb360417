//! The `tfis` command-line tool.

pub mod args;
mod commands;
pub mod error;
pub mod render;
mod verify;

use serde::de::DeserializeOwned;
use serde::Serialize;
use std::collections::BTreeSet;
use std::io::Write;
use std::path::{Path, PathBuf};

pub use args::{Cli, Command};
pub use error::{CliError, ExitKind};

/// Version stamped into every JSON artifact.
pub const FORMAT_VERSION: u32 = 1;

const SECTIONS: [&str; 7] = [
    "gen-data",
    "train",
    "sample",
    "oracle-sample",
    "eval",
    "verify",
    "render",
];

/// Parsed `--config` file: one optional object per command.
#[derive(Debug, Default)]
pub struct ConfigFile {
    sections: serde_json::Map<String, serde_json::Value>,
}

impl ConfigFile {
    pub fn load(path: Option<&Path>) -> Result<Self, CliError> {
        let Some(path) = path else {
            return Ok(Self::default());
        };
        let text = std::fs::read_to_string(path)
            .map_err(|e| CliError::data(format!("{}: {e}", path.display())))?;
        let value: serde_json::Value = serde_json::from_str(&text)
            .map_err(|e| CliError::usage(format!("{}: {e}", path.display())))?;
        let serde_json::Value::Object(sections) = value else {
            return Err(CliError::usage("config file must be a JSON object"));
        };
        if let Some(k) = sections.keys().find(|k| !SECTIONS.contains(&k.as_str())) {
            return Err(CliError::usage(format!(
                "unknown config section '{k}' (expected one of {})",
                SECTIONS.join(", ")
            )));
        }
        Ok(Self { sections })
    }

    /// The section for `command` over defaults, plus the keys it set.
    pub fn section<T: DeserializeOwned + Default>(
        &self,
        command: &str,
    ) -> Result<(T, BTreeSet<String>), CliError> {
        match self.sections.get(command) {
            None => Ok((T::default(), BTreeSet::new())),
            Some(v) => {
                let keys = v
                    .as_object()
                    .map(|o| o.keys().cloned().collect())
                    .unwrap_or_default();
                let cfg = serde_json::from_value(v.clone())
                    .map_err(|e| CliError::usage(format!("config section '{command}': {e}")))?;
                Ok((cfg, keys))
            }
        }
    }
}

/// Every JSON artifact: format version, command, the resolved config, then
/// command-specific fields.
#[derive(Serialize)]
pub(crate) struct Report<'a, C: Serialize, B: Serialize> {
    pub format_version: u32,
    pub command: &'a str,
    pub config: &'a C,
    #[serde(flatten)]
    pub body: B,
}

impl<'a, C: Serialize, B: Serialize> Report<'a, C, B> {
    pub fn new(command: &'a str, config: &'a C, body: B) -> Self {
        Self {
            format_version: FORMAT_VERSION,
            command,
            config,
            body,
        }
    }

    pub fn to_json(&self) -> Result<String, CliError> {
        let mut s = serde_json::to_string_pretty(self)
            .map_err(|e| CliError::numerical(format!("report serialization: {e}")))?;
        s.push('\n');
        Ok(s)
    }

    pub fn write(&self, path: &Path) -> Result<(), CliError> {
        write_file(path, self.to_json()?.as_bytes())
    }
}

pub(crate) fn write_file(path: &Path, bytes: &[u8]) -> Result<(), CliError> {
    let mut f = std::fs::File::create(path)
        .map_err(|e| CliError::data(format!("{}: {e}", path.display())))?;
    f.write_all(bytes)?;
    Ok(())
}

/// `path` with `suffix` appended to the file name.
pub(crate) fn with_suffix(path: &Path, suffix: &str) -> PathBuf {
    let mut s = path.as_os_str().to_owned();
    s.push(suffix);
    s.into()
}

pub fn run(cli: Cli) -> Result<(), CliError> {
    let file = ConfigFile::load(cli.config.as_deref())?;
    match &cli.command {
        Command::GenData(a) => commands::gen_data(a, &file),
        Command::Train(a) => commands::train(a, &file),
        Command::Sample(a) => commands::sample(a, &file),
        Command::OracleSample(a) => commands::oracle_sample(a, &file),
        Command::Eval(a) => commands::eval(a, &file),
        Command::Verify(a) => verify::verify(a, &file),
        Command::Render(a) => commands::render(a, &file),
    }
}
