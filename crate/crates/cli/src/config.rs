use std::collections::BTreeMap;
use std::fmt;
use std::path::{Path, PathBuf};
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::CliError;

/// Ordered `key=value` settings; later sources override earlier ones.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct Settings(BTreeMap<String, String>);

impl Settings {
    /// Parses `key = value` lines; `#` starts a comment.
    pub fn parse(text: &str, origin: &str) -> Result<Self, CliError> {
        let mut map = BTreeMap::new();
        for (i, line) in text.lines().enumerate() {
            let line = line.split('#').next().unwrap_or("").trim();
            if line.is_empty() {
                continue;
            }
            let (k, v) = line.split_once('=').ok_or_else(|| {
                CliError::Usage(format!("{origin}:{}: expected key=value, got `{line}`", i + 1))
            })?;
            map.insert(normalize_key(k), v.trim().to_string());
        }
        Ok(Self(map))
    }

    pub fn load(path: &Path) -> Result<Self, CliError> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| CliError::Usage(format!("cannot read config {}: {e}", path.display())))?;
        Self::parse(&text, &path.display().to_string())
    }

    pub fn set(&mut self, key: &str, value: impl Into<String>) {
        self.0.insert(normalize_key(key), value.into());
    }

    pub fn get(&self, key: &str) -> Option<&str> {
        self.0.get(key).map(String::as_str)
    }

    pub fn merge(&mut self, other: Settings) {
        self.0.extend(other.0);
    }

    pub fn iter(&self) -> impl Iterator<Item = (&str, &str)> {
        self.0.iter().map(|(k, v)| (k.as_str(), v.as_str()))
    }
}

fn normalize_key(k: &str) -> String {
    k.trim().replace('-', "_")
}

/// Settings applied to a typed config, rejecting unknown keys.
pub trait Configurable {
    fn set(&mut self, key: &str, value: &str) -> Result<bool, CliError>;
    fn entries(&self) -> Vec<(&'static str, String)>;

    fn apply(&mut self, settings: &Settings) -> Result<(), CliError> {
        for (k, v) in settings.iter() {
            if !self.set(k, v)? {
                return Err(CliError::Usage(format!("unknown setting `{k}`")));
            }
        }
        Ok(())
    }

    /// The resolved file: one `key = value` line per effective parameter.
    fn render(&self) -> String {
        self.entries()
            .into_iter()
            .map(|(k, v)| format!("{k} = {v}\n"))
            .collect()
    }
}

pub(crate) fn parse<T: FromStr>(key: &str, value: &str) -> Result<T, CliError>
where
    T::Err: fmt::Display,
{
    value
        .trim()
        .parse()
        .map_err(|e| CliError::Usage(format!("invalid value `{value}` for {key}: {e}")))
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum ModelKind {
    OdeRnn,
    OdeGan,
    OdeGan2Convnode,
    OdeGan2Cde,
    BaselineGan,
}

impl ModelKind {
    pub const ALL: [ModelKind; 5] = [
        ModelKind::OdeRnn,
        ModelKind::OdeGan,
        ModelKind::OdeGan2Convnode,
        ModelKind::OdeGan2Cde,
        ModelKind::BaselineGan,
    ];

    pub fn name(self) -> &'static str {
        match self {
            ModelKind::OdeRnn => "ode-rnn",
            ModelKind::OdeGan => "ode-gan",
            ModelKind::OdeGan2Convnode => "ode-gan2-convnode",
            ModelKind::OdeGan2Cde => "ode-gan2-cde",
            ModelKind::BaselineGan => "baseline-gan",
        }
    }

    pub fn is_adversarial(self) -> bool {
        self != ModelKind::OdeRnn
    }
}

impl fmt::Display for ModelKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for ModelKind {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, String> {
        ModelKind::ALL
            .into_iter()
            .find(|k| k.name() == s)
            .ok_or_else(|| {
                let names: Vec<&str> = ModelKind::ALL.iter().map(|k| k.name()).collect();
                format!("expected one of {}", names.join(", "))
            })
    }
}

/// Where training windows come from.
#[derive(Clone, Debug, PartialEq)]
pub enum DataSource {
    Sine,
    DynEcg,
    /// A CSV recording or a directory written by `make-data`.
    Path(PathBuf),
}

impl fmt::Display for DataSource {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            DataSource::Sine => f.write_str("sine"),
            DataSource::DynEcg => f.write_str("dyn-ecg"),
            DataSource::Path(p) => write!(f, "{}", p.display()),
        }
    }
}

impl FromStr for DataSource {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, String> {
        Ok(match s {
            "sine" => DataSource::Sine,
            "dyn-ecg" => DataSource::DynEcg,
            "" => return Err("empty data source".into()),
            p => DataSource::Path(PathBuf::from(p)),
        })
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum SynthKind {
    Sine,
    DynEcg,
}

impl fmt::Display for SynthKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            SynthKind::Sine => "sine",
            SynthKind::DynEcg => "dyn-ecg",
        })
    }
}

impl FromStr for SynthKind {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, String> {
        match s {
            "sine" => Ok(SynthKind::Sine),
            "dyn-ecg" => Ok(SynthKind::DynEcg),
            _ => Err("expected sine or dyn-ecg".into()),
        }
    }
}
