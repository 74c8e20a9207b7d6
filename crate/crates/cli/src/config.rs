//! Resolved runtime configuration. Each setting comes from the first of:
//! command-line flag, `PLANEDIT_*` environment variable, TOML config file,
//! built-in default.

use std::collections::HashMap;
use std::fmt;
use std::path::{Path, PathBuf};
use std::str::FromStr;

use planedit_core::gateway::{DEFAULT_API_KEY_ENV, DEFAULT_BASE_URL};
use planedit_core::{MergePolicy, Topology};
use serde::Deserialize;

use crate::CliError;

pub const ENV_PREFIX: &str = "PLANEDIT_";

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Mode {
    /// Every prompt goes to the endpoint.
    Live,
    /// Like live, but responses are appended to the cache and reused.
    Record,
    /// Answers only from the cache; never touches the network.
    Replay,
    /// Answers from a scripted fixture file.
    Mock,
}

impl Mode {
    pub fn as_str(self) -> &'static str {
        match self {
            Mode::Live => "live",
            Mode::Record => "record",
            Mode::Replay => "replay",
            Mode::Mock => "mock",
        }
    }
}

impl FromStr for Mode {
    type Err = String;
    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "live" => Ok(Mode::Live),
            "record" => Ok(Mode::Record),
            "replay" => Ok(Mode::Replay),
            "mock" => Ok(Mode::Mock),
            other => Err(format!(
                "unknown mode `{other}` (expected live, record, replay or mock)"
            )),
        }
    }
}

impl fmt::Display for Mode {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Origin {
    Default,
    File,
    Env,
    Flag,
}

impl Origin {
    fn as_str(self) -> &'static str {
        match self {
            Origin::Default => "default",
            Origin::File => "config file",
            Origin::Env => "environment",
            Origin::Flag => "flag",
        }
    }
}

/// Values as written in a TOML config file. Every key is optional.
#[derive(Debug, Default, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct FileConfig {
    pub mode: Option<String>,
    pub endpoint: Option<String>,
    pub api_key_env: Option<String>,
    pub model: Option<String>,
    pub topology: Option<String>,
    pub templates: Option<PathBuf>,
    pub cache: Option<PathBuf>,
    pub mock_fixtures: Option<PathBuf>,
    pub parallelism: Option<usize>,
    pub max_in_flight: Option<usize>,
    pub merge_policy: Option<String>,
    pub verify_sees_hint: Option<bool>,
}

impl FileConfig {
    pub fn load(path: &Path) -> Result<Self, CliError> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| CliError::Input(format!("reading config {}: {e}", path.display())))?;
        toml::from_str(&text)
            .map_err(|e| CliError::Input(format!("config {}: {e}", path.display())))
    }
}

/// Values given on the command line.
#[derive(Debug, Default, Clone)]
pub struct FlagConfig {
    pub mode: Option<Mode>,
    pub endpoint: Option<String>,
    pub api_key_env: Option<String>,
    pub model: Option<String>,
    pub topology: Option<Topology>,
    pub templates: Option<PathBuf>,
    pub cache: Option<PathBuf>,
    pub mock_fixtures: Option<PathBuf>,
    pub parallelism: Option<usize>,
    pub max_in_flight: Option<usize>,
    pub merge_policy: Option<MergePolicy>,
    pub verify_sees_hint: Option<bool>,
}

#[derive(Debug, Clone)]
pub struct CliConfig {
    pub mode: Mode,
    pub endpoint: String,
    /// Name of the environment variable holding the API key.
    pub api_key_env: String,
    pub model: Option<String>,
    pub topology: Topology,
    pub templates: Option<PathBuf>,
    pub cache: Option<PathBuf>,
    pub mock_fixtures: Option<PathBuf>,
    pub parallelism: usize,
    pub max_in_flight: usize,
    pub merge_policy: MergePolicy,
    pub verify_sees_hint: bool,
    origins: Vec<(&'static str, Origin)>,
}

struct Resolver<'a> {
    env: &'a HashMap<String, String>,
    origins: Vec<(&'static str, Origin)>,
}

impl Resolver<'_> {
    fn env_value(&self, key: &str) -> Option<&str> {
        self.env
            .get(&format!("{ENV_PREFIX}{}", key.to_ascii_uppercase()))
            .map(String::as_str)
            .filter(|v| !v.is_empty())
    }

    fn parse<T: FromStr>(key: &str, raw: &str, from: &str) -> Result<T, CliError>
    where
        T::Err: fmt::Display,
    {
        raw.parse()
            .map_err(|e| CliError::Input(format!("{key} from {from}: {e}")))
    }

    fn optional<T: FromStr>(
        &mut self,
        key: &'static str,
        flag: Option<T>,
        file: Option<T>,
    ) -> Result<Option<T>, CliError>
    where
        T::Err: fmt::Display,
    {
        let (value, origin) = if let Some(v) = flag {
            (Some(v), Origin::Flag)
        } else if let Some(raw) = self.env_value(key) {
            let var = format!("{ENV_PREFIX}{}", key.to_ascii_uppercase());
            (Some(Self::parse(key, raw, &var)?), Origin::Env)
        } else if let Some(v) = file {
            (Some(v), Origin::File)
        } else {
            (None, Origin::Default)
        };
        self.origins.push((key, origin));
        Ok(value)
    }

    fn with_default<T: FromStr>(
        &mut self,
        key: &'static str,
        flag: Option<T>,
        file: Option<T>,
        default: T,
    ) -> Result<T, CliError>
    where
        T::Err: fmt::Display,
    {
        Ok(self.optional(key, flag, file)?.unwrap_or(default))
    }
}

fn parse_file_value<T: FromStr>(key: &str, raw: Option<String>) -> Result<Option<T>, CliError>
where
    T::Err: fmt::Display,
{
    raw.map(|r| Resolver::parse(key, &r, "config file"))
        .transpose()
}

impl CliConfig {
    pub fn resolve(
        flags: FlagConfig,
        env: &HashMap<String, String>,
        file: FileConfig,
    ) -> Result<Self, CliError> {
        let mut r = Resolver {
            env,
            origins: Vec::new(),
        };
        let default_parallelism = std::thread::available_parallelism().map_or(1, |n| n.get());
        let config = CliConfig {
            mode: r.with_default(
                "mode",
                flags.mode,
                parse_file_value("mode", file.mode)?,
                Mode::Live,
            )?,
            endpoint: r.with_default(
                "endpoint",
                flags.endpoint,
                file.endpoint,
                DEFAULT_BASE_URL.to_string(),
            )?,
            api_key_env: r.with_default(
                "api_key_env",
                flags.api_key_env,
                file.api_key_env,
                DEFAULT_API_KEY_ENV.to_string(),
            )?,
            model: r.optional("model", flags.model, file.model)?,
            topology: r.with_default(
                "topology",
                flags.topology,
                parse_file_value("topology", file.topology)?,
                Topology::Sequential,
            )?,
            templates: r.optional("templates", flags.templates, file.templates)?,
            cache: r.optional("cache", flags.cache, file.cache)?,
            mock_fixtures: r.optional("mock_fixtures", flags.mock_fixtures, file.mock_fixtures)?,
            parallelism: r.with_default(
                "parallelism",
                flags.parallelism,
                file.parallelism,
                default_parallelism,
            )?,
            max_in_flight: r.with_default(
                "max_in_flight",
                flags.max_in_flight,
                file.max_in_flight,
                4,
            )?,
            merge_policy: r.with_default(
                "merge_policy",
                flags.merge_policy,
                parse_file_value("merge_policy", file.merge_policy)?,
                MergePolicy::default(),
            )?,
            verify_sees_hint: r.with_default(
                "verify_sees_hint",
                flags.verify_sees_hint,
                file.verify_sees_hint,
                false,
            )?,
            origins: Vec::new(),
        };
        if config.parallelism == 0 {
            return Err(CliError::Input("parallelism must be at least 1".into()));
        }
        if config.max_in_flight == 0 {
            return Err(CliError::Input("max_in_flight must be at least 1".into()));
        }
        Ok(CliConfig {
            origins: r.origins,
            ..config
        })
    }

    pub fn origin(&self, key: &str) -> Option<Origin> {
        self.origins
            .iter()
            .find(|(k, _)| *k == key)
            .map(|(_, o)| *o)
    }

    /// The model name, required by every mode that goes through the gateway.
    pub fn require_model(&self) -> Result<&str, CliError> {
        self.model.as_deref().ok_or_else(|| {
            CliError::Input(format!(
                "{} mode needs a model: pass --model, set {ENV_PREFIX}MODEL, or set `model` in the config file",
                self.mode
            ))
        })
    }

    pub fn require_cache(&self) -> Result<&Path, CliError> {
        self.cache.as_deref().ok_or_else(|| {
            CliError::Input(format!(
                "{} mode needs a cache file: pass --cache, set {ENV_PREFIX}CACHE, or set `cache` in the config file",
                self.mode
            ))
        })
    }

    /// TOML-style listing with the origin of each value. The credential
    /// itself is never printed.
    pub fn render(&self, env: &HashMap<String, String>) -> String {
        let s = |v: &str| toml::Value::String(v.to_string()).to_string();
        let p = |v: &Option<PathBuf>| v.as_ref().map(|p| s(&p.display().to_string()));
        let rows: Vec<(&str, Option<String>)> = vec![
            ("mode", Some(s(self.mode.as_str()))),
            ("endpoint", Some(s(&self.endpoint))),
            ("api_key_env", Some(s(&self.api_key_env))),
            ("model", self.model.as_deref().map(s)),
            ("topology", Some(s(self.topology.as_str()))),
            ("templates", p(&self.templates)),
            ("cache", p(&self.cache)),
            ("mock_fixtures", p(&self.mock_fixtures)),
            ("parallelism", Some(self.parallelism.to_string())),
            ("max_in_flight", Some(self.max_in_flight.to_string())),
            ("merge_policy", Some(s(self.merge_policy.as_str()))),
            ("verify_sees_hint", Some(self.verify_sees_hint.to_string())),
        ];
        let mut out = String::new();
        for (key, value) in rows {
            let origin = self.origin(key).unwrap_or(Origin::Default).as_str();
            match value {
                Some(v) => out.push_str(&format!("{key} = {v}  # {origin}\n")),
                None => out.push_str(&format!("# {key} unset\n")),
            }
        }
        let key_state = if env.get(&self.api_key_env).is_some_and(|v| !v.is_empty()) {
            "set"
        } else {
            "not set"
        };
        out.push_str(&format!(
            "# credential ${}: {key_state}\n",
            self.api_key_env
        ));
        out
    }
}
