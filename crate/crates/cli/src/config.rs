//! Flat dotted-key configuration.
//!
//! Keys may be written flat (`"backend.model" = "x"`) or as TOML tables; both
//! flatten to the same dotted names. Precedence is `--set` flag, then file,
//! then built-in default. Relative paths resolve against the config file's
//! directory (or the working directory for flags and defaults).

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};
use std::time::Duration;

use relprior_core::backend::{DecodingParams, HttpConfig, NoiseConfig, RetryPolicy};
use relprior_core::finetune::{SamplingConfig, SamplingMode};
use relprior_core::pipeline::{FusionMode, PipelineConfig, StageDecoding};
use relprior_core::task::TaskKind;
use relprior_core::Error;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Engine {
    Oracle,
    Http,
    Replay,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Paths {
    pub rel_info: Option<PathBuf>,
    pub aliases: Option<PathBuf>,
    pub templates: Option<PathBuf>,
    pub run_log: PathBuf,
    pub output_dir: PathBuf,
}

#[derive(Debug, Clone, PartialEq)]
pub struct BackendSettings {
    pub engine: Engine,
    pub endpoint: String,
    pub model: String,
    pub api_key_env: Option<String>,
    pub decoding: DecodingParams,
    /// Per-stage decoding overrides, applied field by field.
    pub stage_temperature: BTreeMap<TaskKind, f64>,
    pub stage_top_p: BTreeMap<TaskKind, f64>,
    pub stage_max_tokens: BTreeMap<TaskKind, u32>,
    pub max_concurrency: usize,
    pub retries: u32,
    pub timeout_secs: u64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct AppConfig {
    pub splits: BTreeMap<String, PathBuf>,
    pub paths: Paths,
    pub backend: BackendSettings,
    pub oracle: NoiseConfig,
    pub sampling: SamplingConfig,
    pub pipeline: PipelineConfig,
    pub permissive: bool,
}

impl Default for AppConfig {
    fn default() -> Self {
        Self {
            splits: BTreeMap::new(),
            paths: Paths {
                rel_info: None,
                aliases: None,
                templates: None,
                run_log: PathBuf::from("runs/run_log.jsonl"),
                output_dir: PathBuf::from("out"),
            },
            backend: BackendSettings {
                engine: Engine::Oracle,
                endpoint: HttpConfig::default().endpoint,
                model: HttpConfig::default().model,
                api_key_env: None,
                decoding: DecodingParams::default(),
                stage_temperature: BTreeMap::new(),
                stage_top_p: BTreeMap::new(),
                stage_max_tokens: BTreeMap::new(),
                max_concurrency: 4,
                retries: 3,
                timeout_secs: 120,
            },
            oracle: NoiseConfig::default(),
            sampling: SamplingConfig::default(),
            pipeline: PipelineConfig::default(),
            permissive: false,
        }
    }
}

fn bad(key: &str, expected: &str, got: &toml::Value) -> Error {
    Error::Validation(format!("config key {key}: expected {expected}, got {got}"))
}

fn as_str<'v>(key: &str, v: &'v toml::Value) -> Result<&'v str, Error> {
    v.as_str().ok_or_else(|| bad(key, "a string", v))
}

fn as_bool(key: &str, v: &toml::Value) -> Result<bool, Error> {
    v.as_bool().ok_or_else(|| bad(key, "true or false", v))
}

fn as_f64(key: &str, v: &toml::Value) -> Result<f64, Error> {
    match v {
        toml::Value::Float(f) => Ok(*f),
        toml::Value::Integer(i) => Ok(*i as f64),
        _ => Err(bad(key, "a number", v)),
    }
}

fn as_u64(key: &str, v: &toml::Value, min: u64) -> Result<u64, Error> {
    match v.as_integer() {
        Some(i) if i >= min as i64 => Ok(i as u64),
        _ => Err(bad(key, &format!("an integer >= {min}"), v)),
    }
}

fn open_unit(key: &str, v: &toml::Value) -> Result<f64, Error> {
    let x = as_f64(key, v)?;
    if x > 0.0 && x < 1.0 {
        Ok(x)
    } else {
        Err(bad(key, "a number in (0, 1)", v))
    }
}

fn closed_unit(key: &str, v: &toml::Value) -> Result<f64, Error> {
    let x = as_f64(key, v)?;
    if (0.0..=1.0).contains(&x) {
        Ok(x)
    } else {
        Err(bad(key, "a number in [0, 1]", v))
    }
}

fn flatten(prefix: &str, table: &toml::Table, out: &mut Vec<(String, toml::Value)>) {
    for (k, v) in table {
        let key = if prefix.is_empty() { k.clone() } else { format!("{prefix}.{k}") };
        match v {
            toml::Value::Table(t) => flatten(&key, t, out),
            other => out.push((key, other.clone())),
        }
    }
}

/// Parses the right-hand side of `--set key=value`: a TOML value if it
/// parses as one, otherwise a bare string.
pub fn parse_override(assignment: &str) -> Result<(String, toml::Value), Error> {
    let (key, raw) = assignment
        .split_once('=')
        .ok_or_else(|| Error::Validation(format!("override {assignment:?} is not of the form key=value")))?;
    let key = key.trim().to_string();
    let raw = raw.trim();
    let value = format!("v = {raw}")
        .parse::<toml::Table>()
        .ok()
        .and_then(|mut t| t.remove("v"))
        .unwrap_or_else(|| toml::Value::String(raw.to_string()));
    Ok((key, value))
}

impl AppConfig {
    /// Loads `path` (if any), applies overrides, and checks referenced inputs.
    pub fn load(path: Option<&Path>, overrides: &[String]) -> Result<Self, Error> {
        let mut config = AppConfig::default();
        if let Some(path) = path {
            let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
            let table: toml::Table =
                text.parse().map_err(|e: toml::de::Error| Error::Validation(format!("{}: {e}", path.display())))?;
            let base = path.parent().map(Path::to_path_buf).unwrap_or_default();
            let mut entries = Vec::new();
            flatten("", &table, &mut entries);
            for (key, value) in entries {
                config.apply(&key, &value, &base)?;
            }
        }
        for o in overrides {
            let (key, value) = parse_override(o)?;
            config.apply(&key, &value, Path::new(""))?;
        }
        config.check()?;
        Ok(config)
    }

    pub fn apply(&mut self, key: &str, v: &toml::Value, base: &Path) -> Result<(), Error> {
        let path = |v: &toml::Value| -> Result<PathBuf, Error> { Ok(base.join(as_str(key, v)?)) };
        let stage_of = |name: &str| name.parse::<TaskKind>().ok();
        let parts: Vec<&str> = key.split('.').collect();
        match parts.as_slice() {
            ["splits", name] => {
                self.splits.insert(name.to_string(), path(v)?);
            }
            ["paths", "rel_info"] => self.paths.rel_info = Some(path(v)?),
            ["paths", "aliases"] => self.paths.aliases = Some(path(v)?),
            ["paths", "templates"] => self.paths.templates = Some(path(v)?),
            ["paths", "run_log"] => self.paths.run_log = path(v)?,
            ["paths", "output_dir"] => self.paths.output_dir = path(v)?,
            ["backend", "engine"] => {
                self.backend.engine = match as_str(key, v)? {
                    "oracle" => Engine::Oracle,
                    "http" => Engine::Http,
                    "replay" => Engine::Replay,
                    _ => return Err(bad(key, "one of oracle, http, replay", v)),
                }
            }
            ["backend", "endpoint"] => self.backend.endpoint = as_str(key, v)?.to_string(),
            ["backend", "model"] => self.backend.model = as_str(key, v)?.to_string(),
            ["backend", "api_key_env"] => {
                let name = as_str(key, v)?;
                self.backend.api_key_env = (!name.is_empty()).then(|| name.to_string());
            }
            ["backend", "temperature"] => self.backend.decoding.temperature = open_unit(key, v)?,
            ["backend", "top_p"] => self.backend.decoding.top_p = open_unit(key, v)?,
            ["backend", "max_tokens"] => {
                self.backend.decoding.max_tokens = as_u64(key, v, 1)?.min(u32::MAX as u64) as u32
            }
            ["backend", stage, field] if stage_of(stage).is_some() => {
                let kind = stage_of(stage).expect("checked");
                match *field {
                    "temperature" => {
                        self.backend.stage_temperature.insert(kind, open_unit(key, v)?);
                    }
                    "top_p" => {
                        self.backend.stage_top_p.insert(kind, open_unit(key, v)?);
                    }
                    "max_tokens" => {
                        self.backend.stage_max_tokens.insert(kind, as_u64(key, v, 1)?.min(u32::MAX as u64) as u32);
                    }
                    _ => return Err(unknown(key)),
                }
            }
            ["backend", "max_concurrency"] => self.backend.max_concurrency = as_u64(key, v, 1)? as usize,
            ["backend", "retries"] => self.backend.retries = as_u64(key, v, 0)?.min(100) as u32,
            ["backend", "timeout_secs"] => self.backend.timeout_secs = as_u64(key, v, 1)?,
            ["oracle", "omission_rate"] => self.oracle.omission_rate = closed_unit(key, v)?,
            ["oracle", "spurious_rate"] => self.oracle.spurious_rate = closed_unit(key, v)?,
            ["oracle", "label_corruption_rate"] => self.oracle.label_corruption_rate = closed_unit(key, v)?,
            ["oracle", "seed"] => self.oracle.seed = as_u64(key, v, 0)?,
            ["sampling", "neg_ratio"] => {
                let x = as_f64(key, v)?;
                if !(x.is_finite() && x >= 0.0) {
                    return Err(bad(key, "a number >= 0", v));
                }
                self.sampling.neg_ratio = x;
            }
            ["sampling", "seed"] => self.sampling.seed = as_u64(key, v, 0)?,
            ["sampling", "mode"] => {
                self.sampling.mode =
                    as_str(key, v)?.parse::<SamplingMode>().map_err(|_| bad(key, "document-level or per-pair", v))?
            }
            ["pipeline", "fusion"] => {
                self.pipeline.fusion =
                    as_str(key, v)?.parse::<FusionMode>().map_err(|_| bad(key, "union or strict", v))?
            }
            ["pipeline", "epf_enumerate_pairs"] => self.pipeline.epf_enumerate_pairs = as_bool(key, v)?,
            ["pipeline", "token_budget"] => {
                let n = as_u64(key, v, 0)?;
                self.pipeline.token_budget = (n > 0).then_some(n as usize);
            }
            ["pipeline", "chunk_passes"] => {
                self.pipeline.chunk_passes = match as_u64(key, v, 1)? {
                    n @ (1 | 2) => n as u8,
                    _ => return Err(bad(key, "1 or 2", v)),
                }
            }
            ["pipeline", "rm_per_relation"] => self.pipeline.rm_per_relation = as_bool(key, v)?,
            ["corpus", "permissive"] => self.permissive = as_bool(key, v)?,
            _ => return Err(unknown(key)),
        }
        Ok(())
    }

    fn check(&mut self) -> Result<(), Error> {
        for (name, p) in [
            ("paths.rel_info", &self.paths.rel_info),
            ("paths.aliases", &self.paths.aliases),
            ("paths.templates", &self.paths.templates),
        ] {
            if let Some(p) = p {
                if !p.exists() {
                    return Err(Error::Validation(format!("config key {name}: {} does not exist", p.display())));
                }
            }
        }
        for (name, p) in &self.splits {
            if !p.exists() {
                return Err(Error::Validation(format!("config key splits.{name}: {} does not exist", p.display())));
            }
        }
        self.pipeline.decoding = self.stage_decoding();
        self.pipeline.validate()
    }

    fn stage_decoding(&self) -> StageDecoding {
        let mut d = StageDecoding::uniform(self.backend.decoding);
        for kind in TaskKind::ALL {
            let slot = match kind {
                TaskKind::Epf => &mut d.epf,
                TaskKind::Rc => &mut d.rc,
                TaskKind::Head => &mut d.head,
                TaskKind::Tail => &mut d.tail,
            };
            if let Some(&t) = self.backend.stage_temperature.get(&kind) {
                slot.temperature = t;
            }
            if let Some(&p) = self.backend.stage_top_p.get(&kind) {
                slot.top_p = p;
            }
            if let Some(&m) = self.backend.stage_max_tokens.get(&kind) {
                slot.max_tokens = m;
            }
        }
        d
    }

    pub fn split(&self, name: &str) -> Result<&Path, Error> {
        self.splits.get(name).map(PathBuf::as_path).ok_or_else(|| {
            let known: Vec<&str> = self.splits.keys().map(String::as_str).collect();
            Error::Validation(format!("split {name:?} is not configured (known: {})", known.join(", ")))
        })
    }

    pub fn http_config(&self) -> HttpConfig {
        HttpConfig {
            endpoint: self.backend.endpoint.clone(),
            model: self.backend.model.clone(),
            api_key_env: self.backend.api_key_env.clone(),
            timeout: Duration::from_secs(self.backend.timeout_secs),
            max_concurrency: self.backend.max_concurrency,
            retry: RetryPolicy { max_attempts: self.backend.retries + 1, ..RetryPolicy::default() },
        }
    }
}

fn unknown(key: &str) -> Error {
    Error::Validation(format!("unknown config key {key}"))
}
