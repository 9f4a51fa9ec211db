//! Run configuration: one TOML document with a section per module, strict
//! key checking and `REPRL_SECTION__KEY` environment overrides.

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::decision_set::{DecisionSetConfig, Provenance};
use crate::drivers::{EsConfig, PgConfig};
use crate::environments::{Environment, GridWorldEnv};
use crate::error::{Error, Result};
use crate::linear_bandit::{SelectionMethod, SelectionRule, DEFAULT_LAMBDA};
use crate::representation::RepresentationConfig;

pub const ENV_PREFIX: &str = "REPRL_";

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum DriverKind {
    Es,
    #[default]
    Repes,
    Reppg,
    Reinforce,
}

impl DriverKind {
    pub fn name(self) -> &'static str {
        match self {
            DriverKind::Es => "es",
            DriverKind::Repes => "repes",
            DriverKind::Reppg => "reppg",
            DriverKind::Reinforce => "reinforce",
        }
    }

    pub fn parse(name: &str) -> Result<Self> {
        match name {
            "es" => Ok(DriverKind::Es),
            "repes" => Ok(DriverKind::Repes),
            "reppg" => Ok(DriverKind::Reppg),
            "reinforce" => Ok(DriverKind::Reinforce),
            other => Err(Error::config("run.driver", format!("unknown driver `{other}`"))),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct RunSection {
    pub driver: DriverKind,
    pub rounds: usize,
    pub seeds: Vec<u64>,
    pub out_dir: String,
    /// Record elapsed seconds in the metrics; off keeps files reproducible.
    pub wall_clock: bool,
}

impl Default for RunSection {
    fn default() -> Self {
        Self { driver: DriverKind::Repes, rounds: 300, seeds: vec![1], out_dir: "runs".into(), wall_clock: false }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct PolicySection {
    /// Hidden widths of softmax policies; ignored by linear policies.
    pub hidden: Vec<usize>,
}

impl Default for PolicySection {
    fn default() -> Self {
        Self { hidden: vec![32, 32] }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct BanditConfig {
    pub lambda: f64,
    pub rule: SelectionMethod,
    pub alpha: f64,
    pub sigma: f64,
    pub ts_per_candidate: bool,
    /// Rounds of history the bandit is rebuilt from; 0 keeps everything.
    pub history_window: usize,
}

impl Default for BanditConfig {
    fn default() -> Self {
        Self {
            lambda: DEFAULT_LAMBDA,
            rule: SelectionMethod::Ts,
            alpha: 1.0,
            sigma: 1.0,
            ts_per_candidate: false,
            history_window: 0,
        }
    }
}

impl BanditConfig {
    pub fn rule(&self) -> SelectionRule {
        SelectionRule { method: self.rule, alpha: self.alpha, sigma: self.sigma, ts_per_candidate: self.ts_per_candidate }
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.lambda > 0.0 && self.lambda.is_finite()) {
            return Err(Error::config("bandit.lambda", "must be positive"));
        }
        self.rule().validate()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunConfig {
    #[serde(default)]
    pub run: RunSection,
    #[serde(default = "default_env")]
    pub env: Environment,
    #[serde(default)]
    pub policy: PolicySection,
    #[serde(default)]
    pub es: EsConfig,
    #[serde(default)]
    pub pg: PgConfig,
    #[serde(default)]
    pub bandit: BanditConfig,
    #[serde(default)]
    pub representation: RepresentationConfig,
    #[serde(default)]
    pub decision_set: DecisionSetConfig,
}

fn default_env() -> Environment {
    Environment::GridWorld(GridWorldEnv::default())
}

impl Default for RunConfig {
    fn default() -> Self {
        Self {
            run: RunSection::default(),
            env: default_env(),
            policy: PolicySection::default(),
            es: EsConfig::default(),
            pg: PgConfig::default(),
            bandit: BanditConfig::default(),
            representation: RepresentationConfig::default(),
            decision_set: DecisionSetConfig::default(),
        }
    }
}

impl RunConfig {
    /// Parses TOML text without environment overrides.
    pub fn from_toml(text: &str) -> Result<Self> {
        let table: toml::Table = text.parse().map_err(|e: toml::de::Error| parse_error(text, &e))?;
        Self::from_table(table)
    }

    /// Parses TOML text and applies `REPRL_SECTION__KEY=value` overrides
    /// taken from `vars`.
    pub fn from_toml_with_overrides<I, K, V>(text: &str, vars: I) -> Result<Self>
    where
        I: IntoIterator<Item = (K, V)>,
        K: AsRef<str>,
        V: AsRef<str>,
    {
        let mut table: toml::Table = text.parse().map_err(|e: toml::de::Error| parse_error(text, &e))?;
        for (k, v) in vars {
            if let Some(path) = k.as_ref().strip_prefix(ENV_PREFIX) {
                apply_override(&mut table, path, v.as_ref())?;
            }
        }
        Self::from_table(table)
    }

    fn from_table(table: toml::Table) -> Result<Self> {
        let value = toml::Value::Table(table);
        let cfg: RunConfig = serde_path_to_error::deserialize(value).map_err(|e| {
            let key = e.path().to_string();
            Error::config(if key == "." { "<root>".to_string() } else { key }, e.into_inner().to_string())
        })?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn to_toml(&self) -> Result<String> {
        toml::to_string(self).map_err(|e| Error::config("<root>", e.to_string()))
    }

    pub fn validate(&self) -> Result<()> {
        self.env.validate()?;
        if self.policy.hidden.contains(&0) {
            return Err(Error::config("policy.hidden", "layer sizes must be positive"));
        }
        self.es.validate()?;
        self.pg.validate()?;
        self.bandit.validate()?;
        self.representation.validate()?;
        self.decision_set.validate()?;
        let discrete = self.env.policy_arch(&self.policy.hidden).n_actions().is_some();
        match self.run.driver {
            DriverKind::Repes if self.decision_set.kind != Provenance::PolicySpace => {
                return Err(Error::config("decision_set.kind", "the repes driver scores antithetic policy-space pairs only"));
            }
            DriverKind::Reppg | DriverKind::Reinforce if !discrete => {
                return Err(Error::config("env.kind", "policy-gradient drivers need a discrete-action environment"));
            }
            _ => {}
        }
        Ok(())
    }

    /// SHA-256 over the canonical serialization; independent of the seed
    /// passed to a run.
    pub fn hash(&self) -> Result<String> {
        let digest = Sha256::digest(self.to_toml()?.as_bytes());
        Ok(digest.iter().map(|b| format!("{b:02x}")).collect())
    }
}

fn parse_error(text: &str, e: &toml::de::Error) -> Error {
    let line = e.span().map_or(0, |s| text[..s.start.min(text.len())].lines().count().max(1));
    Error::Parse { line, message: e.message().to_string() }
}

fn parse_scalar(raw: &str) -> toml::Value {
    if let Ok(i) = raw.parse::<i64>() {
        return toml::Value::Integer(i);
    }
    if let Ok(f) = raw.parse::<f64>() {
        return toml::Value::Float(f);
    }
    if let Ok(b) = raw.parse::<bool>() {
        return toml::Value::Boolean(b);
    }
    toml::Value::String(raw.to_string())
}

/// `path` is `SECTION__KEY` (more `__` for nested tables), case-insensitive.
fn apply_override(table: &mut toml::Table, path: &str, raw: &str) -> Result<()> {
    let parts: Vec<String> = path.split("__").map(str::to_ascii_lowercase).collect();
    let key = parts.join(".");
    if parts.len() < 2 || parts.iter().any(String::is_empty) {
        return Err(Error::config(key, "override must name a section and a key"));
    }
    let (last, sections) = parts.split_last().expect("nonempty");
    let mut cur = table;
    for s in sections {
        let entry = cur.entry(s.clone()).or_insert_with(|| toml::Value::Table(toml::Table::new()));
        cur = entry
            .as_table_mut()
            .ok_or_else(|| Error::config(key.clone(), "overrides apply to scalar keys only"))?;
    }
    if matches!(cur.get(last), Some(toml::Value::Table(_) | toml::Value::Array(_))) {
        return Err(Error::config(key, "overrides apply to scalar keys only"));
    }
    let mut value = parse_scalar(raw);
    // keep floats floats when the file spelled them that way
    if let (Some(toml::Value::Float(_)), toml::Value::Integer(i)) = (cur.get(last), &value) {
        value = toml::Value::Float(*i as f64);
    }
    cur.insert(last.clone(), value);
    Ok(())
}
