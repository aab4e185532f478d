//! Application configuration (TOML) and named task profiles.

use std::path::{Path, PathBuf};
use std::sync::Arc;
use std::time::Duration;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::bench::{Dist, ExperimentConfig, LatencyModel};
use crate::kernel::LossConfig;
use crate::plugins::{
    Bm25Params, CalculatorPlugin, CodeConfig, CodePlugin, FinishPlugin, SearchIndex, SearchPlugin, ShellConfig,
    ShellPlugin, SleepPlugin, SqlConfig, SqlPlugin,
};
use crate::rollout::{RewardKind, RolloutLimits};
use crate::server::{ServerSettings, ToolRegistry};

#[derive(Debug, Error)]
pub enum ConfigError {
    #[error("cannot read {path}: {msg}")]
    Read { path: PathBuf, msg: String },
    #[error("invalid config: {0}")]
    Invalid(String),
    #[error("unknown profile {0:?} (expected math, search, sql or deepsearch)")]
    UnknownProfile(String),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Phase {
    Train,
    #[default]
    Eval,
}

/// Limits, stop tokens and reward of one task family.
#[derive(Debug, Clone, PartialEq)]
pub struct Profile {
    pub name: &'static str,
    pub train: RolloutLimits,
    pub eval: RolloutLimits,
    pub stop_tokens: &'static [&'static str],
    pub reward: RewardKind,
}

impl Profile {
    pub fn limits(&self, phase: Phase) -> RolloutLimits {
        match phase {
            Phase::Train => self.train,
            Phase::Eval => self.eval,
        }
    }
}

const fn limits(turns: usize, prompt: usize, response: usize, action: usize, obs: usize) -> RolloutLimits {
    RolloutLimits {
        max_turns: turns,
        max_prompt_tokens: prompt,
        max_response_tokens: response,
        max_action_tokens: action,
        max_obs_tokens: obs,
        episode_timeout_ms: None,
    }
}

pub const PROFILES: &[Profile] = &[
    Profile {
        name: "math",
        train: limits(1, 1024, 3072, 2048, 512),
        eval: limits(4, 1024, 3072, 2048, 512),
        stop_tokens: &["```output"],
        reward: RewardKind::Math,
    },
    Profile {
        name: "search",
        train: limits(2, 4096, 4096, 2048, 1024),
        eval: limits(2, 4096, 4096, 2048, 1024),
        stop_tokens: &["</search>", "</answer>"],
        reward: RewardKind::Match,
    },
    Profile {
        name: "sql",
        train: limits(5, 4096, 4096, 2048, 1024),
        eval: limits(5, 4096, 4096, 2048, 1024),
        stop_tokens: &["</sql>"],
        reward: RewardKind::Match,
    },
    Profile {
        name: "deepsearch",
        train: limits(5, 2048, 8196, 8196, 4096),
        eval: limits(10, 2048, 32768, 16483, 4096),
        stop_tokens: &["</python>", "</search>"],
        reward: RewardKind::Deepsearch,
    },
];

pub fn profile(name: &str) -> Result<&'static Profile, ConfigError> {
    PROFILES.iter().find(|p| p.name == name).ok_or_else(|| ConfigError::UnknownProfile(name.to_owned()))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ServerSection {
    pub host: String,
    pub port: u16,
    /// Pool size: tool calls executing at once.
    pub max_concurrent: usize,
    pub per_call_timeout_ms: u64,
    pub timeout_slack_ms: u64,
    pub observation_cap_bytes: usize,
}

impl Default for ServerSection {
    fn default() -> Self {
        let s = ServerSettings::default();
        Self {
            host: "127.0.0.1".into(),
            port: 8700,
            max_concurrent: s.max_concurrent,
            per_call_timeout_ms: s.per_call_timeout_ms,
            timeout_slack_ms: s.timeout_slack_ms,
            observation_cap_bytes: s.observation_cap_bytes,
        }
    }
}

impl ServerSection {
    pub fn settings(&self) -> ServerSettings {
        ServerSettings {
            max_concurrent: self.max_concurrent,
            per_call_timeout_ms: self.per_call_timeout_ms,
            timeout_slack_ms: self.timeout_slack_ms,
            observation_cap_bytes: self.observation_cap_bytes,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SearchTool {
    /// JSON lines of `{doc_id, title, body}`.
    pub corpus: PathBuf,
    #[serde(default = "default_top_k")]
    pub top_k: usize,
    #[serde(default = "default_snippet")]
    pub snippet_bytes: usize,
}

fn default_top_k() -> usize {
    3
}

fn default_snippet() -> usize {
    300
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SqlTool {
    /// `.sql` script or SQLite file copied for each trajectory.
    pub fixture: PathBuf,
    #[serde(default = "default_sql_turns")]
    pub default_turns: u64,
    #[serde(default = "default_row_cap")]
    pub row_cap: usize,
    #[serde(default = "default_query_timeout")]
    pub query_timeout_ms: u64,
}

fn default_sql_turns() -> u64 {
    5
}

fn default_row_cap() -> usize {
    50
}

fn default_query_timeout() -> u64 {
    5000
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ProcessTool {
    #[serde(default = "default_proc_timeout")]
    pub timeout_ms: u64,
    #[serde(default = "default_output_cap")]
    pub output_cap_bytes: usize,
}

impl Default for ProcessTool {
    fn default() -> Self {
        Self { timeout_ms: default_proc_timeout(), output_cap_bytes: default_output_cap() }
    }
}

fn default_proc_timeout() -> u64 {
    5000
}

fn default_output_cap() -> usize {
    4096
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CodeTool {
    /// Program and arguments of the sandbox worker.
    pub worker_command: Vec<String>,
    #[serde(default = "default_proc_timeout")]
    pub timeout_ms: u64,
    #[serde(default = "default_output_cap")]
    pub output_cap_bytes: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ToolsSection {
    #[serde(default = "yes")]
    pub calculator: bool,
    #[serde(default = "yes")]
    pub finish: bool,
    #[serde(default)]
    pub sleep: bool,
    #[serde(default)]
    pub search: Option<SearchTool>,
    #[serde(default)]
    pub sql: Option<SqlTool>,
    #[serde(default)]
    pub shell: Option<ProcessTool>,
    #[serde(default)]
    pub code: Option<CodeTool>,
    /// Parent directory for per-trajectory databases and working
    /// directories. Defaults to the system temp directory.
    #[serde(default)]
    pub scratch_dir: Option<PathBuf>,
}

fn yes() -> bool {
    true
}

impl Default for ToolsSection {
    fn default() -> Self {
        Self {
            calculator: true,
            finish: true,
            sleep: false,
            search: None,
            sql: None,
            shell: None,
            code: None,
            scratch_dir: None,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Schedule {
    Sync,
    #[default]
    Async,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum PolicySpec {
    /// JSON lines of `{prompt, actions}`.
    Scripted {
        script: PathBuf,
        #[serde(default)]
        gen_latency: Option<Dist>,
    },
    Remote {
        url: String,
        #[serde(default = "default_policy_timeout")]
        timeout_ms: u64,
        #[serde(default = "default_max_tokens")]
        max_tokens: usize,
    },
}

fn default_policy_timeout() -> u64 {
    60_000
}

fn default_max_tokens() -> usize {
    2048
}

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RolloutSection {
    /// Task profile supplying limits and reward.
    #[serde(default)]
    pub profile: Option<String>,
    #[serde(default)]
    pub phase: Phase,
    /// Overrides the profile's limits.
    #[serde(default)]
    pub limits: Option<RolloutLimits>,
    #[serde(default)]
    pub reward: Option<RewardKind>,
    #[serde(default)]
    pub schedule: Schedule,
    /// Defaults to the batch size.
    #[serde(default)]
    pub max_parallel: Option<usize>,
    #[serde(default)]
    pub policy: Option<PolicySpec>,
    /// Tool server URL; when absent an in-process server is built from
    /// `[tools]`.
    #[serde(default)]
    pub server_url: Option<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct AppConfig {
    #[serde(default)]
    pub seed: u64,
    #[serde(default)]
    pub server: ServerSection,
    #[serde(default)]
    pub tools: ToolsSection,
    #[serde(default)]
    pub rollout: RolloutSection,
    #[serde(default)]
    pub loss: LossConfig,
    #[serde(default = "default_bench")]
    pub bench: ExperimentConfig,
}

/// Sixteen five-turn trajectories with uniform generation and tool latency.
pub fn default_bench() -> ExperimentConfig {
    ExperimentConfig {
        model: LatencyModel {
            gen: Dist::Uniform { lo_ms: 200.0, hi_ms: 1000.0 },
            tool: Dist::Uniform { lo_ms: 100.0, hi_ms: 2000.0 },
            seed: 0,
        },
        batch: 16,
        turns: vec![5],
        repeats: 1,
        max_parallel: None,
        measure: true,
    }
}

impl Default for AppConfig {
    fn default() -> Self {
        Self {
            seed: 0,
            server: ServerSection::default(),
            tools: ToolsSection::default(),
            rollout: RolloutSection::default(),
            loss: LossConfig::default(),
            bench: default_bench(),
        }
    }
}

impl AppConfig {
    pub fn from_toml_str(s: &str) -> Result<Self, ConfigError> {
        let cfg: Self = toml::from_str(s).map_err(|e| ConfigError::Invalid(e.to_string()))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn load(path: &Path) -> Result<Self, ConfigError> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| ConfigError::Read { path: path.to_owned(), msg: e.to_string() })?;
        let mut cfg = Self::from_toml_str(&text)?;
        if let Some(dir) = path.parent() {
            cfg.resolve_paths(dir);
        }
        Ok(cfg)
    }

    /// Makes relative file paths relative to `base` (the config file's
    /// directory).
    pub fn resolve_paths(&mut self, base: &Path) {
        let fix = |p: &mut PathBuf| {
            if p.is_relative() {
                *p = base.join(&*p);
            }
        };
        if let Some(s) = &mut self.tools.search {
            fix(&mut s.corpus);
        }
        if let Some(s) = &mut self.tools.sql {
            fix(&mut s.fixture);
        }
        if let Some(d) = &mut self.tools.scratch_dir {
            fix(d);
        }
        if let Some(PolicySpec::Scripted { script, .. }) = &mut self.rollout.policy {
            fix(script);
        }
    }

    pub fn validate(&self) -> Result<(), ConfigError> {
        let invalid = |e: &dyn std::fmt::Display| ConfigError::Invalid(e.to_string());
        let s = &self.server;
        if s.max_concurrent == 0 || s.per_call_timeout_ms == 0 || s.observation_cap_bytes == 0 {
            return Err(ConfigError::Invalid("server pool size, timeout and observation cap must be positive".into()));
        }
        if let Some(p) = &self.rollout.profile {
            profile(p)?;
        }
        if let Some(l) = &self.rollout.limits {
            l.validate().map_err(|e| invalid(&e))?;
        }
        if self.rollout.max_parallel == Some(0) {
            return Err(ConfigError::Invalid("rollout.max_parallel must be at least 1".into()));
        }
        if let Some(code) = &self.tools.code {
            if code.worker_command.is_empty() {
                return Err(ConfigError::Invalid("tools.code.worker_command is empty".into()));
            }
        }
        self.loss.validate().map_err(|e| invalid(&e))?;
        self.bench.validate().map_err(|e| invalid(&e))?;
        Ok(())
    }

    /// Limits in effect: explicit `[rollout.limits]`, else the profile's,
    /// else the defaults.
    pub fn rollout_limits(&self) -> Result<RolloutLimits, ConfigError> {
        if let Some(l) = self.rollout.limits {
            return Ok(l);
        }
        match &self.rollout.profile {
            Some(p) => Ok(profile(p)?.limits(self.rollout.phase)),
            None => Ok(RolloutLimits::default()),
        }
    }

    pub fn reward_kind(&self) -> Result<RewardKind, ConfigError> {
        if let Some(r) = self.rollout.reward {
            return Ok(r);
        }
        match &self.rollout.profile {
            Some(p) => Ok(profile(p)?.reward),
            None => Ok(RewardKind::Match),
        }
    }

    fn scratch(&self) -> PathBuf {
        self.tools.scratch_dir.clone().unwrap_or_else(std::env::temp_dir)
    }

    /// Builds the registry for the enabled tools. Fails on missing fixtures
    /// or corpora, naming the path.
    pub fn build_registry(&self) -> Result<ToolRegistry, ConfigError> {
        let invalid = |e: &dyn std::fmt::Display| ConfigError::Invalid(e.to_string());
        let t = &self.tools;
        let mut reg = ToolRegistry::new();
        if t.calculator {
            reg.register_tool(Arc::new(CalculatorPlugin::default())).map_err(|e| invalid(&e))?;
        }
        if t.finish {
            reg.register_tool(Arc::new(FinishPlugin::default())).map_err(|e| invalid(&e))?;
        }
        if t.sleep {
            reg.register_tool(Arc::new(SleepPlugin::default())).map_err(|e| invalid(&e))?;
        }
        if let Some(s) = &t.search {
            let index = SearchIndex::from_jsonl(&s.corpus, Bm25Params::default())
                .map_err(|e| ConfigError::Invalid(format!("search corpus {}: {e}", s.corpus.display())))?;
            let plugin = SearchPlugin::new(Arc::new(index), s.top_k, s.snippet_bytes);
            reg.register_tool(Arc::new(plugin)).map_err(|e| invalid(&e))?;
        }
        if let Some(s) = &t.sql {
            let plugin = SqlPlugin::new(SqlConfig {
                fixture: s.fixture.clone(),
                scratch_dir: self.scratch(),
                default_turns: s.default_turns,
                row_cap: s.row_cap,
                query_timeout: Duration::from_millis(s.query_timeout_ms),
            })
            .map_err(ConfigError::Invalid)?;
            reg.register_tool(Arc::new(plugin)).map_err(|e| invalid(&e))?;
        }
        if let Some(s) = &t.shell {
            let plugin = ShellPlugin::new(ShellConfig {
                scratch_dir: self.scratch(),
                timeout: Duration::from_millis(s.timeout_ms),
                output_cap_bytes: s.output_cap_bytes,
            });
            reg.register_tool(Arc::new(plugin)).map_err(|e| invalid(&e))?;
        }
        if let Some(c) = &t.code {
            let plugin = CodePlugin::new(CodeConfig {
                worker_command: c.worker_command.clone(),
                scratch_dir: self.scratch(),
                timeout: Duration::from_millis(c.timeout_ms),
                output_cap_bytes: c.output_cap_bytes,
            });
            reg.register_tool(Arc::new(plugin)).map_err(|e| invalid(&e))?;
        }
        Ok(reg)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn profiles_follow_the_reference_table() {
        let m = profile("math").unwrap();
        assert_eq!((m.eval.max_turns, m.eval.max_obs_tokens), (4, 512));
        assert_eq!(m.train.max_turns, 1);
        let s = profile("sql").unwrap();
        assert_eq!((s.eval.max_turns, s.eval.max_obs_tokens), (5, 1024));
        assert_eq!(profile("search").unwrap().stop_tokens, ["</search>", "</answer>"]);
        assert_eq!(profile("deepsearch").unwrap().eval.max_turns, 10);
        assert!(matches!(profile("vision"), Err(ConfigError::UnknownProfile(_))));
        for p in PROFILES {
            assert!(p.train.validate().is_ok() && p.eval.validate().is_ok());
        }
    }

    #[test]
    fn empty_config_is_default() {
        let cfg = AppConfig::from_toml_str("").unwrap();
        assert_eq!(cfg, AppConfig::default());
        assert_eq!(cfg.build_registry().unwrap().tool_ids(), ["calculator", "finish"]);
    }

    #[test]
    fn unknown_keys_are_rejected() {
        assert!(AppConfig::from_toml_str("sede = 1").is_err());
        assert!(AppConfig::from_toml_str("[server]\nprot = 1").is_err());
        assert!(AppConfig::from_toml_str("[tools.sql]\nfixture = 'x'\nrows = 3").is_err());
        assert!(AppConfig::from_toml_str("[rollout]\nprofile = 'vision'").is_err());
    }

    #[test]
    fn missing_fixture_is_named() {
        let cfg = AppConfig::from_toml_str("[tools.sql]\nfixture = '/nowhere/pets.sql'").unwrap();
        let err = cfg.build_registry().unwrap_err().to_string();
        assert!(err.contains("/nowhere/pets.sql"), "{err}");
    }

    #[test]
    fn limits_precedence() {
        let cfg = AppConfig::from_toml_str("[rollout]\nprofile = 'math'\nphase = 'train'").unwrap();
        assert_eq!(cfg.rollout_limits().unwrap().max_turns, 1);
        assert_eq!(cfg.reward_kind().unwrap(), RewardKind::Math);
        let cfg = AppConfig::from_toml_str(
            "[rollout]\nprofile = 'math'\n[rollout.limits]\nmax_turns = 9\nmax_prompt_tokens = 1\nmax_response_tokens = 1\nmax_action_tokens = 1\nmax_obs_tokens = 1",
        )
        .unwrap();
        assert_eq!(cfg.rollout_limits().unwrap().max_turns, 9);
    }

    #[test]
    fn committed_example_parses() {
        let path = Path::new(env!("CARGO_MANIFEST_DIR")).join("config/toolrl.example.toml");
        let cfg = AppConfig::load(&path).unwrap();
        assert_eq!(cfg.server.port, 8700);
        assert!(cfg.tools.sql.is_some());
    }
}
