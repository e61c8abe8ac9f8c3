//! TOML run configuration.

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use super::CliError;
use crate::corpus::{preset, BenchmarkSpec};
use crate::evalharness::GapMode;
use crate::par::ExecMode;
use crate::rewrite::RewriteConfig;
use crate::score::SelectionPolicy;

pub const ENV_PROVIDER_URL: &str = "CLEANEVAL_PROVIDER_URL";
pub const ENV_PROVIDER_MODEL: &str = "CLEANEVAL_PROVIDER_MODEL";
pub const ENV_API_KEY: &str = "CLEANEVAL_API_KEY";
pub const ENV_SCORER_URL: &str = "CLEANEVAL_SCORER_URL";

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize, clap::ValueEnum)]
#[serde(rename_all = "lowercase")]
pub enum ProviderKind {
    #[default]
    Mock,
    Remote,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize, clap::ValueEnum)]
#[serde(rename_all = "lowercase")]
pub enum ScorerKind {
    /// Lexical unigram F1, labelled as a fallback in every report.
    #[default]
    Fallback,
    Remote,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ProviderSettings {
    pub kind: ProviderKind,
    pub endpoint: Option<String>,
    pub model: Option<String>,
    pub max_attempts: u32,
    pub backoff_ms: u64,
    pub timeout_secs: u64,
    /// Response cache directory. Defaults to `<output_dir>/cache` for the
    /// remote provider; the mock provider is uncached unless this is set.
    pub cache_dir: Option<PathBuf>,
    /// Worker threads for data-parallel stages; unset uses all cores.
    pub parallelism: Option<usize>,
    /// Unigram F1 the mock equivalence judge requires.
    pub mock_equivalence_threshold: f64,
}

impl Default for ProviderSettings {
    fn default() -> Self {
        ProviderSettings {
            kind: ProviderKind::Mock,
            endpoint: None,
            model: None,
            max_attempts: 3,
            backoff_ms: 500,
            timeout_secs: 120,
            cache_dir: None,
            parallelism: None,
            mock_equivalence_threshold: 0.4,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ScorerSettings {
    pub kind: ScorerKind,
    /// Base URL of the scoring service (`/score`, `/healthz`).
    pub url: Option<String>,
    pub timeout_secs: u64,
}

impl Default for ScorerSettings {
    fn default() -> Self {
        ScorerSettings {
            kind: ScorerKind::Fallback,
            url: None,
            timeout_secs: 30,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct EvalSettings {
    pub shots: usize,
    /// Compute the second gap term as |cal − contam| instead of |cal − clean|.
    pub literal_gap: bool,
}

impl Default for EvalSettings {
    fn default() -> Self {
        EvalSettings {
            shots: 1,
            literal_gap: false,
        }
    }
}

impl EvalSettings {
    pub fn gap_mode(&self) -> GapMode {
        if self.literal_gap {
            GapMode::AsPrinted
        } else {
            GapMode::CalVsClean
        }
    }
}

fn default_true() -> bool {
    true
}

fn default_output_dir() -> PathBuf {
    PathBuf::from("out")
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunConfig {
    /// Preset name, or a key of `benchmarks`.
    pub benchmark: String,
    #[serde(default)]
    pub benchmarks: BTreeMap<String, BenchmarkSpec>,
    /// Test-split JSONL to calibrate and evaluate.
    pub dataset: PathBuf,
    /// Training-split JSONL for clean-setting demonstrations.
    #[serde(default)]
    pub train_pool: Option<PathBuf>,
    /// Calibrated JSONL; defaults to `<output_dir>/calibrated.jsonl`.
    #[serde(default)]
    pub calibrated: Option<PathBuf>,
    #[serde(default = "default_output_dir")]
    pub output_dir: PathBuf,
    #[serde(default)]
    pub seed: u64,
    #[serde(default)]
    pub skip_errors: bool,
    #[serde(default = "default_true")]
    pub detector: bool,
    #[serde(default)]
    pub policy: SelectionPolicy,
    #[serde(default = "default_true")]
    pub parallel: bool,
    #[serde(default)]
    pub rewrite: RewriteConfig,
    #[serde(default)]
    pub provider: ProviderSettings,
    #[serde(default)]
    pub scorer: ScorerSettings,
    #[serde(default)]
    pub eval: EvalSettings,
}

impl RunConfig {
    pub fn new(
        benchmark: &str,
        dataset: impl Into<PathBuf>,
        output_dir: impl Into<PathBuf>,
    ) -> Self {
        RunConfig {
            benchmark: benchmark.to_string(),
            benchmarks: BTreeMap::new(),
            dataset: dataset.into(),
            train_pool: None,
            calibrated: None,
            output_dir: output_dir.into(),
            seed: 0,
            skip_errors: false,
            detector: true,
            policy: SelectionPolicy::default(),
            parallel: true,
            rewrite: RewriteConfig::default(),
            provider: ProviderSettings::default(),
            scorer: ScorerSettings::default(),
            eval: EvalSettings::default(),
        }
    }

    /// Parses TOML; relative paths are taken relative to `base`.
    pub fn from_toml(text: &str, base: &Path) -> Result<Self, CliError> {
        let mut cfg: RunConfig =
            toml::from_str(text).map_err(|e| CliError::Config(e.to_string()))?;
        cfg.resolve_paths(base);
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn load(path: &Path) -> Result<Self, CliError> {
        let text = std::fs::read_to_string(path).map_err(|source| CliError::Io {
            path: path.display().to_string(),
            source,
        })?;
        let base = path.parent().unwrap_or(Path::new("."));
        Self::from_toml(&text, base)
    }

    fn resolve_paths(&mut self, base: &Path) {
        let fix = |p: &mut PathBuf| {
            if p.is_relative() {
                *p = base.join(&*p);
            }
        };
        fix(&mut self.dataset);
        fix(&mut self.output_dir);
        for p in [
            &mut self.train_pool,
            &mut self.calibrated,
            &mut self.provider.cache_dir,
        ]
        .into_iter()
        .flatten()
        {
            fix(p);
        }
    }

    pub fn validate(&self) -> Result<(), CliError> {
        self.benchmark_spec()?;
        for spec in self.benchmarks.values() {
            spec.validate()?;
        }
        if self.eval.shots == 0 {
            return Err(CliError::Config("eval.shots must be at least 1".into()));
        }
        Ok(())
    }

    /// Inline benchmark definitions take precedence over presets.
    pub fn benchmark_spec(&self) -> Result<BenchmarkSpec, CliError> {
        self.benchmarks
            .get(&self.benchmark)
            .cloned()
            .or_else(|| preset(&self.benchmark))
            .ok_or_else(|| CliError::UnknownBenchmark(self.benchmark.clone()))
    }

    pub fn exec_mode(&self) -> ExecMode {
        if self.parallel {
            ExecMode::Parallel
        } else {
            ExecMode::Sequential
        }
    }

    pub fn calibrated_path(&self) -> PathBuf {
        self.calibrated
            .clone()
            .unwrap_or_else(|| self.output_dir.join("calibrated.jsonl"))
    }

    pub fn cache_dir(&self) -> Option<PathBuf> {
        match (&self.provider.cache_dir, self.provider.kind) {
            (Some(d), _) => Some(d.clone()),
            (None, ProviderKind::Remote) => Some(self.output_dir.join("cache")),
            (None, ProviderKind::Mock) => None,
        }
    }

    /// Remote endpoint, model and key, environment first.
    pub fn remote_settings(&self) -> (Option<String>, Option<String>, Option<String>) {
        let env = |k: &str| std::env::var(k).ok().filter(|v| !v.is_empty());
        (
            env(ENV_PROVIDER_URL).or_else(|| self.provider.endpoint.clone()),
            env(ENV_PROVIDER_MODEL).or_else(|| self.provider.model.clone()),
            env(ENV_API_KEY),
        )
    }

    pub fn scorer_url(&self) -> Option<String> {
        std::env::var(ENV_SCORER_URL)
            .ok()
            .filter(|v| !v.is_empty())
            .or_else(|| self.scorer.url.clone())
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rewrite::CompositionOrder;

    #[test]
    fn minimal_config_uses_defaults() {
        let cfg = RunConfig::from_toml(
            "benchmark = \"sst2\"\ndataset = \"data/test.jsonl\"\n",
            Path::new("/w"),
        )
        .unwrap();
        assert_eq!(cfg.seed, 0);
        assert!(cfg.detector);
        assert_eq!(cfg.policy, SelectionPolicy::Lowest);
        assert_eq!(cfg.dataset, PathBuf::from("/w/data/test.jsonl"));
        assert_eq!(cfg.output_dir, PathBuf::from("/w/out"));
        assert_eq!(
            cfg.calibrated_path(),
            PathBuf::from("/w/out/calibrated.jsonl")
        );
        assert_eq!(cfg.rewrite.candidate_count(), 16);
        assert_eq!(cfg.cache_dir(), None);
    }

    #[test]
    fn full_config_parses() {
        let text = r#"
benchmark = "tiny"
dataset = "/abs/test.jsonl"
train_pool = "train.jsonl"
seed = 9
detector = false
policy = "highest"

[benchmarks.tiny]
name = "tiny"
task_kind = "classification"
instruction = "Label it."
calib_fields = ["text"]
label_set = ["a", "b"]

[rewrite]
levels = ["simplify"]
pivots = ["de"]
order = "bt-para"

[rewrite.prompts]
translate = "To {target} from {source}: {text}"

[provider]
kind = "remote"
endpoint = "http://localhost:1/v1/completions"
model = "m"

[scorer]
kind = "remote"
url = "http://localhost:2"

[eval]
shots = 2
literal_gap = true
"#;
        let cfg = RunConfig::from_toml(text, Path::new("/w")).unwrap();
        assert_eq!(cfg.benchmark_spec().unwrap().instruction, "Label it.");
        assert_eq!(cfg.train_pool, Some(PathBuf::from("/w/train.jsonl")));
        assert_eq!(cfg.dataset, PathBuf::from("/abs/test.jsonl"));
        assert_eq!(cfg.rewrite.order, CompositionOrder::BtThenPara);
        assert_eq!(cfg.rewrite.candidate_count(), 4);
        assert_eq!(cfg.eval.gap_mode(), GapMode::AsPrinted);
        assert_eq!(cfg.cache_dir(), Some(PathBuf::from("/w/out/cache")));
        assert_eq!(cfg.policy, SelectionPolicy::Highest);
    }

    #[test]
    fn bad_configs_rejected() {
        let base = Path::new("/w");
        assert!(matches!(
            RunConfig::from_toml("benchmark = \"nope\"\ndataset = \"x\"\n", base),
            Err(CliError::UnknownBenchmark(_))
        ));
        assert!(RunConfig::from_toml("benchmark = \"sst2\"\n", base).is_err());
        assert!(
            RunConfig::from_toml("benchmark = \"sst2\"\ndataset = \"x\"\ntypo = 1\n", base)
                .is_err()
        );
        assert!(RunConfig::from_toml(
            "benchmark = \"sst2\"\ndataset = \"x\"\n[eval]\nshots = 0\n",
            base
        )
        .is_err());
    }
}
