//! Run configuration.
//!
//! One TOML or JSON file drives every subcommand. Relative paths resolve
//! against the directory holding the config file, and all randomness flows
//! from `rng_seed`.

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};
use std::time::Duration;

use serde::{Deserialize, Serialize};

use crate::bootstrap::LoopConfig;
use crate::corpus::CorpusFormat;
use crate::miner::DEFAULT_MIN_SUPPORT;
use crate::oracle::{SeedMode, SeedThresholds, TargetTypes, TemplateId, VerdictParams, DEFAULT_SLOTS, DEFAULT_TOP_K};
use crate::{Error, Result};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CorpusConfig {
    /// Unlabeled training corpus.
    pub train: PathBuf,
    /// Gold-annotated corpus used by `eval` and for seed precision.
    #[serde(default)]
    pub gold: Option<PathBuf>,
    /// Overrides the format guessed from each file extension.
    #[serde(default)]
    pub format: Option<CorpusFormat>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TypesConfig {
    pub names: Vec<String>,
    /// Extra anchor tokens per type for the label-word mapping.
    #[serde(default)]
    pub aliases: BTreeMap<String, Vec<String>>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct OracleConfig {
    #[serde(default)]
    pub mock_lexicon: Option<PathBuf>,
    #[serde(default)]
    pub remote_url: Option<String>,
    #[serde(default = "default_timeout")]
    pub timeout_secs: u64,
    #[serde(default = "default_top_k")]
    pub top_k: usize,
    #[serde(default = "default_slots")]
    pub slots: usize,
    #[serde(default = "default_min_cooccur")]
    pub min_cooccur: usize,
}

fn default_timeout() -> u64 {
    30
}
fn default_top_k() -> usize {
    DEFAULT_TOP_K
}
fn default_slots() -> usize {
    DEFAULT_SLOTS
}
fn default_min_cooccur() -> usize {
    2
}
fn default_min_support() -> usize {
    DEFAULT_MIN_SUPPORT
}
fn default_epochs() -> usize {
    3
}
fn default_finetune_template() -> TemplateId {
    TemplateId::T4
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SeedConfig {
    /// Defaults to the mode's own threshold when absent.
    #[serde(default)]
    pub p_t: Option<f64>,
    #[serde(default)]
    pub r_t: Option<usize>,
    /// Template the fine-tuning pairs are rendered with.
    #[serde(default = "default_finetune_template")]
    pub finetune_template: TemplateId,
    #[serde(default = "default_epochs")]
    pub finetune_epochs: usize,
}

impl Default for SeedConfig {
    fn default() -> Self {
        SeedConfig {
            p_t: None,
            r_t: None,
            finetune_template: default_finetune_template(),
            finetune_epochs: default_epochs(),
        }
    }
}

impl SeedConfig {
    pub fn thresholds(&self, mode: SeedMode) -> SeedThresholds {
        let d = mode.default_thresholds();
        SeedThresholds {
            p_t: self.p_t.unwrap_or(d.p_t),
            r_t: self.r_t.unwrap_or(d.r_t),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct MinerConfig {
    #[serde(default = "default_min_support")]
    pub min_support: usize,
}

impl Default for MinerConfig {
    fn default() -> Self {
        MinerConfig {
            min_support: DEFAULT_MIN_SUPPORT,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunConfig {
    pub corpus: CorpusConfig,
    pub types: TypesConfig,
    pub oracle: OracleConfig,
    #[serde(default)]
    pub seed: SeedConfig,
    #[serde(default)]
    pub miner: MinerConfig,
    /// `seed` inside this table is ignored; `rng_seed` is authoritative.
    #[serde(default)]
    pub bootstrap: LoopConfig,
    #[serde(default)]
    pub rng_seed: u64,
    pub output_dir: PathBuf,
}

pub enum OracleBackend<'a> {
    Mock(&'a Path),
    Remote { url: &'a str, timeout: Duration },
}

impl RunConfig {
    /// Reads a `.toml` or `.json` file, resolves relative paths and validates.
    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| Error::Config(format!("cannot read config {}: {e}", path.display())))?;
        let mut cfg: RunConfig = match path.extension().and_then(|e| e.to_str()) {
            Some("json") => serde_json::from_str(&text)
                .map_err(|e| Error::Config(format!("{}: {e}", path.display())))?,
            _ => toml::from_str(&text).map_err(|e| Error::Config(format!("{}: {e}", path.display())))?,
        };
        let base = path.parent().unwrap_or(Path::new(""));
        cfg.resolve_paths(base);
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn to_toml(&self) -> String {
        toml::to_string(self).expect("config serializes")
    }

    pub fn resolve_paths(&mut self, base: &Path) {
        let fix = |p: &mut PathBuf| {
            if p.is_relative() {
                *p = base.join(&*p);
            }
        };
        fix(&mut self.corpus.train);
        if let Some(g) = &mut self.corpus.gold {
            fix(g);
        }
        if let Some(l) = &mut self.oracle.mock_lexicon {
            fix(l);
        }
        fix(&mut self.output_dir);
    }

    /// Range and existence checks; nothing is read beyond file metadata.
    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(Error::Config(m));
        let exists = |p: &Path, what: &str| {
            if p.is_file() {
                Ok(())
            } else {
                bad(format!("{what} `{}` does not exist", p.display()))
            }
        };
        exists(&self.corpus.train, "training corpus")?;
        if let Some(g) = &self.corpus.gold {
            exists(g, "gold corpus")?;
        }
        for p in std::iter::once(&self.corpus.train).chain(&self.corpus.gold) {
            if self.corpus.format.is_none() && CorpusFormat::from_path(p).is_none() {
                return bad(format!("cannot infer the format of `{}`; set corpus.format", p.display()));
            }
        }
        self.targets()?;
        match (&self.oracle.mock_lexicon, &self.oracle.remote_url) {
            (Some(l), None) => exists(l, "mock lexicon")?,
            (None, Some(u)) => {
                if !(u.starts_with("http://") || u.starts_with("https://")) {
                    return bad(format!("oracle.remote_url `{u}` is not an http(s) URL"));
                }
            }
            _ => return bad("set exactly one of oracle.mock_lexicon and oracle.remote_url".into()),
        }
        if self.oracle.top_k < 1 || self.oracle.slots < 1 || self.oracle.timeout_secs < 1 {
            return bad("oracle.top_k, oracle.slots and oracle.timeout_secs must be at least 1".into());
        }
        if let Some(p) = self.seed.p_t {
            if !(0.0..=1.0).contains(&p) {
                return bad(format!("seed.p_t = {p} lies outside [0, 1]"));
            }
        }
        if !matches!(self.seed.finetune_template, TemplateId::T3 | TemplateId::T4) {
            return bad("seed.finetune_template must be T3 or T4".into());
        }
        if self.seed.finetune_epochs < 1 {
            return bad("seed.finetune_epochs must be at least 1".into());
        }
        if self.miner.min_support < 1 {
            return bad("miner.min_support must be at least 1".into());
        }
        self.bootstrap.validate()
    }

    pub fn targets(&self) -> Result<TargetTypes> {
        TargetTypes::with_aliases(self.types.names.clone(), self.types.aliases.clone())
    }

    pub fn format_of(&self, path: &Path) -> Result<CorpusFormat> {
        self.corpus
            .format
            .or_else(|| CorpusFormat::from_path(path))
            .ok_or_else(|| Error::Config(format!("cannot infer the format of `{}`", path.display())))
    }

    pub fn backend(&self) -> OracleBackend<'_> {
        match (&self.oracle.mock_lexicon, &self.oracle.remote_url) {
            (Some(l), _) => OracleBackend::Mock(l),
            (None, Some(u)) => OracleBackend::Remote {
                url: u,
                timeout: Duration::from_secs(self.oracle.timeout_secs),
            },
            (None, None) => unreachable!("validated config names an oracle"),
        }
    }

    pub fn verdict_params(&self) -> VerdictParams {
        VerdictParams {
            top_k: self.oracle.top_k,
            slots: self.oracle.slots,
            min_cooccur: self.oracle.min_cooccur,
        }
    }

    /// The loop settings with the run seed folded in.
    pub fn loop_config(&self) -> LoopConfig {
        LoopConfig {
            seed: self.rng_seed,
            ..self.bootstrap
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use std::fs;

    fn write_fixture(dir: &Path) -> PathBuf {
        fs::write(dir.join("train.conllu"), "").unwrap();
        fs::write(dir.join("lex.txt"), "").unwrap();
        let cfg = dir.join("run.toml");
        fs::write(
            &cfg,
            r#"
output_dir = "out"
rng_seed = 9

[corpus]
train = "train.conllu"

[types]
names = ["disease", "chemical"]

[oracle]
mock_lexicon = "lex.txt"

[bootstrap]
max_iterations = 5
"#,
        )
        .unwrap();
        cfg
    }

    #[test]
    fn relative_paths_resolve_against_config_dir() {
        let dir = tempfile::tempdir().unwrap();
        let cfg = RunConfig::load(&write_fixture(dir.path())).unwrap();
        assert_eq!(cfg.corpus.train, dir.path().join("train.conllu"));
        assert_eq!(cfg.output_dir, dir.path().join("out"));
        assert_eq!(cfg.loop_config().seed, 9);
        assert_eq!(cfg.loop_config().max_iterations, 5);
        assert_eq!(cfg.oracle.top_k, DEFAULT_TOP_K);
        assert_eq!(cfg.seed.thresholds(SeedMode::ZeroShot).p_t, 0.3);
        assert_eq!(cfg.seed.thresholds(SeedMode::Finetuned).p_t, 0.99);
    }

    #[test]
    fn toml_round_trip() {
        let dir = tempfile::tempdir().unwrap();
        let cfg = RunConfig::load(&write_fixture(dir.path())).unwrap();
        let back: RunConfig = toml::from_str(&cfg.to_toml()).unwrap();
        assert_eq!(back, cfg);
    }

    #[test]
    fn validation_failures_are_config_errors() {
        let dir = tempfile::tempdir().unwrap();
        let path = write_fixture(dir.path());
        let base = RunConfig::load(&path).unwrap();

        let mut c = base.clone();
        c.corpus.train = dir.path().join("missing.conllu");
        assert!(c.validate().unwrap_err().is_validation());

        let mut c = base.clone();
        c.seed.p_t = Some(1.5);
        assert!(c.validate().unwrap_err().is_validation());

        let mut c = base.clone();
        c.oracle.remote_url = Some("http://localhost:1".into());
        assert!(c.validate().unwrap_err().is_validation());

        let mut c = base.clone();
        c.bootstrap.max_iterations = 0;
        assert!(c.validate().unwrap_err().is_validation());

        let mut c = base;
        c.types.names = vec!["O".into()];
        assert!(c.validate().unwrap_err().is_validation());
    }

    #[test]
    fn unknown_keys_are_rejected() {
        let dir = tempfile::tempdir().unwrap();
        let path = write_fixture(dir.path());
        let text = fs::read_to_string(&path).unwrap() + "\n[extra]\nx = 1\n";
        fs::write(&path, text).unwrap();
        assert!(RunConfig::load(&path).unwrap_err().is_validation());
    }
}
