//! Run configuration: TOML files, presets and overrides.
//!
//! Values are layered, later layers winning: built-in defaults, the preset
//! named by the file's `preset` key, the file's own keys, a preset given on
//! the command line, individual command-line flags. Endpoint environment
//! variables replace the corresponding model or selector section.

use std::path::{Path, PathBuf};
use std::time::Duration;

use serde::Deserialize;

use crate::error::{Error, Result};
use crate::protocol::{Endpoint, RemoteScorer, RemoteSelector, DEFAULT_TIMEOUT};
use crate::rerank::{MarkerWordSelector, Selector};
use crate::scoring::{NgramModel, Scorer, TableModel};
use crate::search::{EnsembleConfig, Masking, Mode};

pub const GENERATOR_ENDPOINT_ENV: &str = "WORDFUSE_GENERATOR_ENDPOINT";
pub const RANKER_ENDPOINT_ENV: &str = "WORDFUSE_RANKER_ENDPOINT";
pub const SELECTOR_ENDPOINT_ENV: &str = "WORDFUSE_SELECTOR_ENDPOINT";

const PRESETS: &[(&str, &str)] = &[
    ("equal-weight", include_str!("../../fixtures/presets/equal-weight.toml")),
    ("speech-ranker", include_str!("../../fixtures/presets/speech-ranker.toml")),
    ("vision-ranker", include_str!("../../fixtures/presets/vision-ranker.toml")),
];

pub fn preset_names() -> impl Iterator<Item = &'static str> {
    PRESETS.iter().map(|(name, _)| *name)
}

/// Search knobs that any layer may leave unset.
#[derive(Debug, Clone, Default, PartialEq, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Knobs {
    pub mode: Option<Mode>,
    pub alpha: Option<f64>,
    pub topk: Option<usize>,
    pub beams: Option<usize>,
    pub max_len: Option<usize>,
    pub nbest: Option<usize>,
    pub workers: Option<usize>,
    pub trace: Option<bool>,
    pub masking: Option<Masking>,
}

impl Knobs {
    /// `other`'s set values win.
    pub fn overlay(self, other: &Knobs) -> Knobs {
        Knobs {
            mode: other.mode.or(self.mode),
            alpha: other.alpha.or(self.alpha),
            topk: other.topk.or(self.topk),
            beams: other.beams.or(self.beams),
            max_len: other.max_len.or(self.max_len),
            nbest: other.nbest.or(self.nbest),
            workers: other.workers.or(self.workers),
            trace: other.trace.or(self.trace),
            masking: other.masking.or(self.masking),
        }
    }
}

pub fn preset(name: &str) -> Result<Knobs> {
    let (_, body) = PRESETS.iter().find(|(n, _)| *n == name).ok_or_else(|| {
        Error::Config(format!("unknown preset {name:?} (known: {})", preset_names().collect::<Vec<_>>().join(", ")))
    })?;
    toml::from_str(body).map_err(|e| Error::Config(format!("preset {name}: {e}")))
}

/// Where a scorer comes from.
#[derive(Debug, Clone, PartialEq, Deserialize)]
#[serde(tag = "kind", rename_all = "kebab-case", deny_unknown_fields)]
pub enum ModelSpec {
    /// A table-model TOML file.
    Table { path: PathBuf },
    /// A Witten-Bell n-gram model trained at load time.
    Ngram { vocab: PathBuf, corpus: PathBuf, order: usize, identity: Option<String> },
    /// A process or socket speaking the line protocol.
    Remote { endpoint: String, timeout_secs: Option<f64> },
}

#[derive(Debug, Clone, PartialEq, Deserialize)]
#[serde(tag = "kind", rename_all = "kebab-case", deny_unknown_fields)]
pub enum SelectorSpec {
    MarkerWord { word: String },
    /// The configured ranker's sentence score.
    Ranker,
    Remote { endpoint: String, timeout_secs: Option<f64> },
}

fn timeout(secs: Option<f64>) -> Result<Duration> {
    match secs {
        None => Ok(DEFAULT_TIMEOUT),
        Some(s) if s.is_finite() && s > 0.0 => Ok(Duration::from_secs_f64(s)),
        Some(s) => Err(Error::Config(format!("timeout_secs {s} must be positive"))),
    }
}

impl ModelSpec {
    /// Paths are resolved against `base`.
    pub fn load(&self, base: &Path) -> Result<Box<dyn Scorer>> {
        Ok(match self {
            ModelSpec::Table { path } => Box::new(TableModel::from_file(base.join(path))?),
            ModelSpec::Ngram { vocab, corpus, order, identity } => {
                let name = identity.clone().unwrap_or_else(|| format!("ngram-{order}"));
                Box::new(NgramModel::from_files(name, base.join(vocab), base.join(corpus), *order)?)
            }
            ModelSpec::Remote { endpoint, timeout_secs } => {
                Box::new(RemoteScorer::connect(&Endpoint::parse(endpoint)?, timeout(*timeout_secs)?)?)
            }
        })
    }
}

/// Only the kinds that need no ranker; [`SelectorSpec::Ranker`] is built by the caller.
pub fn load_selector(spec: &SelectorSpec) -> Result<Option<Box<dyn Selector>>> {
    Ok(match spec {
        SelectorSpec::MarkerWord { word } => Some(Box::new(MarkerWordSelector::new(word.clone()))),
        SelectorSpec::Ranker => None,
        SelectorSpec::Remote { endpoint, timeout_secs } => {
            Some(Box::new(RemoteSelector::connect(&Endpoint::parse(endpoint)?, timeout(*timeout_secs)?)?))
        }
    })
}

#[derive(Debug, Clone, Default, Deserialize)]
#[serde(deny_unknown_fields)]
struct ConfigFile {
    preset: Option<String>,
    #[serde(flatten)]
    knobs: Knobs,
    generator: Option<ModelSpec>,
    ranker: Option<ModelSpec>,
    selector: Option<SelectorSpec>,
}

/// A fully resolved run configuration.
#[derive(Debug, Clone, PartialEq)]
pub struct RunConfig {
    pub ensemble: EnsembleConfig,
    /// Entries reported per input; also the list size decoded in offline mode.
    pub nbest: usize,
    pub workers: usize,
    pub generator: Option<ModelSpec>,
    pub ranker: Option<ModelSpec>,
    pub selector: Option<SelectorSpec>,
    /// Directory that relative model paths are resolved against.
    pub base_dir: PathBuf,
}

/// Reads endpoint overrides from the process environment.
pub fn env_endpoints() -> [Option<String>; 3] {
    [GENERATOR_ENDPOINT_ENV, RANKER_ENDPOINT_ENV, SELECTOR_ENDPOINT_ENV]
        .map(|k| std::env::var(k).ok().filter(|v| !v.trim().is_empty()))
}

impl RunConfig {
    /// Resolve a config file (or none) plus command-line layers.
    pub fn resolve(
        path: Option<&Path>,
        cli_preset: Option<&str>,
        cli: &Knobs,
        endpoints: [Option<String>; 3],
    ) -> Result<RunConfig> {
        let (file, base_dir) = match path {
            Some(p) => {
                let body = std::fs::read_to_string(p).map_err(|e| Error::file(p, e))?;
                let file: ConfigFile =
                    toml::from_str(&body).map_err(|e| Error::Config(format!("{}: {e}", p.display())))?;
                let base = p.parent().map(Path::to_path_buf).unwrap_or_default();
                (file, base)
            }
            None => (ConfigFile::default(), PathBuf::new()),
        };
        let mut knobs = Knobs::default();
        if let Some(name) = &file.preset {
            knobs = knobs.overlay(&preset(name)?);
        }
        knobs = knobs.overlay(&file.knobs);
        if let Some(name) = cli_preset {
            knobs = knobs.overlay(&preset(name)?);
        }
        knobs = knobs.overlay(cli);

        let defaults = EnsembleConfig::default();
        let ensemble = EnsembleConfig {
            alpha: knobs.alpha.unwrap_or(defaults.alpha),
            topk: knobs.topk.unwrap_or(defaults.topk),
            beams: knobs.beams.unwrap_or(defaults.beams),
            max_len: knobs.max_len.unwrap_or(defaults.max_len),
            mode: knobs.mode.unwrap_or(defaults.mode),
            masking: knobs.masking.unwrap_or_default(),
            trace: knobs.trace.unwrap_or(false),
            parallel: false,
        };
        let nbest = knobs.nbest.unwrap_or(ensemble.beams);
        if nbest == 0 {
            return Err(Error::Config("nbest must be at least 1".into()));
        }
        let workers = knobs.workers.unwrap_or(1).max(1);
        let [g_env, r_env, s_env] = endpoints;
        let remote = |endpoint: String| ModelSpec::Remote { endpoint, timeout_secs: None };
        Ok(RunConfig {
            ensemble,
            nbest,
            workers,
            generator: g_env.map(remote).or(file.generator),
            ranker: r_env.map(remote).or(file.ranker),
            selector: s_env.map(|endpoint| SelectorSpec::Remote { endpoint, timeout_secs: None }).or(file.selector),
            base_dir,
        })
    }

    /// The search configuration actually run, with the N-best width applied
    /// in offline mode.
    pub fn search_config(&self) -> EnsembleConfig {
        let mut cfg = self.ensemble.clone();
        if cfg.mode == Mode::Offline {
            cfg.beams = self.nbest;
        }
        cfg
    }

    pub fn load_generator(&self) -> Result<Box<dyn Scorer>> {
        self.generator
            .as_ref()
            .ok_or_else(|| Error::Config("no [generator] section".into()))?
            .load(&self.base_dir)
    }

    pub fn load_ranker(&self) -> Result<Box<dyn Scorer>> {
        self.ranker.as_ref().ok_or_else(|| Error::Config("no [ranker] section".into()))?.load(&self.base_dir)
    }
}
