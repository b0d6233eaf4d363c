//! Service configuration: a TOML file plus `FACTGRAPH_*` environment overrides.

use std::path::{Path, PathBuf};
use std::sync::Arc;

use factgraph::generation::{GeneratorClient, HttpGenerator, MockGenerator};
use factgraph::http::HttpConfig;
use factgraph::linking::{ExternalDetector, MentionDetector};
use factgraph::pipeline::{Clients, Clock, EngineConfig, FrozenClock, RuleOptions, Rules, SystemClock};
use factgraph::relevance::{EmbeddingClient, ExternalEmbedder, HashEmbedder, RelevanceModel};
use serde::{Deserialize, Serialize};

use crate::ServiceError;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct ServiceConfig {
    pub host: String,
    pub port: u16,
    pub generator_url: Option<String>,
    pub embedder_url: Option<String>,
    pub detector_url: Option<String>,
    /// Rule files; the bundled rules when unset.
    pub rules_dir: Option<PathBuf>,
    /// Template files; `<rules_dir>/../templates` when unset and rules_dir is set.
    pub templates_dir: Option<PathBuf>,
    pub model_path: Option<PathBuf>,
    pub ratings_path: PathBuf,
    /// Report zero stage timings so turn results are reproducible.
    pub frozen_clock: bool,
    pub rules: RuleOptions,
    pub http: HttpConfig,
    pub engine: EngineConfig,
}

impl Default for ServiceConfig {
    fn default() -> Self {
        ServiceConfig {
            host: "127.0.0.1".into(),
            port: 8080,
            generator_url: None,
            embedder_url: None,
            detector_url: None,
            rules_dir: None,
            templates_dir: None,
            model_path: None,
            ratings_path: PathBuf::from("ratings.jsonl"),
            frozen_clock: false,
            rules: RuleOptions::default(),
            http: HttpConfig::default(),
            engine: EngineConfig::default(),
        }
    }
}

impl ServiceConfig {
    /// Reads `path` if given, then applies environment overrides.
    pub fn load(path: Option<&Path>) -> Result<Self, ServiceError> {
        let mut cfg = match path {
            Some(p) => {
                let text = std::fs::read_to_string(p).map_err(|e| ServiceError::Config(format!("{}: {e}", p.display())))?;
                toml::from_str(&text).map_err(|e| ServiceError::Config(format!("{}: {e}", p.display())))?
            }
            None => ServiceConfig::default(),
        };
        cfg.apply_env(|k| std::env::var(k).ok())?;
        Ok(cfg)
    }

    pub fn apply_env(&mut self, get: impl Fn(&str) -> Option<String>) -> Result<(), ServiceError> {
        if let Some(v) = get("FACTGRAPH_PORT") {
            self.port = v.parse().map_err(|_| ServiceError::Config(format!("FACTGRAPH_PORT={v:?} is not a port")))?;
        }
        if let Some(v) = get("FACTGRAPH_GENERATOR_URL") {
            self.generator_url = Some(v).filter(|s| !s.is_empty());
        }
        if let Some(v) = get("FACTGRAPH_EMBEDDER_URL") {
            self.embedder_url = Some(v).filter(|s| !s.is_empty());
        }
        if let Some(v) = get("FACTGRAPH_RULES_DIR") {
            self.rules_dir = Some(PathBuf::from(v)).filter(|p| !p.as_os_str().is_empty());
        }
        if let Some(v) = get("FACTGRAPH_K") {
            self.engine.k = v.parse().map_err(|_| ServiceError::Config(format!("FACTGRAPH_K={v:?} is not a count")))?;
        }
        Ok(())
    }

    pub fn load_rules(&self) -> Result<Rules, ServiceError> {
        let rules = match &self.rules_dir {
            None => Rules::bundled(self.rules)?,
            Some(dir) => {
                let templates = self
                    .templates_dir
                    .clone()
                    .unwrap_or_else(|| dir.parent().unwrap_or(Path::new(".")).join("templates"));
                Rules::load(dir, &templates, self.rules)?
            }
        };
        Ok(rules)
    }

    pub fn clients(&self) -> Result<Clients, ServiceError> {
        let embedder: Arc<dyn EmbeddingClient> = match &self.embedder_url {
            Some(url) => Arc::new(ExternalEmbedder::new(url.clone(), self.http.clone())?),
            None => Arc::new(HashEmbedder::default()),
        };
        let generator: Arc<dyn GeneratorClient> = match &self.generator_url {
            Some(url) => Arc::new(HttpGenerator::new(url.clone(), self.http.clone())?),
            None => Arc::new(MockGenerator::new()),
        };
        let detector: Option<Arc<dyn MentionDetector>> = match &self.detector_url {
            Some(url) => Some(Arc::new(ExternalDetector::new(url.clone(), self.http.clone())?)),
            None => None,
        };
        let model = match &self.model_path {
            Some(p) => RelevanceModel::load(p)?,
            None => RelevanceModel::default(),
        };
        let clock: Arc<dyn Clock> = if self.frozen_clock { Arc::new(FrozenClock) } else { Arc::new(SystemClock::default()) };
        Ok(Clients { detector, embedder, generator, model: Arc::new(model), clock })
    }
}
