//! Funnel configuration: a versioned TOML document with `FUNNELRAG_*` environment overrides.

use std::fmt;
use std::path::Path;
use std::str::FromStr;
use std::time::Duration;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::rank::{AggregationScheme, ScorerHandle, Scheme};
use crate::sparse::Bm25Params;

pub const SCHEMA_VERSION: u32 = 1;
pub const ENV_PREFIX: &str = "FUNNELRAG_";

const NQ_PRESET: &str = include_str!("../../presets/nq.toml");
const TQA_PRESET: &str = include_str!("../../presets/tqa.toml");

/// How far down the funnel a query travels.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum StageDepth {
    /// Clusters only.
    RetrievalOnly,
    /// Clusters, then pre-ranked documents.
    TwoStage,
    /// Clusters, documents, then post-ranked passages.
    Full,
}

impl StageDepth {
    pub fn as_str(self) -> &'static str {
        match self {
            StageDepth::RetrievalOnly => "retrieval-only",
            StageDepth::TwoStage => "two-stage",
            StageDepth::Full => "full",
        }
    }
}

impl fmt::Display for StageDepth {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for StageDepth {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "retrieval-only" => Ok(StageDepth::RetrievalOnly),
            "two-stage" => Ok(StageDepth::TwoStage),
            "full" => Ok(StageDepth::Full),
            other => Err(Error::InvalidArgument(format!("unknown stage depth `{other}`"))),
        }
    }
}

mod display_str {
    use std::fmt::Display;
    use std::str::FromStr;

    use serde::{de, Deserialize, Deserializer, Serializer};

    pub fn serialize<T: Display, S: Serializer>(v: &T, s: S) -> Result<S::Ok, S::Error> {
        s.collect_str(v)
    }

    pub fn deserialize<'de, T, D>(d: D) -> Result<T, D::Error>
    where
        T: FromStr,
        T::Err: Display,
        D: Deserializer<'de>,
    {
        String::deserialize(d)?.parse().map_err(de::Error::custom)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct FunnelConfig {
    pub schema_version: u32,
    /// Cluster token budget `S`.
    pub max_cluster_size: usize,
    /// Clusters kept by sparse retrieval, `K`.
    pub top_clusters: usize,
    /// Documents kept by pre-ranking, `N`.
    pub top_docs: usize,
    pub passage_size: usize,
    /// Passages kept by post-ranking, `H`.
    pub top_passages: usize,
    pub scheme: Scheme,
    pub rep_tokens: usize,
    pub include_query_tokens: bool,
    pub mix_alpha: f64,
    pub stage_depth: StageDepth,
    #[serde(with = "display_str")]
    pub pre_rank_scorer: ScorerHandle,
    #[serde(with = "display_str")]
    pub post_rank_scorer: ScorerHandle,
    pub scorer_batch_size: usize,
    pub scorer_max_in_flight: usize,
    pub scorer_timeout_secs: u64,
    /// Queries processed concurrently in a batch.
    pub parallelism: usize,
    pub bm25_k1: f64,
    pub bm25_b: f64,
}

impl Default for FunnelConfig {
    fn default() -> Self {
        FunnelConfig::preset("nq").expect("bundled preset parses")
    }
}

impl FunnelConfig {
    /// Bundled presets: `nq` and `tqa`.
    pub fn preset(name: &str) -> Result<Self> {
        match name {
            "nq" => Self::from_toml_str(NQ_PRESET),
            "tqa" => Self::from_toml_str(TQA_PRESET),
            other => Err(Error::Config(format!("unknown preset `{other}` (expected nq or tqa)"))),
        }
    }

    pub fn from_toml_str(s: &str) -> Result<Self> {
        let config: FunnelConfig = toml::from_str(s).map_err(|e| Error::Config(e.to_string()))?;
        config.validate()?;
        Ok(config)
    }

    pub fn to_toml_string(&self) -> Result<String> {
        toml::to_string(self).map_err(|e| Error::Config(e.to_string()))
    }

    /// Read a config file and apply `FUNNELRAG_*` overrides from the process environment.
    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let body = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        let mut config = Self::from_toml_str(&body)?;
        config.apply_env(std::env::vars())?;
        Ok(config)
    }

    /// Apply `FUNNELRAG_<FIELD>=value` overrides; e.g. `FUNNELRAG_TOP_DOCS=12`. Variables
    /// that do not name a config field are ignored.
    pub fn apply_env(&mut self, vars: impl IntoIterator<Item = (String, String)>) -> Result<()> {
        let mut table = toml::Table::try_from(&*self).map_err(|e| Error::Config(e.to_string()))?;
        let mut changed = false;
        for (name, raw) in vars {
            let Some(key) = name.strip_prefix(ENV_PREFIX) else {
                continue;
            };
            let key = key.to_ascii_lowercase();
            let Some(current) = table.get(&key) else {
                log::debug!("ignoring {name}: not a config field");
                continue;
            };
            let bad = |e: &dyn fmt::Display| Error::Config(format!("{name}={raw}: {e}"));
            let value = match current {
                toml::Value::Integer(_) => toml::Value::Integer(raw.trim().parse().map_err(|e| bad(&e))?),
                toml::Value::Float(_) => toml::Value::Float(raw.trim().parse().map_err(|e| bad(&e))?),
                toml::Value::Boolean(_) => toml::Value::Boolean(raw.trim().parse().map_err(|e| bad(&e))?),
                _ => toml::Value::String(raw.clone()),
            };
            table.insert(key, value);
            changed = true;
        }
        if changed {
            let updated: FunnelConfig = table.try_into().map_err(|e| Error::Config(e.to_string()))?;
            updated.validate()?;
            *self = updated;
        }
        Ok(())
    }

    pub fn validate(&self) -> Result<()> {
        let fail = |m: String| Err(Error::Config(m));
        if self.schema_version != SCHEMA_VERSION {
            return fail(format!(
                "schema_version {} is not supported (expected {SCHEMA_VERSION})",
                self.schema_version
            ));
        }
        for (name, v) in [
            ("top_clusters", self.top_clusters),
            ("top_docs", self.top_docs),
            ("top_passages", self.top_passages),
            ("passage_size", self.passage_size),
            ("rep_tokens", self.rep_tokens),
            ("scorer_batch_size", self.scorer_batch_size),
            ("scorer_max_in_flight", self.scorer_max_in_flight),
            ("parallelism", self.parallelism),
        ] {
            if v == 0 {
                return fail(format!("{name} must be >= 1"));
            }
        }
        if self.max_cluster_size < self.passage_size {
            return fail(format!(
                "max_cluster_size {} is smaller than passage_size {}",
                self.max_cluster_size, self.passage_size
            ));
        }
        if !(0.0..=1.0).contains(&self.mix_alpha) {
            return fail(format!("mix_alpha {} not in [0, 1]", self.mix_alpha));
        }
        self.bm25().validate().map_err(|e| Error::Config(e.to_string()))
    }

    pub fn aggregation(&self) -> AggregationScheme {
        AggregationScheme::new(self.scheme, self.rep_tokens).with_query_tokens(self.include_query_tokens)
    }

    pub fn bm25(&self) -> Bm25Params {
        Bm25Params {
            k1: self.bm25_k1,
            b: self.bm25_b,
        }
    }

    fn tuned(&self, handle: &ScorerHandle) -> ScorerHandle {
        ScorerHandle {
            batch_size: self.scorer_batch_size,
            max_in_flight: self.scorer_max_in_flight,
            timeout: Duration::from_secs(self.scorer_timeout_secs),
            ..handle.clone()
        }
    }

    /// Pre-ranking scorer handle with the configured batching and timeout applied.
    pub fn pre_rank_handle(&self) -> ScorerHandle {
        self.tuned(&self.pre_rank_scorer)
    }

    pub fn post_rank_handle(&self) -> ScorerHandle {
        self.tuned(&self.post_rank_scorer)
    }
}
