use std::collections::BTreeMap;
use std::path::PathBuf;
use std::time::Duration;

use serde::{Deserialize, Serialize};

use super::{EmbeddingTable, TypePrompt};
use crate::error::{Error, Result};

/// Hidden size of the default 8B-parameter LLM.
pub const DEFAULT_LLM_DIM: usize = 4096;

/// Source of type embeddings.
pub trait EmbeddingProvider {
    /// Short identifier recorded with every embedding and mixed into cache keys.
    fn tag(&self) -> String;

    fn embed(&mut self, prompt: &TypePrompt) -> Result<Vec<f64>>;
}

/// Provider selection as it appears in run configs.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "lowercase", deny_unknown_fields)]
pub enum ProviderConfig {
    /// Precomputed embedding table.
    File { path: PathBuf },
    /// HTTP embedding service.
    Remote {
        endpoint: String,
        model: String,
        /// Environment variable holding a bearer token.
        #[serde(default)]
        token_env: Option<String>,
        #[serde(default = "default_timeout")]
        timeout_secs: u64,
    },
    /// Offline pseudo-embeddings.
    Fallback {
        #[serde(default = "default_dim")]
        dim: usize,
        #[serde(default)]
        seed: u64,
    },
}

fn default_timeout() -> u64 {
    60
}

fn default_dim() -> usize {
    DEFAULT_LLM_DIM
}

impl Default for ProviderConfig {
    fn default() -> Self {
        ProviderConfig::Fallback { dim: DEFAULT_LLM_DIM, seed: 0 }
    }
}

impl ProviderConfig {
    pub fn build(&self) -> Result<Box<dyn EmbeddingProvider>> {
        Ok(match self {
            ProviderConfig::File { path } => Box::new(FileProvider::open(path)?),
            ProviderConfig::Remote { endpoint, model, token_env, timeout_secs } => {
                let token = match token_env {
                    Some(var) => Some(std::env::var(var).map_err(|_| {
                        Error::Config(format!("environment variable '{var}' for the provider token is not set"))
                    })?),
                    None => None,
                };
                Box::new(RemoteProvider::new(endpoint, model, token, Duration::from_secs(*timeout_secs)))
            }
            ProviderConfig::Fallback { dim, seed } => {
                if *dim == 0 {
                    return Err(Error::Config("fallback provider dim must be positive".into()));
                }
                Box::new(FallbackProvider::new(*dim, *seed))
            }
        })
    }
}

/// 64-bit FNV-1a.
pub fn fnv1a64(bytes: &[u8]) -> u64 {
    let mut h: u64 = 0xcbf2_9ce4_8422_2325;
    for &b in bytes {
        h ^= u64::from(b);
        h = h.wrapping_mul(0x0000_0100_0000_01b3);
    }
    h
}

/// SplitMix64 generator.
#[derive(Debug, Clone)]
pub struct SplitMix64(u64);

impl SplitMix64 {
    pub fn new(seed: u64) -> Self {
        SplitMix64(seed)
    }

    pub fn next_u64(&mut self) -> u64 {
        self.0 = self.0.wrapping_add(0x9e37_79b9_7f4a_7c15);
        let mut z = self.0;
        z = (z ^ (z >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
        z = (z ^ (z >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
        z ^ (z >> 31)
    }

    /// Uniform in `(0, 1]`.
    pub fn next_open01(&mut self) -> f64 {
        ((self.next_u64() >> 11) + 1) as f64 * (1.0 / (1u64 << 53) as f64)
    }
}

/// Deterministic pseudo-embeddings: FNV-1a of the prompt bytes (xor `seed`)
/// seeds a SplitMix64 stream, Box–Muller turns it into Gaussians, and the
/// vector is scaled to unit length.
#[derive(Debug, Clone)]
pub struct FallbackProvider {
    dim: usize,
    seed: u64,
}

impl FallbackProvider {
    pub fn new(dim: usize, seed: u64) -> Self {
        FallbackProvider { dim, seed }
    }

    pub fn vector(&self, text: &str) -> Vec<f64> {
        let mut rng = SplitMix64::new(fnv1a64(text.as_bytes()) ^ self.seed);
        let mut out = Vec::with_capacity(self.dim + 1);
        while out.len() < self.dim {
            let (u1, u2) = (rng.next_open01(), rng.next_open01());
            let r = (-2.0 * u1.ln()).sqrt();
            let theta = 2.0 * std::f64::consts::PI * u2;
            out.push(r * theta.cos());
            out.push(r * theta.sin());
        }
        out.truncate(self.dim);
        let norm = out.iter().map(|x| x * x).sum::<f64>().sqrt();
        out.iter_mut().for_each(|x| *x /= norm);
        out
    }
}

impl EmbeddingProvider for FallbackProvider {
    fn tag(&self) -> String {
        format!("fallback:{}:{}", self.dim, self.seed)
    }

    fn embed(&mut self, prompt: &TypePrompt) -> Result<Vec<f64>> {
        Ok(self.vector(&prompt.text))
    }
}

/// Looks embeddings up by type name in a precomputed table.
#[derive(Debug, Clone)]
pub struct FileProvider {
    path: PathBuf,
    table: BTreeMap<String, Vec<f64>>,
}

impl FileProvider {
    pub fn open(path: &std::path::Path) -> Result<Self> {
        let table = EmbeddingTable::read(path)?;
        Ok(FileProvider {
            path: path.to_path_buf(),
            table: table.entries.into_iter().map(|(k, v)| (k, v.values)).collect(),
        })
    }
}

impl EmbeddingProvider for FileProvider {
    fn tag(&self) -> String {
        format!("file:{}", self.path.display())
    }

    fn embed(&mut self, prompt: &TypePrompt) -> Result<Vec<f64>> {
        self.table.get(&prompt.node_type).cloned().ok_or_else(|| {
            Error::Provider(format!("embedding table {} has no entry for type '{}'", self.path.display(), prompt.node_type))
        })
    }
}

/// Client of an HTTP embedding endpoint.
pub struct RemoteProvider {
    agent: ureq::Agent,
    endpoint: String,
    model: String,
    token: Option<String>,
}

#[derive(Serialize)]
struct EmbedRequest<'a> {
    model: &'a str,
    input: [&'a str; 1],
}

#[derive(Deserialize)]
struct EmbedResponse {
    data: Vec<EmbedDatum>,
}

#[derive(Deserialize)]
struct EmbedDatum {
    embedding: Vec<f64>,
}

impl RemoteProvider {
    pub fn new(endpoint: &str, model: &str, token: Option<String>, timeout: Duration) -> Self {
        let agent = ureq::Agent::config_builder()
            .timeout_global(Some(timeout))
            .http_status_as_error(false)
            .build()
            .into();
        RemoteProvider { agent, endpoint: endpoint.into(), model: model.into(), token }
    }
}

impl EmbeddingProvider for RemoteProvider {
    fn tag(&self) -> String {
        format!("remote:{}:{}", self.endpoint, self.model)
    }

    fn embed(&mut self, prompt: &TypePrompt) -> Result<Vec<f64>> {
        let mut req = self.agent.post(&self.endpoint).header("Content-Type", "application/json");
        if let Some(tok) = &self.token {
            req = req.header("Authorization", format!("Bearer {tok}"));
        }
        let body = EmbedRequest { model: &self.model, input: [&prompt.text] };
        let mut resp = req
            .send_json(&body)
            .map_err(|e| Error::Provider(format!("request to {} failed: {e}", self.endpoint)))?;
        let status = resp.status().as_u16();
        if !(200..300).contains(&status) {
            let text = resp.body_mut().read_to_string().unwrap_or_default();
            return Err(Error::Provider(format!("{} answered HTTP {status}: {}", self.endpoint, text.trim())));
        }
        let parsed: EmbedResponse = resp
            .body_mut()
            .read_json()
            .map_err(|e| Error::Provider(format!("malformed response from {}: {e}", self.endpoint)))?;
        let first = parsed
            .data
            .into_iter()
            .next()
            .ok_or_else(|| Error::Provider(format!("{} returned no embedding", self.endpoint)))?;
        if first.embedding.is_empty() || first.embedding.iter().any(|x| !x.is_finite()) {
            return Err(Error::Provider(format!("{} returned an empty or non-finite embedding", self.endpoint)));
        }
        Ok(first.embedding)
    }
}
