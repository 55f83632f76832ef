use std::collections::BTreeMap;
use std::fs;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use super::{build_prompt, fnv1a64, EmbeddingProvider, TypePrompt};
use crate::data::HTGraph;
use crate::error::{Error, Result};
use crate::tensor::Tensor;

/// The embedding of one node type together with its provenance.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TypeEmbedding {
    pub dim: usize,
    pub values: Vec<f64>,
    pub provider: String,
    pub prompt_hash: String,
}

/// Type name to embedding, stored as one JSON object.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(transparent)]
pub struct EmbeddingTable {
    pub entries: BTreeMap<String, TypeEmbedding>,
}

impl EmbeddingTable {
    pub fn read(path: &Path) -> Result<Self> {
        let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        let table: EmbeddingTable =
            serde_json::from_str(&text).map_err(|e| Error::Provider(format!("{}: {e}", path.display())))?;
        for (name, e) in &table.entries {
            if e.values.len() != e.dim || e.values.iter().any(|x| !x.is_finite()) {
                return Err(Error::Provider(format!(
                    "{}: entry '{name}' declares dim {} but holds {} finite-checked values",
                    path.display(),
                    e.dim,
                    e.values.len()
                )));
            }
        }
        Ok(table)
    }

    pub fn write(&self, path: &Path) -> Result<()> {
        atomic_write(path, serde_json::to_string(self)?.as_bytes())
    }

    /// Common dimension of all entries.
    pub fn dim(&self) -> Option<usize> {
        self.entries.values().next().map(|e| e.dim)
    }

    /// Stacks the embeddings of `types` into a `[types, dim]` matrix.
    pub fn matrix(&self, types: &[String]) -> Result<Tensor> {
        let mut data = Vec::new();
        let mut dim = None;
        for name in types {
            let e = self
                .entries
                .get(name)
                .ok_or_else(|| Error::Provider(format!("no type embedding for '{name}'")))?;
            if *dim.get_or_insert(e.dim) != e.dim {
                return Err(Error::Provider(format!(
                    "type embedding of '{name}' has dim {}, expected {}",
                    e.dim,
                    dim.unwrap_or(0)
                )));
            }
            data.extend_from_slice(&e.values);
        }
        Tensor::new(vec![types.len(), dim.unwrap_or(0)], data)
    }
}

fn atomic_write(path: &Path, bytes: &[u8]) -> Result<()> {
    if let Some(dir) = path.parent().filter(|d| !d.as_os_str().is_empty()) {
        fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    }
    let tmp = path.with_extension(format!("tmp.{}", std::process::id()));
    fs::write(&tmp, bytes).map_err(|e| Error::io(&tmp, e))?;
    fs::rename(&tmp, path).map_err(|e| Error::io(path, e))
}

/// On-disk cache of type embeddings keyed by provider tag and prompt text.
#[derive(Debug, Clone)]
pub struct EmbeddingCache {
    dir: PathBuf,
}

impl EmbeddingCache {
    pub fn new(dir: impl Into<PathBuf>) -> Self {
        EmbeddingCache { dir: dir.into() }
    }

    fn path(&self, tag: &str, prompt: &TypePrompt) -> PathBuf {
        let mut key = tag.as_bytes().to_vec();
        key.push(0);
        key.extend_from_slice(prompt.text.as_bytes());
        self.dir.join(format!("{:016x}.json", fnv1a64(&key)))
    }

    pub fn get(&self, tag: &str, prompt: &TypePrompt) -> Option<TypeEmbedding> {
        let text = fs::read_to_string(self.path(tag, prompt)).ok()?;
        let e: TypeEmbedding = serde_json::from_str(&text).ok()?;
        (e.provider == tag && e.prompt_hash == prompt.hash() && e.values.len() == e.dim).then_some(e)
    }

    pub fn put(&self, prompt: &TypePrompt, e: &TypeEmbedding) -> Result<()> {
        atomic_write(&self.path(&e.provider, prompt), serde_json::to_string(e)?.as_bytes())
    }
}

/// Embeds the prompt of every node type of `graph`: one provider call per
/// type not found in `cache`.
pub fn embed_dataset(
    graph: &HTGraph,
    provider: &mut dyn EmbeddingProvider,
    cache: Option<&EmbeddingCache>,
) -> Result<EmbeddingTable> {
    let tag = provider.tag();
    let mut table = EmbeddingTable::default();
    for ty in &graph.node_types {
        let prompt = build_prompt(ty);
        let cached = cache.and_then(|c| c.get(&tag, &prompt));
        let e = match cached {
            Some(e) => e,
            None => {
                let values = provider
                    .embed(&prompt)
                    .map_err(|e| Error::Provider(format!("embedding type '{}': {e}", ty.name)))?;
                let e = TypeEmbedding { dim: values.len(), values, provider: tag.clone(), prompt_hash: prompt.hash() };
                if let Some(c) = cache {
                    c.put(&prompt, &e)?;
                }
                e
            }
        };
        if let Some(d) = table.dim() {
            if d != e.dim {
                return Err(Error::Provider(format!(
                    "type '{}' embedded with dim {}, earlier types have {d}",
                    ty.name, e.dim
                )));
            }
        }
        table.entries.insert(ty.name.clone(), e);
    }
    Ok(table)
}
