//! Backbone and transformer providers: offline stand-ins, or weights from the local cache.

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};

use memefuse_core::checkpoint;
use memefuse_core::models::backbone::{BackboneKey, BackboneProvider, FeatureExtractor, StubBackboneProvider};
use memefuse_core::models::textual::{
    ModelKey, StubTransformerProvider, SubwordTokenizer, TransformerEncoder, TransformerProvider, TransformerSpec,
};
use memefuse_core::params::ParamStore;
use memefuse_core::seed::SeededRng;
use memefuse_core::{Error, Result};
use serde::{Deserialize, Serialize};

pub const CACHE_ENV: &str = "MEMEFUSE_CACHE";

/// Model key to checkpoint name; the cache holds `<name>.ckpt` per entry.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct CheckpointTable {
    pub backbones: BTreeMap<BackboneKey, String>,
    pub transformers: BTreeMap<ModelKey, String>,
}

impl Default for CheckpointTable {
    fn default() -> Self {
        Self {
            backbones: BackboneKey::ALL
                .into_iter()
                .map(|k| (k, format!("{}_imagenet_notop", k.as_str())))
                .collect(),
            transformers: ModelKey::ALL
                .into_iter()
                .map(|k| (k, k.checkpoint_name().to_string()))
                .collect(),
        }
    }
}

/// `$MEMEFUSE_CACHE`, else `~/.cache/memefuse`.
pub fn cache_dir() -> PathBuf {
    if let Some(dir) = std::env::var_os(CACHE_ENV) {
        return PathBuf::from(dir);
    }
    let home = std::env::var_os("HOME").map_or_else(|| PathBuf::from("."), PathBuf::from);
    home.join(".cache").join("memefuse")
}

/// Copies every parameter of `file` into `store` under `prefix`, checking shapes.
fn overlay(store: &mut ParamStore, prefix: &str, file: &Path) -> Result<()> {
    let bytes = std::fs::read(file).map_err(|e| Error::Checkpoint(format!("{}: {e}", file.display())))?;
    let weights = checkpoint::decode(&bytes)?;
    for (_, p) in weights.iter() {
        let name = format!("{prefix}{}", p.name);
        let id = store
            .find(&name)
            .ok_or_else(|| Error::Checkpoint(format!("{}: unexpected parameter {name}", file.display())))?;
        let target = store.get_mut(id);
        if target.value.shape() != p.value.shape() {
            return Err(Error::Checkpoint(format!("{}: shape mismatch for {name}", file.display())));
        }
        target.value = p.value.clone();
    }
    Ok(())
}

/// Backbones whose weights come from `<cache>/<checkpoint>.ckpt`, laid out like the stand-in.
pub struct CachedBackboneProvider {
    pub dir: PathBuf,
    pub table: CheckpointTable,
}

impl CachedBackboneProvider {
    fn file(&self, key: BackboneKey) -> Option<PathBuf> {
        self.table.backbones.get(&key).map(|n| self.dir.join(format!("{n}.ckpt")))
    }
}

impl BackboneProvider for CachedBackboneProvider {
    fn supports(&self, key: BackboneKey) -> bool {
        self.file(key).is_some_and(|f| f.is_file())
    }

    fn extractor(&self, key: BackboneKey, store: &mut ParamStore, prefix: &str) -> Result<FeatureExtractor> {
        let file = self.file(key).ok_or_else(|| Error::UnknownBackbone(key.as_str().into()))?;
        let ex = StubBackboneProvider.extractor(key, store, prefix)?;
        overlay(store, prefix, &file)?;
        Ok(ex)
    }
}

/// Transformer encoders whose weights come from `<cache>/<checkpoint>.ckpt`.
pub struct CachedTransformerProvider {
    pub dir: PathBuf,
    pub table: CheckpointTable,
}

impl CachedTransformerProvider {
    fn file(&self, key: ModelKey) -> Option<PathBuf> {
        self.table.transformers.get(&key).map(|n| self.dir.join(format!("{n}.ckpt")))
    }
}

impl TransformerProvider for CachedTransformerProvider {
    fn supports(&self, key: ModelKey) -> bool {
        self.file(key).is_some_and(|f| f.is_file())
    }

    fn load(
        &self,
        spec: &TransformerSpec,
        store: &mut ParamStore,
        rng: &mut SeededRng,
    ) -> Result<(SubwordTokenizer, TransformerEncoder)> {
        let file = self
            .file(spec.model_key)
            .ok_or_else(|| Error::UnknownModelKey(spec.model_key.as_str().into()))?;
        let loaded = StubTransformerProvider::default().load(spec, store, rng)?;
        overlay(store, "", &file)?;
        Ok(loaded)
    }
}

/// Owned provider pair for one run.
pub enum ProviderSet {
    Offline(StubBackboneProvider, StubTransformerProvider),
    Cached(CachedBackboneProvider, CachedTransformerProvider),
}

impl ProviderSet {
    pub fn new(offline: bool, table: &CheckpointTable) -> Self {
        if offline {
            ProviderSet::Offline(StubBackboneProvider, StubTransformerProvider::default())
        } else {
            let dir = cache_dir();
            ProviderSet::Cached(
                CachedBackboneProvider {
                    dir: dir.clone(),
                    table: table.clone(),
                },
                CachedTransformerProvider {
                    dir,
                    table: table.clone(),
                },
            )
        }
    }

    pub fn providers(&self) -> memefuse_core::models::Providers<'_> {
        match self {
            ProviderSet::Offline(b, t) => memefuse_core::models::Providers {
                backbones: b,
                transformers: t,
            },
            ProviderSet::Cached(b, t) => memefuse_core::models::Providers {
                backbones: b,
                transformers: t,
            },
        }
    }
}
