use std::path::{Path, PathBuf};

use qmap_nn::{fnv1a, ComputeGraph};
use serde::{Deserialize, Serialize};

use super::{Fusion, PoolNetSpec, TrainConfig, TrainHistory, UNetSpec};
use crate::error::{io_err, Error, Result};
use crate::maps::FrMethod;

/// Sidecar written next to every checkpoint so mismatched pairs are refused.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ModelManifest {
    pub role: String,
    pub topology_fingerprint: String,
    pub checksum: String,
    pub seed: u64,
    pub methods: Vec<FrMethod>,
    pub fusion: Option<Fusion>,
    pub source: Option<String>,
    pub patch_size: usize,
    pub stride: usize,
    pub data_fingerprint: String,
    /// Checksums of the generators a pooler was trained against.
    pub generator_checksums: Vec<String>,
    pub unet: Option<UNetSpec>,
    pub pooler: Option<PoolNetSpec>,
    pub train: Option<TrainConfig>,
    pub history: Option<TrainHistory>,
}

pub(crate) fn hex(v: u64) -> String {
    format!("{v:016x}")
}

/// Stable digest of `(id, score)` pairs.
pub fn data_fingerprint<'a>(entries: impl IntoIterator<Item = (&'a str, f64)>) -> String {
    let mut buf = Vec::new();
    for (id, score) in entries {
        buf.extend_from_slice(id.as_bytes());
        buf.push(0);
        buf.extend_from_slice(&score.to_bits().to_le_bytes());
    }
    hex(fnv1a(&buf))
}

impl ModelManifest {
    pub fn for_graph(role: &str, graph: &ComputeGraph, seed: u64) -> Self {
        Self {
            role: role.to_string(),
            topology_fingerprint: hex(graph.fingerprint()),
            checksum: hex(graph.checksum()),
            seed,
            methods: Vec::new(),
            fusion: None,
            source: None,
            patch_size: 0,
            stride: 0,
            data_fingerprint: String::new(),
            generator_checksums: Vec::new(),
            unet: None,
            pooler: None,
            train: None,
            history: None,
        }
    }

    /// `model.ckpt` → `model.ckpt.json`.
    pub fn sidecar_path(checkpoint: &Path) -> PathBuf {
        let mut s = checkpoint.as_os_str().to_owned();
        s.push(".json");
        PathBuf::from(s)
    }

    pub fn save(&self, checkpoint: &Path) -> Result<()> {
        let path = Self::sidecar_path(checkpoint);
        let text = serde_json::to_string_pretty(self).expect("manifest serializes");
        std::fs::write(&path, text + "\n").map_err(io_err(&path))
    }

    pub fn load(checkpoint: &Path) -> Result<Self> {
        let path = Self::sidecar_path(checkpoint);
        let text = std::fs::read_to_string(&path).map_err(io_err(&path))?;
        serde_json::from_str(&text).map_err(|e| Error::Config(format!("{}: {e}", path.display())))
    }

    /// Refuses a graph whose topology or weights differ from the record.
    pub fn verify(&self, graph: &ComputeGraph) -> Result<()> {
        let (fp, ck) = (hex(graph.fingerprint()), hex(graph.checksum()));
        if fp != self.topology_fingerprint {
            return Err(Error::Config(format!(
                "{} checkpoint topology {fp} does not match its manifest ({})",
                self.role, self.topology_fingerprint
            )));
        }
        if ck != self.checksum {
            return Err(Error::Config(format!(
                "{} checkpoint weights {ck} do not match its manifest ({})",
                self.role, self.checksum
            )));
        }
        Ok(())
    }

    /// Refuses generators other than the ones this pooler was trained on.
    pub fn verify_generators(&self, generators: &[ComputeGraph]) -> Result<()> {
        let got: Vec<String> = generators.iter().map(|g| hex(g.checksum())).collect();
        if got != self.generator_checksums {
            return Err(Error::Config(format!(
                "pooler was trained on generators {:?}, got {:?}",
                self.generator_checksums, got
            )));
        }
        Ok(())
    }
}
