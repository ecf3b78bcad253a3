//! Resolved run settings: built-in defaults, then the config file, then flags.

use std::path::PathBuf;
use std::str::FromStr;

use anyhow::{bail, Context, Result};
use qmap_core::dataset::{DistortionKind, SplitSpec, SynthConfig};
use qmap_core::kv::KvConfig;
use qmap_core::maps::{FrMethod, MapConfig};
use qmap_core::models::{Fusion, FusionMode, PoolKind, PoolNetSpec, TrainConfig, UNetSpec};

/// Environment variable naming the label store root.
pub const CACHE_ENV: &str = "QMAP_CACHE";

const DEFAULTS: &str = "
seed = 1
workers = 0
methods = fsim_gm
fusion = single
data.manifest =
split.train_fraction = 0.8
synth.bases = 8
synth.size = 160
synth.kinds = gaussian_blur,white_noise,jpeg_blocking,local_blockwise
synth.levels = 1,2,3,4,5
gen.channels = 32,64,128,256
gen.patch = 144
gen.stride = 120
gen.epochs = 10
gen.batch = 8
gen.lr = 0.001
gen.weight_decay = 1e-11
gen.hflip = true
pool.kind = dpn
pool.source = predicted
pool.channels = 32,64,128,128,128
pool.fc = 512
pool.dropout = 0.5
pool.patch = 144
pool.stride = 120
pool.epochs = 10
pool.batch = 8
pool.lr = 0.005
pool.weight_decay = 1e-11
pool.hflip = true
eval.logistic = false
eval.logistic_reps = 10
study.method =
study.score = manifest
study.blocks = 1,2,4,8,16,24,36,48
study.patch = 144
study.stride = 120
study.epochs = 10
";

/// Where the pooler's inputs come from.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum SourceKind {
    Predicted,
    GroundTruth,
    RawImage,
}

impl FromStr for SourceKind {
    type Err = anyhow::Error;

    fn from_str(s: &str) -> Result<Self> {
        Ok(match s {
            "predicted" => Self::Predicted,
            "ground_truth" => Self::GroundTruth,
            "raw_image" => Self::RawImage,
            _ => bail!("unknown pooler source {s:?} (predicted, ground_truth, raw_image)"),
        })
    }
}

impl SourceKind {
    pub fn token(self) -> &'static str {
        match self {
            Self::Predicted => "predicted",
            Self::GroundTruth => "ground_truth",
            Self::RawImage => "raw_image",
        }
    }
}

/// Image-level target used by the patch-averaging study.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum StudyScore {
    /// Scores from the manifest.
    Manifest,
    /// `100 · (1 − deviation pooling)` of the full-resolution map.
    Deviation,
}

impl FromStr for StudyScore {
    type Err = anyhow::Error;

    fn from_str(s: &str) -> Result<Self> {
        Ok(match s {
            "manifest" => Self::Manifest,
            "deviation" => Self::Deviation,
            _ => bail!("unknown study score {s:?} (manifest, deviation)"),
        })
    }
}

/// Command-line values that override the config file.
#[derive(Clone, Debug, Default)]
pub struct Overrides {
    pub seed: Option<u64>,
    pub workers: Option<usize>,
    pub methods: Vec<FrMethod>,
    pub fusion: Option<FusionMode>,
    pub sets: Vec<String>,
}

#[derive(Clone, Debug)]
pub struct Settings {
    pub kv: KvConfig,
    pub out: PathBuf,
    pub seed: u64,
    pub workers: usize,
    pub methods: Vec<FrMethod>,
    pub fusion: Fusion,
    pub maps: MapConfig,
    pub manifest: PathBuf,
    pub cache: PathBuf,
    pub split: SplitSpec,
    pub synth: SynthConfig,
    pub unet: UNetSpec,
    pub gen_patch: usize,
    pub gen_stride: usize,
    pub gen_train: TrainConfig,
    pub pool_kind: PoolKind,
    pub pool_source: SourceKind,
    pub pool_conv: Vec<usize>,
    pub pool_fc: usize,
    pub pool_dropout: f64,
    pub pool_patch: usize,
    pub pool_stride: usize,
    pub pool_train: TrainConfig,
    pub logistic: bool,
    pub logistic_reps: usize,
    pub study_method: FrMethod,
    pub study_score: StudyScore,
    pub study_blocks: Vec<usize>,
    pub study_patch: usize,
    pub study_stride: usize,
    pub study_epochs: usize,
}

fn list<T: FromStr>(kv: &KvConfig, key: &str) -> Result<Vec<T>>
where
    T::Err: std::fmt::Display,
{
    let raw = kv.get_str(key).unwrap_or("");
    raw.split(',')
        .map(str::trim)
        .filter(|s| !s.is_empty())
        .map(|s| s.parse::<T>().map_err(|e| anyhow::anyhow!("{key}: {s:?}: {e}")))
        .collect()
}

fn req<T: FromStr>(kv: &KvConfig, key: &str) -> Result<T>
where
    T::Err: std::fmt::Display,
{
    let raw = kv.get_str(key).with_context(|| format!("missing config key {key}"))?;
    raw.parse::<T>().map_err(|e| anyhow::anyhow!("{key}: {raw:?}: {e}"))
}

fn join<T: ToString>(v: &[T]) -> String {
    v.iter().map(ToString::to_string).collect::<Vec<_>>().join(",")
}

fn train_config(kv: &KvConfig, prefix: &str, seed: u64, base: TrainConfig) -> Result<TrainConfig> {
    Ok(TrainConfig {
        epochs: req(kv, &format!("{prefix}.epochs"))?,
        batch_size: req(kv, &format!("{prefix}.batch"))?,
        lr: req(kv, &format!("{prefix}.lr"))?,
        weight_decay: req(kv, &format!("{prefix}.weight_decay"))?,
        hflip: req(kv, &format!("{prefix}.hflip"))?,
        seed,
        ..base
    })
}

impl Settings {
    pub fn resolve(config: Option<&std::path::Path>, over: &Overrides, out: PathBuf) -> Result<Self> {
        let mut kv = KvConfig::parse(DEFAULTS)?;
        if let Some(path) = config {
            let file = KvConfig::load(path).with_context(|| format!("reading config {}", path.display()))?;
            if let Some(unknown) = file.keys().find(|k| kv.get_str(k).is_none() && !k.starts_with("map.")) {
                bail!("{}: unknown config key {unknown}", path.display());
            }
            kv.merge(&file);
        }
        for s in &over.sets {
            let (k, v) = s.split_once('=').with_context(|| format!("--set expects KEY=VALUE, got {s:?}"))?;
            let k = k.trim();
            if kv.get_str(k).is_none() && !k.starts_with("map.") {
                bail!("--set: unknown config key {k}");
            }
            kv.set(k, v.trim());
        }
        if let Some(seed) = over.seed {
            kv.set("seed", seed);
        }
        if let Some(w) = over.workers {
            kv.set("workers", w);
        }
        if !over.methods.is_empty() {
            kv.set("methods", join(&over.methods));
        }
        if let Some(f) = over.fusion {
            kv.set("fusion", f);
        }
        let maps = MapConfig::from_kv(&kv)?;
        maps.write_kv(&mut kv);

        let seed: u64 = req(&kv, "seed")?;
        let methods: Vec<FrMethod> = list(&kv, "methods")?;
        if methods.is_empty() {
            bail!("at least one map method is required");
        }
        let fusion = Fusion {
            mode: req(&kv, "fusion")?,
            methods: methods.clone(),
        };
        let manifest = match kv.get_str("data.manifest").filter(|s| !s.is_empty()) {
            Some(p) => PathBuf::from(p),
            None => out.join("data").join("manifest.csv"),
        };
        let cache = match std::env::var_os(CACHE_ENV).filter(|v| !v.is_empty()) {
            Some(p) => PathBuf::from(p),
            None => out.join("cache"),
        };
        let study_method = match kv.get_str("study.method").filter(|s| !s.is_empty()) {
            Some(m) => m.parse()?,
            None => methods[0],
        };
        kv.set("study.method", study_method);

        let settings = Self {
            out,
            seed,
            workers: req(&kv, "workers")?,
            fusion,
            maps,
            manifest,
            cache,
            split: SplitSpec {
                train_fraction: req(&kv, "split.train_fraction")?,
                seed,
            },
            synth: SynthConfig {
                base_count: req(&kv, "synth.bases")?,
                base_size: req(&kv, "synth.size")?,
                kinds: list::<DistortionKind>(&kv, "synth.kinds")?,
                levels: list(&kv, "synth.levels")?,
                seed,
            },
            unet: UNetSpec {
                stage_channels: list(&kv, "gen.channels")?,
                ..UNetSpec::default()
            },
            gen_patch: req(&kv, "gen.patch")?,
            gen_stride: req(&kv, "gen.stride")?,
            gen_train: train_config(&kv, "gen", seed, TrainConfig::generator(seed))?,
            pool_kind: req(&kv, "pool.kind")?,
            pool_source: req(&kv, "pool.source")?,
            pool_conv: list(&kv, "pool.channels")?,
            pool_fc: req(&kv, "pool.fc")?,
            pool_dropout: req(&kv, "pool.dropout")?,
            pool_patch: req(&kv, "pool.patch")?,
            pool_stride: req(&kv, "pool.stride")?,
            pool_train: train_config(&kv, "pool", seed, TrainConfig::pooler(seed))?,
            logistic: req(&kv, "eval.logistic")?,
            logistic_reps: req(&kv, "eval.logistic_reps")?,
            study_method,
            study_score: req(&kv, "study.score")?,
            study_blocks: list(&kv, "study.blocks")?,
            study_patch: req(&kv, "study.patch")?,
            study_stride: req(&kv, "study.stride")?,
            study_epochs: req(&kv, "study.epochs")?,
            methods,
            kv,
        };
        settings.unet.validate()?;
        for (name, patch, stride) in [
            ("gen", settings.gen_patch, settings.gen_stride),
            ("pool", settings.pool_patch, settings.pool_stride),
            ("study", settings.study_patch, settings.study_stride),
        ] {
            if stride == 0 || stride > patch {
                bail!("{name}.stride = {stride} must lie in 1..={name}.patch ({patch})");
            }
        }
        Ok(settings)
    }

    /// Pooler architecture for the configured source and fusion.
    pub fn pool_spec(&self) -> PoolNetSpec {
        let base = PoolNetSpec {
            kind: self.pool_kind,
            input_channels: 1,
            streams: 1,
            conv_channels: self.pool_conv.clone(),
            fc_units: self.pool_fc,
            dropout_p: self.pool_dropout,
            patch_size: self.pool_patch,
        };
        match self.pool_source {
            SourceKind::RawImage => PoolNetSpec {
                kind: if self.pool_kind == PoolKind::Fc2 { PoolKind::Fc2 } else { PoolKind::DpnDirect },
                input_channels: 3,
                ..base
            },
            _ => self.fusion.apply(base),
        }
    }

    pub fn models_dir(&self) -> PathBuf {
        self.out.join("models")
    }

    pub fn generator_path(&self, method: FrMethod) -> PathBuf {
        self.models_dir().join(format!("gen_{method}.ckpt"))
    }

    pub fn pooler_path(&self) -> PathBuf {
        self.models_dir().join("pool.ckpt")
    }

    /// Settings rendered for `config.kv`.
    pub fn resolved(&self) -> KvConfig {
        let mut kv = self.kv.clone();
        kv.set("data.manifest", self.manifest.display());
        kv.set("cache", self.cache.display());
        kv
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn defaults_resolve() {
        let s = Settings::resolve(None, &Overrides::default(), PathBuf::from("run")).unwrap();
        assert_eq!(s.methods, vec![FrMethod::FsimGm]);
        assert_eq!(s.unet, UNetSpec::default());
        assert_eq!(s.pool_spec(), PoolNetSpec::default());
        assert_eq!(s.study_blocks, vec![1, 2, 4, 8, 16, 24, 36, 48]);
        assert_eq!(s.manifest, PathBuf::from("run/data/manifest.csv"));
    }

    #[test]
    fn flags_override_file_values() {
        let over = Overrides {
            seed: Some(9),
            methods: vec![FrMethod::Ssim, FrMethod::FsimGm],
            fusion: Some(FusionMode::MultiStream),
            sets: vec!["gen.epochs=3".into()],
            ..Overrides::default()
        };
        let s = Settings::resolve(None, &over, PathBuf::from("run")).unwrap();
        assert_eq!((s.seed, s.gen_train.epochs, s.gen_train.seed), (9, 3, 9));
        assert_eq!(s.pool_spec().streams, 2);
        assert_eq!(s.resolved().get_str("methods"), Some("ssim,fsim_gm"));
        let bad = Overrides {
            sets: vec!["gen.epoch=3".into()],
            ..Overrides::default()
        };
        assert!(Settings::resolve(None, &bad, PathBuf::from("run")).is_err());
    }
}
