//! One function per subcommand plus the artifact plumbing they share.

mod eval;
mod map;
mod predict;
mod prepare;
mod study;
mod train;

use std::path::Path;

use anyhow::{bail, Context, Result};
use qmap_core::dataset::{normalize_scores, split_indices, DatasetManifest, Entry, LabelStore, SplitSpec};
use qmap_core::maps::{FrMethod, QualityMap};
use qmap_core::models::{data_fingerprint, ModelManifest};
use qmap_nn::{Checkpoint, ComputeGraph, SeedStream};

use crate::settings::Settings;

pub use eval::cmd_eval;
pub use map::cmd_map;
pub use predict::cmd_predict;
pub use prepare::{cmd_labels, cmd_synth};
pub use study::cmd_study;
pub use train::{cmd_train_gen, cmd_train_pool};

/// The dataset with scores on [0,100] and its fingerprint.
pub(crate) struct Data {
    pub manifest: DatasetManifest,
    pub fingerprint: String,
}

impl Data {
    pub fn load(settings: &Settings) -> Result<Self> {
        let raw = DatasetManifest::load(&settings.manifest)
            .with_context(|| format!("loading manifest {} (run `qmap synth` first?)", settings.manifest.display()))?;
        let manifest = normalize_scores(&raw)?;
        let fingerprint = data_fingerprint(manifest.entries.iter().map(|e| (e.id.as_str(), e.score)));
        Ok(Self { manifest, fingerprint })
    }

    pub fn entry(&self, k: usize) -> &Entry {
        &self.manifest.entries[k]
    }
}

/// Entry indices of the reference-disjoint train, validation and test sets.
pub(crate) struct Partition {
    pub train: Vec<usize>,
    pub val: Vec<usize>,
    pub test: Vec<usize>,
}

impl Partition {
    /// Test references are held out first; a validation share of the
    /// remaining references is split off when at least two remain.
    pub fn new(data: &Data, split: &SplitSpec) -> Result<Self> {
        let labels: Vec<String> = data.manifest.entries.iter().map(Entry::reference_identity).collect();
        let (fit, test) = split_indices(&labels, split)?;
        let fit_labels: Vec<String> = fit.iter().map(|&i| labels[i].clone()).collect();
        let val_split = SplitSpec {
            train_fraction: split.train_fraction,
            seed: SeedStream::new(split.seed).derive("validation", 0),
        };
        let (train, val) = match split_indices(&fit_labels, &val_split) {
            Ok((tr, va)) => (tr.iter().map(|&k| fit[k]).collect(), va.iter().map(|&k| fit[k]).collect()),
            Err(_) => (fit, Vec::new()),
        };
        Ok(Self { train, val, test })
    }
}

pub(crate) fn open_labels(settings: &Settings, method: FrMethod) -> Result<LabelStore> {
    LabelStore::open(&settings.cache, method).with_context(|| {
        format!(
            "no {method} labels under {} (run `qmap labels --method {method}` first)",
            settings.cache.display()
        )
    })
}

/// Ground-truth maps of one entry across `stores`, cropped to a common
/// footprint so they stay pixel-aligned.
pub(crate) fn aligned_maps(settings: &Settings, stores: &[LabelStore], id: &str) -> Result<Vec<QualityMap>> {
    let widest = stores.iter().map(|s| s.method.border(&settings.maps)).max().unwrap_or(0);
    stores
        .iter()
        .map(|s| {
            let k = s.position(id).with_context(|| format!("no {} label for {id}", s.method))?;
            let (_, map) = s.load(k)?;
            Ok(map.crop_border(widest - s.method.border(&settings.maps))?)
        })
        .collect()
}

pub(crate) fn load_checked(path: &Path, role: &str, data: &Data) -> Result<(ComputeGraph, ModelManifest)> {
    let ckpt = Checkpoint::load(path).with_context(|| format!("loading {role} checkpoint {}", path.display()))?;
    let record = ModelManifest::load(path)?;
    if record.role != role {
        bail!("{} holds a {} model, expected a {role}", path.display(), record.role);
    }
    record.verify(&ckpt.graph)?;
    if record.data_fingerprint != data.fingerprint {
        bail!(
            "{} was trained on dataset {} but the manifest is now {}; retrain or point data.manifest at the original",
            path.display(),
            record.data_fingerprint,
            data.fingerprint
        );
    }
    Ok((ckpt.graph, record))
}

/// Generators for `methods`, refusing any whose records do not match.
pub(crate) fn load_generators(settings: &Settings, methods: &[FrMethod], data: &Data) -> Result<Vec<ComputeGraph>> {
    methods
        .iter()
        .map(|&m| {
            let (g, record) = load_checked(&settings.generator_path(m), "generator", data)?;
            if record.methods != [m] {
                bail!("generator for {m} was trained on {:?} labels", record.methods);
            }
            Ok(g)
        })
        .collect()
}

/// Crops an image to the largest top-left region the generator accepts.
pub(crate) fn generator_view(img: &qmap_core::image::Image, multiple: usize) -> Result<qmap_core::image::Image> {
    let (h, w) = (img.height() / multiple * multiple, img.width() / multiple * multiple);
    if h == 0 || w == 0 {
        bail!("{}x{} image is smaller than {multiple} px", img.height(), img.width());
    }
    Ok(img.crop(0, 0, h, w)?)
}
