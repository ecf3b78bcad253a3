use std::path::Path;

use qmap_nn::{par, SeedStream};
use serde::{Deserialize, Serialize};

use super::{plcc, srcc};
use crate::dataset::{split_indices, SplitSpec};
use crate::error::{io_err, Error, Result};
use crate::image::patch_origins;
use crate::maps::{avg_patchify_map, QualityMap};
use crate::models::{build_pooler, score_map_patches, train_pooler, Fusion, PoolNetSpec, PoolSample, PoolSource, TrainConfig};

pub const STUDY_BLOCKS: [usize; 8] = [1, 2, 4, 8, 16, 24, 36, 48];

/// One full-reference map with its image-level score and content identity.
#[derive(Clone, Debug)]
pub struct StudySample {
    pub map: QualityMap,
    pub score: f64,
    pub reference: String,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct StudyConfig {
    pub blocks: Vec<usize>,
    pub pooler: PoolNetSpec,
    pub train: TrainConfig,
    pub fusion: Fusion,
    pub split: SplitSpec,
    pub stride: usize,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct StudyRow {
    pub block: usize,
    pub srcc: f64,
    pub plcc: f64,
    pub n_train: usize,
    pub n_test: usize,
}

fn map_patches(map: &QualityMap, patch: usize, stride: usize) -> Result<Vec<QualityMap>> {
    if map.height() < patch || map.width() < patch {
        return Err(Error::Size(format!("{}x{} map is smaller than patch {patch}", map.height(), map.width())));
    }
    let rows = patch_origins(map.height(), patch, stride);
    let cols = patch_origins(map.width(), patch, stride);
    rows.iter()
        .flat_map(|&r| cols.iter().map(move |&c| (r, c)))
        .map(|(r, c)| map.crop(r, c, patch, patch))
        .collect()
}

fn run_block(samples: &[StudySample], train: &[usize], test: &[usize], block: usize, cfg: &StudyConfig) -> Result<StudyRow> {
    let patch = cfg.pooler.patch_size;
    let degraded: Vec<QualityMap> = samples.iter().map(|s| avg_patchify_map(&s.map, block)).collect();
    let mut pool_set = Vec::new();
    for &i in train {
        for m in map_patches(&degraded[i], patch, cfg.stride)? {
            pool_set.push(PoolSample {
                image: None,
                maps: vec![m],
                score: samples[i].score,
            });
        }
    }
    let mut pooler = build_pooler(&cfg.pooler, cfg.train.seed)?;
    train_pooler(&mut pooler, PoolSource::GroundTruth, &cfg.fusion, &pool_set, &[], &cfg.train)?;
    let pred: Vec<Result<f64>> = par::map_indexed(test.len(), |k| {
        score_map_patches(&pooler, &cfg.fusion, std::slice::from_ref(&degraded[test[k]]), patch, cfg.stride)
    });
    let pred = pred.into_iter().collect::<Result<Vec<_>>>()?;
    let gt: Vec<f64> = test.iter().map(|&i| samples[i].score).collect();
    Ok(StudyRow {
        block,
        srcc: srcc(&pred, &gt)?,
        plcc: plcc(&pred, &gt)?,
        n_train: train.len(),
        n_test: test.len(),
    })
}

/// Trains a fresh pooler on tile-averaged ground-truth maps for every block
/// size and reports held-out correlations. All blocks share one split.
pub fn patch_average_study(samples: &[StudySample], cfg: &StudyConfig) -> Result<Vec<StudyRow>> {
    if cfg.fusion.methods.len() != 1 {
        return Err(Error::Config("the patch-averaging study uses a single map method".into()));
    }
    let first = samples.first().ok_or_else(|| Error::Config("no study samples".into()))?;
    if samples.iter().any(|s| s.map.height() != first.map.height() || s.map.width() != first.map.width()) {
        return Err(Error::Shape("study maps differ in size".into()));
    }
    if cfg.blocks.is_empty() || cfg.blocks.contains(&0) {
        return Err(Error::Config("block sizes must be positive".into()));
    }
    let labels: Vec<String> = samples.iter().map(|s| s.reference.clone()).collect();
    let (train, test) = split_indices(&labels, &cfg.split)?;
    cfg.blocks.iter().map(|&b| run_block(samples, &train, &test, b, cfg)).collect()
}

pub fn write_study_csv(rows: &[StudyRow], path: &Path) -> Result<()> {
    let mut w = csv::Writer::from_path(path)?;
    w.write_record(["block", "srcc", "plcc", "n_train", "n_test"])?;
    for r in rows {
        w.write_record([
            r.block.to_string(),
            format!("{:.6}", r.srcc),
            format!("{:.6}", r.plcc),
            r.n_train.to_string(),
            r.n_test.to_string(),
        ])?;
    }
    w.flush().map_err(io_err(path))?;
    Ok(())
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SplitSummary {
    pub median: f64,
    /// Per-repetition values in repetition order.
    pub values: Vec<f64>,
    pub seeds: Vec<u64>,
}

/// Runs `experiment` once per derived split seed and takes the median.
pub fn repeated_splits<F>(reps: usize, seed: u64, experiment: F) -> Result<SplitSummary>
where
    F: Fn(u64) -> Result<f64> + Sync + Send,
{
    if reps == 0 {
        return Err(Error::Config("at least one repetition is required".into()));
    }
    let stream = SeedStream::new(seed);
    let seeds: Vec<u64> = (0..reps as u64).map(|r| stream.derive("split", r)).collect();
    let values = par::map_indexed(reps, |r| experiment(seeds[r]));
    let values = values.into_iter().collect::<Result<Vec<_>>>()?;
    let mut sorted = values.clone();
    sorted.sort_by(f64::total_cmp);
    let median = if reps % 2 == 1 {
        sorted[reps / 2]
    } else {
        0.5 * (sorted[reps / 2 - 1] + sorted[reps / 2])
    };
    Ok(SplitSummary { median, values, seeds })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn median_of_seeds() {
        let s = repeated_splits(5, 7, |seed| Ok(seed as f64)).unwrap();
        let mut sorted = s.seeds.clone();
        sorted.sort();
        assert_eq!(s.median, sorted[2] as f64);
        assert_eq!(s.values.len(), 5);
        let one = repeated_splits(1, 7, |seed| Ok(seed as f64 * 0.5)).unwrap();
        assert_eq!(one.median, one.values[0]);
        assert!(repeated_splits(0, 7, |_| Ok(0.0)).is_err());
    }

    #[test]
    fn map_patch_count() {
        let m = QualityMap::filled(40, 40, 0.5);
        assert_eq!(map_patches(&m, 32, 8).unwrap().len(), 4);
        assert!(map_patches(&m, 48, 8).is_err());
    }
}
