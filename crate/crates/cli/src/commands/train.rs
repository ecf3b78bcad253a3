use std::collections::BTreeMap;

use anyhow::{bail, Context, Result};
use qmap_core::dataset::label_patches;
use qmap_core::image::{extract_patches, load_image, patch_origins, Image};
use qmap_core::maps::{FrMethod, QualityMap};
use qmap_core::models::{
    build_generator, build_pooler, train_generator, train_pooler, ModelManifest, PoolSample, PoolSource, TrainConfig,
    TrainHistory,
};
use qmap_core::eval::srcc;
use qmap_nn::{par, Checkpoint, ComputeGraph, SeedStream};
use serde_json::json;

use super::{aligned_maps, generator_view, load_generators, open_labels, Data, Partition};
use crate::settings::{Settings, SourceKind};
use crate::stage::{file_digest, relative, Stage};

fn hex(v: u64) -> String {
    format!("{v:016x}")
}

fn collect<T: Send>(n: usize, f: impl Fn(usize) -> Result<Vec<T>> + Sync + Send) -> Result<Vec<T>> {
    let parts: Vec<Result<Vec<T>>> = par::map_indexed(n, f);
    let mut out = Vec::new();
    for p in parts {
        out.extend(p?);
    }
    Ok(out)
}

fn record_history(stage: &mut Stage, model: &str, hist: &TrainHistory) -> Result<()> {
    for (epoch, &loss) in hist.train_loss.iter().enumerate() {
        stage.record(
            "epoch",
            &json!({"model": model, "epoch": epoch, "train_loss": loss, "val_loss": hist.val_loss.get(epoch)}),
        )?;
    }
    Ok(())
}

fn method_index(m: FrMethod) -> u64 {
    FrMethod::ALL.iter().position(|&x| x == m).unwrap_or(0) as u64
}

/// Mean predicted map value per distortion type and level over `idx`.
fn level_response(gen: &ComputeGraph, multiple: usize, data: &Data, idx: &[usize]) -> Result<BTreeMap<String, Vec<(u32, f64)>>> {
    let means: Vec<Result<f64>> = par::map_indexed(idx.len(), |k| {
        let e = data.entry(idx[k]);
        let img = load_image(data.manifest.distorted_path(e))?;
        let x = generator_view(&img, multiple)?.to_tensor();
        let out = gen.predict(&[&x])?;
        Ok(out.data().iter().sum::<f64>() / out.len() as f64)
    });
    let mut groups: BTreeMap<String, BTreeMap<u32, Vec<f64>>> = BTreeMap::new();
    for (&i, m) in idx.iter().zip(means) {
        let e = data.entry(i);
        groups.entry(e.distortion.clone()).or_default().entry(e.level).or_default().push(m?);
    }
    Ok(groups
        .into_iter()
        .map(|(t, levels)| {
            let v = levels.into_iter().map(|(l, ms)| (l, ms.iter().sum::<f64>() / ms.len() as f64)).collect();
            (t, v)
        })
        .collect())
}

pub fn cmd_train_gen(settings: &Settings) -> Result<()> {
    let mut stage = Stage::open("train-gen", settings)?;
    let data = Data::load(settings)?;
    let part = Partition::new(&data, &settings.split)?;
    std::fs::create_dir_all(settings.models_dir())?;
    for &method in &settings.methods {
        let store = open_labels(settings, method)?;
        let patches = |idx: &[usize]| {
            collect(idx.len(), |k| {
                let id = &data.entry(idx[k]).id;
                let pos = store.position(id).with_context(|| format!("no {method} label for {id}"))?;
                let (img, map) = store.load(pos)?;
                Ok(label_patches(&img, &map, settings.gen_patch, settings.gen_stride)?)
            })
        };
        let train = patches(&part.train)?;
        let val = patches(&part.val)?;
        stage.log(&format!("{method}: {} train / {} validation patches", train.len(), val.len()));

        let seed = SeedStream::new(settings.seed).derive("generator", method_index(method));
        let mut gen = build_generator(&settings.unet, seed)?;
        let cfg = TrainConfig {
            seed,
            ..settings.gen_train.clone()
        };
        let hist = train_generator(&mut gen, &train, &val, &cfg)?;
        let model = format!("gen_{method}");
        record_history(&mut stage, &model, &hist)?;

        let path = settings.generator_path(method);
        Checkpoint::new(gen.clone(), None, seed).save(&path)?;
        let mut record = ModelManifest::for_graph("generator", &gen, seed);
        record.methods = vec![method];
        record.patch_size = settings.gen_patch;
        record.stride = settings.gen_stride;
        record.data_fingerprint = data.fingerprint.clone();
        record.unet = Some(settings.unet.clone());
        record.train = Some(cfg);
        record.history = Some(hist.clone());
        record.save(&path)?;

        for (kind, levels) in level_response(&gen, settings.unet.input_multiple(), &data, &part.test)? {
            let (lv, means): (Vec<f64>, Vec<f64>) = levels.iter().map(|&(l, m)| (f64::from(l), m)).unzip();
            let rank = srcc(&lv, &means).ok();
            stage.record(
                "level_response",
                &json!({"model": model, "type": kind, "levels": lv, "mean_map": means, "srcc_vs_level": rank}),
            )?;
        }
        stage.record(
            "model",
            &json!({"model": model, "method": method, "train_patches": train.len(), "val_patches": val.len(),
                    "params": gen.param_count(), "best_epoch": hist.best_epoch,
                    "first_train_loss": hist.train_loss[0], "best_train_loss": hist.train_loss[hist.best_epoch],
                    "first_val_loss": hist.val_loss.first(), "best_val_loss": hist.val_loss.get(hist.best_epoch),
                    "checksum": hex(gen.checksum()), "checkpoint": relative(&path, &settings.out),
                    "checkpoint_sha256": file_digest(&path)?}),
        )?;
        println!(
            "{method}: epoch-0 loss {:.5}, best epoch {} loss {:.5} -> {}",
            hist.train_loss[0],
            hist.best_epoch,
            hist.train_loss[hist.best_epoch],
            path.display()
        );
    }
    stage.finish()?;
    Ok(())
}

/// Pooler samples of the entries in `idx`, one per patch.
pub(crate) fn pool_samples(settings: &Settings, data: &Data, idx: &[usize]) -> Result<Vec<PoolSample>> {
    let stores = match settings.pool_source {
        SourceKind::GroundTruth => settings.methods.iter().map(|&m| open_labels(settings, m)).collect::<Result<Vec<_>>>()?,
        _ => Vec::new(),
    };
    let (patch, stride) = (settings.pool_patch, settings.pool_stride);
    collect(idx.len(), |k| {
        let e = data.entry(idx[k]);
        if settings.pool_source == SourceKind::GroundTruth {
            let maps = aligned_maps(settings, &stores, &e.id)?;
            let (h, w) = (maps[0].height(), maps[0].width());
            if h < patch || w < patch {
                bail!("{}: {h}x{w} maps are smaller than the {patch} px pooler patch", e.id);
            }
            let mut out = Vec::new();
            for &r in &patch_origins(h, patch, stride) {
                for &c in &patch_origins(w, patch, stride) {
                    let crops = maps.iter().map(|m| m.crop(r, c, patch, patch)).collect::<qmap_core::Result<Vec<QualityMap>>>()?;
                    out.push(PoolSample {
                        image: None,
                        maps: crops,
                        score: e.score,
                    });
                }
            }
            Ok(out)
        } else {
            let img: Image = load_image(data.manifest.distorted_path(e))?;
            let grid = extract_patches(&img, patch, stride)?;
            Ok(grid
                .patches
                .into_iter()
                .map(|p| PoolSample {
                    image: Some(p),
                    maps: Vec::new(),
                    score: e.score,
                })
                .collect())
        }
    })
}

pub(crate) fn pool_source<'a>(kind: SourceKind, gens: &'a [ComputeGraph]) -> PoolSource<'a> {
    match kind {
        SourceKind::Predicted => PoolSource::Predicted(gens),
        SourceKind::GroundTruth => PoolSource::GroundTruth,
        SourceKind::RawImage => PoolSource::RawImage,
    }
}

pub fn cmd_train_pool(settings: &Settings) -> Result<()> {
    let mut stage = Stage::open("train-pool", settings)?;
    let data = Data::load(settings)?;
    let part = Partition::new(&data, &settings.split)?;
    std::fs::create_dir_all(settings.models_dir())?;
    let gens = match settings.pool_source {
        SourceKind::Predicted => load_generators(settings, &settings.methods, &data)?,
        _ => Vec::new(),
    };
    let before: Vec<String> = gens.iter().map(|g| hex(g.checksum())).collect();
    let train = pool_samples(settings, &data, &part.train)?;
    let val = pool_samples(settings, &data, &part.val)?;
    stage.log(&format!("{} train / {} validation patches", train.len(), val.len()));

    let spec = settings.pool_spec();
    let seed = SeedStream::new(settings.seed).derive("pooler", 0);
    let mut pool = build_pooler(&spec, seed)?;
    let cfg = TrainConfig {
        seed,
        ..settings.pool_train.clone()
    };
    let source = pool_source(settings.pool_source, &gens);
    let hist = train_pooler(&mut pool, source, &settings.fusion, &train, &val, &cfg)?;
    let after: Vec<String> = gens.iter().map(|g| hex(g.checksum())).collect();
    record_history(&mut stage, "pool", &hist)?;

    let path = settings.pooler_path();
    Checkpoint::new(pool.clone(), None, seed).save(&path)?;
    let mut record = ModelManifest::for_graph("pooler", &pool, seed);
    record.methods = settings.methods.clone();
    record.fusion = Some(settings.fusion.clone());
    record.source = Some(settings.pool_source.token().into());
    record.patch_size = settings.pool_patch;
    record.stride = settings.pool_stride;
    record.data_fingerprint = data.fingerprint.clone();
    record.generator_checksums = after.clone();
    record.pooler = Some(spec);
    record.train = Some(cfg);
    record.history = Some(hist.clone());
    record.save(&path)?;

    stage.record(
        "model",
        &json!({"model": "pool", "source": settings.pool_source.token(), "fusion": settings.fusion.mode,
                "methods": settings.methods, "train_patches": train.len(), "val_patches": val.len(),
                "params": pool.param_count(), "best_epoch": hist.best_epoch, "best_loss": hist.best_loss(),
                "generator_checksums_before": before, "generator_checksums_after": after,
                "checksum": hex(pool.checksum()), "checkpoint": relative(&path, &settings.out),
                "checkpoint_sha256": file_digest(&path)?}),
    )?;
    println!("pooler: best epoch {} loss {:.4} -> {}", hist.best_epoch, hist.best_loss(), path.display());
    stage.finish()?;
    Ok(())
}
