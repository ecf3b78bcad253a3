use anyhow::Result;
use qmap_core::eval::{patch_average_study, write_study_csv, StudyConfig, StudySample};
use qmap_core::maps::{pool_map, Pooling};
use qmap_core::models::{Fusion, PoolKind, PoolNetSpec, TrainConfig};
use qmap_nn::{par, SeedStream};

use super::{open_labels, Data};
use crate::settings::{Settings, StudyScore};
use crate::stage::Stage;

pub fn cmd_study(settings: &Settings) -> Result<()> {
    let mut stage = Stage::open("study", settings)?;
    let data = Data::load(settings)?;
    let method = settings.study_method;
    let store = open_labels(settings, method)?;
    let loaded: Vec<Result<StudySample>> = par::map_indexed(data.manifest.entries.len(), |k| {
        let e = data.entry(k);
        let pos = store.position(&e.id).ok_or_else(|| anyhow::anyhow!("no {method} label for {}", e.id))?;
        let map = store.load(pos)?.1;
        let score = match settings.study_score {
            StudyScore::Manifest => e.score,
            StudyScore::Deviation => 100.0 * (1.0 - pool_map(&map, Pooling::Deviation)?),
        };
        Ok(StudySample {
            map,
            score,
            reference: e.reference_identity(),
        })
    });
    let samples = loaded.into_iter().collect::<Result<Vec<_>>>()?;
    let seed = SeedStream::new(settings.seed).derive("study", 0);
    let cfg = StudyConfig {
        blocks: settings.study_blocks.clone(),
        pooler: PoolNetSpec {
            kind: PoolKind::Dpn,
            input_channels: 1,
            streams: 1,
            conv_channels: settings.pool_conv.clone(),
            fc_units: settings.pool_fc,
            dropout_p: settings.pool_dropout,
            patch_size: settings.study_patch,
        },
        train: TrainConfig {
            epochs: settings.study_epochs,
            seed,
            ..settings.pool_train.clone()
        },
        fusion: Fusion::single(method),
        split: settings.split.clone(),
        stride: settings.study_stride,
    };
    stage.log(&format!("{} maps, blocks {:?}", samples.len(), cfg.blocks));
    let rows = patch_average_study(&samples, &cfg)?;
    write_study_csv(&rows, &stage.dir.join("study.csv"))?;
    println!("block   srcc     plcc");
    for r in &rows {
        println!("{:>5} {:>8.4} {:>8.4}", r.block, r.srcc, r.plcc);
        stage.record("row", r)?;
    }
    stage.finish()?;
    Ok(())
}
