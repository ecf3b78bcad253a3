use anyhow::Result;
use qmap_core::dataset::{materialize_labels, synthesize};
use serde_json::json;

use super::Data;
use crate::settings::Settings;
use crate::stage::{file_digest, relative, Stage};

pub fn cmd_synth(settings: &Settings) -> Result<()> {
    let mut stage = Stage::open("synth", settings)?;
    let dir = settings.manifest.parent().map(|p| p.to_path_buf()).unwrap_or_default();
    let recipes = settings.synth.recipes()?;
    stage.log(&format!("{} bases x {} recipes into {}", settings.synth.base_count, recipes.len(), dir.display()));
    let m = synthesize(&settings.synth.bases(), &recipes, &dir, settings.seed)?;
    let written = dir.join("manifest.csv");
    if written != settings.manifest {
        m.save(&settings.manifest)?;
    }
    for e in &m.entries {
        stage.record(
            "entry",
            &json!({"id": e.id, "type": e.distortion, "level": e.level, "score": e.score,
                    "sha256": file_digest(&m.distorted_path(e))?}),
        )?;
    }
    stage.record(
        "total",
        &json!({"entries": m.entries.len(), "manifest": relative(&settings.manifest, &settings.out),
                "manifest_sha256": file_digest(&settings.manifest)?}),
    )?;
    println!("synthesized {} images into {}", m.entries.len(), dir.display());
    stage.finish()?;
    Ok(())
}

pub fn cmd_labels(settings: &Settings) -> Result<()> {
    let mut stage = Stage::open("labels", settings)?;
    let data = Data::load(settings)?;
    for &method in &settings.methods {
        stage.log(&format!("{method} labels for {} entries", data.manifest.entries.len()));
        let store = materialize_labels(&data.manifest, method, &settings.maps, &settings.cache)?;
        let mut means = Vec::with_capacity(store.entries.len());
        for k in 0..store.entries.len() {
            means.push(store.load(k)?.1.mean());
        }
        for (e, mean) in store.entries.iter().zip(&means) {
            stage.record(
                "label",
                &json!({"method": method, "id": e.id, "map_mean": mean,
                        "sha256": file_digest(&store.dir.join(&e.map))?}),
            )?;
        }
        println!("{method}: {} labels in {}", store.entries.len(), store.dir.display());
    }
    stage.finish()?;
    Ok(())
}
