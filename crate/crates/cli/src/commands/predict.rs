use std::path::Path;

use anyhow::{bail, Context, Result};
use qmap_core::image::load_image;
use qmap_core::maps::save_map;
use serde_json::json;

use super::eval::Scorer;
use super::Data;
use crate::settings::{Settings, SourceKind};
use crate::stage::{relative, Stage};

pub fn cmd_predict(settings: &Settings, image: &Path) -> Result<()> {
    let img = load_image(image).with_context(|| format!("reading {}", image.display()))?;
    let data = Data::load(settings)?;
    let scorer = Scorer::load(settings, &data)?;
    if scorer.source == SourceKind::GroundTruth {
        bail!("the pooler reads ground-truth maps, which need a reference image; use `qmap eval` instead");
    }
    let mut stage = Stage::open("predict", settings)?;
    let pred = scorer.predictor().predict(&img)?;
    let stem = image.file_stem().map(|s| s.to_string_lossy().into_owned()).unwrap_or_else(|| "image".into());
    let mut maps = Vec::new();
    for (m, method) in pred.maps.iter().zip(&scorer.fusion.methods) {
        let path = stage.dir.join(format!("{stem}_{method}.png"));
        save_map(m, &path)?;
        maps.push(relative(&path, &settings.out));
        println!("map {}", path.display());
    }
    println!("score {:.6}", pred.score);
    stage.record(
        "prediction",
        &json!({"image": stem, "score": pred.score, "patch_scores": pred.patch_scores, "maps": maps}),
    )?;
    stage.finish()?;
    Ok(())
}
