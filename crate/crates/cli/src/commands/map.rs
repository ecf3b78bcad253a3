use std::path::Path;

use anyhow::{Context, Result};
use qmap_core::image::load_image;
use qmap_core::maps::{compute_map, pool_map, save_map, Pooling};
use serde_json::json;

use crate::settings::Settings;
use crate::stage::{relative, Stage};

pub fn cmd_map(settings: &Settings, dist: &Path, reference: &Path) -> Result<()> {
    let d = load_image(dist).with_context(|| format!("reading {}", dist.display()))?;
    let r = load_image(reference).with_context(|| format!("reading {}", reference.display()))?;
    let mut stage = Stage::open("map", settings)?;
    let stem = dist.file_stem().map(|s| s.to_string_lossy().into_owned()).unwrap_or_else(|| "map".into());
    for &method in &settings.methods {
        let map = compute_map(method, &d, &r, &settings.maps)?;
        let path = stage.dir.join(format!("{stem}_{method}.png"));
        save_map(&map, &path)?;
        let avg = pool_map(&map, Pooling::Average)?;
        let std = pool_map(&map, Pooling::StdDev)?;
        let dev = pool_map(&map, Pooling::Deviation)?;
        println!("{method} average {avg:.6} std {std:.6} deviation {dev:.6} map {}", path.display());
        stage.record(
            "map",
            &json!({"method": method, "average": avg, "std": std, "deviation": dev,
                    "height": map.height(), "width": map.width(), "map": relative(&path, &settings.out)}),
        )?;
    }
    stage.finish()?;
    Ok(())
}
