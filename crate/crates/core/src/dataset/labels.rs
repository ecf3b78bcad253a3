use std::path::{Path, PathBuf};

use qmap_nn::par;
use serde::{Deserialize, Serialize};

use super::DatasetManifest;
use crate::error::{io_err, Error, Result};
use crate::image::{crop_border, extract_patches, load_image, save_image, Image};
use crate::maps::{compute_map, save_map, FrMethod, MapConfig, QualityMap};

pub const INDEX_FILE: &str = "index.csv";

/// One stored label: the map and the distorted image cropped to match it.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct LabelEntry {
    pub id: String,
    pub map: PathBuf,
    pub image: PathBuf,
    pub score: f64,
    pub reference: String,
}

/// Labels of one method under `<root>/<method>/`.
#[derive(Clone, Debug, PartialEq)]
pub struct LabelStore {
    pub dir: PathBuf,
    pub method: FrMethod,
    pub entries: Vec<LabelEntry>,
}

impl LabelStore {
    pub fn open(root: impl AsRef<Path>, method: FrMethod) -> Result<Self> {
        let dir = root.as_ref().join(method.token());
        let index = dir.join(INDEX_FILE);
        let mut reader = csv::Reader::from_path(&index).map_err(|e| Error::Label(format!("{}: {e}", index.display())))?;
        let entries = reader
            .deserialize::<LabelEntry>()
            .collect::<std::result::Result<Vec<_>, _>>()?;
        Ok(Self { dir, method, entries })
    }

    pub fn load(&self, k: usize) -> Result<(Image, QualityMap)> {
        let e = &self.entries[k];
        let img = load_image(self.dir.join(&e.image))?;
        let map = QualityMap::from_image(&load_image(self.dir.join(&e.map))?)?;
        Ok((img, map))
    }

    pub fn position(&self, id: &str) -> Option<usize> {
        self.entries.iter().position(|e| e.id == id)
    }
}

/// Computes one map per entry and stores it with the aligned distorted image.
pub fn materialize_labels(
    m: &DatasetManifest,
    method: FrMethod,
    cfg: &MapConfig,
    out_dir: impl AsRef<Path>,
) -> Result<LabelStore> {
    let dir = out_dir.as_ref().join(method.token());
    std::fs::create_dir_all(&dir).map_err(io_err(&dir))?;
    let border = method.border(cfg);
    let results: Vec<Result<LabelEntry>> = par::map_indexed(m.entries.len(), |k| {
        let e = &m.entries[k];
        let ref_path = m
            .reference_path(e)
            .ok_or_else(|| Error::Label(format!("entry {} has no reference image", e.id)))?;
        let dist = load_image(m.distorted_path(e))?;
        let reference = load_image(ref_path)?;
        let map = compute_map(method, &dist, &reference, cfg)?;
        let image = crop_border(&dist, border)?;
        let (map_name, image_name) = (format!("{}.png", e.id), format!("{}_img.png", e.id));
        save_map(&map, dir.join(&map_name))?;
        save_image(&image, dir.join(&image_name))?;
        Ok(LabelEntry {
            id: e.id.clone(),
            map: map_name.into(),
            image: image_name.into(),
            score: e.score,
            reference: e.reference_identity(),
        })
    });
    let entries = results.into_iter().collect::<Result<Vec<_>>>()?;
    let index = dir.join(INDEX_FILE);
    let mut w = csv::Writer::from_path(&index).map_err(|e| Error::Label(format!("{}: {e}", index.display())))?;
    for e in &entries {
        w.serialize(e)?;
    }
    w.flush().map_err(io_err(&index))?;
    Ok(LabelStore { dir, method, entries })
}

/// Co-located patches of an image and its label map.
pub fn label_patches(img: &Image, map: &QualityMap, patch: usize, stride: usize) -> Result<Vec<(Image, QualityMap)>> {
    if img.height() != map.height() || img.width() != map.width() {
        return Err(Error::Shape(format!(
            "{}x{} image with a {}x{} map",
            img.height(),
            img.width(),
            map.height(),
            map.width()
        )));
    }
    let grid = extract_patches(img, patch, stride)?;
    grid.origins
        .iter()
        .zip(grid.patches)
        .map(|(&(r, c), p)| Ok((p, map.crop(r, c, patch, patch)?)))
        .collect()
}
