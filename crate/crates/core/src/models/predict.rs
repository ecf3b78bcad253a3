use qmap_nn::{par, ComputeGraph, Tensor4};

use super::train::PoolSource;
use super::{Fusion, FusionMode};
use crate::error::{Error, Result};
use crate::image::{extract_patches, Image};
use crate::maps::QualityMap;

/// Mirrors every sample of a tensor left to right.
pub(crate) fn flip_tensor(t: &Tensor4) -> Tensor4 {
    let [n, c, h, w] = t.dims();
    let src = t.data();
    let mut out = Vec::with_capacity(src.len());
    for row in src.chunks_exact(w).take(n * c * h) {
        out.extend(row.iter().rev());
    }
    Tensor4::from_vec([n, c, h, w], out).expect("same dims")
}

fn map_from_output(t: &Tensor4) -> Result<QualityMap> {
    let [_, _, h, w] = t.dims();
    let data = t.data()[..h * w].iter().map(|v| v.clamp(0.0, 1.0)).collect();
    QualityMap::new(h, w, data)
}

/// Pooler inputs for one patch, plus the maps they were built from.
pub fn pooler_inputs(
    source: PoolSource,
    fusion: &Fusion,
    image: Option<&Image>,
    maps: &[QualityMap],
) -> Result<(Vec<Tensor4>, Vec<QualityMap>)> {
    let need_image = || image.ok_or_else(|| Error::Config(format!("the {} source needs image patches", source.token())));
    let maps: Vec<QualityMap> = match source {
        PoolSource::RawImage => return Ok((vec![need_image()?.to_tensor()], Vec::new())),
        PoolSource::GroundTruth => maps.to_vec(),
        PoolSource::Predicted(gens) => {
            let x = need_image()?.to_tensor();
            gens.iter()
                .map(|g| map_from_output(&g.predict(&[&x])?))
                .collect::<Result<_>>()?
        }
    };
    if maps.len() != fusion.methods.len() {
        return Err(Error::Config(format!(
            "{} map(s) for {} fused method(s)",
            maps.len(),
            fusion.methods.len()
        )));
    }
    let tensors: Vec<Tensor4> = maps.iter().map(QualityMap::to_tensor).collect();
    let inputs = match fusion.mode {
        FusionMode::MultiStream => tensors,
        FusionMode::SingleStream => {
            let [_, _, h, w] = tensors[0].dims();
            if tensors.iter().any(|t| t.dims() != [1, 1, h, w]) {
                return Err(Error::Shape("fused maps differ in size".into()));
            }
            let data = tensors.iter().flat_map(|t| t.data().iter().copied()).collect();
            vec![Tensor4::from_vec([1, tensors.len(), h, w], data)?]
        }
    };
    Ok((inputs, maps))
}

#[derive(Clone, Debug)]
pub struct Prediction {
    pub score: f64,
    pub patch_scores: Vec<f64>,
    /// Full-image maps, one per generator, with overlaps averaged.
    pub maps: Vec<QualityMap>,
}

/// A trained generator/pooler pair applied patch by patch.
#[derive(Clone, Debug)]
pub struct Predictor {
    /// Empty when the pooler reads raw patches.
    pub generators: Vec<ComputeGraph>,
    pub pooler: ComputeGraph,
    pub fusion: Fusion,
    pub patch_size: usize,
    pub stride: usize,
}

impl Predictor {
    fn source(&self) -> PoolSource<'_> {
        if self.generators.is_empty() {
            PoolSource::RawImage
        } else {
            PoolSource::Predicted(&self.generators)
        }
    }

    pub fn score_patch(&self, patch: &Image) -> Result<(f64, Vec<QualityMap>)> {
        let (inputs, maps) = pooler_inputs(self.source(), &self.fusion, Some(patch), &[])?;
        let refs: Vec<&Tensor4> = inputs.iter().collect();
        let out = self.pooler.predict(&refs)?;
        Ok((out.data()[0], maps))
    }

    /// Mean of the patch scores over a sliding-window tiling of `img`.
    pub fn predict(&self, img: &Image) -> Result<Prediction> {
        let grid = extract_patches(img, self.patch_size, self.stride)?;
        let per_patch: Vec<Result<(f64, Vec<QualityMap>)>> =
            par::map_indexed(grid.patches.len(), |k| self.score_patch(&grid.patches[k]));
        let per_patch = per_patch.into_iter().collect::<Result<Vec<_>>>()?;
        let patch_scores: Vec<f64> = per_patch.iter().map(|(s, _)| *s).collect();
        let score = patch_scores.iter().sum::<f64>() / patch_scores.len() as f64;

        let (h, w) = (img.height(), img.width());
        let mut maps = Vec::with_capacity(self.generators.len());
        for k in 0..self.generators.len() {
            let mut sum = vec![0.0; h * w];
            let mut count = vec![0u32; h * w];
            for (&(r, c), (_, pm)) in grid.origins.iter().zip(&per_patch) {
                let m = &pm[k];
                for y in 0..m.height() {
                    for x in 0..m.width() {
                        sum[(r + y) * w + c + x] += m.get(y, x);
                        count[(r + y) * w + c + x] += 1;
                    }
                }
            }
            let data = sum
                .iter()
                .zip(&count)
                .map(|(s, &n)| (s / n as f64).clamp(0.0, 1.0))
                .collect();
            maps.push(QualityMap::new(h, w, data)?);
        }
        Ok(Prediction {
            score,
            patch_scores,
            maps,
        })
    }
}

/// Mean pooler score over a sliding-window tiling of full-reference maps.
pub fn score_map_patches(
    pooler: &ComputeGraph,
    fusion: &Fusion,
    maps: &[QualityMap],
    patch: usize,
    stride: usize,
) -> Result<f64> {
    let first = maps.first().ok_or_else(|| Error::Config("no maps to score".into()))?;
    let grid = extract_patches(&first.to_image(), patch, stride)?;
    let scores: Vec<Result<f64>> = par::map_indexed(grid.origins.len(), |k| {
        let (r, c) = grid.origins[k];
        let crops = maps.iter().map(|m| m.crop(r, c, patch, patch)).collect::<Result<Vec<_>>>()?;
        let (inputs, _) = pooler_inputs(PoolSource::GroundTruth, fusion, None, &crops)?;
        let refs: Vec<&Tensor4> = inputs.iter().collect();
        Ok(pooler.predict(&refs)?.data()[0])
    });
    let scores = scores.into_iter().collect::<Result<Vec<_>>>()?;
    Ok(scores.iter().sum::<f64>() / scores.len() as f64)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn flip_reverses_rows() {
        let t = Tensor4::from_vec([1, 2, 1, 3], vec![1.0, 2.0, 3.0, 4.0, 5.0, 6.0]).unwrap();
        assert_eq!(flip_tensor(&t).data(), &[3.0, 2.0, 1.0, 6.0, 5.0, 4.0]);
    }
}
