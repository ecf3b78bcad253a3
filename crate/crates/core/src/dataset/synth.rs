use std::fmt;
use std::path::{Path, PathBuf};
use std::str::FromStr;

use qmap_nn::{par, SeedStream};
use rand::Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use super::{DatasetManifest, Entry, ScoreKind};
use crate::error::{io_err, Error, Result};
use crate::image::{save_image, Image};
use crate::maps::{fsim_gm_map, MapConfig};

/// Smallest base image side accepted by [`synthesize`].
pub const MIN_BASE_SIZE: usize = 160;

const BLUR_SIGMA: [f64; 5] = [0.8, 1.6, 2.4, 3.2, 4.0];
const NOISE_SIGMA: [f64; 5] = [0.02, 0.05, 0.09, 0.14, 0.20];
const JPEG_QUALITY: [u32; 5] = [90, 70, 50, 30, 10];
const BLOCK_SIZE: usize = 32;

const JPEG_LUMA_TABLE: [[f64; 8]; 8] = [
    [16.0, 11.0, 10.0, 16.0, 24.0, 40.0, 51.0, 61.0],
    [12.0, 12.0, 14.0, 19.0, 26.0, 58.0, 60.0, 55.0],
    [14.0, 13.0, 16.0, 24.0, 40.0, 57.0, 69.0, 56.0],
    [14.0, 17.0, 22.0, 29.0, 51.0, 87.0, 80.0, 62.0],
    [18.0, 22.0, 37.0, 56.0, 68.0, 109.0, 103.0, 77.0],
    [24.0, 35.0, 55.0, 64.0, 81.0, 104.0, 113.0, 92.0],
    [49.0, 64.0, 78.0, 87.0, 103.0, 121.0, 120.0, 101.0],
    [72.0, 92.0, 95.0, 98.0, 112.0, 100.0, 103.0, 99.0],
];

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum DistortionKind {
    GaussianBlur,
    WhiteNoise,
    JpegBlocking,
    LocalBlockwise,
}

impl DistortionKind {
    pub const ALL: [DistortionKind; 4] = [
        DistortionKind::GaussianBlur,
        DistortionKind::WhiteNoise,
        DistortionKind::JpegBlocking,
        DistortionKind::LocalBlockwise,
    ];

    pub fn token(self) -> &'static str {
        match self {
            DistortionKind::GaussianBlur => "gaussian_blur",
            DistortionKind::WhiteNoise => "white_noise",
            DistortionKind::JpegBlocking => "jpeg_blocking",
            DistortionKind::LocalBlockwise => "local_blockwise",
        }
    }
}

impl fmt::Display for DistortionKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.token())
    }
}

impl FromStr for DistortionKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        DistortionKind::ALL
            .into_iter()
            .find(|k| k.token() == s)
            .ok_or_else(|| Error::Config(format!("unknown distortion {s:?}")))
    }
}

/// A distortion at an ordinal level; level 0 leaves the image unchanged.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct DistortionRecipe {
    pub kind: DistortionKind,
    pub level: u32,
}

impl DistortionRecipe {
    pub fn new(kind: DistortionKind, level: u32) -> Result<Self> {
        if level > 5 {
            return Err(Error::Config(format!("distortion level {level} not in 0..=5")));
        }
        Ok(Self { kind, level })
    }

    /// Every kind at levels 1 through 5.
    pub fn ladder() -> Vec<Self> {
        DistortionKind::ALL
            .into_iter()
            .flat_map(|kind| (1..=5).map(move |level| Self { kind, level }))
            .collect()
    }

    /// Kind-specific magnitude: blur/noise sigma, JPEG quality or block count.
    pub fn magnitude(&self) -> f64 {
        let i = self.level as usize - 1;
        match self.kind {
            DistortionKind::GaussianBlur => BLUR_SIGMA[i],
            DistortionKind::WhiteNoise => NOISE_SIGMA[i],
            DistortionKind::JpegBlocking => JPEG_QUALITY[i] as f64,
            DistortionKind::LocalBlockwise => self.level as f64,
        }
    }
}

/// Rounds every intensity to the nearest 8-bit level.
pub fn quantize(img: &Image) -> Image {
    Image::from_fn(img.height(), img.width(), img.channels(), |y, x, c| {
        (img.get(y, x, c) * 255.0).round() / 255.0
    })
}

fn blur(img: &Image, sigma: f64) -> Image {
    let r = (3.0 * sigma).ceil() as isize;
    let taps: Vec<f64> = (-r..=r).map(|d| (-((d * d) as f64) / (2.0 * sigma * sigma)).exp()).collect();
    let total: f64 = taps.iter().sum();
    let taps: Vec<f64> = taps.iter().map(|t| t / total).collect();
    let (h, w, c) = (img.height() as isize, img.width() as isize, img.channels());
    let mut tmp = vec![0.0; img.data().len()];
    for y in 0..h {
        for x in 0..w {
            for ch in 0..c {
                let mut acc = 0.0;
                for (k, t) in taps.iter().enumerate() {
                    let xx = (x + k as isize - r).clamp(0, w - 1);
                    acc += t * img.get(y as usize, xx as usize, ch);
                }
                tmp[((y * w + x) as usize) * c + ch] = acc;
            }
        }
    }
    Image::from_fn(h as usize, w as usize, c, |y, x, ch| {
        let mut acc = 0.0;
        for (k, t) in taps.iter().enumerate() {
            let yy = (y as isize + k as isize - r).clamp(0, h - 1) as usize;
            acc += t * tmp[(yy * w as usize + x) * c + ch];
        }
        acc
    })
}

fn white_noise(img: &Image, sigma: f64, stream: &SeedStream) -> Image {
    let mut rng = stream.rng("white_noise");
    let normal = Normal::new(0.0, 1.0).expect("unit normal");
    let noise: Vec<f64> = (0..img.data().len()).map(|_| normal.sample(&mut rng)).collect();
    let c = img.channels();
    Image::from_fn(img.height(), img.width(), c, |y, x, ch| {
        img.get(y, x, ch) + sigma * noise[(y * img.width() + x) * c + ch]
    })
}

fn dct_basis() -> [[f64; 8]; 8] {
    let mut m = [[0.0; 8]; 8];
    for (u, row) in m.iter_mut().enumerate() {
        let a = if u == 0 { (1.0f64 / 8.0).sqrt() } else { (2.0f64 / 8.0).sqrt() };
        for (x, v) in row.iter_mut().enumerate() {
            *v = a * ((2 * x + 1) as f64 * u as f64 * std::f64::consts::PI / 16.0).cos();
        }
    }
    m
}

fn quant_table(quality: u32) -> [[f64; 8]; 8] {
    let q = quality.clamp(1, 100) as f64;
    let scale = if q < 50.0 { 5000.0 / q } else { 200.0 - 2.0 * q };
    let mut t = [[0.0; 8]; 8];
    for (i, row) in t.iter_mut().enumerate() {
        for (j, v) in row.iter_mut().enumerate() {
            *v = ((JPEG_LUMA_TABLE[i][j] * scale + 50.0) / 100.0).floor().clamp(1.0, 255.0);
        }
    }
    t
}

/// Blockwise 8×8 DCT quantization of every channel; edge blocks are
/// replicate-padded.
fn jpeg_blocking(img: &Image, quality: u32) -> Image {
    let basis = dct_basis();
    let table = quant_table(quality);
    let (h, w, c) = (img.height(), img.width(), img.channels());
    let mut out = img.data().to_vec();
    for by in (0..h).step_by(8) {
        for bx in (0..w).step_by(8) {
            for ch in 0..c {
                let mut block = [[0.0; 8]; 8];
                for (i, row) in block.iter_mut().enumerate() {
                    for (j, v) in row.iter_mut().enumerate() {
                        *v = img.get((by + i).min(h - 1), (bx + j).min(w - 1), ch) * 255.0 - 128.0;
                    }
                }
                let mut coef = [[0.0; 8]; 8];
                for u in 0..8 {
                    for v in 0..8 {
                        let mut acc = 0.0;
                        for i in 0..8 {
                            for j in 0..8 {
                                acc += basis[u][i] * block[i][j] * basis[v][j];
                            }
                        }
                        coef[u][v] = (acc / table[u][v]).round() * table[u][v];
                    }
                }
                for i in 0..8 {
                    for j in 0..8 {
                        if by + i >= h || bx + j >= w {
                            continue;
                        }
                        let mut acc = 0.0;
                        for u in 0..8 {
                            for v in 0..8 {
                                acc += basis[u][i] * coef[u][v] * basis[v][j];
                            }
                        }
                        out[((by + i) * w + bx + j) * c + ch] = ((acc + 128.0) / 255.0).clamp(0.0, 1.0);
                    }
                }
            }
        }
    }
    Image::new(h, w, c, out).expect("clamped")
}

/// Pastes `count` non-overlapping constant gray squares. Positions and grays
/// come from one stream, so level `k` blocks are a prefix of level `k+1`.
fn local_blockwise(img: &Image, count: usize, stream: &SeedStream) -> Image {
    let mut rng = stream.rng("blocks");
    let (h, w) = (img.height(), img.width());
    let mut blocks: Vec<(usize, usize, f64)> = Vec::new();
    let mut attempts = 0;
    while blocks.len() < 5 && attempts < 10_000 {
        attempts += 1;
        let y = rng.random_range(0..=h - BLOCK_SIZE);
        let x = rng.random_range(0..=w - BLOCK_SIZE);
        let gray = rng.random_range(0.0..1.0);
        let clear = blocks
            .iter()
            .all(|&(by, bx, _)| y + BLOCK_SIZE <= by || by + BLOCK_SIZE <= y || x + BLOCK_SIZE <= bx || bx + BLOCK_SIZE <= x);
        if clear {
            blocks.push((y, x, gray));
        }
    }
    let blocks = &blocks[..count.min(blocks.len())];
    Image::from_fn(h, w, img.channels(), |y, x, ch| {
        blocks
            .iter()
            .find(|&&(by, bx, _)| (by..by + BLOCK_SIZE).contains(&y) && (bx..bx + BLOCK_SIZE).contains(&x))
            .map_or(img.get(y, x, ch), |b| b.2)
    })
}

pub fn apply_distortion(img: &Image, recipe: &DistortionRecipe, stream: &SeedStream) -> Result<Image> {
    if recipe.level == 0 {
        return Ok(img.clone());
    }
    if recipe.level > 5 {
        return Err(Error::Config(format!("distortion level {} not in 0..=5", recipe.level)));
    }
    Ok(match recipe.kind {
        DistortionKind::GaussianBlur => blur(img, recipe.magnitude()),
        DistortionKind::WhiteNoise => white_noise(img, recipe.magnitude(), stream),
        DistortionKind::JpegBlocking => jpeg_blocking(img, JPEG_QUALITY[recipe.level as usize - 1]),
        DistortionKind::LocalBlockwise => {
            if img.height() < BLOCK_SIZE || img.width() < BLOCK_SIZE {
                return Err(Error::Size(format!("image smaller than a {BLOCK_SIZE} px block")));
            }
            local_blockwise(img, recipe.level as usize, stream)
        }
    })
}

fn value_noise(rng: &mut impl Rng, cells: usize) -> Vec<f64> {
    (0..(cells + 1) * (cells + 1)).map(|_| rng.random::<f64>()).collect()
}

fn sample_value_noise(grid: &[f64], cells: usize, fy: f64, fx: f64) -> f64 {
    let (gy, gx) = (fy * cells as f64, fx * cells as f64);
    let (y0, x0) = ((gy as usize).min(cells - 1), (gx as usize).min(cells - 1));
    let (ty, tx) = (gy - y0 as f64, gx - x0 as f64);
    let at = |y: usize, x: usize| grid[y * (cells + 1) + x];
    let top = at(y0, x0) * (1.0 - tx) + at(y0, x0 + 1) * tx;
    let bottom = at(y0 + 1, x0) * (1.0 - tx) + at(y0 + 1, x0 + 1) * tx;
    top * (1.0 - ty) + bottom * ty
}

/// Procedural RGB scene: colored gradient, filtered noise texture, shapes and
/// thin strokes.
pub fn procedural_base(index: usize, size: usize, seed: u64) -> Image {
    let mut rng = SeedStream::new(seed).rng_indexed("base", index as u64);
    let corners: Vec<[f64; 3]> = (0..4)
        .map(|_| [rng.random_range(0.15..0.85), rng.random_range(0.15..0.85), rng.random_range(0.15..0.85)])
        .collect();
    let cells = rng.random_range(4..12);
    let texture = value_noise(&mut rng, cells);
    let fine = value_noise(&mut rng, 3 * cells);
    let texture_gain = rng.random_range(0.1..0.35);
    let checker = rng.random_range(6..20);
    let checker_gain = if index % 2 == 0 { rng.random_range(0.05..0.2) } else { 0.0 };
    let discs: Vec<(f64, f64, f64, [f64; 3])> = (0..rng.random_range(2..6))
        .map(|_| {
            (
                rng.random_range(0.1..0.9),
                rng.random_range(0.1..0.9),
                rng.random_range(0.05..0.2),
                [rng.random_range(0.0..1.0), rng.random_range(0.0..1.0), rng.random_range(0.0..1.0)],
            )
        })
        .collect();
    let strokes: Vec<(f64, f64, f64, f64, f64)> = (0..rng.random_range(3..9))
        .map(|_| {
            (
                rng.random_range(0.05..0.95),
                rng.random_range(0.05..0.95),
                rng.random_range(0.05..0.95),
                rng.random_range(0.05..0.95),
                rng.random_range(0.0..1.0),
            )
        })
        .collect();
    let s = size as f64;
    Image::from_fn(size, size, 3, |y, x, c| {
        let (fy, fx) = (y as f64 / s, x as f64 / s);
        let mut v = corners[0][c] * (1.0 - fy) * (1.0 - fx)
            + corners[1][c] * (1.0 - fy) * fx
            + corners[2][c] * fy * (1.0 - fx)
            + corners[3][c] * fy * fx;
        v += texture_gain * (sample_value_noise(&texture, cells, fy, fx) - 0.5);
        v += 0.5 * texture_gain * (sample_value_noise(&fine, 3 * cells, fy, fx) - 0.5);
        if ((y / checker) + (x / checker)) % 2 == 0 {
            v += checker_gain;
        }
        for &(cy, cx, r, col) in &discs {
            if (fy - cy).powi(2) + (fx - cx).powi(2) < r * r {
                v = 0.6 * col[c] + 0.4 * v;
            }
        }
        for &(y0, x0, y1, x1, tone) in &strokes {
            let (dy, dx) = (y1 - y0, x1 - x0);
            let len2 = dy * dy + dx * dx;
            let t = (((fy - y0) * dy + (fx - x0) * dx) / len2).clamp(0.0, 1.0);
            let d = ((fy - y0 - t * dy).powi(2) + (fx - x0 - t * dx).powi(2)).sqrt() * s;
            if d < 1.2 {
                v = tone;
            }
        }
        v.clamp(0.02, 0.98)
    })
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SynthConfig {
    pub base_count: usize,
    pub base_size: usize,
    pub kinds: Vec<DistortionKind>,
    pub levels: Vec<u32>,
    pub seed: u64,
}

impl SynthConfig {
    pub fn recipes(&self) -> Result<Vec<DistortionRecipe>> {
        let mut out = Vec::new();
        for &kind in &self.kinds {
            for &level in &self.levels {
                out.push(DistortionRecipe::new(kind, level)?);
            }
        }
        Ok(out)
    }

    pub fn bases(&self) -> Vec<Image> {
        (0..self.base_count)
            .map(|i| quantize(&procedural_base(i, self.base_size, self.seed)))
            .collect()
    }
}

fn rel(p: &Path, root: &Path) -> PathBuf {
    p.strip_prefix(root).map(Path::to_path_buf).unwrap_or_else(|_| p.to_path_buf())
}

/// Writes references, distorted images and `manifest.csv` under `out_dir`.
/// Scores are `100 · mean(gradient-magnitude similarity)` computed from the
/// stored 8-bit images.
pub fn synthesize(
    bases: &[Image],
    recipes: &[DistortionRecipe],
    out_dir: impl AsRef<Path>,
    seed: u64,
) -> Result<DatasetManifest> {
    let out_dir = out_dir.as_ref();
    for (i, b) in bases.iter().enumerate() {
        if b.height() < MIN_BASE_SIZE || b.width() < MIN_BASE_SIZE {
            return Err(Error::Size(format!(
                "base image {i} is {}x{}, need at least {MIN_BASE_SIZE} px per side",
                b.height(),
                b.width()
            )));
        }
    }
    let ref_dir = out_dir.join("reference");
    let dist_dir = out_dir.join("distorted");
    for d in [&ref_dir, &dist_dir] {
        std::fs::create_dir_all(d).map_err(io_err(d))?;
    }
    let refs: Vec<Image> = bases.iter().map(quantize).collect();
    let ref_paths: Vec<PathBuf> = (0..refs.len()).map(|i| ref_dir.join(format!("base_{i:02}.png"))).collect();
    let saved: Vec<Result<()>> = par::map_indexed(refs.len(), |i| save_image(&refs[i], &ref_paths[i]));
    saved.into_iter().collect::<Result<()>>()?;

    let root = SeedStream::new(seed);
    let cfg = MapConfig::default();
    let jobs: Vec<(usize, DistortionRecipe)> =
        (0..refs.len()).flat_map(|i| recipes.iter().map(move |r| (i, *r))).collect();
    let entries: Vec<Result<Entry>> = par::map_indexed(jobs.len(), |k| {
        let (i, recipe) = jobs[k];
        let kind_idx = DistortionKind::ALL.iter().position(|&d| d == recipe.kind).expect("known kind") as u64;
        let stream = SeedStream::new(root.derive("distort", i as u64 * 16 + kind_idx));
        let dist = quantize(&apply_distortion(&refs[i], &recipe, &stream)?);
        let id = format!("b{i:02}_{}_{}", recipe.kind, recipe.level);
        let path = dist_dir.join(format!("{id}.png"));
        save_image(&dist, &path)?;
        let score = 100.0 * fsim_gm_map(&dist, &refs[i], &cfg)?.mean();
        Ok(Entry {
            id,
            distorted: rel(&path, out_dir),
            reference: Some(rel(&ref_paths[i], out_dir)),
            distortion: recipe.kind.to_string(),
            level: recipe.level,
            score,
            score_kind: ScoreKind::Mos,
        })
    });
    let mut manifest = DatasetManifest::new(out_dir, (0.0, 100.0));
    manifest.entries = entries.into_iter().collect::<Result<_>>()?;
    manifest.save(out_dir.join("manifest.csv"))?;
    Ok(manifest)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn ladders_increase_in_magnitude() {
        for kind in DistortionKind::ALL {
            let mags: Vec<f64> = (1..=5).map(|l| DistortionRecipe { kind, level: l }.magnitude()).collect();
            let increasing = mags.windows(2).all(|p| p[1] > p[0]);
            let decreasing = mags.windows(2).all(|p| p[1] < p[0]);
            // JPEG quality falls as distortion rises
            assert!(if kind == DistortionKind::JpegBlocking { decreasing } else { increasing });
        }
        assert!(DistortionRecipe::new(DistortionKind::WhiteNoise, 6).is_err());
    }

    #[test]
    fn level_zero_is_identity() {
        let img = procedural_base(0, 40, 1);
        for kind in DistortionKind::ALL {
            let r = DistortionRecipe { kind, level: 0 };
            assert_eq!(apply_distortion(&img, &r, &SeedStream::new(0)).unwrap(), img);
        }
    }

    #[test]
    fn dct_basis_is_orthonormal() {
        let b = dct_basis();
        for u in 0..8 {
            for v in 0..8 {
                let dot: f64 = (0..8).map(|x| b[u][x] * b[v][x]).sum();
                assert!((dot - if u == v { 1.0 } else { 0.0 }).abs() < 1e-12);
            }
        }
        assert_eq!(quant_table(50)[0][0], 16.0);
        assert_eq!(quant_table(100)[7][7], 1.0);
    }

    #[test]
    fn blur_preserves_constants() {
        let img = Image::from_fn(20, 20, 3, |_, _, c| 0.2 + 0.1 * c as f64);
        let b = blur(&img, 2.4);
        for (a, b) in img.data().iter().zip(b.data()) {
            assert!((a - b).abs() < 1e-12);
        }
    }

    #[test]
    fn blocks_are_nested_across_levels() {
        let img = procedural_base(1, 160, 2);
        let s = SeedStream::new(5);
        let l2 = local_blockwise(&img, 2, &s);
        let l3 = local_blockwise(&img, 3, &s);
        let changed = |a: &Image| a.data().iter().zip(img.data()).filter(|(x, y)| x != y).count();
        assert!(changed(&l3) > changed(&l2));
        for (k, (&a, &b)) in l2.data().iter().zip(l3.data()).enumerate() {
            if a != img.data()[k] {
                assert_eq!(a, b);
            }
        }
    }
}
