//! Full-reference similarity maps and scalar poolings.

mod gradient;
mod mdsi;
mod phase;
mod ssim;

use std::fmt;
use std::path::Path;
use std::str::FromStr;

use qmap_nn::Tensor4;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::image::{crop_buffer, flip_buffer, save_image, Image, Plane};
use crate::kv::KvConfig;

pub use gradient::{fsim_gm_map, gradient_magnitude, GradientOperator};
pub use mdsi::{mdsi_channels, mdsi_map};
pub use phase::{fsim_pc_map, phase_congruency};
pub use ssim::{gaussian_kernel, ssim_map};

/// Exponent applied before deviation pooling.
pub const DEVIATION_Q: f64 = 0.25;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum FrMethod {
    Ssim,
    FsimGm,
    FsimPc,
    MdsiGc,
}

impl FrMethod {
    pub const ALL: [FrMethod; 4] = [FrMethod::Ssim, FrMethod::FsimGm, FrMethod::FsimPc, FrMethod::MdsiGc];

    pub fn token(self) -> &'static str {
        match self {
            FrMethod::Ssim => "ssim",
            FrMethod::FsimGm => "fsim_gm",
            FrMethod::FsimPc => "fsim_pc",
            FrMethod::MdsiGc => "mdsi_gc",
        }
    }

    /// Pixels trimmed from each side of the inputs by this method.
    pub fn border(self, cfg: &MapConfig) -> usize {
        match self {
            FrMethod::Ssim => cfg.gaussian_size / 2,
            _ => 0,
        }
    }
}

impl fmt::Display for FrMethod {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.token())
    }
}

impl FromStr for FrMethod {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        FrMethod::ALL
            .into_iter()
            .find(|m| m.token() == s.to_ascii_lowercase())
            .ok_or_else(|| Error::Config(format!("unknown map method {s:?} (ssim, fsim_gm, fsim_pc, mdsi_gc)")))
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct MapConfig {
    pub ssim_k1: f64,
    pub ssim_k2: f64,
    pub dynamic_range: f64,
    pub gaussian_size: usize,
    pub gaussian_sigma: f64,
    pub fsim_t2: f64,
    pub pc_scales: usize,
    pub pc_orientations: usize,
    pub pc_t1: f64,
    pub pc_min_wavelength: f64,
    pub pc_mult: f64,
    pub pc_sigma_onf: f64,
    pub pc_dtheta_on_sigma: f64,
    pub pc_noise_k: f64,
    pub mdsi_c1: f64,
    pub mdsi_c2: f64,
    pub mdsi_c3: f64,
    pub mdsi_alpha: f64,
}

impl Default for MapConfig {
    fn default() -> Self {
        Self {
            ssim_k1: 0.01,
            ssim_k2: 0.03,
            dynamic_range: 255.0,
            gaussian_size: 11,
            gaussian_sigma: 1.5,
            fsim_t2: 160.0,
            pc_scales: 4,
            pc_orientations: 4,
            pc_t1: 0.85,
            pc_min_wavelength: 6.0,
            pc_mult: 2.0,
            pc_sigma_onf: 0.55,
            pc_dtheta_on_sigma: 1.2,
            pc_noise_k: 2.0,
            mdsi_c1: 140.0,
            mdsi_c2: 55.0,
            mdsi_c3: 550.0,
            mdsi_alpha: 0.6,
        }
    }
}

macro_rules! map_config_keys {
    ($m:ident) => {
        $m!(
            ssim_k1,
            ssim_k2,
            dynamic_range,
            gaussian_size,
            gaussian_sigma,
            fsim_t2,
            pc_scales,
            pc_orientations,
            pc_t1,
            pc_min_wavelength,
            pc_mult,
            pc_sigma_onf,
            pc_dtheta_on_sigma,
            pc_noise_k,
            mdsi_c1,
            mdsi_c2,
            mdsi_c3,
            mdsi_alpha
        )
    };
}

impl MapConfig {
    pub fn validate(&self) -> Result<()> {
        let reals = [
            ("ssim_k1", self.ssim_k1),
            ("ssim_k2", self.ssim_k2),
            ("dynamic_range", self.dynamic_range),
            ("gaussian_sigma", self.gaussian_sigma),
            ("fsim_t2", self.fsim_t2),
            ("pc_t1", self.pc_t1),
            ("pc_min_wavelength", self.pc_min_wavelength),
            ("pc_mult", self.pc_mult),
            ("pc_sigma_onf", self.pc_sigma_onf),
            ("pc_dtheta_on_sigma", self.pc_dtheta_on_sigma),
            ("pc_noise_k", self.pc_noise_k),
            ("mdsi_c1", self.mdsi_c1),
            ("mdsi_c2", self.mdsi_c2),
            ("mdsi_c3", self.mdsi_c3),
        ];
        for (name, v) in reals {
            if !(v.is_finite() && v > 0.0) {
                return Err(Error::Config(format!("{name}={v} must be positive")));
            }
        }
        if self.gaussian_size == 0 || self.gaussian_size % 2 == 0 {
            return Err(Error::Config(format!("gaussian_size={} must be odd", self.gaussian_size)));
        }
        if self.pc_scales == 0 || self.pc_orientations == 0 {
            return Err(Error::Config("pc_scales and pc_orientations must be positive".into()));
        }
        if !(0.0..=1.0).contains(&self.mdsi_alpha) {
            return Err(Error::Config(format!("mdsi_alpha={} not in [0,1]", self.mdsi_alpha)));
        }
        Ok(())
    }

    /// Reads `map.<field>` keys, falling back to defaults.
    pub fn from_kv(kv: &KvConfig) -> Result<Self> {
        let mut cfg = Self::default();
        macro_rules! read {
            ($($f:ident),*) => {$(
                cfg.$f = kv.get_or(concat!("map.", stringify!($f)), cfg.$f)?;
            )*};
        }
        map_config_keys!(read);
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn write_kv(&self, kv: &mut KvConfig) {
        macro_rules! write {
            ($($f:ident),*) => {$(
                kv.set(concat!("map.", stringify!($f)), self.$f);
            )*};
        }
        map_config_keys!(write);
    }
}

/// Per-pixel similarity in [0,1]; 1 marks an undistorted pixel.
#[derive(Clone, Debug, PartialEq)]
pub struct QualityMap {
    height: usize,
    width: usize,
    data: Vec<f64>,
}

impl QualityMap {
    pub fn new(height: usize, width: usize, data: Vec<f64>) -> Result<Self> {
        if data.len() != height * width {
            return Err(Error::Shape(format!(
                "{height}x{width} map needs {} values, got {}",
                height * width,
                data.len()
            )));
        }
        if let Some(v) = data.iter().find(|v| !(0.0..=1.0).contains(*v)) {
            return Err(Error::Domain(format!("map value {v} outside [0,1]")));
        }
        Ok(Self { height, width, data })
    }

    /// Clamps a plane into [0,1]; non-finite values become 0.
    pub fn from_plane_clamped(p: Plane) -> Self {
        let data = p
            .data
            .into_iter()
            .map(|v| if v.is_finite() { v.clamp(0.0, 1.0) } else { 0.0 })
            .collect();
        Self {
            height: p.height,
            width: p.width,
            data,
        }
    }

    pub fn filled(height: usize, width: usize, value: f64) -> Self {
        Self {
            height,
            width,
            data: vec![value.clamp(0.0, 1.0); height * width],
        }
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn data(&self) -> &[f64] {
        &self.data
    }

    pub fn get(&self, y: usize, x: usize) -> f64 {
        self.data[y * self.width + x]
    }

    pub fn mean(&self) -> f64 {
        self.data.iter().sum::<f64>() / self.data.len() as f64
    }

    pub fn crop(&self, y0: usize, x0: usize, h: usize, w: usize) -> Result<QualityMap> {
        Ok(QualityMap {
            height: h,
            width: w,
            data: crop_buffer(&self.data, self.height, self.width, 1, y0, x0, h, w)?,
        })
    }

    pub fn crop_border(&self, n: usize) -> Result<QualityMap> {
        if self.height <= 2 * n || self.width <= 2 * n {
            return Err(Error::Size(format!(
                "cropping {n} px from a {}x{} map leaves nothing",
                self.height, self.width
            )));
        }
        self.crop(n, n, self.height - 2 * n, self.width - 2 * n)
    }

    pub fn hflip(&self) -> QualityMap {
        QualityMap {
            height: self.height,
            width: self.width,
            data: flip_buffer(&self.data, self.height, self.width, 1),
        }
    }

    pub fn to_image(&self) -> Image {
        Image::new(self.height, self.width, 1, self.data.clone()).expect("map values are in range")
    }

    pub fn from_image(img: &Image) -> Result<QualityMap> {
        if img.channels() != 1 {
            return Err(Error::Channel(format!("map images are single-channel, got {}", img.channels())));
        }
        QualityMap::new(img.height(), img.width(), img.data().to_vec())
    }

    /// `(1, 1, h, w)` tensor.
    pub fn to_tensor(&self) -> Tensor4 {
        Tensor4::from_vec([1, 1, self.height, self.width], self.data.clone()).expect("map dims")
    }
}

fn check_pair(dist: &Image, reference: &Image) -> Result<()> {
    if !dist.same_dims(reference) {
        return Err(Error::Shape(format!(
            "distorted {}x{}x{} vs reference {}x{}x{}",
            dist.height(),
            dist.width(),
            dist.channels(),
            reference.height(),
            reference.width(),
            reference.channels()
        )));
    }
    Ok(())
}

/// Luminance on the configured dynamic range.
fn scaled_luminance(img: &Image, cfg: &MapConfig) -> Plane {
    crate::image::to_luminance(img).map(|v| v * cfg.dynamic_range)
}

pub fn compute_map(method: FrMethod, dist: &Image, reference: &Image, cfg: &MapConfig) -> Result<QualityMap> {
    match method {
        FrMethod::Ssim => ssim_map(dist, reference, cfg),
        FrMethod::FsimGm => fsim_gm_map(dist, reference, cfg),
        FrMethod::FsimPc => fsim_pc_map(dist, reference, cfg),
        FrMethod::MdsiGc => mdsi_map(dist, reference, cfg),
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Pooling {
    Average,
    StdDev,
    Deviation,
}

pub fn pool_map(map: &QualityMap, strategy: Pooling) -> Result<f64> {
    if map.data.is_empty() {
        return Err(Error::Size("cannot pool an empty map".into()));
    }
    let n = map.data.len() as f64;
    let mean = |v: &[f64]| v.iter().sum::<f64>() / n;
    Ok(match strategy {
        Pooling::Average => mean(&map.data),
        Pooling::StdDev => {
            let m = mean(&map.data);
            (map.data.iter().map(|v| (v - m).powi(2)).sum::<f64>() / n).sqrt()
        }
        Pooling::Deviation => {
            let powed: Vec<f64> = map.data.iter().map(|v| v.powf(DEVIATION_Q)).collect();
            let m = mean(&powed);
            powed.iter().map(|v| (v - m).abs()).sum::<f64>() / n
        }
    })
}

/// Replaces every pixel by the mean of its `block×block` tile; tiles on the
/// right and bottom edges are truncated.
pub fn avg_patchify_map(map: &QualityMap, block: usize) -> QualityMap {
    let block = block.max(1);
    if block == 1 {
        return map.clone();
    }
    let (h, w) = (map.height, map.width);
    let mut out = vec![0.0; h * w];
    for ty in (0..h).step_by(block) {
        for tx in (0..w).step_by(block) {
            let (y1, x1) = ((ty + block).min(h), (tx + block).min(w));
            let first = map.data[ty * w + tx];
            let mut sum = 0.0;
            let mut constant = true;
            for y in ty..y1 {
                for &v in &map.data[y * w + tx..y * w + x1] {
                    sum += v;
                    constant &= v == first;
                }
            }
            let mean = if constant {
                first
            } else {
                (sum / ((y1 - ty) * (x1 - tx)) as f64).clamp(0.0, 1.0)
            };
            for y in ty..y1 {
                out[y * w + tx..y * w + x1].fill(mean);
            }
        }
    }
    QualityMap { height: h, width: w, data: out }
}

/// 8-bit grayscale PNG with value `round(255·v)`.
pub fn save_map(map: &QualityMap, path: impl AsRef<Path>) -> Result<()> {
    save_image(&map.to_image(), path)
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn random_map(h: usize, w: usize, seed: u64) -> QualityMap {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        QualityMap::new(h, w, (0..h * w).map(|_| rng.random::<f64>()).collect()).unwrap()
    }

    #[test]
    fn method_tokens_round_trip() {
        for m in FrMethod::ALL {
            assert_eq!(m.token().parse::<FrMethod>().unwrap(), m);
            assert_eq!(serde_json::to_string(&m).unwrap(), format!("\"{}\"", m.token()));
        }
        assert!("vsi".parse::<FrMethod>().is_err());
    }

    #[test]
    fn config_kv_round_trip_and_validation() {
        let mut cfg = MapConfig::default();
        cfg.mdsi_alpha = 0.25;
        let mut kv = KvConfig::new();
        cfg.write_kv(&mut kv);
        assert_eq!(MapConfig::from_kv(&kv).unwrap(), cfg);
        kv.set("map.mdsi_alpha", 1.5);
        assert!(MapConfig::from_kv(&kv).is_err());
        kv.set("map.mdsi_alpha", 0.5);
        kv.set("map.fsim_t2", 0);
        assert!(MapConfig::from_kv(&kv).is_err());
    }

    #[test]
    fn pooling_constant_and_two_point() {
        let ones = QualityMap::filled(3, 3, 1.0);
        assert_eq!(pool_map(&ones, Pooling::Average).unwrap(), 1.0);
        assert_eq!(pool_map(&ones, Pooling::StdDev).unwrap(), 0.0);
        assert_eq!(pool_map(&ones, Pooling::Deviation).unwrap(), 0.0);
        let two = QualityMap::new(1, 2, vec![0.0, 1.0]).unwrap();
        assert_eq!(pool_map(&two, Pooling::Average).unwrap(), 0.5);
        assert_eq!(pool_map(&two, Pooling::StdDev).unwrap(), 0.5);
        let empty = QualityMap::new(0, 0, vec![]).unwrap();
        assert!(matches!(pool_map(&empty, Pooling::Average), Err(Error::Size(_))));
    }

    #[test]
    fn pooling_matches_summation_oracle() {
        let m = random_map(10, 10, 3);
        let mut s = 0.0;
        for y in 0..10 {
            for x in 0..10 {
                s += m.get(y, x);
            }
        }
        let mean = s / 100.0;
        let mut var = 0.0;
        for v in m.data() {
            var += (v - mean) * (v - mean);
        }
        let std = (var / 100.0).sqrt();
        let roots: Vec<f64> = m.data().iter().map(|v| v.sqrt().sqrt()).collect();
        let rmean = roots.iter().sum::<f64>() / 100.0;
        let dev = roots.iter().map(|r| (r - rmean).abs()).sum::<f64>() / 100.0;
        assert!((pool_map(&m, Pooling::Average).unwrap() - mean).abs() < 1e-12);
        assert!((pool_map(&m, Pooling::StdDev).unwrap() - std).abs() < 1e-12);
        assert!((pool_map(&m, Pooling::Deviation).unwrap() - dev).abs() < 1e-12);
    }

    #[test]
    fn patchify_identity_and_single_tile() {
        let m = random_map(4, 4, 1);
        assert_eq!(avg_patchify_map(&m, 1), m);
        let p = avg_patchify_map(&m, 4);
        assert!(p.data().iter().all(|&v| (v - m.mean()).abs() < 1e-15));
    }

    #[test]
    fn patchify_matches_tiling_oracle() {
        let m = random_map(6, 6, 2);
        let p = avg_patchify_map(&m, 4);
        for y in 0..6 {
            for x in 0..6 {
                let (ty, tx) = (y / 4 * 4, x / 4 * 4);
                let (th, tw) = ((ty + 4).min(6) - ty, (tx + 4).min(6) - tx);
                let mut s = 0.0;
                for yy in ty..ty + th {
                    for xx in tx..tx + tw {
                        s += m.get(yy, xx);
                    }
                }
                assert!((p.get(y, x) - s / (th * tw) as f64).abs() < 1e-15);
            }
        }
    }

    #[test]
    fn patchify_idempotent_and_mean_preserving() {
        for (seed, block) in [(4u64, 2usize), (5, 3), (6, 8), (7, 48)] {
            let m = random_map(50, 37, seed);
            let p = avg_patchify_map(&m, block);
            assert_eq!(avg_patchify_map(&p, block), p);
            assert!((p.mean() - m.mean()).abs() < 1e-12);
        }
    }

    #[test]
    fn map_crop_and_flip() {
        let m = random_map(8, 6, 9);
        assert_eq!(m.hflip().hflip(), m);
        let c = m.crop_border(2).unwrap();
        assert_eq!((c.height(), c.width()), (4, 2));
        assert_eq!(c.get(0, 0), m.get(2, 2));
        assert!(m.crop_border(3).is_err());
    }
}
