use super::{check_pair, scaled_luminance, MapConfig, QualityMap};
use crate::error::{Error, Result};
use crate::image::{Image, Plane};

/// Normalized 1-D Gaussian taps; the 2-D window is their outer product.
pub fn gaussian_kernel(size: usize, sigma: f64) -> Vec<f64> {
    let r = (size / 2) as f64;
    let taps: Vec<f64> = (0..size)
        .map(|i| {
            let d = i as f64 - r;
            (-(d * d) / (2.0 * sigma * sigma)).exp()
        })
        .collect();
    let s: f64 = taps.iter().sum();
    taps.into_iter().map(|t| t / s).collect()
}

/// Separable correlation keeping only fully covered positions.
fn filter_valid(p: &Plane, k: &[f64]) -> Plane {
    let n = k.len();
    let (h, w) = (p.height, p.width);
    let (oh, ow) = (h + 1 - n, w + 1 - n);
    let mut rows = vec![0.0; h * ow];
    for y in 0..h {
        let src = &p.data[y * w..(y + 1) * w];
        for x in 0..ow {
            rows[y * ow + x] = k.iter().zip(&src[x..x + n]).map(|(a, b)| a * b).sum();
        }
    }
    let mut out = vec![0.0; oh * ow];
    for y in 0..oh {
        for x in 0..ow {
            let mut acc = 0.0;
            for (i, kv) in k.iter().enumerate() {
                acc += kv * rows[(y + i) * ow + x];
            }
            out[y * ow + x] = acc;
        }
    }
    Plane {
        height: oh,
        width: ow,
        data: out,
    }
}

/// SSIM index per valid window position, so the output loses
/// `gaussian_size / 2` pixels on every side.
pub fn ssim_map(dist: &Image, reference: &Image, cfg: &MapConfig) -> Result<QualityMap> {
    check_pair(dist, reference)?;
    let n = cfg.gaussian_size;
    if dist.height() < n || dist.width() < n {
        return Err(Error::Size(format!(
            "{}x{} image is smaller than the {n}x{n} window",
            dist.height(),
            dist.width()
        )));
    }
    let k = gaussian_kernel(n, cfg.gaussian_sigma);
    let x = scaled_luminance(reference, cfg);
    let y = scaled_luminance(dist, cfg);
    let mu_x = filter_valid(&x, &k);
    let mu_y = filter_valid(&y, &k);
    let exx = filter_valid(&x.zip_map(&x, |a, b| a * b), &k);
    let eyy = filter_valid(&y.zip_map(&y, |a, b| a * b), &k);
    let exy = filter_valid(&x.zip_map(&y, |a, b| a * b), &k);
    let c1 = (cfg.ssim_k1 * cfg.dynamic_range).powi(2);
    let c2 = (cfg.ssim_k2 * cfg.dynamic_range).powi(2);
    let data = (0..mu_x.data.len())
        .map(|i| {
            let (mx, my) = (mu_x.data[i], mu_y.data[i]);
            let (mxx, myy, mxy) = (mx * mx, my * my, mx * my);
            let sxx = exx.data[i] - mxx;
            let syy = eyy.data[i] - myy;
            let sxy = exy.data[i] - mxy;
            ((2.0 * mxy + c1) * (2.0 * sxy + c2)) / ((mxx + myy + c1) * (sxx + syy + c2))
        })
        .collect();
    Ok(QualityMap::from_plane_clamped(Plane {
        height: mu_x.height,
        width: mu_x.width,
        data,
    }))
}
