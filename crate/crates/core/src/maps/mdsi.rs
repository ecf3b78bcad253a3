use super::gradient::{gradient_magnitude, similarity, GradientOperator};
use super::{check_pair, MapConfig, QualityMap};
use crate::error::{Error, Result};
use crate::image::{Image, Plane, LUMA_WEIGHTS};

const H_WEIGHTS: [f64; 3] = [0.30, 0.04, -0.35];
const M_WEIGHTS: [f64; 3] = [0.34, -0.60, 0.17];

/// L, H and M planes on the configured dynamic range.
pub fn mdsi_channels(img: &Image, cfg: &MapConfig) -> Result<[Plane; 3]> {
    if img.channels() != 3 {
        return Err(Error::Channel(format!(
            "gradient-chromaticity maps need RGB input, got {} channel(s)",
            img.channels()
        )));
    }
    let project = |wts: [f64; 3]| Plane {
        height: img.height(),
        width: img.width(),
        data: img
            .data()
            .chunks_exact(3)
            .map(|p| cfg.dynamic_range * (wts[0] * p[0] + wts[1] * p[1] + wts[2] * p[2]))
            .collect(),
    };
    Ok([project(LUMA_WEIGHTS), project(H_WEIGHTS), project(M_WEIGHTS)])
}

pub fn mdsi_map(dist: &Image, reference: &Image, cfg: &MapConfig) -> Result<QualityMap> {
    check_pair(dist, reference)?;
    let [lr, hr, mr] = mdsi_channels(reference, cfg)?;
    let [ld, hd, md] = mdsi_channels(dist, cfg)?;
    let fused = lr.zip_map(&ld, |a, b| (a + b) / 2.0);
    let gr = gradient_magnitude(&lr, GradientOperator::Prewitt)?;
    let gd = gradient_magnitude(&ld, GradientOperator::Prewitt)?;
    let gf = gradient_magnitude(&fused, GradientOperator::Prewitt)?;
    let gs_rd = similarity(&gr, &gd, cfg.mdsi_c1);
    let gs_df = similarity(&gd, &gf, cfg.mdsi_c2);
    let gs_rf = similarity(&gr, &gf, cfg.mdsi_c2);
    let c3 = cfg.mdsi_c3;
    let alpha = cfg.mdsi_alpha;
    let data = (0..gr.data.len())
        .map(|i| {
            let gs = gs_rd.data[i] + gs_df.data[i] - gs_rf.data[i];
            let (h1, h2, m1, m2) = (hr.data[i], hd.data[i], mr.data[i], md.data[i]);
            let cs = (2.0 * (h1 * h2 + m1 * m2) + c3) / ((h1 * h1 + h2 * h2) + (m1 * m1 + m2 * m2) + c3);
            cs + alpha * (gs - cs)
        })
        .collect();
    Ok(QualityMap::from_plane_clamped(Plane {
        height: gr.height,
        width: gr.width,
        data,
    }))
}
