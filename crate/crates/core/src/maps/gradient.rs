use serde::{Deserialize, Serialize};

use super::{check_pair, scaled_luminance, MapConfig, QualityMap};
use crate::error::{Error, Result};
use crate::image::{Image, Plane};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum GradientOperator {
    Scharr,
    Prewitt,
}

impl GradientOperator {
    /// Horizontal-derivative kernel; the vertical one is its transpose.
    pub fn kernel(self) -> [[f64; 3]; 3] {
        match self {
            GradientOperator::Scharr => {
                let s = 1.0 / 16.0;
                [[3.0 * s, 0.0, -3.0 * s], [10.0 * s, 0.0, -10.0 * s], [3.0 * s, 0.0, -3.0 * s]]
            }
            GradientOperator::Prewitt => {
                let s = 1.0 / 3.0;
                [[s, 0.0, -s], [s, 0.0, -s], [s, 0.0, -s]]
            }
        }
    }
}

/// `sqrt(Gx² + Gy²)` with replicate-padded borders.
pub fn gradient_magnitude(p: &Plane, op: GradientOperator) -> Result<Plane> {
    let (h, w) = (p.height, p.width);
    if h < 3 || w < 3 {
        return Err(Error::Size(format!("gradient needs at least 3x3, got {h}x{w}")));
    }
    let k = op.kernel();
    let at = |y: isize, x: isize| {
        let yy = y.clamp(0, h as isize - 1) as usize;
        let xx = x.clamp(0, w as isize - 1) as usize;
        p.data[yy * w + xx]
    };
    let mut out = vec![0.0; h * w];
    for y in 0..h {
        for x in 0..w {
            let (mut gx, mut gy) = (0.0, 0.0);
            for (i, row) in k.iter().enumerate() {
                for (j, &kv) in row.iter().enumerate() {
                    let (dy, dx) = (i as isize - 1, j as isize - 1);
                    gx += kv * at(y as isize + dy, x as isize + dx);
                    gy += kv * at(y as isize + dx, x as isize + dy);
                }
            }
            out[y * w + x] = (gx * gx + gy * gy).sqrt();
        }
    }
    Ok(Plane {
        height: h,
        width: w,
        data: out,
    })
}

/// `(2ab + t) / (a² + b² + t)` elementwise.
pub(crate) fn similarity(a: &Plane, b: &Plane, t: f64) -> Plane {
    a.zip_map(b, |x, y| (2.0 * x * y + t) / (x * x + y * y + t))
}

pub fn fsim_gm_map(dist: &Image, reference: &Image, cfg: &MapConfig) -> Result<QualityMap> {
    check_pair(dist, reference)?;
    let g1 = gradient_magnitude(&scaled_luminance(reference, cfg), GradientOperator::Scharr)?;
    let g2 = gradient_magnitude(&scaled_luminance(dist, cfg), GradientOperator::Scharr)?;
    Ok(QualityMap::from_plane_clamped(similarity(&g1, &g2, cfg.fsim_t2)))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn constant_plane_has_no_gradient() {
        let p = Plane::new(5, 5, vec![0.3; 25]).unwrap();
        for op in [GradientOperator::Scharr, GradientOperator::Prewitt] {
            assert!(gradient_magnitude(&p, op).unwrap().data.iter().all(|&v| v == 0.0));
        }
        assert!(gradient_magnitude(&Plane::zeros(2, 5), GradientOperator::Scharr).is_err());
    }

    #[test]
    fn step_edge_peaks_at_the_edge() {
        let p = Plane::new(6, 8, (0..48).map(|i| if i % 8 < 4 { 0.0 } else { 1.0 }).collect()).unwrap();
        let g = gradient_magnitude(&p, GradientOperator::Prewitt).unwrap();
        for y in 0..6 {
            assert!((g.get(y, 3) - 1.0 / 3.0 * 3.0).abs() < 1e-12);
            assert_eq!(g.get(y, 4), g.get(y, 3));
            assert_eq!(g.get(y, 0), 0.0);
            assert_eq!(g.get(y, 7), 0.0);
        }
    }
}
