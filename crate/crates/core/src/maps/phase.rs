use std::f64::consts::PI;
use std::sync::Arc;

use rustfft::num_complex::Complex;
use rustfft::{Fft, FftPlanner};

use super::gradient::similarity;
use super::{check_pair, scaled_luminance, MapConfig, QualityMap};
use crate::error::{Error, Result};
use crate::image::{Image, Plane};

const EPSILON: f64 = 1e-4;

struct Fft2 {
    h: usize,
    w: usize,
    row_fwd: Arc<dyn Fft<f64>>,
    row_inv: Arc<dyn Fft<f64>>,
    col_fwd: Arc<dyn Fft<f64>>,
    col_inv: Arc<dyn Fft<f64>>,
}

impl Fft2 {
    fn new(h: usize, w: usize) -> Self {
        let mut planner = FftPlanner::new();
        Self {
            h,
            w,
            row_fwd: planner.plan_fft_forward(w),
            row_inv: planner.plan_fft_inverse(w),
            col_fwd: planner.plan_fft_forward(h),
            col_inv: planner.plan_fft_inverse(h),
        }
    }

    fn transpose(data: &[Complex<f64>], h: usize, w: usize) -> Vec<Complex<f64>> {
        let mut out = vec![Complex::default(); h * w];
        for y in 0..h {
            for x in 0..w {
                out[x * h + y] = data[y * w + x];
            }
        }
        out
    }

    fn run(&self, data: &mut Vec<Complex<f64>>, inverse: bool) {
        let (rows, cols) = if inverse {
            (&self.row_inv, &self.col_inv)
        } else {
            (&self.row_fwd, &self.col_fwd)
        };
        rows.process(data);
        let mut t = Self::transpose(data, self.h, self.w);
        cols.process(&mut t);
        *data = Self::transpose(&t, self.w, self.h);
        if inverse {
            let s = 1.0 / (self.h * self.w) as f64;
            data.iter_mut().for_each(|v| *v *= s);
        }
    }
}

/// Signed normalized frequency of DFT bin `k` out of `n`.
fn bin_freq(k: usize, n: usize) -> f64 {
    let signed = if k < n.div_ceil(2) { k as f64 } else { k as f64 - n as f64 };
    signed / n as f64
}

fn median(mut v: Vec<f64>) -> f64 {
    v.sort_by(f64::total_cmp);
    let n = v.len();
    if n % 2 == 1 {
        v[n / 2]
    } else {
        0.5 * (v[n / 2 - 1] + v[n / 2])
    }
}

/// Phase congruency of a plane from a log-Gabor filter bank built in the
/// frequency domain. Values lie in [0,1].
pub fn phase_congruency(p: &Plane, cfg: &MapConfig) -> Result<Plane> {
    let (h, w) = (p.height, p.width);
    if h < 2 || w < 2 {
        return Err(Error::Size(format!("phase congruency needs at least 2x2, got {h}x{w}")));
    }
    let fft = Fft2::new(h, w);
    let mut spectrum: Vec<Complex<f64>> = p.data.iter().map(|&v| Complex::new(v, 0.0)).collect();
    fft.run(&mut spectrum, false);

    let n = h * w;
    let mut radius = vec![0.0; n];
    let mut theta = vec![0.0; n];
    for v in 0..h {
        let fy = bin_freq(v, h);
        for u in 0..w {
            let fx = bin_freq(u, w);
            radius[v * w + u] = (fx * fx + fy * fy).sqrt();
            theta[v * w + u] = (-fy).atan2(fx);
        }
    }
    radius[0] = 1.0;

    let log_sigma = cfg.pc_sigma_onf.ln();
    let gabors: Vec<Vec<f64>> = (0..cfg.pc_scales)
        .map(|s| {
            let fo = 1.0 / (cfg.pc_min_wavelength * cfg.pc_mult.powi(s as i32));
            let mut g: Vec<f64> = radius
                .iter()
                .map(|&r| {
                    let lowpass = 1.0 / (1.0 + (r / 0.45).powi(30));
                    (-(r / fo).ln().powi(2) / (2.0 * log_sigma * log_sigma)).exp() * lowpass
                })
                .collect();
            g[0] = 0.0;
            g
        })
        .collect();

    let theta_sigma = PI / cfg.pc_orientations as f64 / cfg.pc_dtheta_on_sigma;
    let inv_mult = 1.0 / cfg.pc_mult;
    let tau_sum = (1.0 - inv_mult.powi(cfg.pc_scales as i32)) / (1.0 - inv_mult);
    let mut energy_all = vec![0.0; n];
    let mut an_all = vec![0.0; n];

    for o in 0..cfg.pc_orientations {
        let angle = o as f64 * PI / cfg.pc_orientations as f64;
        let (sa, ca) = angle.sin_cos();
        let spread: Vec<f64> = theta
            .iter()
            .map(|&t| {
                let (st, ct) = t.sin_cos();
                let ds = st * ca - ct * sa;
                let dc = ct * ca + st * sa;
                let d = ds.atan2(dc).abs();
                (-(d * d) / (2.0 * theta_sigma * theta_sigma)).exp()
            })
            .collect();

        let mut responses = Vec::with_capacity(cfg.pc_scales);
        for g in &gabors {
            let mut eo: Vec<Complex<f64>> = spectrum
                .iter()
                .zip(g.iter().zip(&spread))
                .map(|(z, (gv, sv))| z * (gv * sv))
                .collect();
            fft.run(&mut eo, true);
            responses.push(eo);
        }

        let mut sum_e = vec![0.0; n];
        let mut sum_o = vec![0.0; n];
        let mut sum_an = vec![0.0; n];
        for eo in &responses {
            for i in 0..n {
                sum_e[i] += eo[i].re;
                sum_o[i] += eo[i].im;
                sum_an[i] += eo[i].norm();
            }
        }

        let tau = median(responses[0].iter().map(|z| z.norm()).collect()) / (4f64.ln()).sqrt();
        let total_tau = tau * tau_sum;
        let noise_mean = total_tau * (PI / 2.0).sqrt();
        let noise_sigma = total_tau * ((4.0 - PI) / 2.0).sqrt();
        let threshold = noise_mean + cfg.pc_noise_k * noise_sigma;

        for i in 0..n {
            let x_energy = (sum_e[i] * sum_e[i] + sum_o[i] * sum_o[i]).sqrt() + EPSILON;
            let (me, mo) = (sum_e[i] / x_energy, sum_o[i] / x_energy);
            let mut energy = 0.0;
            for eo in &responses {
                let (e, od) = (eo[i].re, eo[i].im);
                energy += e * me + od * mo - (e * mo - od * me).abs();
            }
            energy_all[i] += (energy - threshold).max(0.0);
            an_all[i] += sum_an[i];
        }
    }

    let data = energy_all
        .iter()
        .zip(&an_all)
        .map(|(e, a)| (e / (a + EPSILON)).clamp(0.0, 1.0))
        .collect();
    Ok(Plane {
        height: h,
        width: w,
        data,
    })
}

pub fn fsim_pc_map(dist: &Image, reference: &Image, cfg: &MapConfig) -> Result<QualityMap> {
    check_pair(dist, reference)?;
    let pc1 = phase_congruency(&scaled_luminance(reference, cfg), cfg)?;
    let pc2 = phase_congruency(&scaled_luminance(dist, cfg), cfg)?;
    Ok(QualityMap::from_plane_clamped(similarity(&pc1, &pc2, cfg.pc_t1)))
}
