//! Similarity-map generators checked against independently coded oracles.

use qmap_core::image::{load_image, to_luminance, Image, Plane};
use qmap_core::maps::{
    avg_patchify_map, compute_map, fsim_gm_map, fsim_pc_map, gradient_magnitude, mdsi_channels, mdsi_map,
    phase_congruency, pool_map, save_map, ssim_map, FrMethod, GradientOperator, MapConfig, Pooling, QualityMap,
};
use qmap_core::Error;
use proptest::prelude::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};

fn random_image(h: usize, w: usize, c: usize, seed: u64) -> Image {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let data = (0..h * w * c).map(|_| rng.random::<f64>()).collect();
    Image::new(h, w, c, data).unwrap()
}

/// Smooth structured scene: ramps, a disc and a stripe pattern.
fn scene(h: usize, w: usize) -> Image {
    Image::from_fn(h, w, 3, |y, x, c| {
        let (fy, fx) = (y as f64 / h as f64, x as f64 / w as f64);
        let disc = if (fy - 0.5).powi(2) + (fx - 0.4).powi(2) < 0.06 { 0.3 } else { 0.0 };
        let stripes = 0.15 * ((x as f64 / 3.0).sin());
        0.2 + 0.3 * fx + 0.2 * fy * (c as f64 + 1.0) / 3.0 + disc + stripes * (fy > 0.6) as i32 as f64
    })
}

fn add_noise(img: &Image, sigma: f64, seed: u64) -> Image {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let normal = Normal::new(0.0, 1.0).unwrap();
    let noise: Vec<f64> = (0..img.data().len()).map(|_| normal.sample(&mut rng)).collect();
    Image::from_fn(img.height(), img.width(), img.channels(), |y, x, c| {
        img.get(y, x, c) + sigma * noise[(y * img.width() + x) * img.channels() + c]
    })
}

/// Direct sliding-window SSIM with the three-term form and C3 = C2/2.
fn ssim_oracle_mean(d: &Image, r: &Image) -> f64 {
    let (h, w) = (d.height(), d.width());
    let lum = |img: &Image, y: usize, x: usize| {
        if img.channels() == 1 {
            255.0 * img.get(y, x, 0)
        } else {
            255.0 * (0.299 * img.get(y, x, 0) + 0.587 * img.get(y, x, 1) + 0.114 * img.get(y, x, 2))
        }
    };
    let mut win = [[0.0f64; 11]; 11];
    let mut total = 0.0;
    for (a, row) in win.iter_mut().enumerate() {
        for (b, v) in row.iter_mut().enumerate() {
            let (da, db) = (a as f64 - 5.0, b as f64 - 5.0);
            *v = (-(da * da + db * db) / (2.0 * 1.5 * 1.5)).exp();
            total += *v;
        }
    }
    let (c1, c2) = ((0.01f64 * 255.0).powi(2), (0.03f64 * 255.0).powi(2));
    let c3 = c2 / 2.0;
    let mut acc = 0.0;
    let mut count = 0usize;
    for i in 0..=h - 11 {
        for j in 0..=w - 11 {
            let (mut mx, mut my) = (0.0, 0.0);
            for a in 0..11 {
                for b in 0..11 {
                    let wt = win[a][b] / total;
                    mx += wt * lum(r, i + a, j + b);
                    my += wt * lum(d, i + a, j + b);
                }
            }
            let (mut vx, mut vy, mut cxy) = (0.0, 0.0, 0.0);
            for a in 0..11 {
                for b in 0..11 {
                    let wt = win[a][b] / total;
                    let (dx, dy) = (lum(r, i + a, j + b) - mx, lum(d, i + a, j + b) - my);
                    vx += wt * dx * dx;
                    vy += wt * dy * dy;
                    cxy += wt * dx * dy;
                }
            }
            let (sx, sy) = (vx.sqrt(), vy.sqrt());
            let l = (2.0 * mx * my + c1) / (mx * mx + my * my + c1);
            let c = (2.0 * sx * sy + c2) / (vx + vy + c2);
            let s = (cxy + c3) / (sx * sy + c3);
            acc += (l * c * s).clamp(0.0, 1.0);
            count += 1;
        }
    }
    acc / count as f64
}

#[test]
fn ssim_mean_matches_double_loop_oracle() {
    let cfg = MapConfig::default();
    for seed in 0..4 {
        let r = random_image(64, 64, 3, 100 + seed);
        let d = add_noise(&r, 0.1, 200 + seed);
        let m = ssim_map(&d, &r, &cfg).unwrap();
        assert_eq!((m.height(), m.width()), (54, 54));
        let got = pool_map(&m, Pooling::Average).unwrap();
        let want = ssim_oracle_mean(&d, &r);
        assert!((got - want).abs() < 1e-6, "seed {seed}: {got} vs {want}");
    }
}

#[test]
fn ssim_constant_images_follow_luminance_term() {
    let cfg = MapConfig::default();
    let r = Image::new(16, 16, 1, vec![0.5; 256]).unwrap();
    let d = Image::new(16, 16, 1, vec![0.5 + 1.0 / 255.0; 256]).unwrap();
    let m = ssim_map(&d, &r, &cfg).unwrap();
    let (mx, my) = (127.5, 128.5);
    let c1 = (0.01f64 * 255.0).powi(2);
    let want = (2.0 * mx * my + c1) / (mx * mx + my * my + c1);
    assert!(m.data().iter().all(|v| (v - want).abs() < 1e-9));
}

#[test]
fn gradient_matches_explicit_correlation() {
    let mut rng = ChaCha8Rng::seed_from_u64(7);
    let p = Plane::new(8, 8, (0..64).map(|_| rng.random::<f64>() * 255.0).collect()).unwrap();
    let kernels = [
        (GradientOperator::Scharr, [[3.0, 0.0, -3.0], [10.0, 0.0, -10.0], [3.0, 0.0, -3.0]], 16.0),
        (GradientOperator::Prewitt, [[1.0, 0.0, -1.0], [1.0, 0.0, -1.0], [1.0, 0.0, -1.0]], 3.0),
    ];
    for (op, k, norm) in kernels {
        let g = gradient_magnitude(&p, op).unwrap();
        for y in 0..8i32 {
            for x in 0..8i32 {
                let (mut gx, mut gy) = (0.0, 0.0);
                for a in 0..3i32 {
                    for b in 0..3i32 {
                        let yy = (y + a - 1).clamp(0, 7) as usize;
                        let xx = (x + b - 1).clamp(0, 7) as usize;
                        gx += k[a as usize][b as usize] / norm * p.get(yy, xx);
                        gy += k[b as usize][a as usize] / norm * p.get(yy, xx);
                    }
                }
                let want = (gx * gx + gy * gy).sqrt();
                assert!((g.get(y as usize, x as usize) - want).abs() < 1e-9);
            }
        }
    }
}

#[test]
fn fsim_gm_matches_composition() {
    let cfg = MapConfig::default();
    let r = random_image(16, 16, 3, 11);
    let d = random_image(16, 16, 3, 12);
    let m = fsim_gm_map(&d, &r, &cfg).unwrap();
    let g1 = gradient_magnitude(&to_luminance(&r).map(|v| v * 255.0), GradientOperator::Scharr).unwrap();
    let g2 = gradient_magnitude(&to_luminance(&d).map(|v| v * 255.0), GradientOperator::Scharr).unwrap();
    for i in 0..256 {
        let (a, b) = (g1.data[i], g2.data[i]);
        let want = (2.0 * a * b + 160.0) / (a * a + b * b + 160.0);
        assert!((m.data()[i] - want).abs() < 1e-12);
        assert!(m.data()[i] > 0.0 && m.data()[i] <= 1.0);
    }
}

#[test]
fn mdsi_matches_formula_oracle() {
    let cfg = MapConfig::default();
    let r = random_image(16, 16, 3, 21);
    let d = random_image(16, 16, 3, 22);
    let m = mdsi_map(&d, &r, &cfg).unwrap();
    let chan = |img: &Image, wts: [f64; 3]| {
        Plane::new(
            16,
            16,
            (0..256)
                .map(|i| {
                    let (y, x) = (i / 16, i % 16);
                    255.0 * (wts[0] * img.get(y, x, 0) + wts[1] * img.get(y, x, 1) + wts[2] * img.get(y, x, 2))
                })
                .collect(),
        )
        .unwrap()
    };
    let (lr, ld) = (chan(&r, [0.299, 0.587, 0.114]), chan(&d, [0.299, 0.587, 0.114]));
    let (hr, hd) = (chan(&r, [0.30, 0.04, -0.35]), chan(&d, [0.30, 0.04, -0.35]));
    let (mr, md) = (chan(&r, [0.34, -0.60, 0.17]), chan(&d, [0.34, -0.60, 0.17]));
    let f = Plane::new(16, 16, (0..256).map(|i| 0.5 * (lr.data[i] + ld.data[i])).collect()).unwrap();
    let gr = gradient_magnitude(&lr, GradientOperator::Prewitt).unwrap();
    let gd = gradient_magnitude(&ld, GradientOperator::Prewitt).unwrap();
    let gf = gradient_magnitude(&f, GradientOperator::Prewitt).unwrap();
    let sim = |a: f64, b: f64, c: f64| (2.0 * a * b + c) / (a * a + b * b + c);
    for i in 0..256 {
        let gs = sim(gr.data[i], gd.data[i], 140.0) + sim(gd.data[i], gf.data[i], 55.0)
            - sim(gr.data[i], gf.data[i], 55.0);
        let cs = (2.0 * (hr.data[i] * hd.data[i] + mr.data[i] * md.data[i]) + 550.0)
            / (hr.data[i].powi(2) + hd.data[i].powi(2) + mr.data[i].powi(2) + md.data[i].powi(2) + 550.0);
        let want = (0.6 * gs + 0.4 * cs).clamp(0.0, 1.0);
        assert!((m.data()[i] - want).abs() < 1e-12, "pixel {i}");
    }
}

#[test]
fn mdsi_with_equal_chromaticity_isolates_gradient_term() {
    let cfg = MapConfig::default();
    // perturb along the direction orthogonal to both chroma rows
    let (hw, mw) = ([0.30, 0.04, -0.35], [0.34, -0.60, 0.17]);
    let n = [
        hw[1] * mw[2] - hw[2] * mw[1],
        hw[2] * mw[0] - hw[0] * mw[2],
        hw[0] * mw[1] - hw[1] * mw[0],
    ];
    let norm = n.iter().map(|v: &f64| v.abs()).fold(0.0, f64::max);
    let bump = |y: usize, x: usize| if (x / 4 + y / 3) % 2 == 0 { 0.15 } else { -0.1 };
    let reference = Image::from_fn(16, 16, 3, |_, _, _| 0.5);
    let perturbed = Image::from_fn(16, 16, 3, |y, x, c| 0.5 + bump(y, x) * n[c] / norm);
    let [_, ha, ma] = mdsi_channels(&reference, &cfg).unwrap();
    let [_, hb, mb] = mdsi_channels(&perturbed, &cfg).unwrap();
    for i in 0..256 {
        assert!((ha.data[i] - hb.data[i]).abs() < 1e-9 && (ma.data[i] - mb.data[i]).abs() < 1e-9);
    }
    let m = mdsi_map(&perturbed, &reference, &cfg).unwrap();
    let [lr, _, _] = mdsi_channels(&reference, &cfg).unwrap();
    let [ld, _, _] = mdsi_channels(&perturbed, &cfg).unwrap();
    let f = Plane::new(16, 16, (0..256).map(|i| 0.5 * (lr.data[i] + ld.data[i])).collect()).unwrap();
    let gr = gradient_magnitude(&lr, GradientOperator::Prewitt).unwrap();
    let gd = gradient_magnitude(&ld, GradientOperator::Prewitt).unwrap();
    let gf = gradient_magnitude(&f, GradientOperator::Prewitt).unwrap();
    let sim = |a: f64, b: f64, c: f64| (2.0 * a * b + c) / (a * a + b * b + c);
    let mut saw_gradient = false;
    for i in 0..256 {
        let gs = sim(gr.data[i], gd.data[i], 140.0) + sim(gd.data[i], gf.data[i], 55.0)
            - sim(gr.data[i], gf.data[i], 55.0);
        let want = (0.6 * gs + 0.4).clamp(0.0, 1.0);
        assert!((m.data()[i] - want).abs() < 1e-6, "pixel {i}: {} vs {want}", m.data()[i]);
        saw_gradient |= gs < 0.99;
    }
    assert!(saw_gradient);
}

#[test]
fn mdsi_rejects_gray_and_mismatched_inputs() {
    let cfg = MapConfig::default();
    let g = random_image(8, 8, 1, 1);
    assert!(matches!(mdsi_map(&g, &g, &cfg), Err(Error::Channel(_))));
    let a = random_image(8, 8, 3, 1);
    let b = random_image(8, 9, 3, 1);
    for m in FrMethod::ALL {
        assert!(matches!(compute_map(m, &a, &b, &cfg), Err(Error::Shape(_))));
    }
}

#[test]
fn phase_congruency_is_sign_symmetric() {
    let cfg = MapConfig::default();
    let k = 2.0 * std::f64::consts::PI * 4.0 / 32.0;
    let a = Image::from_fn(32, 32, 1, |_, x, _| 0.5 + 0.4 * (k * x as f64).cos());
    let b = Image::from_fn(32, 32, 1, |_, x, _| 0.5 + 0.4 * (k * x as f64 + std::f64::consts::PI).cos());
    let m = fsim_pc_map(&b, &a, &cfg).unwrap();
    assert!(m.data().iter().all(|v| (v - 1.0).abs() < 1e-3));
    let pa = phase_congruency(&to_luminance(&a).map(|v| v * 255.0), &cfg).unwrap();
    assert!(pa.data.iter().all(|v| (0.0..=1.0).contains(v)));
}

#[test]
fn every_method_is_one_on_identical_inputs() {
    let cfg = MapConfig::default();
    for seed in 0..3 {
        let img = random_image(24, 24, 3, 40 + seed);
        for m in FrMethod::ALL {
            let map = compute_map(m, &img, &img, &cfg).unwrap();
            assert!(map.data().iter().all(|&v| v == 1.0), "{m} seed {seed}");
        }
    }
}

#[test]
fn every_method_decreases_with_noise() {
    let cfg = MapConfig::default();
    let r = scene(48, 48);
    for m in FrMethod::ALL {
        let means: Vec<f64> = [0.01, 0.03, 0.06, 0.1, 0.15]
            .iter()
            .map(|&s| compute_map(m, &add_noise(&r, s, 9), &r, &cfg).unwrap().mean())
            .collect();
        assert!(means.windows(2).all(|p| p[1] < p[0]), "{m}: {means:?}");
    }
}

#[test]
fn save_map_round_trip() {
    let dir = tempfile::tempdir().unwrap();
    let ones = QualityMap::filled(3, 4, 1.0);
    let p = dir.path().join("ones.png");
    save_map(&ones, &p).unwrap();
    assert!(load_image(&p).unwrap().data().iter().all(|&v| v == 1.0));
    let zeros = QualityMap::filled(3, 4, 0.0);
    save_map(&zeros, &p).unwrap();
    assert!(load_image(&p).unwrap().data().iter().all(|&v| v == 0.0));

    let mut rng = ChaCha8Rng::seed_from_u64(5);
    let m = QualityMap::new(9, 7, (0..63).map(|_| rng.random::<f64>()).collect()).unwrap();
    save_map(&m, &p).unwrap();
    let back = QualityMap::from_image(&load_image(&p).unwrap()).unwrap();
    for (a, b) in m.data().iter().zip(back.data()) {
        assert!((a - b).abs() <= 1.0 / 510.0 + 1e-12);
    }
    // second save of the reloaded map is byte-stable
    save_map(&back, &p).unwrap();
    assert_eq!(QualityMap::from_image(&load_image(&p).unwrap()).unwrap(), back);
    assert!(matches!(save_map(&m, dir.path().join("missing/dir/x.png")), Err(Error::Io { .. })));
}

#[test]
fn patchify_then_pool_keeps_mean() {
    let r = scene(48, 48);
    let m = fsim_gm_map(&add_noise(&r, 0.05, 1), &r, &MapConfig::default()).unwrap();
    for block in [1, 2, 4, 8, 16, 24, 36, 48] {
        let p = avg_patchify_map(&m, block);
        assert!((p.mean() - m.mean()).abs() < 1e-12);
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(12))]

    #[test]
    fn maps_stay_in_unit_interval(seed in 0u64..1000, sigma in 0.0f64..0.5) {
        let cfg = MapConfig::default();
        let r = random_image(20, 20, 3, seed);
        let d = add_noise(&r, sigma, seed + 1);
        for m in FrMethod::ALL {
            let map = compute_map(m, &d, &r, &cfg).unwrap();
            prop_assert!(map.data().iter().all(|v| (0.0..=1.0).contains(v)));
        }
    }
}
