use crate::error::{shape_err, NnError, Result};
use crate::tensor::Tensor4;

pub fn sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

/// Mean binary cross entropy of `sigmoid(logits)` against soft targets.
///
/// Uses `max(x,0) − x·t + ln(1 + e^{−|x|})`, which stays finite for any
/// logit. The gradient is `(sigmoid(x) − t)/N`.
pub fn loss_bce_sigmoid(logits: &Tensor4, targets: &Tensor4) -> Result<(f64, Tensor4)> {
    if logits.dims() != targets.dims() {
        return Err(shape_err(
            "bce loss",
            format!("logits {:?} vs targets {:?}", logits.dims(), targets.dims()),
        ));
    }
    if let Some(t) = targets.data().iter().find(|t| !(0.0..=1.0).contains(*t)) {
        return Err(NnError::Domain(format!("bce target {t} outside [0,1]")));
    }
    let n = logits.len() as f64;
    let mut total = 0.0;
    let mut grad = Vec::with_capacity(logits.len());
    for (&x, &t) in logits.data().iter().zip(targets.data()) {
        total += x.max(0.0) - x * t + (-x.abs()).exp().ln_1p();
        grad.push((sigmoid(x) - t) / n);
    }
    Ok((total / n, Tensor4::from_vec(logits.dims(), grad)?))
}

/// Mean squared error with gradient `2(pred − target)/N`.
pub fn loss_mse(pred: &Tensor4, target: &Tensor4) -> Result<(f64, Tensor4)> {
    if pred.dims() != target.dims() {
        return Err(shape_err(
            "mse loss",
            format!("pred {:?} vs target {:?}", pred.dims(), target.dims()),
        ));
    }
    let n = pred.len() as f64;
    let mut total = 0.0;
    let mut grad = Vec::with_capacity(pred.len());
    for (&p, &t) in pred.data().iter().zip(target.data()) {
        total += (p - t) * (p - t);
        grad.push(2.0 * (p - t) / n);
    }
    Ok((total / n, Tensor4::from_vec(pred.dims(), grad)?))
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};

    fn t(dims: [usize; 4], v: Vec<f64>) -> Tensor4 {
        Tensor4::from_vec(dims, v).unwrap()
    }

    #[test]
    fn bce_symmetric_point_is_ln2() {
        let (loss, _) = loss_bce_sigmoid(&Tensor4::zeros([1, 1, 2, 2]), &Tensor4::filled([1, 1, 2, 2], 0.5)).unwrap();
        assert!((loss - std::f64::consts::LN_2).abs() < 1e-15);
    }

    #[test]
    fn bce_stationary_when_targets_match() {
        let logits = t([1, 1, 1, 3], vec![-2.0, 0.3, 4.0]);
        let targets = logits.map(sigmoid);
        let (_, g) = loss_bce_sigmoid(&logits, &targets).unwrap();
        assert!(g.data().iter().all(|&v| v == 0.0));
    }

    #[test]
    fn bce_matches_naive_formula() {
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(3);
        let mut logits: Vec<f64> = (0..36).map(|_| rng.random_range(-6.0..6.0)).collect();
        let targets: Vec<f64> = (0..36).map(|_| rng.random::<f64>()).collect();
        let (loss, _) = loss_bce_sigmoid(&t([4, 1, 3, 3], logits.clone()), &t([4, 1, 3, 3], targets.clone())).unwrap();
        let naive: f64 = logits
            .iter()
            .zip(&targets)
            .map(|(&x, &y)| {
                let s = 1.0 / (1.0 + (-x).exp());
                -(y * s.ln() + (1.0 - y) * (1.0 - s).ln())
            })
            .sum::<f64>()
            / 36.0;
        assert!((loss - naive).abs() < 1e-10);

        // |logit| = 50 saturates the naive form; the stable form stays exact.
        logits[0] = 50.0;
        logits[1] = -50.0;
        let (loss, g) = loss_bce_sigmoid(&t([4, 1, 3, 3], logits.clone()), &t([4, 1, 3, 3], targets.clone())).unwrap();
        assert!(loss.is_finite() && g.is_finite());
        let expect0 = 50.0 - 50.0 * targets[0] + (-50f64).exp().ln_1p();
        let expect1 = 50.0 * targets[1] + (-50f64).exp().ln_1p();
        let rest: f64 = logits[2..]
            .iter()
            .zip(&targets[2..])
            .map(|(&x, &y)| {
                let s = 1.0 / (1.0 + (-x).exp());
                -(y * s.ln() + (1.0 - y) * (1.0 - s).ln())
            })
            .sum();
        assert!((loss - (expect0 + expect1 + rest) / 36.0).abs() < 1e-10);
    }

    #[test]
    fn bce_rejects_out_of_range_targets() {
        let r = loss_bce_sigmoid(&Tensor4::zeros([1, 1, 1, 1]), &Tensor4::filled([1, 1, 1, 1], 1.5));
        assert!(matches!(r, Err(NnError::Domain(_))));
    }

    #[test]
    fn mse_hand_values() {
        let (loss, g) = loss_mse(&t([1, 1, 1, 1], vec![3.0]), &t([1, 1, 1, 1], vec![1.0])).unwrap();
        assert_eq!(loss, 4.0);
        assert_eq!(g.data(), &[4.0]);
        let x = t([2, 1, 1, 2], vec![0.1, 0.2, 0.3, 0.4]);
        let (loss, g) = loss_mse(&x, &x).unwrap();
        assert_eq!(loss, 0.0);
        assert!(g.data().iter().all(|&v| v == 0.0));
    }

    #[test]
    fn mse_matches_summation() {
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(11);
        let p: Vec<f64> = (0..24).map(|_| rng.random_range(-3.0..3.0)).collect();
        let q: Vec<f64> = (0..24).map(|_| rng.random_range(-3.0..3.0)).collect();
        let (loss, _) = loss_mse(&t([4, 2, 1, 3], p.clone()), &t([4, 2, 1, 3], q.clone())).unwrap();
        let mut s = 0.0;
        for i in 0..24 {
            s += (p[i] - q[i]).powi(2);
        }
        assert!((loss - s / 24.0).abs() < 1e-12);
        assert!(loss_mse(&t([1, 1, 1, 2], vec![0.0; 2]), &t([1, 1, 2, 1], vec![0.0; 2])).is_err());
    }
}
