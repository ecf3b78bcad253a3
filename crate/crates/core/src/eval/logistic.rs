use argmin::core::{CostFunction, Executor, State, TerminationReason};
use argmin::solver::neldermead::NelderMead;
use qmap_nn::SeedStream;
use rand::seq::SliceRandom;
use serde::{Deserialize, Serialize};

use super::plcc;
use crate::error::{Error, Result};

const MAX_ITERS: u64 = 10_000;

/// Four-parameter logistic `(η1 − η2) / (1 + exp(−(q − η3)/|η4|)) + η2`.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct LogisticParams {
    pub eta1: f64,
    pub eta2: f64,
    pub eta3: f64,
    pub eta4: f64,
}

impl LogisticParams {
    fn from_vec(p: &[f64]) -> Self {
        Self {
            eta1: p[0],
            eta2: p[1],
            eta3: p[2],
            eta4: p[3],
        }
    }

    pub fn apply(&self, q: f64) -> f64 {
        logistic(q, self)
    }
}

pub fn logistic(q: f64, p: &LogisticParams) -> f64 {
    (p.eta1 - p.eta2) / (1.0 + (-(q - p.eta3) / p.eta4.abs()).exp()) + p.eta2
}

#[derive(Clone, Debug, PartialEq)]
pub struct LogisticFit {
    pub params: LogisticParams,
    pub mapped: Vec<f64>,
    pub rmse: f64,
    pub iterations: u64,
}

struct Residual<'a> {
    pred: &'a [f64],
    gt: &'a [f64],
}

impl CostFunction for Residual<'_> {
    type Param = Vec<f64>;
    type Output = f64;

    fn cost(&self, p: &Vec<f64>) -> std::result::Result<f64, argmin::core::Error> {
        let params = LogisticParams::from_vec(p);
        let sse: f64 = self
            .pred
            .iter()
            .zip(self.gt)
            .map(|(&q, &g)| (logistic(q, &params) - g).powi(2))
            .sum();
        Ok(if sse.is_finite() { sse / self.pred.len() as f64 } else { f64::MAX })
    }
}

fn median(v: &[f64]) -> f64 {
    let mut s = v.to_vec();
    s.sort_by(f64::total_cmp);
    let n = s.len();
    if n % 2 == 1 {
        s[n / 2]
    } else {
        0.5 * (s[n / 2 - 1] + s[n / 2])
    }
}

fn std_dev(v: &[f64]) -> f64 {
    let n = v.len() as f64;
    let m = v.iter().sum::<f64>() / n;
    (v.iter().map(|x| (x - m).powi(2)).sum::<f64>() / n).sqrt()
}

/// Least-squares logistic fit by Nelder–Mead from a data-driven start,
/// restarted from the incumbent until the simplex stops improving.
pub fn fit_logistic(pred: &[f64], gt: &[f64]) -> Result<LogisticFit> {
    if pred.len() != gt.len() {
        return Err(Error::Shape(format!("{} predictions for {} scores", pred.len(), gt.len())));
    }
    if pred.len() < 8 {
        return Err(Error::Fit(format!("need at least 8 samples, got {}", pred.len())));
    }
    let gt_spread = std_dev(gt);
    let pred_spread = std_dev(pred);
    if gt_spread == 0.0 || pred_spread == 0.0 {
        return Err(Error::Fit("constant predictions or scores".into()));
    }
    let gmax = gt.iter().cloned().fold(f64::MIN, f64::max);
    let gmin = gt.iter().cloned().fold(f64::MAX, f64::min);
    let mut x = vec![gmax, gmin, median(pred), pred_spread];
    let tol = 1e-16 * gt_spread * gt_spread;
    let mut used = 0u64;
    let mut best_cost = f64::INFINITY;
    loop {
        let scales = [gt_spread, gt_spread, pred_spread, pred_spread];
        let mut simplex = vec![x.clone()];
        for (k, s) in scales.iter().enumerate() {
            let mut v = x.clone();
            v[k] += 0.1 * s;
            simplex.push(v);
        }
        let solver = NelderMead::new(simplex)
            .with_sd_tolerance(tol)
            .map_err(|e| Error::Fit(e.to_string()))?;
        let remaining = MAX_ITERS - used;
        let res = Executor::new(Residual { pred, gt }, solver)
            .configure(|s| s.max_iters(remaining))
            .run()
            .map_err(|e| Error::Fit(e.to_string()))?;
        let state = res.state();
        used += state.get_iter();
        let cost = state.get_best_cost();
        x = state.get_best_param().cloned().ok_or_else(|| Error::Fit("no parameters".into()))?;
        let converged = !matches!(state.get_termination_reason(), Some(TerminationReason::MaxItersReached));
        if !converged || used >= MAX_ITERS {
            if converged && cost <= best_cost {
                break;
            }
            return Err(Error::Fit(format!(
                "no convergence within {MAX_ITERS} iterations (rmse {:.3e})",
                cost.sqrt()
            )));
        }
        if cost == 0.0 || cost >= best_cost * (1.0 - 1e-10) {
            break;
        }
        best_cost = cost;
    }
    let params = LogisticParams::from_vec(&x);
    if params.eta4 == 0.0 {
        return Err(Error::Fit("slope parameter collapsed to zero".into()));
    }
    let mapped: Vec<f64> = pred.iter().map(|&q| logistic(q, &params)).collect();
    let rmse = (mapped.iter().zip(gt).map(|(a, b)| (a - b).powi(2)).sum::<f64>() / gt.len() as f64).sqrt();
    Ok(LogisticFit {
        params,
        mapped,
        rmse,
        iterations: used,
    })
}

/// Fits on a random 80% of the pairs, reports PLCC on the remaining 20%,
/// and returns the median over `reps` partitions.
pub fn logistic_plcc(pred: &[f64], gt: &[f64], reps: usize, seed: u64) -> Result<f64> {
    if pred.len() != gt.len() || pred.len() < 15 {
        return Err(Error::Fit("need at least 15 paired samples for the 80/20 protocol".into()));
    }
    let stream = SeedStream::new(seed);
    let mut values = Vec::with_capacity(reps);
    for r in 0..reps.max(1) {
        let mut idx: Vec<usize> = (0..pred.len()).collect();
        idx.shuffle(&mut stream.rng_indexed("logistic", r as u64));
        let cut = (pred.len() as f64 * 0.8).round() as usize;
        let (fit_idx, test_idx) = idx.split_at(cut);
        let fp: Vec<f64> = fit_idx.iter().map(|&i| pred[i]).collect();
        let fg: Vec<f64> = fit_idx.iter().map(|&i| gt[i]).collect();
        let fit = fit_logistic(&fp, &fg)?;
        let tp: Vec<f64> = test_idx.iter().map(|&i| fit.params.apply(pred[i])).collect();
        let tg: Vec<f64> = test_idx.iter().map(|&i| gt[i]).collect();
        values.push(plcc(&tp, &tg)?);
    }
    Ok(median(&values))
}
