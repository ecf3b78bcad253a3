//! Correlation metrics, logistic mapping and experiment drivers.

mod logistic;
mod study;

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

pub use logistic::{fit_logistic, logistic, logistic_plcc, LogisticFit, LogisticParams};
pub use study::{
    patch_average_study, repeated_splits, write_study_csv, SplitSummary, StudyConfig, StudyRow, StudySample,
    STUDY_BLOCKS,
};

fn check_pair(pred: &[f64], gt: &[f64]) -> Result<()> {
    if pred.len() != gt.len() {
        return Err(Error::Shape(format!("{} predictions for {} scores", pred.len(), gt.len())));
    }
    if pred.len() < 3 {
        return Err(Error::UndefinedCorrelation(format!("need at least 3 samples, got {}", pred.len())));
    }
    if pred.iter().chain(gt).any(|v| !v.is_finite()) {
        return Err(Error::Domain("non-finite value in correlation input".into()));
    }
    Ok(())
}

/// 1-based ranks with ties sharing their average rank.
pub fn average_ranks(v: &[f64]) -> Vec<f64> {
    let mut idx: Vec<usize> = (0..v.len()).collect();
    idx.sort_by(|&a, &b| v[a].total_cmp(&v[b]));
    let mut ranks = vec![0.0; v.len()];
    let mut i = 0;
    while i < idx.len() {
        let mut j = i;
        while j + 1 < idx.len() && v[idx[j + 1]] == v[idx[i]] {
            j += 1;
        }
        let r = (i + j) as f64 / 2.0 + 1.0;
        for &k in &idx[i..=j] {
            ranks[k] = r;
        }
        i = j + 1;
    }
    ranks
}

fn pearson(a: &[f64], b: &[f64]) -> Result<f64> {
    let n = a.len() as f64;
    let (ma, mb) = (a.iter().sum::<f64>() / n, b.iter().sum::<f64>() / n);
    let (mut sab, mut saa, mut sbb) = (0.0, 0.0, 0.0);
    for (x, y) in a.iter().zip(b) {
        let (dx, dy) = (x - ma, y - mb);
        sab += dx * dy;
        saa += dx * dx;
        sbb += dy * dy;
    }
    if saa == 0.0 || sbb == 0.0 {
        return Err(Error::UndefinedCorrelation("an input has zero variance".into()));
    }
    Ok((sab / (saa.sqrt() * sbb.sqrt())).clamp(-1.0, 1.0))
}

pub fn plcc(pred: &[f64], gt: &[f64]) -> Result<f64> {
    check_pair(pred, gt)?;
    pearson(pred, gt)
}

pub fn srcc(pred: &[f64], gt: &[f64]) -> Result<f64> {
    check_pair(pred, gt)?;
    pearson(&average_ranks(pred), &average_ranks(gt))
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EvalReport {
    pub srcc: f64,
    pub plcc: f64,
    pub n: usize,
    pub logistic: Option<LogisticParams>,
    /// PLCC after the fitted logistic mapping.
    pub plcc_mapped: Option<f64>,
    pub per_type: BTreeMap<String, (f64, f64)>,
}

impl EvalReport {
    /// Raw correlations, with a per-type breakdown when `types` is given.
    /// Groups whose correlation is undefined are left out of the breakdown.
    pub fn new(pred: &[f64], gt: &[f64], types: Option<&[String]>) -> Result<Self> {
        let mut per_type = BTreeMap::new();
        if let Some(types) = types {
            if types.len() != pred.len() {
                return Err(Error::Shape(format!("{} type tags for {} predictions", types.len(), pred.len())));
            }
            let mut groups: BTreeMap<&str, (Vec<f64>, Vec<f64>)> = BTreeMap::new();
            for ((t, p), g) in types.iter().zip(pred).zip(gt) {
                let e = groups.entry(t.as_str()).or_default();
                e.0.push(*p);
                e.1.push(*g);
            }
            for (t, (p, g)) in groups {
                if let (Ok(s), Ok(l)) = (srcc(&p, &g), plcc(&p, &g)) {
                    per_type.insert(t.to_string(), (s, l));
                }
            }
        }
        Ok(Self {
            srcc: srcc(pred, gt)?,
            plcc: plcc(pred, gt)?,
            n: pred.len(),
            logistic: None,
            plcc_mapped: None,
            per_type,
        })
    }

    /// Adds the logistic fit and the mapped PLCC.
    pub fn with_logistic(mut self, pred: &[f64], gt: &[f64]) -> Result<Self> {
        let fit = fit_logistic(pred, gt)?;
        self.plcc_mapped = Some(plcc(&fit.mapped, gt)?);
        self.logistic = Some(fit.params);
        Ok(self)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn ranks_average_ties() {
        assert_eq!(average_ranks(&[1.0, 2.0, 2.0, 4.0]), vec![1.0, 2.5, 2.5, 4.0]);
        assert_eq!(average_ranks(&[3.0, 1.0, 3.0, 3.0]), vec![3.0, 1.0, 3.0, 3.0]);
    }

    #[test]
    fn perfect_and_inverted() {
        let a = [1.0, 2.0, 3.0, 5.0, 8.0];
        let rev: Vec<f64> = a.iter().map(|v| -v).collect();
        assert!((srcc(&a, &a).unwrap() - 1.0).abs() < 1e-15);
        assert!((srcc(&rev, &a).unwrap() + 1.0).abs() < 1e-15);
        let affine: Vec<f64> = a.iter().map(|v| 2.0 * v + 3.0).collect();
        assert!((plcc(&affine, &a).unwrap() - 1.0).abs() < 1e-15);
        assert!((plcc(&rev, &a).unwrap() + 1.0).abs() < 1e-15);
    }

    #[test]
    fn degenerate_inputs() {
        assert!(matches!(srcc(&[1.0, 1.0, 1.0], &[1.0, 2.0, 3.0]), Err(Error::UndefinedCorrelation(_))));
        assert!(matches!(plcc(&[1.0, 2.0, 3.0], &[4.0, 4.0, 4.0]), Err(Error::UndefinedCorrelation(_))));
        assert!(srcc(&[1.0, 2.0], &[1.0, 2.0]).is_err());
        assert!(matches!(srcc(&[1.0, 2.0, 3.0], &[1.0, 2.0]), Err(Error::Shape(_))));
    }

    #[test]
    fn report_breakdown() {
        let pred = [1.0, 2.0, 3.0, 4.0, 3.0, 2.0, 1.0, 5.0];
        let gt = [1.0, 2.0, 3.0, 4.0, 1.0, 2.0, 3.0, 5.0];
        let types: Vec<String> = ["a", "a", "a", "a", "b", "b", "b", "c"].iter().map(|s| s.to_string()).collect();
        let r = EvalReport::new(&pred, &gt, Some(&types)).unwrap();
        assert_eq!(r.n, 8);
        assert!((r.per_type["a"].0 - 1.0).abs() < 1e-15);
        assert!((r.per_type["b"].0 + 1.0).abs() < 1e-15);
        assert!(!r.per_type.contains_key("c"));
    }
}
