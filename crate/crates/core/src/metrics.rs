//! Rank correlation, Fisher-z averaging and raw-unit MSE.

use std::collections::BTreeMap;

use serde_json::{json, Map, Value};

use crate::error::{Error, Result};

/// Clip applied to |ρ| = 1 before `atanh`.
pub const FISHER_CLIP: f64 = 1.0 - 1e-12;

/// 1-based ranks; ties share the mean of the positions they occupy.
pub fn ranks(v: &[f64]) -> Result<Vec<f64>> {
    if v.len() < 2 {
        return Err(Error::InvalidArgument(format!("ranks needs at least 2 values, got {}", v.len())));
    }
    if v.iter().any(|x| x.is_nan()) {
        return Err(Error::InvalidArgument("ranks of NaN".into()));
    }
    let mut idx: Vec<usize> = (0..v.len()).collect();
    idx.sort_by(|&a, &b| v[a].total_cmp(&v[b]));
    let mut out = vec![0.0; v.len()];
    let mut i = 0;
    while i < idx.len() {
        let mut j = i;
        while j + 1 < idx.len() && v[idx[j + 1]] == v[idx[i]] {
            j += 1;
        }
        let r = (i + j) as f64 / 2.0 + 1.0;
        for &k in &idx[i..=j] {
            out[k] = r;
        }
        i = j + 1;
    }
    Ok(out)
}

fn pearson(p: &[f64], q: &[f64]) -> Option<f64> {
    let n = p.len() as f64;
    let mp = p.iter().sum::<f64>() / n;
    let mq = q.iter().sum::<f64>() / n;
    let (mut sxy, mut sxx, mut syy) = (0.0, 0.0, 0.0);
    for (a, b) in p.iter().zip(q) {
        let (x, y) = (a - mp, b - mq);
        sxy += x * y;
        sxx += x * x;
        syy += y * y;
    }
    if sxx == 0.0 || syy == 0.0 {
        return None;
    }
    Some((sxy / (sxx * syy).sqrt()).clamp(-1.0, 1.0))
}

/// Spearman ρ as the normalized covariance of average ranks. `None` means
/// undefined: a constant argument leaves the denominator at zero.
pub fn spearman(p: &[f64], q: &[f64]) -> Result<Option<f64>> {
    if p.len() != q.len() {
        return Err(Error::InvalidArgument(format!(
            "spearman length mismatch: {} vs {}",
            p.len(),
            q.len()
        )));
    }
    Ok(pearson(&ranks(p)?, &ranks(q)?))
}

/// `1 − 6Σd²/(n(n²−1))`; only valid without ties.
pub fn spearman_shortcut(p: &[f64], q: &[f64]) -> Result<f64> {
    if p.len() != q.len() {
        return Err(Error::InvalidArgument("spearman length mismatch".into()));
    }
    let (rp, rq) = (ranks(p)?, ranks(q)?);
    let d2: f64 = rp.iter().zip(&rq).map(|(a, b)| (a - b) * (a - b)).sum();
    let n = p.len() as f64;
    Ok(1.0 - 6.0 * d2 / (n * (n * n - 1.0)))
}

#[derive(Clone, Debug, PartialEq)]
pub struct FisherAverage {
    pub rho: f64,
    /// Set when some input had |ρ| = 1 and was clipped.
    pub clipped: bool,
}

/// `tanh(mean(atanh ρ_i))`.
pub fn fisher_z_avg(rhos: &[f64]) -> Result<FisherAverage> {
    if rhos.is_empty() {
        return Err(Error::InvalidArgument("fisher_z_avg of no values".into()));
    }
    let mut clipped = false;
    let mut z = 0.0;
    for &r in rhos {
        if !(-1.0..=1.0).contains(&r) {
            return Err(Error::InvalidArgument(format!("correlation {r} outside [-1, 1]")));
        }
        let r = if r.abs() >= 1.0 {
            clipped = true;
            r.signum() * FISHER_CLIP
        } else {
            r
        };
        z += r.atanh();
    }
    let mut rho = (z / rhos.len() as f64).tanh();
    // keep the fixed point exact where rounding would drift
    if rhos.iter().all(|&r| r == rhos[0]) && !clipped {
        rho = rhos[0];
    }
    Ok(FisherAverage { rho, clipped })
}

/// Min-max label scaling fitted on the training scores.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct LabelNorm {
    pub min: f64,
    pub max: f64,
}

impl LabelNorm {
    pub fn new(min: f64, max: f64) -> Result<Self> {
        if !(min.is_finite() && max.is_finite()) || max <= min {
            return Err(Error::InvalidArgument(format!(
                "label range needs min < max, got [{min}, {max}]"
            )));
        }
        Ok(Self { min, max })
    }

    pub fn fit(scores: &[f64]) -> Result<Self> {
        let min = scores.iter().copied().fold(f64::INFINITY, f64::min);
        let max = scores.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        if scores.len() < 2 || max <= min {
            return Err(Error::InvalidArgument(
                "label normalization needs at least two distinct training scores".into(),
            ));
        }
        Self::new(min, max)
    }

    /// `(s − min)/(max − min)`, unclipped.
    pub fn normalize(&self, s: f64) -> f64 {
        (s - self.min) / (self.max - self.min)
    }

    pub fn denormalize(&self, y: f64) -> f64 {
        self.min + y * (self.max - self.min)
    }
}

/// MSE in raw score units after de-normalizing predictions.
pub fn mse_original(pred: &[f64], raw: &[f64], norm: &LabelNorm) -> Result<f64> {
    let den: Vec<f64> = pred.iter().map(|&y| norm.denormalize(y)).collect();
    crate::model::mse_loss(&den, raw)
}

#[derive(Clone, Debug, PartialEq)]
pub struct CategoryReport {
    pub rho: Option<f64>,
    pub mse: f64,
    pub n: usize,
}

#[derive(Clone, Debug, PartialEq, Default)]
pub struct EvalReport {
    pub categories: BTreeMap<String, CategoryReport>,
    pub fisher_avg: Option<f64>,
    pub warnings: Vec<String>,
    /// Echoed `TrainConfig` as `(key, value)` pairs.
    pub config: Vec<(String, String)>,
}

fn rho_json(r: Option<f64>) -> Value {
    match r {
        Some(v) => json!(v),
        None => json!("undefined"),
    }
}

impl EvalReport {
    /// Builds the report from per-sample `(category, prediction, raw score)`.
    /// Predictions are clamped to `[0, 1]` before scoring.
    pub fn build(rows: &[(String, f64, f64)], norm: &LabelNorm) -> Result<Self> {
        let mut groups: BTreeMap<String, (Vec<f64>, Vec<f64>)> = BTreeMap::new();
        for (cat, p, s) in rows {
            let e = groups.entry(cat.clone()).or_default();
            e.0.push(p.clamp(0.0, 1.0));
            e.1.push(*s);
        }
        let mut report = EvalReport::default();
        for (cat, (pred, raw)) in groups {
            let rho = if pred.len() < 2 {
                report.warnings.push(format!("category {cat}: fewer than 2 samples"));
                None
            } else {
                let r = spearman(&pred, &raw)?;
                if r.is_none() {
                    report.warnings.push(format!("category {cat}: rho undefined (constant input)"));
                }
                r
            };
            let mse = mse_original(&pred, &raw, norm)?;
            report.categories.insert(cat, CategoryReport { rho, mse, n: pred.len() });
        }
        let defined: Vec<f64> = report.categories.values().filter_map(|c| c.rho).collect();
        if !defined.is_empty() {
            let avg = fisher_z_avg(&defined)?;
            if avg.clipped {
                report.warnings.push("fisher_avg: |rho| = 1 clipped".into());
            }
            report.fisher_avg = Some(avg.rho);
        }
        Ok(report)
    }

    pub fn to_json(&self) -> Value {
        let mut rho = Map::new();
        let mut mse = Map::new();
        let mut n = Map::new();
        for (cat, c) in &self.categories {
            rho.insert(cat.clone(), rho_json(c.rho));
            mse.insert(cat.clone(), json!(c.mse));
            n.insert(cat.clone(), json!(c.n));
        }
        let config: Map<String, Value> = self
            .config
            .iter()
            .map(|(k, v)| (k.clone(), Value::String(v.clone())))
            .collect();
        json!({
            "rho": rho,
            "mse": mse,
            "fisher_avg": rho_json(self.fisher_avg),
            "n": n,
            "warnings": self.warnings,
            "config": config,
        })
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn rank_examples() {
        assert_eq!(ranks(&[10.0, 20.0, 30.0]).unwrap(), vec![1.0, 2.0, 3.0]);
        assert_eq!(ranks(&[5.0, 5.0]).unwrap(), vec![1.5, 1.5]);
        assert_eq!(ranks(&[3.0, 1.0, 4.0, 1.0]).unwrap(), vec![3.0, 1.5, 4.0, 1.5]);
        assert!(ranks(&[1.0]).is_err());
    }

    #[test]
    fn spearman_examples() {
        let p = [1.0, 2.0, 3.0, 4.0, 5.0];
        assert_eq!(spearman(&p, &p).unwrap(), Some(1.0));
        let rev: Vec<f64> = p.iter().rev().copied().collect();
        assert_eq!(spearman(&p, &rev).unwrap(), Some(-1.0));
        assert_eq!(spearman(&p, &[1.0, 3.0, 2.0, 5.0, 4.0]).unwrap(), Some(0.8));
        assert_eq!(spearman(&[2.0, 2.0], &[1.0, 1.0]).unwrap(), None);
        assert!(spearman(&p, &p[..4]).is_err());
    }

    #[test]
    fn fisher_examples() {
        assert_eq!(fisher_z_avg(&[0.42, 0.42, 0.42]).unwrap().rho, 0.42);
        assert_eq!(fisher_z_avg(&[0.0, 0.0]).unwrap().rho, 0.0);
        let v = fisher_z_avg(&[0.5, 0.9]).unwrap().rho;
        let expect = ((0.5f64.atanh() + 0.9f64.atanh()) / 2.0).tanh();
        assert_eq!(v, expect);
        assert!((v - 0.7661).abs() < 5e-5, "{v}");
        let c = fisher_z_avg(&[1.0, 0.5]).unwrap();
        assert!(c.clipped && c.rho < 1.0);
    }

    #[test]
    fn mse_original_examples() {
        let norm = LabelNorm::new(0.0, 10.0).unwrap();
        assert_eq!(mse_original(&[0.5], &[4.0], &norm).unwrap(), 1.0);
        assert_eq!(mse_original(&[0.4, 0.8], &[4.0, 8.0], &norm).unwrap(), 0.0);
        assert!(LabelNorm::new(3.0, 3.0).is_err());
    }

    #[test]
    fn label_norm_examples() {
        let n = LabelNorm::fit(&[4.0, 8.0]).unwrap();
        assert_eq!(n.normalize(6.0), 0.5);
        assert_eq!(n.normalize(4.0), 0.0);
        assert_eq!(n.normalize(8.0), 1.0);
        assert_eq!(n.normalize(9.0), 1.25);
        assert!(LabelNorm::fit(&[5.0, 5.0]).is_err());
    }

    #[test]
    fn report_json_keys() {
        let norm = LabelNorm::new(0.0, 10.0).unwrap();
        let rows = vec![
            ("a".to_string(), 0.1, 1.0),
            ("a".to_string(), 0.5, 5.0),
            ("a".to_string(), 0.9, 9.0),
            ("b".to_string(), 0.3, 2.0),
            ("b".to_string(), 0.3, 6.0),
        ];
        let r = EvalReport::build(&rows, &norm).unwrap();
        let j = r.to_json();
        assert_eq!(j["rho"]["a"], json!(1.0));
        assert_eq!(j["rho"]["b"], json!("undefined"));
        assert_eq!(j["n"]["b"], json!(2));
        assert!(j["mse"]["a"].as_f64().unwrap() < 1e-20);
        assert!(!j["warnings"].as_array().unwrap().is_empty());
        let f = j["fisher_avg"].as_f64().unwrap();
        assert!(f < 1.0 && f > 0.999_999);
    }
}
