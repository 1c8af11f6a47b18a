//! Agreement measures between simulated and measured thresholds.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Standard error of the mean, `sigma / sqrt(n)`.
pub fn sem(sigma: f64, n: usize) -> Result<f64> {
    if n == 0 {
        return Err(Error::invalid("standard error needs n >= 1"));
    }
    if !(sigma >= 0.0) {
        return Err(Error::invalid(format!("sigma must be >= 0, got {sigma}")));
    }
    Ok(sigma / (n as f64).sqrt())
}

/// Sample standard deviation (n − 1 normalization); zero for one value.
pub fn sample_std(values: &[f64]) -> f64 {
    let n = values.len();
    if n < 2 {
        return 0.0;
    }
    let mean = values.iter().sum::<f64>() / n as f64;
    (values.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / (n - 1) as f64).sqrt()
}

/// One simulated/measured pair in dB.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PairedItem {
    pub label: String,
    pub sim: f64,
    pub emp: f64,
    pub sigma_sim: f64,
    pub sigma_emp: f64,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct PairedSeries {
    pub items: Vec<PairedItem>,
}

impl PairedSeries {
    pub fn new(items: Vec<PairedItem>) -> Result<Self> {
        for it in &items {
            if !(it.sigma_sim >= 0.0 && it.sigma_emp >= 0.0) {
                return Err(Error::invalid(format!("negative sigma on item {}", it.label)));
            }
        }
        Ok(PairedSeries { items })
    }

    pub fn len(&self) -> usize {
        self.items.len()
    }

    pub fn is_empty(&self) -> bool {
        self.items.is_empty()
    }

    pub fn swapped(&self) -> PairedSeries {
        PairedSeries {
            items: self
                .items
                .iter()
                .map(|it| PairedItem {
                    label: it.label.clone(),
                    sim: it.emp,
                    emp: it.sim,
                    sigma_sim: it.sigma_emp,
                    sigma_emp: it.sigma_sim,
                })
                .collect(),
        }
    }

    fn sims(&self) -> Vec<f64> {
        self.items.iter().map(|i| i.sim).collect()
    }

    fn emps(&self) -> Vec<f64> {
        self.items.iter().map(|i| i.emp).collect()
    }
}

/// Sum of squared, variance-weighted differences divided by `nu`.
pub fn chi2_per_dof(s: &PairedSeries, nu: usize) -> Result<f64> {
    if nu == 0 {
        return Err(Error::invalid("degrees of freedom must be >= 1"));
    }
    let mut chi2 = 0.0;
    for it in &s.items {
        let var = it.sigma_emp.powi(2) + it.sigma_sim.powi(2);
        if !(var > 0.0) {
            return Err(Error::invalid(format!("item {} has zero combined variance", it.label)));
        }
        chi2 += (it.sim - it.emp).powi(2) / var;
    }
    Ok(chi2 / nu as f64)
}

pub fn pearson_r(s: &PairedSeries) -> Result<f64> {
    if s.len() < 2 {
        return Err(Error::UndefinedCorrelation(format!("need at least 2 items, got {}", s.len())));
    }
    let (x, y) = (s.sims(), s.emps());
    let n = x.len() as f64;
    let mx = x.iter().sum::<f64>() / n;
    let my = y.iter().sum::<f64>() / n;
    let sxy: f64 = x.iter().zip(&y).map(|(a, b)| (a - mx) * (b - my)).sum();
    let sxx: f64 = x.iter().map(|a| (a - mx).powi(2)).sum();
    let syy: f64 = y.iter().map(|b| (b - my).powi(2)).sum();
    if sxx == 0.0 || syy == 0.0 {
        return Err(Error::UndefinedCorrelation("a series has zero variance".into()));
    }
    Ok((sxy / (sxx * syy).sqrt()).clamp(-1.0, 1.0))
}

/// `(rms, bias)` of `sim − emp`; bias is the mean difference.
pub fn rms_and_bias(s: &PairedSeries) -> Result<(f64, f64)> {
    if s.is_empty() {
        return Err(Error::invalid("rms/bias of an empty series"));
    }
    let n = s.len() as f64;
    let diffs = s.items.iter().map(|i| i.sim - i.emp);
    let bias = diffs.clone().sum::<f64>() / n;
    let rms = (diffs.map(|d| d * d).sum::<f64>() / n).sqrt();
    Ok((rms, bias))
}

/// Least-squares line `sim = intercept + slope · emp`.
pub fn regression_line(s: &PairedSeries) -> Result<(f64, f64)> {
    let (x, y) = (s.emps(), s.sims());
    if x.len() < 2 {
        return Err(Error::invalid("regression needs at least 2 items"));
    }
    let n = x.len() as f64;
    let mx = x.iter().sum::<f64>() / n;
    let my = y.iter().sum::<f64>() / n;
    let sxx: f64 = x.iter().map(|a| (a - mx).powi(2)).sum();
    if sxx == 0.0 {
        return Err(Error::invalid("regression on constant measurements"));
    }
    let slope = x.iter().zip(&y).map(|(a, b)| (a - mx) * (b - my)).sum::<f64>() / sxx;
    Ok((slope, my - slope * mx))
}

/// Plain-speech SRT minus Lombard-speech SRT.
pub fn lombard_gain(srt_plain: f64, srt_lombard: f64) -> f64 {
    srt_plain - srt_lombard
}

/// Mean of per-listener gains and its standard error.
pub fn mean_listener_gain(pairs: &[(f64, f64)]) -> Result<(f64, f64)> {
    if pairs.is_empty() {
        return Err(Error::invalid("no listener data"));
    }
    let gains: Vec<f64> = pairs.iter().map(|&(p, l)| lombard_gain(p, l)).collect();
    let mean = gains.iter().sum::<f64>() / gains.len() as f64;
    Ok((mean, sem(sample_std(&gains), gains.len())?))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalSummary {
    pub n: usize,
    pub pearson_r: Option<f64>,
    pub rms_db: f64,
    /// Mean of `sim − emp`.
    pub bias_db: f64,
    /// Intercept of the regression of sim on emp.
    pub bias_intercept_db: Option<f64>,
    pub regression_slope: Option<f64>,
    pub chi2_per_dof: Option<f64>,
    pub dof: usize,
}

/// All measures for one panel; correlation and regression are left empty
/// when undefined.
pub fn summarize(s: &PairedSeries, dof: usize) -> Result<EvalSummary> {
    let (rms_db, bias_db) = rms_and_bias(s)?;
    let line = regression_line(s).ok();
    Ok(EvalSummary {
        n: s.len(),
        pearson_r: pearson_r(s).ok(),
        rms_db,
        bias_db,
        bias_intercept_db: line.map(|l| l.1),
        regression_slope: line.map(|l| l.0),
        chi2_per_dof: chi2_per_dof(s, dof).ok(),
        dof,
    })
}
