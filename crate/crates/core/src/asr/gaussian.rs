//! Diagonal-covariance Gaussian mixture state densities.

use std::f64::consts::PI;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
struct RawState {
    weights: Vec<f64>,
    means: Vec<Vec<f64>>,
    variances: Vec<Vec<f64>>,
}

/// Emission density of one HMM state.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "RawState", into = "RawState")]
pub struct GaussianState {
    weights: Vec<f64>,
    means: Vec<Vec<f64>>,
    variances: Vec<Vec<f64>>,
    // cached per component: log weight + normalizer, and inverse variances
    log_consts: Vec<f64>,
    inv_vars: Vec<Vec<f64>>,
}

impl TryFrom<RawState> for GaussianState {
    type Error = Error;

    fn try_from(r: RawState) -> Result<Self> {
        GaussianState::new(r.weights, r.means, r.variances)
    }
}

impl From<GaussianState> for RawState {
    fn from(g: GaussianState) -> Self {
        RawState { weights: g.weights, means: g.means, variances: g.variances }
    }
}

impl GaussianState {
    pub fn new(weights: Vec<f64>, means: Vec<Vec<f64>>, variances: Vec<Vec<f64>>) -> Result<Self> {
        let k = weights.len();
        if k == 0 || means.len() != k || variances.len() != k {
            return Err(Error::invalid("mixture needs matching nonzero component counts"));
        }
        let dim = means[0].len();
        if dim == 0 || means.iter().chain(&variances).any(|v| v.len() != dim) {
            return Err(Error::invalid("mixture components must share a nonzero dimension"));
        }
        if weights.iter().any(|&w| !(w >= 0.0)) || (weights.iter().sum::<f64>() - 1.0).abs() > 1e-9 {
            return Err(Error::invalid("mixture weights must be nonnegative and sum to 1"));
        }
        if variances.iter().flatten().any(|&v| !(v > 0.0 && v.is_finite())) {
            return Err(Error::invalid("variances must be positive and finite"));
        }
        if means.iter().flatten().any(|m| !m.is_finite()) {
            return Err(Error::invalid("means must be finite"));
        }
        let log_consts = weights
            .iter()
            .zip(&variances)
            .map(|(w, var)| w.ln() - 0.5 * var.iter().map(|v| (2.0 * PI * v).ln()).sum::<f64>())
            .collect();
        let inv_vars = variances.iter().map(|var| var.iter().map(|v| 1.0 / v).collect()).collect();
        Ok(GaussianState { weights, means, variances, log_consts, inv_vars })
    }

    pub fn single(mean: Vec<f64>, variance: Vec<f64>) -> Result<Self> {
        GaussianState::new(vec![1.0], vec![mean], vec![variance])
    }

    pub fn dim(&self) -> usize {
        self.means[0].len()
    }

    pub fn num_components(&self) -> usize {
        self.weights.len()
    }

    pub fn weights(&self) -> &[f64] {
        &self.weights
    }

    pub fn means(&self) -> &[Vec<f64>] {
        &self.means
    }

    pub fn variances(&self) -> &[Vec<f64>] {
        &self.variances
    }

    /// Mean, inverse variances and log of weight times normalizer of one component.
    pub fn component(&self, c: usize) -> (&[f64], &[f64], f64) {
        (&self.means[c], &self.inv_vars[c], self.log_consts[c])
    }

    /// Per-component log of weight times density.
    pub fn component_log_likelihoods(&self, x: &[f64], out: &mut Vec<f64>) {
        out.clear();
        for ((c, mean), inv) in self.log_consts.iter().zip(&self.means).zip(&self.inv_vars) {
            let mut q = 0.0;
            for ((xi, mi), iv) in x.iter().zip(mean).zip(inv) {
                let d = xi - mi;
                q += d * d * iv;
            }
            out.push(c - 0.5 * q);
        }
    }

    pub fn log_likelihood(&self, x: &[f64]) -> f64 {
        if self.weights.len() == 1 {
            let mut q = 0.0;
            for ((xi, mi), iv) in x.iter().zip(&self.means[0]).zip(&self.inv_vars[0]) {
                let d = xi - mi;
                q += d * d * iv;
            }
            return self.log_consts[0] - 0.5 * q;
        }
        let mut comps = Vec::with_capacity(self.weights.len());
        self.component_log_likelihoods(x, &mut comps);
        log_sum_exp(&comps)
    }
}

pub fn log_sum_exp(v: &[f64]) -> f64 {
    let m = v.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    if m == f64::NEG_INFINITY {
        return m;
    }
    m + v.iter().map(|x| (x - m).exp()).sum::<f64>().ln()
}

/// Mean and floored population variance of a set of frames.
pub(crate) fn moments(frames: &[&[f64]], floor: &[f64]) -> (Vec<f64>, Vec<f64>) {
    let dim = floor.len();
    let n = frames.len() as f64;
    let mut mean = vec![0.0; dim];
    for f in frames {
        for (m, x) in mean.iter_mut().zip(*f) {
            *m += x;
        }
    }
    mean.iter_mut().for_each(|m| *m /= n);
    let mut var = vec![0.0; dim];
    for f in frames {
        for ((v, x), m) in var.iter_mut().zip(*f).zip(&mean) {
            *v += (x - m) * (x - m);
        }
    }
    for (v, fl) in var.iter_mut().zip(floor) {
        *v = (*v / n).max(*fl);
    }
    (mean, var)
}

/// Initial mixture from a frame set: components spread along ±σ/5 steps
/// around the pooled mean.
pub(crate) fn init_state(frames: &[&[f64]], floor: &[f64], components: usize) -> Result<GaussianState> {
    let (mean, var) = moments(frames, floor);
    if components == 1 {
        return GaussianState::single(mean, var);
    }
    let mid = (components - 1) as f64 / 2.0;
    let means = (0..components)
        .map(|k| {
            let off = 0.2 * (k as f64 - mid);
            mean.iter().zip(&var).map(|(m, v)| m + off * v.sqrt()).collect()
        })
        .collect();
    GaussianState::new(vec![1.0 / components as f64; components], means, vec![var; components])
}

/// One EM step on a fixed set of frames. For a single component this is the
/// closed-form maximum-likelihood estimate.
pub(crate) fn reestimate(state: &GaussianState, frames: &[&[f64]], floor: &[f64]) -> Result<GaussianState> {
    if state.num_components() == 1 {
        let (mean, var) = moments(frames, floor);
        return GaussianState::single(mean, var);
    }
    let k = state.num_components();
    let dim = state.dim();
    let mut resp_sum = vec![0.0; k];
    let mut first = vec![vec![0.0; dim]; k];
    let mut resp = Vec::with_capacity(frames.len());
    let mut comps = Vec::with_capacity(k);
    for f in frames {
        state.component_log_likelihoods(f, &mut comps);
        let total = log_sum_exp(&comps);
        let r: Vec<f64> = comps.iter().map(|c| (c - total).exp()).collect();
        for c in 0..k {
            resp_sum[c] += r[c];
            for (a, x) in first[c].iter_mut().zip(*f) {
                *a += r[c] * x;
            }
        }
        resp.push(r);
    }
    let n = frames.len() as f64;
    let mut weights = Vec::with_capacity(k);
    let mut means = Vec::with_capacity(k);
    let mut vars = Vec::with_capacity(k);
    for c in 0..k {
        if resp_sum[c] <= 1e-12 {
            // starved component keeps its parameters with negligible weight
            weights.push(0.0);
            means.push(state.means[c].clone());
            vars.push(state.variances[c].clone());
            continue;
        }
        let mean: Vec<f64> = first[c].iter().map(|a| a / resp_sum[c]).collect();
        let mut var = vec![0.0; dim];
        for (f, r) in frames.iter().zip(&resp) {
            for ((v, x), m) in var.iter_mut().zip(*f).zip(&mean) {
                *v += r[c] * (x - m) * (x - m);
            }
        }
        for (v, fl) in var.iter_mut().zip(floor) {
            *v = (*v / resp_sum[c]).max(*fl);
        }
        weights.push(resp_sum[c] / n);
        means.push(mean);
        vars.push(var);
    }
    let total: f64 = weights.iter().sum();
    weights.iter_mut().for_each(|w| *w /= total);
    GaussianState::new(weights, means, vars)
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;

    #[test]
    fn single_gaussian_density() {
        let g = GaussianState::single(vec![1.0, -1.0], vec![4.0, 0.25]).unwrap();
        let x = [2.0, 0.0];
        let expected = -0.5 * ((2.0 * PI * 4.0).ln() + (2.0 * PI * 0.25).ln()) - 0.5 * (1.0 / 4.0 + 1.0 / 0.25);
        assert_relative_eq!(g.log_likelihood(&x), expected, epsilon = 1e-12);
    }

    #[test]
    fn mixture_density_is_weighted_sum() {
        let g = GaussianState::new(vec![0.25, 0.75], vec![vec![0.0], vec![3.0]], vec![vec![1.0], vec![2.0]]).unwrap();
        let n = |x: f64, m: f64, v: f64| (-(x - m) * (x - m) / (2.0 * v)).exp() / (2.0 * PI * v).sqrt();
        let x = 1.3;
        let expected = (0.25 * n(x, 0.0, 1.0) + 0.75 * n(x, 3.0, 2.0)).ln();
        assert_relative_eq!(g.log_likelihood(&[x]), expected, epsilon = 1e-12);
    }

    #[test]
    fn validation() {
        assert!(GaussianState::new(vec![0.5, 0.4], vec![vec![0.0]; 2], vec![vec![1.0]; 2]).is_err());
        assert!(GaussianState::single(vec![0.0], vec![0.0]).is_err());
        assert!(GaussianState::single(vec![0.0, 1.0], vec![1.0]).is_err());
    }

    #[test]
    fn moments_apply_floor() {
        let a = [1.0, 2.0];
        let frames: Vec<&[f64]> = vec![&a, &a, &a];
        let (m, v) = moments(&frames, &[0.01, 0.02]);
        assert_eq!(m, vec![1.0, 2.0]);
        assert_eq!(v, vec![0.01, 0.02]);
    }

    #[test]
    fn em_step_does_not_decrease_likelihood() {
        let data: Vec<[f64; 1]> =
            (0..200).map(|i| [if i % 3 == 0 { 4.0 } else { 0.0 } + (i as f64 * 0.37).sin()]).collect();
        let frames: Vec<&[f64]> = data.iter().map(|d| &d[..]).collect();
        let mut g = init_state(&frames, &[1e-3], 2).unwrap();
        let ll = |g: &GaussianState| frames.iter().map(|f| g.log_likelihood(f)).sum::<f64>();
        let mut prev = ll(&g);
        for _ in 0..20 {
            g = reestimate(&g, &frames, &[1e-3]).unwrap();
            let cur = ll(&g);
            assert!(cur >= prev - 1e-9);
            prev = cur;
        }
    }

    #[test]
    fn serde_round_trip_restores_cache() {
        let g = GaussianState::new(vec![0.5, 0.5], vec![vec![0.0], vec![1.0]], vec![vec![1.0], vec![3.0]]).unwrap();
        let back: GaussianState = serde_json::from_str(&serde_json::to_string(&g).unwrap()).unwrap();
        assert_eq!(g, back);
    }
}
