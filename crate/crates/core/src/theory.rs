//! Closed-form privacy budgets, effective sample size, the generalization
//! bound, theoretical tradeoff curves and correlation metrics.

use std::io::Write;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::fmt::{full, sig6};
use crate::plot::{Panel, Series};

/// `[(1−w)²/N_T + w²/N_R]⁻¹`.
///
/// Evaluated as `N / (1 + N²(w−w*)²/(N_T N_R))`, an exact rearrangement that
/// never exceeds `N` in floating point and returns `N` at `w = N_R/N`.
pub fn effective_samples(n_train: f64, n_reference: f64, w: f64) -> f64 {
    if w == 0.0 {
        return n_train;
    }
    if w == 1.0 {
        return n_reference;
    }
    let n = n_train + n_reference;
    let d = w - optimal_weight(n_train, n_reference);
    n / (1.0 + n * n * d * d / (n_train * n_reference))
}

/// `[Σ w_m²/N_m]⁻¹` for any number of datasets.
pub fn effective_samples_multi(sizes: &[f64], weights: &[f64]) -> Result<f64> {
    if sizes.len() != weights.len() || sizes.is_empty() {
        return Err(Error::Shape("sizes and weights must be non-empty and equal length".into()));
    }
    let s: f64 = sizes.iter().zip(weights).map(|(n, w)| w * w / n).sum();
    Ok(1.0 / s)
}

/// `w* = N_R / (N_T + N_R)`, the weight that maximizes `N_eff`.
pub fn optimal_weight(n_train: f64, n_reference: f64) -> f64 {
    n_reference / (n_train + n_reference)
}

/// Constants of the noisy mechanism and of the hypothesis class.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct DpConstants {
    pub delta: f64,
    /// Number of noisy steps `K`.
    pub steps: usize,
    pub clip_norm: f64,
    pub sampling_ratio: f64,
    pub vc_dim: f64,
}

impl Default for DpConstants {
    fn default() -> Self {
        Self {
            delta: 1e-5,
            steps: 1,
            clip_norm: 1.0,
            sampling_ratio: 1.0,
            vc_dim: 100.0,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PrivacyBudget {
    pub epsilon_0: f64,
    pub epsilon_t: f64,
    pub epsilon_r: f64,
    pub delta: f64,
    /// Noise multiplier that achieves `epsilon_0` per step.
    pub sigma: f64,
    pub valid: bool,
}

pub fn noise_multiplier(epsilon_0: f64, delta: f64, steps: usize, clip_norm: f64, alpha: f64) -> f64 {
    alpha * (steps as f64).sqrt() * (2.0 * (1.25 / delta).ln()).sqrt() * clip_norm / epsilon_0
}

pub fn privacy_budget(
    n_train: f64,
    n_reference: f64,
    w: f64,
    epsilon_0: f64,
    dp: &DpConstants,
) -> PrivacyBudget {
    let epsilon_t = epsilon_0 * (1.0 - w) / n_train;
    let epsilon_r = epsilon_0 * w / n_reference;
    let cap_t = if w < 1.0 { n_train / (1.0 - w) } else { f64::INFINITY };
    let cap_r = if w > 0.0 { n_reference / w } else { f64::INFINITY };
    PrivacyBudget {
        epsilon_0,
        epsilon_t,
        epsilon_r,
        delta: dp.delta,
        sigma: noise_multiplier(epsilon_0, dp.delta, dp.steps, dp.clip_norm, dp.sampling_ratio),
        valid: epsilon_0 > 0.0 && epsilon_0 < cap_t.min(cap_r),
    }
}

/// `ε_T / ε_R`, infinite when the reference weight vanishes.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum PrivacyRatio {
    Finite(f64),
    Infinite,
}

impl PrivacyRatio {
    pub fn value(self) -> f64 {
        match self {
            PrivacyRatio::Finite(r) => r,
            PrivacyRatio::Infinite => f64::INFINITY,
        }
    }
}

pub fn relative_privacy_ratio(n_train: f64, n_reference: f64, w: f64) -> PrivacyRatio {
    if w == 0.0 {
        PrivacyRatio::Infinite
    } else {
        PrivacyRatio::Finite((1.0 - w) / w * n_reference / n_train)
    }
}

/// Budgets over `K` steps with unit leading constant: `ε·α·√K` per dataset.
pub fn nominal_epsilon(budget: &PrivacyBudget, steps: usize, alpha: f64) -> (f64, f64) {
    let f = alpha * (steps as f64).sqrt();
    (budget.epsilon_t * f, budget.epsilon_r * f)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct BoundInputs {
    pub n_train: f64,
    pub n_reference: f64,
    pub w: f64,
    pub vc_dim: f64,
    pub delta: f64,
    pub steps: usize,
    pub clip_norm: f64,
    pub sampling_ratio: f64,
}

/// Excess risk over the best hypothesis:
/// `2√(d/N_eff)·√(γ₂ + ln(N/d)) + √(2 ln(2/δ)/N_eff)` with `γ₂ = max(4/d, 1)`.
pub fn generalization_bound(inputs: &BoundInputs) -> Result<f64> {
    let BoundInputs { n_train, n_reference, w, vc_dim, delta, .. } = *inputs;
    if !(vc_dim > 0.0) {
        return Err(Error::Domain(format!("VC dimension must be positive, got {vc_dim}")));
    }
    if !(delta > 0.0 && delta < 1.0) {
        return Err(Error::Domain(format!("delta must lie in (0, 1), got {delta}")));
    }
    let n_eff = effective_samples(n_train, n_reference, w);
    bound_from_n_eff(n_eff, n_train + n_reference, vc_dim, delta)
}

pub fn bound_from_n_eff(n_eff: f64, n: f64, vc_dim: f64, delta: f64) -> Result<f64> {
    let gamma2 = (4.0 / vc_dim).max(1.0);
    let inner = gamma2 + (n / vc_dim).ln();
    if !(inner >= 0.0) {
        return Err(Error::Domain(format!(
            "bound is vacuous: γ₂ + ln(N/d) = {inner} for N = {n}, d = {vc_dim}"
        )));
    }
    Ok(2.0 * (vc_dim / n_eff).sqrt() * inner.sqrt() + (2.0 * (2.0 / delta).ln() / n_eff).sqrt())
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CurvePoint {
    pub w: f64,
    pub n_eff: f64,
    pub epsilon_t: f64,
    pub epsilon_r: f64,
    /// Absent when the bound is vacuous.
    pub bound_excess: Option<f64>,
    pub valid: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TheoryCurve {
    pub n_train: f64,
    pub n_reference: f64,
    pub epsilon_0: f64,
    pub points: Vec<CurvePoint>,
}

/// `n` evenly spaced weights from 0 to 1 inclusive.
pub fn uniform_grid(n: usize) -> Vec<f64> {
    match n {
        0 => Vec::new(),
        1 => vec![0.0],
        _ => (0..n).map(|i| i as f64 / (n - 1) as f64).collect(),
    }
}

pub fn theory_curve(
    n_train: f64,
    n_reference: f64,
    epsilon_0: f64,
    grid: &[f64],
    dp: &DpConstants,
) -> Result<TheoryCurve> {
    if !(n_train > 0.0 && n_reference > 0.0) {
        return Err(Error::Domain("dataset sizes must be positive".into()));
    }
    if let Some(w) = grid.iter().find(|w| !(0.0..=1.0).contains(*w)) {
        return Err(Error::Domain(format!("weight {w} outside [0, 1]")));
    }
    let mut ws = grid.to_vec();
    ws.sort_by(f64::total_cmp);
    let points = ws
        .into_iter()
        .map(|w| {
            let b = privacy_budget(n_train, n_reference, w, epsilon_0, dp);
            let bound = generalization_bound(&BoundInputs {
                n_train,
                n_reference,
                w,
                vc_dim: dp.vc_dim,
                delta: dp.delta,
                steps: dp.steps,
                clip_norm: dp.clip_norm,
                sampling_ratio: dp.sampling_ratio,
            });
            CurvePoint {
                w,
                n_eff: effective_samples(n_train, n_reference, w),
                epsilon_t: b.epsilon_t,
                epsilon_r: b.epsilon_r,
                bound_excess: bound.ok(),
                valid: b.valid,
            }
        })
        .collect();
    Ok(TheoryCurve {
        n_train,
        n_reference,
        epsilon_0,
        points,
    })
}

impl TheoryCurve {
    pub fn write_csv(&self, mut out: impl Write) -> std::io::Result<()> {
        writeln!(
            out,
            "w,n_eff,eps_t,eps_r,bound_excess,w_full,n_eff_full,eps_t_full,eps_r_full,bound_excess_full"
        )?;
        for p in &self.points {
            let b6 = p.bound_excess.map(sig6).unwrap_or_default();
            let bf = p.bound_excess.map(full).unwrap_or_default();
            writeln!(
                out,
                "{},{},{},{},{},{},{},{},{},{}",
                sig6(p.w),
                sig6(p.n_eff),
                sig6(p.epsilon_t),
                sig6(p.epsilon_r),
                b6,
                full(p.w),
                full(p.n_eff),
                full(p.epsilon_t),
                full(p.epsilon_r),
                bf
            )?;
        }
        Ok(())
    }

    pub fn save_csv(&self, path: &Path) -> Result<()> {
        let f = std::fs::File::create(path).map_err(|e| Error::io(path, e))?;
        let mut w = std::io::BufWriter::new(f);
        self.write_csv(&mut w)
            .and_then(|_| w.flush())
            .map_err(|e| Error::io(path, e))
    }

    fn ratio_label(&self) -> String {
        format!("N_T/N_R={}", sig6(self.n_train / self.n_reference))
    }
}

/// Privacy against effective dataset size, one training and one reference
/// series per curve.
pub fn curves_panel(curves: &[TheoryCurve]) -> Panel {
    let mut series = Vec::new();
    for c in curves {
        let label = c.ratio_label();
        series.push(Series {
            name: format!("eps_T {label}"),
            points: c.points.iter().map(|p| (p.n_eff, p.epsilon_t)).collect(),
            scatter: false,
        });
        series.push(Series {
            name: format!("eps_R {label}"),
            points: c.points.iter().map(|p| (p.n_eff, p.epsilon_r)).collect(),
            scatter: false,
        });
    }
    let eps0 = curves.first().map_or(0.0, |c| c.epsilon_0);
    Panel {
        title: format!("utility vs privacy, eps_0 = {}", sig6(eps0)),
        x_label: "N_eff".into(),
        y_label: "epsilon".into(),
        series,
    }
}

fn check_pairs(x: &[f64], y: &[f64]) -> Result<()> {
    if x.len() != y.len() {
        return Err(Error::Shape(format!("sequence lengths differ: {} vs {}", x.len(), y.len())));
    }
    if x.len() < 3 {
        return Err(Error::UndefinedCorrelation(format!("need at least 3 pairs, got {}", x.len())));
    }
    if let Some(v) = x.iter().chain(y).find(|v| !v.is_finite()) {
        return Err(Error::UndefinedCorrelation(format!("non-finite value {v}")));
    }
    Ok(())
}

pub fn pearson(x: &[f64], y: &[f64]) -> Result<f64> {
    check_pairs(x, y)?;
    let n = x.len() as f64;
    let mx = x.iter().sum::<f64>() / n;
    let my = y.iter().sum::<f64>() / n;
    let (mut sxy, mut sxx, mut syy) = (0.0, 0.0, 0.0);
    for (a, b) in x.iter().zip(y) {
        let (dx, dy) = (a - mx, b - my);
        sxy += dx * dy;
        sxx += dx * dx;
        syy += dy * dy;
    }
    if sxx == 0.0 || syy == 0.0 {
        return Err(Error::UndefinedCorrelation("zero variance".into()));
    }
    Ok((sxy / (sxx.sqrt() * syy.sqrt())).clamp(-1.0, 1.0))
}

/// Pearson correlation between desired and measured relative privacy.
pub fn pearson_configurability(theoretical: &[f64], empirical: &[f64]) -> Result<f64> {
    pearson(theoretical, empirical)
}

/// Ranks starting at 1, ties sharing their average rank.
pub fn ranks(v: &[f64]) -> Vec<f64> {
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
    out
}

pub fn spearman(x: &[f64], y: &[f64]) -> Result<f64> {
    check_pairs(x, y)?;
    pearson(&ranks(x), &ranks(y))
}
