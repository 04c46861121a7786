//! Training loss terms and their weighted combination.
//!
//! Four terms: mean-squared regression against the weak labels, the
//! clustering-distance loss (clamped for normal videos, reciprocal for
//! abnormal ones), temporal smoothness, and sparsity. The total is
//! `lambda1 * pred + (1 - lambda1) * cluster + lambda2 * (sparsity + ts)`,
//! with disabled terms contributing zero.
//!
//! Temporal smoothness and sparsity are unnormalized sums, so remainder
//! batches contribute proportionally less.

use crate::dataset::Label;
use crate::error::{Error, Result};

/// Guard for the reciprocal branch of the clustering loss.
pub const CLUSTER_DISTANCE_EPS: f64 = 1e-6;

/// Loss weights; defaults are lambda1 = 0.90, lambda2 = 8.0e-5, alpha = 1.0.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LossConfig {
    pub lambda1: f64,
    pub lambda2: f64,
    pub alpha: f64,
}

impl Default for LossConfig {
    fn default() -> Self {
        Self {
            lambda1: 0.90,
            lambda2: 8.0e-5,
            alpha: 1.0,
        }
    }
}

impl LossConfig {
    pub fn validate(&self) -> Result<()> {
        if !(0.0..=1.0).contains(&self.lambda1) {
            return Err(Error::Config(format!(
                "lambda1 must be in [0, 1], got {}",
                self.lambda1
            )));
        }
        if self.lambda2 < 0.0 {
            return Err(Error::Config(format!(
                "lambda2 must be >= 0, got {}",
                self.lambda2
            )));
        }
        if self.alpha <= 0.0 {
            return Err(Error::Config(format!(
                "alpha must be > 0, got {}",
                self.alpha
            )));
        }
        Ok(())
    }
}

/// Which loss terms participate in the total.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct TermToggles {
    pub pred: bool,
    pub cluster: bool,
    pub ts: bool,
    pub sparsity: bool,
}

impl Default for TermToggles {
    fn default() -> Self {
        Self {
            pred: true,
            cluster: true,
            ts: true,
            sparsity: true,
        }
    }
}

/// One iteration's loss values; `total` carries the combination weights.
#[derive(Debug, Clone, Copy, Default, PartialEq)]
pub struct LossBreakdown {
    pub pred: f64,
    pub cluster: f64,
    pub ts: f64,
    pub sparsity: f64,
    pub total: f64,
}

/// (1/b) * sum((y - yhat)^2).
pub fn mse_loss(y: &[f64], yhat: &[f64]) -> Result<f64> {
    if y.len() != yhat.len() {
        return Err(Error::Dimension {
            op: "mse_loss",
            detail: format!("{} labels vs {} predictions", y.len(), yhat.len()),
        });
    }
    if y.is_empty() {
        return Err(Error::Usage("mse_loss needs at least one element".into()));
    }
    let b = y.len() as f64;
    Ok(y.iter()
        .zip(yhat)
        .map(|(yi, pi)| (yi - pi) * (yi - pi))
        .sum::<f64>()
        / b)
}

/// Clustering-distance loss: `min(alpha, d)` for normal videos, `1/d`
/// (denominator clamped at [`CLUSTER_DISTANCE_EPS`]) for abnormal ones.
pub fn clustering_loss(d: f64, label: Label, alpha: f64) -> Result<f64> {
    if d < 0.0 || !d.is_finite() {
        return Err(Error::Domain(format!(
            "clustering distance must be finite and >= 0, got {d}"
        )));
    }
    Ok(match label {
        Label::Normal => alpha.min(d),
        Label::Abnormal => 1.0 / d.max(CLUSTER_DISTANCE_EPS),
    })
}

/// sum over l of (yhat[l+1] - yhat[l])^2; batches of size 1 are excluded
/// upstream so fewer than two predictions is a usage error.
pub fn temporal_smoothness(yhat: &[f64]) -> Result<f64> {
    if yhat.len() < 2 {
        return Err(Error::Usage(
            "temporal smoothness needs at least 2 predictions".into(),
        ));
    }
    Ok(yhat.windows(2).map(|w| (w[1] - w[0]) * (w[1] - w[0])).sum())
}

/// Plain sum of predictions.
pub fn sparsity(yhat: &[f64]) -> f64 {
    yhat.iter().sum()
}

/// Weighted combination of the four terms. Disabled terms contribute zero
/// but the enabled ones keep their coefficients.
pub fn total_loss(
    pred: f64,
    cluster: f64,
    ts: f64,
    sparsity: f64,
    cfg: &LossConfig,
    toggles: &TermToggles,
) -> LossBreakdown {
    let pred = if toggles.pred { pred } else { 0.0 };
    let cluster = if toggles.cluster { cluster } else { 0.0 };
    let ts = if toggles.ts { ts } else { 0.0 };
    let sparsity = if toggles.sparsity { sparsity } else { 0.0 };
    let total = cfg.lambda1 * pred + (1.0 - cfg.lambda1) * cluster + cfg.lambda2 * (sparsity + ts);
    LossBreakdown {
        pred,
        cluster,
        ts,
        sparsity,
        total,
    }
}
