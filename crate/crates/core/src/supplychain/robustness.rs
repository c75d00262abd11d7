//! Adversarial-robustness CI gate with a linear-model FGSM evaluator.

use serde::{Deserialize, Serialize};

use super::SupplyChainError;
use crate::audit::{AuditEvent, EventKind};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LinearModel {
    pub weights: Vec<f64>,
    pub bias: f64,
}

impl LinearModel {
    pub fn score(&self, x: &[f64]) -> Result<f64, SupplyChainError> {
        if x.len() != self.weights.len() {
            return Err(SupplyChainError::DimensionMismatch {
                expected: self.weights.len(),
                got: x.len(),
            });
        }
        Ok(self.weights.iter().zip(x).map(|(w, v)| w * v).sum::<f64>() + self.bias)
    }

    /// A sample counts as correct only when `label * score > 0`; a point
    /// on the decision boundary is a miss.
    pub fn correct(&self, x: &[f64], label: i8) -> Result<bool, SupplyChainError> {
        Ok(f64::from(label) * self.score(x)? > 0.0)
    }

    /// Logistic loss `ln(1 + exp(-label * score))`.
    pub fn logistic_loss(&self, x: &[f64], label: i8) -> Result<f64, SupplyChainError> {
        let m = f64::from(label) * self.score(x)?;
        Ok(if m > 0.0 { (-m).exp().ln_1p() } else { -m + m.exp().ln_1p() })
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Sample {
    pub x: Vec<f64>,
    pub label: i8,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct RobustnessReport {
    pub clean_accuracy: f64,
    pub robust_accuracy: f64,
    pub epsilon: f64,
}

fn check_label(label: i8) -> Result<(), SupplyChainError> {
    if label == 1 || label == -1 {
        Ok(())
    } else {
        Err(SupplyChainError::InvalidLabel(label))
    }
}

/// `x - epsilon * label * sign(w)`: the L-inf step that most increases the
/// logistic loss of a linear model. Zero weights leave their component alone.
pub fn fgsm_perturb(x: &[f64], model: &LinearModel, label: i8, epsilon: f64) -> Result<Vec<f64>, SupplyChainError> {
    check_label(label)?;
    if !(epsilon >= 0.0) {
        return Err(SupplyChainError::InvalidEpsilon(epsilon));
    }
    if x.len() != model.weights.len() {
        return Err(SupplyChainError::DimensionMismatch {
            expected: model.weights.len(),
            got: x.len(),
        });
    }
    let step = epsilon * f64::from(label);
    Ok(x.iter()
        .zip(&model.weights)
        .map(|(v, w)| if *w == 0.0 { *v } else { v - step * w.signum() })
        .collect())
}

pub fn evaluate_robustness(
    model: &LinearModel,
    dataset: &[Sample],
    epsilon: f64,
) -> Result<RobustnessReport, SupplyChainError> {
    if dataset.is_empty() {
        return Err(SupplyChainError::EmptyDataset);
    }
    let mut clean = 0usize;
    let mut robust = 0usize;
    for s in dataset {
        if model.correct(&s.x, s.label)? {
            clean += 1;
        }
        let adv = fgsm_perturb(&s.x, model, s.label, epsilon)?;
        if model.correct(&adv, s.label)? {
            robust += 1;
        }
    }
    let n = dataset.len() as f64;
    Ok(RobustnessReport {
        clean_accuracy: clean as f64 / n,
        robust_accuracy: robust as f64 / n,
        epsilon,
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
pub struct GateFailures {
    /// Higher clean accuracy bought with lower robustness.
    pub tradeoff: bool,
    /// Robust accuracy under the configured floor.
    pub robust_floor: bool,
}

impl GateFailures {
    pub fn reasons(&self) -> Vec<&'static str> {
        let mut r = Vec::new();
        if self.tradeoff {
            r.push("accuracy-robustness tradeoff");
        }
        if self.robust_floor {
            r.push("robust floor");
        }
        r
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum GateOutcome {
    Pass,
    Fail(GateFailures),
}

impl GateOutcome {
    pub fn is_pass(&self) -> bool {
        matches!(self, GateOutcome::Pass)
    }

    pub fn audit_event(&self, candidate: &RobustnessReport, now: u64) -> Option<AuditEvent> {
        match self {
            GateOutcome::Pass => None,
            GateOutcome::Fail(f) => Some(
                AuditEvent::new(now, EventKind::GateFail, "ROBUSTNESS_GATE")
                    .with("reasons", f.reasons().join(","))
                    .with("clean_accuracy", candidate.clean_accuracy)
                    .with("robust_accuracy", candidate.robust_accuracy)
                    .with("epsilon", candidate.epsilon),
            ),
        }
    }
}

pub fn robustness_gate(
    candidate: &RobustnessReport,
    baseline: &RobustnessReport,
    min_robust: f64,
) -> Result<GateOutcome, SupplyChainError> {
    if candidate.epsilon != baseline.epsilon {
        return Err(SupplyChainError::EpsilonMismatch {
            candidate: candidate.epsilon,
            baseline: baseline.epsilon,
        });
    }
    let failures = GateFailures {
        tradeoff: candidate.clean_accuracy > baseline.clean_accuracy
            && candidate.robust_accuracy < baseline.robust_accuracy,
        robust_floor: candidate.robust_accuracy < min_robust,
    };
    Ok(if failures == GateFailures::default() {
        GateOutcome::Pass
    } else {
        GateOutcome::Fail(failures)
    })
}
