//! Swing-equation consistency check for reported frequency deviations.
//!
//! In quasi-steady form a power imbalance `dP` moves frequency by
//! `df = -dP / (2 H f0)`. A reported deviation therefore implies an
//! imbalance, and that imbalance must be both corroborated by independent
//! reference PMUs and physically plausible for the system's capacity.

use serde::{Deserialize, Serialize};

use super::{DataError, TelemetryBatch};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct GridParameters {
    /// Aggregate system inertia in MW·s/Hz.
    pub inertia_h: f64,
    #[serde(default = "default_f0")]
    pub nominal_freq_f0: f64,
    pub rated_capacity_mw: f64,
    /// Droop response in MW/Hz.
    pub droop_gain: f64,
}

fn default_f0() -> f64 {
    60.0
}

impl GridParameters {
    pub fn validate(&self) -> Result<(), DataError> {
        let bad = |field: &str| Err(DataError::InvalidParameter(field.to_string()));
        if !(self.inertia_h > 0.0 && self.inertia_h.is_finite()) {
            return bad("inertia_h");
        }
        if !(self.nominal_freq_f0 > 0.0 && self.nominal_freq_f0.is_finite()) {
            return bad("nominal_freq_f0");
        }
        if !(self.rated_capacity_mw > 0.0 && self.rated_capacity_mw.is_finite()) {
            return bad("rated_capacity_mw");
        }
        if !(self.droop_gain >= 0.0 && self.droop_gain.is_finite()) {
            return bad("droop_gain");
        }
        Ok(())
    }

    /// `2 H f0`, the MW of imbalance per Hz of deviation.
    pub fn mw_per_hz(&self) -> f64 {
        2.0 * self.inertia_h * self.nominal_freq_f0
    }

    /// Imbalance implied by a deviation (positive when frequency is low).
    pub fn implied_imbalance_mw(&self, delta_f_hz: f64) -> f64 {
        -delta_f_hz * self.mw_per_hz()
    }

    /// Deviation produced by an imbalance.
    pub fn deviation_for(&self, imbalance_mw: f64) -> f64 {
        -imbalance_mw / self.mw_per_hz()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ReferenceObservation {
    pub node_id: String,
    pub delta_f_hz: f64,
    pub timestamp: u64,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PhysicsCheckConfig {
    pub ref_tolerance_hz: f64,
    #[serde(default = "default_plausibility")]
    pub plausibility_fraction: f64,
}

fn default_plausibility() -> f64 {
    0.25
}

impl Default for PhysicsCheckConfig {
    fn default() -> Self {
        Self {
            ref_tolerance_hz: 0.05,
            plausibility_fraction: default_plausibility(),
        }
    }
}

impl PhysicsCheckConfig {
    pub fn validate(&self) -> Result<(), DataError> {
        if !(self.ref_tolerance_hz > 0.0 && self.ref_tolerance_hz.is_finite()) {
            return Err(DataError::InvalidParameter("ref_tolerance_hz".into()));
        }
        if !(self.plausibility_fraction > 0.0 && self.plausibility_fraction <= 1.0) {
            return Err(DataError::InvalidParameter("plausibility_fraction".into()));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq)]
pub enum PhysicsOutcome {
    Ok {
        implied_delta_p_mw: f64,
    },
    Violation {
        implied_delta_p_mw: f64,
        detail: String,
    },
}

impl PhysicsOutcome {
    pub fn implied_delta_p_mw(&self) -> f64 {
        match self {
            PhysicsOutcome::Ok { implied_delta_p_mw } | PhysicsOutcome::Violation { implied_delta_p_mw, .. } => {
                *implied_delta_p_mw
            }
        }
    }

    pub fn is_violation(&self) -> bool {
        matches!(self, PhysicsOutcome::Violation { .. })
    }
}

pub(crate) fn median(values: &mut [f64]) -> f64 {
    values.sort_by(f64::total_cmp);
    let n = values.len();
    if n % 2 == 1 {
        values[n / 2]
    } else {
        (values[n / 2 - 1] + values[n / 2]) / 2.0
    }
}

/// Mean batch frequency minus nominal.
pub fn reported_deviation(batch: &TelemetryBatch, gp: &GridParameters) -> f64 {
    let n = batch.records.len() as f64;
    let mean = batch.records.iter().map(|r| r.freq_hz).sum::<f64>() / n;
    mean - gp.nominal_freq_f0
}

/// Flags the batch when its deviation disagrees with the reference median
/// by more than the tolerance *and* the imbalance it implies exceeds the
/// plausible fraction of rated capacity.
pub fn physics_check(
    batch: &TelemetryBatch,
    gp: &GridParameters,
    refs: &[ReferenceObservation],
    cfg: &PhysicsCheckConfig,
) -> Result<PhysicsOutcome, DataError> {
    if refs.is_empty() {
        return Err(DataError::MissingReference);
    }
    if batch.records.is_empty() {
        return Err(DataError::EmptyBatch);
    }
    gp.validate()?;
    cfg.validate()?;

    let reported = reported_deviation(batch, gp);
    let implied_delta_p_mw = reported.abs() * gp.mw_per_hz();
    let mut ref_values: Vec<f64> = refs.iter().map(|r| r.delta_f_hz).collect();
    let reference = median(&mut ref_values);

    let mismatch = (reported - reference).abs();
    let plausible_limit = cfg.plausibility_fraction * gp.rated_capacity_mw;
    if mismatch > cfg.ref_tolerance_hz && implied_delta_p_mw > plausible_limit {
        Ok(PhysicsOutcome::Violation {
            implied_delta_p_mw,
            detail: format!(
                "reported df {reported:.4} Hz vs reference {reference:.4} Hz; implied {implied_delta_p_mw:.1} MW exceeds {plausible_limit:.1} MW"
            ),
        })
    } else {
        Ok(PhysicsOutcome::Ok { implied_delta_p_mw })
    }
}
