//! Quasi-steady-state frequency model with a droop-control fallback.
//!
//! Frequency deviation is an algebraic function of the instantaneous
//! imbalance, `df = -dP / (2 H f0)`. When the fallback is engaged, droop
//! control adds generation in proportion to the deviation each step, so the
//! imbalance decays geometrically with ratio `1 - g dt / (2 H f0)`.

use std::io::Write;
use std::num::NonZeroU64;

use serde::{Deserialize, Serialize};

use crate::datafactory::GridParameters;

pub const DEFAULT_DT_MS: NonZeroU64 = NonZeroU64::new(100).expect("non-zero");

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct GridState {
    pub t_ms: u64,
    pub delta_f_hz: f64,
    /// Load minus generation.
    pub imbalance_mw: f64,
    pub fallback_engaged: bool,
}

impl GridState {
    pub fn at_rest(t_ms: u64) -> Self {
        Self {
            t_ms,
            delta_f_hz: 0.0,
            imbalance_mw: 0.0,
            fallback_engaged: false,
        }
    }
}

pub fn grid_step(s: &GridState, injected_imbalance_mw: f64, gp: &GridParameters, dt_ms: NonZeroU64) -> GridState {
    let dt_s = dt_ms.get() as f64 / 1000.0;
    // A negative deviation (load exceeding generation) draws extra droop
    // generation and so lowers the imbalance.
    let droop = if s.fallback_engaged {
        gp.droop_gain * s.delta_f_hz * dt_s
    } else {
        0.0
    };
    let imbalance = s.imbalance_mw + injected_imbalance_mw + droop;
    GridState {
        t_ms: s.t_ms + dt_ms.get(),
        delta_f_hz: gp.deviation_for(imbalance),
        imbalance_mw: imbalance,
        fallback_engaged: s.fallback_engaged,
    }
}

/// Hands regulation to droop control. There is no inverse.
pub fn engage_fallback(s: &GridState) -> GridState {
    GridState {
        fallback_engaged: true,
        ..*s
    }
}

/// Per-step multiplier on the imbalance while droop is engaged.
pub fn decay_ratio(gp: &GridParameters, dt_ms: NonZeroU64) -> f64 {
    1.0 - gp.droop_gain * (dt_ms.get() as f64 / 1000.0) / gp.mw_per_hz()
}

pub fn write_trace_csv<W: Write>(mut out: W, trace: &[GridState]) -> std::io::Result<()> {
    writeln!(out, "t_ms,delta_f_hz,imbalance_mw,fallback")?;
    for s in trace {
        writeln!(out, "{},{},{},{}", s.t_ms, s.delta_f_hz, s.imbalance_mw, s.fallback_engaged)?;
    }
    Ok(())
}
