use std::fmt;
use std::num::NonZeroU64;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::datafactory::{DataError, GridParameters, IngestConfig};
use crate::governance::{BreakerConfig, CanaryConfig, GovernanceError, PolicyConfig};
use crate::identity::decode_key_hex;
use crate::supplychain::LinearModel;

/// Configuration problem, located by file and dotted field path.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ConfigError {
    pub file: Option<String>,
    pub field: String,
    pub message: String,
}

impl ConfigError {
    fn at(field: impl Into<String>, message: impl Into<String>) -> Self {
        Self {
            file: None,
            field: field.into(),
            message: message.into(),
        }
    }

    fn in_file(mut self, path: &Path) -> Self {
        self.file = Some(path.display().to_string());
        self
    }
}

impl fmt::Display for ConfigError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        if let Some(file) = &self.file {
            write!(f, "{file}: ")?;
        }
        if self.field.is_empty() {
            write!(f, "{}", self.message)
        } else {
            write!(f, "{}: {}", self.field, self.message)
        }
    }
}

impl std::error::Error for ConfigError {}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ScenarioConfig {
    pub grid: GridParameters,
    pub ingest: IngestConfig,
    pub policy: PolicyConfig,
    pub breaker: BreakerConfig,
    pub canary: CanaryConfig,
    pub identity: IdentityConfig,
    pub supply_chain: SupplyChainConfig,
    pub scenario: ScenarioParams,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct IdentityConfig {
    pub trust_root_seed_hex: String,
    pub tenant_id: String,
    pub tenant_key_hex: String,
    pub fpe_key: String,
    pub valid_subject: String,
    pub revoked_subject: String,
    #[serde(default = "default_validity")]
    pub credential_validity_ms: u64,
}

fn default_validity() -> u64 {
    300_000
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SupplyChainConfig {
    pub signer_seed_hex: String,
    pub signer_id: String,
    pub ci_run_id: String,
    pub model_name: String,
    pub model_version: String,
    pub model: LinearModel,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ScenarioParams {
    pub start_ms: u64,
    pub phase_a_delta_f_hz: f64,
    pub control_delta_f_hz: f64,
    pub baseline_sigma_hz: f64,
    pub baseline_samples: usize,
    pub baseline_bins: usize,
    pub batch_records: usize,
    pub record_interval_ms: u64,
    pub reference_pmus: usize,
    pub reference_sigma_hz: f64,
    pub phase_b_duration_ms: u64,
    pub phase_b_latency_ms: u64,
    pub phase_b_interval_ms: u64,
    pub disturbance_mw: f64,
    pub dt_ms: u64,
    pub dispatch_agent: String,
    pub dispatch_signals: usize,
    pub dispatch_mw: f64,
    pub market_price_usd_mwh: f64,
    pub bid_usd_mwh: f64,
    pub sidecar_available: bool,
    pub canary_predictions: usize,
    pub canary_shift_hz: f64,
    pub canary_sigma_hz: f64,
    pub correlation_window_ms: u64,
}

pub fn parse_config(text: &str) -> Result<ScenarioConfig, ConfigError> {
    let de = &mut serde_json::Deserializer::from_str(text);
    let cfg: ScenarioConfig = serde_path_to_error::deserialize(de).map_err(|e| {
        let path = e.path().to_string();
        let field = if path == "." { String::new() } else { path };
        ConfigError::at(field, e.into_inner().to_string())
    })?;
    cfg.validate()?;
    Ok(cfg)
}

pub fn load_config(path: impl AsRef<Path>) -> Result<ScenarioConfig, ConfigError> {
    let path = path.as_ref();
    let text = std::fs::read_to_string(path)
        .map_err(|e| ConfigError::at("", format!("cannot read config: {e}")).in_file(path))?;
    parse_config(&text).map_err(|e| e.in_file(path))
}

fn data_err(block: &str, e: DataError) -> ConfigError {
    match e {
        DataError::InvalidParameter(field) => ConfigError::at(format!("{block}.{field}"), "out of range"),
        other => ConfigError::at(block, other.to_string()),
    }
}

fn gov_err(block: &str, e: GovernanceError) -> ConfigError {
    ConfigError::at(block, e.to_string())
}

impl ScenarioConfig {
    pub fn validate(&self) -> Result<(), ConfigError> {
        self.grid.validate().map_err(|e| data_err("grid", e))?;
        self.ingest.validate().map_err(|e| data_err("ingest", e))?;
        self.policy.validate().map_err(|e| gov_err("policy", e))?;
        self.breaker.validate().map_err(|e| gov_err("breaker", e))?;
        self.canary.validate().map_err(|e| gov_err("canary", e))?;

        let id = &self.identity;
        for (field, value) in [
            ("identity.trust_root_seed_hex", &id.trust_root_seed_hex),
            ("identity.tenant_key_hex", &id.tenant_key_hex),
            ("supply_chain.signer_seed_hex", &self.supply_chain.signer_seed_hex),
        ] {
            decode_key_hex(value).map_err(|e| ConfigError::at(field, e.to_string()))?;
        }
        if id.fpe_key.is_empty() {
            return Err(ConfigError::at("identity.fpe_key", "must not be empty"));
        }
        if id.credential_validity_ms == 0 {
            return Err(ConfigError::at("identity.credential_validity_ms", "must be positive"));
        }
        if id.valid_subject == id.revoked_subject {
            return Err(ConfigError::at("identity.revoked_subject", "must differ from valid_subject"));
        }
        if self.supply_chain.model.weights.is_empty() {
            return Err(ConfigError::at("supply_chain.model.weights", "must not be empty"));
        }

        let s = &self.scenario;
        let positive = |field: &str, v: f64| {
            if v > 0.0 && v.is_finite() {
                Ok(())
            } else {
                Err(ConfigError::at(format!("scenario.{field}"), "must be a positive number"))
            }
        };
        positive("baseline_sigma_hz", s.baseline_sigma_hz)?;
        positive("reference_sigma_hz", s.reference_sigma_hz)?;
        positive("canary_sigma_hz", s.canary_sigma_hz)?;
        positive("disturbance_mw", s.disturbance_mw)?;
        positive("dispatch_mw", s.dispatch_mw)?;
        positive("market_price_usd_mwh", s.market_price_usd_mwh)?;
        positive("bid_usd_mwh", s.bid_usd_mwh)?;
        for (field, v) in [
            ("phase_a_delta_f_hz", s.phase_a_delta_f_hz),
            ("control_delta_f_hz", s.control_delta_f_hz),
            ("canary_shift_hz", s.canary_shift_hz),
        ] {
            if !v.is_finite() {
                return Err(ConfigError::at(format!("scenario.{field}"), "must be finite"));
            }
        }
        let at_least = |field: &str, v: usize, min: usize| {
            if v >= min {
                Ok(())
            } else {
                Err(ConfigError::at(format!("scenario.{field}"), format!("must be at least {min}")))
            }
        };
        at_least("baseline_samples", s.baseline_samples, 2)?;
        at_least("baseline_bins", s.baseline_bins, 2)?;
        at_least("batch_records", s.batch_records, 2)?;
        at_least("reference_pmus", s.reference_pmus, 1)?;
        at_least("canary_predictions", s.canary_predictions, 1)?;
        if s.record_interval_ms == 0 {
            return Err(ConfigError::at("scenario.record_interval_ms", "must be positive"));
        }
        if s.dt_ms == 0 {
            return Err(ConfigError::at("scenario.dt_ms", "must be positive"));
        }
        if s.phase_b_duration_ms < 90_000 {
            return Err(ConfigError::at("scenario.phase_b_duration_ms", "must be at least 90000"));
        }
        if s.phase_b_interval_ms == 0 || s.phase_b_interval_ms % s.dt_ms != 0 {
            return Err(ConfigError::at(
                "scenario.phase_b_interval_ms",
                "must be a positive multiple of dt_ms",
            ));
        }
        if s.correlation_window_ms == 0 {
            return Err(ConfigError::at("scenario.correlation_window_ms", "must be positive"));
        }
        if s.dispatch_agent.is_empty() {
            return Err(ConfigError::at("scenario.dispatch_agent", "must not be empty"));
        }
        Ok(())
    }

    pub fn dt(&self) -> NonZeroU64 {
        NonZeroU64::new(self.scenario.dt_ms).expect("validated")
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn golden_text() -> String {
        std::fs::read_to_string(concat!(env!("CARGO_MANIFEST_DIR"), "/../../fixtures/golden.json")).unwrap()
    }

    #[test]
    fn golden_parses() {
        let cfg = parse_config(&golden_text()).unwrap();
        assert_eq!(cfg.policy.velocity_limit, 5);
        assert_eq!(cfg.breaker.latency_budget_ms, 200);
        assert!(cfg.policy.scope_allowlist.is_none());
    }

    #[test]
    fn unknown_field_is_located() {
        let mut v: serde_json::Value = serde_json::from_str(&golden_text()).unwrap();
        v["breaker"]["latency_budget"] = 5.into();
        let e = parse_config(&v.to_string()).unwrap_err();
        assert_eq!(e.field, "breaker.latency_budget");
        assert!(e.message.contains("unknown field"), "{e}");
    }

    #[test]
    fn wrong_type_is_located() {
        let mut v: serde_json::Value = serde_json::from_str(&golden_text()).unwrap();
        v["grid"]["inertia_h"] = "heavy".into();
        assert_eq!(parse_config(&v.to_string()).unwrap_err().field, "grid.inertia_h");
    }

    #[test]
    fn semantic_errors_are_located() {
        let mut v: serde_json::Value = serde_json::from_str(&golden_text()).unwrap();
        v["grid"]["inertia_h"] = (-1.0).into();
        assert_eq!(parse_config(&v.to_string()).unwrap_err().field, "grid.inertia_h");

        let mut v: serde_json::Value = serde_json::from_str(&golden_text()).unwrap();
        v["canary"]["fraction"] = 0.2.into();
        assert_eq!(parse_config(&v.to_string()).unwrap_err().field, "canary");

        let mut v: serde_json::Value = serde_json::from_str(&golden_text()).unwrap();
        v["scenario"]["phase_b_duration_ms"] = 1000.into();
        assert_eq!(parse_config(&v.to_string()).unwrap_err().field, "scenario.phase_b_duration_ms");

        let mut v: serde_json::Value = serde_json::from_str(&golden_text()).unwrap();
        v["identity"]["tenant_key_hex"] = "zz".into();
        assert_eq!(parse_config(&v.to_string()).unwrap_err().field, "identity.tenant_key_hex");
    }

    #[test]
    fn missing_file_names_the_path() {
        let e = load_config("/nonexistent/grid.json").unwrap_err();
        assert!(e.to_string().contains("/nonexistent/grid.json"));
    }
}
