//! Settings shared by every command.
//!
//! Sources, lowest precedence first: built-in defaults, the config file
//! (flat `key = value` lines, TOML syntax, or a JSON object), environment
//! variables for the endpoint, then command-line flags. The resolved value
//! is fully explicit and goes into every report.

use std::path::Path;

use anyhow::{bail, Context, Result};
use asyncall::runtime::{EndpointConfig, TrapCostModel};
use serde::{Deserialize, Serialize};

pub const ENV_ENDPOINT_URL: &str = "ASYNCALL_ENDPOINT_URL";
pub const ENV_AUTH_TOKEN: &str = "ASYNCALL_AUTH_TOKEN";

/// The config file as written; absent keys fall back to defaults.
#[derive(Debug, Clone, Default, Deserialize)]
#[serde(deny_unknown_fields)]
struct RawConfig {
    tpot_ms: Option<f64>,
    ttft_ms: Option<f64>,
    seed: Option<u64>,
    trap_profile: Option<String>,
    trap_swap_ms_per_token: Option<f64>,
    trap_recompute_quad_ms_per_token2: Option<f64>,
    trap_recompute_lin_ms_per_token: Option<f64>,
    endpoint_url: Option<String>,
    endpoint_model: Option<String>,
    endpoint_auth_header: Option<String>,
    endpoint_auth_token: Option<String>,
    endpoint_attempts: Option<u32>,
    endpoint_backoff_ms: Option<u64>,
    endpoint_max_backoff_ms: Option<u64>,
    endpoint_timeout_ms: Option<u64>,
    output: Option<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Config {
    /// Time per output token; replaces the value stored in graph files.
    pub tpot_ms: f64,
    pub ttft_ms: f64,
    pub seed: u64,
    pub trap_profile: String,
    pub trap_swap_ms_per_token: f64,
    pub trap_recompute_quad_ms_per_token2: f64,
    pub trap_recompute_lin_ms_per_token: f64,
    pub endpoint_url: String,
    pub endpoint_model: String,
    pub endpoint_auth_header: String,
    #[serde(skip)]
    pub endpoint_auth_token: Option<String>,
    pub endpoint_attempts: u32,
    pub endpoint_backoff_ms: u64,
    pub endpoint_max_backoff_ms: u64,
    pub endpoint_timeout_ms: u64,
    /// Where the command writes its main output; `None` is stdout.
    pub output: Option<String>,
}

/// Flag values that override the file.
#[derive(Debug, Clone, Default)]
pub struct Overrides {
    pub tpot_ms: Option<f64>,
    pub ttft_ms: Option<f64>,
    pub seed: Option<u64>,
    pub trap_profile: Option<String>,
    pub output: Option<String>,
}

impl Config {
    /// Resolves defaults, `path`, the environment and `flags`.
    pub fn resolve(path: Option<&Path>, env: impl Fn(&str) -> Option<String>, flags: &Overrides) -> Result<Config> {
        let raw = match path {
            Some(p) => parse_file(p)?,
            None => RawConfig::default(),
        };
        let endpoint = EndpointConfig::default();
        let trap_profile = flags.trap_profile.clone().or(raw.trap_profile).unwrap_or_else(|| "small".into());
        let base = TrapCostModel::profile(&trap_profile)
            .with_context(|| format!("unknown trap profile {trap_profile:?}; expected small or large"))?;
        let config = Config {
            tpot_ms: flags.tpot_ms.or(raw.tpot_ms).unwrap_or(5.0),
            ttft_ms: flags.ttft_ms.or(raw.ttft_ms).unwrap_or(0.0),
            seed: flags.seed.or(raw.seed).unwrap_or(0),
            trap_profile,
            trap_swap_ms_per_token: raw.trap_swap_ms_per_token.unwrap_or(base.swap_ms_per_token),
            trap_recompute_quad_ms_per_token2: raw
                .trap_recompute_quad_ms_per_token2
                .unwrap_or(base.recompute_quad_ms_per_token2),
            trap_recompute_lin_ms_per_token: raw
                .trap_recompute_lin_ms_per_token
                .unwrap_or(base.recompute_lin_ms_per_token),
            endpoint_url: env(ENV_ENDPOINT_URL).or(raw.endpoint_url).unwrap_or(endpoint.url),
            endpoint_model: raw.endpoint_model.unwrap_or(endpoint.model),
            endpoint_auth_header: raw.endpoint_auth_header.unwrap_or(endpoint.auth_header),
            endpoint_auth_token: env(ENV_AUTH_TOKEN).or(raw.endpoint_auth_token),
            endpoint_attempts: raw.endpoint_attempts.unwrap_or(endpoint.attempts),
            endpoint_backoff_ms: raw.endpoint_backoff_ms.unwrap_or(endpoint.backoff_ms),
            endpoint_max_backoff_ms: raw.endpoint_max_backoff_ms.unwrap_or(endpoint.max_backoff_ms),
            endpoint_timeout_ms: raw.endpoint_timeout_ms.unwrap_or(endpoint.timeout_ms),
            output: flags.output.clone().or(raw.output),
        };
        config.validate()?;
        Ok(config)
    }

    fn validate(&self) -> Result<()> {
        if !(self.tpot_ms > 0.0) {
            bail!("tpot_ms must be positive, got {}", self.tpot_ms);
        }
        if !(self.ttft_ms >= 0.0) {
            bail!("ttft_ms must be non-negative, got {}", self.ttft_ms);
        }
        self.trap_costs().validate().map_err(anyhow::Error::msg)?;
        Ok(())
    }

    pub fn trap_costs(&self) -> TrapCostModel {
        TrapCostModel {
            swap_ms_per_token: self.trap_swap_ms_per_token,
            recompute_quad_ms_per_token2: self.trap_recompute_quad_ms_per_token2,
            recompute_lin_ms_per_token: self.trap_recompute_lin_ms_per_token,
        }
    }

    pub fn endpoint(&self) -> EndpointConfig {
        EndpointConfig {
            url: self.endpoint_url.clone(),
            model: self.endpoint_model.clone(),
            auth_header: self.endpoint_auth_header.clone(),
            auth_token: self.endpoint_auth_token.clone(),
            attempts: self.endpoint_attempts,
            backoff_ms: self.endpoint_backoff_ms,
            max_backoff_ms: self.endpoint_max_backoff_ms,
            timeout_ms: self.endpoint_timeout_ms,
        }
    }
}

fn parse_file(path: &Path) -> Result<RawConfig> {
    let text = std::fs::read_to_string(path).with_context(|| format!("cannot read config {}", path.display()))?;
    if text.trim_start().starts_with('{') {
        serde_json::from_str(&text).with_context(|| format!("invalid config {}", path.display()))
    } else {
        toml::from_str(&text).with_context(|| format!("invalid config {}", path.display()))
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn no_env(_: &str) -> Option<String> {
        None
    }

    #[test]
    fn defaults_are_explicit() {
        let c = Config::resolve(None, no_env, &Overrides::default()).unwrap();
        assert_eq!((c.tpot_ms, c.ttft_ms, c.seed), (5.0, 0.0, 0));
        assert_eq!(c.trap_costs(), TrapCostModel::SMALL);
        assert_eq!(c.output, None);
    }

    #[test]
    fn precedence() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("c.toml");
        std::fs::write(
            &path,
            "tpot_ms = 7.5\nseed = 3\ntrap_profile = \"large\"\nendpoint_url = \"http://file\"\nendpoint_auth_token = \"f\"\n",
        )
        .unwrap();
        let env = |k: &str| (k == ENV_ENDPOINT_URL).then(|| "http://env".to_owned());
        let c = Config::resolve(Some(&path), env, &Overrides { seed: Some(9), ..Default::default() }).unwrap();
        assert_eq!((c.tpot_ms, c.seed), (7.5, 9));
        assert_eq!(c.trap_costs(), TrapCostModel::LARGE);
        assert_eq!(c.endpoint_url, "http://env");
        assert_eq!(c.endpoint_auth_token.as_deref(), Some("f"));
    }

    #[test]
    fn token_never_serialized() {
        let env = |k: &str| (k == ENV_AUTH_TOKEN).then(|| "s3cret".to_owned());
        let c = Config::resolve(None, env, &Overrides::default()).unwrap();
        assert_eq!(c.endpoint().auth_token.as_deref(), Some("s3cret"));
        assert!(!serde_json::to_string(&c).unwrap().contains("s3cret"));
    }

    #[test]
    fn rejects_unknown_keys_and_bad_values() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("c.toml");
        std::fs::write(&path, "tpot = 5\n").unwrap();
        assert!(Config::resolve(Some(&path), no_env, &Overrides::default()).is_err());
        std::fs::write(&path, "tpot_ms = -1\n").unwrap();
        assert!(Config::resolve(Some(&path), no_env, &Overrides::default()).is_err());
        let bad = Overrides { trap_profile: Some("huge".into()), ..Default::default() };
        assert!(Config::resolve(None, no_env, &bad).is_err());
    }

    #[test]
    fn resolved_json_reloads_identically() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("c.toml");
        std::fs::write(&path, "ttft_ms = 59\ntrap_recompute_lin_ms_per_token = 0.07\n").unwrap();
        let c = Config::resolve(Some(&path), no_env, &Overrides::default()).unwrap();
        let json = dir.path().join("c.json");
        std::fs::write(&json, serde_json::to_string(&c).unwrap()).unwrap();
        assert_eq!(Config::resolve(Some(&json), no_env, &Overrides::default()).unwrap(), c);
    }
}
