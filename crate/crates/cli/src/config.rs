//! Scenario grids for the `simulate` subcommand.
//!
//! ```toml
//! mode = "one"              # "one" or "two"
//! setting = "gaussian"      # or "bounded" (sphere-supported data)
//! bound = 1.0               # bounded only
//! quantiles = "oracle"      # or "plugin"
//! d = [4, 16, 64]
//! n = [500]
//! alpha = [0.05]
//! eta = [0.0]
//! scale = 1.0               # noise standard deviation, or sphere radius
//! trials = 800
//!
//! [experiment]
//! kind = "rates"            # error rates at fixed signals beyond eta
//! delta = [0.0, 0.5]
//! ```
//!
//! or `kind = "separation"` with optional `power_target` and `tol` to
//! locate the empirical separation by bisection.

use serde::Deserialize;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ModeName {
    One,
    Two,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum SettingName {
    Gaussian,
    Bounded,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum QuantileName {
    Oracle,
    Plugin,
}

#[derive(Debug, Clone, PartialEq, Deserialize)]
#[serde(tag = "kind", rename_all = "lowercase", deny_unknown_fields)]
pub enum Experiment {
    Rates {
        delta: Vec<f64>,
    },
    Separation {
        #[serde(default = "default_power")]
        power_target: f64,
        #[serde(default = "default_tol")]
        tol: f64,
    },
}

fn default_power() -> f64 {
    0.5
}

fn default_tol() -> f64 {
    0.05
}

fn default_scale() -> f64 {
    1.0
}

fn default_trials() -> usize {
    500
}

#[derive(Debug, Clone, PartialEq, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SimConfig {
    pub mode: ModeName,
    pub setting: SettingName,
    pub bound: Option<f64>,
    pub quantiles: QuantileName,
    pub d: Vec<usize>,
    pub n: Vec<usize>,
    pub alpha: Vec<f64>,
    pub eta: Vec<f64>,
    #[serde(default = "default_scale")]
    pub scale: f64,
    #[serde(default = "default_trials")]
    pub trials: usize,
    pub experiment: Experiment,
}

impl SimConfig {
    pub fn parse(text: &str) -> anyhow::Result<Self> {
        let cfg: SimConfig = toml::from_str(text)?;
        for (name, empty) in [
            ("d", cfg.d.is_empty()),
            ("n", cfg.n.is_empty()),
            ("alpha", cfg.alpha.is_empty()),
            ("eta", cfg.eta.is_empty()),
        ] {
            if empty {
                anyhow::bail!("grid axis `{name}` is empty");
            }
        }
        if cfg.setting == SettingName::Bounded && cfg.bound.is_none() {
            anyhow::bail!("setting = \"bounded\" needs `bound`");
        }
        Ok(cfg)
    }
}
