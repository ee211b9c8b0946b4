//! Run configuration: JSON schema, strict unknown-key detection, flag
//! overrides, and manifest emission.
//!
//! A manifest is the same `RunConfig` re-serialized with every default
//! materialized, so feeding an emitted manifest back through the CLI
//! reproduces the run exactly.

use std::collections::BTreeSet;
use std::fs;
use std::path::Path;

use meanfield_glm::{Family, PriorSpec};
use serde::{Deserialize, Serialize};
use serde_json::Value;

use crate::error::{CliError, Result};

#[derive(Clone, Debug, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum DesignConfig {
    /// Structured averaging-contrast design plus `N(0, I/n)` fill rows.
    Block { n: usize, p: usize },
    /// Rows iid `N(0, scale·I/n)`.
    Gaussian { n: usize, p: usize, scale: f64 },
    /// Pre-existing headerless CSV files.
    Files { x: String, y: String },
}

#[derive(Clone, Copy, Debug, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TiltConfig {
    pub damping: f64,
    pub max_iter: usize,
    pub tol_u: f64,
    pub fit_samples: usize,
    pub report_samples: usize,
}

impl Default for TiltConfig {
    fn default() -> Self {
        TiltConfig {
            damping: 0.5,
            max_iter: 500,
            tol_u: 1e-5,
            fit_samples: 200,
            report_samples: 10_000,
        }
    }
}

#[derive(Clone, Copy, Debug, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct GaussConfig {
    pub max_iter: usize,
    /// `null` selects the dimension-scaled default `1e-3·√p`.
    pub tol: Option<f64>,
    pub v_min: f64,
    pub fit_samples: usize,
    pub report_samples: usize,
    pub antithetic: bool,
}

impl Default for GaussConfig {
    fn default() -> Self {
        GaussConfig {
            max_iter: 300,
            tol: None,
            v_min: 1e-6,
            fit_samples: 2000,
            report_samples: 100_000,
            antithetic: true,
        }
    }
}

#[derive(Clone, Copy, Debug, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct JJConfig {
    pub tol_xi: f64,
    pub max_iter: usize,
    pub mc_samples: usize,
}

impl Default for JJConfig {
    fn default() -> Self {
        JJConfig {
            tol_xi: 1e-8,
            max_iter: 1000,
            mc_samples: 100_000,
        }
    }
}

#[derive(Clone, Copy, Debug, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct GibbsConfig {
    pub chains: usize,
    pub sweeps: usize,
    pub burn_in: usize,
    pub chib_sweeps: usize,
    pub chib_burn_in: usize,
}

impl Default for GibbsConfig {
    fn default() -> Self {
        GibbsConfig {
            chains: 4,
            sweeps: 5000,
            burn_in: 1000,
            chib_sweeps: 2000,
            chib_burn_in: 500,
        }
    }
}

#[derive(Clone, Copy, Debug, Default, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SolverConfig {
    pub tilt: TiltConfig,
    pub gauss: GaussConfig,
    pub jj: JJConfig,
    pub gibbs: GibbsConfig,
}

#[derive(Clone, Copy, Debug, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct MetricsConfig {
    /// Nominal miscoverage level for credible intervals.
    pub alpha: f64,
    /// Interval widening.
    pub epsilon: f64,
    /// Coverage-threshold slack; `null` defaults it to `epsilon` (the two
    /// roles share one symbol in the construction but are independent
    /// knobs here).
    pub slack: Option<f64>,
}

impl Default for MetricsConfig {
    fn default() -> Self {
        MetricsConfig {
            alpha: 0.1,
            epsilon: 0.05,
            slack: None,
        }
    }
}

impl MetricsConfig {
    pub fn resolved_slack(&self) -> f64 {
        self.slack.unwrap_or(self.epsilon)
    }
}

#[derive(Clone, Copy, Debug, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct DiagConfig {
    /// Entry-tail threshold, also the large-predictor threshold.
    pub delta: f64,
    /// Subset fraction for the tail functionals.
    pub c: f64,
    /// Uniform probe draws for the coupling norm.
    pub probes: usize,
}

impl Default for DiagConfig {
    fn default() -> Self {
        DiagConfig {
            delta: 0.1,
            c: 1.0,
            probes: 20,
        }
    }
}

#[derive(Clone, Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunConfig {
    /// Informational: which subcommand emitted this manifest.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub command: Option<String>,
    #[serde(default)]
    pub seed: u64,
    pub design: DesignConfig,
    pub family: Family,
    pub prior: PriorSpec,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub method: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub methods: Option<Vec<String>>,
    #[serde(default = "one")]
    pub replicates: usize,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub threads: Option<usize>,
    #[serde(default)]
    pub solver: SolverConfig,
    #[serde(default)]
    pub metrics: MetricsConfig,
    #[serde(default)]
    pub diagnostics: DiagConfig,
}

fn one() -> usize {
    1
}

/// Flag values that override the corresponding config fields.
#[derive(Clone, Debug, Default)]
pub struct Overrides {
    pub seed: Option<u64>,
    pub method: Option<String>,
    pub replicates: Option<usize>,
    pub threads: Option<usize>,
}

impl RunConfig {
    pub fn load(path: &Path, overrides: &Overrides) -> Result<Self> {
        let text = fs::read_to_string(path).map_err(|e| CliError::io(path, e))?;
        let value: Value = serde_json::from_str(&text)
            .map_err(|e| CliError::Config(format!("{} is not valid JSON: {e}", path.display())))?;
        let unknown = unknown_keys(&value);
        if !unknown.is_empty() {
            return Err(CliError::Config(format!(
                "unknown config keys: {}",
                unknown.join(", ")
            )));
        }
        let mut cfg: RunConfig = serde_json::from_value(value)
            .map_err(|e| CliError::Config(format!("{}: {e}", path.display())))?;
        if let Some(seed) = overrides.seed {
            cfg.seed = seed;
        }
        if let Some(method) = &overrides.method {
            cfg.method = Some(method.clone());
        }
        if let Some(replicates) = overrides.replicates {
            cfg.replicates = replicates;
        }
        if let Some(threads) = overrides.threads {
            cfg.threads = Some(threads);
        }
        if cfg.replicates == 0 {
            return Err(CliError::Config(
                "replicates must be at least 1".to_string(),
            ));
        }
        Ok(cfg)
    }

    /// The fully materialized config echoed next to every output.
    pub fn manifest(&self, command: &str) -> RunConfig {
        let mut m = self.clone();
        m.command = Some(command.to_string());
        m.metrics.slack = Some(m.metrics.resolved_slack());
        m
    }
}

/// Every key path in `value` that the schema does not recognize, in
/// document order. Sections whose discriminator (`kind`/`name`) is missing
/// or unrecognized are left to serde's own error reporting.
fn unknown_keys(value: &Value) -> Vec<String> {
    let mut out = Vec::new();
    let Some(top) = value.as_object() else {
        return out;
    };
    let allowed_top: BTreeSet<&str> = [
        "command",
        "seed",
        "design",
        "family",
        "prior",
        "method",
        "methods",
        "replicates",
        "threads",
        "solver",
        "metrics",
        "diagnostics",
    ]
    .into();
    for (key, sub) in top {
        if !allowed_top.contains(key.as_str()) {
            out.push(key.clone());
            continue;
        }
        match key.as_str() {
            "design" => check_tagged(
                sub,
                "design",
                "kind",
                &[
                    ("block", &["n", "p"]),
                    ("gaussian", &["n", "p", "scale"]),
                    ("files", &["x", "y"]),
                ],
                &mut out,
            ),
            "family" => check_tagged(
                sub,
                "family",
                "name",
                &[
                    ("linear", &[]),
                    ("logistic", &[]),
                    ("binomial", &["trials"]),
                ],
                &mut out,
            ),
            "prior" => check_tagged(
                sub,
                "prior",
                "kind",
                &[
                    ("discrete", &["support", "probs"]),
                    ("standard_gaussian", &[]),
                ],
                &mut out,
            ),
            "solver" => {
                let sections: &[(&str, &[&str])] = &[
                    (
                        "tilt",
                        &["damping", "max_iter", "tol_u", "fit_samples", "report_samples"],
                    ),
                    (
                        "gauss",
                        &[
                            "max_iter",
                            "tol",
                            "v_min",
                            "fit_samples",
                            "report_samples",
                            "antithetic",
                        ],
                    ),
                    ("jj", &["tol_xi", "max_iter", "mc_samples"]),
                    (
                        "gibbs",
                        &["chains", "sweeps", "burn_in", "chib_sweeps", "chib_burn_in"],
                    ),
                ];
                if let Some(obj) = sub.as_object() {
                    for (skey, ssub) in obj {
                        match sections.iter().find(|(name, _)| name == skey) {
                            Some((_, fields)) => {
                                check_flat(ssub, &format!("solver.{skey}"), fields, &mut out)
                            }
                            None => out.push(format!("solver.{skey}")),
                        }
                    }
                }
            }
            "metrics" => check_flat(sub, "metrics", &["alpha", "epsilon", "slack"], &mut out),
            "diagnostics" => check_flat(sub, "diagnostics", &["delta", "c", "probes"], &mut out),
            _ => {}
        }
    }
    out
}

fn check_flat(value: &Value, prefix: &str, allowed: &[&str], out: &mut Vec<String>) {
    if let Some(obj) = value.as_object() {
        for key in obj.keys() {
            if !allowed.contains(&key.as_str()) {
                out.push(format!("{prefix}.{key}"));
            }
        }
    }
}

fn check_tagged(
    value: &Value,
    prefix: &str,
    tag: &str,
    variants: &[(&str, &[&str])],
    out: &mut Vec<String>,
) {
    let Some(obj) = value.as_object() else {
        return;
    };
    let Some(kind) = obj.get(tag).and_then(|v| v.as_str()) else {
        return;
    };
    let Some((_, fields)) = variants.iter().find(|(name, _)| *name == kind) else {
        return;
    };
    for key in obj.keys() {
        if key != tag && !fields.contains(&key.as_str()) {
            out.push(format!("{prefix}.{key}"));
        }
    }
}
