//! Flat `key = value` run configuration.
//!
//! One assignment per line, `#` starts a comment, blank lines are ignored.
//! Unknown and duplicate keys are rejected with their line and column.

use std::collections::BTreeMap;
use std::str::FromStr;

use impact_game::experiments::{ScenarioSpec, SignalMode, FIGURE_AGENTS};
use impact_game::model::ModelParams;
use impact_game::signal::OuParams;
use thiserror::Error;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum ConfigError {
    #[error("line {line}, column {column}: {message}")]
    Parse {
        line: usize,
        column: usize,
        message: String,
    },

    #[error("missing required key `{key}` for {command}")]
    Missing { key: &'static str, command: &'static str },
}

/// Every accepted key with a one-line description.
pub const KEYS: &[(&str, &str)] = &[
    ("lambda", "temporary impact coefficient"),
    ("gamma", "transient impact scale"),
    ("kappa", "distortion weight in the execution price"),
    ("rho", "transient impact decay rate"),
    ("varrho", "terminal inventory penalty"),
    ("phi", "running inventory penalty"),
    ("horizon", "trading horizon T"),
    ("y0", "initial price distortion (default 1)"),
    ("iota", "signal initial value"),
    ("beta", "signal mean-reversion rate"),
    ("sigma", "signal volatility"),
    ("n_agents", "population size of the finite game"),
    ("x0", "aggregate (mean-field) initial inventory (default 1)"),
    ("agents", "comma-separated initial inventories of the tracked agents"),
    ("steps", "time steps (default 1000)"),
    ("paths", "signal paths (default 1 for simulations, 1000 for studies)"),
    ("seed", "master seed (default 1)"),
    ("n_values", "population sizes of the studies (default 4,8,16,32,64)"),
    ("eps", "deviation amplitude of the epsilon-Nash study (default 1e-6)"),
    ("max_paths", "path cap of the value study (default 16 x paths)"),
    ("scenarios", "`all` or a list of mode:x0 pairs (default all)"),
    ("floor", "assumption floor for the infimum checks"),
    ("out", "output directory (default out)"),
    ("strategy_slope_min", "acceptance window (default -2.5)"),
    ("strategy_slope_max", "acceptance window (default -1.5)"),
    ("value_slope_min", "acceptance window (default -2.5)"),
    ("value_slope_max", "acceptance window (default -1.5)"),
    ("epsnash_slope_min", "acceptance window (default -1.4)"),
    ("epsnash_slope_max", "acceptance window (default -0.6)"),
    ("r2_min", "minimum r^2 of the rate fits (default 0.95)"),
];

#[derive(Debug, Clone)]
struct Entry {
    value: String,
    line: usize,
    column: usize,
}

#[derive(Debug, Clone)]
pub struct RunConfig {
    text: String,
    entries: BTreeMap<String, Entry>,
}

impl RunConfig {
    pub fn parse(text: &str) -> Result<Self, ConfigError> {
        let mut entries = BTreeMap::new();
        for (i, raw) in text.lines().enumerate() {
            let line = i + 1;
            let content = raw.split('#').next().unwrap_or("");
            if content.trim().is_empty() {
                continue;
            }
            let Some(eq) = content.find('=') else {
                return Err(ConfigError::Parse {
                    line,
                    column: first_column(content),
                    message: "expected `key = value`".into(),
                });
            };
            let key = content[..eq].trim();
            if key.is_empty() {
                return Err(ConfigError::Parse {
                    line,
                    column: eq + 1,
                    message: "empty key".into(),
                });
            }
            let key_column = first_column(content);
            if !KEYS.iter().any(|(k, _)| *k == key) {
                return Err(ConfigError::Parse {
                    line,
                    column: key_column,
                    message: format!("unknown key `{key}`"),
                });
            }
            let rest = &content[eq + 1..];
            let value = rest.trim();
            let column = eq + 1 + first_column(rest);
            if value.is_empty() {
                return Err(ConfigError::Parse {
                    line,
                    column,
                    message: format!("empty value for `{key}`"),
                });
            }
            let entry = Entry {
                value: value.to_string(),
                line,
                column,
            };
            if let Some(prev) = entries.insert(key.to_string(), entry) {
                return Err(ConfigError::Parse {
                    line,
                    column: key_column,
                    message: format!("duplicate key `{key}` (first set on line {})", prev.line),
                });
            }
        }
        Ok(Self {
            text: text.to_string(),
            entries,
        })
    }

    /// Original text, echoed into output metadata.
    pub fn text(&self) -> &str {
        &self.text
    }

    fn bad(&self, key: &str, message: String) -> ConfigError {
        let e = &self.entries[key];
        ConfigError::Parse {
            line: e.line,
            column: e.column,
            message,
        }
    }

    pub fn get<T: FromStr>(&self, key: &str) -> Result<Option<T>, ConfigError> {
        match self.entries.get(key) {
            None => Ok(None),
            Some(e) => e
                .value
                .parse()
                .map(Some)
                .map_err(|_| self.bad(key, format!("cannot parse `{}` for `{key}`", e.value))),
        }
    }

    pub fn require<T: FromStr>(&self, key: &'static str, command: &'static str) -> Result<T, ConfigError> {
        self.get(key)?.ok_or(ConfigError::Missing { key, command })
    }

    pub fn or<T: FromStr>(&self, key: &str, default: T) -> Result<T, ConfigError> {
        Ok(self.get(key)?.unwrap_or(default))
    }

    pub fn list<T: FromStr>(&self, key: &str) -> Result<Option<Vec<T>>, ConfigError> {
        let Some(e) = self.entries.get(key) else {
            return Ok(None);
        };
        e.value
            .split(',')
            .map(|s| s.trim())
            .filter(|s| !s.is_empty())
            .map(|s| s.parse().map_err(|_| self.bad(key, format!("cannot parse `{s}` in `{key}`"))))
            .collect::<Result<Vec<T>, _>>()
            .map(Some)
    }

    pub fn model(&self, command: &'static str) -> Result<ModelParams, ConfigError> {
        Ok(ModelParams {
            lambda: self.require("lambda", command)?,
            gamma: self.require("gamma", command)?,
            kappa: self.require("kappa", command)?,
            rho: self.require("rho", command)?,
            varrho: self.require("varrho", command)?,
            phi: self.require("phi", command)?,
            horizon: self.require("horizon", command)?,
            y0: self.or("y0", 1.0)?,
        })
    }

    pub fn signal(&self, command: &'static str) -> Result<OuParams, ConfigError> {
        Ok(OuParams {
            iota: self.require("iota", command)?,
            beta: self.require("beta", command)?,
            sigma: self.require("sigma", command)?,
        })
    }

    /// Figure scenarios: `all`, or `mode:x0` pairs such as `negative:-15`.
    pub fn scenarios(&self, seed: u64) -> Result<Vec<ScenarioSpec>, ConfigError> {
        let agents = self.list("agents")?.unwrap_or_else(|| FIGURE_AGENTS.to_vec());
        let mut all = impact_game::experiments::figure_scenarios(seed);
        for s in &mut all {
            s.agent_inventories = agents.clone();
        }
        let Some(e) = self.entries.get("scenarios") else {
            return Ok(all);
        };
        if e.value == "all" {
            return Ok(all);
        }
        e.value
            .split(',')
            .map(|item| {
                let item = item.trim();
                let parsed = item
                    .split_once(':')
                    .and_then(|(m, x)| Some((SignalMode::parse(m.trim())?, x.trim().parse::<f64>().ok()?)));
                let (mode, x_tilde0) = parsed.ok_or_else(|| {
                    self.bad(
                        "scenarios",
                        format!("bad scenario `{item}`; expected mode:x0 with mode in zero|positive|negative"),
                    )
                })?;
                Ok(ScenarioSpec {
                    mode,
                    x_tilde0,
                    agent_inventories: agents.clone(),
                    seed,
                })
            })
            .collect()
    }
}

fn first_column(s: &str) -> usize {
    s.len() - s.trim_start().len() + 1
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn parses_comments_and_whitespace() {
        let c = RunConfig::parse("# header\n  lambda = 0.5 # temporary\n\nseed=3\n").unwrap();
        assert_eq!(c.get::<f64>("lambda").unwrap(), Some(0.5));
        assert_eq!(c.or("seed", 0u64).unwrap(), 3);
        assert_eq!(c.or("steps", 7usize).unwrap(), 7);
    }

    #[test]
    fn unknown_key_reports_position() {
        let err = RunConfig::parse("lambda = 0.5\n  lamda=0.5\n").unwrap_err();
        assert_eq!(
            err,
            ConfigError::Parse {
                line: 2,
                column: 3,
                message: "unknown key `lamda`".into()
            }
        );
    }

    #[test]
    fn bad_value_points_at_value() {
        let c = RunConfig::parse("kappa =  one\n").unwrap();
        match c.get::<f64>("kappa").unwrap_err() {
            ConfigError::Parse { line, column, .. } => assert_eq!((line, column), (1, 10)),
            e => panic!("{e}"),
        }
    }

    #[test]
    fn duplicates_and_missing() {
        assert!(RunConfig::parse("rho = 1\nrho = 2\n").is_err());
        assert!(RunConfig::parse("rho\n").is_err());
        let c = RunConfig::parse("rho = 1\n").unwrap();
        assert_eq!(
            c.model("check").unwrap_err(),
            ConfigError::Missing {
                key: "lambda",
                command: "check"
            }
        );
    }

    #[test]
    fn scenario_lists() {
        let c = RunConfig::parse("scenarios = negative:-15, zero:10\nagents = 1,2\n").unwrap();
        let s = c.scenarios(4).unwrap();
        assert_eq!(s.len(), 2);
        assert_eq!(s[0].mode, SignalMode::Negative);
        assert_eq!(s[1].agent_inventories, vec![1.0, 2.0]);
        assert_eq!(RunConfig::parse("").unwrap().scenarios(1).unwrap().len(), 9);
        assert!(RunConfig::parse("scenarios = up:1\n").unwrap().scenarios(1).is_err());
    }
}
