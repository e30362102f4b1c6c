//! Flat `key = value` run configuration. Command-line flags are merged on top
//! of the file; every value is validated when it is read.

use std::collections::BTreeMap;
use std::path::Path;
use std::str::FromStr;

use oedtomo::datagen::NoiseSpec;
use oedtomo::oed::OedConfig;
use oedtomo::qp::ConstraintSpec;
use oedtomo::tomo::DerivativeMode;

use crate::CliError;

/// Keys accepted in configuration files and `--set`.
pub const KNOWN_KEYS: &[&str] = &[
    "alpha",
    "alpha_count",
    "alpha_max",
    "alpha_min",
    "angle_step",
    "beta",
    "betas",
    "constraint",
    "constraints",
    "count",
    "dataset",
    "derivative",
    "design",
    "hi",
    "inner_max_iter",
    "inner_tol",
    "lo",
    "max_outer_iter",
    "max_phase2_iter",
    "mode",
    "noise_level",
    "noise_seed",
    "num_angles",
    "outer_tol",
    "prior_mean",
    "rays",
    "reconstructions",
    "ridge",
    "seed",
    "sigma",
    "size",
    "starts",
    "step",
    "support_fraction",
    "workers",
];

#[derive(Clone, Debug, Default, PartialEq)]
pub struct RunConfig {
    values: BTreeMap<String, String>,
}

fn usage(msg: impl Into<String>) -> CliError {
    CliError::Usage(msg.into())
}

impl RunConfig {
    /// Parses `key = value` lines; `#` starts a comment.
    pub fn parse(text: &str) -> Result<Self, CliError> {
        let mut cfg = Self::default();
        for (ln, raw) in text.lines().enumerate() {
            let line = raw.split('#').next().unwrap_or("").trim();
            if line.is_empty() {
                continue;
            }
            let (key, value) = line
                .split_once('=')
                .ok_or_else(|| usage(format!("config line {}: expected `key = value`, got `{raw}`", ln + 1)))?;
            cfg.set(key.trim(), value.trim())
                .map_err(|e| usage(format!("config line {}: {e}", ln + 1)))?;
        }
        Ok(cfg)
    }

    pub fn load(path: &Path) -> Result<Self, CliError> {
        let text = std::fs::read_to_string(path).map_err(|e| usage(format!("{}: {e}", path.display())))?;
        Self::parse(&text)
    }

    pub fn set(&mut self, key: &str, value: &str) -> Result<(), CliError> {
        if !KNOWN_KEYS.contains(&key) {
            return Err(usage(format!("unknown configuration key `{key}`")));
        }
        self.values.insert(key.to_string(), value.to_string());
        Ok(())
    }

    /// Applies `key=value` assignments from `--set`.
    pub fn set_pairs(&mut self, pairs: &[String]) -> Result<(), CliError> {
        for pair in pairs {
            let (k, v) = pair
                .split_once('=')
                .ok_or_else(|| usage(format!("expected key=value, got `{pair}`")))?;
            self.set(k.trim(), v.trim())?;
        }
        Ok(())
    }

    /// Applies the flags that were given.
    pub fn overlay(&mut self, flags: &[(&str, Option<String>)]) -> Result<(), CliError> {
        for (k, v) in flags {
            if let Some(v) = v {
                self.set(k, v)?;
            }
        }
        Ok(())
    }

    pub fn raw(&self, key: &str) -> Option<&str> {
        debug_assert!(KNOWN_KEYS.contains(&key), "unregistered key {key}");
        self.values.get(key).map(String::as_str)
    }

    pub fn get<T: FromStr>(&self, key: &str) -> Result<Option<T>, CliError> {
        self.raw(key)
            .map(|v| v.parse::<T>().map_err(|_| usage(format!("invalid value `{v}` for `{key}`"))))
            .transpose()
    }

    pub fn get_or<T: FromStr>(&self, key: &str, default: T) -> Result<T, CliError> {
        Ok(self.get(key)?.unwrap_or(default))
    }

    pub fn require<T: FromStr>(&self, key: &str) -> Result<T, CliError> {
        self.get(key)?.ok_or_else(|| usage(format!("missing required setting `{key}`")))
    }

    /// Comma-separated numbers.
    pub fn list(&self, key: &str) -> Result<Option<Vec<f64>>, CliError> {
        self.raw(key)
            .map(|v| {
                v.split(',')
                    .map(|t| t.trim().parse::<f64>().map_err(|_| usage(format!("invalid number `{t}` in `{key}`"))))
                    .collect()
            })
            .transpose()
    }

    pub fn constraint(&self, key: &str) -> Result<ConstraintSpec, CliError> {
        self.raw(key).map_or(Ok(ConstraintSpec::Unconstrained), parse_constraint)
    }

    /// Comma-separated constraint specifications.
    pub fn constraints(&self, key: &str) -> Result<Option<Vec<ConstraintSpec>>, CliError> {
        self.raw(key).map(|v| v.split(',').map(|t| parse_constraint(t.trim())).collect()).transpose()
    }

    pub fn seed(&self) -> Result<u64, CliError> {
        self.get_or("seed", 0)
    }

    /// Outer-loop settings; unset keys keep the library defaults.
    pub fn oed_config(&self) -> Result<OedConfig, CliError> {
        let d = OedConfig::default();
        let noise_level = self.get_or("noise_level", d.noise.relative_level)?;
        let noise_seed = match self.get("noise_seed")? {
            Some(s) => s,
            None => self.seed()?,
        };
        let derivative = match self.raw("derivative") {
            None | Some("analytic") => DerivativeMode::Analytic,
            Some("fd") | Some("finite-difference") => DerivativeMode::FiniteDifference,
            Some(other) => return Err(usage(format!("invalid value `{other}` for `derivative` (analytic|fd)"))),
        };
        let cfg = OedConfig {
            alpha: self.get_or("alpha", d.alpha)?,
            sigma: self.get_or("sigma", d.sigma)?,
            beta: self.get_or("beta", d.beta)?,
            constraint: self.constraint("constraint")?,
            prior_mean: self.get_or("prior_mean", d.prior_mean)?,
            inner: oedtomo::qp::IpOptions {
                tol: self.get_or("inner_tol", d.inner.tol)?,
                max_iter: self.get_or("inner_max_iter", d.inner.max_iter)?,
                ..d.inner
            },
            outer_tol: self.get_or("outer_tol", d.outer_tol)?,
            max_outer_iter: self.get_or("max_outer_iter", d.max_outer_iter)?,
            noise: NoiseSpec::new(noise_level, noise_seed).map_err(|e| usage(e.to_string()))?,
            workers: self.get_or("workers", d.workers)?,
            n_rays: self.get("rays")?,
            derivative,
            support_fraction: self.get_or("support_fraction", d.support_fraction)?,
            max_phase2_iter: self.get_or("max_phase2_iter", d.max_phase2_iter)?,
        };
        cfg.validate().map_err(|e| usage(e.to_string()))?;
        Ok(cfg)
    }
}

/// `unconstrained`, `nonnegative`, `box` (bounds 0 and 1), `box:LO:HI` or
/// `equality:C` (pixel sum fixed to `C`).
pub fn parse_constraint(text: &str) -> Result<ConstraintSpec, CliError> {
    let mut parts = text.split(':');
    let head = parts.next().unwrap_or("");
    let nums: Vec<&str> = parts.collect();
    let num = |s: &str| s.parse::<f64>().map_err(|_| usage(format!("invalid number `{s}` in constraint `{text}`")));
    match (head, nums.as_slice()) {
        ("unconstrained" | "none", []) => Ok(ConstraintSpec::Unconstrained),
        ("nonnegative" | "nonneg", []) => Ok(ConstraintSpec::NonNegative),
        ("box", []) => Ok(ConstraintSpec::Box { lo: 0.0, hi: 1.0 }),
        ("box", [lo, hi]) => {
            let (lo, hi) = (num(lo)?, num(hi)?);
            if lo < hi {
                Ok(ConstraintSpec::Box { lo, hi })
            } else {
                Err(usage(format!("box bounds must satisfy lo < hi, got `{text}`")))
            }
        }
        ("equality", [c]) => Ok(ConstraintSpec::EqualitySum(num(c)?)),
        _ => Err(usage(format!(
            "invalid constraint `{text}` (unconstrained|nonnegative|box|box:LO:HI|equality:C)"
        ))),
    }
}
