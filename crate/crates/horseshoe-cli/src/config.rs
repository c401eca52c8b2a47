//! Flat `key = value` experiment configuration.

use std::fmt::Write as _;
use std::path::PathBuf;

use horseshoe_lab::params::SolverHints;
use thiserror::Error;

#[derive(Debug, Error, PartialEq)]
pub enum ConfigError {
    #[error("line {line}: expected `key = value`")]
    Syntax { line: usize },
    #[error("line {line}: unknown key `{key}`")]
    UnknownKey { line: usize, key: String },
    #[error("bad value for `{key}`: {value}")]
    BadValue { key: String, value: String },
    #[error("cannot read {path}: {reason}")]
    Io { path: String, reason: String },
}

#[derive(Clone, Debug, PartialEq)]
pub struct ExperimentConfig {
    pub hints: SolverHints,
    /// Explicit parameter set in key-value form; overrides the hints.
    pub params_file: Option<PathBuf>,
    /// Perturbation in units of `beta_max^2`.
    pub theta: f64,
    pub theta_grid: Vec<f64>,
    pub seed: u64,
    pub samples: Option<usize>,
    pub length: Option<usize>,
    pub depth: usize,
    pub potential: String,
    pub word: Option<String>,
    pub point: Option<(f64, f64)>,
    pub threads: Option<usize>,
    pub out: PathBuf,
}

impl Default for ExperimentConfig {
    fn default() -> Self {
        ExperimentConfig {
            hints: SolverHints::default(),
            params_file: None,
            theta: 0.0,
            theta_grid: vec![1e-6, 1e-4, 1e-2],
            seed: 1,
            samples: None,
            length: None,
            depth: 8,
            potential: "zero".into(),
            word: None,
            point: None,
            threads: None,
            out: PathBuf::from("out"),
        }
    }
}

fn bad(key: &str, value: &str) -> ConfigError {
    ConfigError::BadValue { key: key.into(), value: value.into() }
}

fn num<T: std::str::FromStr>(key: &str, value: &str) -> Result<T, ConfigError> {
    value.parse().map_err(|_| bad(key, value))
}

fn finite(key: &str, value: &str) -> Result<f64, ConfigError> {
    let v: f64 = num(key, value)?;
    if v.is_finite() {
        Ok(v)
    } else {
        Err(bad(key, value))
    }
}

fn pair(key: &str, value: &str) -> Result<(f64, f64), ConfigError> {
    let (a, b) = value.split_once(',').ok_or_else(|| bad(key, value))?;
    Ok((finite(key, a.trim())?, finite(key, b.trim())?))
}

impl ExperimentConfig {
    pub fn set(&mut self, key: &str, value: &str) -> Result<(), ConfigError> {
        let v = value.trim();
        match key {
            "sigma" => self.hints.sigma = finite(key, v)?,
            "rho" => self.hints.rho = finite(key, v)?,
            "lambda" => self.hints.lambda = finite(key, v)?,
            "l0" => self.hints.l0 = finite(key, v)?,
            "k_c" => self.hints.k_c = if v == "auto" { None } else { Some(num(key, v)?) },
            "params" => self.params_file = Some(PathBuf::from(v)),
            "theta" => {
                let t = finite(key, v)?;
                if t < 0.0 {
                    return Err(bad(key, v));
                }
                self.theta = t;
            }
            "theta_grid" => {
                let grid = v
                    .split(',')
                    .map(|s| finite(key, s.trim()))
                    .collect::<Result<Vec<_>, _>>()?;
                if grid.iter().any(|t| *t <= 0.0) {
                    return Err(bad(key, v));
                }
                self.theta_grid = grid;
            }
            "seed" => self.seed = num(key, v)?,
            "samples" => self.samples = Some(num(key, v)?),
            "length" => self.length = Some(num(key, v)?),
            "depth" => {
                let d: usize = num(key, v)?;
                if !(2..=12).contains(&d) {
                    return Err(bad(key, v));
                }
                self.depth = d;
            }
            "potential" => {
                if !["zero", "row-rate", "geometric", "height"].contains(&v) {
                    return Err(bad(key, v));
                }
                self.potential = v.into();
            }
            "word" => self.word = Some(v.into()),
            "point" => self.point = Some(pair(key, v)?),
            "threads" => {
                let t: usize = num(key, v)?;
                if t == 0 {
                    return Err(bad(key, v));
                }
                self.threads = Some(t);
            }
            "out" => self.out = PathBuf::from(v),
            _ => return Err(ConfigError::UnknownKey { line: 0, key: key.into() }),
        }
        Ok(())
    }

    pub fn parse(text: &str) -> Result<ExperimentConfig, ConfigError> {
        let mut cfg = ExperimentConfig::default();
        for (i, raw) in text.lines().enumerate() {
            let line = raw.split('#').next().unwrap_or("").trim();
            if line.is_empty() {
                continue;
            }
            let (key, value) = line.split_once('=').ok_or(ConfigError::Syntax { line: i + 1 })?;
            cfg.set(key.trim(), value).map_err(|e| match e {
                ConfigError::UnknownKey { key, .. } => ConfigError::UnknownKey { line: i + 1, key },
                other => other,
            })?;
        }
        Ok(cfg)
    }

    pub fn load(path: &std::path::Path) -> Result<ExperimentConfig, ConfigError> {
        let text = std::fs::read_to_string(path).map_err(|e| ConfigError::Io {
            path: path.display().to_string(),
            reason: e.to_string(),
        })?;
        ExperimentConfig::parse(&text)
    }

    pub fn to_key_value(&self) -> String {
        let mut out = String::new();
        let h = &self.hints;
        let _ = writeln!(out, "sigma = {:?}", h.sigma);
        let _ = writeln!(out, "rho = {:?}", h.rho);
        let _ = writeln!(out, "lambda = {:?}", h.lambda);
        let _ = writeln!(out, "l0 = {:?}", h.l0);
        match h.k_c {
            Some(k) => writeln!(out, "k_c = {k}"),
            None => writeln!(out, "k_c = auto"),
        }
        .ok();
        if let Some(p) = &self.params_file {
            let _ = writeln!(out, "params = {}", p.display());
        }
        let _ = writeln!(out, "theta = {:?}", self.theta);
        let grid: Vec<String> = self.theta_grid.iter().map(|t| format!("{t:?}")).collect();
        let _ = writeln!(out, "theta_grid = {}", grid.join(","));
        let _ = writeln!(out, "seed = {}", self.seed);
        if let Some(s) = self.samples {
            let _ = writeln!(out, "samples = {s}");
        }
        if let Some(l) = self.length {
            let _ = writeln!(out, "length = {l}");
        }
        let _ = writeln!(out, "depth = {}", self.depth);
        let _ = writeln!(out, "potential = {}", self.potential);
        if let Some(w) = &self.word {
            let _ = writeln!(out, "word = {w}");
        }
        if let Some((x, y)) = self.point {
            let _ = writeln!(out, "point = {x:?},{y:?}");
        }
        if let Some(t) = self.threads {
            let _ = writeln!(out, "threads = {t}");
        }
        let _ = writeln!(out, "out = {}", self.out.display());
        out
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn round_trip() {
        let mut cfg = ExperimentConfig::default();
        cfg.set("theta", "1e-4").unwrap();
        cfg.set("samples", "12").unwrap();
        cfg.set("point", "0.1, 0.2").unwrap();
        cfg.set("k_c", "2").unwrap();
        let back = ExperimentConfig::parse(&cfg.to_key_value()).unwrap();
        assert_eq!(back, cfg);
    }

    #[test]
    fn comments_and_blank_lines() {
        let cfg = ExperimentConfig::parse("# run\n\nseed = 7 # fixed\ndepth=6\n").unwrap();
        assert_eq!(cfg.seed, 7);
        assert_eq!(cfg.depth, 6);
    }

    #[test]
    fn rejects_bad_input() {
        assert_eq!(ExperimentConfig::parse("seed 4"), Err(ConfigError::Syntax { line: 1 }));
        assert!(matches!(
            ExperimentConfig::parse("\nfoo = 1"),
            Err(ConfigError::UnknownKey { line: 2, .. })
        ));
        assert!(ExperimentConfig::parse("theta = -1").is_err());
        assert!(ExperimentConfig::parse("sigma = nan").is_err());
        assert!(ExperimentConfig::parse("depth = 1").is_err());
        assert!(ExperimentConfig::parse("potential = other").is_err());
        assert!(ExperimentConfig::parse("theta_grid = 1e-3,0").is_err());
    }
}
