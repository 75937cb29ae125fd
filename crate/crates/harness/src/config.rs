//! Line-based `key=value` experiment configuration.
//!
//! ```text
//! # comments and blank lines are ignored
//! theta0=2,1,0.5,1.5      # a, b, delta, alpha
//! x0=1
//! n_grid=500,1000,2000,4000
//! reps=200
//! substeps=16
//! master_seed=1
//! out_dir=out
//! mode=mc
//! tol_scale=1
//! curvature=expected      # or observed
//! update=log_scale        # or linear
//! ```

use std::fmt;
use std::path::{Path, PathBuf};
use std::str::FromStr;

use stable_cir::estimators::{Curvature, DriftConfig, EstimConfig, StepConfig, Update};
use stable_cir::Theta;

use crate::HarnessError;

/// Smallest observation count accepted by the estimation pipeline.
pub const MIN_N: usize = 8;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Mode {
    Simulate,
    Estimate,
    Mc,
    Diagnose,
    Check,
}

impl FromStr for Mode {
    type Err = HarnessError;
    fn from_str(s: &str) -> Result<Self, HarnessError> {
        match s {
            "simulate" => Ok(Mode::Simulate),
            "estimate" => Ok(Mode::Estimate),
            "mc" => Ok(Mode::Mc),
            "diagnose" => Ok(Mode::Diagnose),
            "check" => Ok(Mode::Check),
            _ => Err(HarnessError::Config(format!("unknown mode '{s}'"))),
        }
    }
}

impl fmt::Display for Mode {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Mode::Simulate => "simulate",
            Mode::Estimate => "estimate",
            Mode::Mc => "mc",
            Mode::Diagnose => "diagnose",
            Mode::Check => "check",
        })
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ExperimentConfig {
    pub theta0: Theta,
    pub x0: f64,
    pub n_grid: Vec<usize>,
    pub reps: usize,
    pub substeps: usize,
    pub master_seed: u64,
    pub out_dir: PathBuf,
    pub mode: Option<Mode>,
    /// Multiplies the numerical tolerances: the drift root tolerance in
    /// estimation, and in `check` the quadrature tolerances together with
    /// the quadrature-based check tolerances.
    pub tol_scale: f64,
    pub step: StepConfig,
}

impl Default for ExperimentConfig {
    fn default() -> Self {
        Self {
            theta0: Theta {
                a: 2.0,
                b: 1.0,
                delta: 0.5,
                alpha: 1.5,
            },
            x0: 1.0,
            n_grid: vec![500, 1000, 2000, 4000],
            reps: 200,
            substeps: 16,
            master_seed: 1,
            out_dir: PathBuf::from("out"),
            mode: None,
            tol_scale: 1.0,
            step: StepConfig::default(),
        }
    }
}

fn parse<T: FromStr>(key: &str, value: &str) -> Result<T, HarnessError> {
    value
        .parse()
        .map_err(|_| HarnessError::Config(format!("{key}: cannot parse '{value}'")))
}

pub fn parse_list<T: FromStr>(key: &str, value: &str) -> Result<Vec<T>, HarnessError> {
    value
        .split(',')
        .map(str::trim)
        .filter(|s| !s.is_empty())
        .map(|s| parse(key, s))
        .collect()
}

impl ExperimentConfig {
    pub fn parse_str(text: &str) -> Result<Self, HarnessError> {
        let mut cfg = Self::default();
        for (lineno, raw) in text.lines().enumerate() {
            let line = raw.split('#').next().unwrap_or("").trim();
            if line.is_empty() {
                continue;
            }
            let Some((key, value)) = line.split_once('=') else {
                return Err(HarnessError::Config(format!(
                    "line {}: expected key=value, got '{line}'",
                    lineno + 1
                )));
            };
            cfg.set(key.trim(), value.trim())?;
        }
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn from_file(path: &Path) -> Result<Self, HarnessError> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| HarnessError::Config(format!("{}: {e}", path.display())))?;
        Self::parse_str(&text)
    }

    pub fn set(&mut self, key: &str, value: &str) -> Result<(), HarnessError> {
        match key {
            "theta0" => {
                let v: Vec<f64> = parse_list(key, value)?;
                let [a, b, delta, alpha] = v[..] else {
                    return Err(HarnessError::Config(format!(
                        "theta0 needs four values a,b,delta,alpha (got {})",
                        v.len()
                    )));
                };
                self.theta0 = Theta { a, b, delta, alpha };
            }
            "x0" => self.x0 = parse(key, value)?,
            "n_grid" => self.n_grid = parse_list(key, value)?,
            "reps" => self.reps = parse(key, value)?,
            "substeps" => self.substeps = parse(key, value)?,
            "master_seed" => self.master_seed = parse(key, value)?,
            "out_dir" => self.out_dir = PathBuf::from(value),
            "mode" => self.mode = Some(value.parse()?),
            "tol_scale" => self.tol_scale = parse(key, value)?,
            "curvature" => {
                self.step.curvature = value.parse::<Curvature>().map_err(HarnessError::Config)?
            }
            "update" => self.step.update = value.parse::<Update>().map_err(HarnessError::Config)?,
            _ => return Err(HarnessError::Config(format!("unknown key '{key}'"))),
        }
        Ok(())
    }

    pub fn validate(&self) -> Result<(), HarnessError> {
        let bad = |msg: String| Err(HarnessError::Config(msg));
        // δ = 0 is a legitimate simulation input (the deterministic limit).
        let probe = Theta {
            delta: if self.theta0.delta == 0.0 {
                1.0
            } else {
                self.theta0.delta
            },
            ..self.theta0
        };
        if let Err(e) = probe.validate() {
            return bad(format!("theta0: {e}"));
        }
        if !(self.x0 > 0.0 && self.x0.is_finite()) {
            return bad(format!("x0 = {} must be positive", self.x0));
        }
        if self.n_grid.is_empty() {
            return bad("n_grid is empty".into());
        }
        if let Some(n) = self.n_grid.iter().find(|&&n| n < MIN_N) {
            return bad(format!("n_grid entry {n} is below {MIN_N}"));
        }
        if self.reps == 0 {
            return bad("reps must be >= 1".into());
        }
        if self.substeps == 0 {
            return bad("substeps must be >= 1".into());
        }
        if !(self.tol_scale > 0.0 && self.tol_scale.is_finite()) {
            return bad(format!("tol_scale = {} must be positive", self.tol_scale));
        }
        Ok(())
    }

    pub fn estim_config(&self) -> EstimConfig {
        EstimConfig {
            drift: DriftConfig {
                tol_scale: self.tol_scale,
                ..DriftConfig::default()
            },
            step: self.step,
            ..EstimConfig::default()
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn parses_all_keys() {
        let cfg = ExperimentConfig::parse_str(
            "# experiment\ntheta0 = 1,0.5,0.3,1.7\nx0=2\nn_grid=16, 32\nreps=3\nsubsteps=4\n\
             master_seed=9\nout_dir=/tmp/x\nmode=mc  # trailing\ntol_scale=0.5\n\
             curvature=observed\nupdate=linear\n",
        )
        .unwrap();
        assert_eq!(
            cfg.theta0,
            Theta {
                a: 1.0,
                b: 0.5,
                delta: 0.3,
                alpha: 1.7
            }
        );
        assert_eq!(cfg.x0, 2.0);
        assert_eq!(cfg.n_grid, vec![16, 32]);
        assert_eq!((cfg.reps, cfg.substeps, cfg.master_seed), (3, 4, 9));
        assert_eq!(cfg.out_dir, PathBuf::from("/tmp/x"));
        assert_eq!(cfg.mode, Some(Mode::Mc));
        assert_eq!(cfg.tol_scale, 0.5);
        assert_eq!(cfg.step, StepConfig::NEWTON);
    }

    #[test]
    fn rejects_bad_input() {
        for text in [
            "n_grid=",
            "n_grid=4,16",
            "reps=0",
            "theta0=1,2,3",
            "theta0=1,0,0.5,2.5",
            "bogus=1",
            "reps",
            "mode=fit",
            "x0=-1",
        ] {
            assert!(
                matches!(
                    ExperimentConfig::parse_str(text),
                    Err(HarnessError::Config(_))
                ),
                "{text}"
            );
        }
        assert!(ExperimentConfig::parse_str("theta0=1,0,0,1.5").is_ok());
    }
}
