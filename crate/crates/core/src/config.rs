//! Run configuration: a flat TOML file with per-scenario parameter tables,
//! overridable from the command line.

use std::path::PathBuf;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::filter::Policy;
use crate::sim::{exoskeleton, lane_keeping, scenario_names, ExoParams, LaneParams, Scenario};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct RunConfig {
    pub scenario: String,
    pub policy: Policy,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub um: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub tp: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub step: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub duration: Option<f64>,
    pub alpha: f64,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub out: Option<PathBuf>,
    /// Input bounds visited by `sweep`; empty selects the scenario default.
    pub sweep_grid: Vec<f64>,
    /// Search range for the minimum safe input bound.
    pub min_safe_range: [f64; 2],
    pub exo: ExoParams,
    pub lane: LaneParams,
}

impl Default for RunConfig {
    fn default() -> Self {
        Self {
            scenario: "exo".into(),
            policy: Policy::LPrev,
            um: None,
            tp: None,
            step: None,
            duration: None,
            alpha: 1.0,
            out: None,
            sweep_grid: Vec::new(),
            min_safe_range: [0.01, 1.0],
            exo: ExoParams::default(),
            lane: LaneParams::default(),
        }
    }
}

/// `1.119, 1.2, 1.3, …, 2.0`.
pub fn exo_sweep_grid() -> Vec<f64> {
    std::iter::once(1.119)
        .chain((12..=20).map(|i| i as f64 / 10.0))
        .collect()
}

pub fn lane_sweep_grid() -> Vec<f64> {
    vec![0.09, 0.14, 0.18]
}

const COMMENTS: &[(&str, &str, &str)] = &[
    ("", "scenario", "exo | lane"),
    ("", "policy", "none | standard | lprev | prev"),
    ("", "um", "input bound override"),
    ("", "tp", "preview horizon override (s), must exceed the input delay"),
    ("", "alpha", "gain of the linear class-K function alpha(h) = alpha * h"),
    ("", "sweep_grid", "input bounds for `sweep`; [] uses the scenario default"),
    ("", "min_safe_range", "lane keeping: bracket for the minimum safe input bound search"),
    ("exo", "e_dot_max", "velocity bound for the acceleration-bound filter"),
    ("exo", "tau_max", "interaction torque bound for the acceleration-bound filter"),
    ("exo", "freq", "interaction torque frequency (Hz)"),
    ("lane", "v0", "default, chosen for this repo: longitudinal speed (m/s)"),
    ("lane", "d_m", "default, chosen for this repo: road yaw-rate amplitude (rad/s)"),
    ("lane", "period", "default, chosen for this repo: road yaw-rate period (s)"),
    ("lane", "nu_max", "default, chosen for this repo: lateral velocity bound in F0_max"),
    ("lane", "r_max", "default, chosen for this repo: yaw-rate bound in F0_max"),
    ("lane", "gain", "default, chosen for this repo: LQR gain, scripts/lane_lqr_gain.py"),
    ("lane", "z0", "initial predicted state [y, nu, psi, r]"),
];

impl RunConfig {
    pub fn parse(text: &str) -> Result<Self> {
        toml::from_str(text).map_err(|e| Error::Config(e.to_string()))
    }

    pub fn load(path: &std::path::Path) -> Result<Self> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| Error::Config(format!("{}: {e}", path.display())))?;
        Self::parse(&text)
    }

    /// TOML text with a comment above each documented key.
    pub fn dump(&self) -> Result<String> {
        let body = toml::to_string(self).map_err(|e| Error::Config(e.to_string()))?;
        let mut section = String::new();
        let mut out = String::from("# lprev run configuration; command-line flags take precedence\n");
        for line in body.lines() {
            let trimmed = line.trim();
            if let Some(name) = trimmed.strip_prefix('[').and_then(|s| s.strip_suffix(']')) {
                section = name.to_string();
                out.push('\n');
            } else if let Some((key, _)) = trimmed.split_once(" = ") {
                if let Some((_, _, c)) = COMMENTS.iter().find(|(s, k, _)| *s == section && *k == key) {
                    out.push_str("# ");
                    out.push_str(c);
                    out.push('\n');
                }
            }
            out.push_str(line);
            out.push('\n');
        }
        Ok(out)
    }

    pub fn validate(&self) -> Result<()> {
        if !scenario_names().contains(&self.scenario.as_str()) {
            return Err(Error::Config(format!(
                "unknown scenario '{}' ({})",
                self.scenario,
                scenario_names().join(" | ")
            )));
        }
        if !(self.alpha > 0.0 && self.alpha.is_finite()) {
            return Err(Error::Config(format!("alpha {} must be > 0", self.alpha)));
        }
        if let Some(um) = self.um {
            if !(um > 0.0 && um.is_finite()) {
                return Err(Error::Config(format!("um {um} must be > 0")));
            }
        }
        if let Some(tp) = self.tp {
            let t_i = match self.scenario.as_str() {
                "lane" => self.lane.t_i,
                _ => self.exo.t_i,
            };
            if !(tp > t_i) {
                return Err(Error::Config(format!("tp {tp} must exceed the input delay {t_i}")));
            }
        }
        Ok(())
    }

    /// The scenario with every override applied.
    pub fn build_scenario(&self) -> Result<Scenario> {
        self.validate()?;
        let scn = match self.scenario.as_str() {
            "lane" => {
                let mut p = self.lane.clone();
                self.apply(&mut p.u_m, &mut p.t_p, &mut p.step, &mut p.duration);
                lane_keeping(&p)?
            }
            _ => {
                let mut p = self.exo.clone();
                self.apply(&mut p.u_m, &mut p.t_p, &mut p.step, &mut p.duration);
                exoskeleton(&p)?
            }
        };
        Ok(scn)
    }

    fn apply(&self, um: &mut f64, tp: &mut f64, step: &mut f64, duration: &mut f64) {
        *um = self.um.unwrap_or(*um);
        *tp = self.tp.unwrap_or(*tp);
        *step = self.step.unwrap_or(*step);
        *duration = self.duration.unwrap_or(*duration);
    }

    pub fn grid(&self) -> Vec<f64> {
        match (self.sweep_grid.is_empty(), self.scenario.as_str()) {
            (false, _) => self.sweep_grid.clone(),
            (true, "lane") => lane_sweep_grid(),
            (true, _) => exo_sweep_grid(),
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn default_dump_round_trips() {
        let cfg = RunConfig::default();
        let text = cfg.dump().unwrap();
        assert!(text.contains("# exo | lane"));
        assert_eq!(RunConfig::parse(&text).unwrap(), cfg);
    }

    #[test]
    fn overrides_round_trip() {
        let cfg = RunConfig {
            scenario: "lane".into(),
            policy: Policy::Prev,
            um: Some(0.123456789012345),
            tp: Some(0.05),
            step: Some(0.0005),
            duration: Some(3.0),
            alpha: 2.5,
            out: Some("runs/a b".into()),
            sweep_grid: vec![0.1, 0.2],
            ..RunConfig::default()
        };
        assert_eq!(RunConfig::parse(&cfg.dump().unwrap()).unwrap(), cfg);
    }

    #[test]
    fn rejects_unknown_keys_and_names() {
        assert!(RunConfig::parse("bogus = 1").is_err());
        assert!(RunConfig::parse("policy = \"cbf\"").is_err());
        let cfg = RunConfig { scenario: "car".into(), ..RunConfig::default() };
        assert!(cfg.validate().is_err());
    }

    #[test]
    fn preview_not_exceeding_delay_is_rejected() {
        let cfg = RunConfig { tp: Some(0.005), ..RunConfig::default() };
        assert!(matches!(cfg.build_scenario(), Err(Error::Config(_))));
    }

    #[test]
    fn exo_grid_has_ten_points() {
        let g = exo_sweep_grid();
        assert_eq!(g.len(), 10);
        assert_eq!((g[0], g[9]), (1.119, 2.0));
    }
}
