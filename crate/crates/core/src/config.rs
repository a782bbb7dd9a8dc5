//! Flat `key = value` run configuration shared by every subcommand.
//!
//! A config document is line-oriented: blank lines and `#` comments are
//! skipped, every other line must read `key = value`. Unknown and duplicate
//! keys are rejected so typos cannot silently fall back to defaults. The
//! same document drives single trajectories, sweeps, and classical runs;
//! keys a subcommand does not use are still validated.
//!
//! `echo()` serializes the resolved configuration back into the same format
//! and round-trips losslessly through `parse_str`.

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};

use crate::analysis;
use crate::ensemble::{
    EnsemblePlan, TrajectoryOptions, Unravelling, DEFAULT_GUARD_MAX_DIM_TRAJ,
};
use crate::hilbert::DEFAULT_LEAKAGE_THRESHOLD;
use crate::jumps::JumpScheme;
use crate::model::DuffingParams;
use crate::{Error, Result};

/// Fixed-frame integration is the default in the near-classical regime only
/// when diffusion is the unravelling; jump records keep the frame fixed.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq)]
pub enum RecenterMode {
    #[default]
    Auto,
    On,
    Off,
}

impl RecenterMode {
    pub fn as_str(&self) -> &'static str {
        match self {
            RecenterMode::Auto => "auto",
            RecenterMode::On => "on",
            RecenterMode::Off => "off",
        }
    }
}

impl std::str::FromStr for RecenterMode {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "auto" => Ok(RecenterMode::Auto),
            "on" => Ok(RecenterMode::On),
            "off" => Ok(RecenterMode::Off),
            other => Err(Error::Config(format!(
                "recenter must be auto, on, or off, got '{other}'"
            ))),
        }
    }
}

/// Largest beta at which auto mode turns recentering on (diffusion only).
pub const RECENTER_AUTO_BETA: f64 = 0.25;

#[derive(Clone, Debug, PartialEq)]
pub struct RunConfig {
    pub betas: Vec<f64>,
    pub g: f64,
    pub gamma: f64,
    pub mu: f64,
    pub levels: usize,
    /// None resolves per beta through the step-size policy.
    pub dt: Option<f64>,
    pub t_max: f64,
    /// None resolves to 32 samples per period.
    pub sample_every: Option<usize>,
    pub seed: u64,
    pub unravelling: Unravelling,
    pub recenter: RecenterMode,
    pub recenter_every: usize,
    pub renormalize_every: usize,
    pub jump_scheme: JumpScheme,
    pub leakage_threshold: f64,
    pub trajectories: usize,
    pub out: Option<PathBuf>,
    pub records_dir: Option<PathBuf>,
    pub window: f64,
    pub threshold: f64,
    pub guard: f64,
    pub guard_max_dim_traj: u64,
}

/// Steps per period in auto mode: resolving the drive takes 2048 steps down
/// to beta = 0.25, and each further decade of classicality doubles it.
pub fn default_spp(beta: f64) -> usize {
    if beta >= RECENTER_AUTO_BETA {
        2048
    } else {
        let decades = (RECENTER_AUTO_BETA / beta).log10().ceil() as u32;
        2048usize << decades
    }
}

fn parse_key<T: std::str::FromStr>(key: &str, raw: &str) -> Result<T> {
    raw.parse()
        .map_err(|_| Error::Config(format!("bad value '{raw}' for '{key}'")))
}

impl RunConfig {
    pub fn from_file(path: &Path) -> Result<RunConfig> {
        let text = std::fs::read_to_string(path)?;
        Self::parse_str(&text)
    }

    pub fn parse_str(text: &str) -> Result<RunConfig> {
        let mut map = BTreeMap::<String, String>::new();
        for (i, raw) in text.lines().enumerate() {
            let line = raw.trim();
            if line.is_empty() || line.starts_with('#') {
                continue;
            }
            let (k, v) = line.split_once('=').ok_or_else(|| {
                Error::Config(format!("line {}: expected 'key = value'", i + 1))
            })?;
            let (k, v) = (k.trim().to_string(), v.trim().to_string());
            if map.insert(k.clone(), v).is_some() {
                return Err(Error::Config(format!("duplicate key '{k}'")));
            }
        }
        Self::from_map(map)
    }

    fn from_map(mut map: BTreeMap<String, String>) -> Result<RunConfig> {
        let mut take = |key: &str| map.remove(key);

        let betas = match (take("beta"), take("betas")) {
            (Some(_), Some(_)) => {
                return Err(Error::Config("give either 'beta' or 'betas', not both".into()))
            }
            (Some(one), None) => vec![parse_key::<f64>("beta", &one)?],
            (None, Some(list)) => list
                .split(',')
                .map(|s| parse_key::<f64>("betas", s.trim()))
                .collect::<Result<Vec<f64>>>()?,
            (None, None) => return Err(Error::Config("missing required key 'beta'".into())),
        };

        let seed = take("seed")
            .ok_or_else(|| Error::Config("missing required key 'seed'".into()))
            .and_then(|v| parse_key("seed", &v))?;
        let levels = take("levels")
            .ok_or_else(|| Error::Config("missing required key 'levels'".into()))
            .and_then(|v| parse_key("levels", &v))?;
        let t_max = take("t_max")
            .ok_or_else(|| Error::Config("missing required key 't_max'".into()))
            .and_then(|v| parse_key("t_max", &v))?;

        let dt = match take("dt").as_deref() {
            None | Some("auto") => None,
            Some(v) => Some(parse_key::<f64>("dt", v)?),
        };
        let sample_every = match take("sample_every").as_deref() {
            None | Some("auto") => None,
            Some(v) => Some(parse_key::<usize>("sample_every", v)?),
        };

        let defaults = DuffingParams::default();
        let cfg = RunConfig {
            betas,
            g: take("g").map_or(Ok(defaults.g), |v| parse_key("g", &v))?,
            gamma: take("gamma").map_or(Ok(defaults.gamma), |v| parse_key("gamma", &v))?,
            mu: take("mu").map_or(Ok(defaults.mu), |v| parse_key("mu", &v))?,
            levels,
            dt,
            t_max,
            sample_every,
            seed,
            unravelling: take("unravelling")
                .map_or(Ok(Unravelling::Qsd), |v| parse_key("unravelling", &v))?,
            recenter: take("recenter").map_or(Ok(RecenterMode::Auto), |v| v.parse())?,
            recenter_every: take("recenter_every")
                .map_or(Ok(1), |v| parse_key("recenter_every", &v))?,
            renormalize_every: take("renormalize_every")
                .map_or(Ok(1), |v| parse_key("renormalize_every", &v))?,
            jump_scheme: take("jump_scheme")
                .map_or(Ok(JumpScheme::Bernoulli), |v| parse_key("jump_scheme", &v))?,
            leakage_threshold: take("leakage_threshold")
                .map_or(Ok(DEFAULT_LEAKAGE_THRESHOLD), |v| {
                    parse_key("leakage_threshold", &v)
                })?,
            trajectories: take("trajectories")
                .map_or(Ok(1), |v| parse_key("trajectories", &v))?,
            out: take("out").map(PathBuf::from),
            records_dir: take("records_dir").map(PathBuf::from),
            window: take("window")
                .map_or(Ok(analysis::ENTRAINMENT_WINDOW_PERIODS), |v| {
                    parse_key("window", &v)
                })?,
            threshold: take("threshold")
                .map_or(Ok(analysis::default_threshold()), |v| parse_key("threshold", &v))?,
            guard: take("guard")
                .map_or(Ok(analysis::ENTRAINMENT_GUARD_PERIODS), |v| parse_key("guard", &v))?,
            guard_max_dim_traj: take("guard_max_dim_traj")
                .map_or(Ok(DEFAULT_GUARD_MAX_DIM_TRAJ), |v| {
                    parse_key("guard_max_dim_traj", &v)
                })?,
        };

        if !map.is_empty() {
            let unknown: Vec<&str> = map.keys().map(String::as_str).collect();
            return Err(Error::Config(format!(
                "unknown key{} {}",
                if unknown.len() == 1 { "" } else { "s" },
                unknown.join(", ")
            )));
        }
        cfg.validate()?;
        Ok(cfg)
    }

    fn validate(&self) -> Result<()> {
        if self.betas.is_empty() {
            return Err(Error::Config("the beta list is empty".into()));
        }
        if self.t_max < 0.0 {
            return Err(Error::Config(format!("t_max {} is negative", self.t_max)));
        }
        if let Some(dt) = self.dt {
            let spp = 1.0 / dt;
            if !(dt > 0.0) || (spp - spp.round()).abs() > 1e-9 * spp.abs().max(1.0) {
                return Err(Error::Config(format!(
                    "dt {dt} does not divide one drive period"
                )));
            }
        }
        if self.recenter == RecenterMode::On && self.unravelling == Unravelling::Jumps {
            return Err(Error::Config(
                "recentering is a diffusion-only feature; jump records keep a fixed frame".into(),
            ));
        }
        if !(self.window > 0.0) || !(self.threshold > 0.0) || self.guard < 0.0 {
            return Err(Error::Config(
                "window and threshold must be positive, guard nonnegative".into(),
            ));
        }
        if self.trajectories == 0 {
            return Err(Error::Config("trajectories must be at least 1".into()));
        }
        for (i, _) in self.betas.iter().enumerate() {
            // full per-beta resolution, including stride divisibility
            let plan = self.plan_for(i)?;
            plan.params.validate()?;
            plan.opts.validate()?;
        }
        Ok(())
    }

    pub fn spp(&self, beta: f64) -> usize {
        match self.dt {
            Some(dt) => (1.0 / dt).round() as usize,
            None => default_spp(beta),
        }
    }

    /// Auto recentering turns on only for diffusion runs at beta at or below
    /// the near-classical boundary.
    pub fn recenter_resolved(&self, beta: f64) -> bool {
        match self.recenter {
            RecenterMode::On => true,
            RecenterMode::Off => false,
            RecenterMode::Auto => {
                beta <= RECENTER_AUTO_BETA && self.unravelling == Unravelling::Qsd
            }
        }
    }

    pub fn options_for(&self, beta: f64) -> TrajectoryOptions {
        let spp = self.spp(beta);
        // aim for 32 samples per period, snapped down to a divisor of spp
        let auto_stride = || {
            let mut k = (spp / 32).max(1);
            while spp % k != 0 {
                k -= 1;
            }
            k
        };
        TrajectoryOptions {
            unravelling: self.unravelling,
            jump_scheme: self.jump_scheme,
            spp,
            periods: self.t_max,
            sample_every: self.sample_every.unwrap_or_else(auto_stride),
            recenter: self.recenter_resolved(beta),
            recenter_every: self.recenter_every,
            renormalize_every: self.renormalize_every,
            leakage_threshold: self.leakage_threshold,
        }
    }

    pub fn params_for(&self, beta: f64) -> DuffingParams {
        DuffingParams {
            beta,
            g: self.g,
            gamma: self.gamma,
            mu: self.mu,
            ..DuffingParams::default()
        }
    }

    pub fn plan_for(&self, beta_index: usize) -> Result<EnsemblePlan> {
        let beta = *self.betas.get(beta_index).ok_or_else(|| {
            Error::Config(format!("beta index {beta_index} outside the sweep"))
        })?;
        Ok(EnsemblePlan {
            params: self.params_for(beta),
            n_levels: self.levels,
            trajectories: self.trajectories,
            master_seed: self.seed,
            beta_index: beta_index as u64,
            opts: self.options_for(beta),
            guard_max_dim_traj: self.guard_max_dim_traj,
        })
    }

    /// Canonical serialized form: every key on its own line, sorted, with
    /// auto values kept symbolic so the document round-trips.
    pub fn echo(&self) -> String {
        let mut doc = String::new();
        for (k, v) in self.echo_pairs() {
            doc.push_str(&format!("{k} = {v}\n"));
        }
        doc
    }

    pub fn echo_pairs(&self) -> Vec<(String, String)> {
        let mut lines: Vec<(String, String)> = vec![
            (
                if self.betas.len() == 1 { "beta" } else { "betas" }.into(),
                self.betas
                    .iter()
                    .map(|b| b.to_string())
                    .collect::<Vec<_>>()
                    .join(","),
            ),
            ("g".into(), self.g.to_string()),
            ("gamma".into(), self.gamma.to_string()),
            ("mu".into(), self.mu.to_string()),
            ("levels".into(), self.levels.to_string()),
            (
                "dt".into(),
                self.dt.map_or("auto".into(), |v| v.to_string()),
            ),
            ("t_max".into(), self.t_max.to_string()),
            (
                "sample_every".into(),
                self.sample_every.map_or("auto".into(), |v| v.to_string()),
            ),
            ("seed".into(), self.seed.to_string()),
            ("unravelling".into(), self.unravelling.as_str().into()),
            ("recenter".into(), self.recenter.as_str().into()),
            ("recenter_every".into(), self.recenter_every.to_string()),
            ("renormalize_every".into(), self.renormalize_every.to_string()),
            ("jump_scheme".into(), self.jump_scheme.as_str().into()),
            ("leakage_threshold".into(), self.leakage_threshold.to_string()),
            ("trajectories".into(), self.trajectories.to_string()),
            ("window".into(), self.window.to_string()),
            ("threshold".into(), self.threshold.to_string()),
            ("guard".into(), self.guard.to_string()),
            (
                "guard_max_dim_traj".into(),
                self.guard_max_dim_traj.to_string(),
            ),
        ];
        if let Some(p) = &self.out {
            lines.push(("out".into(), p.display().to_string()));
        }
        if let Some(p) = &self.records_dir {
            lines.push(("records_dir".into(), p.display().to_string()));
        }
        lines.sort();
        lines
    }
}
