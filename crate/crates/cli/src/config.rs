//! Experiment configuration: a TOML file merged with command-line overrides.

use std::path::{Path, PathBuf};

use clap::Args;
use serde::Deserialize;
use stcutfem::levelset::{builtin_problem, CoupledProblem, LevelSetProblem};
use stcutfem::schemes_bulk::{default_time_points, BulkConfig, DtRule, SchemeKind};
use stcutfem::schemes_coupled::CoupledConfig;
use stcutfem::stabilization::{Mode, StabilizationConfig, Variant};

/// Config error with the offending field path.
#[derive(Debug, Clone, PartialEq)]
pub struct ConfigError(pub String);

impl std::fmt::Display for ConfigError {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(&self.0)
    }
}

fn field_err<T>(path: &str, msg: impl std::fmt::Display) -> Result<T, ConfigError> {
    Err(ConfigError(format!("{path}: {msg}")))
}

#[derive(Deserialize, Clone, Copy, Debug, PartialEq, Eq, Default)]
#[serde(rename_all = "lowercase")]
pub enum SchemeChoice {
    #[default]
    Conservative,
    Nonconservative,
    Both,
}

impl SchemeChoice {
    pub fn schemes(self) -> Vec<SchemeKind> {
        match self {
            Self::Conservative => vec![SchemeKind::Conservative],
            Self::Nonconservative => vec![SchemeKind::NonConservative],
            Self::Both => vec![SchemeKind::Conservative, SchemeKind::NonConservative],
        }
    }

    fn parse(s: &str) -> Result<Self, ConfigError> {
        match s {
            "conservative" => Ok(Self::Conservative),
            "nonconservative" | "non-conservative" => Ok(Self::Nonconservative),
            "both" => Ok(Self::Both),
            other => field_err("scheme", format!("expected conservative, nonconservative or both, got '{other}'")),
        }
    }
}

#[derive(Deserialize, Clone, Debug, Default, PartialEq)]
#[serde(deny_unknown_fields)]
pub struct DtSection {
    pub ratio: Option<f64>,
    pub value: Option<f64>,
}

#[derive(Deserialize, Clone, Debug, Default, PartialEq)]
#[serde(deny_unknown_fields)]
pub struct StabSection {
    pub variant: Option<String>,
    pub mode: Option<String>,
    pub tau: Option<f64>,
    pub tau_surface: Option<f64>,
    pub tau_normal: Option<f64>,
    pub delta: Option<f64>,
    pub delta_surface: Option<f64>,
}

#[derive(Deserialize, Clone, Debug, Default, PartialEq)]
#[serde(deny_unknown_fields)]
pub struct SweepSection {
    pub taus: Option<Vec<f64>>,
    pub deltas: Option<Vec<f64>>,
    pub n_ts: Option<Vec<usize>>,
}

#[derive(Deserialize, Clone, Debug, Default, PartialEq)]
#[serde(deny_unknown_fields)]
pub struct OutputSection {
    pub csv: Option<PathBuf>,
    pub plot: Option<PathBuf>,
}

/// File form of an experiment; every field is optional.
#[derive(Deserialize, Clone, Debug, Default, PartialEq)]
#[serde(deny_unknown_fields)]
pub struct ExperimentConfig {
    pub problem: Option<String>,
    pub scheme: Option<SchemeChoice>,
    pub m: Option<usize>,
    pub k: Option<usize>,
    pub h: Option<Vec<f64>>,
    #[serde(rename = "T")]
    pub final_time: Option<f64>,
    pub n_t: Option<usize>,
    pub n_s: Option<usize>,
    pub compute_cond: Option<bool>,
    pub seed: Option<u64>,
    #[serde(default)]
    pub dt: DtSection,
    #[serde(default)]
    pub stabilization: StabSection,
    #[serde(default)]
    pub sweep: SweepSection,
    #[serde(default)]
    pub output: OutputSection,
}

impl ExperimentConfig {
    pub fn from_toml(text: &str) -> Result<Self, ConfigError> {
        toml::from_str(text).map_err(|e| ConfigError(format!("config file: {}", e.message().trim())))
    }

    pub fn load(path: &Path) -> Result<Self, ConfigError> {
        let text = std::fs::read_to_string(path).map_err(|e| ConfigError(format!("config file {}: {e}", path.display())))?;
        Self::from_toml(&text)
    }
}

fn parse_list<T: std::str::FromStr>(path: &str, s: &str) -> Result<Vec<T>, ConfigError> {
    s.split(',')
        .map(|p| p.trim().parse::<T>().or_else(|_| field_err(path, format!("cannot parse '{p}'"))))
        .collect()
}

/// Flags shared by all subcommands; they win over the config file.
#[derive(Args, Clone, Debug, Default)]
pub struct Overrides {
    /// TOML experiment file.
    #[arg(long)]
    pub config: Option<PathBuf>,
    #[arg(long)]
    pub problem: Option<String>,
    /// conservative, nonconservative or both.
    #[arg(long)]
    pub scheme: Option<String>,
    #[arg(long)]
    pub m: Option<usize>,
    #[arg(long)]
    pub k: Option<usize>,
    /// Comma-separated, strictly decreasing mesh sizes.
    #[arg(long)]
    pub h: Option<String>,
    #[arg(long = "dt-ratio")]
    pub dt_ratio: Option<f64>,
    #[arg(long)]
    pub dt: Option<f64>,
    #[arg(long = "T")]
    pub final_time: Option<f64>,
    #[arg(long = "Nt")]
    pub n_t: Option<usize>,
    #[arg(long = "Ns")]
    pub n_s: Option<usize>,
    /// face or patch.
    #[arg(long)]
    pub variant: Option<String>,
    /// macro or full.
    #[arg(long)]
    pub mode: Option<String>,
    #[arg(long)]
    pub tau: Option<f64>,
    #[arg(long = "tau-surface")]
    pub tau_surface: Option<f64>,
    #[arg(long = "tau-normal")]
    pub tau_normal: Option<f64>,
    #[arg(long)]
    pub delta: Option<f64>,
    #[arg(long = "delta-surface")]
    pub delta_surface: Option<f64>,
    #[arg(long)]
    pub taus: Option<String>,
    #[arg(long)]
    pub deltas: Option<String>,
    #[arg(long = "Nts")]
    pub n_ts: Option<String>,
    /// Estimate the 2-norm condition number of every slab matrix.
    #[arg(long)]
    pub cond: bool,
    #[arg(long)]
    pub csv: Option<PathBuf>,
    #[arg(long)]
    pub plot: Option<PathBuf>,
    #[arg(long)]
    pub seed: Option<u64>,
}

/// Fully resolved experiment.
#[derive(Clone, Debug, PartialEq)]
pub struct Experiment {
    pub problem: String,
    pub coupled: bool,
    pub scheme: SchemeChoice,
    pub m: usize,
    pub k: usize,
    pub h: Vec<f64>,
    pub dt: DtRule,
    pub final_time: f64,
    pub n_t: Option<usize>,
    pub n_s: Option<usize>,
    pub stab: StabSection,
    pub taus: Option<Vec<f64>>,
    pub deltas: Option<Vec<f64>>,
    pub n_ts: Option<Vec<usize>>,
    pub compute_cond: bool,
    pub csv: Option<PathBuf>,
    pub plot: Option<PathBuf>,
    pub seed: u64,
}

const COUPLED_NAMES: [&str; 2] = ["surfactant", "coupled_circle"];

impl Experiment {
    pub fn resolve(file: ExperimentConfig, o: &Overrides) -> Result<Self, ConfigError> {
        let problem = o.problem.clone().or(file.problem).unwrap_or_else(|| "moving_circle".into());
        let coupled = COUPLED_NAMES.contains(&problem.as_str());
        if !coupled && builtin_problem(&problem).is_err() {
            return field_err("problem", format!("unknown problem '{problem}' (moving_circle, kite, surfactant)"));
        }
        let scheme = match &o.scheme {
            Some(s) => SchemeChoice::parse(s)?,
            None => file.scheme.unwrap_or_default(),
        };
        let h = match &o.h {
            Some(s) => parse_list("h", s)?,
            None => file.h.unwrap_or_else(|| vec![0.1]),
        };
        let dt = match (o.dt.or(file.dt.value), o.dt_ratio.or(file.dt.ratio)) {
            (Some(v), _) if o.dt.is_some() || o.dt_ratio.is_none() => DtRule::Fixed(v),
            (_, Some(r)) => DtRule::RatioToH(r),
            _ => DtRule::RatioToH(if coupled { 0.25 } else { 1.0 / 3.0 }),
        };
        let mut stab = file.stabilization;
        let set = |dst: &mut Option<f64>, v: Option<f64>| {
            if v.is_some() {
                *dst = v;
            }
        };
        if o.variant.is_some() {
            stab.variant = o.variant.clone();
        }
        if o.mode.is_some() {
            stab.mode = o.mode.clone();
        }
        set(&mut stab.tau, o.tau);
        set(&mut stab.tau_surface, o.tau_surface);
        set(&mut stab.tau_normal, o.tau_normal);
        set(&mut stab.delta, o.delta);
        set(&mut stab.delta_surface, o.delta_surface);
        let exp = Self {
            problem,
            coupled,
            scheme,
            m: o.m.or(file.m).unwrap_or(1),
            k: o.k.or(file.k).unwrap_or(1),
            h,
            dt,
            final_time: o.final_time.or(file.final_time).unwrap_or(0.1),
            n_t: o.n_t.or(file.n_t),
            n_s: o.n_s.or(file.n_s),
            stab,
            taus: match &o.taus {
                Some(s) => Some(parse_list("sweep.taus", s)?),
                None => file.sweep.taus,
            },
            deltas: match &o.deltas {
                Some(s) => Some(parse_list("sweep.deltas", s)?),
                None => file.sweep.deltas,
            },
            n_ts: match &o.n_ts {
                Some(s) => Some(parse_list("sweep.n_ts", s)?),
                None => file.sweep.n_ts,
            },
            compute_cond: o.cond || file.compute_cond.unwrap_or(false),
            csv: o.csv.clone().or(file.output.csv),
            plot: o.plot.clone().or(file.output.plot),
            seed: o.seed.or(file.seed).unwrap_or(1),
        };
        exp.validate()?;
        Ok(exp)
    }

    pub fn from_overrides(o: &Overrides) -> Result<Self, ConfigError> {
        let file = match &o.config {
            Some(p) => ExperimentConfig::load(p)?,
            None => ExperimentConfig::default(),
        };
        Self::resolve(file, o)
    }

    fn validate(&self) -> Result<(), ConfigError> {
        if self.h.is_empty() {
            return field_err("h", "at least one mesh size is required");
        }
        for (i, &h) in self.h.iter().enumerate() {
            if !(h > 0.0 && h.is_finite()) {
                return field_err(&format!("h[{i}]"), format!("must be positive, got {h}"));
            }
            if i > 0 && h >= self.h[i - 1] {
                return field_err(&format!("h[{i}]"), "mesh sizes must be strictly decreasing");
            }
        }
        if !(self.final_time > 0.0) {
            return field_err("T", format!("must be positive, got {}", self.final_time));
        }
        match self.dt {
            DtRule::Fixed(v) if !(v > 0.0) => return field_err("dt.value", format!("must be positive, got {v}")),
            DtRule::RatioToH(r) if !(r > 0.0) => return field_err("dt.ratio", format!("must be positive, got {r}")),
            _ => {}
        }
        if self.m == 0 || self.m > stcutfem::fespace::MAX_ORDER {
            return field_err("m", format!("must lie in 1..={}, got {}", stcutfem::fespace::MAX_ORDER, self.m));
        }
        if self.k > stcutfem::fespace::MAX_ORDER {
            return field_err("k", format!("must be at most {}, got {}", stcutfem::fespace::MAX_ORDER, self.k));
        }
        if let Some(n) = self.n_t {
            if n < 2 {
                return field_err("n_t", "at least two Lobatto points are required");
            }
        }
        if let Some(n) = self.n_s {
            if n == 0 {
                return field_err("n_s", "must be positive");
            }
        }
        for (path, list) in [("sweep.taus", &self.taus), ("sweep.deltas", &self.deltas)] {
            if let Some(v) = list {
                if let Some(i) = v.iter().position(|x| !(*x > 0.0)) {
                    return field_err(&format!("{path}[{i}]"), "must be positive");
                }
            }
        }
        self.stab_config(SchemeKind::Conservative).map(|_| ())
    }

    pub fn mode(&self) -> Result<Mode, ConfigError> {
        match self.stab.mode.as_deref() {
            None | Some("macro") => Ok(Mode::Macro),
            Some("full") => Ok(Mode::Full),
            Some(other) => field_err("stabilization.mode", format!("expected macro or full, got '{other}'")),
        }
    }

    /// Stabilization with the problem's defaults under the configured overrides.
    pub fn stab_config(&self, scheme: SchemeKind) -> Result<StabilizationConfig, ConfigError> {
        let mode = self.mode()?;
        let mut s = if self.coupled {
            CoupledConfig::with_defaults(self.m, self.k, self.h[0], self.final_time, scheme, mode).stab
        } else {
            StabilizationConfig { mode, ..StabilizationConfig::default() }
        };
        s.variant = match self.stab.variant.as_deref() {
            None | Some("patch") => Variant::Patch,
            Some("face") => Variant::Face,
            Some(other) => return field_err("stabilization.variant", format!("expected face or patch, got '{other}'")),
        };
        let pick = |v: Option<f64>, d: f64| v.unwrap_or(d);
        s.tau = pick(self.stab.tau, s.tau);
        s.tau_surface = pick(self.stab.tau_surface, s.tau_surface);
        s.tau_normal = pick(self.stab.tau_normal, s.tau_normal);
        s.delta = pick(self.stab.delta, s.delta);
        s.delta_surface = pick(self.stab.delta_surface, s.delta_surface);
        s.validate().map_err(|e| ConfigError(format!("stabilization: {e}")))?;
        Ok(s)
    }

    pub fn bulk_problem(&self) -> LevelSetProblem {
        if self.coupled {
            CoupledProblem::surfactant().bulk
        } else {
            builtin_problem(&self.problem).expect("validated")
        }
    }

    pub fn bulk_config(&self, h: f64, scheme: SchemeKind) -> Result<BulkConfig, ConfigError> {
        let mut c = BulkConfig::new(self.m, self.k, h, self.final_time);
        c.scheme = scheme;
        c.dt = self.dt;
        c.n_t = self.n_t.unwrap_or_else(|| default_time_points(self.m, self.k));
        c.n_s = self.n_s.unwrap_or(c.n_s);
        c.stab = self.stab_config(scheme)?;
        c.compute_cond = self.compute_cond;
        Ok(c)
    }

    pub fn coupled_config(&self, h: f64, scheme: SchemeKind) -> Result<CoupledConfig, ConfigError> {
        let mut c = CoupledConfig::with_defaults(self.m, self.k, h, self.final_time, scheme, self.mode()?);
        c.dt = self.dt;
        c.n_t = self.n_t.unwrap_or(c.n_t);
        c.n_s = self.n_s.unwrap_or(c.n_s);
        c.stab = self.stab_config(scheme)?;
        c.compute_cond = self.compute_cond;
        Ok(c)
    }
}
