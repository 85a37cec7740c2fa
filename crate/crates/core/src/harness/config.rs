//! Scenario files (TOML) and their validated, linear-unit form.
//!
//! Every key has a default except the four system counts, so the smallest
//! valid file is
//!
//! ```toml
//! [system]
//! aps = 4
//! ap_antennas = 2
//! users = 4
//! user_antennas = 2
//! ```
//!
//! See `docs/config.md` for the full schema.

use std::path::Path;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::beamformer::{BaselineMode, FpOptions, SweepOrder};
use crate::channel::{Propagation, RicianFactor, SystemDims};
use crate::error::{Error, Result};
use crate::scattering::{Architecture, ArchitectureKind, ArmijoParams, GradientMode};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ScenarioFile {
    pub system: SystemSection,
    #[serde(default = "default_surfaces")]
    pub surfaces: Vec<SurfaceSection>,
    #[serde(default)]
    pub power: PowerSection,
    #[serde(default)]
    pub propagation: PropagationSection,
    #[serde(default)]
    pub monte_carlo: MonteCarloSection,
    #[serde(default)]
    pub solver: SolverSection,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SystemSection {
    pub aps: usize,
    pub ap_antennas: usize,
    pub users: usize,
    pub user_antennas: usize,
    #[serde(default = "yes")]
    pub include_direct: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SurfaceSection {
    pub elements: usize,
    /// `sc`, `gc`, or `fc`.
    pub architecture: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub group_size: Option<usize>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PowerSection {
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub p_max_dbm: Option<f64>,
    #[serde(default = "default_noise_dbm")]
    pub noise_dbm: f64,
    /// Explicit per-AP budgets; defaults to an equal split of `p_max_dbm`.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub per_ap_dbm: Option<Vec<f64>>,
}

impl Default for PowerSection {
    fn default() -> Self {
        Self {
            p_max_dbm: None,
            noise_dbm: default_noise_dbm(),
            per_ap_dbm: None,
        }
    }
}

/// A Rician factor in dB or the string `"rayleigh"`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum RicianSetting {
    Db(f64),
    Marker(String),
}

impl RicianSetting {
    fn resolve(&self, path: &str) -> Result<RicianFactor> {
        match self {
            RicianSetting::Db(db) if db.is_finite() => Ok(RicianFactor::Db(*db)),
            RicianSetting::Db(db) => Err(Error::config(path, format!("Rician factor must be finite, got {db}"))),
            RicianSetting::Marker(s) if s.eq_ignore_ascii_case("rayleigh") => Ok(RicianFactor::Rayleigh),
            RicianSetting::Marker(s) => Err(Error::config(
                path,
                format!("expected a number of dB or \"rayleigh\", got \"{s}\""),
            )),
        }
    }

    fn from_factor(f: RicianFactor) -> Self {
        match f {
            RicianFactor::Db(db) => RicianSetting::Db(db),
            RicianFactor::Rayleigh => RicianSetting::Marker("rayleigh".into()),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct PropagationSection {
    pub carrier_ghz: f64,
    pub d_surface_user_m: f64,
    pub d_ap_surface_m: f64,
    pub d_ap_user_m: f64,
    pub rician_ap_surface_db: RicianSetting,
    pub rician_surface_user_db: RicianSetting,
    pub rician_ap_user_db: RicianSetting,
}

impl Default for PropagationSection {
    fn default() -> Self {
        Self::from_propagation(&Propagation::default())
    }
}

impl PropagationSection {
    fn from_propagation(p: &Propagation) -> Self {
        Self {
            carrier_ghz: p.carrier_ghz,
            d_surface_user_m: p.d_surface_user_m,
            d_ap_surface_m: p.d_ap_surface_m,
            d_ap_user_m: p.d_ap_user_m,
            rician_ap_surface_db: RicianSetting::from_factor(p.rician_ap_surface),
            rician_surface_user_db: RicianSetting::from_factor(p.rician_surface_user),
            rician_ap_user_db: RicianSetting::from_factor(p.rician_ap_user),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct MonteCarloSection {
    pub trials: usize,
    pub master_seed: u64,
    /// Any of `mmse`, `pa`.
    pub baselines: Vec<String>,
}

impl Default for MonteCarloSection {
    fn default() -> Self {
        Self {
            trials: 50,
            master_seed: 1,
            baselines: vec!["mmse".into(), "pa".into()],
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct SolverSection {
    pub fp_tolerance: f64,
    pub fp_max_iters: usize,
    /// `gauss-seidel` or `jacobi`.
    pub fp_sweep: String,
    pub ascent_iters: usize,
    pub alternations: usize,
    pub alternation_tol: f64,
    /// `local` or `exact`.
    pub gradient: String,
    pub armijo_initial_step: f64,
    pub armijo_shrink: f64,
    pub armijo_slope: f64,
    pub armijo_max_halvings: usize,
}

impl Default for SolverSection {
    fn default() -> Self {
        let armijo = ArmijoParams::default();
        let fp = FpOptions::default();
        Self {
            fp_tolerance: fp.tolerance,
            fp_max_iters: fp.max_iters,
            fp_sweep: "gauss-seidel".into(),
            ascent_iters: 30,
            alternations: 10,
            alternation_tol: 1e-4,
            gradient: "local".into(),
            armijo_initial_step: armijo.initial_step,
            armijo_shrink: armijo.shrink,
            armijo_slope: armijo.slope,
            armijo_max_halvings: armijo.max_halvings,
        }
    }
}

fn yes() -> bool {
    true
}

fn default_noise_dbm() -> f64 {
    -80.0
}

pub const DEFAULT_P_MAX_DBM: f64 = 16.0;

fn default_surfaces() -> Vec<SurfaceSection> {
    vec![SurfaceSection {
        elements: 32,
        architecture: "sc".into(),
        group_size: None,
    }]
}

pub fn dbm_to_watts(dbm: f64) -> f64 {
    10f64.powf((dbm - 30.0) / 10.0)
}

pub fn watts_to_dbm(w: f64) -> f64 {
    10.0 * w.log10() + 30.0
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SurfaceSpec {
    pub elements: usize,
    pub architecture: Architecture,
}

#[derive(Debug, Clone, PartialEq)]
pub struct SolverSettings {
    pub fp: FpOptions,
    pub ascent_iters: usize,
    pub alternations: usize,
    pub alternation_tol: f64,
    pub gradient: GradientMode,
    pub armijo: ArmijoParams,
}

/// A validated scenario. Powers are stored both as given (dBm) and in watts.
#[derive(Debug, Clone, PartialEq)]
pub struct Scenario {
    pub dims: SystemDims,
    pub surfaces: Vec<SurfaceSpec>,
    pub include_direct: bool,
    pub p_max_dbm: f64,
    pub per_ap_dbm: Option<Vec<f64>>,
    pub noise_dbm: f64,
    pub propagation: Propagation,
    pub trials: usize,
    pub master_seed: u64,
    pub baselines: Vec<BaselineMode>,
    pub solver: SolverSettings,
    /// `P_l` in watts.
    pub p_ap_w: Vec<f64>,
    /// `N0` in watts.
    pub noise_w: f64,
}

/// Parses `sc`, `fc`, `gc` (with a separate group size) or `gc<N>`.
pub fn parse_architecture(label: &str, group_size: Option<usize>, elements: usize) -> Result<Architecture> {
    let lower = label.trim().to_ascii_lowercase();
    let arch = match lower.as_str() {
        "sc" => Architecture::single(),
        "fc" => Architecture::fully(elements),
        "gc" => Architecture::group(
            group_size
                .ok_or_else(|| Error::config("surfaces.group_size", "group-connected surfaces need a group_size"))?,
        ),
        other => match other.strip_prefix("gc").map(str::parse::<usize>) {
            Some(Ok(n)) => Architecture::group(n),
            _ => {
                return Err(Error::config(
                    "surfaces.architecture",
                    format!("unknown architecture \"{label}\" (expected sc, gc, gc<N>, fc)"),
                ))
            }
        },
    };
    if let Some(gs) = group_size {
        if gs != arch.group_size {
            return Err(Error::config(
                "surfaces.group_size",
                format!("group_size {gs} contradicts architecture \"{label}\""),
            ));
        }
    }
    arch.validate(elements)?;
    Ok(arch)
}

fn parse_baseline(s: &str) -> Result<BaselineMode> {
    match s.trim().to_ascii_lowercase().as_str() {
        "mmse" => Ok(BaselineMode::MmsePerAp),
        "pa" => Ok(BaselineMode::UniformPa),
        other => Err(Error::config(
            "monte_carlo.baselines",
            format!("unknown baseline \"{other}\" (expected mmse or pa)"),
        )),
    }
}

pub fn baseline_label(mode: BaselineMode) -> &'static str {
    match mode {
        BaselineMode::MmsePerAp => "mmse",
        BaselineMode::UniformPa => "pa",
    }
}

impl Scenario {
    pub fn from_toml_str(text: &str) -> Result<Self> {
        let file: ScenarioFile = toml::from_str(text).map_err(|e| {
            let path = e
                .span()
                .map(|s| format!("byte {}..{}", s.start, s.end))
                .unwrap_or_default();
            Error::config(path, e.message().to_string())
        })?;
        Self::from_file(&file)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text =
            std::fs::read_to_string(path).map_err(|e| Error::config(path.display().to_string(), e.to_string()))?;
        Self::from_toml_str(&text)
    }

    pub fn from_file(file: &ScenarioFile) -> Result<Self> {
        let sys = &file.system;
        let dims = SystemDims::new(sys.aps, sys.ap_antennas, sys.users, sys.user_antennas);
        for (name, v) in [
            ("system.aps", sys.aps),
            ("system.ap_antennas", sys.ap_antennas),
            ("system.users", sys.users),
            ("system.user_antennas", sys.user_antennas),
        ] {
            if v == 0 {
                return Err(Error::config(name, "must be >= 1"));
            }
        }

        let surfaces = file
            .surfaces
            .iter()
            .enumerate()
            .map(|(i, s)| {
                if s.elements == 0 {
                    return Err(Error::config(format!("surfaces[{i}].elements"), "must be >= 1"));
                }
                let architecture =
                    parse_architecture(&s.architecture, s.group_size, s.elements).map_err(|e| match e {
                        Error::Config { path, message } => {
                            Error::config(path.replacen("surfaces", &format!("surfaces[{i}]"), 1), message)
                        }
                        other => other,
                    })?;
                Ok(SurfaceSpec {
                    elements: s.elements,
                    architecture,
                })
            })
            .collect::<Result<Vec<_>>>()?;
        if surfaces.is_empty() && !sys.include_direct {
            return Err(Error::config(
                "surfaces",
                "no surfaces and no direct link leaves every channel empty",
            ));
        }

        let pw = &file.power;
        if !pw.noise_dbm.is_finite() {
            return Err(Error::config("power.noise_dbm", "must be finite"));
        }
        let (p_max_dbm, p_ap_w) = match &pw.per_ap_dbm {
            Some(list) => {
                if list.len() != dims.aps {
                    return Err(Error::config(
                        "power.per_ap_dbm",
                        format!("expected {} entries, got {}", dims.aps, list.len()),
                    ));
                }
                if list.iter().any(|p| !p.is_finite()) {
                    return Err(Error::config("power.per_ap_dbm", "entries must be finite"));
                }
                let w: Vec<f64> = list.iter().map(|&d| dbm_to_watts(d)).collect();
                let total = watts_to_dbm(w.iter().sum());
                if let Some(p) = pw.p_max_dbm {
                    if (dbm_to_watts(p) - dbm_to_watts(total)).abs() > 1e-9 * dbm_to_watts(p) {
                        return Err(Error::config(
                            "power.p_max_dbm",
                            format!("{p} dBm disagrees with the per-AP total {total:.6} dBm"),
                        ));
                    }
                }
                (pw.p_max_dbm.unwrap_or(total), w)
            }
            None => {
                let p = pw.p_max_dbm.unwrap_or(DEFAULT_P_MAX_DBM);
                if !p.is_finite() {
                    return Err(Error::config("power.p_max_dbm", "must be finite"));
                }
                let share = dbm_to_watts(p) / dims.aps as f64;
                (p, vec![share; dims.aps])
            }
        };

        let pr = &file.propagation;
        let propagation = Propagation {
            carrier_ghz: pr.carrier_ghz,
            d_surface_user_m: pr.d_surface_user_m,
            d_ap_surface_m: pr.d_ap_surface_m,
            d_ap_user_m: pr.d_ap_user_m,
            rician_ap_surface: pr.rician_ap_surface_db.resolve("propagation.rician_ap_surface_db")?,
            rician_surface_user: pr
                .rician_surface_user_db
                .resolve("propagation.rician_surface_user_db")?,
            rician_ap_user: pr.rician_ap_user_db.resolve("propagation.rician_ap_user_db")?,
        };
        for kind in [
            crate::channel::LinkKind::ApToSurface,
            crate::channel::LinkKind::SurfaceToUser,
            crate::channel::LinkKind::ApToUser,
        ] {
            propagation
                .link(kind)
                .map_err(|e| Error::config("propagation", e.to_string()))?;
        }

        let mc = &file.monte_carlo;
        if mc.trials == 0 {
            return Err(Error::config("monte_carlo.trials", "must be >= 1"));
        }
        let baselines = mc
            .baselines
            .iter()
            .map(|s| parse_baseline(s))
            .collect::<Result<Vec<_>>>()?;

        let sv = &file.solver;
        let sweep = match sv.fp_sweep.to_ascii_lowercase().as_str() {
            "gauss-seidel" => SweepOrder::GaussSeidel,
            "jacobi" => SweepOrder::Jacobi,
            other => return Err(Error::config("solver.fp_sweep", format!("unknown sweep \"{other}\""))),
        };
        let gradient = match sv.gradient.to_ascii_lowercase().as_str() {
            "local" => GradientMode::Local,
            "exact" => GradientMode::Exact,
            other => {
                return Err(Error::config(
                    "solver.gradient",
                    format!("unknown gradient mode \"{other}\""),
                ))
            }
        };
        if !(sv.fp_tolerance > 0.0) {
            return Err(Error::config("solver.fp_tolerance", "must be positive"));
        }
        if sv.fp_max_iters == 0 {
            return Err(Error::config("solver.fp_max_iters", "must be >= 1"));
        }
        if !(sv.armijo_initial_step > 0.0)
            || !(sv.armijo_shrink > 0.0 && sv.armijo_shrink < 1.0)
            || !(sv.armijo_slope > 0.0 && sv.armijo_slope < 1.0)
        {
            return Err(Error::config(
                "solver.armijo",
                "need initial_step > 0, 0 < shrink < 1, 0 < slope < 1",
            ));
        }
        let solver = SolverSettings {
            fp: FpOptions {
                tolerance: sv.fp_tolerance,
                max_iters: sv.fp_max_iters,
                sweep,
            },
            ascent_iters: sv.ascent_iters,
            alternations: sv.alternations.max(1),
            alternation_tol: sv.alternation_tol,
            gradient,
            armijo: ArmijoParams {
                initial_step: sv.armijo_initial_step,
                shrink: sv.armijo_shrink,
                slope: sv.armijo_slope,
                max_halvings: sv.armijo_max_halvings,
            },
        };

        Ok(Self {
            dims,
            surfaces,
            include_direct: sys.include_direct,
            p_max_dbm,
            per_ap_dbm: pw.per_ap_dbm.clone(),
            noise_dbm: pw.noise_dbm,
            propagation,
            trials: mc.trials,
            master_seed: mc.master_seed,
            baselines,
            solver,
            p_ap_w,
            noise_w: dbm_to_watts(pw.noise_dbm),
        })
    }

    pub fn to_file(&self) -> ScenarioFile {
        let arch_fields = |s: &SurfaceSpec| match s.architecture.kind {
            ArchitectureKind::SingleConnected => ("sc".to_string(), None),
            ArchitectureKind::GroupConnected => ("gc".to_string(), Some(s.architecture.group_size)),
            ArchitectureKind::FullyConnected => ("fc".to_string(), None),
        };
        ScenarioFile {
            system: SystemSection {
                aps: self.dims.aps,
                ap_antennas: self.dims.ap_antennas,
                users: self.dims.users,
                user_antennas: self.dims.user_antennas,
                include_direct: self.include_direct,
            },
            surfaces: self
                .surfaces
                .iter()
                .map(|s| {
                    let (architecture, group_size) = arch_fields(s);
                    SurfaceSection {
                        elements: s.elements,
                        architecture,
                        group_size,
                    }
                })
                .collect(),
            power: PowerSection {
                p_max_dbm: Some(self.p_max_dbm),
                noise_dbm: self.noise_dbm,
                per_ap_dbm: self.per_ap_dbm.clone(),
            },
            propagation: PropagationSection::from_propagation(&self.propagation),
            monte_carlo: MonteCarloSection {
                trials: self.trials,
                master_seed: self.master_seed,
                baselines: self.baselines.iter().map(|&b| baseline_label(b).to_string()).collect(),
            },
            solver: SolverSection {
                fp_tolerance: self.solver.fp.tolerance,
                fp_max_iters: self.solver.fp.max_iters,
                fp_sweep: match self.solver.fp.sweep {
                    SweepOrder::GaussSeidel => "gauss-seidel".into(),
                    SweepOrder::Jacobi => "jacobi".into(),
                },
                ascent_iters: self.solver.ascent_iters,
                alternations: self.solver.alternations,
                alternation_tol: self.solver.alternation_tol,
                gradient: match self.solver.gradient {
                    GradientMode::Local => "local".into(),
                    GradientMode::Exact => "exact".into(),
                },
                armijo_initial_step: self.solver.armijo.initial_step,
                armijo_shrink: self.solver.armijo.shrink,
                armijo_slope: self.solver.armijo.slope,
                armijo_max_halvings: self.solver.armijo.max_halvings,
            },
        }
    }

    pub fn to_toml_string(&self) -> String {
        toml::to_string(&self.to_file()).expect("scenario serializes to TOML")
    }

    /// First 16 hex digits of the SHA-256 of the canonical TOML form.
    pub fn config_hash(&self) -> String {
        let digest = Sha256::digest(self.to_toml_string().as_bytes());
        hex::encode(&digest[..8])
    }

    /// Recomputes the per-AP budgets after changing `p_max_dbm` (equal split).
    pub fn with_p_max_dbm(&self, p_max_dbm: f64) -> Self {
        let mut s = self.clone();
        s.p_max_dbm = p_max_dbm;
        s.per_ap_dbm = None;
        s.p_ap_w = vec![dbm_to_watts(p_max_dbm) / s.dims.aps as f64; s.dims.aps];
        s
    }

    pub fn surface_sizes(&self) -> Vec<usize> {
        self.surfaces.iter().map(|s| s.elements).collect()
    }

    /// Human-readable notes about inputs outside the model's comfort zone.
    pub fn warnings(&self) -> Vec<String> {
        let p = &self.propagation;
        let mut out = Vec::new();
        for (name, d) in [
            ("surface-to-user", p.d_surface_user_m),
            ("AP-to-surface", p.d_ap_surface_m),
            ("AP-to-user", p.d_ap_user_m),
        ] {
            if d < 10.0 {
                out.push(format!(
                    "{name} distance {d} m is below the 10 m range the UMi path-loss model was fitted on"
                ));
            }
        }
        out
    }
}
