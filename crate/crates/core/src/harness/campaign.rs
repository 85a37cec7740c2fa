//! Sweeps over scenarios and CSV output. Column layouts are described in
//! `docs/csv_schemas.md`.

use std::fs::File;
use std::io::{BufWriter, Write};
use std::path::{Path, PathBuf};
use std::str::FromStr;

use crate::beamformer::BaselineMode;
use crate::error::{Error, Result};
use crate::metrics::{cdf_points, mean_std};

use super::config::{baseline_label, parse_architecture, Scenario, SurfaceSpec};
use super::exec::map_trials;
use super::trial::{run_trial, TrialResult};

/// One `--sweep` axis.
#[derive(Debug, Clone, PartialEq)]
pub enum SweepAxis {
    /// Total power budget in dBm, split equally over APs.
    PmaxDbm(Vec<f64>),
    Users(Vec<usize>),
    /// Architecture label applied to every surface.
    Arch(Vec<String>),
    /// Number of copies of the first configured surface.
    Surfaces(Vec<usize>),
}

fn parse_numbers(key: &str, values: &str) -> Result<Vec<f64>> {
    let bad = |why: &str| Error::config(format!("--sweep {key}"), format!("{why} in \"{values}\""));
    let num = |s: &str| s.trim().parse::<f64>().map_err(|_| bad("not a number"));
    let parts: Vec<&str> = values.split(':').collect();
    match parts.as_slice() {
        [start, step, stop] => {
            let (a, h, b) = (num(start)?, num(step)?, num(stop)?);
            if !(h > 0.0) || b < a {
                return Err(bad("need step > 0 and start <= stop"));
            }
            let n = ((b - a) / h + 1e-9).floor() as usize;
            Ok((0..=n).map(|i| a + i as f64 * h).collect())
        }
        [_] => values.split(',').map(num).collect(),
        _ => Err(bad("expected start:step:stop or a comma list")),
    }
}

fn parse_counts(key: &str, values: &str) -> Result<Vec<usize>> {
    values
        .split(',')
        .map(|s| {
            s.trim()
                .parse::<usize>()
                .map_err(|_| Error::config(format!("--sweep {key}"), format!("\"{s}\" is not a count")))
        })
        .collect()
}

impl FromStr for SweepAxis {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        let (key, values) = s
            .split_once('=')
            .ok_or_else(|| Error::config("--sweep", format!("expected key=values, got \"{s}\"")))?;
        let key = key.trim().to_ascii_lowercase();
        let axis = match key.as_str() {
            "pmax" => SweepAxis::PmaxDbm(parse_numbers(&key, values)?),
            "users" => SweepAxis::Users(parse_counts(&key, values)?),
            "arch" => SweepAxis::Arch(values.split(',').map(|v| v.trim().to_ascii_lowercase()).collect()),
            "surfaces" => SweepAxis::Surfaces(parse_counts(&key, values)?),
            other => {
                return Err(Error::config(
                    "--sweep",
                    format!("unknown axis \"{other}\" (expected pmax, users, arch, surfaces)"),
                ))
            }
        };
        if axis.len() == 0 {
            return Err(Error::config(format!("--sweep {key}"), "no values"));
        }
        Ok(axis)
    }
}

impl SweepAxis {
    fn len(&self) -> usize {
        match self {
            SweepAxis::PmaxDbm(v) => v.len(),
            SweepAxis::Users(v) => v.len(),
            SweepAxis::Arch(v) => v.len(),
            SweepAxis::Surfaces(v) => v.len(),
        }
    }

    fn apply(&self, i: usize, s: &Scenario) -> Result<(String, Scenario)> {
        let mut out = s.clone();
        let label = match self {
            SweepAxis::PmaxDbm(v) => {
                out = s.with_p_max_dbm(v[i]);
                format!("pmax={}", v[i])
            }
            SweepAxis::Users(v) => {
                if v[i] == 0 {
                    return Err(Error::config("--sweep users", "user count must be >= 1"));
                }
                out.dims.users = v[i];
                format!("users={}", v[i])
            }
            SweepAxis::Arch(v) => {
                for surf in &mut out.surfaces {
                    surf.architecture = parse_architecture(&v[i], None, surf.elements)?;
                }
                format!("arch={}", v[i])
            }
            SweepAxis::Surfaces(v) => {
                let first: SurfaceSpec = *s
                    .surfaces
                    .first()
                    .ok_or_else(|| Error::config("--sweep surfaces", "the config has no surface to replicate"))?;
                if v[i] == 0 && !s.include_direct {
                    return Err(Error::config("--sweep surfaces", "zero surfaces needs include_direct"));
                }
                out.surfaces = vec![first; v[i]];
                format!("surfaces={}", v[i])
            }
        };
        Ok((label, out))
    }
}

#[derive(Debug, Clone)]
pub struct SweepPoint {
    /// `axis=value` pairs joined by `;`, or `base` without sweeps.
    pub label: String,
    pub scenario: Scenario,
}

/// Cartesian product of all axes, first axis varying slowest.
pub fn expand(base: &Scenario, axes: &[SweepAxis]) -> Result<Vec<SweepPoint>> {
    let mut points = vec![(Vec::<String>::new(), base.clone())];
    for axis in axes {
        let mut next = Vec::with_capacity(points.len() * axis.len());
        for (labels, s) in &points {
            for i in 0..axis.len() {
                let (label, scenario) = axis.apply(i, s)?;
                let mut l = labels.clone();
                l.push(label);
                next.push((l, scenario));
            }
        }
        points = next;
    }
    Ok(points
        .into_iter()
        .map(|(labels, scenario)| SweepPoint {
            label: if labels.is_empty() {
                "base".into()
            } else {
                labels.join(";")
            },
            scenario,
        })
        .collect())
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Method {
    Proposed,
    Baseline(BaselineMode),
}

impl Method {
    pub fn label(self) -> &'static str {
        match self {
            Method::Proposed => "proposed",
            Method::Baseline(b) => baseline_label(b),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct MethodAggregate {
    pub method: Method,
    pub trials: usize,
    pub mean_sum_rate: f64,
    pub std_sum_rate: f64,
    pub stderr_sum_rate: f64,
}

#[derive(Debug, Clone)]
pub struct PointSummary {
    pub label: String,
    pub config_hash: String,
    pub seed: u64,
    pub aggregates: Vec<MethodAggregate>,
    pub warnings: Vec<String>,
}

#[derive(Debug, Clone, Default)]
pub struct CampaignOptions {
    pub out_dir: PathBuf,
    pub timing: bool,
    pub workers: Option<usize>,
}

/// Per-method sum-rates of a batch of trials, in trial order.
pub fn method_rates(results: &[TrialResult], method: Method) -> Vec<f64> {
    results
        .iter()
        .filter_map(|r| match method {
            Method::Proposed => Some(r.proposed.sum_rate),
            Method::Baseline(b) => r.baselines.iter().find(|(m, _)| *m == b).map(|(_, rep)| rep.sum_rate),
        })
        .collect()
}

fn methods_of(s: &Scenario) -> Vec<Method> {
    std::iter::once(Method::Proposed)
        .chain(s.baselines.iter().map(|&b| Method::Baseline(b)))
        .collect()
}

pub fn aggregate(results: &[TrialResult], scenario: &Scenario) -> Vec<MethodAggregate> {
    methods_of(scenario)
        .into_iter()
        .map(|method| {
            let rates = method_rates(results, method);
            let (mean, std) = mean_std(&rates);
            MethodAggregate {
                method,
                trials: rates.len(),
                mean_sum_rate: mean,
                std_sum_rate: std,
                stderr_sum_rate: std / (rates.len() as f64).sqrt(),
            }
        })
        .collect()
}

/// Runs every trial of one scenario.
pub fn run_point(scenario: &Scenario, workers: Option<usize>) -> Result<Vec<TrialResult>> {
    map_trials(scenario.trials, workers, |t| run_trial(scenario, t))
}

struct CsvFile {
    out: BufWriter<File>,
    path: PathBuf,
}

impl CsvFile {
    fn create(dir: &Path, name: &str, header: &[&str]) -> Result<Self> {
        let path = dir.join(name);
        let file = File::create(&path).map_err(|e| Error::Context {
            context: format!("creating {}", path.display()),
            source: Box::new(e.into()),
        })?;
        let mut f = Self {
            out: BufWriter::new(file),
            path,
        };
        f.row(header.iter().map(|s| s.to_string()))?;
        Ok(f)
    }

    fn row<I: IntoIterator<Item = String>>(&mut self, fields: I) -> Result<()> {
        let line = fields.into_iter().collect::<Vec<_>>().join(",");
        writeln!(self.out, "{line}").map_err(|e| self.io_error(e))
    }

    fn finish(mut self) -> Result<()> {
        self.out.flush().map_err(|e| self.io_error(e))
    }

    fn io_error(&self, e: std::io::Error) -> Error {
        Error::Context {
            context: format!("writing {}", self.path.display()),
            source: Box::new(e.into()),
        }
    }
}

fn join_f64(v: &[f64]) -> String {
    v.iter().map(f64::to_string).collect::<Vec<_>>().join(";")
}

pub const TRIALS_HEADER: &[&str] = &[
    "config_hash",
    "seed",
    "point",
    "trial",
    "method",
    "sum_rate",
    "user_rates",
    "ap_powers_w",
    "fp_iterations",
    "alternations",
    "ascent_stalls",
    "max_constraint_violation",
];
pub const AGGREGATE_HEADER: &[&str] = &[
    "config_hash",
    "seed",
    "point",
    "method",
    "trials",
    "mean_sum_rate",
    "std_sum_rate",
    "stderr_sum_rate",
];
pub const CONVERGENCE_HEADER: &[&str] = &[
    "config_hash",
    "seed",
    "point",
    "trial",
    "stage",
    "iteration",
    "sum_rate",
];
pub const CDF_HEADER: &[&str] = &[
    "config_hash",
    "seed",
    "point",
    "method",
    "metric",
    "value",
    "probability",
];
pub const COUPLING_HEADER: &[&str] = &["config_hash", "seed", "point", "trial", "user", "b", "c", "ratio"];
pub const TIMING_HEADER: &[&str] = &[
    "config_hash",
    "seed",
    "point",
    "trial",
    "aps",
    "ap_antennas",
    "users",
    "user_antennas",
    "fp_iterations",
    "bisection_iterations",
    "complexity_proxy",
    "ascent_ms",
    "fp_ms",
    "baseline_ms",
];

/// Operation-count proxy `i_FP (i_BS K L N_a^2 (N_a + M) + K^2 L^2 N_a^2 M)`
/// with `i_BS` the mean bisection count per AP per FP iteration.
pub fn complexity_proxy(r: &TrialResult, s: &Scenario) -> f64 {
    let d = s.dims;
    let (k, l, na, m) = (
        d.users as f64,
        d.aps as f64,
        d.ap_antennas as f64,
        d.user_antennas as f64,
    );
    let i_fp = r.fp_iterations as f64;
    if i_fp == 0.0 {
        return 0.0;
    }
    let i_bs = r.bisection_iterations as f64 / (i_fp * l);
    i_fp * (i_bs * k * l * na * na * (na + m) + k * k * l * l * na * na * m)
}

struct Writers {
    trials: CsvFile,
    aggregate: CsvFile,
    convergence: CsvFile,
    cdf: CsvFile,
    coupling: CsvFile,
    timing: Option<CsvFile>,
}

impl Writers {
    fn open(dir: &Path, timing: bool) -> Result<Self> {
        std::fs::create_dir_all(dir).map_err(|e| Error::Context {
            context: format!("creating output directory {}", dir.display()),
            source: Box::new(e.into()),
        })?;
        Ok(Self {
            trials: CsvFile::create(dir, "trials.csv", TRIALS_HEADER)?,
            aggregate: CsvFile::create(dir, "aggregate.csv", AGGREGATE_HEADER)?,
            convergence: CsvFile::create(dir, "convergence.csv", CONVERGENCE_HEADER)?,
            cdf: CsvFile::create(dir, "cdf.csv", CDF_HEADER)?,
            coupling: CsvFile::create(dir, "coupling.csv", COUPLING_HEADER)?,
            timing: if timing {
                Some(CsvFile::create(dir, "timing.csv", TIMING_HEADER)?)
            } else {
                None
            },
        })
    }

    fn finish(self) -> Result<()> {
        self.trials.finish()?;
        self.aggregate.finish()?;
        self.convergence.finish()?;
        self.cdf.finish()?;
        self.coupling.finish()?;
        if let Some(t) = self.timing {
            t.finish()?;
        }
        Ok(())
    }

    fn write_point(&mut self, point: &SweepPoint, results: &[TrialResult], summary: &PointSummary) -> Result<()> {
        let s = &point.scenario;
        let head = |trial: Option<usize>| -> Vec<String> {
            let mut v = vec![
                summary.config_hash.clone(),
                s.master_seed.to_string(),
                point.label.clone(),
            ];
            if let Some(t) = trial {
                v.push(t.to_string());
            }
            v
        };

        for r in results {
            let violation = r.worst_constraint_violation().to_string();
            let mut row = head(Some(r.trial));
            row.extend([
                Method::Proposed.label().to_string(),
                r.proposed.sum_rate.to_string(),
                join_f64(&r.proposed.per_user_rate),
                join_f64(&r.proposed.per_ap_power),
                r.fp_iterations.to_string(),
                r.alternations.to_string(),
                r.ascent_stalls.to_string(),
                violation.clone(),
            ]);
            self.trials.row(row)?;
            for (mode, rep) in &r.baselines {
                let mut row = head(Some(r.trial));
                row.extend([
                    baseline_label(*mode).to_string(),
                    rep.sum_rate.to_string(),
                    join_f64(&rep.per_user_rate),
                    join_f64(&rep.per_ap_power),
                    String::new(),
                    String::new(),
                    String::new(),
                    violation.clone(),
                ]);
                self.trials.row(row)?;
            }

            for (stage, trace) in [("alternating", &r.trace), ("fp", &r.fp_trace)] {
                for (i, rate) in trace.iter().enumerate() {
                    let mut row = head(Some(r.trial));
                    row.extend([stage.to_string(), i.to_string(), rate.to_string()]);
                    self.convergence.row(row)?;
                }
            }

            for c in &r.coupling {
                let mut row = head(Some(r.trial));
                row.extend([
                    c.user.to_string(),
                    c.b.to_string(),
                    c.c.to_string(),
                    c.ratio.to_string(),
                ]);
                self.coupling.row(row)?;
            }

            if let Some(t) = &mut self.timing {
                let d = s.dims;
                let ms = |x: std::time::Duration| (x.as_secs_f64() * 1e3).to_string();
                let mut row = head(Some(r.trial));
                row.extend([
                    d.aps.to_string(),
                    d.ap_antennas.to_string(),
                    d.users.to_string(),
                    d.user_antennas.to_string(),
                    r.fp_iterations.to_string(),
                    r.bisection_iterations.to_string(),
                    complexity_proxy(r, s).to_string(),
                    ms(r.timings.ascent),
                    ms(r.timings.fp),
                    ms(r.timings.baselines),
                ]);
                t.row(row)?;
            }
        }

        for a in &summary.aggregates {
            let mut row = head(None);
            row.extend([
                a.method.label().to_string(),
                a.trials.to_string(),
                a.mean_sum_rate.to_string(),
                a.std_sum_rate.to_string(),
                a.stderr_sum_rate.to_string(),
            ]);
            self.aggregate.row(row)?;

            let sum_rates = method_rates(results, a.method);
            let user_rates: Vec<f64> = results
                .iter()
                .flat_map(|r| match a.method {
                    Method::Proposed => r.proposed.per_user_rate.clone(),
                    Method::Baseline(b) => r
                        .baselines
                        .iter()
                        .find(|(m, _)| *m == b)
                        .map(|(_, rep)| rep.per_user_rate.clone())
                        .unwrap_or_default(),
                })
                .collect();
            for (metric, samples) in [("sum_rate", sum_rates), ("user_rate", user_rates)] {
                for (value, p) in cdf_points(&samples)? {
                    let mut row = head(None);
                    row.extend([
                        a.method.label().to_string(),
                        metric.to_string(),
                        value.to_string(),
                        p.to_string(),
                    ]);
                    self.cdf.row(row)?;
                }
            }
        }
        Ok(())
    }
}

/// Expands the sweep, runs every point and writes the CSV files into
/// `options.out_dir`. Output files are created before any trial runs.
pub fn run_campaign(base: &Scenario, axes: &[SweepAxis], options: &CampaignOptions) -> Result<Vec<PointSummary>> {
    let points = expand(base, axes)?;
    let mut writers = Writers::open(&options.out_dir, options.timing)?;
    let mut summaries = Vec::with_capacity(points.len());
    for point in &points {
        let results = run_point(&point.scenario, options.workers).map_err(|e| Error::Context {
            context: format!("sweep point {}", point.label),
            source: Box::new(e),
        })?;
        let summary = PointSummary {
            label: point.label.clone(),
            config_hash: point.scenario.config_hash(),
            seed: point.scenario.master_seed,
            aggregates: aggregate(&results, &point.scenario),
            warnings: point.scenario.warnings(),
        };
        writers.write_point(point, &results, &summary)?;
        summaries.push(summary);
    }
    writers.finish()?;
    Ok(summaries)
}
