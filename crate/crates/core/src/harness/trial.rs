//! One Monte-Carlo trial: channel draw, alternating optimization, baselines.

use std::time::{Duration, Instant};

use crate::beamformer::{baseline, fp_optimize, mmse_init, rates_of, BaselineMode, BeamformerSet};
use crate::channel::{assemble_all, ChannelSet};
use crate::error::{Result, ResultExt};
use crate::metrics::{sum_rate, RateReport};
use crate::numerics::CMat;
use crate::rng::{stream_rng, Stream, TrialKey};
use crate::scattering::{
    coupling_diagnostic, decompose_b, init_scattering, riemannian_ascent, AscentContext, FpWeights, ScatteringState,
};

use super::config::Scenario;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct CouplingRecord {
    /// 0-based user index.
    pub user: usize,
    /// 1-based surface indices.
    pub b: usize,
    pub c: usize,
    pub ratio: f64,
}

#[derive(Debug, Clone, Copy, Default, PartialEq)]
pub struct StageTimings {
    pub ascent: Duration,
    pub fp: Duration,
    pub baselines: Duration,
}

#[derive(Debug, Clone)]
pub struct TrialResult {
    pub trial: usize,
    pub proposed: RateReport,
    pub baselines: Vec<(BaselineMode, RateReport)>,
    /// Sum-rate at the MMSE starting point, then after every FP iteration
    /// of every alternation. Scattering updates happen between alternations.
    pub trace: Vec<f64>,
    /// Beamformer optimization alone, restarted from MMSE on the final
    /// scattering matrices: initial rate then one entry per iteration.
    pub fp_trace: Vec<f64>,
    pub fp_iterations: usize,
    pub bisection_iterations: usize,
    pub alternations: usize,
    pub ascent_stalls: usize,
    pub coupling: Vec<CouplingRecord>,
    pub states: Vec<ScatteringState>,
    pub beamformer: BeamformerSet,
    pub channels: ChannelSet,
    pub timings: StageTimings,
}

impl TrialResult {
    pub fn thetas(&self) -> Vec<CMat> {
        self.states.iter().map(|s| s.theta().clone()).collect()
    }

    pub fn equivalent_channels(&self) -> Result<Vec<CMat>> {
        assemble_all(&self.channels, &self.thetas())
    }

    /// Largest symmetry/unitarity/structure deviation over all surfaces.
    pub fn worst_constraint_violation(&self) -> f64 {
        self.states.iter().map(|s| s.report().worst()).fold(0.0, f64::max)
    }
}

fn report(e: &[CMat], bf: &BeamformerSet, noise: f64) -> Result<RateReport> {
    Ok(RateReport::new(rates_of(e, bf, noise)?, bf.ap_powers()))
}

pub fn draw_channels(scenario: &Scenario, trial: usize) -> Result<ChannelSet> {
    ChannelSet::draw(
        scenario.dims,
        &scenario.surface_sizes(),
        &scenario.propagation,
        scenario.include_direct,
        TrialKey::new(scenario.master_seed, trial as u64),
    )
}

pub fn initial_states(scenario: &Scenario, trial: usize) -> Result<Vec<ScatteringState>> {
    let key = TrialKey::new(scenario.master_seed, trial as u64);
    scenario
        .surfaces
        .iter()
        .enumerate()
        .map(|(b, s)| {
            let mut rng = stream_rng(key, Stream::ScatteringInit { surface: b });
            init_scattering(b, s.architecture, s.elements, &mut rng)
        })
        .collect()
}

/// Runs trial `trial` of `scenario`.
///
/// Starting from Haar-random scattering matrices and the MMSE beamformer,
/// the beamformer (FP) and the scattering matrices (Riemannian ascent) are
/// updated in turn until an alternation improves the sum-rate by less than
/// `alternation_tol` bits or the alternation limit is reached.
pub fn run_trial(scenario: &Scenario, trial: usize) -> Result<TrialResult> {
    run_trial_inner(scenario, trial).context(|| format!("trial {trial}"))
}

fn run_trial_inner(scenario: &Scenario, trial: usize) -> Result<TrialResult> {
    let dims = scenario.dims;
    let noise = scenario.noise_w;
    let p_ap = &scenario.p_ap_w;
    let solver = &scenario.solver;
    let channels = draw_channels(scenario, trial)?;
    let mut states = initial_states(scenario, trial)?;
    let mut timings = StageTimings::default();

    let thetas_of = |s: &[ScatteringState]| -> Vec<CMat> { s.iter().map(|x| x.theta().clone()).collect() };
    let mut e = assemble_all(&channels, &thetas_of(&states))?;
    let mut bf = mmse_init(&e, dims, p_ap, noise)?.beamformer;
    let mut rate = sum_rate(&e, bf.v(), noise)?;
    let mut trace = vec![rate];
    let mut fp_iterations = 0;
    let mut bisection_iterations = 0;
    let mut alternations = 0;
    let mut ascent_stalls = 0;

    while alternations < solver.alternations {
        alternations += 1;
        let start_rate = rate;

        let t = Instant::now();
        let fp = fp_optimize(&e, dims, p_ap, noise, &solver.fp, Some(&bf))?;
        timings.fp += t.elapsed();
        fp_iterations += fp.iterations;
        bisection_iterations += fp.bisection_iterations;
        trace.extend_from_slice(&fp.trace[1..]);
        bf = fp.beamformer;
        rate = *trace.last().expect("trace is never empty");

        if !states.is_empty() && solver.ascent_iters > 0 {
            let t = Instant::now();
            let ctx = AscentContext {
                channels: &channels,
                beamformer: &bf,
                noise,
                mode: solver.gradient,
            };
            let asc = riemannian_ascent(&states, &ctx, solver.ascent_iters, &solver.armijo)?;
            timings.ascent += t.elapsed();
            if asc.stalled {
                ascent_stalls += 1;
            }
            states = asc.states;
            e = assemble_all(&channels, &thetas_of(&states))?;
            rate = *asc.trace.last().expect("ascent trace is never empty");
        }

        if rate - start_rate < solver.alternation_tol {
            break;
        }
    }

    // Finish on a beamformer update so the reported point is FP-stationary
    // for the final scattering matrices.
    if !states.is_empty() && solver.ascent_iters > 0 {
        let t = Instant::now();
        let fp = fp_optimize(&e, dims, p_ap, noise, &solver.fp, Some(&bf))?;
        timings.fp += t.elapsed();
        fp_iterations += fp.iterations;
        bisection_iterations += fp.bisection_iterations;
        trace.extend_from_slice(&fp.trace[1..]);
        bf = fp.beamformer;
    }

    let proposed = report(&e, &bf, noise)?;

    let t = Instant::now();
    let fp_trace = fp_optimize(&e, dims, p_ap, noise, &solver.fp, None)?.trace;
    timings.fp += t.elapsed();

    let t = Instant::now();
    let baselines = scenario
        .baselines
        .iter()
        .map(|&mode| Ok((mode, report(&e, &baseline(&e, dims, p_ap, noise, mode)?, noise)?)))
        .collect::<Result<Vec<_>>>()?;
    timings.baselines = t.elapsed();

    let coupling = if states.len() >= 2 {
        coupling_records(&channels, &thetas_of(&states), &e, &bf, noise)?
    } else {
        Vec::new()
    };

    Ok(TrialResult {
        trial,
        proposed,
        baselines,
        trace,
        fp_trace,
        fp_iterations,
        bisection_iterations,
        alternations,
        ascent_stalls,
        coupling,
        states,
        beamformer: bf,
        channels,
        timings,
    })
}

fn coupling_records(
    channels: &ChannelSet,
    thetas: &[CMat],
    e: &[CMat],
    bf: &BeamformerSet,
    noise: f64,
) -> Result<Vec<CouplingRecord>> {
    let w = FpWeights::compute(e, bf.v(), noise)?;
    let mut out = Vec::new();
    for k in 0..channels.dims.users {
        let dec = decompose_b(channels, thetas, &w.y[k], &w.z[k], k)?;
        out.extend(coupling_diagnostic(&dec).into_iter().map(|c| CouplingRecord {
            user: k,
            b: c.b,
            c: c.c,
            ratio: c.ratio,
        }));
    }
    Ok(out)
}
