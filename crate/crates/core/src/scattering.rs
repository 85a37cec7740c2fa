//! Reciprocal BD-RIS scattering matrices: architectures, closed-form
//! gradients, the multi-surface decomposition of the FP matrices, and a
//! Riemannian ascent that keeps every group symmetric and unitary.
//!
//! Each group block is stored through its Takagi factor, `Θ_g = U_g U_g^T`
//! with `U_g` unitary, so reciprocity and losslessness hold by
//! construction. Ascent moves the factors on the unitary group and
//! re-unitarizes them with a phase-fixed QR retraction.
//!
//! Gradient convention: for a real objective `f`, `∇_Θ f` is the matrix
//! with `df = 2 Re tr(∇^H dΘ)` (the derivative with respect to `conj(Θ)`).
//! The closed forms in [`grad_theta_group`] and [`local_grad_theta_b`] follow
//! this convention, which the finite-difference tests pin down.

use std::f64::consts::LN_2;

use rand::Rng;

use crate::beamformer::{update_y, update_z, BeamformerSet};
use crate::channel::{assemble_all, slice_group, ChannelSet};
use crate::error::{Error, Result};
use crate::metrics::{interference_cov, sum_rate};
use crate::numerics::{
    block, fro_norm_sq, haar_unitary, identity, qr_unitary, real_inner, symmetry_deviation, takagi_from_unitary,
    unitary_deviation, CMat, NUMERIC_TOL,
};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum ArchitectureKind {
    SingleConnected,
    GroupConnected,
    FullyConnected,
}

/// Connectivity of one surface of `R` elements.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct Architecture {
    pub kind: ArchitectureKind,
    /// `R_G`: 1 for single-connected, `R` for fully-connected.
    pub group_size: usize,
}

impl Architecture {
    pub fn single() -> Self {
        Self {
            kind: ArchitectureKind::SingleConnected,
            group_size: 1,
        }
    }

    pub fn group(group_size: usize) -> Self {
        Self {
            kind: ArchitectureKind::GroupConnected,
            group_size,
        }
    }

    pub fn fully(elements: usize) -> Self {
        Self {
            kind: ArchitectureKind::FullyConnected,
            group_size: elements,
        }
    }

    pub fn validate(&self, elements: usize) -> Result<()> {
        let bad = |msg: String| Err(Error::config("surfaces.architecture", msg));
        if elements == 0 {
            return bad("surface needs at least one element".into());
        }
        if self.group_size == 0 || !elements.is_multiple_of(self.group_size) {
            return bad(format!(
                "{elements} elements are not divisible into groups of {}",
                self.group_size
            ));
        }
        match self.kind {
            ArchitectureKind::SingleConnected if self.group_size != 1 => {
                bad(format!("single-connected needs group size 1, got {}", self.group_size))
            }
            ArchitectureKind::FullyConnected if self.group_size != elements => bad(format!(
                "fully-connected needs group size {elements}, got {}",
                self.group_size
            )),
            ArchitectureKind::GroupConnected if self.group_size == 1 || self.group_size == elements => bad(format!(
                "group-connected needs 1 < group size < {elements}, got {}",
                self.group_size
            )),
            _ => Ok(()),
        }
    }

    pub fn groups(&self, elements: usize) -> usize {
        elements / self.group_size
    }

    /// Short label: `sc`, `gc<R_G>`, `fc`.
    pub fn label(&self) -> String {
        match self.kind {
            ArchitectureKind::SingleConnected => "sc".into(),
            ArchitectureKind::GroupConnected => format!("gc{}", self.group_size),
            ArchitectureKind::FullyConnected => "fc".into(),
        }
    }
}

/// Scattering matrix of one surface with its per-group Takagi factors.
#[derive(Debug, Clone, PartialEq)]
pub struct ScatteringState {
    pub surface: usize,
    pub architecture: Architecture,
    factors: Vec<CMat>,
    theta: CMat,
}

impl ScatteringState {
    pub fn from_factors(surface: usize, architecture: Architecture, factors: Vec<CMat>) -> Result<Self> {
        let rg = architecture.group_size;
        let elements = rg * factors.len();
        architecture.validate(elements)?;
        let mut theta = CMat::zeros(elements, elements);
        for (g, u) in factors.iter().enumerate() {
            if u.nrows() != rg || u.ncols() != rg {
                return Err(Error::Validation(format!("group factor {g} is not {rg}x{rg}")));
            }
            theta
                .view_mut((g * rg, g * rg), (rg, rg))
                .copy_from(&takagi_from_unitary(u)?);
        }
        Ok(Self {
            surface,
            architecture,
            factors,
            theta,
        })
    }

    pub fn theta(&self) -> &CMat {
        &self.theta
    }

    pub fn factors(&self) -> &[CMat] {
        &self.factors
    }

    pub fn elements(&self) -> usize {
        self.theta.nrows()
    }

    pub fn report(&self) -> ValidationReport {
        validate(&self.theta, &self.architecture)
    }
}

/// Haar-random Takagi factors for every group.
pub fn init_scattering<R: Rng + ?Sized>(
    surface: usize,
    architecture: Architecture,
    elements: usize,
    rng: &mut R,
) -> Result<ScatteringState> {
    architecture.validate(elements)?;
    let factors = (0..architecture.groups(elements))
        .map(|_| haar_unitary(architecture.group_size, rng))
        .collect();
    ScatteringState::from_factors(surface, architecture, factors)
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ValidationReport {
    /// `||Θ - Θ^T||_F`
    pub symmetry: f64,
    /// `||Θ^H Θ - I||_F`
    pub unitarity: f64,
    /// Frobenius norm of everything outside the group-diagonal blocks.
    pub structure: f64,
}

impl ValidationReport {
    pub fn passes(&self) -> bool {
        self.symmetry <= NUMERIC_TOL && self.unitarity <= NUMERIC_TOL && self.structure <= NUMERIC_TOL
    }

    pub fn worst(&self) -> f64 {
        self.symmetry.max(self.unitarity).max(self.structure)
    }
}

/// Checks reciprocity, losslessness, and block pattern of `theta`.
pub fn validate(theta: &CMat, architecture: &Architecture) -> ValidationReport {
    let r = theta.nrows();
    let rg = architecture.group_size.max(1);
    let mut structure = 0.0;
    for i in 0..r {
        for j in 0..r {
            if i / rg != j / rg {
                structure += theta[(i, j)].norm_sqr();
            }
        }
    }
    let bad_shape = !theta.is_square() || !r.is_multiple_of(rg);
    ValidationReport {
        symmetry: symmetry_deviation(theta),
        unitarity: unitary_deviation(theta),
        structure: if bad_shape { f64::INFINITY } else { structure.sqrt() },
    }
}

/// `Z_k` and `Y_k` for all users at the current channels and beamformer.
#[derive(Debug, Clone)]
pub struct FpWeights {
    pub z: Vec<CMat>,
    pub y: Vec<CMat>,
}

impl FpWeights {
    pub fn compute(e: &[CMat], v: &[CMat], noise: f64) -> Result<Self> {
        let mut z = Vec::with_capacity(e.len());
        let mut y = Vec::with_capacity(e.len());
        for (k, e_k) in e.iter().enumerate() {
            let psi = interference_cov(e_k, v, k, noise);
            z.push(update_z(e_k, &v[k], &psi)?);
            y.push(update_y(e_k, &v[k], &psi)?);
        }
        Ok(Self { z, y })
    }

    /// `Y_k (I + Z_k)`
    fn weighted(&self, k: usize) -> CMat {
        &self.y[k] * (identity(self.z[k].nrows()) + &self.z[k])
    }
}

fn covariance_sum(v: &[CMat]) -> CMat {
    let n = v[0].nrows();
    v.iter().fold(CMat::zeros(n, n), |acc, vk| acc + vk * vk.adjoint())
}

/// Shared core of both closed forms:
/// `Σ_k H_RX,k^H Y_k (I+Z_k) [V_k^H - Y_k^H C_k S] H_TX^H`,
/// where `C_k` is the channel seen by the quadratic term.
fn gradient_core(h_rx: &[CMat], h_tx_bar: &CMat, coupled: &[CMat], v: &[CMat], w: &FpWeights) -> CMat {
    let s = covariance_sum(v);
    let r = h_tx_bar.nrows();
    let mut g = CMat::zeros(h_rx[0].ncols(), r);
    let tx_h = h_tx_bar.adjoint();
    for k in 0..v.len() {
        let inner = v[k].adjoint() - w.y[k].adjoint() * &coupled[k] * &s;
        g += h_rx[k].adjoint() * w.weighted(k) * inner * &tx_h;
    }
    g
}

/// Gradient of the FP surrogate with respect to group `g` of surface `b`
/// (0-based), with `e` the full equivalent channels.
pub fn grad_theta_group(
    channels: &ChannelSet,
    thetas: &[CMat],
    b: usize,
    group_size: usize,
    g: usize,
    e: &[CMat],
    bf: &BeamformerSet,
    w: &FpWeights,
) -> Result<CMat> {
    check_grad_inputs(channels, e, bf, w)?;
    let slice = slice_group(channels, b, &thetas[b], group_size, g)?;
    Ok(gradient_core(&slice.h_rx, &slice.h_tx_bar, e, bf.v(), w))
}

/// Gradient with respect to the whole `Θ^(b)` (the `G = 1` case).
pub fn grad_theta_full(channels: &ChannelSet, b: usize, e: &[CMat], bf: &BeamformerSet, w: &FpWeights) -> Result<CMat> {
    check_grad_inputs(channels, e, bf, w)?;
    Ok(gradient_core(&channels.h_rx[b], &channels.h_tx_bar(b), e, bf.v(), w))
}

/// Local gradient for surface `b`: the full-matrix closed form with the
/// coupled channel replaced by `H̄_k + H_RX,k^(b) Θ^(b) H̄_TX^(b)`, so only
/// surface `b`'s channels and the direct path enter.
pub fn local_grad_theta_b(
    channels: &ChannelSet,
    thetas: &[CMat],
    b: usize,
    bf: &BeamformerSet,
    w: &FpWeights,
) -> Result<CMat> {
    channels.check_thetas(thetas)?;
    let local: Vec<CMat> = (0..channels.dims.users)
        .map(|k| channels.h_bar(k) + channels.surface_term(b, &thetas[b], k))
        .collect();
    check_grad_inputs(channels, &local, bf, w)?;
    Ok(gradient_core(
        &channels.h_rx[b],
        &channels.h_tx_bar(b),
        &local,
        bf.v(),
        w,
    ))
}

fn check_grad_inputs(channels: &ChannelSet, e: &[CMat], bf: &BeamformerSet, w: &FpWeights) -> Result<()> {
    let k = channels.dims.users;
    if e.len() != k || bf.v().len() != k || w.y.len() != k || w.z.len() != k {
        return Err(Error::Validation(
            "gradient inputs disagree on the number of users".into(),
        ));
    }
    if bf.dims() != channels.dims {
        return Err(Error::Validation("beamformer dimensions differ from channels".into()));
    }
    Ok(())
}

/// `E_k^(0) = H̄_k` and `E_k^(b) = H_RX,k^(b) Θ^(b) H̄_TX^(b)`.
pub fn local_components(channels: &ChannelSet, thetas: &[CMat], k: usize) -> Result<Vec<CMat>> {
    channels.check_thetas(thetas)?;
    let mut out = vec![channels.h_bar(k)];
    out.extend(thetas.iter().enumerate().map(|(b, t)| channels.surface_term(b, t, k)));
    Ok(out)
}

/// `A_k^(b) = E_k^(b)H Y_k (I + Z_k)` for `b = 0..=B`.
pub fn decompose_a(channels: &ChannelSet, thetas: &[CMat], y_k: &CMat, z_k: &CMat, k: usize) -> Result<Vec<CMat>> {
    let wk = y_k * (identity(z_k.nrows()) + z_k);
    Ok(local_components(channels, thetas, k)?
        .iter()
        .map(|eb| eb.adjoint() * &wk)
        .collect())
}

/// Terms `B_k^(b,c) = E_k^(b)H Y_k (I+Z_k) Y_k^H E_k^(c)`, index 0 being the
/// direct path.
#[derive(Debug, Clone)]
pub struct BDecomposition {
    pub terms: Vec<Vec<CMat>>,
}

impl BDecomposition {
    pub fn surfaces(&self) -> usize {
        self.terms.len() - 1
    }

    pub fn total(&self) -> CMat {
        let n = self.terms[0][0].nrows();
        self.terms.iter().flatten().fold(CMat::zeros(n, n), |acc, t| acc + t)
    }

    /// Direct-path and single-surface terms only; cross-surface terms dropped.
    pub fn local_approximation(&self) -> CMat {
        let mut out = self.terms[0][0].clone();
        for b in 1..self.terms.len() {
            out += &self.terms[0][b] + &self.terms[b][0] + &self.terms[b][b];
        }
        out
    }

    /// Sum of the dropped cross-surface terms.
    pub fn cross_sum(&self) -> CMat {
        self.total() - self.local_approximation()
    }
}

pub fn decompose_b(channels: &ChannelSet, thetas: &[CMat], y_k: &CMat, z_k: &CMat, k: usize) -> Result<BDecomposition> {
    let comps = local_components(channels, thetas, k)?;
    let w = y_k * (identity(z_k.nrows()) + z_k) * y_k.adjoint();
    let left: Vec<CMat> = comps.iter().map(|eb| eb.adjoint() * &w).collect();
    let terms = left.iter().map(|lb| comps.iter().map(|ec| lb * ec).collect()).collect();
    Ok(BDecomposition { terms })
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct CouplingRatio {
    /// 1-based surface indices.
    pub b: usize,
    pub c: usize,
    /// `||B^(b,c)||_F / ||B^(b,b)||_F`, `+inf` when the denominator is zero.
    pub ratio: f64,
}

pub fn coupling_diagnostic(decomposition: &BDecomposition) -> Vec<CouplingRatio> {
    let nb = decomposition.surfaces();
    let mut out = Vec::new();
    for b in 1..=nb {
        let diag = decomposition.terms[b][b].norm();
        for c in (1..=nb).filter(|&c| c != b) {
            let off = decomposition.terms[b][c].norm();
            let ratio = if diag > 0.0 { off / diag } else { f64::INFINITY };
            out.push(CouplingRatio { b, c, ratio });
        }
    }
    out
}

/// FP objective `Σ_k [2 Re tr(V_k^H A_k) - tr(S B_k)]` (nats) with the
/// auxiliaries frozen, as a function of the scattering matrices.
pub fn fp_objective(channels: &ChannelSet, thetas: &[CMat], bf: &BeamformerSet, w: &FpWeights) -> Result<f64> {
    objective_with(channels, thetas, bf, w, |d| d.total())
}

/// Same objective with every `B_k` replaced by its local approximation.
pub fn approx_fp_objective(channels: &ChannelSet, thetas: &[CMat], bf: &BeamformerSet, w: &FpWeights) -> Result<f64> {
    objective_with(channels, thetas, bf, w, |d| d.local_approximation())
}

fn objective_with(
    channels: &ChannelSet,
    thetas: &[CMat],
    bf: &BeamformerSet,
    w: &FpWeights,
    pick: impl Fn(&BDecomposition) -> CMat,
) -> Result<f64> {
    let v = bf.v();
    let s = covariance_sum(v);
    let mut total = 0.0;
    for k in 0..channels.dims.users {
        let a: CMat = decompose_a(channels, thetas, &w.y[k], &w.z[k], k)?
            .into_iter()
            .fold(CMat::zeros(s.nrows(), v[k].ncols()), |acc, t| acc + t);
        let bk = pick(&decompose_b(channels, thetas, &w.y[k], &w.z[k], k)?);
        total += 2.0 * real_inner(&v[k], &a) - real_inner(&s, &bk);
    }
    Ok(total)
}

/// Surface-`b` part of the approximate objective (nats):
/// `Σ_k 2 Re tr(V_k^H A_k^(b)) - tr(S (B^(0,b) + B^(b,0) + B^(b,b)))`.
pub fn local_objective(
    channels: &ChannelSet,
    thetas: &[CMat],
    b: usize,
    bf: &BeamformerSet,
    w: &FpWeights,
) -> Result<f64> {
    if b == 0 || b > thetas.len() {
        return Err(Error::Validation(format!(
            "surface index {b} must be in 1..={}",
            thetas.len()
        )));
    }
    let v = bf.v();
    let s = covariance_sum(v);
    let mut total = 0.0;
    for k in 0..channels.dims.users {
        let a = decompose_a(channels, thetas, &w.y[k], &w.z[k], k)?;
        let d = decompose_b(channels, thetas, &w.y[k], &w.z[k], k)?;
        let local = &d.terms[0][b] + &d.terms[b][0] + &d.terms[b][b];
        total += 2.0 * real_inner(&v[k], &a[b]) - real_inner(&s, &local);
    }
    Ok(total)
}

/// Which closed form drives the scattering ascent.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum GradientMode {
    /// Full equivalent channel in the quadratic term (exact for any `B`).
    Exact,
    /// Per-surface local gradient that ignores other surfaces.
    #[default]
    Local,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ArmijoParams {
    pub initial_step: f64,
    pub shrink: f64,
    pub slope: f64,
    pub max_halvings: usize,
}

impl Default for ArmijoParams {
    fn default() -> Self {
        Self {
            initial_step: 1.0,
            shrink: 0.5,
            slope: 1e-4,
            max_halvings: 40,
        }
    }
}

pub struct AscentContext<'a> {
    pub channels: &'a ChannelSet,
    pub beamformer: &'a BeamformerSet,
    pub noise: f64,
    pub mode: GradientMode,
}

#[derive(Debug, Clone)]
pub struct AscentOutcome {
    pub states: Vec<ScatteringState>,
    /// Accepted steps.
    pub iterations: usize,
    /// Line search gave up before the gradient-norm criterion was met.
    pub stalled: bool,
    /// Sum-rate at the start and after every accepted step.
    pub trace: Vec<f64>,
    pub final_grad_norm: f64,
}

/// Riemannian gradient on the unitary group for one group factor:
/// Euclidean gradient `(G + G^T) conj(U)` projected onto `U * skew-Hermitian`.
fn factor_direction(u: &CMat, g: &CMat) -> CMat {
    let eucl = (g + g.transpose()) * u.conjugate();
    let a = u.adjoint() * &eucl;
    u * (&a - a.adjoint()).scale(0.5)
}

fn surface_gradient(ctx: &AscentContext, thetas: &[CMat], e: &[CMat], w: &FpWeights, b: usize) -> Result<CMat> {
    match ctx.mode {
        GradientMode::Exact => grad_theta_full(ctx.channels, b, e, ctx.beamformer, w),
        GradientMode::Local => local_grad_theta_b(ctx.channels, thetas, b, ctx.beamformer, w),
    }
}

/// Projected-gradient ascent on the Takagi factors of all surfaces with the
/// beamformer held fixed.
///
/// The FP auxiliaries are refreshed at every iterate, so the surrogate
/// gradient equals the sum-rate gradient (exact mode). Steps are accepted
/// by Armijo backtracking on the true sum-rate, which therefore never
/// decreases. Stops when the Riemannian gradient norm drops below
/// `1e-6 * R` (total elements) or after `max_iters` accepted steps.
pub fn riemannian_ascent(
    states: &[ScatteringState],
    ctx: &AscentContext,
    max_iters: usize,
    armijo: &ArmijoParams,
) -> Result<AscentOutcome> {
    let thetas_of = |s: &[ScatteringState]| -> Vec<CMat> { s.iter().map(|x| x.theta().clone()).collect() };
    let mut current: Vec<ScatteringState> = states.to_vec();
    let total_elements: usize = current.iter().map(|s| s.elements()).sum();
    let v = ctx.beamformer.v();

    let mut thetas = thetas_of(&current);
    let mut e = assemble_all(ctx.channels, &thetas)?;
    let mut rate = sum_rate(&e, v, ctx.noise)?;
    let mut trace = vec![rate];
    let mut stalled = false;
    let mut grad_norm = 0.0;
    let mut iterations = 0;

    if current.is_empty() {
        return Ok(AscentOutcome {
            states: current,
            iterations,
            stalled,
            trace,
            final_grad_norm: grad_norm,
        });
    }

    while iterations < max_iters {
        let w = FpWeights::compute(&e, v, ctx.noise)?;
        let mut directions: Vec<Vec<CMat>> = Vec::with_capacity(current.len());
        let mut norm_sq = 0.0;
        for (b, state) in current.iter().enumerate() {
            let g = surface_gradient(ctx, &thetas, &e, &w, b)?;
            let rg = state.architecture.group_size;
            let dirs: Vec<CMat> = state
                .factors()
                .iter()
                .enumerate()
                .map(|(gi, u)| factor_direction(u, &block(&g, gi * rg, gi * rg, rg, rg)))
                .collect();
            norm_sq += dirs.iter().map(fro_norm_sq).sum::<f64>();
            directions.push(dirs);
        }
        grad_norm = norm_sq.sqrt();
        if !grad_norm.is_finite() {
            return Err(Error::NonFinite("scattering gradient".into()));
        }
        if grad_norm < 1e-6 * total_elements as f64 {
            break;
        }

        // Directional derivative of the rate in bits along the direction.
        let slope = 2.0 * norm_sq / LN_2;
        let mut step = armijo.initial_step;
        let mut accepted = None;
        for _ in 0..=armijo.max_halvings {
            let candidate = current
                .iter()
                .zip(&directions)
                .map(|(state, dirs)| {
                    let factors = state
                        .factors()
                        .iter()
                        .zip(dirs)
                        .map(|(u, d)| qr_unitary(&(u + d.scale(step))))
                        .collect();
                    ScatteringState::from_factors(state.surface, state.architecture, factors)
                })
                .collect::<Result<Vec<_>>>()?;
            let cand_thetas = thetas_of(&candidate);
            let cand_e = assemble_all(ctx.channels, &cand_thetas)?;
            let cand_rate = sum_rate(&cand_e, v, ctx.noise)?;
            if cand_rate >= rate + armijo.slope * step * slope {
                accepted = Some((candidate, cand_thetas, cand_e, cand_rate));
                break;
            }
            step *= armijo.shrink;
        }
        match accepted {
            Some((s, t, ee, r)) => {
                current = s;
                thetas = t;
                e = ee;
                rate = r;
                trace.push(rate);
                iterations += 1;
            }
            None => {
                stalled = true;
                break;
            }
        }
    }
    Ok(AscentOutcome {
        states: current,
        iterations,
        stalled,
        trace,
        final_grad_norm: grad_norm,
    })
}
