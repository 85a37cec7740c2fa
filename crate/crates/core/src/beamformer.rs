//! Per-AP transmit beamforming by matrix fractional programming.
//!
//! One FP iteration refreshes the Lagrangian-dual auxiliary `Z_k` and the
//! quadratic-transform auxiliary `Y_k`, folds them into the matrices `A_k`
//! and `B_k`, and then solves every sub-beamformer `Q_{l,k}` in closed form
//!
//! ```text
//! Q_{l,k} = (ζ_l I + Σ_k' [B_k']_{l,l})^{-1} ([A_k]_l - Ω_{l,k} / 2)
//! ```
//!
//! where `Ω_{l,k}` gathers the cross-AP blocks of `B` acting on the other
//! APs' current sub-beamformers and `ζ_l` is bisected so AP `l` meets its
//! own power budget.
//!
//! With [`SweepOrder::GaussSeidel`] (the default) each AP update uses the
//! freshest blocks of the APs already visited in the sweep. Every AP update
//! is then the exact maximizer of the quadratic surrogate over that AP's
//! blocks, so the true sum-rate never decreases across iterations.
//! [`SweepOrder::Jacobi`] freezes `Ω` at the previous iterate for all APs.

use std::f64::consts::LN_2;

use crate::channel::SystemDims;
use crate::error::{Error, Result, ResultExt};
use crate::metrics::{interference_cov, sum_rate, user_rates};
use crate::numerics::{block, fro_norm_sq, hermitian_part, hermitian_solve, identity, real_inner, CMat, Cholesky, C64};

/// Per-user stacked beamformers `V_k` (`N_t x M`); AP `l` owns rows
/// `l*N_a .. (l+1)*N_a` of every `V_k`.
#[derive(Debug, Clone, PartialEq)]
pub struct BeamformerSet {
    dims: SystemDims,
    v: Vec<CMat>,
}

impl BeamformerSet {
    pub fn zeros(dims: SystemDims) -> Self {
        let v = (0..dims.users)
            .map(|_| CMat::zeros(dims.tx_antennas(), dims.user_antennas))
            .collect();
        Self { dims, v }
    }

    pub fn from_v(dims: SystemDims, v: Vec<CMat>) -> Result<Self> {
        if v.len() != dims.users
            || v.iter()
                .any(|vk| vk.nrows() != dims.tx_antennas() || vk.ncols() != dims.user_antennas)
        {
            return Err(Error::Validation(format!(
                "beamformer shapes do not match {} users of {}x{}",
                dims.users,
                dims.tx_antennas(),
                dims.user_antennas
            )));
        }
        Ok(Self { dims, v })
    }

    pub fn dims(&self) -> SystemDims {
        self.dims
    }

    pub fn v(&self) -> &[CMat] {
        &self.v
    }

    /// `Q_{l,k}`, `N_a x M`.
    pub fn q(&self, l: usize, k: usize) -> CMat {
        let na = self.dims.ap_antennas;
        block(&self.v[k], l * na, 0, na, self.dims.user_antennas)
    }

    pub fn set_q(&mut self, l: usize, k: usize, q: &CMat) {
        let na = self.dims.ap_antennas;
        self.v[k]
            .view_mut((l * na, 0), (na, self.dims.user_antennas))
            .copy_from(q);
    }

    /// `||Q_l||_F^2 = Σ_k ||Q_{l,k}||_F^2`.
    pub fn ap_power(&self, l: usize) -> f64 {
        let na = self.dims.ap_antennas;
        self.v
            .iter()
            .map(|vk| vk.rows(l * na, na).iter().map(|z| z.norm_sqr()).sum::<f64>())
            .sum()
    }

    pub fn ap_powers(&self) -> Vec<f64> {
        (0..self.dims.aps).map(|l| self.ap_power(l)).collect()
    }

    /// True if every AP satisfies `||Q_l||^2 <= P_l (1 + rel)`.
    pub fn satisfies_power(&self, p_ap: &[f64], rel: f64) -> bool {
        self.ap_powers()
            .iter()
            .zip(p_ap)
            .all(|(&p, &budget)| p <= budget * (1.0 + rel))
    }

    fn distance(&self, other: &BeamformerSet) -> f64 {
        self.v
            .iter()
            .zip(&other.v)
            .map(|(a, b)| fro_norm_sq(&(a - b)))
            .sum::<f64>()
            .sqrt()
    }

    fn norm(&self) -> f64 {
        self.v.iter().map(fro_norm_sq).sum::<f64>().sqrt()
    }
}

/// FP auxiliaries of one iteration.
#[derive(Debug, Clone)]
pub struct FpAuxiliaries {
    pub z: Vec<CMat>,
    pub y: Vec<CMat>,
    pub a: Vec<CMat>,
    pub b: Vec<CMat>,
    /// `Σ_k B_k`.
    pub b_total: CMat,
    /// `[ap][user]`, evaluated at the beamformer the auxiliaries were built from.
    pub omega: Vec<Vec<CMat>>,
}

impl FpAuxiliaries {
    pub fn compute(e: &[CMat], bf: &BeamformerSet, noise: f64) -> Result<Self> {
        let dims = bf.dims();
        let v = bf.v();
        let (mut z, mut y, mut a, mut b) = (vec![], vec![], vec![], vec![]);
        for (k, e_k) in e.iter().enumerate() {
            let psi = interference_cov(e_k, v, k, noise);
            let z_k = update_z(e_k, &v[k], &psi).context(|| format!("Z update for user {k}"))?;
            let y_k = update_y(e_k, &v[k], &psi).context(|| format!("Y update for user {k}"))?;
            let (a_k, b_k) = compute_a_b(e_k, &y_k, &z_k);
            z.push(z_k);
            y.push(y_k);
            a.push(a_k);
            b.push(b_k);
        }
        let b_total = sum_b(&b, dims.tx_antennas());
        let omega = (0..dims.aps)
            .map(|l| (0..dims.users).map(|k| compute_omega(&b_total, bf, l, k)).collect())
            .collect();
        Ok(Self {
            z,
            y,
            a,
            b,
            b_total,
            omega,
        })
    }
}

/// `Z_k = V_k^H E_k^H Ψ_k^{-1} E_k V_k`.
pub fn update_z(e_k: &CMat, v_k: &CMat, psi_k: &CMat) -> Result<CMat> {
    let ev = e_k * v_k;
    let x = hermitian_solve(psi_k, &ev)?;
    Ok(hermitian_part(&(ev.adjoint() * x)))
}

/// `Y_k = (E_k V_k V_k^H E_k^H + Ψ_k)^{-1} E_k V_k`.
pub fn update_y(e_k: &CMat, v_k: &CMat, psi_k: &CMat) -> Result<CMat> {
    let ev = e_k * v_k;
    let total = hermitian_part(&(&ev * ev.adjoint() + psi_k));
    hermitian_solve(&total, &ev)
}

/// `A_k = E_k^H Y_k (I + Z_k)` and `B_k = A_k Y_k^H E_k`.
pub fn compute_a_b(e_k: &CMat, y_k: &CMat, z_k: &CMat) -> (CMat, CMat) {
    let a = e_k.adjoint() * y_k * (identity(z_k.nrows()) + z_k);
    let b = hermitian_part(&(&a * y_k.adjoint() * e_k));
    (a, b)
}

pub fn sum_b(b: &[CMat], n_t: usize) -> CMat {
    b.iter().fold(CMat::zeros(n_t, n_t), |acc, bk| acc + bk)
}

/// `Ω_{l,k} = Σ_{l' != l} ([B]_{l,l'} + [B]_{l',l}^H) Q_{l',k}` with `B = Σ_k' B_k'`.
pub fn compute_omega(b_total: &CMat, bf: &BeamformerSet, l: usize, k: usize) -> CMat {
    let dims = bf.dims();
    let na = dims.ap_antennas;
    let mut omega = CMat::zeros(na, dims.user_antennas);
    for lp in (0..dims.aps).filter(|&lp| lp != l) {
        let cross = block(b_total, l * na, lp * na, na, na) + block(b_total, lp * na, l * na, na, na).adjoint();
        omega += cross * bf.q(lp, k);
    }
    omega
}

/// Right-hand side `[A_k]_l - Ω_{l,k} / 2`.
fn q_rhs(a_k: &CMat, omega_lk: &CMat, l: usize, na: usize) -> CMat {
    block(a_k, l * na, 0, na, a_k.ncols()) - omega_lk.scale(0.5)
}

/// Closed-form sub-beamformer for a fixed multiplier `ζ_l`.
pub fn solve_q(a_k: &CMat, b_total: &CMat, omega_lk: &CMat, zeta: f64, l: usize, dims: SystemDims) -> Result<CMat> {
    if !(zeta >= 0.0) {
        return Err(Error::Validation(format!("ζ must be nonnegative, got {zeta}")));
    }
    let na = dims.ap_antennas;
    let reg = block(b_total, l * na, l * na, na, na) + identity(na).scale(zeta);
    hermitian_solve(&reg, &q_rhs(a_k, omega_lk, l, na)).map_err(|e| match e {
        Error::Singular { .. } if zeta == 0.0 => Error::Validation(format!(
            "diagonal block of B for AP {l} is singular at ζ = 0; use ζ > 0 ({e})"
        )),
        other => other,
    })
}

/// Gradient of the quadratic surrogate `Σ_k 2 Re tr(V_k^H A_k) - tr(V_k^H B V_k)`
/// with respect to `Q_{l,k}`, laid out so the first-order change is
/// `Re tr(G^H dQ)`: `G = 2 [A_k]_l - 2 [B]_{l,l} Q_{l,k} - Ω_{l,k}`.
pub fn rate_gradient_q(a_k: &CMat, b_total: &CMat, bf: &BeamformerSet, l: usize, k: usize) -> CMat {
    let na = bf.dims().ap_antennas;
    let b_ll = block(b_total, l * na, l * na, na, na);
    block(a_k, l * na, 0, na, a_k.ncols()).scale(2.0)
        - (b_ll * bf.q(l, k)).scale(2.0)
        - compute_omega(b_total, bf, l, k)
}

/// `Σ_k [2 Re tr(V_k^H A_k) - tr(V_k^H B V_k)]` in nats.
pub fn quadratic_surrogate(a: &[CMat], b_total: &CMat, v: &[CMat]) -> f64 {
    v.iter()
        .zip(a)
        .map(|(vk, ak)| 2.0 * real_inner(vk, ak) - real_inner(vk, &(b_total * vk)))
        .sum()
}

#[derive(Debug, Clone)]
pub struct ZetaSolution {
    pub zeta: f64,
    /// One `N_a x M` block per user.
    pub q: Vec<CMat>,
    pub iterations: usize,
}

const BISECTION_MAX_ITERS: usize = 100;
const BISECTION_REL_TOL: f64 = 1e-8;

/// Finds the smallest `ζ >= 0` with `Σ_k ||Q_{l,k}(ζ)||^2 <= P_l`, where
/// `Q_{l,k}(ζ) = (ζ I + b_ll)^{-1} rhs_k`.
///
/// Returns `ζ = 0` when the unregularized solution is already feasible.
/// Otherwise `ζ_max` is doubled from 1 until feasible and the bracket is
/// bisected until the power is within `1e-8 P_l` of the budget.
pub fn bisect_zeta(b_ll: &CMat, rhs: &[CMat], p_l: f64) -> Result<ZetaSolution> {
    if !(p_l > 0.0) {
        return Err(Error::Validation(format!(
            "AP power budget must be positive, got {p_l}"
        )));
    }
    let na = b_ll.nrows();
    let m = rhs.first().map_or(0, |r| r.ncols());
    let mut stacked = CMat::zeros(na, m * rhs.len());
    for (k, r) in rhs.iter().enumerate() {
        stacked.view_mut((0, k * m), (na, m)).copy_from(r);
    }
    let split = |x: CMat| -> Vec<CMat> { (0..rhs.len()).map(|k| block(&x, 0, k * m, na, m)).collect() };

    if stacked.iter().all(|z| *z == C64::new(0.0, 0.0)) {
        return Ok(ZetaSolution {
            zeta: 0.0,
            q: split(stacked),
            iterations: 0,
        });
    }

    let solve_at = |zeta: f64| -> Option<(f64, CMat)> {
        let reg = b_ll + identity(na).scale(zeta);
        let x = Cholesky::factor(&reg).ok()?.solve(&stacked);
        let p = fro_norm_sq(&x);
        p.is_finite().then_some((p, x))
    };

    let mut iterations = 0;
    if let Some((p, x)) = solve_at(0.0) {
        iterations += 1;
        if p <= p_l {
            return Ok(ZetaSolution {
                zeta: 0.0,
                q: split(x),
                iterations,
            });
        }
    }

    let mut lo = 0.0;
    let mut hi = 1.0;
    let mut best = loop {
        iterations += 1;
        match solve_at(hi) {
            Some((p, x)) if p <= p_l => break x,
            _ => {
                lo = hi;
                hi *= 2.0;
                if !hi.is_finite() {
                    return Err(Error::NonFinite("ζ bracket overflowed while doubling".into()));
                }
            }
        }
    };

    for _ in 0..BISECTION_MAX_ITERS {
        let mid = 0.5 * (lo + hi);
        if mid <= lo || mid >= hi {
            break;
        }
        iterations += 1;
        match solve_at(mid) {
            Some((p, x)) => {
                if (p - p_l).abs() <= BISECTION_REL_TOL * p_l {
                    return Ok(ZetaSolution {
                        zeta: mid,
                        q: split(x),
                        iterations,
                    });
                }
                if p > p_l {
                    lo = mid;
                } else {
                    hi = mid;
                    best = x;
                }
            }
            None => lo = mid,
        }
    }
    Ok(ZetaSolution {
        zeta: hi,
        q: split(best),
        iterations,
    })
}

/// Regularized MMSE directions `(Σ_k E_k^H E_k + (K M N0 / P_max) I)^{-1} E_k^H`,
/// before any power normalization.
fn mmse_directions(e: &[CMat], dims: SystemDims, p_max: f64, noise: f64) -> Result<Vec<CMat>> {
    let n_t = dims.tx_antennas();
    let m = dims.user_antennas;
    let alpha = dims.users as f64 * m as f64 * noise / p_max;
    let mut gram = identity(n_t).scale(alpha);
    let mut rhs = CMat::zeros(n_t, m * dims.users);
    for (k, e_k) in e.iter().enumerate() {
        gram += e_k.adjoint() * e_k;
        rhs.view_mut((0, k * m), (n_t, m)).copy_from(&e_k.adjoint());
    }
    let x = hermitian_solve(&hermitian_part(&gram), &rhs)?;
    Ok((0..dims.users).map(|k| block(&x, 0, k * m, n_t, m)).collect())
}

fn check_inputs(e: &[CMat], dims: SystemDims, p_ap: &[f64], noise: f64) -> Result<()> {
    dims.validate()?;
    if e.len() != dims.users {
        return Err(Error::Validation(format!(
            "expected {} channels, got {}",
            dims.users,
            e.len()
        )));
    }
    if e.iter()
        .any(|ek| ek.nrows() != dims.user_antennas || ek.ncols() != dims.tx_antennas())
    {
        return Err(Error::Validation("equivalent channel shape mismatch".into()));
    }
    if e.iter()
        .any(|ek| ek.iter().any(|z| !z.re.is_finite() || !z.im.is_finite()))
    {
        return Err(Error::Validation("equivalent channel has non-finite entries".into()));
    }
    if p_ap.len() != dims.aps || p_ap.iter().any(|p| !(*p > 0.0) || !p.is_finite()) {
        return Err(Error::Validation(format!(
            "need {} positive AP budgets, got {p_ap:?}",
            dims.aps
        )));
    }
    if !(noise > 0.0) || !noise.is_finite() {
        return Err(Error::Validation(format!("noise power must be positive, got {noise}")));
    }
    Ok(())
}

#[derive(Debug, Clone)]
pub struct MmseInit {
    pub beamformer: BeamformerSet,
    /// Set when every AP block was zero and normalization was skipped.
    pub degenerate: bool,
}

/// MMSE beamformer with each AP's block row scaled to use exactly `P_l`.
pub fn mmse_init(e: &[CMat], dims: SystemDims, p_ap: &[f64], noise: f64) -> Result<MmseInit> {
    check_inputs(e, dims, p_ap, noise)?;
    let p_max: f64 = p_ap.iter().sum();
    let mut bf = BeamformerSet::from_v(dims, mmse_directions(e, dims, p_max, noise)?)?;
    let mut degenerate = true;
    for l in 0..dims.aps {
        let p = bf.ap_power(l);
        if p > 0.0 {
            degenerate = false;
            let s = C64::new((p_ap[l] / p).sqrt(), 0.0);
            for k in 0..dims.users {
                let q = bf.q(l, k) * s;
                bf.set_q(l, k, &q);
            }
        }
    }
    Ok(MmseInit {
        beamformer: bf,
        degenerate,
    })
}

/// Full FP surrogate in bits, constant terms included:
///
/// ```text
/// Σ_k [ ln|I+Z_k| - tr Z_k + 2 Re tr((I+Z_k) V_k^H E_k^H Y_k)
///       - tr((I+Z_k) Y_k^H (Σ_k' E_k V_k' V_k'^H E_k^H + N0 I) Y_k) ] / ln 2
/// ```
///
/// It lower-bounds the sum-rate for any `Z_k ⪰ 0`, `Y_k`, with equality at
/// the auxiliary updates.
pub fn surrogate_value(e: &[CMat], v: &[CMat], z: &[CMat], y: &[CMat], noise: f64) -> Result<f64> {
    Ok(surrogate_nats(e, v, z, y, noise)? / LN_2)
}

/// [`surrogate_value`] in nats.
pub fn surrogate_nats(e: &[CMat], v: &[CMat], z: &[CMat], y: &[CMat], noise: f64) -> Result<f64> {
    let mut total = 0.0;
    for (k, e_k) in e.iter().enumerate() {
        let m = e_k.nrows();
        let iz = identity(m) + &z[k];
        let ln_det = Cholesky::factor(&hermitian_part(&iz))?.ln_det();
        let mut cov = identity(m).scale(noise);
        for vj in v {
            let ev = e_k * vj;
            cov += &ev * ev.adjoint();
        }
        let linear = 2.0 * real_inner(&iz, &(v[k].adjoint() * e_k.adjoint() * &y[k]));
        let quad = (&iz * y[k].adjoint() * cov * &y[k]).trace().re;
        total += ln_det - z[k].trace().re + linear - quad;
    }
    if !total.is_finite() {
        return Err(Error::NonFinite("surrogate value".into()));
    }
    Ok(total)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum SweepOrder {
    #[default]
    GaussSeidel,
    Jacobi,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct FpOptions {
    /// Stop when `||V^(i) - V^(i-1)||_F < tolerance * ||V^(i)||_F`.
    pub tolerance: f64,
    pub max_iters: usize,
    pub sweep: SweepOrder,
}

impl Default for FpOptions {
    fn default() -> Self {
        Self {
            tolerance: 1e-4,
            max_iters: 100,
            sweep: SweepOrder::GaussSeidel,
        }
    }
}

#[derive(Debug, Clone)]
pub struct FpOutcome {
    pub beamformer: BeamformerSet,
    /// Sum-rate of the initial point followed by one entry per iteration.
    pub trace: Vec<f64>,
    pub iterations: usize,
    pub bisection_iterations: usize,
    pub converged: bool,
}

/// Runs FP iterations from `init` (or the per-AP normalized MMSE
/// beamformer when `None`).
pub fn fp_optimize(
    e: &[CMat],
    dims: SystemDims,
    p_ap: &[f64],
    noise: f64,
    options: &FpOptions,
    init: Option<&BeamformerSet>,
) -> Result<FpOutcome> {
    check_inputs(e, dims, p_ap, noise)?;
    let mut bf = match init {
        Some(v) => {
            if v.dims() != dims {
                return Err(Error::Validation("initial beamformer dimensions differ".into()));
            }
            v.clone()
        }
        None => mmse_init(e, dims, p_ap, noise)?.beamformer,
    };
    let na = dims.ap_antennas;
    let mut trace = vec![sum_rate(e, bf.v(), noise)?];
    let mut bisection_iterations = 0;
    let mut converged = false;
    let mut iterations = 0;

    while iterations < options.max_iters {
        iterations += 1;
        let it = iterations;
        let prev = bf.clone();
        let aux = FpAuxiliaries::compute(e, &prev, noise).context(|| format!("FP iteration {it}"))?;
        let mut next = prev.clone();
        for l in 0..dims.aps {
            let rhs: Vec<CMat> = (0..dims.users)
                .map(|k| {
                    let omega = match options.sweep {
                        SweepOrder::GaussSeidel => compute_omega(&aux.b_total, &next, l, k),
                        SweepOrder::Jacobi => aux.omega[l][k].clone(),
                    };
                    q_rhs(&aux.a[k], &omega, l, na)
                })
                .collect();
            let b_ll = block(&aux.b_total, l * na, l * na, na, na);
            let sol = bisect_zeta(&b_ll, &rhs, p_ap[l]).context(|| format!("FP iteration {it}, AP {l}"))?;
            bisection_iterations += sol.iterations;
            for (k, q) in sol.q.iter().enumerate() {
                next.set_q(l, k, q);
            }
        }
        bf = next;
        trace.push(sum_rate(e, bf.v(), noise).context(|| format!("FP iteration {it}"))?);
        if bf.distance(&prev) < options.tolerance * bf.norm() {
            converged = true;
            break;
        }
    }
    Ok(FpOutcome {
        beamformer: bf,
        trace,
        iterations,
        bisection_iterations,
        converged,
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum BaselineMode {
    /// MMSE with per-AP power normalization.
    MmsePerAp,
    /// MMSE directions with `P_l / K` given to every user at every AP.
    UniformPa,
}

pub fn baseline(e: &[CMat], dims: SystemDims, p_ap: &[f64], noise: f64, mode: BaselineMode) -> Result<BeamformerSet> {
    match mode {
        BaselineMode::MmsePerAp => Ok(mmse_init(e, dims, p_ap, noise)?.beamformer),
        BaselineMode::UniformPa => {
            check_inputs(e, dims, p_ap, noise)?;
            let p_max: f64 = p_ap.iter().sum();
            let mut bf = BeamformerSet::from_v(dims, mmse_directions(e, dims, p_max, noise)?)?;
            let share = |l: usize| p_ap[l] / dims.users as f64;
            for l in 0..dims.aps {
                for k in 0..dims.users {
                    let q = bf.q(l, k);
                    let p = fro_norm_sq(&q);
                    if p > 0.0 {
                        bf.set_q(l, k, &(q * C64::new((share(l) / p).sqrt(), 0.0)));
                    }
                }
            }
            Ok(bf)
        }
    }
}

/// Per-user rates of `bf` on channels `e`.
pub fn rates_of(e: &[CMat], bf: &BeamformerSet, noise: f64) -> Result<Vec<f64>> {
    user_rates(e, bf.v(), noise)
}
