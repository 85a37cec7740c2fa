//! Propagation channels: ULA steering, 3GPP UMi path loss, Rician fading,
//! and assembly of the equivalent AP-to-user channels through any number of
//! surfaces.

use std::f64::consts::PI;

use nalgebra::DVector;
use rand::Rng;

use crate::error::{Error, Result};
use crate::numerics::{complex_gaussian, CMat, C64};
use crate::rng::{stream_rng, Stream, TrialKey};

const SPEED_OF_LIGHT: f64 = 299_792_458.0;

/// Array and user counts of the cell-free downlink.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct SystemDims {
    /// `L`
    pub aps: usize,
    /// `N_a`
    pub ap_antennas: usize,
    /// `K`
    pub users: usize,
    /// `M`
    pub user_antennas: usize,
}

impl SystemDims {
    pub fn new(aps: usize, ap_antennas: usize, users: usize, user_antennas: usize) -> Self {
        Self {
            aps,
            ap_antennas,
            users,
            user_antennas,
        }
    }

    /// Total transmit antennas `N_t = L * N_a`.
    pub fn tx_antennas(&self) -> usize {
        self.aps * self.ap_antennas
    }

    pub fn validate(&self) -> Result<()> {
        if self.aps == 0 || self.ap_antennas == 0 || self.users == 0 || self.user_antennas == 0 {
            return Err(Error::Validation(format!("all system counts must be >= 1: {self:?}")));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum LinkKind {
    ApToSurface,
    SurfaceToUser,
    ApToUser,
}

impl LinkKind {
    /// AP-surface and surface-user hops are line-of-sight, the direct link is not.
    pub fn is_los(self) -> bool {
        !matches!(self, LinkKind::ApToUser)
    }
}

/// Rician K-factor of a link.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum RicianFactor {
    Db(f64),
    /// `K_f = 0` linear.
    Rayleigh,
}

impl RicianFactor {
    pub fn linear(self) -> f64 {
        match self {
            RicianFactor::Db(db) => 10f64.powf(db / 10.0),
            RicianFactor::Rayleigh => 0.0,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LinkSpec {
    pub kind: LinkKind,
    pub distance_m: f64,
    pub rician: RicianFactor,
    pub carrier_ghz: f64,
}

impl LinkSpec {
    pub fn new(kind: LinkKind, distance_m: f64, rician: RicianFactor, carrier_ghz: f64) -> Result<Self> {
        let link = Self {
            kind,
            distance_m,
            rician,
            carrier_ghz,
        };
        link.validate()?;
        Ok(link)
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.distance_m > 0.0) || !self.distance_m.is_finite() {
            return Err(Error::Validation(format!(
                "link distance must be positive, got {}",
                self.distance_m
            )));
        }
        if self.distance_m < 1.0 {
            return Err(Error::Validation(format!(
                "link distance {} m is below the 1 m validity of the path-loss model",
                self.distance_m
            )));
        }
        if !(self.carrier_ghz > 0.0) || !self.carrier_ghz.is_finite() {
            return Err(Error::Validation(format!(
                "carrier frequency must be positive, got {}",
                self.carrier_ghz
            )));
        }
        if let RicianFactor::Db(db) = self.rician {
            if !db.is_finite() {
                return Err(Error::Validation(format!("Rician factor must be finite, got {db} dB")));
            }
        }
        Ok(())
    }

    pub fn wavelength_m(&self) -> f64 {
        SPEED_OF_LIGHT / (self.carrier_ghz * 1e9)
    }

    /// Linear large-scale power gain `10^(-PL/10)`.
    pub fn large_scale_gain(&self) -> Result<f64> {
        Ok(10f64.powf(-path_loss_db(self)? / 10.0))
    }
}

/// Half-wavelength ULA response, element `i` = `exp(-j pi i sin(angle))`.
pub fn steering_vector(n: usize, angle: f64) -> DVector<C64> {
    assert!(n >= 1, "steering vector needs at least one element");
    assert!(
        (-PI / 2.0..=PI / 2.0).contains(&angle),
        "angle {angle} outside [-pi/2, pi/2]"
    );
    let s = angle.sin();
    DVector::from_fn(n, |i, _| C64::from_polar(1.0, -PI * i as f64 * s))
}

/// 3GPP UMi path loss in dB (LoS for the surface hops, NLoS for the direct link).
pub fn path_loss_db(link: &LinkSpec) -> Result<f64> {
    link.validate()?;
    let d = link.distance_m.log10();
    let f = link.carrier_ghz.log10();
    Ok(if link.kind.is_los() {
        22.0 * d + 28.0 + 20.0 * f
    } else {
        36.7 * d + 22.7 + 26.0 * f
    })
}

/// One Rician realization `rows x cols` for `link`.
///
/// Draw order is fixed: angle of arrival, angle of departure, then the
/// NLoS entries in column-major order.
pub fn draw_channel<R: Rng + ?Sized>(rows: usize, cols: usize, link: &LinkSpec, rng: &mut R) -> Result<CMat> {
    let gain = link.large_scale_gain()?;
    let aoa = rng.random_range(-PI / 2.0..=PI / 2.0);
    let aod = rng.random_range(-PI / 2.0..=PI / 2.0);
    let nlos = complex_gaussian(rows, cols, rng);

    let kf = link.rician.linear();
    let los_weight = (kf / (kf + 1.0)).sqrt();
    let nlos_weight = (1.0 / (kf + 1.0)).sqrt();

    let mut h = nlos.scale(nlos_weight);
    if los_weight > 0.0 {
        let phase = C64::from_polar(1.0, -2.0 * PI * link.distance_m / link.wavelength_m());
        let a_rx = steering_vector(rows, aoa);
        let a_tx = steering_vector(cols, aod);
        let los = (a_rx * a_tx.adjoint()) * phase;
        h += los.scale(los_weight);
    }
    Ok(h.scale(gain.sqrt()))
}

/// Distances and fading of the three link kinds.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Propagation {
    pub carrier_ghz: f64,
    pub d_surface_user_m: f64,
    pub d_ap_surface_m: f64,
    pub d_ap_user_m: f64,
    pub rician_ap_surface: RicianFactor,
    pub rician_surface_user: RicianFactor,
    pub rician_ap_user: RicianFactor,
}

impl Default for Propagation {
    fn default() -> Self {
        Self {
            carrier_ghz: 2.4,
            d_surface_user_m: 2.5,
            d_ap_surface_m: 50.0,
            d_ap_user_m: 51.0,
            rician_ap_surface: RicianFactor::Db(9.0),
            rician_surface_user: RicianFactor::Db(9.0),
            rician_ap_user: RicianFactor::Rayleigh,
        }
    }
}

impl Propagation {
    pub fn link(&self, kind: LinkKind) -> Result<LinkSpec> {
        let (d, k) = match kind {
            LinkKind::ApToSurface => (self.d_ap_surface_m, self.rician_ap_surface),
            LinkKind::SurfaceToUser => (self.d_surface_user_m, self.rician_surface_user),
            LinkKind::ApToUser => (self.d_ap_user_m, self.rician_ap_user),
        };
        LinkSpec::new(kind, d, k, self.carrier_ghz)
    }
}

/// Every channel matrix of one trial.
#[derive(Debug, Clone, PartialEq)]
pub struct ChannelSet {
    pub dims: SystemDims,
    /// `[surface][ap]`, each `R_b x N_a`.
    pub h_tx: Vec<Vec<CMat>>,
    /// `[surface][user]`, each `M x R_b`.
    pub h_rx: Vec<Vec<CMat>>,
    /// `[ap][user]`, each `M x N_a`.
    pub h_direct: Vec<Vec<CMat>>,
    pub include_direct: bool,
}

impl ChannelSet {
    /// Draws all channels of trial `key`. Each link uses its own stream so
    /// the draw of one link never depends on the sizes of the others.
    pub fn draw(
        dims: SystemDims,
        surface_sizes: &[usize],
        propagation: &Propagation,
        include_direct: bool,
        key: TrialKey,
    ) -> Result<Self> {
        dims.validate()?;
        let tx_link = propagation.link(LinkKind::ApToSurface)?;
        let rx_link = propagation.link(LinkKind::SurfaceToUser)?;
        let direct_link = propagation.link(LinkKind::ApToUser)?;

        let mut h_tx = Vec::with_capacity(surface_sizes.len());
        let mut h_rx = Vec::with_capacity(surface_sizes.len());
        for (b, &r) in surface_sizes.iter().enumerate() {
            let tx = (0..dims.aps)
                .map(|l| {
                    let mut rng = stream_rng(key, Stream::ApToSurface { surface: b, ap: l });
                    draw_channel(r, dims.ap_antennas, &tx_link, &mut rng)
                })
                .collect::<Result<Vec<_>>>()?;
            let rx = (0..dims.users)
                .map(|k| {
                    let mut rng = stream_rng(key, Stream::SurfaceToUser { surface: b, user: k });
                    draw_channel(dims.user_antennas, r, &rx_link, &mut rng)
                })
                .collect::<Result<Vec<_>>>()?;
            h_tx.push(tx);
            h_rx.push(rx);
        }
        let h_direct = (0..dims.aps)
            .map(|l| {
                (0..dims.users)
                    .map(|k| {
                        let mut rng = stream_rng(key, Stream::ApToUser { ap: l, user: k });
                        draw_channel(dims.user_antennas, dims.ap_antennas, &direct_link, &mut rng)
                    })
                    .collect::<Result<Vec<_>>>()
            })
            .collect::<Result<Vec<_>>>()?;
        Ok(Self {
            dims,
            h_tx,
            h_rx,
            h_direct,
            include_direct,
        })
    }

    pub fn surfaces(&self) -> usize {
        self.h_tx.len()
    }

    pub fn surface_size(&self, b: usize) -> usize {
        self.h_tx[b][0].nrows()
    }

    /// `H̄_TX^(b) = [H_TX,1^(b), ..., H_TX,L^(b)]`, `R_b x N_t`.
    pub fn h_tx_bar(&self, b: usize) -> CMat {
        hconcat(&self.h_tx[b])
    }

    /// `H̄_k = [H_1k, ..., H_Lk]`, zero when the direct link is disabled.
    pub fn h_bar(&self, k: usize) -> CMat {
        if self.include_direct {
            let blocks: Vec<CMat> = (0..self.dims.aps).map(|l| self.h_direct[l][k].clone()).collect();
            hconcat(&blocks)
        } else {
            CMat::zeros(self.dims.user_antennas, self.dims.tx_antennas())
        }
    }

    /// Surface-`b` contribution `H_RX,k^(b) Θ^(b) H̄_TX^(b)` (`M x N_t`).
    pub fn surface_term(&self, b: usize, theta: &CMat, k: usize) -> CMat {
        &self.h_rx[b][k] * theta * self.h_tx_bar(b)
    }

    pub fn check_thetas(&self, thetas: &[CMat]) -> Result<()> {
        if thetas.len() != self.surfaces() {
            return Err(Error::Validation(format!(
                "expected {} scattering matrices, got {}",
                self.surfaces(),
                thetas.len()
            )));
        }
        for (b, t) in thetas.iter().enumerate() {
            let r = self.surface_size(b);
            if t.nrows() != r || t.ncols() != r {
                return Err(Error::Validation(format!(
                    "surface {b}: expected {r}x{r} scattering matrix, got {}x{}",
                    t.nrows(),
                    t.ncols()
                )));
            }
        }
        Ok(())
    }
}

pub(crate) fn hconcat(blocks: &[CMat]) -> CMat {
    let rows = blocks[0].nrows();
    let cols: usize = blocks.iter().map(|b| b.ncols()).sum();
    let mut out = CMat::zeros(rows, cols);
    let mut c0 = 0;
    for blk in blocks {
        out.view_mut((0, c0), (rows, blk.ncols())).copy_from(blk);
        c0 += blk.ncols();
    }
    out
}

/// `E_k = [E_1k, ..., E_Lk]` with `E_lk = H_lk + Σ_b H_RX,k^(b) Θ^(b) H_TX,l^(b)`.
pub fn assemble_equivalent(channels: &ChannelSet, thetas: &[CMat], k: usize) -> Result<CMat> {
    channels.check_thetas(thetas)?;
    if k >= channels.dims.users {
        return Err(Error::Validation(format!("user index {k} out of range")));
    }
    let mut e = channels.h_bar(k);
    for (b, theta) in thetas.iter().enumerate() {
        e += channels.surface_term(b, theta, k);
    }
    Ok(e)
}

pub fn assemble_all(channels: &ChannelSet, thetas: &[CMat]) -> Result<Vec<CMat>> {
    (0..channels.dims.users)
        .map(|k| assemble_equivalent(channels, thetas, k))
        .collect()
}

/// Row/column slices of group `g` (0-based) for a surface with group size `R_G`.
#[derive(Debug, Clone)]
pub struct GroupSlice {
    /// Per user, `M x R_G` columns of `H_RX,k`.
    pub h_rx: Vec<CMat>,
    pub theta: CMat,
    /// `R_G x N_t` rows of `H̄_TX`.
    pub h_tx_bar: CMat,
}

pub fn slice_group(channels: &ChannelSet, b: usize, theta: &CMat, group_size: usize, g: usize) -> Result<GroupSlice> {
    let r = channels.surface_size(b);
    if group_size == 0 || !r.is_multiple_of(group_size) {
        return Err(Error::config(
            "surfaces.group_size",
            format!("{r} elements are not divisible into groups of {group_size}"),
        ));
    }
    if g >= r / group_size {
        return Err(Error::Validation(format!(
            "group {g} out of range for {} groups",
            r / group_size
        )));
    }
    let start = g * group_size;
    let m = channels.dims.user_antennas;
    let h_rx = channels.h_rx[b]
        .iter()
        .map(|h| h.view((0, start), (m, group_size)).into_owned())
        .collect();
    let theta_g = theta.view((start, start), (group_size, group_size)).into_owned();
    let tx_bar = channels.h_tx_bar(b);
    let h_tx_bar = tx_bar.view((start, 0), (group_size, tx_bar.ncols())).into_owned();
    Ok(GroupSlice {
        h_rx,
        theta: theta_g,
        h_tx_bar,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::numerics::{haar_unitary, takagi_from_unitary};
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn los(d: f64) -> LinkSpec {
        LinkSpec::new(LinkKind::ApToSurface, d, RicianFactor::Db(9.0), 2.4).unwrap()
    }

    #[test]
    fn steering_broadside_and_endfire() {
        let a = steering_vector(4, 0.0);
        assert!(a.iter().all(|z| (z - C64::new(1.0, 0.0)).norm() < 1e-15));
        let a = steering_vector(2, PI / 2.0);
        assert!((a[0] - C64::new(1.0, 0.0)).norm() < 1e-15);
        assert!((a[1] - C64::new(-1.0, 0.0)).norm() < 1e-15);
    }

    #[test]
    fn steering_matches_formula() {
        let a = steering_vector(8, 0.3);
        for i in 0..8 {
            let arg = -PI * i as f64 * 0.3f64.sin();
            let want = C64::new(arg.cos(), arg.sin());
            assert!((a[i] - want).norm() < 1e-14);
            assert!((a[i].norm() - 1.0).abs() < 1e-15);
        }
    }

    #[test]
    fn path_loss_values() {
        assert!((path_loss_db(&los(50.0)).unwrap() - 72.98).abs() < 5e-3);
        let nlos = LinkSpec::new(LinkKind::ApToUser, 51.0, RicianFactor::Rayleigh, 2.4).unwrap();
        // 36.7 log10(51) + 22.7 + 26 log10(2.4)
        assert!((path_loss_db(&nlos).unwrap() - 95.2535).abs() < 5e-3);
        assert!(path_loss_db(&los(100.0)).unwrap() > path_loss_db(&los(50.0)).unwrap());
    }

    #[test]
    fn nonpositive_distance_rejected() {
        assert!(LinkSpec::new(LinkKind::ApToUser, 0.0, RicianFactor::Rayleigh, 2.4).is_err());
        assert!(LinkSpec::new(LinkKind::ApToUser, -3.0, RicianFactor::Rayleigh, 2.4).is_err());
    }

    #[test]
    fn pure_los_is_rank_one() {
        let link = LinkSpec::new(LinkKind::SurfaceToUser, 10.0, RicianFactor::Db(120.0), 2.4).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        let h = draw_channel(4, 6, &link, &mut rng).unwrap();
        let g = link.large_scale_gain().unwrap().sqrt();
        let sv = h.unscale(g).singular_values();
        assert!((sv[0] - (24f64).sqrt()).abs() < 1e-4, "{sv}");
        assert!(sv.iter().skip(1).all(|&s| s < 1e-4));
    }

    #[test]
    fn rayleigh_normalization() {
        let link = LinkSpec::new(LinkKind::ApToUser, 51.0, RicianFactor::Rayleigh, 2.4).unwrap();
        let gain = link.large_scale_gain().unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(12);
        let n = 10_000;
        let mean: f64 = (0..n)
            .map(|_| draw_channel(2, 3, &link, &mut rng).unwrap().norm_squared() / (gain * 6.0))
            .sum::<f64>()
            / n as f64;
        assert!((0.97..=1.03).contains(&mean), "{mean}");
    }

    #[test]
    fn same_seed_bit_identical() {
        let dims = SystemDims::new(2, 2, 2, 2);
        let p = Propagation::default();
        let a = ChannelSet::draw(dims, &[4, 8], &p, true, TrialKey::new(5, 1)).unwrap();
        let b = ChannelSet::draw(dims, &[4, 8], &p, true, TrialKey::new(5, 1)).unwrap();
        assert_eq!(a, b);
        let c = ChannelSet::draw(dims, &[4, 8], &p, true, TrialKey::new(5, 2)).unwrap();
        assert_ne!(a, c);
    }

    fn small_set(sizes: &[usize], direct: bool) -> ChannelSet {
        ChannelSet::draw(
            SystemDims::new(3, 2, 2, 2),
            sizes,
            &Propagation::default(),
            direct,
            TrialKey::new(9, 0),
        )
        .unwrap()
    }

    #[test]
    fn zero_surfaces_is_direct_only() {
        let ch = small_set(&[], true);
        let e = assemble_equivalent(&ch, &[], 1).unwrap();
        assert_eq!(e, ch.h_bar(1));
    }

    #[test]
    fn single_surface_matches_concatenated_form() {
        let ch = small_set(&[6], true);
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let theta = takagi_from_unitary(&haar_unitary(6, &mut rng)).unwrap();
        for k in 0..2 {
            let e = assemble_equivalent(&ch, std::slice::from_ref(&theta), k).unwrap();
            let want = ch.h_bar(k) + &ch.h_rx[0][k] * &theta * ch.h_tx_bar(0);
            assert!((e - want).norm() < 1e-12 * ch.h_bar(k).norm().max(1e-30));
        }
    }

    #[test]
    fn per_ap_blocks_match_definition() {
        let ch = small_set(&[4, 4], true);
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        let thetas: Vec<CMat> = (0..2)
            .map(|_| takagi_from_unitary(&haar_unitary(4, &mut rng)).unwrap())
            .collect();
        let e = assemble_equivalent(&ch, &thetas, 0).unwrap();
        for l in 0..3 {
            let mut want = ch.h_direct[l][0].clone();
            for b in 0..2 {
                want += &ch.h_rx[b][0] * &thetas[b] * &ch.h_tx[b][l];
            }
            let got = e.view((0, 2 * l), (2, 2)).into_owned();
            assert!((got - &want).norm() <= 1e-12 * want.norm());
        }
    }

    #[test]
    fn group_sum_equals_full_product() {
        let ch = small_set(&[8], true);
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let rg = 2;
        let mut theta = CMat::zeros(8, 8);
        for g in 0..4 {
            let blk = takagi_from_unitary(&haar_unitary(rg, &mut rng)).unwrap();
            theta.view_mut((g * rg, g * rg), (rg, rg)).copy_from(&blk);
        }
        for k in 0..2 {
            let full = assemble_equivalent(&ch, std::slice::from_ref(&theta), k).unwrap();
            let mut sum = ch.h_bar(k);
            for g in 0..4 {
                let s = slice_group(&ch, 0, &theta, rg, g).unwrap();
                sum += &s.h_rx[k] * &s.theta * &s.h_tx_bar;
            }
            assert!((full - &sum).norm() <= 1e-12 * sum.norm());
        }
    }

    #[test]
    fn slice_group_indices() {
        let ch = small_set(&[4], true);
        let theta = CMat::from_fn(4, 4, |i, j| C64::new(i as f64, j as f64));
        let s = slice_group(&ch, 0, &theta, 2, 1).unwrap();
        assert_eq!(s.theta, theta.view((2, 2), (2, 2)).into_owned());
        let full = slice_group(&ch, 0, &theta, 4, 0).unwrap();
        assert_eq!(full.theta, theta);
        assert_eq!(full.h_tx_bar, ch.h_tx_bar(0));
        assert_eq!(full.h_rx[0], ch.h_rx[0][0]);
        assert!(matches!(slice_group(&ch, 0, &theta, 3, 0), Err(Error::Config { .. })));
    }

    #[test]
    fn equivalent_channel_linear_in_theta() {
        let ch = small_set(&[4], false);
        let mut rng = ChaCha8Rng::seed_from_u64(6);
        let t1 = complex_gaussian(4, 4, &mut rng);
        let t2 = complex_gaussian(4, 4, &mut rng);
        let zero = CMat::zeros(4, 4);
        let e0 = assemble_equivalent(&ch, std::slice::from_ref(&zero), 0).unwrap();
        let e1 = assemble_equivalent(&ch, std::slice::from_ref(&t1), 0).unwrap() - &e0;
        let e2 = assemble_equivalent(&ch, std::slice::from_ref(&t2), 0).unwrap() - &e0;
        let e12 = assemble_equivalent(&ch, &[&t1 + &t2], 0).unwrap() - &e0;
        assert!((e12 - (e1 + &e2)).norm() <= 1e-12 * e2.norm());
    }
}
