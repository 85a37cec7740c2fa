#![allow(dead_code)]

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use rbdris::beamformer::BeamformerSet;
use rbdris::channel::{ChannelSet, SystemDims};
use rbdris::numerics::{complex_gaussian, CMat};
use rbdris::scattering::{init_scattering, Architecture, ScatteringState};

pub fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

/// Unit-variance Gaussian channels, no path loss.
pub fn random_channels(dims: SystemDims, sizes: &[usize], include_direct: bool, rng: &mut ChaCha8Rng) -> ChannelSet {
    let h_tx = sizes
        .iter()
        .map(|&r| {
            (0..dims.aps)
                .map(|_| complex_gaussian(r, dims.ap_antennas, rng))
                .collect()
        })
        .collect();
    let h_rx = sizes
        .iter()
        .map(|&r| {
            (0..dims.users)
                .map(|_| complex_gaussian(dims.user_antennas, r, rng))
                .collect()
        })
        .collect();
    let h_direct = (0..dims.aps)
        .map(|_| {
            (0..dims.users)
                .map(|_| complex_gaussian(dims.user_antennas, dims.ap_antennas, rng))
                .collect()
        })
        .collect();
    ChannelSet {
        dims,
        h_tx,
        h_rx,
        h_direct,
        include_direct,
    }
}

pub fn random_states(specs: &[(usize, Architecture)], rng: &mut ChaCha8Rng) -> Vec<ScatteringState> {
    specs
        .iter()
        .enumerate()
        .map(|(b, &(r, a))| init_scattering(b, a, r, rng).unwrap())
        .collect()
}

pub fn thetas(states: &[ScatteringState]) -> Vec<CMat> {
    states.iter().map(|s| s.theta().clone()).collect()
}

pub fn random_bf(dims: SystemDims, scale: f64, rng: &mut ChaCha8Rng) -> BeamformerSet {
    let v = (0..dims.users)
        .map(|_| complex_gaussian(dims.tx_antennas(), dims.user_antennas, rng).scale(scale))
        .collect();
    BeamformerSet::from_v(dims, v).unwrap()
}

pub fn random_dims(rng: &mut ChaCha8Rng, max: usize) -> SystemDims {
    SystemDims::new(
        rng.random_range(1..=max),
        rng.random_range(1..=max),
        rng.random_range(1..=max),
        rng.random_range(1..=max),
    )
}

pub fn rel_err(a: f64, b: f64) -> f64 {
    (a - b).abs() / a.abs().max(b.abs()).max(f64::MIN_POSITIVE)
}
