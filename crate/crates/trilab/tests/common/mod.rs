//! Fixtures shared by the integration tests.
#![allow(dead_code)]

use std::sync::Arc;

use num_complex::Complex64;
use rand::RngExt;
use trilab::geometry::HypersurfacePatch;
use trilab::models;
use trilab::numeric::{seeded_rng, unravel};
use trilab::packets::{PacketLattice, build_lattice, lattice_grid, period_box};
use trilab::waves::{FreeWave, WaveBasis};

/// Double-cone patch with a packet lattice whose period holds `periods` spacings.
pub struct ConeSetup {
    pub patch: HypersurfacePatch,
    pub basis: Arc<WaveBasis>,
    pub lattice: PacketLattice,
    pub periods: usize,
}

pub fn cone_setup(big_r: f64, c: f64, periods: usize, half_width: f64) -> ConeSetup {
    let patch = models::double_cone(3, half_width).unwrap();
    let grid = lattice_grid(&[1.0, 0.0, 0.0], half_width, big_r, c, periods).unwrap();
    let basis = WaveBasis::new(patch.clone(), grid.clone()).unwrap();
    let lattice = build_lattice(&patch, &grid, big_r, c, period_box(&grid)).unwrap();
    ConeSetup {
        patch,
        basis,
        lattice,
        periods,
    }
}

/// True when every index keeps `pad` nodes to both grid edges.
pub fn interior(basis: &WaveBasis, k: usize, pad: usize) -> bool {
    let res = &basis.grid.res;
    let mut idx = vec![0; res.len()];
    unravel(k, res, &mut idx);
    idx.iter().zip(res).all(|(i, r)| *i >= pad && *i + pad < *r)
}

/// Uniform random complex amplitudes on nodes padded for the Fejer partition.
pub fn random_interior_wave(setup: &ConeSetup, seed: u64) -> FreeWave {
    let mut rng = seeded_rng(seed);
    let pad = setup.periods - 1;
    let amps = (0..setup.basis.grid.len())
        .map(|k| {
            let (re, im): (f64, f64) = (rng.random_range(-1.0..1.0), rng.random_range(-1.0..1.0));
            if interior(&setup.basis, k, pad) { Complex64::new(re, im) } else { Complex64::new(0.0, 0.0) }
        })
        .collect();
    FreeWave::new(setup.basis.clone(), amps).unwrap()
}

/// Amplitude one on the padded interior.
pub fn unit_interior_wave(basis: &Arc<WaveBasis>, pad: usize) -> FreeWave {
    let amps = (0..basis.grid.len())
        .map(|k| if interior(basis, k, pad) { Complex64::new(1.0, 0.0) } else { Complex64::new(0.0, 0.0) })
        .collect();
    FreeWave::new(basis.clone(), amps).unwrap()
}
