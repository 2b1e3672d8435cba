//! Shared helpers for integration tests.
#![allow(dead_code)]

use nalgebra::Vector3;
use rand::Rng;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

pub fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

/// Random positively oriented tet in the unit cube with volume >= 0.02
/// (rejection-sampled to avoid slivers).
pub fn random_tet(rng: &mut impl Rng) -> [Vector3<f64>; 4] {
    loop {
        let mut v = [Vector3::zeros(); 4];
        for p in v.iter_mut() {
            *p = Vector3::new(rng.gen::<f64>(), rng.gen::<f64>(), rng.gen::<f64>());
        }
        let vol = (v[1] - v[0]).cross(&(v[2] - v[0])).dot(&(v[3] - v[0])) / 6.0;
        if vol.abs() > 0.02 {
            if vol < 0.0 {
                v.swap(2, 3);
            }
            return v;
        }
    }
}

/// Uniformly scaled copy of a tet about its centroid: `c + s (v - c)`.
pub fn scaled_tet(base: &[Vector3<f64>; 4], s: f64) -> [Vector3<f64>; 4] {
    let c = (base[0] + base[1] + base[2] + base[3]) / 4.0;
    [
        c + (base[0] - c) * s,
        c + (base[1] - c) * s,
        c + (base[2] - c) * s,
        c + (base[3] - c) * s,
    ]
}
