#![allow(dead_code)]

use std::collections::BTreeSet;

use edm_core::stream::{brute_force_neighbors, DetectorParams, StreamObject};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};

/// Clustered values plus uniform noise, with occasional simultaneous arrivals
/// and quantized values so radius ties actually occur.
pub fn random_stream(seed: u64, n: usize) -> Vec<StreamObject> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let centers: Vec<f64> = (0..5).map(|_| rng.random_range(0.0..100.0)).collect();
    let spreads: Vec<f64> = (0..5).map(|_| rng.random_range(0.3..5.0)).collect();
    let quantize = rng.random_bool(0.3);
    let mut t = 0.0f64;
    (0..n as u64)
        .map(|id| {
            if !rng.random_bool(0.1) {
                t += rng.random_range(0.0..2.0);
            }
            let mut v = if rng.random_bool(0.7) {
                let c = rng.random_range(0..centers.len());
                Normal::new(centers[c], spreads[c])
                    .unwrap()
                    .sample(&mut rng)
            } else {
                rng.random_range(-50.0..150.0)
            };
            if quantize {
                v = (v * 4.0).round() / 4.0;
            }
            StreamObject::new(id, t, v, format!("src-{}", id % 17))
        })
        .collect()
}

/// Object ids 1..=18 arriving at t = id. o9's neighbors are o5, o10, o14, o15;
/// o11's are o3, o4, o6, o13. Every other object sits alone.
pub fn worked_example_stream() -> Vec<StreamObject> {
    let values = [
        (1, 31.0),
        (2, 34.0),
        (3, 20.0),
        (4, 20.3),
        (5, 10.0),
        (6, 19.8),
        (7, 37.0),
        (8, 40.0),
        (9, 10.0),
        (10, 10.2),
        (11, 20.0),
        (12, 43.0),
        (13, 20.5),
        (14, 9.8),
        (15, 10.1),
        (16, 46.0),
        (17, 49.0),
        (18, 52.0),
    ];
    values
        .iter()
        .map(|&(id, v)| StreamObject::new(id, id as f64, v, format!("o{id}")))
        .collect()
}

pub fn neighbor_set(objects: &[StreamObject], id: u64, params: &DetectorParams) -> BTreeSet<u64> {
    brute_force_neighbors(objects, id, params)
}

/// The (R, k, W) grid the oracle suite sweeps over.
pub fn grid_params(seed: u64, mode: edm_core::Mode) -> DetectorParams {
    let radius = [0.1, 1.0, 10.0][(seed % 3) as usize];
    let k = [1, 3, 10][((seed / 3) % 3) as usize];
    let span = [16.0, 100.0, 1000.0][((seed / 9) % 3) as usize];
    DetectorParams::new(radius, k, span, mode)
}

pub fn grid_len(seed: u64) -> usize {
    [1_000, 3_000, 10_000][((seed / 27) % 3) as usize]
}
