//! Seeded fixtures shared by the benchmarks.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use recgym_core::bicluster::Bicluster;
use recgym_core::grid::DistanceMatrix;
use recgym_core::ingest::{Dataset, RatingMatrix};
use recgym_core::synthetic::{ClickModel, SessionSynth};

pub fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

/// Users x items binary matrix with i.i.d. cells.
pub fn random_matrix(users: usize, items: usize, density: f64, seed: u64) -> RatingMatrix {
    let mut r = rng(seed);
    let rows: Vec<Vec<u8>> = (0..users)
        .map(|_| (0..items).map(|_| r.gen_bool(density) as u8).collect())
        .collect();
    RatingMatrix::from_dense(&rows).expect("non-empty matrix")
}

/// Jaccard distances between `count` biclusters over random user sets.
pub fn random_distances(count: usize, users: usize, seed: u64) -> DistanceMatrix {
    let mut r = rng(seed);
    let biclusters: Vec<Bicluster> = (0..count)
        .map(|_| {
            let members: Vec<usize> = (0..users).filter(|_| r.gen_bool(0.2)).collect();
            let members = if members.is_empty() { vec![0] } else { members };
            Bicluster::new(members, vec![0]).expect("non-empty bicluster")
        })
        .collect();
    DistanceMatrix::from_biclusters(&biclusters)
}

pub fn planted_sessions(sessions: usize, seed: u64) -> Dataset {
    SessionSynth {
        sessions,
        click_model: ClickModel::Planted,
        ..SessionSynth::default()
    }
    .generate(seed)
    .expect("valid synthetic config")
}
