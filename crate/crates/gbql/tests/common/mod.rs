#![allow(dead_code)]

pub mod invariants;

use gbql::{Composition, ConfusionMatrix, Dataset, LabeledInstance, Theta};
use rand::Rng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Gamma};

pub fn rng(seed: u64) -> ChaCha8Rng {
    gbql::rng::chain_rng(seed, 0)
}

/// Dirichlet draw kept strictly inside the simplex.
pub fn interior(rng: &mut ChaCha8Rng, c: usize, shape: f64) -> Composition {
    let g = Gamma::new(shape, 1.0).unwrap();
    let w: Vec<f64> = (0..c).map(|_| g.sample(rng).max(1e-3)).collect();
    Composition::normalize(w).unwrap()
}

/// Composition with some entries exactly zero.
pub fn sparse(rng: &mut ChaCha8Rng, c: usize) -> Composition {
    let mut w: Vec<f64> = (0..c).map(|_| if rng.random_bool(0.4) { 0.0 } else { rng.random::<f64>() + 0.05 }).collect();
    if w.iter().all(|&x| x == 0.0) {
        w[rng.random_range(0..c)] = 1.0;
    }
    Composition::normalize(w).unwrap()
}

pub fn interior_theta(rng: &mut ChaCha8Rng, c: usize, k: usize) -> Theta {
    let confusions = (0..k)
        .map(|_| ConfusionMatrix::from_compositions((0..c).map(|_| interior(rng, c, 2.0)).collect()).unwrap())
        .collect();
    Theta::new(confusions, interior(rng, c, 2.0)).unwrap()
}

/// Random dataset mixing interior, sparse and exact-label instances.
pub fn dataset(rng: &mut ChaCha8Rng, c: usize, k: usize, n_u: usize, n_l: usize) -> Dataset {
    let pick = |rng: &mut ChaCha8Rng| {
        if rng.random_bool(0.3) {
            sparse(rng, c)
        } else {
            interior(rng, c, 1.0)
        }
    };
    let unlabeled = (0..n_u).map(|_| (0..k).map(|_| pick(rng)).collect()).collect();
    let labeled = (0..n_l)
        .map(|_| LabeledInstance {
            predictions: (0..k).map(|_| pick(rng)).collect(),
            belief: if rng.random_bool(0.5) {
                Composition::basis(c, rng.random_range(0..c))
            } else {
                interior(rng, c, 1.0)
            },
        })
        .collect();
    Dataset::new(unlabeled, labeled).unwrap()
}

/// Categorical predictions drawn from the model itself: `N` unlabeled and
/// `0.3 N` exact-label instances.
pub fn model_sample(theta: &Theta, n: usize, rng: &mut rand_chacha::ChaCha8Rng) -> Dataset {
    use rand::distr::{weighted::WeightedIndex, Distribution};
    let c = theta.classes();
    let pick = |w: &[f64], rng: &mut rand_chacha::ChaCha8Rng| WeightedIndex::new(w).unwrap().sample(rng);
    let instance = |rng: &mut rand_chacha::ChaCha8Rng| {
        let y = pick(theta.prevalence.as_slice(), rng);
        let a = pick(theta.confusions[0].row(y).as_slice(), rng);
        (Composition::basis(c, a), Composition::basis(c, y))
    };
    let unlabeled = (0..n).map(|_| instance(rng).0).collect();
    let labeled = (0..n * 3 / 10).map(|_| instance(rng)).collect();
    Dataset::single(unlabeled, labeled).unwrap()
}
