//! Deterministic random streams and the simplex-valued draws the samplers use.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Binomial, Distribution, Gamma};

/// Independent seed for replicate `index` of a study seeded with `base`
/// (splitmix64 finalizer over `base` and `index`).
pub fn derive_seed(base: u64, index: u64) -> u64 {
    let mut z = base ^ index.wrapping_add(1).wrapping_mul(0x9E37_79B9_7F4A_7C15);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

/// Generator for chain `chain` of a run seeded with `seed`: the ChaCha8
/// keystream for `seed`, on stream number `chain`.
pub fn chain_rng(seed: u64, chain: u64) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(chain);
    rng
}

/// `log G` for `G ~ Gamma(shape, 1)`.
///
/// Small shapes use `G = G' * U^(1/shape)` with `G' ~ Gamma(shape + 1, 1)`,
/// kept in log space so that tiny draws do not underflow to zero.
pub fn log_gamma_draw<R: Rng + ?Sized>(rng: &mut R, shape: f64) -> f64 {
    if shape >= 1.0 {
        Gamma::new(shape, 1.0).expect("positive shape").sample(rng).ln()
    } else {
        let boosted = Gamma::new(shape + 1.0, 1.0).expect("positive shape").sample(rng).ln();
        let u: f64 = 1.0 - rng.random::<f64>();
        boosted + u.ln() / shape
    }
}

/// Dirichlet draw; zero concentrations give exact zeros.
///
/// Non-zero coordinates are floored at the smallest positive normal so that
/// they stay strictly positive.
pub fn sample_dirichlet<R: Rng + ?Sized>(rng: &mut R, concentration: &[f64], out: &mut [f64]) {
    debug_assert_eq!(concentration.len(), out.len());
    let mut max = f64::NEG_INFINITY;
    for (o, &a) in out.iter_mut().zip(concentration) {
        if a > 0.0 {
            *o = log_gamma_draw(rng, a);
            max = max.max(*o);
        }
    }
    let mut total = 0.0;
    for (o, &a) in out.iter_mut().zip(concentration) {
        if a > 0.0 {
            *o = (*o - max).exp();
            total += *o;
        } else {
            *o = 0.0;
        }
    }
    for (o, &a) in out.iter_mut().zip(concentration) {
        if a > 0.0 {
            *o = (*o / total).max(f64::MIN_POSITIVE);
        }
    }
}

/// Multinomial draw by sequential conditional binomials; `weights` need not
/// be normalized. Counts are added into `out`.
pub fn sample_multinomial<R: Rng + ?Sized>(rng: &mut R, trials: u64, weights: &[f64], out: &mut [u64]) {
    let mut remaining = trials;
    let mut mass: f64 = weights.iter().sum();
    let last = weights.iter().rposition(|&w| w > 0.0).unwrap_or(0);
    for (i, &w) in weights.iter().enumerate() {
        if remaining == 0 {
            break;
        }
        if i == last {
            out[i] += remaining;
            break;
        }
        if w <= 0.0 {
            continue;
        }
        let prob = (w / mass).clamp(0.0, 1.0);
        let draw = Binomial::new(remaining, prob).expect("valid probability").sample(rng);
        out[i] += draw;
        remaining -= draw;
        mass -= w;
    }
}
