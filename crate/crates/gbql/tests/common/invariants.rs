//! Randomized invariant checks shared by the property tests and the
//! acceptance harness. Each takes a seed and reports a violation as `Err`.

use gbql::composition::SIMPLEX_TOL;
use gbql::sampler::ceil_count;
use gbql::{
    kl_divergence, mixture_predict, omega_hat, run_sampler, Composition, ConfusionMatrix, Dataset, GibbsSampler,
    LabeledInstance, LossModel, PriorSpec, SamplerConfig, SupportMask,
};
use nalgebra::SymmetricEigen;
use rand::Rng;

use super::{dataset, interior, interior_theta, rng, sparse};

type Check = Result<(), String>;

fn ensure(cond: bool, msg: impl FnOnce() -> String) -> Check {
    if cond {
        Ok(())
    } else {
        Err(msg())
    }
}

/// `Composition::new` accepts exactly the finite non-negative vectors summing
/// to one within tolerance; confusion matrices accept exactly stochastic rows.
pub fn simplex_validation(seed: u64) -> Check {
    let mut r = rng(seed);
    let c = r.random_range(1..=6);
    let values: Vec<f64> = (0..c)
        .map(|_| match r.random_range(0..10) {
            0 => -r.random::<f64>() * 1e-3,
            1 => 0.0,
            _ => r.random::<f64>(),
        })
        .collect();
    // Half the cases land on the simplex, possibly with a small perturbation.
    let values = if r.random_bool(0.5) && values.iter().all(|&v| v >= 0.0) && values.iter().sum::<f64>() > 0.0 {
        let s: f64 = values.iter().sum();
        let jitter = [0.0, 5e-10, 2e-9][r.random_range(0..3)];
        let mut v: Vec<f64> = values.iter().map(|x| x / s).collect();
        v[0] += jitter;
        v
    } else {
        values
    };
    let valid = values.iter().all(|&v| v >= 0.0) && (values.iter().sum::<f64>() - 1.0).abs() <= SIMPLEX_TOL;
    let accepted = Composition::new(values.clone()).is_ok();
    ensure(valid == accepted, || format!("composition {values:?}: valid {valid}, accepted {accepted}"))?;

    let rows: Vec<Vec<f64>> = (0..c)
        .map(|i| if i == 0 { values.clone() } else { interior(&mut r, c, 1.0).into_vec() })
        .collect();
    let accepted = ConfusionMatrix::from_rows(rows).is_ok();
    ensure(valid == accepted, || format!("confusion with first row {values:?}: valid {valid}, accepted {accepted}"))
}

/// `KL(a, q) >= 0`, with equality at `q = a`.
pub fn kl_nonnegative(seed: u64) -> Check {
    let mut r = rng(seed);
    let c = r.random_range(2..=6);
    let a = sparse(&mut r, c);
    let q = interior(&mut r, c, 0.5);
    let d = kl_divergence(&a, &q).map_err(|e| e.to_string())?;
    ensure(d >= -1e-12, || format!("KL({a:?}, {q:?}) = {d}"))?;
    let self_d = kl_divergence(&a, &a).map_err(|e| e.to_string())?;
    ensure(self_d.abs() <= 1e-12, || format!("KL(a, a) = {self_d}"))
}

/// The unlabeled loss depends on `(M, p)` only through the mixture `M'p`.
pub fn unlabeled_mixture_identity(seed: u64) -> Check {
    let mut r = rng(seed);
    let c = r.random_range(2..=5);
    let k = r.random_range(1..=3);
    let data = dataset(&mut r, c, k, 10, 0);
    let theta = interior_theta(&mut r, c, k);
    let model = LossModel::new(&data);
    let flat: Vec<Vec<f64>> = theta.confusions.iter().map(ConfusionMatrix::to_flat).collect();
    let lhs = model.unlabeled_raw(&flat, theta.prevalence.as_slice()).map_err(|e| e.to_string())?;
    // Each classifier's mixture is carried by its own identity-confusion copy,
    // so compare classifier by classifier.
    let mut rhs = 0.0;
    for (kk, m) in theta.confusions.iter().enumerate() {
        let q = mixture_predict(m, &theta.prevalence).map_err(|e| e.to_string())?;
        let single = LossModel::new(&data.select_classifier(kk));
        rhs += single
            .unlabeled_raw(&[ConfusionMatrix::identity(c).to_flat()], q.as_slice())
            .map_err(|e| e.to_string())?;
    }
    ensure((lhs - rhs).abs() <= 1e-10 * lhs.abs().max(1.0), || format!("l_U(M, p) = {lhs}, l_U(I, M'p) = {rhs}"))
}

/// `0 <= ceil(T a)/T - a <= 1/T`, and the count is zero exactly when `a` is.
/// Counts snapped down onto an integer may sit below `T a` by the snapping
/// tolerance, which the lower bound allows for.
pub fn rounding_bound(seed: u64) -> Check {
    let mut r = rng(seed);
    let t: u64 = match r.random_range(0..3) {
        0 => r.random_range(1..=10),
        1 => r.random_range(1..=1000),
        _ => r.random_range(1..=1_000_000),
    };
    let a: f64 = match r.random_range(0..5) {
        0 => 0.0,
        1 => 1.0,
        2 => r.random_range(0..=t) as f64 / t as f64,
        _ => r.random(),
    };
    let n = ceil_count(a, t);
    let gap = n as f64 / t as f64 - a;
    let slack = 1e-9 * (a * t as f64).max(1.0) / t as f64;
    ensure((n == 0) == (a == 0.0), || format!("a = {a}, T = {t}: count {n}"))?;
    ensure(gap >= -slack && gap <= 1.0 / t as f64 + 1e-15, || format!("a = {a}, T = {t}: count {n}, gap {gap}"))
}

/// Every latent allocation sums back to the pseudo-counts it splits.
pub fn allocation_conservation(seed: u64) -> Check {
    let mut r = rng(seed);
    let c = r.random_range(2..=5);
    let k = r.random_range(1..=3);
    let (n_u, n_l) = (r.random_range(1..=12), r.random_range(0..=6));
    let data = dataset(&mut r, c, k, n_u, n_l);
    let priors = PriorSpec::flat(c, k);
    let config = SamplerConfig {
        coarsening: Some(r.random_range(1..=200)),
        ..SamplerConfig::default()
    };
    let sampler = GibbsSampler::new(&data, &priors, &config).map_err(|e| e.to_string())?;
    let state = sampler.initial_state(&mut r);
    let alloc = sampler.allocate(&state, &mut r).map_err(|e| e.to_string())?;
    for (kk, totals) in sampler.unlabeled_totals().iter().enumerate() {
        for (j, &n) in totals.iter().enumerate() {
            let s: u64 = alloc.unlabeled[kk][j].iter().sum();
            ensure(s == n, || format!("unlabeled k={kk} j={j}: allocated {s} of {n}"))?;
        }
    }
    for (inst, counts) in alloc.labeled.iter().zip(sampler.uncertain_counts()) {
        for (kk, row) in counts.iter().enumerate() {
            for (j, &n) in row.iter().enumerate() {
                let s: u64 = inst[kk][j].iter().sum();
                ensure(s == n, || format!("labeled k={kk} j={j}: allocated {s} of {n}"))?;
            }
        }
    }
    Ok(())
}

/// `Omega-hat` is symmetric positive semi-definite.
pub fn omega_psd(seed: u64) -> Check {
    let mut r = rng(seed);
    let c = r.random_range(2..=4);
    let k = r.random_range(1..=2);
    let (n_u, n_l) = (r.random_range(2..=12), r.random_range(2..=6));
    let data = dataset(&mut r, c, k, n_u, n_l);
    let theta = interior_theta(&mut r, c, k);
    let s = omega_hat(&theta, &data).map_err(|e| e.to_string())?;
    let o = &s.omega_hat;
    let scale = o.abs().max().max(1e-300);
    ensure((o - o.transpose()).abs().max() <= 1e-12 * scale, || "omega not symmetric".into())?;
    let min = SymmetricEigen::new(o.clone()).eigenvalues.min();
    ensure(min >= -1e-10 * scale, || format!("omega eigenvalue {min} (scale {scale})"))
}

/// Under a sparse prior, off-support confusion entries stay exactly zero in
/// every draw.
pub fn zero_support_preserved(seed: u64) -> Check {
    let mut r = rng(seed);
    let c = r.random_range(2..=4);
    let k = r.random_range(1..=2);
    let supports: Vec<SupportMask> = (0..k)
        .map(|_| {
            SupportMask::new((0..c).map(|i| (0..c).map(|j| i == j || r.random_bool(0.5)).collect()).collect())
                .unwrap()
        })
        .collect();
    // Exact-label predictions must respect the support of their true class.
    let on_support = |r: &mut rand_chacha::ChaCha8Rng, s: &SupportMask, y: usize| {
        let w: Vec<f64> = (0..c).map(|j| if s.allows(y, j) { r.random::<f64>() + 0.01 } else { 0.0 }).collect();
        Composition::normalize(w).unwrap()
    };
    let unlabeled: Vec<Vec<Composition>> =
        (0..r.random_range(1..=10)).map(|_| (0..k).map(|_| sparse(&mut r, c)).collect()).collect();
    let labeled: Vec<LabeledInstance> = (0..r.random_range(0..=5))
        .map(|_| {
            let y = r.random_range(0..c);
            LabeledInstance {
                predictions: supports.iter().map(|s| on_support(&mut r, s, y)).collect(),
                belief: Composition::basis(c, y),
            }
        })
        .collect();
    let data = Dataset::new(unlabeled, labeled).map_err(|e| e.to_string())?;
    let priors = PriorSpec::sparse(supports.clone(), 1.0).map_err(|e| e.to_string())?;
    let config = SamplerConfig {
        chains: 1,
        iterations: 4,
        burn_in: 0,
        seed,
        ..SamplerConfig::default()
    };
    let samples = run_sampler(&data, &priors, &config).map_err(|e| e.to_string())?;
    for draw in samples.draws() {
        for (m, s) in draw.confusions.iter().zip(&supports) {
            for i in 0..c {
                for j in 0..c {
                    if !s.allows(i, j) && m.get(i, j) != 0.0 {
                        return Err(format!("entry ({i}, {j}) = {} outside support", m.get(i, j)));
                    }
                }
            }
        }
    }
    Ok(())
}

/// Every invariant, in reporting order.
pub const ALL: [(&str, fn(u64) -> Check); 7] = [
    ("simplex and row-stochastic validation", simplex_validation),
    ("KL nonnegativity", kl_nonnegative),
    ("unlabeled loss identity l_U(M,p) = l_U(I,M'p)", unlabeled_mixture_identity),
    ("rounding bound 0 <= ceil(Ta)/T - a <= 1/T", rounding_bound),
    ("allocation-count conservation", allocation_conservation),
    ("Omega-hat PSD", omega_psd),
    ("zero-support preservation", zero_support_preserved),
];
