mod common;

use gbql::{minimize_loss, grad_loss, hessian_loss, loss_total, omega_hat, Composition, ConfusionMatrix, Dataset, LabeledInstance, Theta};
use proptest::prelude::*;

fn loss_at(free: &[f64], theta: &Theta, data: &Dataset) -> f64 {
    let t = Theta::from_free(free, theta.classes(), theta.classifiers()).unwrap();
    loss_total(&t, data).unwrap()
}

/// Central-difference gradient of the loss.
fn fd_gradient(theta: &Theta, data: &Dataset, h: f64) -> Vec<f64> {
    let x = theta.to_free();
    (0..x.len())
        .map(|i| {
            let mut up = x.clone();
            let mut dn = x.clone();
            up[i] += h;
            dn[i] -= h;
            (loss_at(&up, theta, data) - loss_at(&dn, theta, data)) / (2.0 * h)
        })
        .collect()
}

/// Richardson-extrapolated four-point second difference of the loss.
fn fd_hessian(theta: &Theta, data: &Dataset, h: f64) -> Vec<Vec<f64>> {
    let coarse = fd_hessian_step(theta, data, h);
    let fine = fd_hessian_step(theta, data, h / 2.0);
    coarse
        .iter()
        .zip(&fine)
        .map(|(c, f)| c.iter().zip(f).map(|(c, f)| (4.0 * f - c) / 3.0).collect())
        .collect()
}

fn fd_hessian_step(theta: &Theta, data: &Dataset, h: f64) -> Vec<Vec<f64>> {
    let x = theta.to_free();
    let d = x.len();
    let f = |di: f64, i: usize, dj: f64, j: usize| {
        let mut y = x.clone();
        y[i] += di;
        y[j] += dj;
        loss_at(&y, theta, data)
    };
    let mut out = vec![vec![0.0; d]; d];
    for i in 0..d {
        for j in 0..d {
            out[i][j] = (f(h, i, h, j) - f(h, i, -h, j) - f(-h, i, h, j) + f(-h, i, -h, j)) / (4.0 * h * h);
        }
    }
    out
}

fn check_point(seed: u64, c: usize, k: usize) -> (f64, f64) {
    let mut rng = common::rng(seed);
    let data = common::dataset(&mut rng, c, k, 40, 15);
    let theta = common::interior_theta(&mut rng, c, k);
    let g = grad_loss(&theta, &data).unwrap();
    let g_fd = fd_gradient(&theta, &data, 1e-6);
    let g_scale = g_fd.iter().fold(1.0f64, |m, v| m.max(v.abs()));
    let g_err = g.iter().zip(&g_fd).fold(0.0f64, |m, (a, b)| m.max((a - b).abs())) / g_scale;
    let h = hessian_loss(&theta, &data).unwrap();
    let h_fd = fd_hessian(&theta, &data, 2e-4);
    let h_scale = h_fd.iter().flatten().fold(1.0f64, |m, v| m.max(v.abs()));
    let mut h_err = 0.0f64;
    for (i, row) in h_fd.iter().enumerate() {
        for (j, v) in row.iter().enumerate() {
            h_err = h_err.max((h[(i, j)] - v).abs());
        }
    }
    (g_err, h_err / h_scale)
}

#[test]
fn derivatives_match_finite_differences() {
    for &(c, k) in &[(2, 1), (2, 3), (5, 1), (5, 3)] {
        for seed in 0..5 {
            let (g_err, h_err) = check_point(seed, c, k);
            assert!(g_err < 1e-5, "C={c} K={k} seed={seed}: gradient rel err {g_err}");
            assert!(h_err < 1e-4, "C={c} K={k} seed={seed}: Hessian rel err {h_err}");
        }
    }
}

#[test]
fn omega_is_symmetric_psd() {
    for seed in 0..10 {
        let mut rng = common::rng(100 + seed);
        let data = common::dataset(&mut rng, 3, 2, 30, 10);
        let theta = common::interior_theta(&mut rng, 3, 2);
        let s = omega_hat(&theta, &data).unwrap();
        let o = &s.omega_hat;
        assert!((o - o.transpose()).abs().max() < 1e-12);
        let min_eig = o.clone().symmetric_eigenvalues().min();
        assert!(min_eig > -1e-9 * o.abs().max().max(1.0), "min eigenvalue {min_eig}");
    }
}

#[test]
fn loss_consistent_as_sample_grows() {
    // Predictions drawn as noisy copies of the model mixture: f_N converges,
    // so the increments between successive doublings shrink.
    let mut rng = common::rng(9);
    let theta = common::interior_theta(&mut rng, 3, 1);
    let q = gbql::mixture_predict(&theta.confusions[0], &theta.prevalence).unwrap();
    let draw = |rng: &mut rand_chacha::ChaCha8Rng| {
        let noise = common::interior(rng, 3, 20.0);
        Composition::normalize(q.as_slice().iter().zip(noise.as_slice()).map(|(a, b)| a * b).collect()).unwrap()
    };
    let mut rows = Vec::new();
    let mut values = Vec::new();
    for size in [500, 2000, 8000, 32000] {
        while rows.len() < size {
            rows.push(draw(&mut rng));
        }
        let data = Dataset::single(rows.clone(), vec![]).unwrap();
        values.push(loss_total(&theta, &data).unwrap());
    }
    let d1 = (values[1] - values[0]).abs();
    let d3 = (values[3] - values[2]).abs();
    assert!(d3 < d1.max(1e-3), "{values:?}");
}

fn arb_case() -> impl Strategy<Value = (u64, usize, usize)> {
    (any::<u64>(), 2usize..=5, 1usize..=3)
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(1000))]

    #[test]
    fn loss_is_nonnegative((seed, c, k) in arb_case()) {
        let mut rng = common::rng(seed);
        let data = common::dataset(&mut rng, c, k, 6, 3);
        let theta = common::interior_theta(&mut rng, c, k);
        prop_assert!(loss_total(&theta, &data).unwrap() >= 0.0);
    }

    #[test]
    fn unlabeled_loss_depends_on_mixture_only((seed, c) in (any::<u64>(), 2usize..=5)) {
        let mut rng = common::rng(seed);
        let data = common::dataset(&mut rng, c, 1, 8, 0);
        let theta = common::interior_theta(&mut rng, c, 1);
        let q = gbql::mixture_predict(&theta.confusions[0], &theta.prevalence).unwrap();
        let collapsed = Theta::new(vec![ConfusionMatrix::identity(c)], q).unwrap();
        let a = loss_total(&theta, &data).unwrap();
        let b = loss_total(&collapsed, &data).unwrap();
        prop_assert!((a - b).abs() <= 1e-10 * a.abs().max(1.0));
    }

    #[test]
    fn loss_invariant_to_class_relabeling((seed, c, k) in arb_case()) {
        let mut rng = common::rng(seed);
        let data = common::dataset(&mut rng, c, k, 6, 3);
        let theta = common::interior_theta(&mut rng, c, k);
        let perm: Vec<usize> = (0..c).rev().collect();
        let pc = |a: &Composition| Composition::new(perm.iter().map(|&i| a.get(i)).collect()).unwrap();
        let permuted = Dataset::new(
            data.unlabeled().iter().map(|r| r.iter().map(pc).collect()).collect(),
            data.labeled()
                .iter()
                .map(|l| LabeledInstance { predictions: l.predictions.iter().map(pc).collect(), belief: pc(&l.belief) })
                .collect(),
        )
        .unwrap();
        let confusions = theta
            .confusions
            .iter()
            .map(|m| {
                ConfusionMatrix::from_rows(
                    perm.iter().map(|&i| perm.iter().map(|&j| m.get(i, j)).collect()).collect(),
                )
                .unwrap()
            })
            .collect();
        let ptheta = Theta::new(confusions, pc(&theta.prevalence)).unwrap();
        let a = loss_total(&theta, &data).unwrap();
        let b = loss_total(&ptheta, &permuted).unwrap();
        prop_assert!((a - b).abs() <= 1e-10 * a.abs().max(1.0));
    }

    #[test]
    fn hessian_is_symmetric((seed, c, k) in arb_case()) {
        let mut rng = common::rng(seed);
        let data = common::dataset(&mut rng, c, k, 6, 3);
        let theta = common::interior_theta(&mut rng, c, k);
        let h = hessian_loss(&theta, &data).unwrap();
        let scale = h.abs().max().max(1.0);
        prop_assert!((&h - h.transpose()).abs().max() <= 1e-12 * scale);
    }

    #[test]
    fn labeled_block_is_positive_definite((seed, c, k) in arb_case()) {
        // With interior predictions on every labeled instance of every class,
        // the confusion block of the Hessian is positive definite.
        let mut rng = common::rng(seed);
        let labeled: Vec<LabeledInstance> = (0..c)
            .flat_map(|y| (0..2).map(move |_| y))
            .map(|y| LabeledInstance {
                predictions: (0..k).map(|_| common::interior(&mut rng, c, 1.0)).collect(),
                belief: Composition::basis(c, y),
            })
            .collect();
        let unlabeled = vec![(0..k).map(|_| common::interior(&mut rng, c, 1.0)).collect()];
        let data = Dataset::new(unlabeled, labeled).unwrap();
        let theta = common::interior_theta(&mut rng, c, k);
        let h = hessian_loss(&theta, &data).unwrap();
        let m = k * c * (c - 1);
        let block = h.view((0, 0), (m, m)).into_owned();
        prop_assert!(block.cholesky().is_some());
    }
}

#[test]
fn minimizer_is_stationary_and_consistent() {
    let mut rng = common::rng(21);
    let m = ConfusionMatrix::from_rows(vec![vec![0.8, 0.1, 0.1], vec![0.15, 0.7, 0.15], vec![0.1, 0.2, 0.7]]).unwrap();
    let truth = Theta::new(vec![m], Composition::new(vec![0.5, 0.3, 0.2]).unwrap()).unwrap();
    let mut errors = Vec::new();
    for n in [500, 5000] {
        let mut total = 0.0;
        for _ in 0..8 {
            let data = common::model_sample(&truth, n, &mut rng);
            let fit = minimize_loss(&data, &truth, 200).unwrap();
            assert!(fit.converged, "n = {n}");
            assert!(fit.value <= loss_total(&truth, &data).unwrap());
            let g = grad_loss(&fit.theta, &data).unwrap();
            assert!(g.iter().all(|x| x.abs() < 1e-8));
            total += fit
                .theta
                .prevalence
                .as_slice()
                .iter()
                .zip(truth.prevalence.as_slice())
                .map(|(a, b)| (a - b).abs())
                .sum::<f64>();
        }
        errors.push(total / 8.0);
    }
    assert!(errors[1] < errors[0], "{errors:?}");
}
