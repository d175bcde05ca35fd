mod common;

use std::io::Cursor;
use std::path::Path;

use gbql::io::{assemble_dataset, parse_labels, parse_predictions, ReadOptions};
use gbql::quantifiers::dirichlet_mean;
use gbql::sampler::{conjugate_posterior, is_conjugate};
use gbql::{
    conjugate_sampler, mh_reference_sampler, posterior_mean, run_sampler, Composition, ConfusionMatrix, PriorSpec,
    SamplerConfig,
};
use proptest::prelude::*;

fn predictions_csv(rows: &[Vec<Composition>]) -> String {
    let c = rows[0][0].dim();
    let mut out = String::from("id,classifier");
    for j in 1..=c {
        out.push_str(&format!(",a_{j}"));
    }
    out.push('\n');
    for (r, preds) in rows.iter().enumerate() {
        for (k, a) in preds.iter().enumerate() {
            out.push_str(&format!("i{r},clf{k}"));
            for v in a.as_slice() {
                out.push_str(&format!(",{v}"));
            }
            out.push('\n');
        }
    }
    out
}

fn labels_csv(beliefs: &[Composition]) -> String {
    let c = beliefs[0].dim();
    let mut out = String::from("id");
    for j in 1..=c {
        out.push_str(&format!(",b_{j}"));
    }
    out.push('\n');
    for (r, b) in beliefs.iter().enumerate() {
        out.push_str(&format!("i{r}"));
        for v in b.as_slice() {
            out.push_str(&format!(",{v}"));
        }
        out.push('\n');
    }
    out
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(200))]

    #[test]
    fn csv_round_trip_is_exact((seed, c, k) in (any::<u64>(), 2usize..=5, 1usize..=3)) {
        let mut rng = common::rng(seed);
        let data = common::dataset(&mut rng, c, k, 5, 4);
        let opts = ReadOptions::default();
        let u = parse_predictions(Cursor::new(predictions_csv(data.unlabeled())), Path::new("u.csv"), opts).unwrap();
        let lp: Vec<Vec<Composition>> = data.labeled().iter().map(|l| l.predictions.clone()).collect();
        let beliefs: Vec<Composition> = data.labeled().iter().map(|l| l.belief.clone()).collect();
        let l = parse_predictions(Cursor::new(predictions_csv(&lp)), Path::new("l.csv"), opts).unwrap();
        let b = parse_labels(Cursor::new(labels_csv(&beliefs)), Path::new("b.csv"), opts).unwrap();
        prop_assert_eq!(u.renormalized + l.renormalized + b.renormalized, 0);
        let (back, names) = assemble_dataset(&u, Some((&l, &b)), None).unwrap();
        prop_assert_eq!(names.len(), k);
        prop_assert_eq!(back, data);
    }
}

#[test]
fn sampler_output_independent_of_thread_count() {
    let mut rng = common::rng(5);
    let data = common::dataset(&mut rng, 3, 2, 40, 10);
    let priors = PriorSpec::flat(3, 2);
    let config = SamplerConfig {
        chains: 4,
        iterations: 200,
        burn_in: 50,
        seed: 99,
        ..SamplerConfig::default()
    };
    let run = |threads| {
        rayon::ThreadPoolBuilder::new()
            .num_threads(threads)
            .build()
            .unwrap()
            .install(|| run_sampler(&data, &priors, &config).unwrap())
    };
    let one = run(1);
    let many = run(4);
    assert_eq!(one.chains, many.chains);
}

#[test]
fn conjugate_draws_match_closed_form_moments() {
    let mut rng = common::rng(8);
    let data = common::dataset(&mut rng, 4, 2, 30, 0);
    let priors = PriorSpec::fixed(vec![ConfusionMatrix::identity(4); 2], vec![1.0; 4]).unwrap();
    assert!(is_conjugate(&priors));
    let config = SamplerConfig {
        chains: 2,
        iterations: 20000,
        burn_in: 0,
        ..SamplerConfig::default()
    };
    let samples = conjugate_sampler(&data, &priors, &config).unwrap();
    let conc = conjugate_posterior(&data, &priors, 1.0).unwrap();
    let exact = dirichlet_mean(&conc).unwrap();
    let a0: f64 = conc.iter().sum();
    let mc = posterior_mean(&samples).unwrap().prevalence;
    for i in 0..4 {
        let m = exact.get(i);
        let se = (m * (1.0 - m) / (a0 + 1.0) / samples.n_draws() as f64).sqrt();
        assert!((mc.get(i) - m).abs() < 4.0 * se, "component {i}: {} vs {m}", mc.get(i));
    }
}

#[test]
fn gibbs_agrees_with_reference_on_small_problem() {
    let mut rng = common::rng(21);
    let truth = common::interior_theta(&mut rng, 3, 1);
    let data = common::model_sample(&truth, 100, &mut rng);
    let priors = PriorSpec::flat(3, 1);
    let config = SamplerConfig {
        chains: 2,
        iterations: 6000,
        burn_in: 1000,
        seed: 4,
        ..SamplerConfig::default()
    };
    let gibbs = posterior_mean(&run_sampler(&data, &priors, &config).unwrap()).unwrap();
    let mh = posterior_mean(&mh_reference_sampler(&data, &priors, &config).unwrap()).unwrap();
    for i in 0..3 {
        let d = (gibbs.prevalence.get(i) - mh.prevalence.get(i)).abs();
        assert!(d < 0.02, "component {i}: gibbs {} reference {}", gibbs.prevalence.get(i), mh.prevalence.get(i));
    }
}
