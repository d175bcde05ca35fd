//! Synthetic scenarios with known prevalence and confusion matrices, and
//! replicate studies scoring estimators against the truth.

use std::time::Instant;

use rand::Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::composition::{Composition, ConfusionMatrix, Dataset, LabeledInstance, SupportMask};
use crate::error::{Error, Result};
use crate::inference::{ccnaa, percentile_interval, posterior_mean, DeltaMethod, DeltaTarget};
use crate::quantifiers::{
    baseline_estimate, default_shrink_gamma, BaselineMethod, PriorSpec, DEFAULT_SHRINK_EPSILON,
};
use crate::rng::{chain_rng, derive_seed, log_gamma_draw, sample_dirichlet};
use crate::sampler::{run_sampler, Parameter, SamplerConfig};

pub const P1: [f64; 5] = [0.20, 0.19, 0.27, 0.27, 0.07];
pub const P2: [f64; 5] = [0.11, 0.11, 0.40, 0.29, 0.09];
pub const P3: [f64; 5] = [0.09, 0.18, 0.52, 0.19, 0.02];
pub const P4: [f64; 5] = [0.13, 0.30, 0.35, 0.19, 0.03];

/// Five-class confusion matrix with structural zeros.
pub const SPARSE_CONFUSION: [[f64; 5]; 5] = [
    [0.65, 0.35, 0.0, 0.0, 0.0],
    [0.0, 0.35, 0.65, 0.0, 0.0],
    [0.1, 0.1, 0.6, 0.1, 0.1],
    [0.0, 0.0, 0.0, 0.8, 0.2],
    [0.0, 0.4, 0.0, 0.0, 0.6],
];

/// Five-class confusion matrix with every entry positive, as published. The
/// first row sums to 0.96; [`confusion_preset`] rescales it.
pub const INTERIOR_CONFUSION: [[f64; 5]; 5] = [
    [0.65, 0.25, 0.02, 0.02, 0.02],
    [0.06, 0.25, 0.65, 0.02, 0.02],
    [0.1, 0.1, 0.6, 0.1, 0.1],
    [0.02, 0.04, 0.04, 0.7, 0.2],
    [0.02, 0.3, 0.03, 0.05, 0.6],
];

/// Prevalence preset `p1`..`p4` (1-based).
pub fn prevalence_preset(index: usize) -> Result<Composition> {
    let p = match index {
        1 => P1,
        2 => P2,
        3 => P3,
        4 => P4,
        _ => return Err(Error::InvalidConfig(format!("no prevalence preset p{index}"))),
    };
    Composition::new(p.to_vec())
}

/// Confusion matrix from preset digits, each row rescaled to sum to one.
pub fn confusion_preset(rows: &[[f64; 5]; 5]) -> ConfusionMatrix {
    let rows = rows
        .iter()
        .map(|r| Composition::normalize(r.to_vec()))
        .collect::<Result<Vec<_>>>()
        .expect("preset rows are non-negative");
    ConfusionMatrix::from_compositions(rows).expect("preset rows share one dimension")
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Mechanism {
    /// `a*_j ~ Gamma(c M_ij, 1)` with a fixed concentration `c`.
    #[default]
    DirichletFixedTau,
    /// As above with a per-instance concentration drawn from the tau mixture.
    GammaOverdispersed,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum LabelMode {
    #[default]
    Exact,
    /// Beliefs `b ~ Dirichlet(tau p_L)`, labels drawn from the belief.
    Uncertain,
}

/// Two-component uniform mixture for per-instance concentrations.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TauMixture {
    pub low: (f64, f64),
    pub high: (f64, f64),
    /// Probability of the low component.
    pub low_weight: f64,
}

impl Default for TauMixture {
    fn default() -> Self {
        TauMixture {
            low: (0.1, 1.0),
            high: (10.0, 20.0),
            low_weight: 0.5,
        }
    }
}

impl TauMixture {
    pub fn sample<R: Rng + ?Sized>(&self, rng: &mut R) -> f64 {
        let (a, b) = if rng.random::<f64>() < self.low_weight { self.low } else { self.high };
        a + (b - a) * rng.random::<f64>()
    }
}

fn default_concentration() -> f64 {
    5.0
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Scenario {
    pub n_unlabeled: usize,
    pub n_labeled: usize,
    pub prevalence: Composition,
    /// Class distribution of the labeled set; uniform when absent.
    #[serde(default)]
    pub labeled_prevalence: Option<Composition>,
    pub confusions: Vec<ConfusionMatrix>,
    #[serde(default)]
    pub mechanism: Mechanism,
    #[serde(default)]
    pub label_mode: LabelMode,
    #[serde(default)]
    pub tau: TauMixture,
    /// Concentration of the fixed-tau mechanism.
    #[serde(default = "default_concentration")]
    pub concentration: f64,
}

impl Scenario {
    /// Five classes, `N = 1000`, one classifier with the sparse preset matrix.
    pub fn standard(prevalence: Composition, mechanism: Mechanism, n_labeled: usize) -> Self {
        Scenario {
            n_unlabeled: 1000,
            n_labeled,
            prevalence,
            labeled_prevalence: None,
            confusions: vec![confusion_preset(&SPARSE_CONFUSION)],
            mechanism,
            label_mode: LabelMode::Exact,
            tau: TauMixture::default(),
            concentration: default_concentration(),
        }
    }

    pub fn classes(&self) -> usize {
        self.prevalence.dim()
    }

    pub fn labeled_prevalence(&self) -> Composition {
        self.labeled_prevalence.clone().unwrap_or_else(|| Composition::uniform(self.classes()))
    }

    pub fn validate(&self) -> Result<()> {
        let c = self.classes();
        if self.n_unlabeled == 0 {
            return Err(Error::InvalidConfig("scenario needs n_unlabeled >= 1".into()));
        }
        if self.confusions.is_empty() {
            return Err(Error::InvalidConfig("scenario needs at least one confusion matrix".into()));
        }
        if let Some(m) = self.confusions.iter().find(|m| m.classes() != c) {
            return Err(Error::dims("scenario confusion matrix", c, m.classes()));
        }
        if let Some(pl) = &self.labeled_prevalence {
            if pl.dim() != c {
                return Err(Error::dims("labeled prevalence", c, pl.dim()));
            }
        }
        if !(self.concentration > 0.0) {
            return Err(Error::InvalidConfig("concentration must be positive".into()));
        }
        let t = &self.tau;
        if !(t.low.0 > 0.0 && t.low.0 <= t.low.1 && t.high.0 > 0.0 && t.high.0 <= t.high.1)
            || !(0.0..=1.0).contains(&t.low_weight)
        {
            return Err(Error::InvalidConfig("tau mixture needs positive ordered ranges".into()));
        }
        Ok(())
    }
}

/// True classes of every instance and the labeled-set beliefs.
#[derive(Debug, Clone, PartialEq)]
pub struct Truth {
    pub unlabeled: Vec<usize>,
    pub labeled: Vec<usize>,
    pub beliefs: Vec<Composition>,
}

fn categorical<R: Rng + ?Sized>(rng: &mut R, probs: &[f64]) -> usize {
    let u: f64 = rng.random();
    let mut cumulative = 0.0;
    let last = probs.iter().rposition(|&p| p > 0.0).unwrap_or(0);
    for (i, &p) in probs.iter().enumerate().take(last) {
        cumulative += p;
        if u < cumulative {
            return i;
        }
    }
    last
}

pub fn generate_truth<R: Rng + ?Sized>(s: &Scenario, rng: &mut R) -> Truth {
    let c = s.classes();
    let unlabeled = (0..s.n_unlabeled).map(|_| categorical(rng, s.prevalence.as_slice())).collect();
    let pl = s.labeled_prevalence();
    let mut labeled = Vec::with_capacity(s.n_labeled);
    let mut beliefs = Vec::with_capacity(s.n_labeled);
    for _ in 0..s.n_labeled {
        match s.label_mode {
            LabelMode::Exact => {
                let y = categorical(rng, pl.as_slice());
                labeled.push(y);
                beliefs.push(Composition::basis(c, y));
            }
            LabelMode::Uncertain => {
                let tau = s.tau.sample(rng);
                let alpha: Vec<f64> = pl.as_slice().iter().map(|p| tau * p).collect();
                let mut b = vec![0.0; c];
                sample_dirichlet(rng, &alpha, &mut b);
                let belief = Composition::normalize(b).expect("dirichlet draw");
                labeled.push(categorical(rng, belief.as_slice()));
                beliefs.push(belief);
            }
        }
    }
    Truth {
        unlabeled,
        labeled,
        beliefs,
    }
}

/// Normalized gamma draws with shapes `scale * row`; zero entries of the
/// row stay exactly zero.
fn gamma_prediction<R: Rng + ?Sized>(rng: &mut R, row: &Composition, scale: f64) -> Composition {
    let logs: Vec<Option<f64>> = row
        .as_slice()
        .iter()
        .map(|&m| (m > 0.0).then(|| log_gamma_draw(rng, scale * m)))
        .collect();
    let max = logs.iter().flatten().copied().fold(f64::NEG_INFINITY, f64::max);
    let weights: Vec<f64> = logs.iter().map(|l| l.map_or(0.0, |v| (v - max).exp())).collect();
    Composition::normalize(weights).expect("at least one positive weight")
}

pub fn generate_predictions<R: Rng + ?Sized>(s: &Scenario, truth: &Truth, rng: &mut R) -> Result<Dataset> {
    let predict = |y: usize, rng: &mut R| -> Vec<Composition> {
        let scale = match s.mechanism {
            Mechanism::DirichletFixedTau => s.concentration,
            Mechanism::GammaOverdispersed => s.tau.sample(rng),
        };
        s.confusions.iter().map(|m| gamma_prediction(rng, m.row(y), scale)).collect()
    };
    let unlabeled = truth.unlabeled.iter().map(|&y| predict(y, rng)).collect();
    let labeled = truth
        .labeled
        .iter()
        .zip(&truth.beliefs)
        .map(|(&y, b)| LabeledInstance {
            predictions: predict(y, rng),
            belief: b.clone(),
        })
        .collect();
    Dataset::new(unlabeled, labeled)
}

/// Truth and data for one replicate.
pub fn generate<R: Rng + ?Sized>(s: &Scenario, rng: &mut R) -> Result<(Truth, Dataset)> {
    s.validate()?;
    let truth = generate_truth(s, rng);
    let data = generate_predictions(s, &truth, rng)?;
    Ok((truth, data))
}

/// Prior families for GBQL in studies.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum PriorPreset {
    Flat,
    /// Uniform sparse Dirichlet on the zero pattern of the scenario's matrices.
    Sparse { delta: f64 },
    ShrinkIdentity {
        gamma: Option<f64>,
        epsilon: Option<f64>,
    },
    FixedIdentity { prevalence: f64 },
}

impl PriorPreset {
    pub fn build(&self, scenario: &Scenario) -> Result<PriorSpec> {
        let c = scenario.classes();
        let k = scenario.confusions.len();
        match self {
            PriorPreset::Flat => Ok(PriorSpec::flat(c, k)),
            PriorPreset::Sparse { delta } => {
                PriorSpec::sparse(scenario.confusions.iter().map(SupportMask::from_matrix).collect(), *delta)
            }
            PriorPreset::ShrinkIdentity { gamma, epsilon } => {
                let g = gamma.unwrap_or_else(|| default_shrink_gamma(c));
                PriorSpec::shrink(
                    &vec![ConfusionMatrix::identity(c); k],
                    &vec![g; c],
                    epsilon.unwrap_or(DEFAULT_SHRINK_EPSILON),
                )
            }
            PriorPreset::FixedIdentity { prevalence } => {
                PriorSpec::fixed(vec![ConfusionMatrix::identity(c); k], vec![*prevalence; c])
            }
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum MethodSpec {
    /// CC or PA on the unlabeled set; ACC and APA with the confusion matrix
    /// estimated from exact labels.
    Baseline { method: BaselineMethod },
    Gbql {
        prior: PriorPreset,
        /// Coarsening factor; the unlabeled size when absent.
        #[serde(default)]
        coarsening: Option<u64>,
        /// Ignore the labeled set.
        #[serde(default)]
        unlabeled_only: bool,
    },
}

// serde rejects `deny_unknown_fields` next to `flatten`; the flattened spec
// still refuses keys it does not know.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct NamedMethod {
    pub name: String,
    #[serde(flatten)]
    pub spec: MethodSpec,
}

/// Mean prediction per true class over exact-labeled instances of classifier 0.
pub fn labeled_confusion(data: &Dataset) -> Result<ConfusionMatrix> {
    let c = data.classes();
    let mut sums = vec![vec![0.0; c]; c];
    let mut counts = vec![0usize; c];
    for inst in data.labeled() {
        if let Some(y) = inst.belief.degenerate_class() {
            for (s, v) in sums[y].iter_mut().zip(inst.predictions[0].as_slice()) {
                *s += v;
            }
            counts[y] += 1;
        }
    }
    if let Some(i) = counts.iter().position(|&n| n == 0) {
        return Err(Error::NonIdentifiable(format!("no exact labels for class {}", i + 1)));
    }
    ConfusionMatrix::from_compositions(
        sums.into_iter().map(Composition::normalize).collect::<Result<Vec<_>>>()?,
    )
}

/// Point estimate of the prevalence by `method`.
pub fn estimate(
    method: &MethodSpec,
    scenario: &Scenario,
    data: &Dataset,
    sampler: &SamplerConfig,
) -> Result<Composition> {
    match method {
        MethodSpec::Baseline { method } => {
            let m_tr = if method.needs_confusion() { Some(labeled_confusion(data)?) } else { None };
            Ok(baseline_estimate(*method, data, m_tr.as_ref())?.estimate)
        }
        MethodSpec::Gbql {
            prior,
            coarsening,
            unlabeled_only,
        } => {
            let prior = prior.build(scenario)?;
            let config = SamplerConfig {
                coarsening: coarsening.or(sampler.coarsening),
                ..sampler.clone()
            };
            let data = if *unlabeled_only { data.without_labels() } else { data.clone() };
            let samples = run_sampler(&data, &prior, &config)?;
            Ok(posterior_mean(&samples)?.prevalence)
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ReplicateRecord {
    pub replicate: usize,
    pub seed: u64,
    pub method: String,
    pub ccnaa: f64,
    pub estimate: Vec<f64>,
    pub seconds: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MethodSummary {
    pub method: String,
    pub replicates: usize,
    pub mean_ccnaa: f64,
    pub sd_ccnaa: f64,
    pub mean_seconds: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ReplicateStudy {
    pub records: Vec<ReplicateRecord>,
    pub summaries: Vec<MethodSummary>,
}

impl ReplicateStudy {
    pub fn summary(&self, method: &str) -> Option<&MethodSummary> {
        self.summaries.iter().find(|s| s.method == method)
    }
}

/// Runs every method on `replicates` independent datasets.
///
/// Replicate `r` draws its data from seed `derive_seed(seed, r)` and runs the
/// samplers with that same seed, so results do not depend on scheduling.
pub fn run_replicates(
    scenario: &Scenario,
    methods: &[NamedMethod],
    replicates: usize,
    sampler: &SamplerConfig,
    seed: u64,
) -> Result<ReplicateStudy> {
    scenario.validate()?;
    if replicates == 0 {
        return Err(Error::InvalidConfig("replicates must be at least 1".into()));
    }
    let per_replicate = (0..replicates)
        .into_par_iter()
        .map(|r| {
            let rseed = derive_seed(seed, r as u64);
            let mut rng = chain_rng(rseed, 0);
            let (_, data) = generate(scenario, &mut rng)?;
            let config = SamplerConfig { seed: rseed, ..sampler.clone() };
            methods
                .iter()
                .map(|m| {
                    let start = Instant::now();
                    let est = estimate(&m.spec, scenario, &data, &config)?;
                    let seconds = start.elapsed().as_secs_f64();
                    Ok(ReplicateRecord {
                        replicate: r,
                        seed: rseed,
                        method: m.name.clone(),
                        ccnaa: ccnaa(&scenario.prevalence, &est)?,
                        estimate: est.into_vec(),
                        seconds,
                    })
                })
                .collect::<Result<Vec<_>>>()
        })
        .collect::<Result<Vec<_>>>()?;
    let records: Vec<ReplicateRecord> = per_replicate.into_iter().flatten().collect();
    let summaries = methods
        .iter()
        .map(|m| {
            let rows: Vec<&ReplicateRecord> = records.iter().filter(|r| r.method == m.name).collect();
            let n = rows.len() as f64;
            let mean = rows.iter().map(|r| r.ccnaa).sum::<f64>() / n;
            let sd = if rows.len() > 1 {
                (rows.iter().map(|r| (r.ccnaa - mean).powi(2)).sum::<f64>() / (n - 1.0)).sqrt()
            } else {
                0.0
            };
            MethodSummary {
                method: m.name.clone(),
                replicates: rows.len(),
                mean_ccnaa: mean,
                sd_ccnaa: sd,
                mean_seconds: rows.iter().map(|r| r.seconds).sum::<f64>() / n,
            }
        })
        .collect();
    Ok(ReplicateStudy { records, summaries })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ComponentCoverage {
    pub class: usize,
    pub truth: f64,
    pub delta_coverage: f64,
    pub percentile_coverage: f64,
    pub delta_width: f64,
    pub percentile_width: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CoverageStudy {
    pub level: f64,
    pub replicates: usize,
    /// Replicates where the delta interval could not be formed.
    pub delta_failures: usize,
    pub components: Vec<ComponentCoverage>,
}

/// Empirical coverage of percentile and delta intervals for each prevalence
/// component, fitting GBQL with `prior` on every replicate.
pub fn run_coverage(
    scenario: &Scenario,
    prior: &PriorPreset,
    replicates: usize,
    sampler: &SamplerConfig,
    level: f64,
    seed: u64,
) -> Result<CoverageStudy> {
    scenario.validate()?;
    if replicates == 0 {
        return Err(Error::InvalidConfig("replicates must be at least 1".into()));
    }
    let c = scenario.classes();
    let prior = prior.build(scenario)?;
    let truth = scenario.prevalence.as_slice();
    // Per replicate: (percentile hit, width) and optional (delta hit, width).
    type Row = (Vec<(bool, f64)>, Option<Vec<(bool, f64)>>);
    let rows = (0..replicates)
        .into_par_iter()
        .map(|r| -> Result<Row> {
            let rseed = derive_seed(seed, r as u64);
            let mut rng = chain_rng(rseed, 0);
            let (_, data) = generate(scenario, &mut rng)?;
            let config = SamplerConfig { seed: rseed, ..sampler.clone() };
            let samples = run_sampler(&data, &prior, &config)?;
            let percentile = (0..c)
                .map(|i| {
                    let values: Vec<f64> = samples.series(Parameter::Prevalence(i)).into_iter().flatten().collect();
                    let iv = percentile_interval(&values, level);
                    (iv.contains(truth[i]), iv.width())
                })
                .collect();
            let delta = match DeltaMethod::from_samples(&samples, &data) {
                Ok(dm) => Some(
                    (0..c)
                        .map(|i| {
                            let iv = dm.target(&DeltaTarget::Parameter(Parameter::Prevalence(i)), level)?;
                            Ok((iv.contains(truth[i]), iv.width()))
                        })
                        .collect::<Result<Vec<_>>>()?,
                ),
                Err(e) if e.is_numerical() => {
                    log::warn!("replicate {r}: delta interval unavailable: {e}");
                    None
                }
                Err(e) => return Err(e),
            };
            Ok((percentile, delta))
        })
        .collect::<Result<Vec<Row>>>()?;
    let delta_rows: Vec<&Vec<(bool, f64)>> = rows.iter().filter_map(|(_, d)| d.as_ref()).collect();
    let nd = delta_rows.len().max(1) as f64;
    let np = rows.len() as f64;
    let components = (0..c)
        .map(|i| ComponentCoverage {
            class: i,
            truth: truth[i],
            percentile_coverage: rows.iter().filter(|(p, _)| p[i].0).count() as f64 / np,
            percentile_width: rows.iter().map(|(p, _)| p[i].1).sum::<f64>() / np,
            delta_coverage: delta_rows.iter().filter(|d| d[i].0).count() as f64 / nd,
            delta_width: delta_rows.iter().map(|d| d[i].1).sum::<f64>() / nd,
        })
        .collect();
    Ok(CoverageStudy {
        level,
        replicates,
        delta_failures: rows.len() - delta_rows.len(),
        components,
    })
}

/// What a simulation file asks for.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum Study {
    Ccnaa { methods: Vec<NamedMethod> },
    Coverage { prior: PriorPreset, level: f64 },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SimulationConfig {
    pub scenario: Scenario,
    pub study: Study,
    pub replicates: usize,
    #[serde(default)]
    pub seed: u64,
    #[serde(default)]
    pub sampler: SamplerConfig,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum StudyResult {
    Ccnaa(ReplicateStudy),
    Coverage(CoverageStudy),
}

impl SimulationConfig {
    pub fn run(&self) -> Result<StudyResult> {
        match &self.study {
            Study::Ccnaa { methods } => {
                run_replicates(&self.scenario, methods, self.replicates, &self.sampler, self.seed).map(StudyResult::Ccnaa)
            }
            Study::Coverage { prior, level } => {
                run_coverage(&self.scenario, prior, self.replicates, &self.sampler, *level, self.seed)
                    .map(StudyResult::Coverage)
            }
        }
    }

    pub fn preset_names() -> &'static [&'static str] {
        &["p1-mech2-n300", "coverage", "coarsening", "sparsity-n50", "sparsity-n300"]
    }

    /// Built-in study designs.
    pub fn preset(name: &str) -> Result<Self> {
        let gbql = |name: &str, prior: PriorPreset, coarsening: Option<u64>| NamedMethod {
            name: name.into(),
            spec: MethodSpec::Gbql {
                prior,
                coarsening,
                unlabeled_only: false,
            },
        };
        let p1 = prevalence_preset(1)?;
        let (scenario, study) = match name {
            "p1-mech2-n300" => (
                Scenario::standard(p1, Mechanism::GammaOverdispersed, 300),
                Study::Ccnaa {
                    methods: vec![gbql("gbql", PriorPreset::Flat, None)],
                },
            ),
            "coverage" => (
                Scenario {
                    confusions: vec![confusion_preset(&INTERIOR_CONFUSION)],
                    ..Scenario::standard(p1, Mechanism::DirichletFixedTau, 300)
                },
                Study::Coverage {
                    prior: PriorPreset::Flat,
                    level: 0.95,
                },
            ),
            "coarsening" => (
                Scenario::standard(p1, Mechanism::DirichletFixedTau, 300),
                Study::Ccnaa {
                    methods: vec![
                        gbql("T=1", PriorPreset::Flat, Some(1)),
                        gbql("T=10", PriorPreset::Flat, Some(10)),
                        gbql("T=100", PriorPreset::Flat, Some(100)),
                        gbql("T=1000", PriorPreset::Flat, Some(1000)),
                        gbql("T=N", PriorPreset::Flat, None),
                    ],
                },
            ),
            "sparsity-n50" | "sparsity-n300" => (
                Scenario::standard(p1, Mechanism::DirichletFixedTau, if name.ends_with("n50") { 50 } else { 300 }),
                Study::Ccnaa {
                    methods: vec![
                        gbql("full", PriorPreset::Flat, None),
                        gbql("sparse", PriorPreset::Sparse { delta: 1.0 }, None),
                    ],
                },
            ),
            other => {
                return Err(Error::InvalidConfig(format!(
                    "unknown preset '{other}' (available: {})",
                    Self::preset_names().join(", ")
                )))
            }
        };
        Ok(SimulationConfig {
            scenario,
            study,
            replicates: 500,
            seed: 0,
            sampler: SamplerConfig::default(),
        })
    }
}
