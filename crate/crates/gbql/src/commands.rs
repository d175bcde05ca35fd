//! Batch entry points behind the command-line tool: run configuration,
//! result documents, and the `fit`, `baseline`, `simulate` and `diagnose`
//! pipelines.

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::composition::{Composition, ConfusionMatrix, Dataset, SupportMask};
use crate::error::{Error, Result};
use crate::inference::{
    gelman_rubin_parameter, percentile_interval, posterior_mean, DeltaMethod, DeltaTarget, IntervalEstimate,
    IntervalMethod,
};
use crate::io::{self, assemble_dataset, join_labeled, read_labels, read_predictions, ReadOptions};
use crate::loss::Theta;
use crate::quantifiers::{
    baseline_estimate, default_shrink_gamma, dirichlet_mean, trained_confusion, BaselineEstimate, BaselineMethod,
    PriorSpec, DEFAULT_SHRINK_EPSILON,
};
use crate::reference::mh_reference_sampler;
use crate::sampler::{
    conjugate_posterior, conjugate_sampler, is_conjugate, run_sampler, Parameter, PosteriorSamples, SamplerConfig,
    SamplerKind,
};
use crate::simulation::{StudyResult, SimulationConfig};

/// Version stamped into every result document.
pub const VERSION: &str = env!("CARGO_PKG_VERSION");

/// R-hat above this value is reported as not converged.
pub const RHAT_THRESHOLD: f64 = 1.05;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DataConfig {
    /// Predictions for the unlabeled set.
    pub unlabeled: PathBuf,
    /// Predictions for the labeled set; needs `labels`.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub labeled: Option<PathBuf>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub labels: Option<PathBuf>,
    /// Classifiers to use, in order; all of them when absent.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub classifiers: Option<Vec<String>>,
    /// Rescale rows that do not sum to one.
    #[serde(default)]
    pub normalize: bool,
}

/// Prior families selectable from a run configuration. `prevalence` is the
/// Dirichlet concentration of the prevalence prior (all ones by default).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "preset", rename_all = "kebab-case", deny_unknown_fields)]
pub enum PriorConfig {
    Flat {
        #[serde(default, skip_serializing_if = "Option::is_none")]
        prevalence: Option<Vec<f64>>,
    },
    /// Shrinkage toward the identity.
    ShrinkIdentity {
        #[serde(default, skip_serializing_if = "Option::is_none")]
        gamma: Option<f64>,
        #[serde(default, skip_serializing_if = "Option::is_none")]
        epsilon: Option<f64>,
        #[serde(default, skip_serializing_if = "Option::is_none")]
        prevalence: Option<Vec<f64>>,
    },
    /// Shrinkage toward confusion matrices estimated on a training set.
    ShrinkTrained {
        predictions: PathBuf,
        labels: PathBuf,
        #[serde(default, skip_serializing_if = "Option::is_none")]
        gamma: Option<f64>,
        #[serde(default, skip_serializing_if = "Option::is_none")]
        epsilon: Option<f64>,
        #[serde(default, skip_serializing_if = "Option::is_none")]
        prevalence: Option<Vec<f64>>,
    },
    /// Uniform sparse Dirichlet on declared supports: one per classifier, or
    /// a single support shared by all.
    Sparse {
        #[serde(default = "one")]
        delta: f64,
        support: Vec<SupportMask>,
        #[serde(default, skip_serializing_if = "Option::is_none")]
        prevalence: Option<Vec<f64>>,
    },
    /// Known confusion matrices, the identity when absent.
    Fixed {
        #[serde(default, skip_serializing_if = "Option::is_none")]
        confusions: Option<Vec<ConfusionMatrix>>,
        #[serde(default, skip_serializing_if = "Option::is_none")]
        prevalence: Option<Vec<f64>>,
    },
}

fn one() -> f64 {
    1.0
}

impl Default for PriorConfig {
    fn default() -> Self {
        PriorConfig::Flat { prevalence: None }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct IntervalConfig {
    pub levels: Vec<f64>,
    pub methods: Vec<IntervalMethod>,
}

impl Default for IntervalConfig {
    fn default() -> Self {
        IntervalConfig {
            levels: vec![0.95],
            methods: vec![IntervalMethod::Percentile, IntervalMethod::Delta],
        }
    }
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct OutputConfig {
    /// Result document path; standard output when absent.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub path: Option<PathBuf>,
    /// Include retained draws in the result document.
    pub draws: bool,
}

/// Everything `fit` needs. Relative paths resolve against the directory of
/// the configuration file.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunConfig {
    pub data: DataConfig,
    #[serde(default)]
    pub prior: PriorConfig,
    #[serde(default)]
    pub sampler: SamplerConfig,
    #[serde(default)]
    pub intervals: IntervalConfig,
    #[serde(default)]
    pub baselines: Vec<BaselineMethod>,
    #[serde(default)]
    pub output: OutputConfig,
}

impl RunConfig {
    pub fn parse(text: &str) -> Result<Self> {
        let config: RunConfig = io::from_toml(text)?;
        config.validate()?;
        Ok(config)
    }

    pub fn load(path: &Path) -> Result<Self> {
        Self::parse(&io::read_text(path)?)
    }

    pub fn validate(&self) -> Result<()> {
        self.sampler.validate()?;
        if self.data.labeled.is_some() != self.data.labels.is_some() {
            return Err(Error::InvalidConfig("data.labeled and data.labels must be given together".into()));
        }
        if let Some(l) = self.intervals.levels.iter().find(|l| !(**l > 0.0 && **l < 1.0)) {
            return Err(Error::InvalidConfig(format!("interval level must lie in (0, 1), got {l}")));
        }
        if let PriorConfig::Sparse { delta, support, .. } = &self.prior {
            if !(*delta > 0.0 && delta.is_finite()) {
                return Err(Error::InvalidConfig(format!("sparse delta must be positive, got {delta}")));
            }
            if support.is_empty() {
                return Err(Error::InvalidConfig("sparse prior needs at least one support".into()));
            }
        }
        Ok(())
    }

    fn read_options(&self) -> ReadOptions {
        ReadOptions {
            normalize: self.data.normalize,
        }
    }
}

fn resolve(base: &Path, p: &Path) -> PathBuf {
    if p.is_absolute() {
        p.to_path_buf()
    } else {
        base.join(p)
    }
}

/// Shape of the ingested data.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DataSummary {
    pub classes: usize,
    pub classifiers: Vec<String>,
    pub n_unlabeled: usize,
    pub n_labeled: usize,
    pub n_exact_labels: usize,
    pub renormalized_rows: usize,
}

/// A dataset with its provenance.
#[derive(Debug, Clone)]
pub struct LoadedData {
    pub dataset: Dataset,
    pub summary: DataSummary,
}

/// Reads and joins the files named in `config.data`.
pub fn load_data(config: &RunConfig, base: &Path) -> Result<LoadedData> {
    let opts = config.read_options();
    let unlabeled = read_predictions(&resolve(base, &config.data.unlabeled), opts)?;
    let mut renormalized = unlabeled.renormalized;
    let labeled = match (&config.data.labeled, &config.data.labels) {
        (Some(p), Some(l)) => {
            let preds = read_predictions(&resolve(base, p), opts)?;
            let beliefs = read_labels(&resolve(base, l), opts)?;
            renormalized += preds.renormalized + beliefs.renormalized;
            Some((preds, beliefs))
        }
        _ => None,
    };
    let (dataset, names) = assemble_dataset(
        &unlabeled,
        labeled.as_ref().map(|(p, b)| (p, b)),
        config.data.classifiers.as_deref(),
    )?;
    let summary = DataSummary {
        classes: dataset.classes(),
        classifiers: names,
        n_unlabeled: dataset.n_unlabeled(),
        n_labeled: dataset.n_labeled(),
        n_exact_labels: dataset.labeled().iter().filter(|l| l.belief.is_categorical()).count(),
        renormalized_rows: renormalized,
    };
    Ok(LoadedData { dataset, summary })
}

fn prevalence_or_flat(prevalence: &Option<Vec<f64>>, classes: usize) -> Vec<f64> {
    prevalence.clone().unwrap_or_else(|| vec![1.0; classes])
}

/// Turns a prior preset into concrete hyperparameters for `data`.
pub fn build_prior(config: &RunConfig, base: &Path, data: &LoadedData) -> Result<PriorSpec> {
    let c = data.dataset.classes();
    let k = data.dataset.classifiers();
    let shrink = |centers: &[ConfusionMatrix], gamma: &Option<f64>, epsilon: &Option<f64>| {
        let g = gamma.unwrap_or_else(|| default_shrink_gamma(c));
        PriorSpec::shrink(centers, &vec![g; c], epsilon.unwrap_or(DEFAULT_SHRINK_EPSILON))
    };
    let spec = match &config.prior {
        PriorConfig::Flat { prevalence } => PriorSpec::flat(c, k).with_prevalence(prevalence_or_flat(prevalence, c))?,
        PriorConfig::ShrinkIdentity {
            gamma,
            epsilon,
            prevalence,
        } => shrink(&vec![ConfusionMatrix::identity(c); k], gamma, epsilon)?
            .with_prevalence(prevalence_or_flat(prevalence, c))?,
        PriorConfig::ShrinkTrained {
            predictions,
            labels,
            gamma,
            epsilon,
            prevalence,
        } => {
            let opts = config.read_options();
            let preds = read_predictions(&resolve(base, predictions), opts)?;
            let beliefs = read_labels(&resolve(base, labels), opts)?;
            if preds.classes != c {
                return Err(Error::dims("training classes", c, preds.classes));
            }
            let training = join_labeled(&preds, &beliefs, &data.summary.classifiers)?;
            let centers = (0..k).map(|i| trained_confusion(&training, i)).collect::<Result<Vec<_>>>()?;
            shrink(&centers, gamma, epsilon)?.with_prevalence(prevalence_or_flat(prevalence, c))?
        }
        PriorConfig::Sparse {
            delta,
            support,
            prevalence,
        } => {
            let supports = match support.len() {
                1 => vec![support[0].clone(); k],
                n if n == k => support.clone(),
                n => return Err(Error::dims("sparse supports", k, n)),
            };
            PriorSpec::sparse(supports, *delta)?.with_prevalence(prevalence_or_flat(prevalence, c))?
        }
        PriorConfig::Fixed {
            confusions,
            prevalence,
        } => {
            let confusions = confusions.clone().unwrap_or_else(|| vec![ConfusionMatrix::identity(c); k]);
            PriorSpec::fixed(confusions, prevalence_or_flat(prevalence, c))?
        }
    };
    spec.validate()?;
    Ok(spec)
}

/// Sampler settings echoed into results.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SamplerSummary {
    pub kind: SamplerKind,
    pub coarsening: Option<u64>,
    pub alpha: f64,
    pub chains: usize,
    pub iterations: usize,
    pub burn_in: usize,
    pub thin: usize,
    pub seed: u64,
    pub retained_draws: usize,
    pub acceptance: Vec<f64>,
}

impl SamplerSummary {
    fn of(samples: &PosteriorSamples) -> Self {
        let c = &samples.config;
        SamplerSummary {
            kind: samples.kind,
            coarsening: samples.coarsening,
            alpha: c.alpha,
            chains: c.chains,
            iterations: c.iterations,
            burn_in: c.burn_in,
            thin: c.thin,
            seed: c.seed,
            retained_draws: samples.n_draws(),
            acceptance: samples.acceptance.clone(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ParameterResult {
    pub name: String,
    pub parameter: Parameter,
    pub mean: f64,
    pub sd: f64,
    /// Split R-hat; absent with a single chain or too few draws.
    pub rhat: Option<f64>,
    pub rhat_degenerate: bool,
    pub intervals: Vec<IntervalEstimate>,
}

/// Retained draws, one row of all parameter values per draw.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DrawTable {
    pub parameters: Vec<String>,
    pub chains: Vec<Vec<Vec<f64>>>,
}

/// Result document written by `fit`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FitResult {
    pub version: String,
    pub config: RunConfig,
    pub data: DataSummary,
    pub sampler: SamplerSummary,
    /// Point estimate of the prevalence: the posterior mean.
    pub prevalence: Composition,
    /// Posterior means of the confusion matrices.
    pub confusions: Vec<ConfusionMatrix>,
    pub parameters: Vec<ParameterResult>,
    pub baselines: Vec<BaselineEstimate>,
    pub warnings: Vec<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub draws: Option<DrawTable>,
}

impl FitResult {
    pub fn to_json(&self) -> Result<String> {
        io::to_json(self)
    }

    pub fn from_json(text: &str) -> Result<Self> {
        io::from_json(text)
    }

    pub fn write(&self, path: &Path) -> Result<()> {
        io::write_atomic(path, self.to_json()?.as_bytes())
    }

    pub fn read(path: &Path) -> Result<Self> {
        Self::from_json(&io::read_text(path)?)
    }
}

fn warn(warnings: &mut Vec<String>, message: String) {
    log::warn!("{message}");
    warnings.push(message);
}

/// Training confusion matrix for ACC and APA from the labeled set.
fn baseline_confusion(data: &Dataset) -> Result<ConfusionMatrix> {
    if data.classifiers() != 1 {
        return Err(Error::InvalidConfig("adjusted baselines support a single classifier".into()));
    }
    trained_confusion(data.labeled(), 0)
}

fn run_baselines(methods: &[BaselineMethod], data: &Dataset, warnings: &mut Vec<String>) -> Vec<BaselineEstimate> {
    methods
        .iter()
        .filter_map(|&m| {
            let result = if m.needs_confusion() {
                baseline_confusion(data).and_then(|mt| baseline_estimate(m, data, Some(&mt)))
            } else {
                baseline_estimate(m, data, None)
            };
            match result {
                Ok(e) => Some(e),
                Err(e) => {
                    warn(warnings, format!("baseline {m} skipped: {e}"));
                    None
                }
            }
        })
        .collect()
}

/// Ingests data, samples the generalized posterior, and assembles the result
/// document. Under identity confusion matrices the posterior is sampled
/// exactly and the point estimate is the closed-form mean.
pub fn fit(config: &RunConfig, base: &Path) -> Result<FitResult> {
    config.validate()?;
    let loaded = load_data(config, base)?;
    let data = &loaded.dataset;
    let prior = build_prior(config, base, &loaded)?;
    let mut warnings = Vec::new();
    let (samples, exact_mean) = if is_conjugate(&prior) {
        let conc = conjugate_posterior(data, &prior, config.sampler.alpha)?;
        (conjugate_sampler(data, &prior, &config.sampler)?, Some(dirichlet_mean(&conc)?))
    } else {
        (run_sampler(data, &prior, &config.sampler)?, None)
    };
    let mean = posterior_mean(&samples)?;
    let theta_hat = Theta::new(mean.confusions, exact_mean.unwrap_or(mean.prevalence))?;

    let wants = |m: IntervalMethod| config.intervals.methods.contains(&m);
    let delta = if wants(IntervalMethod::Delta) {
        match DeltaMethod::new(theta_hat.clone(), data) {
            Ok(dm) => Some(dm),
            Err(e) => {
                warn(&mut warnings, format!("delta intervals omitted: {e}"));
                None
            }
        }
    } else {
        None
    };

    let mut parameters = Vec::new();
    for param in samples.parameters() {
        let values: Vec<f64> = samples.series(param).into_iter().flatten().collect();
        let n = values.len() as f64;
        let mean = match param {
            Parameter::Prevalence(i) => theta_hat.prevalence.get(i),
            Parameter::Confusion { classifier, row, col } => theta_hat.confusions[classifier].get(row, col),
        };
        let sample_mean = values.iter().sum::<f64>() / n;
        let sd = if values.len() > 1 {
            (values.iter().map(|v| (v - sample_mean).powi(2)).sum::<f64>() / (n - 1.0)).sqrt()
        } else {
            0.0
        };
        let (rhat, rhat_degenerate) = match gelman_rubin_parameter(&samples, param) {
            Ok(r) => (Some(r.value), r.degenerate),
            Err(_) => (None, false),
        };
        let mut intervals = Vec::new();
        for &level in &config.intervals.levels {
            if wants(IntervalMethod::Percentile) {
                intervals.push(percentile_interval(&values, level));
            }
            if let Some(dm) = &delta {
                intervals.push(dm.target(&DeltaTarget::Parameter(param), level)?);
            }
        }
        parameters.push(ParameterResult {
            name: param.to_string(),
            parameter: param,
            mean,
            sd,
            rhat,
            rhat_degenerate,
            intervals,
        });
    }
    if parameters.iter().any(|p| p.rhat.is_none()) {
        warn(&mut warnings, "split R-hat unavailable: needs two chains with four draws each".into());
    }
    let worst = parameters.iter().filter_map(|p| p.rhat).fold(f64::NAN, f64::max);
    if worst > RHAT_THRESHOLD {
        warn(&mut warnings, format!("largest split R-hat {worst:.4} exceeds {RHAT_THRESHOLD}"));
    }

    let baselines = run_baselines(&config.baselines, data, &mut warnings);
    let draws = config.output.draws.then(|| DrawTable {
        parameters: parameters.iter().map(|p| p.name.clone()).collect(),
        chains: samples
            .chains
            .iter()
            .map(|chain| {
                chain
                    .iter()
                    .map(|d| parameters.iter().map(|p| p.parameter.value(d)).collect())
                    .collect()
            })
            .collect(),
    });
    Ok(FitResult {
        version: VERSION.to_string(),
        config: config.clone(),
        data: loaded.summary,
        sampler: SamplerSummary::of(&samples),
        prevalence: theta_hat.prevalence,
        confusions: theta_hat.confusions,
        parameters,
        baselines,
        warnings,
        draws,
    })
}

/// Result document written by `baseline`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BaselineReport {
    pub version: String,
    pub data: DataSummary,
    pub estimates: Vec<BaselineEstimate>,
}

/// Classical estimators only; ACC and APA take their training matrix from
/// the labeled set. Any failing method fails the command.
pub fn baseline(config: &RunConfig, base: &Path, methods: &[BaselineMethod]) -> Result<BaselineReport> {
    let loaded = load_data(config, base)?;
    let data = &loaded.dataset;
    let estimates = methods
        .iter()
        .map(|&m| {
            if m.needs_confusion() {
                baseline_estimate(m, data, Some(&baseline_confusion(data)?))
            } else {
                baseline_estimate(m, data, None)
            }
        })
        .collect::<Result<Vec<_>>>()?;
    Ok(BaselineReport {
        version: VERSION.to_string(),
        data: loaded.summary,
        estimates,
    })
}

/// Simulation output bundle.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SimulationReport {
    pub version: String,
    pub config: SimulationConfig,
    pub result: StudyResult,
}

/// Runs a study and writes `summary.json` plus a long-format CSV
/// (`replicates.csv` or `coverage.csv`) into `dir`.
pub fn simulate(config: &SimulationConfig, dir: &Path) -> Result<SimulationReport> {
    let result = config.run()?;
    std::fs::create_dir_all(dir)?;
    let report = SimulationReport {
        version: VERSION.to_string(),
        config: config.clone(),
        result,
    };
    match &report.result {
        StudyResult::Ccnaa(study) => {
            let c = config.scenario.classes();
            let mut w = csv::Writer::from_writer(Vec::new());
            let mut header = vec!["replicate".to_string(), "seed".into(), "method".into(), "ccnaa".into(), "seconds".into()];
            header.extend((1..=c).map(|j| format!("p_hat_{j}")));
            w.write_record(&header).map_err(csv_write)?;
            for r in &study.records {
                let mut row = vec![r.replicate.to_string(), r.seed.to_string(), r.method.clone(), r.ccnaa.to_string(), r.seconds.to_string()];
                row.extend(r.estimate.iter().map(f64::to_string));
                w.write_record(&row).map_err(csv_write)?;
            }
            io::write_atomic(&dir.join("replicates.csv"), &w.into_inner().map_err(|e| Error::Parse(e.to_string()))?)?;
        }
        StudyResult::Coverage(study) => {
            let mut w = csv::Writer::from_writer(Vec::new());
            w.write_record(["component", "truth", "method", "coverage", "mean_width"]).map_err(csv_write)?;
            for comp in &study.components {
                let name = Parameter::Prevalence(comp.class).to_string();
                for (method, cov, width) in [
                    ("delta", comp.delta_coverage, comp.delta_width),
                    ("percentile", comp.percentile_coverage, comp.percentile_width),
                ] {
                    w.write_record([name.clone(), comp.truth.to_string(), method.into(), cov.to_string(), width.to_string()])
                        .map_err(csv_write)?;
                }
            }
            io::write_atomic(&dir.join("coverage.csv"), &w.into_inner().map_err(|e| Error::Parse(e.to_string()))?)?;
        }
    }
    io::write_atomic(&dir.join("summary.json"), io::to_json(&summary_view(&report))?.as_bytes())?;
    Ok(report)
}

fn csv_write(e: csv::Error) -> Error {
    Error::Parse(format!("CSV output: {e}"))
}

/// The summary document leaves per-replicate rows to the CSV.
fn summary_view(report: &SimulationReport) -> serde_json::Value {
    let result = match &report.result {
        StudyResult::Ccnaa(s) => serde_json::json!({ "kind": "ccnaa", "summaries": s.summaries }),
        StudyResult::Coverage(s) => serde_json::to_value(s).unwrap_or_default(),
    };
    serde_json::json!({ "version": report.version, "config": report.config, "result": result })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ParameterDiagnostic {
    pub name: String,
    pub rhat: f64,
    pub degenerate: bool,
    pub chain_means: Vec<f64>,
}

/// Gibbs versus reference-sampler posterior means of the prevalence.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ReferenceComparison {
    pub gibbs: Vec<f64>,
    pub reference: Vec<f64>,
    pub max_abs_difference: f64,
    pub reference_acceptance: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DiagnosticReport {
    pub version: String,
    pub threshold: f64,
    pub max_rhat: f64,
    pub converged: bool,
    pub parameters: Vec<ParameterDiagnostic>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub reference: Option<ReferenceComparison>,
}

fn diagnose_series(names: Vec<String>, series: Vec<Vec<Vec<f64>>>) -> Result<DiagnosticReport> {
    let parameters = names
        .into_iter()
        .zip(series)
        .map(|(name, chains)| {
            let r = crate::inference::gelman_rubin(&chains)?;
            Ok(ParameterDiagnostic {
                name,
                rhat: r.value,
                degenerate: r.degenerate,
                chain_means: chains.iter().map(|c| c.iter().sum::<f64>() / c.len() as f64).collect(),
            })
        })
        .collect::<Result<Vec<_>>>()?;
    let max_rhat = parameters.iter().map(|p| p.rhat).fold(1.0, f64::max);
    Ok(DiagnosticReport {
        version: VERSION.to_string(),
        threshold: RHAT_THRESHOLD,
        max_rhat,
        converged: max_rhat < RHAT_THRESHOLD,
        parameters,
        reference: None,
    })
}

/// Split R-hat from the draws stored in a result document.
pub fn diagnose_result(result: &FitResult) -> Result<DiagnosticReport> {
    let draws = result.draws.as_ref().ok_or_else(|| {
        Error::InvalidConfig("result document has no draws; rerun fit with output.draws = true".into())
    })?;
    let series = (0..draws.parameters.len())
        .map(|j| draws.chains.iter().map(|c| c.iter().map(|row| row[j]).collect()).collect())
        .collect();
    diagnose_series(draws.parameters.clone(), series)
}

/// Runs the configured sampler and reports split R-hat for every parameter;
/// with `reference`, also runs the Metropolis reference sampler with the same
/// chain settings and compares prevalence means.
pub fn diagnose_config(config: &RunConfig, base: &Path, reference: bool) -> Result<DiagnosticReport> {
    config.validate()?;
    let loaded = load_data(config, base)?;
    let prior = build_prior(config, base, &loaded)?;
    let samples = if is_conjugate(&prior) {
        conjugate_sampler(&loaded.dataset, &prior, &config.sampler)?
    } else {
        run_sampler(&loaded.dataset, &prior, &config.sampler)?
    };
    let params = samples.parameters();
    let mut report = diagnose_series(
        params.iter().map(Parameter::to_string).collect(),
        params.iter().map(|&p| samples.series(p)).collect(),
    )?;
    if reference {
        let mh = mh_reference_sampler(&loaded.dataset, &prior, &config.sampler)?;
        let gibbs = posterior_mean(&samples)?.prevalence.into_vec();
        let other = posterior_mean(&mh)?.prevalence.into_vec();
        report.reference = Some(ReferenceComparison {
            max_abs_difference: gibbs.iter().zip(&other).map(|(a, b)| (a - b).abs()).fold(0.0, f64::max),
            gibbs,
            reference: other,
            reference_acceptance: mh.acceptance,
        });
    }
    Ok(report)
}
