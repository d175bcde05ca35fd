//! Random-walk Metropolis on additive log-ratio coordinates, targeting the
//! uncoarsened posterior `exp(-alpha * N f_N) * prior`. Slow but exact; used
//! to check the Gibbs sampler.

use nalgebra::{DMatrix, DVector};
use rand::Rng;
use rand_distr::StandardNormal;
use rayon::prelude::*;

use crate::composition::Dataset;
use crate::error::{Error, Result};
use crate::loss::LossModel;
use crate::quantifiers::{ClassifierPrior, PriorSpec};
use crate::rng::chain_rng;
use crate::sampler::{Draw, GibbsState, PosteriorSamples, SamplerConfig, SamplerKind};

const TARGET_ACCEPTANCE: f64 = 0.234;
const ADAPT_BATCH: usize = 100;
const COVARIANCE_WINDOW: usize = 5000;

/// One simplex block in the unconstrained vector: the free entries, with the
/// last one as the log-ratio reference.
#[derive(Debug, Clone)]
struct Block {
    /// `None` for the prevalence, otherwise `(classifier, row)`.
    owner: Option<(usize, usize)>,
    entries: Vec<usize>,
    concentration: Vec<f64>,
    offset: usize,
}

impl Block {
    fn coords(&self) -> usize {
        self.entries.len() - 1
    }
}

/// Log posterior density in log-ratio coordinates, Jacobian included.
#[derive(Debug, Clone)]
pub struct ReferenceTarget {
    model: LossModel,
    alpha: f64,
    classes: usize,
    blocks: Vec<Block>,
    template: GibbsState,
    dim: usize,
}

impl ReferenceTarget {
    pub fn new(data: &Dataset, priors: &PriorSpec, alpha: f64) -> Result<Self> {
        priors.validate()?;
        priors.check_dataset(data)?;
        if !(alpha >= 0.0 && alpha.is_finite()) {
            return Err(Error::InvalidConfig(format!("alpha must be non-negative, got {alpha}")));
        }
        let c = data.classes();
        let mut blocks = Vec::new();
        let mut offset = 0;
        let mut push = |owner, entries: Vec<usize>, concentration: Vec<f64>, blocks: &mut Vec<Block>| {
            let b = Block {
                owner,
                entries,
                concentration,
                offset,
            };
            offset += b.coords();
            blocks.push(b);
        };
        let mut confusions = Vec::new();
        for (k, prior) in priors.classifiers.iter().enumerate() {
            match prior {
                ClassifierPrior::Fixed { confusion } => confusions.push(confusion.to_flat()),
                ClassifierPrior::Dirichlet { concentration, support } => {
                    let mut m = vec![0.0; c * c];
                    for i in 0..c {
                        let entries: Vec<usize> = (0..c).filter(|&j| support.allows(i, j)).collect();
                        let conc: Vec<f64> = entries.iter().map(|&j| concentration[i][j]).collect();
                        let total: f64 = conc.iter().sum();
                        for (&j, a) in entries.iter().zip(&conc) {
                            m[i * c + j] = a / total;
                        }
                        push(Some((k, i)), entries, conc, &mut blocks);
                    }
                    confusions.push(m);
                }
            }
        }
        let total_v: f64 = priors.prevalence.iter().sum();
        let prevalence: Vec<f64> = priors.prevalence.iter().map(|v| v / total_v).collect();
        push(None, (0..c).collect(), priors.prevalence.clone(), &mut blocks);
        Ok(ReferenceTarget {
            model: LossModel::new(data),
            alpha,
            classes: c,
            blocks,
            template: GibbsState {
                prevalence,
                confusions,
            },
            dim: offset,
        })
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    /// Coordinates of the prior-mean state.
    pub fn initial_point(&self) -> Vec<f64> {
        self.encode(&self.template)
    }

    pub fn encode(&self, state: &GibbsState) -> Vec<f64> {
        let c = self.classes;
        let mut z = vec![0.0; self.dim];
        for b in &self.blocks {
            let y: Vec<f64> = match b.owner {
                None => b.entries.iter().map(|&i| state.prevalence[i]).collect(),
                Some((k, i)) => b.entries.iter().map(|&j| state.confusions[k][i * c + j]).collect(),
            };
            let reference = y[y.len() - 1].ln();
            for t in 0..b.coords() {
                z[b.offset + t] = y[t].ln() - reference;
            }
        }
        z
    }

    pub fn decode(&self, z: &[f64]) -> GibbsState {
        let c = self.classes;
        let mut state = self.template.clone();
        for b in &self.blocks {
            let coords = &z[b.offset..b.offset + b.coords()];
            let max = coords.iter().copied().fold(0.0f64, f64::max);
            let mut y: Vec<f64> = coords.iter().map(|v| (v - max).exp()).collect();
            y.push((-max).exp());
            let total: f64 = y.iter().sum();
            y.iter_mut().for_each(|v| *v /= total);
            match b.owner {
                None => {
                    for (&i, v) in b.entries.iter().zip(&y) {
                        state.prevalence[i] = *v;
                    }
                }
                Some((k, i)) => {
                    for (&j, v) in b.entries.iter().zip(&y) {
                        state.confusions[k][i * c + j] = *v;
                    }
                }
            }
        }
        state
    }

    /// `-alpha N f_N + sum log Dirichlet prior + log Jacobian`, up to a
    /// constant; `-inf` where the loss is undefined.
    pub fn log_density(&self, z: &[f64]) -> f64 {
        let state = self.decode(z);
        let c = self.classes;
        let mut prior = 0.0;
        for b in &self.blocks {
            for (t, &e) in b.entries.iter().enumerate() {
                let y = match b.owner {
                    None => state.prevalence[e],
                    Some((k, i)) => state.confusions[k][i * c + e],
                };
                // Dirichlet density y^(a-1) times the log-ratio Jacobian prod y.
                prior += b.concentration[t] * y.ln();
            }
        }
        if !prior.is_finite() {
            return f64::NEG_INFINITY;
        }
        if self.alpha == 0.0 {
            return prior;
        }
        match self.model.total_raw(&state.confusions, &state.prevalence) {
            Ok(loss) => prior - self.alpha * loss,
            Err(_) => f64::NEG_INFINITY,
        }
    }

    /// Log Metropolis ratio for moving from `from` to `to` under a symmetric
    /// proposal.
    pub fn log_acceptance(&self, from: &[f64], to: &[f64]) -> f64 {
        self.log_density(to) - self.log_density(from)
    }
}

/// Runs `config.chains` adaptive Metropolis chains; `config.coarsening` is
/// ignored. The proposal covariance and scale adapt during burn-in only.
pub fn mh_reference_sampler(data: &Dataset, priors: &PriorSpec, config: &SamplerConfig) -> Result<PosteriorSamples> {
    if config.chains == 0 || config.iterations == 0 || config.thin == 0 || config.burn_in >= config.iterations {
        return Err(Error::InvalidConfig("invalid chain lengths for the reference sampler".into()));
    }
    let target = ReferenceTarget::new(data, priors, config.alpha)?;
    let results = (0..config.chains)
        .into_par_iter()
        .map(|chain| run_chain(&target, config, chain))
        .collect::<Result<Vec<_>>>()?;
    let (chains, acceptance) = results.into_iter().unzip();
    Ok(PosteriorSamples {
        kind: SamplerKind::Metropolis,
        config: config.clone(),
        coarsening: None,
        acceptance,
        chains,
    })
}

fn run_chain(target: &ReferenceTarget, config: &SamplerConfig, chain: usize) -> Result<(Vec<Draw>, f64)> {
    let d = target.dim();
    let mut rng = chain_rng(config.seed, chain as u64);
    let mut z = target.initial_point();
    let mut current = target.log_density(&z);
    if !current.is_finite() {
        return Err(Error::Calibration("initial point has zero posterior density".into()));
    }
    let mut draws = Vec::with_capacity(config.retained_per_chain());
    if d == 0 {
        let draw = target.decode(&z).to_draw(target.classes)?;
        draws.resize(config.retained_per_chain(), draw);
        return Ok((draws, 1.0));
    }
    let base = 2.38 / (d as f64).sqrt();
    let mut chol = DMatrix::<f64>::identity(d, d) * 0.1;
    let mut log_scale = 0.0f64;
    let mut history: Vec<Vec<f64>> = Vec::new();
    let mut batch_accepts = 0usize;
    let mut accepted = 0usize;
    let mut proposed = 0usize;
    let mut step = DVector::<f64>::zeros(d);
    for it in 0..config.iterations {
        for v in step.iter_mut() {
            *v = rng.sample(StandardNormal);
        }
        let delta = &chol * &step * (base * log_scale.exp());
        let proposal: Vec<f64> = z.iter().zip(delta.iter()).map(|(a, b)| a + b).collect();
        let candidate = target.log_density(&proposal);
        let u: f64 = rng.random();
        let accept = candidate.is_finite() && u.ln() < candidate - current;
        if accept {
            z = proposal;
            current = candidate;
        }
        if it < config.burn_in {
            batch_accepts += accept as usize;
            history.push(z.clone());
            if (it + 1) % ADAPT_BATCH == 0 {
                let rate = batch_accepts as f64 / ADAPT_BATCH as f64;
                log_scale += rate - TARGET_ACCEPTANCE;
                batch_accepts = 0;
                if history.len() >= 2 * d.max(ADAPT_BATCH) {
                    let start = history.len().saturating_sub(COVARIANCE_WINDOW);
                    if let Some(l) = empirical_cholesky(&history[start..]) {
                        chol = l;
                    }
                }
            }
        } else {
            proposed += 1;
            accepted += accept as usize;
            if (it - config.burn_in) % config.thin == 0 {
                draws.push(target.decode(&z).to_draw(target.classes)?);
            }
        }
    }
    let rate = accepted as f64 / proposed.max(1) as f64;
    if accepted == 0 {
        return Err(Error::Calibration(format!(
            "chain {} accepted no proposals after burn-in",
            chain + 1
        )));
    }
    Ok((draws, rate))
}

fn empirical_cholesky(rows: &[Vec<f64>]) -> Option<DMatrix<f64>> {
    let d = rows[0].len();
    let mut cov = crate::loss::sample_covariance(rows);
    let ridge = 1e-10 * (0..d).map(|i| cov[(i, i)]).fold(1e-12, f64::max);
    for i in 0..d {
        cov[(i, i)] += ridge;
    }
    cov.cholesky().map(|c| c.l())
}
