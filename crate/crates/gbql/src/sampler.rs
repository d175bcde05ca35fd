//! Data-augmented Gibbs sampler for the rounded and coarsened posterior.
//!
//! Each prediction `a_r` is replaced by pseudo-counts `ceil(T a_rj)`; every
//! pseudo-observation predicted as `j` gets a latent true class drawn with
//! probability proportional to `M_ij p_i` (unlabeled) or `M_ij b_ri`
//! (labeled). Given the allocations, confusion rows and prevalence have
//! conjugate Dirichlet updates with the counts weighted by `alpha / T`.
//!
//! Unlabeled pseudo-observations of the same classifier and predicted class
//! share one full conditional, so their allocations are drawn as a single
//! multinomial over the pooled count. Exact labels allocate deterministically.

use rand::Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::composition::{Composition, ConfusionMatrix, Dataset};
use crate::error::{Error, Result};
use crate::loss::Theta;
use crate::quantifiers::{ClassifierPrior, PriorSpec};
use crate::rng::{chain_rng, sample_dirichlet, sample_multinomial};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SamplerConfig {
    /// Rounding and coarsening factor `T`; `None` uses the unlabeled size.
    pub coarsening: Option<u64>,
    pub alpha: f64,
    pub chains: usize,
    /// Iterations per chain, burn-in included.
    pub iterations: usize,
    pub burn_in: usize,
    pub thin: usize,
    pub seed: u64,
}

impl Default for SamplerConfig {
    fn default() -> Self {
        SamplerConfig {
            coarsening: None,
            alpha: 1.0,
            chains: 3,
            iterations: 6000,
            burn_in: 1000,
            thin: 1,
            seed: 0,
        }
    }
}

impl SamplerConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.alpha > 0.0 && self.alpha.is_finite()) {
            return Err(Error::InvalidConfig(format!("alpha must be positive, got {}", self.alpha)));
        }
        if self.chains == 0 || self.iterations == 0 || self.thin == 0 {
            return Err(Error::InvalidConfig("chains, iterations and thin must be positive".into()));
        }
        if self.burn_in >= self.iterations {
            return Err(Error::InvalidConfig(format!(
                "burn_in ({}) must be below iterations ({})",
                self.burn_in, self.iterations
            )));
        }
        if self.coarsening == Some(0) {
            return Err(Error::InvalidConfig("coarsening factor must be at least 1".into()));
        }
        Ok(())
    }

    /// Effective coarsening factor for `data`.
    pub fn coarsening_for(&self, data: &Dataset) -> u64 {
        self.coarsening.unwrap_or(data.n_unlabeled() as u64).max(1)
    }

    pub fn retained_per_chain(&self) -> usize {
        (self.iterations - self.burn_in).div_ceil(self.thin)
    }
}

/// `ceil(T a)` with products within `1e-9` (relative) of a positive integer
/// snapped to it, so that e.g. `0.9 * 10` counts as 9 rather than 10.
pub fn ceil_count(a: f64, factor: u64) -> u64 {
    if a <= 0.0 {
        return 0;
    }
    let x = a * factor as f64;
    let nearest = x.round();
    if nearest >= 1.0 && (x - nearest).abs() <= 1e-9 * x.max(1.0) {
        nearest as u64
    } else {
        x.ceil() as u64
    }
}

/// Pseudo-counts `ceil(T a_rj)`, indexed `[instance][classifier][class]`.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct PseudoCounts {
    pub factor: u64,
    pub unlabeled: Vec<Vec<Vec<u64>>>,
    pub labeled: Vec<Vec<Vec<u64>>>,
}

pub fn round_predictions(data: &Dataset, factor: u64) -> PseudoCounts {
    let factor = factor.max(1);
    let round = |preds: &[Composition]| -> Vec<Vec<u64>> {
        preds
            .iter()
            .map(|a| a.as_slice().iter().map(|&v| ceil_count(v, factor)).collect())
            .collect()
    };
    PseudoCounts {
        factor,
        unlabeled: data.unlabeled().iter().map(|p| round(p)).collect(),
        labeled: data.labeled().iter().map(|l| round(&l.predictions)).collect(),
    }
}

/// Latent class counts for one sweep, indexed `[..][classifier][predicted j][true i]`.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct LatentAllocation {
    /// Pooled over all unlabeled instances.
    pub unlabeled: Vec<Vec<Vec<u64>>>,
    /// One entry per labeled instance with an uncertain belief, in dataset
    /// order; see [`GibbsSampler::uncertain_instances`].
    pub labeled: Vec<Vec<Vec<Vec<u64>>>>,
}

/// Current sampler state; confusion matrices are row-major `C * C`.
#[derive(Debug, Clone, PartialEq)]
pub struct GibbsState {
    pub prevalence: Vec<f64>,
    pub confusions: Vec<Vec<f64>>,
}

impl GibbsState {
    pub fn from_theta(theta: &Theta) -> Self {
        GibbsState {
            prevalence: theta.prevalence.as_slice().to_vec(),
            confusions: theta.confusions.iter().map(ConfusionMatrix::to_flat).collect(),
        }
    }

    pub fn to_draw(&self, classes: usize) -> Result<Draw> {
        Ok(Draw {
            prevalence: Composition::new(self.prevalence.clone())?,
            confusions: self
                .confusions
                .iter()
                .map(|m| ConfusionMatrix::from_flat(classes, m))
                .collect::<Result<Vec<_>>>()?,
        })
    }
}

/// One retained posterior draw.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Draw {
    pub prevalence: Composition,
    pub confusions: Vec<ConfusionMatrix>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SamplerKind {
    Gibbs,
    Metropolis,
    /// Independent draws from a closed-form posterior.
    Conjugate,
}

/// A scalar model parameter.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Parameter {
    Prevalence(usize),
    Confusion { classifier: usize, row: usize, col: usize },
}

impl Parameter {
    pub fn value(&self, draw: &Draw) -> f64 {
        match *self {
            Parameter::Prevalence(i) => draw.prevalence.get(i),
            Parameter::Confusion { classifier, row, col } => draw.confusions[classifier].get(row, col),
        }
    }
}

impl std::fmt::Display for Parameter {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            Parameter::Prevalence(i) => write!(f, "p[{}]", i + 1),
            Parameter::Confusion { classifier, row, col } => {
                write!(f, "M{}[{},{}]", classifier + 1, row + 1, col + 1)
            }
        }
    }
}

/// Retained draws per chain with the settings that produced them.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PosteriorSamples {
    pub kind: SamplerKind,
    pub config: SamplerConfig,
    /// Coarsening factor actually used (Gibbs only).
    pub coarsening: Option<u64>,
    /// Post burn-in acceptance rate per chain (1 for Gibbs).
    pub acceptance: Vec<f64>,
    pub chains: Vec<Vec<Draw>>,
}

impl PosteriorSamples {
    pub fn classes(&self) -> usize {
        self.first().prevalence.dim()
    }

    pub fn classifiers(&self) -> usize {
        self.first().confusions.len()
    }

    fn first(&self) -> &Draw {
        &self.chains[0][0]
    }

    pub fn n_draws(&self) -> usize {
        self.chains.iter().map(Vec::len).sum()
    }

    pub fn draws(&self) -> impl Iterator<Item = &Draw> {
        self.chains.iter().flatten()
    }

    /// Values of `param` per chain.
    pub fn series(&self, param: Parameter) -> Vec<Vec<f64>> {
        self.chains.iter().map(|c| c.iter().map(|d| param.value(d)).collect()).collect()
    }

    /// All scalar parameters: prevalence first, then confusion entries.
    pub fn parameters(&self) -> Vec<Parameter> {
        let c = self.classes();
        let mut out: Vec<Parameter> = (0..c).map(Parameter::Prevalence).collect();
        for classifier in 0..self.classifiers() {
            for row in 0..c {
                for col in 0..c {
                    out.push(Parameter::Confusion { classifier, row, col });
                }
            }
        }
        out
    }
}

/// Precomputed pseudo-count totals and priors for one dataset.
#[derive(Debug, Clone)]
pub struct GibbsSampler<'a> {
    priors: &'a PriorSpec,
    classes: usize,
    weight: f64,
    factor: u64,
    /// `[k][j]`: unlabeled pseudo-counts pooled over instances.
    unlabeled_totals: Vec<Vec<u64>>,
    /// `[k][i][j]`: deterministic allocations from exact labels.
    exact_counts: Vec<Vec<Vec<u64>>>,
    /// Uncertain labeled instances: (dataset index, belief, counts `[k][j]`).
    uncertain: Vec<(usize, Vec<f64>, Vec<Vec<u64>>)>,
}

impl<'a> GibbsSampler<'a> {
    pub fn new(data: &Dataset, priors: &'a PriorSpec, config: &SamplerConfig) -> Result<Self> {
        config.validate()?;
        priors.validate()?;
        priors.check_dataset(data)?;
        let factor = config.coarsening_for(data);
        let pseudo = round_predictions(data, factor);
        let c = data.classes();
        let kk = data.classifiers();
        let mut unlabeled_totals = vec![vec![0u64; c]; kk];
        for inst in &pseudo.unlabeled {
            for (k, counts) in inst.iter().enumerate() {
                for (t, n) in unlabeled_totals[k].iter_mut().zip(counts) {
                    *t += n;
                }
            }
        }
        let mut exact_counts = vec![vec![vec![0u64; c]; c]; kk];
        let mut uncertain = Vec::new();
        for (r, (inst, counts)) in data.labeled().iter().zip(&pseudo.labeled).enumerate() {
            match inst.belief.degenerate_class() {
                Some(y) => {
                    for (k, row) in counts.iter().enumerate() {
                        for (j, &n) in row.iter().enumerate() {
                            if n > 0 && !priors.classifiers[k].allows(y, j) {
                                return Err(Error::InvalidConfig(format!(
                                    "labeled instance {} of class {} predicts class {} outside the support of classifier {}",
                                    r + 1,
                                    y + 1,
                                    j + 1,
                                    k + 1
                                )));
                            }
                            exact_counts[k][y][j] += n;
                        }
                    }
                }
                None => {
                    let belief = inst.belief.as_slice().to_vec();
                    for (k, row) in counts.iter().enumerate() {
                        for (j, &n) in row.iter().enumerate() {
                            let reachable = (0..c).any(|i| belief[i] > 0.0 && priors.classifiers[k].allows(i, j));
                            if n > 0 && !reachable {
                                return Err(Error::InvalidConfig(format!(
                                    "labeled instance {} predicts class {} that no believed class can produce under classifier {}",
                                    r + 1,
                                    j + 1,
                                    k + 1
                                )));
                            }
                        }
                    }
                    uncertain.push((r, belief, counts.clone()));
                }
            }
        }
        for (k, totals) in unlabeled_totals.iter().enumerate() {
            for (j, &n) in totals.iter().enumerate() {
                if n > 0 && !(0..c).any(|i| priors.classifiers[k].allows(i, j)) {
                    return Err(Error::InvalidConfig(format!(
                        "class {} is predicted but excluded from every row of classifier {}",
                        j + 1,
                        k + 1
                    )));
                }
            }
        }
        Ok(GibbsSampler {
            priors,
            classes: c,
            weight: config.alpha / factor as f64,
            factor,
            unlabeled_totals,
            exact_counts,
            uncertain,
        })
    }

    pub fn factor(&self) -> u64 {
        self.factor
    }

    /// Dataset indices of the labeled instances with uncertain beliefs.
    pub fn uncertain_instances(&self) -> Vec<usize> {
        self.uncertain.iter().map(|(r, _, _)| *r).collect()
    }

    /// Pooled unlabeled pseudo-counts `[k][j]`.
    pub fn unlabeled_totals(&self) -> &[Vec<u64>] {
        &self.unlabeled_totals
    }

    /// Uncertain-instance pseudo-counts `[k][j]`, in allocation order.
    pub fn uncertain_counts(&self) -> Vec<&[Vec<u64>]> {
        self.uncertain.iter().map(|(_, _, n)| n.as_slice()).collect()
    }

    /// Draws `p` and each confusion row from its prior.
    pub fn initial_state<R: Rng + ?Sized>(&self, rng: &mut R) -> GibbsState {
        let c = self.classes;
        let mut prevalence = vec![0.0; c];
        sample_dirichlet(rng, &self.priors.prevalence, &mut prevalence);
        let confusions = self
            .priors
            .classifiers
            .iter()
            .map(|prior| match prior {
                ClassifierPrior::Fixed { confusion } => confusion.to_flat(),
                ClassifierPrior::Dirichlet { concentration, support } => {
                    let mut m = vec![0.0; c * c];
                    for i in 0..c {
                        let alpha: Vec<f64> =
                            (0..c).map(|j| if support.allows(i, j) { concentration[i][j] } else { 0.0 }).collect();
                        sample_dirichlet(rng, &alpha, &mut m[i * c..(i + 1) * c]);
                    }
                    m
                }
            })
            .collect();
        GibbsState {
            prevalence,
            confusions,
        }
    }

    /// Draws latent class counts given the current state.
    pub fn allocate<R: Rng + ?Sized>(&self, state: &GibbsState, rng: &mut R) -> Result<LatentAllocation> {
        let c = self.classes;
        let mut weights = vec![0.0; c];
        let mut unlabeled = Vec::with_capacity(self.unlabeled_totals.len());
        for (k, totals) in self.unlabeled_totals.iter().enumerate() {
            let m = &state.confusions[k];
            let mut per_j = vec![vec![0u64; c]; c];
            for (j, &n) in totals.iter().enumerate() {
                if n == 0 {
                    continue;
                }
                for (i, w) in weights.iter_mut().enumerate() {
                    *w = m[i * c + j] * state.prevalence[i];
                }
                if weights.iter().all(|&w| w <= 0.0) {
                    return Err(Error::BoundaryParameter { class: j });
                }
                sample_multinomial(rng, n, &weights, &mut per_j[j]);
            }
            unlabeled.push(per_j);
        }
        let mut labeled = Vec::with_capacity(self.uncertain.len());
        for (_, belief, counts) in &self.uncertain {
            let mut per_k = Vec::with_capacity(counts.len());
            for (k, row) in counts.iter().enumerate() {
                let m = &state.confusions[k];
                let mut per_j = vec![vec![0u64; c]; c];
                for (j, &n) in row.iter().enumerate() {
                    if n == 0 {
                        continue;
                    }
                    for (i, w) in weights.iter_mut().enumerate() {
                        *w = m[i * c + j] * belief[i];
                    }
                    if weights.iter().all(|&w| w <= 0.0) {
                        return Err(Error::BoundaryParameter { class: j });
                    }
                    sample_multinomial(rng, n, &weights, &mut per_j[j]);
                }
                per_k.push(per_j);
            }
            labeled.push(per_k);
        }
        Ok(LatentAllocation { unlabeled, labeled })
    }

    /// Dirichlet parameters of each confusion row given the allocations;
    /// `None` for fixed classifiers.
    pub fn confusion_posterior(&self, alloc: &LatentAllocation) -> Vec<Option<Vec<Vec<f64>>>> {
        let c = self.classes;
        self.priors
            .classifiers
            .iter()
            .enumerate()
            .map(|(k, prior)| match prior {
                ClassifierPrior::Fixed { .. } => None,
                ClassifierPrior::Dirichlet { concentration, support } => Some(
                    (0..c)
                        .map(|i| {
                            (0..c)
                                .map(|j| {
                                    if !support.allows(i, j) {
                                        return 0.0;
                                    }
                                    let mut n = alloc.unlabeled[k][j][i] + self.exact_counts[k][i][j];
                                    for inst in &alloc.labeled {
                                        n += inst[k][j][i];
                                    }
                                    concentration[i][j] + self.weight * n as f64
                                })
                                .collect()
                        })
                        .collect(),
                ),
            })
            .collect()
    }

    /// Dirichlet parameters of the prevalence given the allocations.
    pub fn prevalence_posterior(&self, alloc: &LatentAllocation) -> Vec<f64> {
        let mut out = self.priors.prevalence.clone();
        for per_j in &alloc.unlabeled {
            for counts in per_j {
                for (o, &n) in out.iter_mut().zip(counts) {
                    *o += self.weight * n as f64;
                }
            }
        }
        out
    }

    /// One full sweep: allocations, confusion rows, then prevalence.
    pub fn sweep<R: Rng + ?Sized>(&self, state: &mut GibbsState, rng: &mut R) -> Result<()> {
        let c = self.classes;
        let alloc = self.allocate(state, rng)?;
        for (m, post) in state.confusions.iter_mut().zip(self.confusion_posterior(&alloc)) {
            if let Some(rows) = post {
                for (i, alpha) in rows.iter().enumerate() {
                    sample_dirichlet(rng, alpha, &mut m[i * c..(i + 1) * c]);
                }
            }
        }
        let v = self.prevalence_posterior(&alloc);
        sample_dirichlet(rng, &v, &mut state.prevalence);
        Ok(())
    }

    fn run_chain(&self, config: &SamplerConfig, chain: usize) -> Result<Vec<Draw>> {
        let mut rng = chain_rng(config.seed, chain as u64);
        let mut state = self.initial_state(&mut rng);
        let mut draws = Vec::with_capacity(config.retained_per_chain());
        for it in 0..config.iterations {
            self.sweep(&mut state, &mut rng)?;
            if it >= config.burn_in && (it - config.burn_in) % config.thin == 0 {
                draws.push(state.to_draw(self.classes)?);
            }
        }
        Ok(draws)
    }
}

/// Runs `config.chains` independent Gibbs chains in parallel.
///
/// Chain `c` uses [`chain_rng`]`(config.seed, c)`, so results do not depend on
/// the thread count.
pub fn run_sampler(data: &Dataset, priors: &PriorSpec, config: &SamplerConfig) -> Result<PosteriorSamples> {
    let sampler = GibbsSampler::new(data, priors, config)?;
    let chains = (0..config.chains)
        .into_par_iter()
        .map(|c| sampler.run_chain(config, c))
        .collect::<Result<Vec<_>>>()?;
    Ok(PosteriorSamples {
        kind: SamplerKind::Gibbs,
        config: config.clone(),
        coarsening: Some(sampler.factor()),
        acceptance: vec![1.0; config.chains],
        chains,
    })
}

/// Whether every classifier's confusion matrix is fixed at the identity, so
/// that the prevalence posterior is a closed-form Dirichlet.
pub fn is_conjugate(priors: &PriorSpec) -> bool {
    priors.classifiers.iter().all(|p| match p {
        ClassifierPrior::Fixed { confusion } => *confusion == ConfusionMatrix::identity(confusion.classes()),
        ClassifierPrior::Dirichlet { .. } => false,
    })
}

/// Exact prevalence posterior `Dirichlet(v + alpha sum_k sum_r a^k_r)` under
/// identity confusion matrices, with its concentration.
pub fn conjugate_posterior(data: &Dataset, priors: &PriorSpec, alpha: f64) -> Result<Vec<f64>> {
    if !is_conjugate(priors) {
        return Err(Error::InvalidConfig("closed-form posterior needs every confusion matrix fixed at the identity".into()));
    }
    priors.check_dataset(data)?;
    let c = data.classes();
    let sums = crate::quantifiers::fixed_confusion_posterior(data, &ConfusionMatrix::identity(c), &vec![0.0; c])?;
    Ok(priors.prevalence.iter().zip(sums).map(|(v, s)| v + alpha * s).collect())
}

/// Independent draws from [`conjugate_posterior`], laid out like sampler
/// output. Burn-in is skipped since every draw is exact.
pub fn conjugate_sampler(data: &Dataset, priors: &PriorSpec, config: &SamplerConfig) -> Result<PosteriorSamples> {
    config.validate()?;
    let conc = conjugate_posterior(data, priors, config.alpha)?;
    let c = data.classes();
    let identity = vec![ConfusionMatrix::identity(c); data.classifiers()];
    let chains = (0..config.chains)
        .into_par_iter()
        .map(|chain| {
            let mut rng = chain_rng(config.seed, chain as u64);
            let mut p = vec![0.0; c];
            (0..config.retained_per_chain())
                .map(|_| {
                    sample_dirichlet(&mut rng, &conc, &mut p);
                    Ok(Draw {
                        prevalence: Composition::normalize(p.clone())?,
                        confusions: identity.clone(),
                    })
                })
                .collect::<Result<Vec<_>>>()
        })
        .collect::<Result<Vec<_>>>()?;
    Ok(PosteriorSamples {
        kind: SamplerKind::Conjugate,
        config: config.clone(),
        coarsening: None,
        acceptance: vec![1.0; config.chains],
        chains,
    })
}

/// Loss with each prediction replaced by `ceil(T a) / T` in the
/// cross-entropy terms.
pub fn coarsened_loss(theta: &Theta, data: &Dataset, pseudo: &PseudoCounts) -> Result<f64> {
    let base = crate::loss::loss_total(theta, data)?;
    let t = pseudo.factor as f64;
    let mut extra = crate::loss::CompensatedSum::default();
    let add_terms = |acc: &mut crate::loss::CompensatedSum, preds: &[Composition], counts: &[Vec<u64>], w: &[f64]| {
        for (k, (a, n)) in preds.iter().zip(counts).enumerate() {
            let m = &theta.confusions[k];
            for j in 0..a.dim() {
                let q: f64 = w.iter().enumerate().map(|(i, wi)| wi * m.get(i, j)).sum();
                let diff = n[j] as f64 / t - a.get(j);
                if diff != 0.0 {
                    acc.add(-diff * q.ln());
                }
            }
        }
    };
    let p = theta.prevalence.as_slice();
    for (preds, counts) in data.unlabeled().iter().zip(&pseudo.unlabeled) {
        add_terms(&mut extra, preds, counts, p);
    }
    for (inst, counts) in data.labeled().iter().zip(&pseudo.labeled) {
        add_terms(&mut extra, &inst.predictions, counts, inst.belief.as_slice());
    }
    Ok(base + extra.total() / data.n_unlabeled() as f64)
}

/// Upper bound on `|coarsened_loss - loss_total|` at `theta`, summed over
/// classifiers: `(1/T) sum_j -log q_j + (xi/T) sum_j -log min_i M_ij`.
pub fn coarsening_error_bound(theta: &Theta, data: &Dataset, factor: u64) -> f64 {
    let t = factor as f64;
    let c = theta.classes();
    let p = theta.prevalence.as_slice();
    theta
        .confusions
        .iter()
        .map(|m| {
            (0..c)
                .map(|j| {
                    let q: f64 = (0..c).map(|i| p[i] * m.get(i, j)).sum();
                    let min = (0..c).map(|i| m.get(i, j)).fold(f64::INFINITY, f64::min);
                    -q.ln() / t + data.xi() * -min.ln() / t
                })
                .sum::<f64>()
        })
        .sum()
}
