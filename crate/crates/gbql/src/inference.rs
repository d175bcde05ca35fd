//! Posterior summaries, percentile and delta-method intervals, the CCNAA
//! accuracy score, and split-chain convergence diagnostics.

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};
use statrs::distribution::{ContinuousCDF, Normal};

use crate::composition::{Composition, ConfusionMatrix, Dataset};
use crate::error::{Error, Result};
use crate::loss::{omega_hat, ParamLayout, Theta};
use crate::sampler::{Parameter, PosteriorSamples};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum IntervalMethod {
    Percentile,
    Delta,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct IntervalEstimate {
    pub point: f64,
    pub lower: f64,
    pub upper: f64,
    pub level: f64,
    pub method: IntervalMethod,
}

impl IntervalEstimate {
    pub fn width(&self) -> f64 {
        self.upper - self.lower
    }

    pub fn contains(&self, value: f64) -> bool {
        self.lower <= value && value <= self.upper
    }
}

/// Quantile by linear interpolation between order statistics: with sorted
/// values `x_0..x_{n-1}` and `h = (n - 1) q`, returns
/// `x_floor(h) + (h - floor(h)) (x_ceil(h) - x_floor(h))`.
pub fn quantile(sorted: &[f64], q: f64) -> f64 {
    assert!(!sorted.is_empty(), "quantile of an empty sample");
    let h = (sorted.len() - 1) as f64 * q.clamp(0.0, 1.0);
    let lo = h.floor() as usize;
    let hi = h.ceil() as usize;
    sorted[lo] + (h - lo as f64) * (sorted[hi] - sorted[lo])
}

/// Equal-tailed interval around the sample mean.
pub fn percentile_interval(values: &[f64], level: f64) -> IntervalEstimate {
    let mut sorted = values.to_vec();
    sorted.sort_by(f64::total_cmp);
    let tail = (1.0 - level) / 2.0;
    IntervalEstimate {
        point: values.iter().sum::<f64>() / values.len() as f64,
        lower: quantile(&sorted, tail),
        upper: quantile(&sorted, 1.0 - tail),
        level,
        method: IntervalMethod::Percentile,
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ParameterSummary {
    pub parameter: Parameter,
    pub mean: f64,
    pub sd: f64,
    pub intervals: Vec<IntervalEstimate>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PosteriorSummary {
    /// Posterior mean of the prevalence, on the simplex.
    pub prevalence_mean: Composition,
    pub parameters: Vec<ParameterSummary>,
}

/// Means, standard deviations and percentile intervals of every parameter.
pub fn summarize_posterior(samples: &PosteriorSamples, levels: &[f64]) -> Result<PosteriorSummary> {
    if samples.chains.iter().all(Vec::is_empty) {
        return Err(Error::InsufficientData("no retained draws".into()));
    }
    let parameters = samples
        .parameters()
        .into_iter()
        .map(|parameter| {
            let values: Vec<f64> = samples.series(parameter).into_iter().flatten().collect();
            let n = values.len() as f64;
            let mean = values.iter().sum::<f64>() / n;
            let sd = if values.len() > 1 {
                (values.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / (n - 1.0)).sqrt()
            } else {
                0.0
            };
            ParameterSummary {
                parameter,
                mean,
                sd,
                intervals: levels.iter().map(|&l| percentile_interval(&values, l)).collect(),
            }
        })
        .collect();
    Ok(PosteriorSummary {
        prevalence_mean: posterior_mean(samples)?.prevalence,
        parameters,
    })
}

/// Component-wise posterior mean, renormalized onto the simplex.
pub fn posterior_mean(samples: &PosteriorSamples) -> Result<Theta> {
    let n = samples.n_draws();
    if n == 0 {
        return Err(Error::InsufficientData("no retained draws".into()));
    }
    let c = samples.classes();
    let kk = samples.classifiers();
    let mut p = vec![0.0; c];
    let mut ms = vec![vec![0.0; c * c]; kk];
    for d in samples.draws() {
        for (a, v) in p.iter_mut().zip(d.prevalence.as_slice()) {
            *a += v;
        }
        for (acc, m) in ms.iter_mut().zip(&d.confusions) {
            for (a, v) in acc.iter_mut().zip(m.to_flat()) {
                *a += v;
            }
        }
    }
    let prevalence = Composition::normalize(p)?;
    let confusions = ms
        .into_iter()
        .map(|m| {
            ConfusionMatrix::from_compositions(
                m.chunks(c).map(|row| Composition::normalize(row.to_vec())).collect::<Result<Vec<_>>>()?,
            )
        })
        .collect::<Result<Vec<_>>>()?;
    Theta::new(confusions, prevalence)
}

/// A scalar function of the parameters for delta-method intervals.
#[derive(Debug, Clone, PartialEq)]
pub enum DeltaTarget {
    Parameter(Parameter),
    /// Any smooth function, given its value and free-parameter gradient at
    /// the posterior mean.
    Custom { value: f64, gradient: Vec<f64> },
}

/// Free-parameter gradient of one full parameter. Last-column and
/// last-class entries are one minus the others, so their gradients are `-1`
/// on the sibling coordinates.
pub fn parameter_gradient(layout: ParamLayout, param: Parameter) -> Vec<f64> {
    let c = layout.classes;
    let mut g = vec![0.0; layout.dim()];
    match param {
        Parameter::Prevalence(i) if i + 1 < c => g[layout.p_index(i)] = 1.0,
        Parameter::Prevalence(_) => (0..c - 1).for_each(|i| g[layout.p_index(i)] = -1.0),
        Parameter::Confusion { classifier, row, col } if col + 1 < c => {
            g[layout.m_index(classifier, row, col)] = 1.0
        }
        Parameter::Confusion { classifier, row, .. } => {
            (0..c - 1).for_each(|j| g[layout.m_index(classifier, row, j)] = -1.0)
        }
    }
    g
}

/// Sandwich covariance `J^-1 Omega J^-1` at the posterior mean.
#[derive(Debug, Clone)]
pub struct DeltaMethod {
    pub theta_hat: Theta,
    pub covariance: DMatrix<f64>,
    pub n_unlabeled: usize,
}

impl DeltaMethod {
    pub fn new(theta_hat: Theta, data: &Dataset) -> Result<Self> {
        let sandwich = omega_hat(&theta_hat, data)?;
        let j_inv = invert_spd(&sandwich.j_hat)?;
        let covariance = &j_inv * &sandwich.omega_hat * &j_inv;
        Ok(DeltaMethod {
            theta_hat,
            covariance,
            n_unlabeled: data.n_unlabeled(),
        })
    }

    pub fn from_samples(samples: &PosteriorSamples, data: &Dataset) -> Result<Self> {
        DeltaMethod::new(posterior_mean(samples)?, data)
    }

    /// `value +- z sqrt(grad' J^-1 Omega J^-1 grad) / sqrt(N)`.
    pub fn interval(&self, value: f64, gradient: &[f64], level: f64) -> Result<IntervalEstimate> {
        if gradient.len() != self.covariance.nrows() {
            return Err(Error::dims("delta gradient", self.covariance.nrows(), gradient.len()));
        }
        if !(level > 0.0 && level < 1.0) {
            return Err(Error::InvalidConfig(format!("interval level must lie in (0, 1), got {level}")));
        }
        let g = DVector::from_column_slice(gradient);
        let var = (g.transpose() * &self.covariance * &g)[(0, 0)].max(0.0);
        let z = Normal::standard().inverse_cdf(1.0 - (1.0 - level) / 2.0);
        let half = z * var.sqrt() / (self.n_unlabeled as f64).sqrt();
        Ok(IntervalEstimate {
            point: value,
            lower: value - half,
            upper: value + half,
            level,
            method: IntervalMethod::Delta,
        })
    }

    pub fn target(&self, target: &DeltaTarget, level: f64) -> Result<IntervalEstimate> {
        match target {
            DeltaTarget::Parameter(param) => {
                let value = match *param {
                    Parameter::Prevalence(i) => self.theta_hat.prevalence.get(i),
                    Parameter::Confusion { classifier, row, col } => self.theta_hat.confusions[classifier].get(row, col),
                };
                self.interval(value, &parameter_gradient(self.theta_hat.layout(), *param), level)
            }
            DeltaTarget::Custom { value, gradient } => self.interval(*value, gradient, level),
        }
    }
}

/// Delta-method interval for `target` around the posterior mean.
pub fn delta_interval(
    samples: &PosteriorSamples,
    data: &Dataset,
    target: &DeltaTarget,
    level: f64,
) -> Result<IntervalEstimate> {
    DeltaMethod::from_samples(samples, data)?.target(target, level)
}

/// Inverse via Cholesky; failure reports the condition number.
pub fn invert_spd(m: &DMatrix<f64>) -> Result<DMatrix<f64>> {
    match m.clone().cholesky() {
        Some(ch) => Ok(ch.inverse()),
        None => {
            let eig = m.clone().symmetric_eigenvalues();
            let max = eig.iter().fold(0.0f64, |a, v| a.max(v.abs()));
            let min = eig.iter().fold(f64::INFINITY, |a, v| a.min(v.abs()));
            Err(Error::SingularHessian {
                condition_number: if min > 0.0 { max / min } else { f64::INFINITY },
            })
        }
    }
}

/// Chance-corrected normalized absolute accuracy:
/// `(NAA - 0.632) / 0.368` with `NAA = 1 - sum |p - p_hat| / (2 (1 - min p))`.
pub fn ccnaa(p_true: &Composition, p_hat: &Composition) -> Result<f64> {
    if p_true.dim() != p_hat.dim() {
        return Err(Error::dims("ccnaa", p_true.dim(), p_hat.dim()));
    }
    let min = p_true.as_slice().iter().copied().fold(f64::INFINITY, f64::min);
    if min >= 1.0 {
        return Err(Error::InvalidComposition("ccnaa undefined for a single class".into()));
    }
    let abs: f64 = p_true.as_slice().iter().zip(p_hat.as_slice()).map(|(a, b)| (a - b).abs()).sum();
    let naa = 1.0 - abs / (2.0 * (1.0 - min));
    Ok((naa - 0.632) / (1.0 - 0.632))
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Rhat {
    pub value: f64,
    /// Every chain was constant; the value is 1 by convention.
    pub degenerate: bool,
}

/// Split-chain potential scale reduction.
///
/// Each chain is cut into two halves of `n` draws (a middle draw is dropped
/// for odd lengths). With `W` the mean within-half variance and `B` equal
/// to `n` times the variance of the half means,
/// `R = sqrt(((n - 1) / n W + B / n) / W)`.
pub fn gelman_rubin(chains: &[Vec<f64>]) -> Result<Rhat> {
    if chains.len() < 2 {
        return Err(Error::InsufficientData("split R-hat needs at least two chains".into()));
    }
    let len = chains.iter().map(Vec::len).min().unwrap_or(0);
    if len < 4 {
        return Err(Error::InsufficientData("split R-hat needs at least four draws per chain".into()));
    }
    let n = len / 2;
    let halves: Vec<&[f64]> = chains
        .iter()
        .flat_map(|c| {
            let c = &c[..len];
            [&c[..n], &c[len - n..]]
        })
        .collect();
    let m = halves.len() as f64;
    let nf = n as f64;
    let means: Vec<f64> = halves.iter().map(|h| h.iter().sum::<f64>() / nf).collect();
    let within = halves
        .iter()
        .zip(&means)
        .map(|(h, mu)| h.iter().map(|v| (v - mu).powi(2)).sum::<f64>() / (nf - 1.0))
        .sum::<f64>()
        / m;
    let grand = means.iter().sum::<f64>() / m;
    let between = nf * means.iter().map(|mu| (mu - grand).powi(2)).sum::<f64>() / (m - 1.0);
    if within == 0.0 {
        return Ok(Rhat {
            value: 1.0,
            degenerate: true,
        });
    }
    let var_plus = (nf - 1.0) / nf * within + between / nf;
    Ok(Rhat {
        value: (var_plus / within).sqrt(),
        degenerate: false,
    })
}

pub fn gelman_rubin_parameter(samples: &PosteriorSamples, param: Parameter) -> Result<Rhat> {
    gelman_rubin(&samples.series(param))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::sampler::{Draw, SamplerConfig, SamplerKind};

    fn comp(v: &[f64]) -> Composition {
        Composition::new(v.to_vec()).unwrap()
    }

    fn samples_from(chains: Vec<Vec<[f64; 2]>>) -> PosteriorSamples {
        PosteriorSamples {
            kind: SamplerKind::Gibbs,
            config: SamplerConfig::default(),
            coarsening: None,
            acceptance: vec![1.0; chains.len()],
            chains: chains
                .into_iter()
                .map(|c| {
                    c.into_iter()
                        .map(|p| Draw { prevalence: comp(&p), confusions: vec![ConfusionMatrix::identity(2)] })
                        .collect()
                })
                .collect(),
        }
    }

    #[test]
    fn constant_draws_summary() {
        let s = samples_from(vec![vec![[0.5, 0.5]; 10]]);
        let summary = summarize_posterior(&s, &[0.95]).unwrap();
        assert_eq!(summary.prevalence_mean.as_slice(), &[0.5, 0.5]);
        let p0 = &summary.parameters[0];
        assert_eq!(p0.intervals[0].width(), 0.0);
        assert_eq!(p0.sd, 0.0);
    }

    #[test]
    fn quantile_rule_by_hand() {
        let values: Vec<f64> = (1..=10).map(|i| i as f64 / 10.0).collect();
        let iv = percentile_interval(&values, 0.95);
        // h = 9 * 0.025 = 0.225 and 9 * 0.975 = 8.775.
        assert!((iv.lower - (0.1 + 0.225 * 0.1)).abs() < 1e-12);
        assert!((iv.upper - (0.9 + 0.775 * 0.1)).abs() < 1e-12);
        assert!(iv.lower <= iv.point && iv.point <= iv.upper);
    }

    #[test]
    fn ccnaa_examples() {
        let p = comp(&[0.2, 0.19, 0.27, 0.27, 0.07]);
        assert!((ccnaa(&p, &p).unwrap() - 1.0).abs() < 1e-15);
        let naa = 1.0 - 0.28 / (2.0 * 0.93);
        let expected = (naa - 0.632) / 0.368;
        assert!((ccnaa(&p, &Composition::uniform(5)).unwrap() - expected).abs() < 1e-12);
        // A uniform truth scored against a degenerate estimate has NAA = 0.
        let v = ccnaa(&Composition::uniform(2), &comp(&[1.0, 0.0])).unwrap();
        assert!((v - (0.0 - 0.632) / 0.368).abs() < 1e-12);
        assert!(ccnaa(&comp(&[1.0]), &comp(&[1.0])).is_err());
    }

    #[test]
    fn gelman_rubin_by_hand() {
        let chains = vec![vec![1.0, 2.0, 3.0, 5.0], vec![2.0, 2.0, 4.0, 6.0]];
        // Halves: [1,2], [3,5], [2,2], [4,6]; n = 2.
        let halves = [[1.0, 2.0], [3.0, 5.0], [2.0, 2.0], [4.0, 6.0]];
        let means: Vec<f64> = halves.iter().map(|h| (h[0] + h[1]) / 2.0).collect();
        let w: f64 = halves.iter().zip(&means).map(|(h, m)| (h[0] - m).powi(2) + (h[1] - m).powi(2)).sum::<f64>() / 4.0;
        let g: f64 = means.iter().sum::<f64>() / 4.0;
        let b = 2.0 * means.iter().map(|m| (m - g).powi(2)).sum::<f64>() / 3.0;
        let expected = ((0.5 * w + b / 2.0) / w).sqrt();
        let r = gelman_rubin(&chains).unwrap();
        assert!((r.value - expected).abs() < 1e-12);
        assert!(!r.degenerate);
    }

    #[test]
    fn gelman_rubin_identical_constant_halves() {
        // Identical halves give B = 0 and R = sqrt((n - 1) / n).
        let chains = vec![vec![1.0, 2.0, 1.0, 2.0], vec![1.0, 2.0, 1.0, 2.0]];
        let r = gelman_rubin(&chains).unwrap();
        assert!((r.value - 0.5f64.sqrt()).abs() < 1e-12);
        let flat = gelman_rubin(&[vec![3.0; 6], vec![3.0; 6]]).unwrap();
        assert_eq!(flat.value, 1.0);
        assert!(flat.degenerate);
        assert!(gelman_rubin(&[vec![1.0; 10]]).is_err());
    }

    #[test]
    fn zero_gradient_gives_zero_width() {
        let dm = DeltaMethod {
            theta_hat: Theta::new(vec![ConfusionMatrix::identity(2)], comp(&[0.5, 0.5])).unwrap(),
            covariance: DMatrix::identity(3, 3),
            n_unlabeled: 10,
        };
        let iv = dm.interval(0.3, &[0.0; 3], 0.95).unwrap();
        assert_eq!(iv.width(), 0.0);
        let iv = dm.interval(0.3, &[1.0, 0.0, 0.0], 0.95).unwrap();
        assert!((iv.upper - 0.3 - 1.959963984540054 / 10f64.sqrt()).abs() < 1e-9);
    }

    #[test]
    fn parameter_gradients_chain_rule() {
        let layout = ParamLayout::new(3, 1);
        assert_eq!(parameter_gradient(layout, Parameter::Prevalence(0)), vec![0., 0., 0., 0., 0., 0., 1., 0.]);
        assert_eq!(parameter_gradient(layout, Parameter::Prevalence(2)), vec![0., 0., 0., 0., 0., 0., -1., -1.]);
        assert_eq!(
            parameter_gradient(layout, Parameter::Confusion { classifier: 0, row: 1, col: 2 }),
            vec![0., 0., -1., -1., 0., 0., 0., 0.]
        );
    }

    #[test]
    fn singular_hessian_reports_condition() {
        let m = DMatrix::from_row_slice(2, 2, &[1.0, 1.0, 1.0, 1.0]);
        match invert_spd(&m) {
            Err(Error::SingularHessian { condition_number }) => assert!(condition_number > 1e12),
            other => panic!("{other:?}"),
        }
    }
}
