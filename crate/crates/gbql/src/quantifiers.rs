//! Prior specifications, classical baseline estimators, and the closed-form
//! posterior under a fixed identity confusion matrix.

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::composition::{plurality_class, Composition, ConfusionMatrix, Dataset, LabeledInstance, SupportMask};
use crate::error::{Error, Result};

pub const DEFAULT_SHRINK_EPSILON: f64 = 0.001;

/// Default row concentration for shrinkage presets: `10 * C`.
pub fn default_shrink_gamma(classes: usize) -> f64 {
    10.0 * classes as f64
}

/// Prior on one classifier's confusion matrix.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum ClassifierPrior {
    /// Independent Dirichlet rows. Entries outside `support` are ignored and
    /// the matching confusion entries are held at exactly zero.
    Dirichlet {
        concentration: Vec<Vec<f64>>,
        support: SupportMask,
    },
    /// Degenerate prior: the confusion matrix is known.
    Fixed { confusion: ConfusionMatrix },
}

impl ClassifierPrior {
    pub fn flat(classes: usize) -> Self {
        ClassifierPrior::Dirichlet {
            concentration: vec![vec![1.0; classes]; classes],
            support: SupportMask::full(classes),
        }
    }

    /// Uniform sparse Dirichlet with concentration `delta` on the support.
    pub fn sparse(support: SupportMask, delta: f64) -> Self {
        let c = support.classes();
        let concentration = (0..c)
            .map(|i| (0..c).map(|j| if support.allows(i, j) { delta } else { 0.0 }).collect())
            .collect();
        ClassifierPrior::Dirichlet {
            concentration,
            support,
        }
    }

    pub fn classes(&self) -> usize {
        match self {
            ClassifierPrior::Dirichlet { concentration, .. } => concentration.len(),
            ClassifierPrior::Fixed { confusion } => confusion.classes(),
        }
    }

    /// Whether confusion entry `(i, j)` may be non-zero.
    pub fn allows(&self, i: usize, j: usize) -> bool {
        match self {
            ClassifierPrior::Dirichlet { support, .. } => support.allows(i, j),
            ClassifierPrior::Fixed { confusion } => confusion.get(i, j) > 0.0,
        }
    }

    fn validate(&self, classes: usize) -> Result<()> {
        match self {
            ClassifierPrior::Dirichlet {
                concentration,
                support,
            } => {
                if concentration.len() != classes || support.classes() != classes {
                    return Err(Error::dims("confusion prior rows", classes, concentration.len()));
                }
                for (i, row) in concentration.iter().enumerate() {
                    if row.len() != classes {
                        return Err(Error::dims("confusion prior columns", classes, row.len()));
                    }
                    for (j, &v) in row.iter().enumerate() {
                        if support.allows(i, j) && !(v > 0.0 && v.is_finite()) {
                            return Err(Error::InvalidConfig(format!(
                                "confusion prior concentration at ({i}, {j}) must be positive, got {v}"
                            )));
                        }
                    }
                }
                Ok(())
            }
            ClassifierPrior::Fixed { confusion } => {
                if confusion.classes() != classes {
                    return Err(Error::dims("fixed confusion matrix", classes, confusion.classes()));
                }
                Ok(())
            }
        }
    }
}

/// Dirichlet priors for the prevalence and each classifier's confusion matrix.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PriorSpec {
    pub prevalence: Vec<f64>,
    pub classifiers: Vec<ClassifierPrior>,
}

impl PriorSpec {
    pub fn new(prevalence: Vec<f64>, classifiers: Vec<ClassifierPrior>) -> Result<Self> {
        let spec = PriorSpec {
            prevalence,
            classifiers,
        };
        spec.validate()?;
        Ok(spec)
    }

    /// All hyperparameters equal to one.
    pub fn flat(classes: usize, classifiers: usize) -> Self {
        PriorSpec {
            prevalence: vec![1.0; classes],
            classifiers: vec![ClassifierPrior::flat(classes); classifiers],
        }
    }

    /// Sparse supports with concentration `delta` and a flat prevalence prior.
    pub fn sparse(supports: Vec<SupportMask>, delta: f64) -> Result<Self> {
        let c = supports.first().map_or(0, SupportMask::classes);
        PriorSpec::new(
            vec![1.0; c],
            supports.into_iter().map(|s| ClassifierPrior::sparse(s, delta)).collect(),
        )
    }

    /// Shrinkage toward `centers` with row weights `gamma` and offset `epsilon`.
    pub fn shrink(centers: &[ConfusionMatrix], gamma: &[f64], epsilon: f64) -> Result<Self> {
        let c = centers.first().map_or(0, ConfusionMatrix::classes);
        let classifiers = centers
            .iter()
            .map(|m| {
                Ok(ClassifierPrior::Dirichlet {
                    concentration: shrinkage_prior(m, gamma, epsilon)?,
                    support: SupportMask::full(c),
                })
            })
            .collect::<Result<Vec<_>>>()?;
        PriorSpec::new(vec![1.0; c], classifiers)
    }

    /// Known confusion matrices; only the prevalence is learned.
    pub fn fixed(confusions: Vec<ConfusionMatrix>, prevalence: Vec<f64>) -> Result<Self> {
        PriorSpec::new(
            prevalence,
            confusions.into_iter().map(|confusion| ClassifierPrior::Fixed { confusion }).collect(),
        )
    }

    pub fn with_prevalence(mut self, prevalence: Vec<f64>) -> Result<Self> {
        self.prevalence = prevalence;
        self.validate()?;
        Ok(self)
    }

    pub fn classes(&self) -> usize {
        self.prevalence.len()
    }

    pub fn validate(&self) -> Result<()> {
        let c = self.prevalence.len();
        if c < 2 {
            return Err(Error::InvalidConfig("prior needs at least two classes".into()));
        }
        if let Some(v) = self.prevalence.iter().find(|v| !(**v > 0.0 && v.is_finite())) {
            return Err(Error::InvalidConfig(format!(
                "prevalence concentration must be positive, got {v}"
            )));
        }
        if self.classifiers.is_empty() {
            return Err(Error::InvalidConfig("prior needs at least one classifier".into()));
        }
        self.classifiers.iter().try_for_each(|p| p.validate(c))
    }

    pub(crate) fn check_dataset(&self, data: &Dataset) -> Result<()> {
        if self.classes() != data.classes() {
            return Err(Error::dims("prior classes", data.classes(), self.classes()));
        }
        if self.classifiers.len() != data.classifiers() {
            return Err(Error::dims("prior classifiers", data.classifiers(), self.classifiers.len()));
        }
        Ok(())
    }
}

/// Dirichlet concentrations `gamma_i * (center_i + epsilon)` for each row.
pub fn shrinkage_prior(center: &ConfusionMatrix, gamma: &[f64], epsilon: f64) -> Result<Vec<Vec<f64>>> {
    let c = center.classes();
    if gamma.len() != c {
        return Err(Error::dims("shrinkage gamma", c, gamma.len()));
    }
    if !(epsilon > 0.0) || gamma.iter().any(|g| !(*g > 0.0)) {
        return Err(Error::InvalidConfig("shrinkage gamma and epsilon must be positive".into()));
    }
    Ok(center
        .rows()
        .iter()
        .zip(gamma)
        .map(|(row, g)| row.as_slice().iter().map(|m| g * (m + epsilon)).collect())
        .collect())
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum BaselineMethod {
    /// Classify and count.
    Cc,
    /// Probabilistic average.
    Pa,
    /// Adjusted classify and count.
    Acc,
    /// Adjusted probabilistic average.
    Apa,
}

impl BaselineMethod {
    pub fn needs_confusion(self) -> bool {
        matches!(self, BaselineMethod::Acc | BaselineMethod::Apa)
    }
}

impl std::str::FromStr for BaselineMethod {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "cc" => Ok(BaselineMethod::Cc),
            "pa" => Ok(BaselineMethod::Pa),
            "acc" => Ok(BaselineMethod::Acc),
            "apa" => Ok(BaselineMethod::Apa),
            other => Err(Error::InvalidConfig(format!("unknown baseline method '{other}'"))),
        }
    }
}

impl std::fmt::Display for BaselineMethod {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        let s = match self {
            BaselineMethod::Cc => "cc",
            BaselineMethod::Pa => "pa",
            BaselineMethod::Acc => "acc",
            BaselineMethod::Apa => "apa",
        };
        f.write_str(s)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BaselineEstimate {
    pub method: BaselineMethod,
    pub estimate: Composition,
    /// Non-categorical predictions were collapsed with the plurality rule.
    pub plurality_applied: bool,
}

/// CC, PA, ACC or APA estimate from the unlabeled predictions.
///
/// With several classifiers, CC and PA average over all of them; ACC and APA
/// need a single classifier and its training confusion matrix.
pub fn baseline_estimate(
    method: BaselineMethod,
    data: &Dataset,
    training_confusion: Option<&ConfusionMatrix>,
) -> Result<BaselineEstimate> {
    let c = data.classes();
    let categorical = matches!(method, BaselineMethod::Cc | BaselineMethod::Acc);
    let mut plurality_applied = false;
    let mut sums = vec![0.0; c];
    let mut count = 0usize;
    for preds in data.unlabeled() {
        for a in preds {
            if categorical && !a.is_categorical() {
                plurality_applied = true;
                sums[plurality_class(a)] += 1.0;
            } else {
                for (s, v) in sums.iter_mut().zip(a.as_slice()) {
                    *s += v;
                }
            }
            count += 1;
        }
    }
    let mean = Composition::normalize(sums.iter().map(|s| s / count as f64).collect())?;
    let estimate = if method.needs_confusion() {
        let m = training_confusion.ok_or_else(|| {
            Error::InvalidConfig(format!("{method} needs a training confusion matrix"))
        })?;
        if data.classifiers() != 1 {
            return Err(Error::InvalidConfig(format!(
                "{method} supports a single classifier, found {}",
                data.classifiers()
            )));
        }
        if m.classes() != c {
            return Err(Error::dims("training confusion matrix", c, m.classes()));
        }
        adjust_for_confusion(m, &mean)?
    } else {
        mean
    };
    Ok(BaselineEstimate {
        method,
        estimate,
        plurality_applied,
    })
}

const ADJUST_TOL: f64 = 1e-10;
const SINGULAR_RATIO: f64 = 1e-10;

/// Minimizes `||M'p - target||^2` over the simplex.
pub fn adjust_for_confusion(m: &ConfusionMatrix, target: &Composition) -> Result<Composition> {
    let c = m.classes();
    let a = DMatrix::from_fn(c, c, |j, i| m.get(i, j));
    let sv = a.clone().svd(false, false).singular_values;
    let (smax, smin) = (sv.max(), sv.min());
    if !(smin > SINGULAR_RATIO * smax) {
        return Err(Error::NonIdentifiable(format!(
            "training confusion matrix is singular (singular value ratio {:.3e})",
            smin / smax
        )));
    }
    let y = DVector::from_column_slice(target.as_slice());
    if let Some(p) = a.clone().lu().solve(&y) {
        if p.iter().all(|&v| v >= 0.0) {
            let total: f64 = p.iter().sum();
            if (total - 1.0).abs() <= crate::composition::SIMPLEX_TOL {
                return Composition::new(p.iter().copied().collect());
            }
        }
    }
    // Accelerated projected gradient on the simplex.
    let ata = a.transpose() * &a;
    let aty = a.transpose() * &y;
    let lipschitz = smax * smax;
    let step = 1.0 / lipschitz;
    let mut p = DVector::from_element(c, 1.0 / c as f64);
    let mut z = p.clone();
    let mut t = 1.0f64;
    for _ in 0..1_000_000 {
        let grad = &ata * &z - &aty;
        let next = project_simplex(&(&z - grad * step));
        let delta = (&next - &p).amax();
        let t_next = 0.5 * (1.0 + (1.0 + 4.0 * t * t).sqrt());
        z = &next + (&next - &p) * ((t - 1.0) / t_next);
        p = next;
        t = t_next;
        if delta < ADJUST_TOL {
            break;
        }
    }
    Composition::new(p.iter().copied().collect())
}

/// Euclidean projection onto the probability simplex.
fn project_simplex(v: &DVector<f64>) -> DVector<f64> {
    let mut u: Vec<f64> = v.iter().copied().collect();
    u.sort_by(|a, b| b.total_cmp(a));
    let mut cumulative = 0.0;
    let mut theta = 0.0;
    for (k, &x) in u.iter().enumerate() {
        cumulative += x;
        let candidate = (cumulative - 1.0) / (k + 1) as f64;
        if x - candidate > 0.0 {
            theta = candidate;
        }
    }
    let mut out = v.map(|x| (x - theta).max(0.0));
    let total = out.sum();
    out /= total;
    out
}

/// Dirichlet parameters `v + sum_k sum_r a^k_r` of the prevalence posterior
/// when every classifier's confusion matrix is fixed at the identity.
pub fn fixed_confusion_posterior(data: &Dataset, fixed: &ConfusionMatrix, prevalence: &[f64]) -> Result<Vec<f64>> {
    let c = data.classes();
    if fixed != &ConfusionMatrix::identity(fixed.classes()) {
        return Err(Error::InvalidConfig(
            "closed-form posterior needs the identity confusion matrix; use a sampler".into(),
        ));
    }
    if fixed.classes() != c {
        return Err(Error::dims("fixed confusion matrix", c, fixed.classes()));
    }
    if prevalence.len() != c {
        return Err(Error::dims("prevalence concentration", c, prevalence.len()));
    }
    let mut out = prevalence.to_vec();
    for preds in data.unlabeled() {
        for a in preds {
            for (o, v) in out.iter_mut().zip(a.as_slice()) {
                *o += v;
            }
        }
    }
    Ok(out)
}

/// Belief-weighted mean prediction per true class,
/// `M_ij = sum_r b_ri a_rj / sum_r b_ri`, for classifier `k` of the labeled
/// instances. Exact labels reduce this to per-class averages.
pub fn trained_confusion(labeled: &[LabeledInstance], k: usize) -> Result<ConfusionMatrix> {
    let first = labeled
        .first()
        .ok_or_else(|| Error::InsufficientData("training confusion matrix needs labeled instances".into()))?;
    let c = first.belief.dim();
    if k >= first.predictions.len() {
        return Err(Error::dims("classifier index", first.predictions.len(), k));
    }
    let mut sums = vec![vec![0.0; c]; c];
    for inst in labeled {
        for (i, &b) in inst.belief.as_slice().iter().enumerate() {
            if b > 0.0 {
                for (s, a) in sums[i].iter_mut().zip(inst.predictions[k].as_slice()) {
                    *s += b * a;
                }
            }
        }
    }
    let rows = sums
        .into_iter()
        .enumerate()
        .map(|(i, row)| {
            Composition::normalize(row)
                .map_err(|_| Error::NonIdentifiable(format!("no labeled mass on class {}", i + 1)))
        })
        .collect::<Result<Vec<_>>>()?;
    ConfusionMatrix::from_compositions(rows)
}

/// Mean of a Dirichlet with the given concentration.
pub fn dirichlet_mean(concentration: &[f64]) -> Result<Composition> {
    Composition::normalize(concentration.to_vec())
}

#[cfg(test)]
mod tests {
    use super::*;

    fn comp(v: &[f64]) -> Composition {
        Composition::new(v.to_vec()).unwrap()
    }

    #[test]
    fn cc_of_identical_categorical_predictions() {
        let data = Dataset::single(vec![comp(&[1.0, 0.0, 0.0]); 4], vec![]).unwrap();
        let est = baseline_estimate(BaselineMethod::Cc, &data, None).unwrap();
        assert_eq!(est.estimate.as_slice(), &[1.0, 0.0, 0.0]);
        assert!(!est.plurality_applied);
    }

    #[test]
    fn cc_flags_plurality_rule() {
        let data = Dataset::single(vec![comp(&[0.6, 0.4]), comp(&[0.0, 1.0])], vec![]).unwrap();
        let est = baseline_estimate(BaselineMethod::Cc, &data, None).unwrap();
        assert_eq!(est.estimate.as_slice(), &[0.5, 0.5]);
        assert!(est.plurality_applied);
    }

    #[test]
    fn pa_is_mean_prediction() {
        let data = Dataset::single(vec![comp(&[0.2, 0.8]), comp(&[0.6, 0.4])], vec![]).unwrap();
        let est = baseline_estimate(BaselineMethod::Pa, &data, None).unwrap();
        assert!((est.estimate.get(0) - 0.4).abs() < 1e-15);
        assert!((est.estimate.get(1) - 0.6).abs() < 1e-15);
    }

    #[test]
    fn acc_binary_closed_form() {
        // tpr = M11 = 0.8, fpr = M21 = 0.2, CC = 0.5.
        let m = ConfusionMatrix::from_rows(vec![vec![0.8, 0.2], vec![0.2, 0.8]]).unwrap();
        let data = Dataset::single(vec![comp(&[1.0, 0.0]), comp(&[0.0, 1.0])], vec![]).unwrap();
        let est = baseline_estimate(BaselineMethod::Acc, &data, Some(&m)).unwrap();
        assert!((est.estimate.get(0) - (0.5 - 0.2) / (0.8 - 0.2)).abs() < 1e-12);
    }

    #[test]
    fn acc_binary_matches_formula_inside_unit_interval() {
        let m = ConfusionMatrix::from_rows(vec![vec![0.9, 0.1], vec![0.3, 0.7]]).unwrap();
        let target = comp(&[0.5, 0.5]);
        let p = adjust_for_confusion(&m, &target).unwrap();
        let expected = (0.5 - 0.3) / (0.9 - 0.3);
        assert!((p.get(0) - expected).abs() < 1e-12);
    }

    #[test]
    fn acc_clamps_to_simplex_outside_unit_interval() {
        // Raw correction (0.1 - 0.2) / 0.6 is negative.
        let m = ConfusionMatrix::from_rows(vec![vec![0.8, 0.2], vec![0.2, 0.8]]).unwrap();
        let p = adjust_for_confusion(&m, &comp(&[0.1, 0.9])).unwrap();
        assert!(p.get(0).abs() < 1e-9);
        assert!((p.get(1) - 1.0).abs() < 1e-9);
    }

    #[test]
    fn singular_training_matrix_is_not_identifiable() {
        let m = ConfusionMatrix::from_rows(vec![vec![0.5, 0.5], vec![0.5, 0.5]]).unwrap();
        let err = adjust_for_confusion(&m, &comp(&[0.5, 0.5])).unwrap_err();
        assert!(matches!(err, Error::NonIdentifiable(_)));
        assert!(err.is_numerical());
    }

    #[test]
    fn multiclass_adjustment_minimizes_residual() {
        let m = ConfusionMatrix::from_rows(vec![
            vec![0.7, 0.2, 0.1],
            vec![0.1, 0.8, 0.1],
            vec![0.3, 0.3, 0.4],
        ])
        .unwrap();
        let target = comp(&[0.05, 0.9, 0.05]);
        let p = adjust_for_confusion(&m, &target).unwrap();
        let resid = |p: &[f64]| -> f64 {
            (0..3)
                .map(|j| {
                    let q: f64 = (0..3).map(|i| p[i] * m.get(i, j)).sum();
                    (q - target.get(j)).powi(2)
                })
                .sum()
        };
        let best = resid(p.as_slice());
        // Compare against a fine grid over the simplex.
        let steps = 200;
        for a in 0..=steps {
            for b in 0..=steps - a {
                let x = [a as f64 / steps as f64, b as f64 / steps as f64, (steps - a - b) as f64 / steps as f64];
                assert!(best <= resid(&x) + 1e-12);
            }
        }
    }

    #[test]
    fn shrinkage_rows() {
        let v = shrinkage_prior(&ConfusionMatrix::identity(2), &[1.0, 1.0], 0.01).unwrap();
        assert_eq!(v, vec![vec![1.01, 0.01], vec![0.01, 1.01]]);
        let big = shrinkage_prior(&ConfusionMatrix::identity(2), &[1e6, 1e6], 0.01).unwrap();
        let total: f64 = big[0].iter().sum();
        // Dirichlet coordinate variance m(1 - m) / (total + 1) shrinks to zero.
        let m0 = big[0][0] / total;
        assert!(m0 * (1.0 - m0) / (total + 1.0) < 1e-7);
    }

    #[test]
    fn fixed_identity_posterior() {
        let data = Dataset::single(vec![comp(&[1.0, 0.0]), comp(&[0.0, 1.0])], vec![]).unwrap();
        let post = fixed_confusion_posterior(&data, &ConfusionMatrix::identity(2), &[1.0, 1.0]).unwrap();
        assert_eq!(post, vec![2.0, 2.0]);
        assert_eq!(dirichlet_mean(&post).unwrap().as_slice(), &[0.5, 0.5]);
        let m = ConfusionMatrix::from_rows(vec![vec![0.9, 0.1], vec![0.1, 0.9]]).unwrap();
        assert!(fixed_confusion_posterior(&data, &m, &[1.0, 1.0]).is_err());
    }

    #[test]
    fn fixed_identity_limit_is_pa() {
        let data = Dataset::single(vec![comp(&[0.2, 0.8]), comp(&[0.7, 0.3]), comp(&[0.1, 0.9])], vec![]).unwrap();
        let post = fixed_confusion_posterior(&data, &ConfusionMatrix::identity(2), &[1e-12, 1e-12]).unwrap();
        let mean = dirichlet_mean(&post).unwrap();
        let pa = baseline_estimate(BaselineMethod::Pa, &data, None).unwrap().estimate;
        assert!((mean.get(0) - pa.get(0)).abs() < 1e-9);
    }

    #[test]
    fn trained_confusion_weights_by_belief() {
        let data = Dataset::single(
            vec![comp(&[0.5, 0.5])],
            vec![
                (comp(&[1.0, 0.0]), comp(&[1.0, 0.0])),
                (comp(&[0.0, 1.0]), comp(&[0.5, 0.5])),
                (comp(&[0.2, 0.8]), comp(&[0.0, 1.0])),
            ],
        )
        .unwrap();
        let m = trained_confusion(data.labeled(), 0).unwrap();
        // Row 1: (1*(1,0) + 0.5*(0,1)) / 1.5; row 2: (0.5*(0,1) + (0.2,0.8)) / 1.5.
        assert!((m.get(0, 0) - 2.0 / 3.0).abs() < 1e-15);
        assert!((m.get(1, 0) - 0.2 / 1.5).abs() < 1e-15);
        let only_first = Dataset::single(vec![comp(&[0.5, 0.5])], vec![(comp(&[1.0, 0.0]), comp(&[1.0, 0.0]))]).unwrap();
        assert!(matches!(trained_confusion(only_first.labeled(), 0), Err(Error::NonIdentifiable(_))));
    }

    #[test]
    fn prior_validation() {
        assert!(PriorSpec::new(vec![1.0, 0.0], vec![ClassifierPrior::flat(2)]).is_err());
        assert!(PriorSpec::new(vec![1.0, 1.0], vec![ClassifierPrior::flat(3)]).is_err());
        let support = SupportMask::new(vec![vec![true, false], vec![true, true]]).unwrap();
        let prior = PriorSpec::sparse(vec![support], 1.0).unwrap();
        assert!(!prior.classifiers[0].allows(0, 1));
    }
}
