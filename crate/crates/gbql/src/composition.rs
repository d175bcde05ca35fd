//! Points on the probability simplex and the data containers built from them.
//!
//! A [`Composition`] holds a prediction `a_r`, a belief `b_r`, a prevalence
//! vector `p` or one row of a misclassification matrix. Exact zeros and ones
//! are legal everywhere; nothing in this module ever nudges an entry away
//! from the boundary.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Tolerance on `|sum - 1|` for a constructed composition.
pub const SIMPLEX_TOL: f64 = 1e-9;

/// Inputs whose sum is within this distance of 1 are renormalized on
/// ingestion (with a warning); anything further away is rejected.
pub const RENORMALIZE_TOL: f64 = 1e-6;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "Vec<f64>", into = "Vec<f64>")]
pub struct Composition(Vec<f64>);

impl Composition {
    /// Strict constructor: entries finite and non-negative, sum within
    /// [`SIMPLEX_TOL`] of one.
    pub fn new(values: Vec<f64>) -> Result<Self> {
        check_entries(&values)?;
        let sum: f64 = values.iter().sum();
        if (sum - 1.0).abs() > SIMPLEX_TOL {
            return Err(Error::InvalidComposition(format!(
                "entries sum to {sum}, expected 1"
            )));
        }
        Ok(Composition(values))
    }

    /// Ingestion constructor. Sums within [`RENORMALIZE_TOL`] of one are
    /// rescaled; the flag reports whether that happened.
    pub fn new_lenient(values: Vec<f64>) -> Result<(Self, bool)> {
        check_entries(&values)?;
        let sum: f64 = values.iter().sum();
        let gap = (sum - 1.0).abs();
        if gap <= SIMPLEX_TOL {
            Ok((Composition(values), false))
        } else if gap <= RENORMALIZE_TOL {
            Ok((Composition(values.into_iter().map(|v| v / sum).collect()), true))
        } else {
            Err(Error::InvalidComposition(format!(
                "entries sum to {sum}, beyond renormalization tolerance {RENORMALIZE_TOL}"
            )))
        }
    }

    /// Rescales arbitrary non-negative weights onto the simplex.
    pub fn normalize(weights: Vec<f64>) -> Result<Self> {
        check_entries(&weights)?;
        let sum: f64 = weights.iter().sum();
        if !(sum > 0.0) || !sum.is_finite() {
            return Err(Error::InvalidComposition(
                "weights must have a positive finite sum".into(),
            ));
        }
        Ok(Composition(weights.into_iter().map(|v| v / sum).collect()))
    }

    /// The standard basis vector `e_index`.
    pub fn basis(classes: usize, index: usize) -> Self {
        assert!(index < classes, "basis index out of range");
        let mut v = vec![0.0; classes];
        v[index] = 1.0;
        Composition(v)
    }

    pub fn uniform(classes: usize) -> Self {
        assert!(classes > 0);
        Composition(vec![1.0 / classes as f64; classes])
    }

    pub fn dim(&self) -> usize {
        self.0.len()
    }

    pub fn as_slice(&self) -> &[f64] {
        &self.0
    }

    pub fn get(&self, index: usize) -> f64 {
        self.0[index]
    }

    pub fn into_vec(self) -> Vec<f64> {
        self.0
    }

    /// Index of the single unit entry, if this is a vertex of the simplex.
    pub fn degenerate_class(&self) -> Option<usize> {
        let idx = self.0.iter().position(|&v| v == 1.0)?;
        self.0
            .iter()
            .enumerate()
            .all(|(j, &v)| j == idx || v == 0.0)
            .then_some(idx)
    }

    pub fn is_categorical(&self) -> bool {
        self.degenerate_class().is_some()
    }
}

impl TryFrom<Vec<f64>> for Composition {
    type Error = Error;

    fn try_from(values: Vec<f64>) -> Result<Self> {
        Composition::new(values)
    }
}

impl From<Composition> for Vec<f64> {
    fn from(c: Composition) -> Self {
        c.0
    }
}

impl AsRef<[f64]> for Composition {
    fn as_ref(&self) -> &[f64] {
        &self.0
    }
}

fn check_entries(values: &[f64]) -> Result<()> {
    if values.is_empty() {
        return Err(Error::InvalidComposition("no classes".into()));
    }
    for (j, &v) in values.iter().enumerate() {
        if !v.is_finite() || v < 0.0 {
            return Err(Error::InvalidComposition(format!(
                "entry {j} is {v}; entries must be finite and non-negative"
            )));
        }
    }
    Ok(())
}

/// Declared non-zero pattern of a misclassification matrix: `allowed[i][j]`
/// is true when class `i` may be predicted as class `j`.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(transparent)]
pub struct SupportMask {
    allowed: Vec<Vec<bool>>,
}

impl SupportMask {
    pub fn new(allowed: Vec<Vec<bool>>) -> Result<Self> {
        let c = allowed.len();
        if c == 0 {
            return Err(Error::InvalidConfig("empty support mask".into()));
        }
        for (i, row) in allowed.iter().enumerate() {
            if row.len() != c {
                return Err(Error::dims("support mask row", c, row.len()));
            }
            if !row.iter().any(|&b| b) {
                return Err(Error::InvalidConfig(format!(
                    "support set for row {i} is empty"
                )));
            }
        }
        Ok(SupportMask { allowed })
    }

    pub fn full(classes: usize) -> Self {
        SupportMask {
            allowed: vec![vec![true; classes]; classes],
        }
    }

    /// The non-zero pattern of an existing matrix.
    pub fn from_matrix(m: &ConfusionMatrix) -> Self {
        SupportMask {
            allowed: m
                .rows()
                .iter()
                .map(|r| r.as_slice().iter().map(|&v| v > 0.0).collect())
                .collect(),
        }
    }

    pub fn classes(&self) -> usize {
        self.allowed.len()
    }

    pub fn allows(&self, i: usize, j: usize) -> bool {
        self.allowed[i][j]
    }

    pub fn row(&self, i: usize) -> &[bool] {
        &self.allowed[i]
    }
}

/// Row-stochastic matrix with `M[i][j] = p(predicted j | true i)`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "Vec<Vec<f64>>", into = "Vec<Vec<f64>>")]
pub struct ConfusionMatrix {
    rows: Vec<Composition>,
}

impl ConfusionMatrix {
    pub fn from_rows(rows: Vec<Vec<f64>>) -> Result<Self> {
        let c = rows.len();
        let rows = rows
            .into_iter()
            .map(|r| {
                if r.len() != c {
                    return Err(Error::dims("confusion matrix row", c, r.len()));
                }
                Composition::new(r)
            })
            .collect::<Result<Vec<_>>>()?;
        if rows.is_empty() {
            return Err(Error::InvalidComposition("empty confusion matrix".into()));
        }
        Ok(ConfusionMatrix { rows })
    }

    pub fn from_compositions(rows: Vec<Composition>) -> Result<Self> {
        let c = rows.len();
        if c == 0 {
            return Err(Error::InvalidComposition("empty confusion matrix".into()));
        }
        if let Some(r) = rows.iter().find(|r| r.dim() != c) {
            return Err(Error::dims("confusion matrix row", c, r.dim()));
        }
        Ok(ConfusionMatrix { rows })
    }

    /// Builds from a row-major `C*C` buffer.
    pub fn from_flat(classes: usize, flat: &[f64]) -> Result<Self> {
        if flat.len() != classes * classes {
            return Err(Error::dims("flat confusion matrix", classes * classes, flat.len()));
        }
        Self::from_rows(flat.chunks(classes).map(<[f64]>::to_vec).collect())
    }

    pub fn identity(classes: usize) -> Self {
        ConfusionMatrix {
            rows: (0..classes).map(|i| Composition::basis(classes, i)).collect(),
        }
    }

    pub fn classes(&self) -> usize {
        self.rows.len()
    }

    pub fn rows(&self) -> &[Composition] {
        &self.rows
    }

    pub fn row(&self, i: usize) -> &Composition {
        &self.rows[i]
    }

    pub fn get(&self, i: usize, j: usize) -> f64 {
        self.rows[i].get(j)
    }

    pub fn to_flat(&self) -> Vec<f64> {
        self.rows.iter().flat_map(|r| r.as_slice().iter().copied()).collect()
    }

    /// Checks that every entry outside `support` is exactly zero.
    pub fn respects(&self, support: &SupportMask) -> bool {
        support.classes() == self.classes()
            && self.rows.iter().enumerate().all(|(i, r)| {
                r.as_slice()
                    .iter()
                    .enumerate()
                    .all(|(j, &v)| support.allows(i, j) || v == 0.0)
            })
    }
}

impl TryFrom<Vec<Vec<f64>>> for ConfusionMatrix {
    type Error = Error;

    fn try_from(rows: Vec<Vec<f64>>) -> Result<Self> {
        ConfusionMatrix::from_rows(rows)
    }
}

impl From<ConfusionMatrix> for Vec<Vec<f64>> {
    fn from(m: ConfusionMatrix) -> Self {
        m.rows.into_iter().map(Composition::into_vec).collect()
    }
}

/// A labeled instance: one prediction per classifier and a belief over the
/// true class.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LabeledInstance {
    pub predictions: Vec<Composition>,
    pub belief: Composition,
}

/// Unlabeled and labeled test-population predictions for `K` classifiers.
#[derive(Debug, Clone, PartialEq)]
pub struct Dataset {
    classes: usize,
    classifiers: usize,
    unlabeled: Vec<Vec<Composition>>,
    labeled: Vec<LabeledInstance>,
}

impl Dataset {
    /// `unlabeled[r][k]` is classifier `k`'s prediction for instance `r`.
    pub fn new(unlabeled: Vec<Vec<Composition>>, labeled: Vec<LabeledInstance>) -> Result<Self> {
        let first = unlabeled.first().ok_or_else(|| {
            Error::InsufficientData("the unlabeled set must contain at least one instance".into())
        })?;
        let classifiers = first.len();
        if classifiers == 0 {
            return Err(Error::InsufficientData("no classifiers".into()));
        }
        let classes = first[0].dim();
        for preds in &unlabeled {
            check_predictions(preds, classes, classifiers)?;
        }
        for inst in &labeled {
            check_predictions(&inst.predictions, classes, classifiers)?;
            if inst.belief.dim() != classes {
                return Err(Error::dims("belief", classes, inst.belief.dim()));
            }
        }
        Ok(Dataset {
            classes,
            classifiers,
            unlabeled,
            labeled,
        })
    }

    /// Single-classifier convenience constructor.
    pub fn single(unlabeled: Vec<Composition>, labeled: Vec<(Composition, Composition)>) -> Result<Self> {
        Self::new(
            unlabeled.into_iter().map(|a| vec![a]).collect(),
            labeled
                .into_iter()
                .map(|(a, b)| LabeledInstance {
                    predictions: vec![a],
                    belief: b,
                })
                .collect(),
        )
    }

    pub fn classes(&self) -> usize {
        self.classes
    }

    pub fn classifiers(&self) -> usize {
        self.classifiers
    }

    pub fn unlabeled(&self) -> &[Vec<Composition>] {
        &self.unlabeled
    }

    pub fn labeled(&self) -> &[LabeledInstance] {
        &self.labeled
    }

    pub fn n_unlabeled(&self) -> usize {
        self.unlabeled.len()
    }

    pub fn n_labeled(&self) -> usize {
        self.labeled.len()
    }

    /// Ratio `n / N` of labeled to unlabeled instances.
    pub fn xi(&self) -> f64 {
        self.labeled.len() as f64 / self.unlabeled.len() as f64
    }

    /// Same data with the labeled set dropped.
    pub fn without_labels(&self) -> Dataset {
        Dataset {
            labeled: Vec::new(),
            ..self.clone()
        }
    }

    /// Restriction to a single classifier.
    pub fn select_classifier(&self, k: usize) -> Dataset {
        Dataset {
            classes: self.classes,
            classifiers: 1,
            unlabeled: self.unlabeled.iter().map(|p| vec![p[k].clone()]).collect(),
            labeled: self
                .labeled
                .iter()
                .map(|l| LabeledInstance {
                    predictions: vec![l.predictions[k].clone()],
                    belief: l.belief.clone(),
                })
                .collect(),
        }
    }
}

fn check_predictions(preds: &[Composition], classes: usize, classifiers: usize) -> Result<()> {
    if preds.len() != classifiers {
        return Err(Error::dims("predictions per instance", classifiers, preds.len()));
    }
    if let Some(a) = preds.iter().find(|a| a.dim() != classes) {
        return Err(Error::dims("prediction", classes, a.dim()));
    }
    Ok(())
}

/// `KL(a || q) = sum_j a_j log(a_j / q_j)`, skipping terms with `a_j = 0`.
pub fn kl_divergence(a: &Composition, q: &Composition) -> Result<f64> {
    kl_raw(a.as_slice(), q.as_slice())
}

pub(crate) fn kl_raw(a: &[f64], q: &[f64]) -> Result<f64> {
    if a.len() != q.len() {
        return Err(Error::dims("kl_divergence", a.len(), q.len()));
    }
    let mut total = 0.0;
    for (j, (&aj, &qj)) in a.iter().zip(q).enumerate() {
        if aj == 0.0 {
            continue;
        }
        if qj <= 0.0 {
            return Err(Error::UnsupportedMass { index: j });
        }
        total += aj * (aj / qj).ln();
    }
    // Rounding can leave a tiny negative value for a == q.
    Ok(total.max(0.0))
}

/// Mixture of confusion rows weighted by `w`: component `j` is
/// `sum_i w_i M[i][j]`.
pub fn mixture_predict(m: &ConfusionMatrix, w: &Composition) -> Result<Composition> {
    let c = m.classes();
    if w.dim() != c {
        return Err(Error::dims("mixture weights", c, w.dim()));
    }
    let mut out = vec![0.0; c];
    for (wi, row) in w.as_slice().iter().zip(m.rows()) {
        if *wi == 0.0 {
            continue;
        }
        for (o, &mij) in out.iter_mut().zip(row.as_slice()) {
            *o += wi * mij;
        }
    }
    Composition::new(out)
}

/// Most probable class, ties resolved to the lowest index. Classes are
/// zero-based.
pub fn plurality_class(a: &Composition) -> usize {
    let mut best = 0;
    for (j, &v) in a.as_slice().iter().enumerate().skip(1) {
        if v > a.get(best) {
            best = j;
        }
    }
    best
}
