//! KL losses of the generalized posterior, their analytic derivatives, and
//! the sandwich matrices used for delta-method intervals.
//!
//! Everything here works on the free parameterization: each confusion row
//! drops its last entry and the prevalence drops its last entry. Free
//! coordinates are flattened as `M(1)` row-major over `(i, j < C-1)`, then
//! `M(2)`, ..., then `p_1..p_{C-1}` (see [`ParamLayout`]).
//!
//! With `q = M'p` (unlabeled) or `q = M'b_r` (labeled), the loss is a sum of
//! terms `-a_j log q_j` plus a data-only entropy constant, so the gradient and
//! Hessian reduce to derivatives of `q_j`:
//!
//! ```text
//! dq_j / dM~_{i,j'} = w_i * E(j, j')      E(j, j') = [j == j'] - [j == C]
//! dq_j / dp~_i      = M_{i,j} - M_{C,j}   (unlabeled only)
//! d2q_j / dM~_{i,j'} dp~_{i''} = E(j, j') * ([i == i''] - [i == C])
//! ```
//!
//! where `w` is `p` or `b_r`. All other second derivatives of `q_j` vanish.

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::composition::{Composition, ConfusionMatrix, Dataset};
use crate::error::{Error, Result};

/// Prevalence together with one confusion matrix per classifier.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Theta {
    pub confusions: Vec<ConfusionMatrix>,
    pub prevalence: Composition,
}

impl Theta {
    pub fn new(confusions: Vec<ConfusionMatrix>, prevalence: Composition) -> Result<Self> {
        let c = prevalence.dim();
        if confusions.is_empty() {
            return Err(Error::InvalidConfig("theta needs at least one confusion matrix".into()));
        }
        if let Some(m) = confusions.iter().find(|m| m.classes() != c) {
            return Err(Error::dims("theta confusion matrix", c, m.classes()));
        }
        Ok(Theta {
            confusions,
            prevalence,
        })
    }

    pub fn classes(&self) -> usize {
        self.prevalence.dim()
    }

    pub fn classifiers(&self) -> usize {
        self.confusions.len()
    }

    pub fn layout(&self) -> ParamLayout {
        ParamLayout::new(self.classes(), self.classifiers())
    }

    pub fn to_free(&self) -> Vec<f64> {
        let layout = self.layout();
        let c = layout.classes;
        let mut out = vec![0.0; layout.dim()];
        for (k, m) in self.confusions.iter().enumerate() {
            for i in 0..c {
                for j in 0..c - 1 {
                    out[layout.m_index(k, i, j)] = m.get(i, j);
                }
            }
        }
        for i in 0..c - 1 {
            out[layout.p_index(i)] = self.prevalence.get(i);
        }
        out
    }

    /// Inverse of [`Theta::to_free`]; fails when the implied last entries are
    /// negative.
    pub fn from_free(free: &[f64], classes: usize, classifiers: usize) -> Result<Self> {
        let layout = ParamLayout::new(classes, classifiers);
        if free.len() != layout.dim() {
            return Err(Error::dims("free parameter vector", layout.dim(), free.len()));
        }
        let complete = |head: &[f64]| -> Result<Composition> {
            let mut v = head.to_vec();
            v.push(1.0 - head.iter().sum::<f64>());
            Composition::new(v)
        };
        let per = layout.per_classifier();
        let confusions = (0..classifiers)
            .map(|k| {
                let block = &free[k * per..(k + 1) * per];
                let rows = block
                    .chunks(classes - 1)
                    .map(complete)
                    .collect::<Result<Vec<_>>>()?;
                ConfusionMatrix::from_compositions(rows)
            })
            .collect::<Result<Vec<_>>>()?;
        let prevalence = complete(&free[classifiers * per..])?;
        Theta::new(confusions, prevalence)
    }
}

/// Index map for the free parameter vector.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct ParamLayout {
    pub classes: usize,
    pub classifiers: usize,
}

impl ParamLayout {
    pub fn new(classes: usize, classifiers: usize) -> Self {
        assert!(classes >= 2, "need at least two classes");
        ParamLayout {
            classes,
            classifiers,
        }
    }

    pub fn per_classifier(&self) -> usize {
        self.classes * (self.classes - 1)
    }

    pub fn dim(&self) -> usize {
        self.classifiers * self.per_classifier() + self.classes - 1
    }

    /// Position of `M(k)[i][j]`, `j < C-1`.
    pub fn m_index(&self, k: usize, i: usize, j: usize) -> usize {
        debug_assert!(j + 1 < self.classes);
        k * self.per_classifier() + i * (self.classes - 1) + j
    }

    /// Position of `p[i]`, `i < C-1`.
    pub fn p_index(&self, i: usize) -> usize {
        debug_assert!(i + 1 < self.classes);
        self.classifiers * self.per_classifier() + i
    }
}

/// Neumaier-compensated running sum.
#[derive(Debug, Default, Clone, Copy)]
pub(crate) struct CompensatedSum {
    sum: f64,
    carry: f64,
}

impl CompensatedSum {
    pub(crate) fn add(&mut self, x: f64) {
        let t = self.sum + x;
        if self.sum.abs() >= x.abs() {
            self.carry += (self.sum - t) + x;
        } else {
            self.carry += (x - t) + self.sum;
        }
        self.sum = t;
    }

    pub(crate) fn total(&self) -> f64 {
        self.sum + self.carry
    }
}

/// Labeled instances sharing one belief vector; exact labels of the same
/// class collapse into one group with summed prediction weights.
#[derive(Debug, Clone)]
struct LabeledGroup {
    belief: Vec<f64>,
    /// `weights[k][j]`: summed `a_rj` for classifier `k`.
    weights: Vec<Vec<f64>>,
}

/// Sufficient statistics of a dataset for repeated loss evaluation.
///
/// The unlabeled loss depends on the data only through the column sums
/// `S_kj = sum_r a^k_rj`, and exact-label instances only through per-class
/// sums, so evaluation cost does not grow with `N`.
#[derive(Debug, Clone)]
pub struct LossModel {
    classes: usize,
    classifiers: usize,
    n_unlabeled: usize,
    entropy_unlabeled: f64,
    entropy_labeled: f64,
    unlabeled_sums: Vec<Vec<f64>>,
    groups: Vec<LabeledGroup>,
}

impl LossModel {
    pub fn new(data: &Dataset) -> Self {
        let c = data.classes();
        let kk = data.classifiers();
        let mut unlabeled_sums = vec![vec![CompensatedSum::default(); c]; kk];
        let mut ent_u = CompensatedSum::default();
        for preds in data.unlabeled() {
            for (k, a) in preds.iter().enumerate() {
                for (j, &v) in a.as_slice().iter().enumerate() {
                    if v > 0.0 {
                        unlabeled_sums[k][j].add(v);
                        ent_u.add(v * v.ln());
                    }
                }
            }
        }
        let mut ent_l = CompensatedSum::default();
        let mut exact: Vec<Option<LabeledGroup>> = vec![None; c];
        let mut groups = Vec::new();
        for inst in data.labeled() {
            for a in &inst.predictions {
                for &v in a.as_slice() {
                    if v > 0.0 {
                        ent_l.add(v * v.ln());
                    }
                }
            }
            match inst.belief.degenerate_class() {
                Some(y) => {
                    let g = exact[y].get_or_insert_with(|| LabeledGroup {
                        belief: inst.belief.as_slice().to_vec(),
                        weights: vec![vec![0.0; c]; kk],
                    });
                    for (k, a) in inst.predictions.iter().enumerate() {
                        for (w, &v) in g.weights[k].iter_mut().zip(a.as_slice()) {
                            *w += v;
                        }
                    }
                }
                None => groups.push(LabeledGroup {
                    belief: inst.belief.as_slice().to_vec(),
                    weights: inst
                        .predictions
                        .iter()
                        .map(|a| a.as_slice().to_vec())
                        .collect(),
                }),
            }
        }
        groups.extend(exact.into_iter().flatten());
        LossModel {
            classes: c,
            classifiers: kk,
            n_unlabeled: data.n_unlabeled(),
            entropy_unlabeled: ent_u.total(),
            entropy_labeled: ent_l.total(),
            unlabeled_sums: unlabeled_sums
                .into_iter()
                .map(|row| row.iter().map(CompensatedSum::total).collect())
                .collect(),
            groups,
        }
    }

    pub fn classes(&self) -> usize {
        self.classes
    }

    pub fn classifiers(&self) -> usize {
        self.classifiers
    }

    pub fn n_unlabeled(&self) -> usize {
        self.n_unlabeled
    }

    /// Unlabeled loss `sum_k sum_{r in U} KL(a^k_r || M(k)'p)` from row-major
    /// `C*C` confusion buffers.
    pub fn unlabeled_raw(&self, confusions: &[Vec<f64>], p: &[f64]) -> Result<f64> {
        let c = self.classes;
        let mut acc = CompensatedSum::default();
        acc.add(self.entropy_unlabeled);
        for (k, m) in confusions.iter().enumerate() {
            for j in 0..c {
                let s = self.unlabeled_sums[k][j];
                if s == 0.0 {
                    continue;
                }
                let q: f64 = (0..c).map(|i| p[i] * m[i * c + j]).sum();
                if q <= 0.0 {
                    return Err(Error::BoundaryParameter { class: j });
                }
                acc.add(-s * q.ln());
            }
        }
        Ok(acc.total())
    }

    /// Labeled loss `sum_k sum_{r in L} KL(a^k_r || M(k)'b_r)`.
    pub fn labeled_raw(&self, confusions: &[Vec<f64>]) -> Result<f64> {
        let c = self.classes;
        let mut acc = CompensatedSum::default();
        acc.add(self.entropy_labeled);
        for g in &self.groups {
            for (k, m) in confusions.iter().enumerate() {
                for j in 0..c {
                    let w = g.weights[k][j];
                    if w == 0.0 {
                        continue;
                    }
                    let q: f64 = (0..c).map(|i| g.belief[i] * m[i * c + j]).sum();
                    if q <= 0.0 {
                        return Err(Error::BoundaryParameter { class: j });
                    }
                    acc.add(-w * q.ln());
                }
            }
        }
        Ok(acc.total())
    }

    /// `N f_N`: the total (unnormalized) loss.
    pub fn total_raw(&self, confusions: &[Vec<f64>], p: &[f64]) -> Result<f64> {
        Ok(self.unlabeled_raw(confusions, p)? + self.labeled_raw(confusions)?)
    }

    /// `f_N(theta)`.
    pub fn value(&self, theta: &Theta) -> Result<f64> {
        self.check(theta)?;
        let (ms, p) = raw_parts(theta);
        Ok(self.total_raw(&ms, &p)? / self.n_unlabeled as f64)
    }

    pub fn gradient(&self, theta: &Theta) -> Result<Vec<f64>> {
        self.check(theta)?;
        let layout = theta.layout();
        let mut grad = vec![0.0; layout.dim()];
        self.for_each_term(theta, |w, q, dq, _| {
            for &(idx, d) in dq {
                grad[idx] -= w * d / q;
            }
        })?;
        let n = self.n_unlabeled as f64;
        grad.iter_mut().for_each(|g| *g /= n);
        Ok(grad)
    }

    pub fn hessian(&self, theta: &Theta) -> Result<DMatrix<f64>> {
        self.check(theta)?;
        let layout = theta.layout();
        let dim = layout.dim();
        let mut h = DMatrix::<f64>::zeros(dim, dim);
        self.for_each_term(theta, |w, q, dq, cross| {
            let scale = w / (q * q);
            for &(a, da) in dq {
                for &(b, db) in dq {
                    h[(a, b)] += scale * da * db;
                }
            }
            for &(a, b, d2) in cross {
                h[(a, b)] -= w * d2 / q;
                h[(b, a)] -= w * d2 / q;
            }
        })?;
        h /= self.n_unlabeled as f64;
        Ok(h)
    }

    fn check(&self, theta: &Theta) -> Result<()> {
        if theta.classes() != self.classes {
            return Err(Error::dims("theta classes", self.classes, theta.classes()));
        }
        if theta.classifiers() != self.classifiers {
            return Err(Error::dims("theta classifiers", self.classifiers, theta.classifiers()));
        }
        Ok(())
    }

    /// Visits every loss term `-w log q` with the sparse gradient of `q` and
    /// the (off-diagonal, listed once) second derivatives of `q`.
    fn for_each_term<F>(&self, theta: &Theta, mut visit: F) -> Result<()>
    where
        F: FnMut(f64, f64, &[(usize, f64)], &[(usize, usize, f64)]),
    {
        let layout = theta.layout();
        let c = self.classes;
        let last = c - 1;
        let p = theta.prevalence.as_slice();
        let mut dq: Vec<(usize, f64)> = Vec::with_capacity(c * c);
        let mut cross: Vec<(usize, usize, f64)> = Vec::with_capacity(c * c);
        for (k, m) in theta.confusions.iter().enumerate() {
            for j in 0..c {
                let s = self.unlabeled_sums[k][j];
                if s == 0.0 {
                    continue;
                }
                let q: f64 = (0..c).map(|i| p[i] * m.get(i, j)).sum();
                if q <= 0.0 {
                    return Err(Error::BoundaryParameter { class: j });
                }
                dq.clear();
                cross.clear();
                for_each_e(c, j, |jp, e| {
                    for i in 0..c {
                        dq.push((layout.m_index(k, i, jp), p[i] * e));
                        if i < last {
                            cross.push((layout.m_index(k, i, jp), layout.p_index(i), e));
                        } else {
                            for ipp in 0..last {
                                cross.push((layout.m_index(k, i, jp), layout.p_index(ipp), -e));
                            }
                        }
                    }
                });
                for i in 0..last {
                    dq.push((layout.p_index(i), m.get(i, j) - m.get(last, j)));
                }
                visit(s, q, &dq, &cross);
            }
        }
        cross.clear();
        for g in &self.groups {
            for (k, m) in theta.confusions.iter().enumerate() {
                for j in 0..c {
                    let w = g.weights[k][j];
                    if w == 0.0 {
                        continue;
                    }
                    let q: f64 = (0..c).map(|i| g.belief[i] * m.get(i, j)).sum();
                    if q <= 0.0 {
                        return Err(Error::BoundaryParameter { class: j });
                    }
                    dq.clear();
                    for_each_e(c, j, |jp, e| {
                        for i in 0..c {
                            if g.belief[i] != 0.0 {
                                dq.push((layout.m_index(k, i, jp), g.belief[i] * e));
                            }
                        }
                    });
                    visit(w, q, &dq, &cross);
                }
            }
        }
        Ok(())
    }
}

/// Calls `f(j', E(j, j'))` for the non-zero entries of `E(j, .)`.
fn for_each_e(c: usize, j: usize, mut f: impl FnMut(usize, f64)) {
    if j + 1 < c {
        f(j, 1.0);
    } else {
        for jp in 0..c - 1 {
            f(jp, -1.0);
        }
    }
}

pub(crate) fn raw_parts(theta: &Theta) -> (Vec<Vec<f64>>, Vec<f64>) {
    (
        theta.confusions.iter().map(ConfusionMatrix::to_flat).collect(),
        theta.prevalence.as_slice().to_vec(),
    )
}

/// `f_N(theta) = (l_U + l_L) / N`, summed over classifiers.
pub fn loss_total(theta: &Theta, data: &Dataset) -> Result<f64> {
    LossModel::new(data).value(theta)
}

/// Gradient of [`loss_total`] over the free parameters.
pub fn grad_loss(theta: &Theta, data: &Dataset) -> Result<Vec<f64>> {
    LossModel::new(data).gradient(theta)
}

/// Hessian of [`loss_total`] over the free parameters; at the posterior
/// mean this is `J-hat`.
pub fn hessian_loss(theta: &Theta, data: &Dataset) -> Result<DMatrix<f64>> {
    LossModel::new(data).hessian(theta)
}

/// Result of [`minimize_loss`].
#[derive(Debug, Clone)]
pub struct Minimizer {
    pub theta: Theta,
    pub value: f64,
    pub iterations: usize,
    /// Gradient norm fell below tolerance at an interior point.
    pub converged: bool,
}

/// Damped Newton descent on `f_N` over the free parameters, started from
/// `start`. Steps are halved until they stay inside the simplex and satisfy
/// an Armijo decrease; an indefinite Hessian gets a growing ridge.
pub fn minimize_loss(data: &Dataset, start: &Theta, max_iter: usize) -> Result<Minimizer> {
    let model = LossModel::new(data);
    let (c, k) = (start.classes(), start.classifiers());
    let mut theta = start.clone();
    let mut value = model.value(&theta)?;
    let mut x = theta.to_free();
    for it in 0..max_iter {
        let g = DVector::from_vec(model.gradient(&theta)?);
        if g.amax() < 1e-10 {
            return Ok(Minimizer { theta, value, iterations: it, converged: true });
        }
        let h = model.hessian(&theta)?;
        let mut ridge = 0.0;
        let step = loop {
            let mut hr = h.clone();
            for d in 0..hr.nrows() {
                hr[(d, d)] += ridge;
            }
            if let Some(ch) = hr.cholesky() {
                break -ch.solve(&g);
            }
            ridge = if ridge == 0.0 { 1e-8 * h.amax().max(1.0) } else { ridge * 10.0 };
        };
        let slope = g.dot(&step);
        let mut t = 1.0;
        let mut moved = false;
        while t > 1e-12 {
            let cand: Vec<f64> = x.iter().zip(step.iter()).map(|(a, s)| a + t * s).collect();
            if let Ok(next) = Theta::from_free(&cand, c, k) {
                if let Ok(v) = model.value(&next) {
                    if v <= value + 1e-4 * t * slope {
                        x = cand;
                        theta = next;
                        value = v;
                        moved = true;
                        break;
                    }
                }
            }
            t *= 0.5;
        }
        if !moved {
            return Ok(Minimizer { theta, value, iterations: it, converged: false });
        }
    }
    Ok(Minimizer { theta, value, iterations: max_iter, converged: false })
}

/// Outer-product and Hessian matrices for the sandwich variance.
#[derive(Debug, Clone)]
pub struct SandwichMatrices {
    pub j_hat: DMatrix<f64>,
    pub omega_hat: DMatrix<f64>,
    pub xi: f64,
}

/// Builds `Omega-hat` and `J-hat` at `theta_hat`.
///
/// `Omega-hat = W V_A W' + xi * blockdiag(V_g, 0)` where `V_A` is the sample
/// covariance of the stacked unlabeled predictions, `W` holds
/// `d log q_j / d theta` for `q = M(k)'p` (blocks `p (x) D_k` and
/// `(M_i - M_C) / q`), and `V_g` is the sample covariance of the labeled
/// scores `g_r = (b_r (x) D_r) a_r`.
pub fn omega_hat(theta_hat: &Theta, data: &Dataset) -> Result<SandwichMatrices> {
    let model = LossModel::new(data);
    model.check(theta_hat)?;
    let n_u = data.n_unlabeled();
    let n_l = data.n_labeled();
    if n_u < 2 {
        return Err(Error::InsufficientData("omega_hat needs N >= 2".into()));
    }
    if n_l < 2 {
        return Err(Error::InsufficientData("omega_hat needs n >= 2".into()));
    }
    let layout = theta_hat.layout();
    let c = layout.classes;
    let kk = layout.classifiers;
    let last = c - 1;
    let dim = layout.dim();
    let p = theta_hat.prevalence.as_slice();

    // W: dim x (K*C)
    let mut w = DMatrix::<f64>::zeros(dim, kk * c);
    for (k, m) in theta_hat.confusions.iter().enumerate() {
        let q = mix(m, p);
        for j in 0..c {
            if q[j] <= 0.0 {
                return Err(Error::BoundaryParameter { class: j });
            }
            let col = k * c + j;
            for_each_e(c, j, |jp, e| {
                for i in 0..c {
                    w[(layout.m_index(k, i, jp), col)] = p[i] * e / q[j];
                }
            });
            for i in 0..last {
                w[(layout.p_index(i), col)] = (m.get(i, j) - m.get(last, j)) / q[j];
            }
        }
    }
    let stacked_u: Vec<Vec<f64>> = data
        .unlabeled()
        .iter()
        .map(|preds| preds.iter().flat_map(|a| a.as_slice().iter().copied()).collect())
        .collect();
    let v_a = sample_covariance(&stacked_u);
    let mut omega = &w * v_a * w.transpose();

    let per = layout.per_classifier();
    let mut scores = Vec::with_capacity(n_l);
    for inst in data.labeled() {
        let b = inst.belief.as_slice();
        let mut g = vec![0.0; kk * per];
        for (k, m) in theta_hat.confusions.iter().enumerate() {
            let q = mix(m, b);
            let a = inst.predictions[k].as_slice();
            for j in 0..c {
                if a[j] == 0.0 {
                    continue;
                }
                if q[j] <= 0.0 {
                    return Err(Error::BoundaryParameter { class: j });
                }
                for_each_e(c, j, |jp, e| {
                    for i in 0..c {
                        g[layout.m_index(k, i, jp)] += b[i] * e * a[j] / q[j];
                    }
                });
            }
        }
        scores.push(g);
    }
    let v_g = sample_covariance(&scores);
    let xi = data.xi();
    for r in 0..kk * per {
        for s in 0..kk * per {
            omega[(r, s)] += xi * v_g[(r, s)];
        }
    }
    symmetrize(&mut omega);
    let mut j_hat = model.hessian(theta_hat)?;
    symmetrize(&mut j_hat);
    Ok(SandwichMatrices {
        j_hat,
        omega_hat: omega,
        xi,
    })
}

fn mix(m: &ConfusionMatrix, w: &[f64]) -> Vec<f64> {
    let c = m.classes();
    (0..c).map(|j| (0..c).map(|i| w[i] * m.get(i, j)).sum()).collect()
}

/// Sample covariance with denominator `n - 1`.
pub(crate) fn sample_covariance(rows: &[Vec<f64>]) -> DMatrix<f64> {
    let n = rows.len();
    let d = rows.first().map_or(0, Vec::len);
    let mut mean = vec![0.0; d];
    for r in rows {
        for (m, v) in mean.iter_mut().zip(r) {
            *m += v;
        }
    }
    mean.iter_mut().for_each(|m| *m /= n as f64);
    let mut cov = DMatrix::<f64>::zeros(d, d);
    let mut centered = vec![0.0; d];
    for r in rows {
        for ((c, v), m) in centered.iter_mut().zip(r).zip(&mean) {
            *c = v - m;
        }
        for a in 0..d {
            if centered[a] == 0.0 {
                continue;
            }
            for b in 0..d {
                cov[(a, b)] += centered[a] * centered[b];
            }
        }
    }
    if n > 1 {
        cov /= (n - 1) as f64;
    }
    cov
}

fn symmetrize(m: &mut DMatrix<f64>) {
    let n = m.nrows();
    for a in 0..n {
        for b in a + 1..n {
            let v = 0.5 * (m[(a, b)] + m[(b, a)]);
            m[(a, b)] = v;
            m[(b, a)] = v;
        }
    }
}
