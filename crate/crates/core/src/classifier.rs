//! Soft-margin kernel SVM trained by SMO, with Platt sigmoid calibration.

use serde::{Deserialize, Serialize};

use crate::asm::ParameterDomain;
use crate::error::{Error, Result};
use crate::netmodel::parse_json;

/// A parameter point with its stability label (1 stable, 0 unstable).
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct LabeledSample {
    pub rho: Vec<f64>,
    pub s: u8,
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum KernelKind {
    Linear,
    Rbf,
}

/// Kernel choice. For RBF, `width` is σ in scaled coordinates; `None`
/// selects the median pairwise distance of the training set.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct KernelConfig {
    pub kind: KernelKind,
    pub width: Option<f64>,
}

impl KernelConfig {
    pub fn rbf() -> Self {
        Self {
            kind: KernelKind::Rbf,
            width: None,
        }
    }

    pub fn linear() -> Self {
        Self {
            kind: KernelKind::Linear,
            width: None,
        }
    }
}

impl Default for KernelConfig {
    fn default() -> Self {
        Self::rbf()
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct SvmOptions {
    pub kernel: KernelConfig,
    pub c_box: f64,
    pub tol: f64,
    pub max_iter: usize,
}

impl Default for SvmOptions {
    fn default() -> Self {
        Self {
            kernel: KernelConfig::rbf(),
            c_box: 10.0,
            tol: 1e-6,
            max_iter: 1_000_000,
        }
    }
}

/// Resolved kernel with its numeric width.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum Kernel {
    Linear,
    Rbf { sigma: f64 },
}

impl Kernel {
    pub fn eval(&self, a: &[f64], b: &[f64]) -> f64 {
        match *self {
            Kernel::Linear => a.iter().zip(b).map(|(x, y)| x * y).sum(),
            Kernel::Rbf { sigma } => {
                let d2: f64 = a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).sum();
                (-d2 / (2.0 * sigma * sigma)).exp()
            }
        }
    }
}

/// Trained decision function f(ρ) = Σ α_i y_i k(x_i, x) + b over scaled inputs.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SvmModel {
    pub domain: ParameterDomain,
    pub kernel: Kernel,
    pub c_box: f64,
    /// Support vectors in unit-hypercube coordinates.
    pub support: Vec<Vec<f64>>,
    /// Dual coefficients α_i (0 ≤ α_i ≤ C_box).
    pub alpha: Vec<f64>,
    /// Labels y_i ∈ {−1, +1} of the support vectors.
    pub y: Vec<f64>,
    pub bias: f64,
    pub iterations: usize,
}

impl SvmModel {
    pub fn decision(&self, rho: &[f64]) -> f64 {
        let x = self.domain.to_unit(rho);
        self.decision_scaled(&x)
    }

    fn decision_scaled(&self, x: &[f64]) -> f64 {
        let mut f = self.bias;
        for ((sv, a), y) in self.support.iter().zip(&self.alpha).zip(&self.y) {
            f += a * y * self.kernel.eval(sv, x);
        }
        f
    }
}

/// Median of pairwise Euclidean distances; 1 when all points coincide.
pub fn median_pairwise_distance(points: &[Vec<f64>]) -> f64 {
    let mut d = Vec::with_capacity(points.len() * points.len().saturating_sub(1) / 2);
    for i in 0..points.len() {
        for j in i + 1..points.len() {
            let s: f64 = points[i]
                .iter()
                .zip(&points[j])
                .map(|(a, b)| (a - b) * (a - b))
                .sum();
            d.push(s.sqrt());
        }
    }
    if d.is_empty() {
        return 1.0;
    }
    d.sort_by(f64::total_cmp);
    let n = d.len();
    let m = if n % 2 == 1 {
        d[n / 2]
    } else {
        0.5 * (d[n / 2 - 1] + d[n / 2])
    };
    if m > 0.0 {
        m
    } else {
        1.0
    }
}

fn check_data(data: &[LabeledSample], domain: &ParameterDomain) -> Result<()> {
    if data.len() < 2 {
        return Err(Error::Classifier(format!(
            "need at least 2 samples, got {}",
            data.len()
        )));
    }
    for (k, s) in data.iter().enumerate() {
        if s.rho.len() != domain.dim() {
            return Err(Error::Classifier(format!(
                "sample {k} has dimension {}, domain has {}",
                s.rho.len(),
                domain.dim()
            )));
        }
        if s.rho.iter().any(|v| !v.is_finite()) {
            return Err(Error::Classifier(format!("sample {k} is not finite")));
        }
        if s.s > 1 {
            return Err(Error::Classifier(format!("sample {k} has label {}", s.s)));
        }
    }
    let pos = data.iter().filter(|s| s.s == 1).count();
    if pos == 0 || pos == data.len() {
        return Err(Error::Classifier("training data has a single class".into()));
    }
    Ok(())
}

/// Train a soft-margin SVM on unit-scaled inputs with SMO and
/// second-order working-set selection.
pub fn train_svm(
    data: &[LabeledSample],
    domain: &ParameterDomain,
    opts: &SvmOptions,
) -> Result<SvmModel> {
    domain.validate()?;
    check_data(data, domain)?;
    if !(opts.c_box > 0.0 && opts.c_box.is_finite()) {
        return Err(Error::Classifier(format!(
            "C_box must be positive, got {}",
            opts.c_box
        )));
    }
    let x: Vec<Vec<f64>> = data.iter().map(|s| domain.to_unit(&s.rho)).collect();
    let y: Vec<f64> = data
        .iter()
        .map(|s| if s.s == 1 { 1.0 } else { -1.0 })
        .collect();
    let kernel = match opts.kernel.kind {
        KernelKind::Linear => Kernel::Linear,
        KernelKind::Rbf => {
            let sigma = opts
                .kernel
                .width
                .unwrap_or_else(|| median_pairwise_distance(&x));
            if !(sigma > 0.0 && sigma.is_finite()) {
                return Err(Error::Classifier(format!(
                    "kernel width must be positive, got {sigma}"
                )));
            }
            Kernel::Rbf { sigma }
        }
    };
    let n = x.len();
    let mut q = vec![0.0; n * n];
    for i in 0..n {
        for j in i..n {
            let v = y[i] * y[j] * kernel.eval(&x[i], &x[j]);
            q[i * n + j] = v;
            q[j * n + i] = v;
        }
    }
    let (alpha, grad, iterations) = smo(&q, &y, opts.c_box, opts.tol, opts.max_iter)?;
    let rho = bias_offset(&alpha, &grad, &y, opts.c_box);
    let mut support = Vec::new();
    let mut a_sv = Vec::new();
    let mut y_sv = Vec::new();
    for i in 0..n {
        if alpha[i] > 0.0 {
            support.push(x[i].clone());
            a_sv.push(alpha[i]);
            y_sv.push(y[i]);
        }
    }
    Ok(SvmModel {
        domain: domain.clone(),
        kernel,
        c_box: opts.c_box,
        support,
        alpha: a_sv,
        y: y_sv,
        bias: -rho,
        iterations,
    })
}

const TAU: f64 = 1e-12;

/// Solve min ½αᵀQα − 1ᵀα s.t. yᵀα = 0, 0 ≤ α ≤ C. Returns (α, ∇, iterations).
pub fn smo(
    q: &[f64],
    y: &[f64],
    c: f64,
    tol: f64,
    max_iter: usize,
) -> Result<(Vec<f64>, Vec<f64>, usize)> {
    let n = y.len();
    let mut alpha = vec![0.0; n];
    let mut grad = vec![-1.0; n];
    let in_up = |a: f64, yt: f64| (yt > 0.0 && a < c) || (yt < 0.0 && a > 0.0);
    let in_low = |a: f64, yt: f64| (yt > 0.0 && a > 0.0) || (yt < 0.0 && a < c);
    for iter in 0..max_iter {
        let mut gmax = f64::NEG_INFINITY;
        let mut i_sel = usize::MAX;
        for t in 0..n {
            if in_up(alpha[t], y[t]) {
                let v = -y[t] * grad[t];
                if v > gmax {
                    gmax = v;
                    i_sel = t;
                }
            }
        }
        let mut gmin = f64::INFINITY;
        let mut j_sel = usize::MAX;
        let mut best = f64::INFINITY;
        if i_sel != usize::MAX {
            let i = i_sel;
            for t in 0..n {
                if !in_low(alpha[t], y[t]) {
                    continue;
                }
                let v = -y[t] * grad[t];
                gmin = gmin.min(v);
                let b = gmax - v;
                if b > 0.0 {
                    let mut a = q[i * n + i] + q[t * n + t] - 2.0 * y[i] * y[t] * q[i * n + t];
                    if a <= 0.0 {
                        a = TAU;
                    }
                    let obj = -(b * b) / a;
                    if obj < best {
                        best = obj;
                        j_sel = t;
                    }
                }
            }
        }
        if i_sel == usize::MAX || j_sel == usize::MAX || gmax - gmin < tol {
            return Ok((alpha, grad, iter));
        }
        let (i, j) = (i_sel, j_sel);
        let (old_i, old_j) = (alpha[i], alpha[j]);
        let qii = q[i * n + i];
        let qjj = q[j * n + j];
        let qij = q[i * n + j];
        if y[i] != y[j] {
            let mut quad = qii + qjj + 2.0 * qij;
            if quad <= 0.0 {
                quad = TAU;
            }
            let delta = (-grad[i] - grad[j]) / quad;
            let diff = alpha[i] - alpha[j];
            alpha[i] += delta;
            alpha[j] += delta;
            if diff > 0.0 {
                if alpha[j] < 0.0 {
                    alpha[j] = 0.0;
                    alpha[i] = diff;
                }
            } else if alpha[i] < 0.0 {
                alpha[i] = 0.0;
                alpha[j] = -diff;
            }
            if diff > 0.0 {
                if alpha[i] > c {
                    alpha[i] = c;
                    alpha[j] = c - diff;
                }
            } else if alpha[j] > c {
                alpha[j] = c;
                alpha[i] = c + diff;
            }
        } else {
            let mut quad = qii + qjj - 2.0 * qij;
            if quad <= 0.0 {
                quad = TAU;
            }
            let delta = (grad[i] - grad[j]) / quad;
            let sum = alpha[i] + alpha[j];
            alpha[i] -= delta;
            alpha[j] += delta;
            if sum > c {
                if alpha[i] > c {
                    alpha[i] = c;
                    alpha[j] = sum - c;
                }
            } else if alpha[j] < 0.0 {
                alpha[j] = 0.0;
                alpha[i] = sum;
            }
            if sum > c {
                if alpha[j] > c {
                    alpha[j] = c;
                    alpha[i] = sum - c;
                }
            } else if alpha[i] < 0.0 {
                alpha[i] = 0.0;
                alpha[j] = sum;
            }
        }
        let di = alpha[i] - old_i;
        let dj = alpha[j] - old_j;
        for t in 0..n {
            grad[t] += q[t * n + i] * di + q[t * n + j] * dj;
        }
    }
    Err(Error::Classifier(format!(
        "SMO did not reach KKT tolerance {tol} in {max_iter} iterations"
    )))
}

fn bias_offset(alpha: &[f64], grad: &[f64], y: &[f64], c: f64) -> f64 {
    let mut ub = f64::INFINITY;
    let mut lb = f64::NEG_INFINITY;
    let mut sum = 0.0;
    let mut free = 0usize;
    for t in 0..alpha.len() {
        let yg = y[t] * grad[t];
        if alpha[t] >= c {
            if y[t] < 0.0 {
                ub = ub.min(yg);
            } else {
                lb = lb.max(yg);
            }
        } else if alpha[t] <= 0.0 {
            if y[t] > 0.0 {
                ub = ub.min(yg);
            } else {
                lb = lb.max(yg);
            }
        } else {
            free += 1;
            sum += yg;
        }
    }
    if free > 0 {
        sum / free as f64
    } else {
        0.5 * (ub + lb)
    }
}

/// Sigmoid P(s=1|f) = 1/(1 + exp(a f + b)).
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct PlattSigmoid {
    pub a: f64,
    pub b: f64,
}

impl PlattSigmoid {
    pub fn prob(&self, f: f64) -> f64 {
        let z = self.a * f + self.b;
        let p = if z >= 0.0 {
            let e = (-z).exp();
            e / (1.0 + e)
        } else {
            1.0 / (1.0 + z.exp())
        };
        p.clamp(f64::MIN_POSITIVE, 1.0 - f64::EPSILON / 2.0)
    }
}

/// Fit a Platt sigmoid by maximum likelihood with smoothed targets
/// (N₊+1)/(N₊+2) and 1/(N₋+2), using Newton's method with backtracking.
pub fn fit_platt(decisions: &[f64], labels: &[u8]) -> Result<PlattSigmoid> {
    if decisions.len() != labels.len() || decisions.is_empty() {
        return Err(Error::Classifier(
            "decision values and labels differ in length".into(),
        ));
    }
    let lo = decisions.iter().cloned().fold(f64::INFINITY, f64::min);
    let hi = decisions.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    if !(hi - lo > 1e-12 * (1.0 + hi.abs().max(lo.abs()))) {
        return Err(Error::Classifier(
            "all decision values are identical".into(),
        ));
    }
    let prior1 = labels.iter().filter(|&&s| s == 1).count() as f64;
    let prior0 = labels.len() as f64 - prior1;
    let hi_t = (prior1 + 1.0) / (prior1 + 2.0);
    let lo_t = 1.0 / (prior0 + 2.0);
    let t: Vec<f64> = labels
        .iter()
        .map(|&s| if s == 1 { hi_t } else { lo_t })
        .collect();
    let objective = |a: f64, b: f64| -> f64 {
        decisions
            .iter()
            .zip(&t)
            .map(|(&f, &ti)| {
                let z = a * f + b;
                if z >= 0.0 {
                    ti * z + (-z).exp().ln_1p()
                } else {
                    (ti - 1.0) * z + z.exp().ln_1p()
                }
            })
            .sum()
    };
    let mut a = 0.0;
    let mut b = ((prior0 + 1.0) / (prior1 + 1.0)).ln();
    let mut fval = objective(a, b);
    let sigma = 1e-12;
    for _ in 0..200 {
        let (mut h11, mut h22, mut h21, mut g1, mut g2) = (sigma, sigma, 0.0, 0.0, 0.0);
        for (&f, &ti) in decisions.iter().zip(&t) {
            let z = a * f + b;
            let (p, q) = if z >= 0.0 {
                let e = (-z).exp();
                (e / (1.0 + e), 1.0 / (1.0 + e))
            } else {
                let e = z.exp();
                (1.0 / (1.0 + e), e / (1.0 + e))
            };
            let d2 = p * q;
            h11 += f * f * d2;
            h22 += d2;
            h21 += f * d2;
            let d1 = ti - p;
            g1 += f * d1;
            g2 += d1;
        }
        if g1.abs() < 1e-12 && g2.abs() < 1e-12 {
            break;
        }
        let det = h11 * h22 - h21 * h21;
        let da = -(h22 * g1 - h21 * g2) / det;
        let db = -(-h21 * g1 + h11 * g2) / det;
        let gd = g1 * da + g2 * db;
        let mut step = 1.0;
        let mut moved = false;
        while step >= 1e-12 {
            let (na, nb) = (a + step * da, b + step * db);
            let nf = objective(na, nb);
            if nf < fval + 1e-4 * step * gd {
                a = na;
                b = nb;
                fval = nf;
                moved = true;
                break;
            }
            step *= 0.5;
        }
        if !moved {
            break;
        }
    }
    if !(a.is_finite() && b.is_finite()) {
        return Err(Error::Classifier("sigmoid fit diverged".into()));
    }
    Ok(PlattSigmoid { a, b })
}

/// SVM decision function composed with a Platt sigmoid.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CalibratedSvm {
    pub svm: SvmModel,
    pub sigmoid: PlattSigmoid,
}

impl CalibratedSvm {
    pub fn predict_prob(&self, rho: &[f64]) -> f64 {
        self.sigmoid.prob(self.svm.decision(rho))
    }

    pub fn to_json(&self) -> Result<String> {
        serde_json::to_string_pretty(self).map_err(|e| Error::Parse(e.to_string()))
    }

    pub fn from_json(text: &str) -> Result<Self> {
        parse_json(text, "classifier model")
    }
}

/// Fit the sigmoid to the model's decision values on `data`.
pub fn calibrate(model: SvmModel, data: &[LabeledSample]) -> Result<CalibratedSvm> {
    check_data(data, &model.domain)?;
    let f: Vec<f64> = data.iter().map(|s| model.decision(&s.rho)).collect();
    let labels: Vec<u8> = data.iter().map(|s| s.s).collect();
    let sigmoid = fit_platt(&f, &labels)?;
    Ok(CalibratedSvm {
        svm: model,
        sigmoid,
    })
}

/// Train and calibrate on the same data.
pub fn fit(
    data: &[LabeledSample],
    domain: &ParameterDomain,
    opts: &SvmOptions,
) -> Result<CalibratedSvm> {
    let model = train_svm(data, domain, opts)?;
    calibrate(model, data)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn unit1() -> ParameterDomain {
        ParameterDomain::new(vec!["x".into()], vec![0.0], vec![1.0]).unwrap()
    }

    fn sample(rho: &[f64], s: u8) -> LabeledSample {
        LabeledSample {
            rho: rho.to_vec(),
            s,
        }
    }

    #[test]
    fn separable_pair_linear_boundary_at_half() {
        let data = vec![sample(&[0.0], 0), sample(&[1.0], 1)];
        let opts = SvmOptions {
            kernel: KernelConfig::linear(),
            ..Default::default()
        };
        let m = train_svm(&data, &unit1(), &opts).unwrap();
        assert!(m.decision(&[0.5]).abs() < 1e-9);
        assert!(m.decision(&[0.0]) < 0.0);
        assert!(m.decision(&[1.0]) > 0.0);
    }

    #[test]
    fn single_class_is_an_error() {
        let data = vec![sample(&[0.1], 1), sample(&[0.9], 1)];
        assert!(matches!(
            train_svm(&data, &unit1(), &SvmOptions::default()),
            Err(Error::Classifier(_))
        ));
    }

    #[test]
    fn contradictory_duplicates_train() {
        let data = vec![
            sample(&[0.5], 0),
            sample(&[0.5], 1),
            sample(&[0.1], 0),
            sample(&[0.9], 1),
        ];
        let m = train_svm(&data, &unit1(), &SvmOptions::default()).unwrap();
        assert!(m.alpha.iter().all(|&a| (0.0..=m.c_box).contains(&a)));
        assert!(m.decision(&[0.9]) > 0.0);
    }

    #[test]
    fn sigmoid_monotone_and_in_open_interval() {
        let s = PlattSigmoid { a: -2.0, b: 0.3 };
        let mut last = 0.0;
        for k in -30..=30 {
            let p = s.prob(k as f64 * 0.5);
            assert!(p > 0.0 && p < 1.0);
            assert!(p > last);
            last = p;
        }
        assert!(s.prob(1e6) < 1.0 && s.prob(-1e6) > 0.0);
    }

    #[test]
    fn identical_decisions_rejected() {
        assert!(fit_platt(&[0.3, 0.3, 0.3], &[0, 1, 1]).is_err());
    }

    #[test]
    fn json_round_trip() {
        let data = vec![
            sample(&[0.0], 0),
            sample(&[0.2], 0),
            sample(&[0.8], 1),
            sample(&[1.0], 1),
        ];
        let m = fit(&data, &unit1(), &SvmOptions::default()).unwrap();
        let back = CalibratedSvm::from_json(&m.to_json().unwrap()).unwrap();
        assert_eq!(
            back.predict_prob(&[0.37]).to_bits(),
            m.predict_prob(&[0.37]).to_bits()
        );
    }
}
