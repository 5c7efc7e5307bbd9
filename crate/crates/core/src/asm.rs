//! Adaptive sampling of a binary stability oracle: seed, label, train,
//! refine near the probability threshold, retrain.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::classifier::{fit, CalibratedSvm, LabeledSample, SvmOptions};
use crate::error::{Error, Result};
use crate::netmodel::parse_json;

/// Axis-aligned box of controller parameters.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ParameterDomain {
    pub names: Vec<String>,
    pub lo: Vec<f64>,
    pub hi: Vec<f64>,
}

impl ParameterDomain {
    pub fn new(names: Vec<String>, lo: Vec<f64>, hi: Vec<f64>) -> Result<Self> {
        let d = Self { names, lo, hi };
        d.validate()?;
        Ok(d)
    }

    pub fn validate(&self) -> Result<()> {
        let n = self.names.len();
        if n == 0 {
            return Err(Error::Domain(
                "parameter domain needs at least one dimension".into(),
            ));
        }
        if self.lo.len() != n || self.hi.len() != n {
            return Err(Error::Domain(format!(
                "domain has {n} names but {} lower and {} upper bounds",
                self.lo.len(),
                self.hi.len()
            )));
        }
        for k in 0..n {
            if !(self.lo[k].is_finite() && self.hi[k].is_finite() && self.lo[k] < self.hi[k]) {
                return Err(Error::Domain(format!(
                    "{}: bounds [{}, {}] are not an interval",
                    self.names[k], self.lo[k], self.hi[k]
                )));
            }
        }
        Ok(())
    }

    pub fn dim(&self) -> usize {
        self.names.len()
    }

    pub fn to_unit(&self, rho: &[f64]) -> Vec<f64> {
        rho.iter()
            .enumerate()
            .map(|(k, v)| (v - self.lo[k]) / (self.hi[k] - self.lo[k]))
            .collect()
    }

    pub fn from_unit(&self, u: &[f64]) -> Vec<f64> {
        u.iter()
            .enumerate()
            .map(|(k, v)| self.lo[k] + v * (self.hi[k] - self.lo[k]))
            .collect()
    }

    pub fn contains(&self, rho: &[f64]) -> bool {
        rho.len() == self.dim()
            && rho
                .iter()
                .enumerate()
                .all(|(k, v)| *v >= self.lo[k] && *v <= self.hi[k])
    }

    /// One uniform draw from the box.
    pub fn sample<R: Rng>(&self, rng: &mut R) -> Vec<f64> {
        (0..self.dim())
            .map(|k| self.lo[k] + rng.random::<f64>() * (self.hi[k] - self.lo[k]))
            .collect()
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct AsmConfig {
    pub n_init: usize,
    pub n_r: usize,
    pub n_a: usize,
    pub p_th: f64,
    pub seed: u64,
    /// Refinement rounds sharing the N_a budget; 1 is the plain method.
    #[serde(default = "one_round")]
    pub rounds: usize,
    pub svm: SvmOptions,
}

fn one_round() -> usize {
    1
}

impl Default for AsmConfig {
    fn default() -> Self {
        Self {
            n_init: 100,
            n_r: 20_000,
            n_a: 250,
            p_th: 0.8,
            seed: 0,
            rounds: 1,
            svm: SvmOptions::default(),
        }
    }
}

impl AsmConfig {
    pub fn validate(&self) -> Result<()> {
        if self.n_init < 2 {
            return Err(Error::Domain(format!(
                "N_init must be at least 2, got {}",
                self.n_init
            )));
        }
        if self.n_a < 1 {
            return Err(Error::Domain("N_a must be at least 1".into()));
        }
        if self.n_r < 10 * self.n_init || self.n_r < self.n_a {
            return Err(Error::Domain(format!(
                "N_r = {} must be at least 10·N_init = {} and at least N_a = {}",
                self.n_r,
                10 * self.n_init,
                self.n_a
            )));
        }
        if self.rounds < 1 || self.rounds > self.n_a {
            return Err(Error::Domain(format!(
                "rounds must lie in [1, N_a], got {}",
                self.rounds
            )));
        }
        if !(self.p_th > 0.0 && self.p_th < 1.0) {
            return Err(Error::Domain(format!(
                "P_th must lie in (0, 1), got {}",
                self.p_th
            )));
        }
        Ok(())
    }
}

/// Probability model: calibrated SVM, or a constant when only one class was seen.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum ProbabilityModel {
    Svm(CalibratedSvm),
    Constant { p: f64 },
}

impl ProbabilityModel {
    pub fn predict_prob(&self, rho: &[f64]) -> f64 {
        match self {
            ProbabilityModel::Svm(m) => m.predict_prob(rho),
            ProbabilityModel::Constant { p } => *p,
        }
    }

    fn from_samples(
        samples: &[LabeledSample],
        domain: &ParameterDomain,
        opts: &SvmOptions,
    ) -> Result<(Self, bool)> {
        let pos = samples.iter().filter(|s| s.s == 1).count();
        if pos == 0 || pos == samples.len() {
            let p = if pos == 0 { 0.0 } else { 1.0 };
            return Ok((ProbabilityModel::Constant { p }, true));
        }
        Ok((ProbabilityModel::Svm(fit(samples, domain, opts)?), false))
    }
}

/// Result of one adaptive sampling run.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ManifoldModel {
    pub domain: ParameterDomain,
    pub config: AsmConfig,
    pub model: ProbabilityModel,
    /// Initial samples followed by refinement samples.
    pub samples: Vec<LabeledSample>,
    pub oracle_calls: usize,
    /// True when every label agreed and no boundary was found.
    pub degenerate: bool,
}

impl ManifoldModel {
    pub fn predict_prob(&self, rho: &[f64]) -> f64 {
        self.model.predict_prob(rho)
    }

    pub fn to_json(&self) -> Result<String> {
        serde_json::to_string_pretty(self).map_err(|e| Error::Parse(e.to_string()))
    }

    pub fn from_json(text: &str) -> Result<Self> {
        parse_json(text, "manifold model")
    }
}

/// Indices of the `n_a` pool entries with smallest |p − p_th|, ties by index,
/// in rank order.
pub fn select_boundary_candidates(probs: &[f64], p_th: f64, n_a: usize) -> Vec<usize> {
    let mut idx: Vec<usize> = (0..probs.len()).collect();
    let key = |i: usize| (probs[i] - p_th).abs();
    idx.sort_by(|&i, &j| key(i).total_cmp(&key(j)).then(i.cmp(&j)));
    idx.truncate(n_a);
    idx
}

fn label_all<O>(oracle: &O, points: Vec<Vec<f64>>) -> Result<Vec<LabeledSample>>
where
    O: Fn(&[f64]) -> Result<u8> + Sync,
{
    points
        .into_par_iter()
        .map(|rho| {
            let s = oracle(&rho)?;
            if s > 1 {
                return Err(Error::Validation(format!("oracle returned label {s}")));
            }
            Ok(LabeledSample { rho, s })
        })
        .collect()
}

/// Run the adaptive sampling method. The oracle is called exactly
/// `n_init + n_a` times.
pub fn run_asm<O>(oracle: &O, domain: &ParameterDomain, cfg: &AsmConfig) -> Result<ManifoldModel>
where
    O: Fn(&[f64]) -> u8 + Sync,
{
    try_run_asm(&|rho: &[f64]| Ok(oracle(rho)), domain, cfg)
}

/// [`run_asm`] with a fallible oracle; the first error aborts the run.
pub fn try_run_asm<O>(
    oracle: &O,
    domain: &ParameterDomain,
    cfg: &AsmConfig,
) -> Result<ManifoldModel>
where
    O: Fn(&[f64]) -> Result<u8> + Sync,
{
    domain.validate()?;
    cfg.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let init: Vec<Vec<f64>> = (0..cfg.n_init).map(|_| domain.sample(&mut rng)).collect();
    let pool: Vec<Vec<f64>> = (0..cfg.n_r).map(|_| domain.sample(&mut rng)).collect();

    let mut samples = label_all(oracle, init)?;
    let mut used = vec![false; pool.len()];
    for round in 0..cfg.rounds {
        let (model0, _) = ProbabilityModel::from_samples(&samples, domain, &cfg.svm)?;
        let probs: Vec<f64> = pool
            .par_iter()
            .enumerate()
            .map(|(i, p)| {
                if used[i] {
                    f64::INFINITY
                } else {
                    model0.predict_prob(p)
                }
            })
            .collect();
        let n = cfg.n_a / cfg.rounds + usize::from(round < cfg.n_a % cfg.rounds);
        let chosen = select_boundary_candidates(&probs, cfg.p_th, n);
        let refine: Vec<Vec<f64>> = chosen
            .iter()
            .map(|&i| {
                used[i] = true;
                pool[i].clone()
            })
            .collect();
        samples.extend(label_all(oracle, refine)?);
    }
    let (model, degenerate) = ProbabilityModel::from_samples(&samples, domain, &cfg.svm)?;
    Ok(ManifoldModel {
        domain: domain.clone(),
        config: cfg.clone(),
        model,
        oracle_calls: samples.len(),
        samples,
        degenerate,
    })
}

/// One grid node of an exported manifold.
#[derive(Clone, Debug, PartialEq)]
pub struct GridPoint {
    pub rho: Vec<f64>,
    pub probability: f64,
    pub in_rpi: bool,
}

/// Evaluate the model on a regular grid with `resolution` nodes per axis
/// (last axis varies fastest).
pub fn export_manifold(
    model: &ManifoldModel,
    resolution: usize,
    rpi_mask: Option<&(dyn Fn(&[f64]) -> bool + Sync)>,
) -> Result<Vec<GridPoint>> {
    if resolution < 2 {
        return Err(Error::Domain(format!(
            "grid resolution must be at least 2, got {resolution}"
        )));
    }
    let d = model.domain.dim();
    let total = resolution
        .checked_pow(d as u32)
        .filter(|t| *t <= 50_000_000)
        .ok_or_else(|| Error::Domain(format!("grid of {resolution}^{d} nodes is too large")))?;
    let out = (0..total)
        .into_par_iter()
        .map(|flat| {
            let mut rem = flat;
            let mut u = vec![0.0; d];
            for k in (0..d).rev() {
                u[k] = (rem % resolution) as f64 / (resolution - 1) as f64;
                rem /= resolution;
            }
            let rho = model.domain.from_unit(&u);
            let probability = model.predict_prob(&rho);
            let in_rpi = rpi_mask.map_or(true, |m| m(&rho));
            GridPoint {
                rho,
                probability,
                in_rpi,
            }
        })
        .collect();
    Ok(out)
}

/// CSV text of labeled samples.
pub fn samples_csv(domain: &ParameterDomain, samples: &[LabeledSample]) -> String {
    let mut s = domain.names.join(",");
    s.push_str(",label\n");
    for x in samples {
        for v in &x.rho {
            s.push_str(&format!("{v:.17e},"));
        }
        s.push_str(&format!("{}\n", x.s));
    }
    s
}

/// CSV text of a manifold grid.
pub fn grid_csv(domain: &ParameterDomain, grid: &[GridPoint]) -> String {
    let mut s = domain.names.join(",");
    s.push_str(",probability,in_rpi\n");
    for g in grid {
        for v in &g.rho {
            s.push_str(&format!("{v:.17e},"));
        }
        s.push_str(&format!("{:.17e},{}\n", g.probability, u8::from(g.in_rpi)));
    }
    s
}

/// Line segments of the `level` set of `f` over a 2-D box, by marching
/// squares on an `n × n` grid.
pub fn contour_segments<F>(
    f: F,
    lo: [f64; 2],
    hi: [f64; 2],
    n: usize,
    level: f64,
) -> Vec<[[f64; 2]; 2]>
where
    F: Fn(&[f64]) -> f64 + Sync,
{
    let n = n.max(2);
    let xs = linspace(lo[0], hi[0], n);
    let ys = linspace(lo[1], hi[1], n);
    let vals: Vec<f64> = (0..n * n)
        .into_par_iter()
        .map(|k| f(&[xs[k / n], ys[k % n]]))
        .collect();
    grid_contour(&xs, &ys, &vals, level)
}

/// `n` evenly spaced values from `a` to `b`.
pub fn linspace(a: f64, b: f64, n: usize) -> Vec<f64> {
    (0..n)
        .map(|i| a + (b - a) * i as f64 / (n - 1).max(1) as f64)
        .collect()
}

/// Marching-squares segments of the `level` set of grid values
/// `vals[i * ys.len() + j]` at `(xs[i], ys[j])`.
pub fn grid_contour(xs: &[f64], ys: &[f64], vals: &[f64], level: f64) -> Vec<[[f64; 2]; 2]> {
    let (nx, ny) = (xs.len(), ys.len());
    let v = |i: usize, j: usize| vals[i * ny + j] - level;
    let mut segs = Vec::new();
    for i in 0..nx.saturating_sub(1) {
        for j in 0..ny.saturating_sub(1) {
            let corners = [
                ([xs[i], ys[j]], v(i, j)),
                ([xs[i + 1], ys[j]], v(i + 1, j)),
                ([xs[i + 1], ys[j + 1]], v(i + 1, j + 1)),
                ([xs[i], ys[j + 1]], v(i, j + 1)),
            ];
            let mut pts = Vec::with_capacity(4);
            for e in 0..4 {
                let (pa, fa) = corners[e];
                let (pb, fb) = corners[(e + 1) % 4];
                if (fa < 0.0) != (fb < 0.0) {
                    let t = fa / (fa - fb);
                    pts.push([pa[0] + t * (pb[0] - pa[0]), pa[1] + t * (pb[1] - pa[1])]);
                }
            }
            match pts.len() {
                2 => segs.push([pts[0], pts[1]]),
                4 => {
                    segs.push([pts[0], pts[1]]);
                    segs.push([pts[2], pts[3]]);
                }
                _ => {}
            }
        }
    }
    segs
}

#[cfg(test)]
mod tests {
    use super::*;
    use std::sync::atomic::{AtomicUsize, Ordering};

    fn square() -> ParameterDomain {
        ParameterDomain::new(
            vec!["x".into(), "y".into()],
            vec![-2.0, -2.0],
            vec![2.0, 2.0],
        )
        .unwrap()
    }

    #[test]
    fn nearest_two_candidates() {
        let chosen = select_boundary_candidates(&[0.1, 0.79, 0.95, 0.81], 0.8, 2);
        let mut c = chosen.clone();
        c.sort();
        assert_eq!(c, vec![1, 3]);
        assert_eq!(select_boundary_candidates(&[0.5, 0.2], 0.8, 2).len(), 2);
    }

    #[test]
    fn constant_oracle_gives_degenerate_model() {
        let calls = AtomicUsize::new(0);
        let oracle = |_: &[f64]| {
            calls.fetch_add(1, Ordering::Relaxed);
            1u8
        };
        let cfg = AsmConfig {
            n_init: 20,
            n_r: 400,
            n_a: 30,
            seed: 3,
            ..Default::default()
        };
        let m = run_asm(&oracle, &square(), &cfg).unwrap();
        assert!(m.degenerate);
        assert_eq!(m.predict_prob(&[0.0, 0.0]), 1.0);
        assert_eq!(calls.load(Ordering::Relaxed), 50);
        assert_eq!(m.oracle_calls, 50);
    }

    #[test]
    fn config_validation() {
        let bad = AsmConfig {
            n_init: 100,
            n_r: 999,
            ..Default::default()
        };
        assert!(bad.validate().is_err());
        let bad = AsmConfig {
            p_th: 1.0,
            ..Default::default()
        };
        assert!(bad.validate().is_err());
        assert!(ParameterDomain::new(vec!["a".into()], vec![1.0], vec![1.0]).is_err());
    }

    #[test]
    fn grid_mask_semantics() {
        let m = ManifoldModel {
            domain: square(),
            config: AsmConfig::default(),
            model: ProbabilityModel::Constant { p: 1.0 },
            samples: vec![],
            oracle_calls: 0,
            degenerate: true,
        };
        let mask = |r: &[f64]| r[0] > 0.0;
        let g = export_manifold(&m, 5, Some(&mask)).unwrap();
        assert_eq!(g.len(), 25);
        for p in &g {
            assert_eq!(p.probability, 1.0);
            assert_eq!(p.in_rpi, p.rho[0] > 0.0);
        }
        assert!(export_manifold(&m, 1, None).is_err());
    }

    #[test]
    fn contour_of_circle() {
        let segs = contour_segments(
            |p| p[0] * p[0] + p[1] * p[1],
            [-2.0, -2.0],
            [2.0, 2.0],
            81,
            1.0,
        );
        assert!(!segs.is_empty());
        for s in segs {
            for p in s {
                assert!(((p[0] * p[0] + p[1] * p[1]).sqrt() - 1.0).abs() < 0.01);
            }
        }
    }
}
