//! Closed-form loop bandwidths and phase margins, the region of practical
//! interest, and surrogate-based tuning of initial controller gains.

use nalgebra::{DMatrix, DVector};
use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::asm::ParameterDomain;
use crate::error::{Error, Result};
use crate::linalg::C64;
use crate::netmodel::{
    canonical_gain_name, DcVariant, IbrControlParams, IbrPhysicalParams, ScenarioSet,
};
use crate::powerflow::solve_power_flow;
use crate::stability::{pssa, ParamAssignment, StabilityOptions, StudyCase};

/// Plant data of the three control loops under ideal-source, decoupled,
/// operating-point assumptions.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct LoopPlant {
    /// Filter resistance, pu.
    pub r: f64,
    /// Filter inductance, s (pu inductance over ω_b).
    pub l: f64,
    /// Base angular frequency, rad/s.
    pub omega_b: f64,
    /// PCC voltage in the PLL frame at the operating point, pu.
    pub v_d0: f64,
    /// dc-link voltage at the operating point, pu.
    pub v_dc0: f64,
    /// dc-link energy time constant, s.
    pub tau_dc: f64,
}

impl LoopPlant {
    pub fn from_ibr(
        phys: &IbrPhysicalParams,
        ctrl: &IbrControlParams,
        omega_b: f64,
        v_d0: f64,
    ) -> Self {
        Self {
            r: phys.r,
            l: phys.l / omega_b,
            omega_b,
            v_d0,
            v_dc0: ctrl.v_dc_ref,
            tau_dc: phys.tau_dc(),
        }
    }

    pub fn validate(&self) -> Result<()> {
        let vals = [
            ("l", self.l),
            ("omega_b", self.omega_b),
            ("v_d0", self.v_d0),
            ("v_dc0", self.v_dc0),
            ("tau_dc", self.tau_dc),
        ];
        for (n, v) in vals {
            if !(v > 0.0 && v.is_finite()) {
                return Err(Error::Validation(format!(
                    "loop plant {n} must be positive, got {v}"
                )));
            }
        }
        if !(self.r >= 0.0 && self.r.is_finite()) {
            return Err(Error::Validation(format!(
                "loop plant r must be >= 0, got {}",
                self.r
            )));
        }
        Ok(())
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ControlLoop {
    Current,
    Pll,
    Dc,
}

/// Open-loop frequency response L(jω) of one loop.
pub fn open_loop(kind: ControlLoop, ctrl: &IbrControlParams, plant: &LoopPlant, omega: f64) -> C64 {
    let s = C64::new(0.0, omega);
    let pi = |kp: f64, ki: f64| C64::new(kp, 0.0) + C64::new(ki, 0.0) / s;
    match kind {
        ControlLoop::Current => pi(ctrl.k_p_i, ctrl.k_i_i) / (s * plant.l + plant.r),
        ControlLoop::Pll => pi(ctrl.k_p_pll, ctrl.k_i_pll) * (plant.omega_b * plant.v_d0) / s,
        ControlLoop::Dc => {
            let (kp, ki) = ctrl.dc_gains();
            match ctrl.dc_variant {
                DcVariant::Vdc => pi(kp, ki) / (s * (plant.v_dc0 * plant.tau_dc)),
                DcVariant::Vdc2 => pi(kp, ki) * 2.0 / (s * plant.tau_dc),
            }
        }
    }
}

/// Crossover scan range, rad/s.
pub const OMEGA_RANGE: (f64, f64) = (1e-2, 1e6);
const SCAN_POINTS: usize = 4001;

/// Largest unity-gain crossover of `l` in [`OMEGA_RANGE`], or `None`.
pub fn crossover<F: Fn(f64) -> C64>(l: F) -> Option<f64> {
    let g = |lw: f64| l(lw.exp()).norm().ln();
    let (a, b) = (OMEGA_RANGE.0.ln(), OMEGA_RANGE.1.ln());
    let grid: Vec<f64> = (0..SCAN_POINTS)
        .map(|k| a + (b - a) * k as f64 / (SCAN_POINTS - 1) as f64)
        .collect();
    let vals: Vec<f64> = grid.iter().map(|&x| g(x)).collect();
    let mut found = None;
    for k in (0..SCAN_POINTS - 1).rev() {
        let (u, v) = (vals[k], vals[k + 1]);
        if !(u.is_finite() && v.is_finite()) {
            continue;
        }
        if v == 0.0 {
            return Some(grid[k + 1].exp());
        }
        if (u >= 0.0) != (v >= 0.0) {
            found = Some(k);
            break;
        }
    }
    let k = found?;
    let (mut lo, mut hi) = (grid[k], grid[k + 1]);
    let up = vals[k] >= 0.0;
    for _ in 0..200 {
        let mid = 0.5 * (lo + hi);
        if mid <= lo || mid >= hi {
            break;
        }
        if (g(mid) >= 0.0) == up {
            lo = mid;
        } else {
            hi = mid;
        }
    }
    let (glo, ghi) = (g(lo).abs(), g(hi).abs());
    Some(if glo <= ghi { lo.exp() } else { hi.exp() })
}

/// Phase margin 180° + ∠L in degrees, wrapped to (−180°, 180°].
pub fn phase_margin(l: C64) -> f64 {
    let mut pm = 180.0 + l.im.atan2(l.re).to_degrees();
    if pm > 180.0 {
        pm -= 360.0;
    }
    pm
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct LoopMetric {
    /// Crossover frequency, rad/s; `None` when |L| never crosses 1.
    pub omega_c: Option<f64>,
    /// Phase margin, degrees.
    pub phase_margin: Option<f64>,
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct LoopMetrics {
    pub current: LoopMetric,
    pub pll: LoopMetric,
    pub dc: LoopMetric,
}

fn loop_metric(kind: ControlLoop, ctrl: &IbrControlParams, plant: &LoopPlant) -> LoopMetric {
    match crossover(|w| open_loop(kind, ctrl, plant, w)) {
        Some(w) => LoopMetric {
            omega_c: Some(w),
            phase_margin: Some(phase_margin(open_loop(kind, ctrl, plant, w))),
        },
        None => LoopMetric {
            omega_c: None,
            phase_margin: None,
        },
    }
}

/// Crossover frequencies and phase margins of the current, PLL and dc loops.
pub fn bw_pm(ctrl: &IbrControlParams, plant: &LoopPlant) -> LoopMetrics {
    LoopMetrics {
        current: loop_metric(ControlLoop::Current, ctrl, plant),
        pll: loop_metric(ControlLoop::Pll, ctrl, plant),
        dc: loop_metric(ControlLoop::Dc, ctrl, plant),
    }
}

/// Minimum phase margin of the region of practical interest, degrees.
pub const MIN_PHASE_MARGIN: f64 = 45.0;

/// Outcome of the three practical conditions.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct RpiConditions {
    /// ω_c^i ≥ 10 ω_c^pll.
    pub c1: bool,
    /// ω_c^dc ≤ 2 ω_nom.
    pub c2: bool,
    /// Every phase margin above 45°.
    pub c3: bool,
}

impl RpiConditions {
    pub fn all(&self) -> bool {
        self.c1 && self.c2 && self.c3
    }
}

pub fn rpi_conditions(m: &LoopMetrics, omega_nom: f64) -> RpiConditions {
    let c1 = matches!((m.current.omega_c, m.pll.omega_c), (Some(i), Some(p)) if i >= 10.0 * p);
    let c2 = matches!(m.dc.omega_c, Some(d) if d <= 2.0 * omega_nom);
    let c3 = [m.current, m.pll, m.dc]
        .iter()
        .all(|l| matches!(l.phase_margin, Some(pm) if pm > MIN_PHASE_MARGIN));
    RpiConditions { c1, c2, c3 }
}

/// Control parameters with `rho` written over `base`.
pub fn with_gains(base: &IbrControlParams, rho: &ParamAssignment) -> Result<IbrControlParams> {
    let mut c = base.clone();
    for (k, v) in rho {
        c.set(k, *v)?;
    }
    Ok(c)
}

/// Membership test of the region of practical interest over a parameter
/// pair, other gains taken from `base`.
pub fn rpi_member(
    base: &IbrControlParams,
    plant: &LoopPlant,
    names: &[String],
    rho: &[f64],
) -> Result<bool> {
    let mut c = base.clone();
    for (n, v) in names.iter().zip(rho) {
        c.set(n, *v)?;
    }
    Ok(rpi_conditions(&bw_pm(&c, plant), plant.omega_b).all())
}

/// RPI flags on a `resolution × resolution` grid over a 2-D domain (second
/// axis fastest).
pub fn rpi_region(
    base: &IbrControlParams,
    plant: &LoopPlant,
    domain: &ParameterDomain,
    resolution: usize,
) -> Result<Vec<(Vec<f64>, bool)>> {
    domain.validate()?;
    plant.validate()?;
    if domain.dim() != 2 {
        return Err(Error::Domain(format!(
            "RPI grid needs a 2-D domain, got {}",
            domain.dim()
        )));
    }
    if resolution < 2 {
        return Err(Error::Domain(format!(
            "grid resolution must be at least 2, got {resolution}"
        )));
    }
    for n in &domain.names {
        base.clone().set(n, 0.0)?;
    }
    (0..resolution * resolution)
        .into_par_iter()
        .map(|k| {
            let u = [
                (k / resolution) as f64 / (resolution - 1) as f64,
                (k % resolution) as f64 / (resolution - 1) as f64,
            ];
            let rho = domain.from_unit(&u);
            let inside = rpi_member(base, plant, &domain.names, &rho)?;
            Ok((rho, inside))
        })
        .collect()
}

/// Gain bounds of the reference tuning table for one dc variant.
pub fn default_domain(variant: DcVariant) -> ParameterDomain {
    let (dc_names, dc_hi) = match variant {
        DcVariant::Vdc => (["kp_dc", "ki_dc"], [3.0, 300.0]),
        DcVariant::Vdc2 => (["kp_2dc", "ki_2dc"], [1.5, 300.0]),
    };
    let names = ["kp_pll", "ki_pll", "kp_i", "ki_i", dc_names[0], dc_names[1]];
    ParameterDomain {
        names: names.iter().map(|s| s.to_string()).collect(),
        lo: vec![0.0; 6],
        hi: vec![0.35, 17.0, 4.0, 860.0, dc_hi[0], dc_hi[1]],
    }
}

// Surrogate optimization

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SurrogateOptions {
    pub budget: usize,
    pub seed: u64,
    /// Points evaluated in parallel per iteration.
    pub batch: usize,
}

impl Default for SurrogateOptions {
    fn default() -> Self {
        Self {
            budget: 500,
            seed: 0,
            batch: 4,
        }
    }
}

/// One true evaluation: objective and constraints (≤ 0 feasible).
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Evaluation {
    pub x: Vec<f64>,
    pub objective: f64,
    pub constraints: Vec<f64>,
}

impl Evaluation {
    pub fn feasible(&self) -> bool {
        self.objective.is_finite() && self.constraints.iter().all(|g| *g <= 0.0)
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SurrogateResult {
    pub best: Evaluation,
    pub feasible: bool,
    pub evaluations: usize,
    pub history: Vec<Evaluation>,
}

const WEIGHTS: [f64; 4] = [0.3, 0.5, 0.8, 0.95];
const PENALTY: f64 = 10.0;
const SIGMA_INIT: f64 = 0.2;
const SIGMA_MIN: f64 = 0.2 / 64.0;

/// Latin-hypercube design of `n` points in the unit cube.
pub fn latin_hypercube<R: Rng>(n: usize, d: usize, rng: &mut R) -> Vec<Vec<f64>> {
    let mut pts = vec![vec![0.0; d]; n];
    for k in 0..d {
        let mut perm: Vec<usize> = (0..n).collect();
        perm.shuffle(rng);
        for (i, p) in perm.into_iter().enumerate() {
            pts[i][k] = (p as f64 + rng.random::<f64>()) / n as f64;
        }
    }
    pts
}

/// Cubic radial-basis interpolant with a linear tail.
pub struct CubicRbf {
    centers: Vec<Vec<f64>>,
    lambda: Vec<f64>,
    tail: Vec<f64>,
}

impl CubicRbf {
    pub fn fit(centers: &[Vec<f64>], values: &[f64]) -> Result<Self> {
        let n = centers.len();
        let d = centers.first().map_or(0, |c| c.len());
        let m = n + d + 1;
        let mut a = DMatrix::<f64>::zeros(m, m);
        for i in 0..n {
            for j in 0..n {
                a[(i, j)] = dist(&centers[i], &centers[j]).powi(3);
            }
            a[(i, n)] = 1.0;
            a[(n, i)] = 1.0;
            for k in 0..d {
                a[(i, n + 1 + k)] = centers[i][k];
                a[(n + 1 + k, i)] = centers[i][k];
            }
        }
        let mut rhs = DVector::<f64>::zeros(m);
        for i in 0..n {
            rhs[i] = values[i];
        }
        let mut reg = 0.0;
        for _ in 0..6 {
            let mut ar = a.clone();
            for i in 0..n {
                ar[(i, i)] += reg;
            }
            if let Some(sol) = ar.lu().solve(&rhs) {
                if sol.iter().all(|v| v.is_finite()) {
                    return Ok(Self {
                        centers: centers.to_vec(),
                        lambda: sol.rows(0, n).iter().cloned().collect(),
                        tail: sol.rows(n, d + 1).iter().cloned().collect(),
                    });
                }
            }
            reg = if reg == 0.0 { 1e-10 } else { reg * 100.0 };
        }
        Err(Error::Singular("radial-basis surrogate system".into()))
    }

    pub fn eval(&self, x: &[f64]) -> f64 {
        let mut s = self.tail[0];
        for (k, v) in x.iter().enumerate() {
            s += self.tail[k + 1] * v;
        }
        for (c, l) in self.centers.iter().zip(&self.lambda) {
            s += l * dist(c, x).powi(3);
        }
        s
    }
}

fn dist(a: &[f64], b: &[f64]) -> f64 {
    a.iter()
        .zip(b)
        .map(|(x, y)| (x - y) * (x - y))
        .sum::<f64>()
        .sqrt()
}

/// Normalized objective plus penalized, per-constraint normalized violation.
fn merits(hist: &[Evaluation]) -> Vec<f64> {
    let finite: Vec<f64> = hist
        .iter()
        .map(|e| e.objective)
        .filter(|v| v.is_finite())
        .collect();
    let fmin = finite.iter().cloned().fold(f64::INFINITY, f64::min);
    let fmax = finite.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let range = if fmax > fmin { fmax - fmin } else { 1.0 };
    let nc = hist.first().map_or(0, |e| e.constraints.len());
    let scale: Vec<f64> = (0..nc)
        .map(|k| {
            let s = hist
                .iter()
                .map(|e| e.constraints[k])
                .filter(|v| v.is_finite())
                .fold(0.0, |a: f64, v| a.max(v.abs()));
            if s > 0.0 {
                s
            } else {
                1.0
            }
        })
        .collect();
    hist.iter()
        .map(|e| {
            let f = if e.objective.is_finite() {
                (e.objective - fmin) / range
            } else {
                1.0
            };
            f + PENALTY * violation(e, &scale)
        })
        .collect()
}

fn violation(e: &Evaluation, scale: &[f64]) -> f64 {
    e.constraints
        .iter()
        .zip(scale)
        .map(|(g, s)| if g.is_finite() { g.max(0.0) / s } else { 1.0 })
        .sum()
}

fn median(v: &[f64]) -> f64 {
    let mut s = v.to_vec();
    s.sort_by(f64::total_cmp);
    s[s.len() / 2]
}

/// Index of the best evaluation: lowest feasible objective, else lowest
/// normalized violation; ties to the earliest.
fn best_index(hist: &[Evaluation]) -> (usize, bool) {
    let mut best: Option<usize> = None;
    for (i, e) in hist.iter().enumerate() {
        if e.feasible() && best.map_or(true, |b| e.objective < hist[b].objective) {
            best = Some(i);
        }
    }
    if let Some(b) = best {
        return (b, true);
    }
    let nc = hist[0].constraints.len();
    let scale: Vec<f64> = (0..nc)
        .map(|k| {
            let s = hist
                .iter()
                .map(|e| e.constraints[k])
                .filter(|v| v.is_finite())
                .fold(0.0, |a: f64, v| a.max(v.abs()));
            if s > 0.0 {
                s
            } else {
                1.0
            }
        })
        .collect();
    let mut b = 0;
    let mut bv = f64::INFINITY;
    for (i, e) in hist.iter().enumerate() {
        let v = violation(e, &scale) + if e.objective.is_finite() { 0.0 } else { 1.0 };
        if v < bv {
            bv = v;
            b = i;
        }
    }
    (b, false)
}

/// Derivative-free constrained minimization over a box with a cubic RBF
/// surrogate of a penalized merit and weighted candidate scoring.
pub fn surrogate_optimize<F>(
    f: F,
    domain: &ParameterDomain,
    opts: &SurrogateOptions,
) -> Result<SurrogateResult>
where
    F: Fn(&[f64]) -> Result<(f64, Vec<f64>)> + Sync,
{
    domain.validate()?;
    let d = domain.dim();
    let n0 = 2 * (d + 1);
    if opts.budget < n0 {
        return Err(Error::Domain(format!(
            "budget {} is below the initial design size {n0}",
            opts.budget
        )));
    }
    let batch = opts.batch.max(1);
    let mut rng = ChaCha8Rng::seed_from_u64(opts.seed);
    let evaluate = |pts: Vec<Vec<f64>>| -> Result<Vec<Evaluation>> {
        pts.into_par_iter()
            .map(|u| {
                let x = domain.from_unit(&u);
                let (objective, constraints) = f(&x)?;
                Ok(Evaluation {
                    x,
                    objective,
                    constraints,
                })
            })
            .collect()
    };

    let mut units = latin_hypercube(n0, d, &mut rng);
    let mut hist = evaluate(units.clone())?;
    let nc = hist[0].constraints.len();
    if hist.iter().any(|e| e.constraints.len() != nc) {
        return Err(Error::Validation(
            "constraint vector length changed between evaluations".into(),
        ));
    }

    let n_cand = (100 * d).clamp(200, 2000);
    let n_local = n_cand * 3 / 4;
    let normal = Normal::new(0.0, 1.0).expect("unit normal");
    let mut sigma = SIGMA_INIT;
    let (mut succ, mut fail) = (0usize, 0usize);
    let fail_tol = ((d.max(5) + batch - 1) / batch).max(2);
    let mut cycle = 0usize;

    while hist.len() < opts.budget {
        let merit = merits(&hist);
        let cap = median(&merit);
        let fit_vals: Vec<f64> = merit.iter().map(|&m| m.min(cap)).collect();
        let rbf = CubicRbf::fit(&units, &fit_vals)?;
        let inc = (0..merit.len())
            .min_by(|&a, &b| merit[a].total_cmp(&merit[b]).then(a.cmp(&b)))
            .unwrap_or(0);
        let (prev_best, prev_feasible) = best_index(&hist);
        let prev_obj = hist[prev_best].objective;

        let done = (hist.len() - n0) as f64;
        let span = ((opts.budget - n0) as f64).max(2.0);
        let p_sel = ((20.0 / d as f64).min(1.0) * (1.0 - (done + 1.0).ln() / span.ln()))
            .max(1.0 / d as f64);
        let mut cands: Vec<Vec<f64>> = Vec::with_capacity(n_cand);
        for _ in 0..n_local {
            let mut c = units[inc].clone();
            let mut any = false;
            for k in 0..d {
                if rng.random::<f64>() < p_sel {
                    c[k] += sigma * normal.sample(&mut rng);
                    any = true;
                }
            }
            if !any {
                let k = rng.random_range(0..d);
                c[k] += sigma * normal.sample(&mut rng);
            }
            for v in c.iter_mut() {
                if *v < 0.0 {
                    *v = -*v;
                }
                if *v > 1.0 {
                    *v = 2.0 - *v;
                }
                *v = v.clamp(0.0, 1.0);
            }
            cands.push(c);
        }
        for _ in n_local..n_cand {
            cands.push((0..d).map(|_| rng.random::<f64>()).collect());
        }
        let sval: Vec<f64> = cands.iter().map(|c| rbf.eval(c)).collect();
        let mut dmin: Vec<f64> = cands
            .iter()
            .map(|c| {
                units
                    .iter()
                    .map(|u| dist(c, u))
                    .fold(f64::INFINITY, f64::min)
            })
            .collect();

        let take = batch.min(opts.budget - hist.len());
        let mut chosen: Vec<Vec<f64>> = Vec::with_capacity(take);
        for _ in 0..take {
            let w = WEIGHTS[cycle % WEIGHTS.len()];
            cycle += 1;
            let (smin, smax) = sval
                .iter()
                .fold((f64::INFINITY, f64::NEG_INFINITY), |(a, b), &v| {
                    (a.min(v), b.max(v))
                });
            let (dlo, dhi) = dmin
                .iter()
                .fold((f64::INFINITY, f64::NEG_INFINITY), |(a, b), &v| {
                    (a.min(v), b.max(v))
                });
            let mut pick = None;
            let mut best_score = f64::INFINITY;
            for i in 0..cands.len() {
                if dmin[i] <= 1e-9 {
                    continue;
                }
                let vs = if smax > smin {
                    (sval[i] - smin) / (smax - smin)
                } else {
                    1.0
                };
                let vd = if dhi > dlo {
                    (dhi - dmin[i]) / (dhi - dlo)
                } else {
                    1.0
                };
                let score = w * vs + (1.0 - w) * vd;
                if score < best_score {
                    best_score = score;
                    pick = Some(i);
                }
            }
            let c = match pick {
                Some(i) => cands[i].clone(),
                None => (0..d).map(|_| rng.random::<f64>()).collect(),
            };
            for (i, cd) in cands.iter().enumerate() {
                dmin[i] = dmin[i].min(dist(cd, &c));
            }
            chosen.push(c);
        }
        let new = evaluate(chosen.clone())?;
        units.extend(chosen);
        hist.extend(new);

        let (nb, nfeas) = best_index(&hist);
        let improved = if nfeas && !prev_feasible {
            true
        } else if nfeas {
            hist[nb].objective < prev_obj - 1e-3 * prev_obj.abs().max(1e-12)
        } else {
            nb != prev_best
        };
        if improved {
            succ += 1;
            fail = 0;
        } else {
            fail += 1;
            succ = 0;
        }
        if succ >= 3 {
            sigma = (2.0 * sigma).min(SIGMA_INIT);
            succ = 0;
        }
        if fail >= fail_tol {
            sigma *= 0.5;
            fail = 0;
            if sigma < SIGMA_MIN {
                sigma = SIGMA_INIT;
            }
        }
    }
    let (b, feasible) = best_index(&hist);
    Ok(SurrogateResult {
        best: hist[b].clone(),
        feasible,
        evaluations: hist.len(),
        history: hist,
    })
}

// Tuning problem

/// Gain tuning over connection combinations and scenarios.
#[derive(Clone, Debug)]
pub struct TunerProblem {
    pub domain: ParameterDomain,
    /// Gains held fixed; the rest of the IBR control comes from `base`.
    pub fixed: ParamAssignment,
    pub base: IbrControlParams,
    pub plant: LoopPlant,
    pub cases: Vec<StudyCase>,
    pub scenarios: ScenarioSet,
    /// Required damping, 1/s.
    pub eps: f64,
    pub stability: StabilityOptions,
}

impl TunerProblem {
    pub fn validate(&self) -> Result<()> {
        self.domain.validate()?;
        self.plant.validate()?;
        if !(self.eps > 0.0 && self.eps.is_finite()) {
            return Err(Error::Validation(format!(
                "eps must be positive, got {}",
                self.eps
            )));
        }
        if self.cases.is_empty() {
            return Err(Error::Validation("no connection combination given".into()));
        }
        if self.scenarios.is_empty() {
            return Err(Error::Validation("scenario set is empty".into()));
        }
        let mut probe = self.base.clone();
        for n in self.domain.names.iter().chain(self.fixed.keys()) {
            canonical_gain_name(n)?;
            probe.set(n, 0.0)?;
        }
        Ok(())
    }

    /// Full gain assignment at a domain point.
    pub fn assignment(&self, x: &[f64]) -> Result<ParamAssignment> {
        let mut rho = self.fixed.clone();
        for (n, v) in self.domain.names.iter().zip(x) {
            rho.insert(canonical_gain_name(n)?.to_string(), *v);
        }
        Ok(rho)
    }
}

/// Constraint values recomputed exactly at a point.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ConstraintReport {
    pub alpha_max: f64,
    pub eps: f64,
    /// α_max ≤ −ε.
    pub damping: bool,
    pub conditions: RpiConditions,
    pub in_bounds: bool,
}

impl ConstraintReport {
    pub fn feasible(&self) -> bool {
        self.damping && self.conditions.all() && self.in_bounds
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TunerResult {
    pub rho: ParamAssignment,
    pub alpha_max: f64,
    pub metrics: LoopMetrics,
    pub report: ConstraintReport,
    pub evaluations: usize,
    pub feasible: bool,
    /// Every true evaluation in order.
    #[serde(skip)]
    pub history: Vec<Evaluation>,
}

/// Objective α_max, loop metrics and constraint report at a domain point.
pub fn evaluate_point(
    problem: &TunerProblem,
    x: &[f64],
) -> Result<(f64, LoopMetrics, ConstraintReport)> {
    let rho = problem.assignment(x)?;
    let ctrl = with_gains(&problem.base, &rho)?;
    let metrics = bw_pm(&ctrl, &problem.plant);
    let alpha = pssa(&rho, &problem.cases, &problem.scenarios, &problem.stability)?;
    let report = ConstraintReport {
        alpha_max: alpha,
        eps: problem.eps,
        damping: alpha <= -problem.eps,
        conditions: rpi_conditions(&metrics, problem.plant.omega_b),
        in_bounds: problem.domain.contains(x),
    };
    Ok((alpha, metrics, report))
}

/// Constraint vector (≤ 0 feasible) matching [`ConstraintReport::feasible`].
pub fn constraint_vector(alpha: f64, m: &LoopMetrics, eps: f64, omega_nom: f64) -> Vec<f64> {
    let c1 = match (m.current.omega_c, m.pll.omega_c) {
        (Some(i), Some(p)) => (10.0 * p / i).ln(),
        _ => 1.0,
    };
    let c2 = match m.dc.omega_c {
        Some(d) => (d / (2.0 * omega_nom)).ln(),
        None => 1.0,
    };
    let pm = |l: &LoopMetric| match l.phase_margin {
        Some(p) if p > MIN_PHASE_MARGIN => (MIN_PHASE_MARGIN - p) / MIN_PHASE_MARGIN,
        Some(p) => (MIN_PHASE_MARGIN - p) / MIN_PHASE_MARGIN + 1e-9,
        None => 1.0,
    };
    vec![alpha + eps, c1, c2, pm(&m.current), pm(&m.pll), pm(&m.dc)]
}

/// Minimize α_max subject to the damping bound and the practical conditions.
pub fn tune(problem: &TunerProblem, opts: &SurrogateOptions) -> Result<TunerResult> {
    problem.validate()?;
    let objective = |x: &[f64]| -> Result<(f64, Vec<f64>)> {
        let (alpha, metrics, _) = evaluate_point(problem, x)?;
        Ok((
            alpha,
            constraint_vector(alpha, &metrics, problem.eps, problem.plant.omega_b),
        ))
    };
    let res = surrogate_optimize(objective, &problem.domain, opts)?;
    let (alpha, metrics, report) = evaluate_point(problem, &res.best.x)?;
    Ok(TunerResult {
        rho: problem.assignment(&res.best.x)?,
        alpha_max: alpha,
        metrics,
        feasible: report.feasible(),
        report,
        evaluations: res.evaluations,
        history: res.history,
    })
}

/// CSV text of an evaluation history: domain point, objective, constraints.
pub fn history_csv(domain: &ParameterDomain, history: &[Evaluation]) -> String {
    let mut s = domain.names.join(",");
    s.push_str(",objective,g_damping,g_c1,g_c2,g_pm_i,g_pm_pll,g_pm_dc\n");
    for e in history {
        let row: Vec<String> =
            e.x.iter()
                .chain(std::iter::once(&e.objective))
                .chain(e.constraints.iter())
                .map(|v| format!("{v:.17e}"))
                .collect();
        s.push_str(&row.join(","));
        s.push('\n');
    }
    s
}

/// Operating-point PCC voltage magnitude of an IBR in the first scenario.
pub fn operating_voltage(case: &StudyCase, scenarios: &ScenarioSet, device: &str) -> Result<f64> {
    let sc = scenarios
        .scenarios
        .first()
        .ok_or_else(|| Error::Validation("scenario set is empty".into()))?;
    let dev = case
        .net
        .device(device)
        .ok_or_else(|| Error::Validation(format!("device {device} does not exist")))?;
    let pf = solve_power_flow(&case.net, sc)?;
    let k = pf
        .bus_ids
        .iter()
        .position(|b| *b == dev.bus)
        .ok_or_else(|| {
            Error::Validation(format!("bus {} of {device} is out of service", dev.bus))
        })?;
    Ok(pf.solution.vm[k])
}
