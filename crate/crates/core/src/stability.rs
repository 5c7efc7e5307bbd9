//! Eigen-analysis of assembled systems, the multi-scenario stability
//! oracle and the worst-case spectral abscissa over connection cases.

use std::collections::BTreeMap;

use nalgebra::{DMatrix, DVector};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::assembler::{linearize_operating_point, AssembledSystem};
use crate::error::{Error, Result};
use crate::linalg::{EigenDecomposition, C64};
use crate::netmodel::{
    apply_scenario, canonical_gain_name, thevenin_case, DeviceKind, IbrSpec, NetworkModel,
    Scenario, ScenarioSet,
};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct StabilityOptions {
    /// Relative magnitude below which an eigenvalue is a zero-mode candidate.
    pub zero_tol: f64,
    /// Stability requires every abscissa strictly below `-stab_margin`.
    pub stab_margin: f64,
}

impl Default for StabilityOptions {
    fn default() -> Self {
        Self {
            zero_tol: 1e-8,
            stab_margin: 0.0,
        }
    }
}

/// Eigenvalues with zero-mode bookkeeping.
#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct Spectrum {
    pub eigenvalues: Vec<C64>,
    /// `|re|` and `|im|` below `zero_tol * max(1, ||A||_F)`.
    pub near_zero: Vec<bool>,
    /// Index of the zero mode attributed to the free choice of the angle
    /// reference. It is excluded from the abscissa.
    pub reference_mode: Option<usize>,
    /// Real parts within this distance of zero count as zero.
    pub re_tol: f64,
}

impl Spectrum {
    /// Largest real part over the retained eigenvalues, `-inf` when empty.
    /// Round-off-sized real parts, such as those of an imaginary pair, give 0.
    pub fn abscissa(&self) -> f64 {
        match self.worst() {
            Some(l) if l.re.abs() <= self.re_tol => 0.0,
            Some(l) => l.re,
            None => f64::NEG_INFINITY,
        }
    }

    /// Retained eigenvalue with the largest real part (ties: largest |im|).
    pub fn worst(&self) -> Option<C64> {
        self.eigenvalues
            .iter()
            .enumerate()
            .filter(|(k, _)| Some(*k) != self.reference_mode)
            .map(|(_, l)| *l)
            .fold(None, |acc: Option<C64>, l| match acc {
                Some(a) if a.re > l.re || (a.re == l.re && a.im.abs() >= l.im.abs()) => Some(a),
                _ => Some(l),
            })
    }
}

fn zero_threshold(a: &DMatrix<f64>, zero_tol: f64) -> f64 {
    zero_tol * a.norm().max(1.0)
}

/// Full spectrum of `a`. Near-zero eigenvalues are marked; none is excluded.
pub fn eigenvalues(a: &DMatrix<f64>, zero_tol: f64) -> Result<Spectrum> {
    let e = EigenDecomposition::new(a)?;
    let tol = zero_threshold(a, zero_tol);
    let values = e.values().to_vec();
    let near_zero = values
        .iter()
        .map(|l| l.re.abs() < tol && l.im.abs() < tol)
        .collect();
    Ok(Spectrum {
        eigenvalues: values,
        near_zero,
        reference_mode: None,
        re_tol: tol,
    })
}

/// Spectrum of an assembled system. When the global frame is free, at most
/// one near-zero eigenvalue whose eigenvector is aligned with the frame
/// rotation is excluded.
pub fn system_spectrum(sys: &AssembledSystem, zero_tol: f64) -> Result<Spectrum> {
    let e = EigenDecomposition::new(&sys.a)?;
    let tol = zero_threshold(&sys.a, zero_tol);
    let values = e.values().to_vec();
    let near_zero: Vec<bool> = values
        .iter()
        .map(|l| l.re.abs() < tol && l.im.abs() < tol)
        .collect();
    let mut reference_mode = None;
    if let Some(z) = &sys.rotation {
        let mut best = 0.9;
        for k in (0..values.len()).filter(|&k| near_zero[k]) {
            let c = alignment(&e.vector(k), z);
            if c > best {
                best = c;
                reference_mode = Some(k);
            }
        }
    }
    Ok(Spectrum {
        eigenvalues: values,
        near_zero,
        reference_mode,
        re_tol: tol,
    })
}

/// `|v^H z| / (|v| |z|)`.
pub fn alignment(v: &DVector<C64>, z: &DVector<f64>) -> f64 {
    let zn = z.norm();
    let vn = v.norm();
    if zn == 0.0 || vn == 0.0 {
        return 0.0;
    }
    let dot: C64 = v.iter().zip(z.iter()).map(|(a, b)| a.conj() * *b).sum();
    dot.norm() / (vn * zn)
}

/// Participation factors `|v_ik w_ki|` normalized per mode, from the full
/// right-eigenvector matrix and its inverse.
pub fn participation(a: &DMatrix<f64>) -> Result<(Vec<C64>, DMatrix<f64>)> {
    let e = EigenDecomposition::new(a)?;
    let n = e.order();
    let mut v = DMatrix::<C64>::zeros(n, n);
    for k in 0..n {
        v.set_column(k, &e.vector(k));
    }
    let w = v
        .clone()
        .try_inverse()
        .ok_or_else(|| Error::Singular("right eigenvector matrix".into()))?;
    let mut p = DMatrix::zeros(n, n);
    for k in 0..n {
        let mut total = 0.0;
        for i in 0..n {
            p[(i, k)] = (v[(i, k)] * w[(k, i)]).norm();
            total += p[(i, k)];
        }
        if total > 0.0 {
            for i in 0..n {
                p[(i, k)] /= total;
            }
        }
    }
    Ok((e.values().to_vec(), p))
}

/// Controller gains by canonical name.
pub type ParamAssignment = BTreeMap<String, f64>;

/// Parse `name=value,name=value`. Names are canonicalized.
pub fn parse_assignment(text: &str) -> Result<ParamAssignment> {
    let mut out = ParamAssignment::new();
    for item in text.split(',').map(str::trim).filter(|s| !s.is_empty()) {
        let (k, v) = item
            .split_once('=')
            .ok_or_else(|| Error::Parse(format!("expected name=value, got {item:?}")))?;
        let name = canonical_gain_name(k.trim())?;
        let v: f64 = v.trim().parse().map_err(|_| {
            Error::Parse(format!("{name}: cannot parse {:?} as a number", v.trim()))
        })?;
        out.insert(name.to_string(), v);
    }
    Ok(out)
}

/// Write `rho` into the control parameters of the focus IBRs, or of every
/// IBR when `focus` is empty.
pub fn apply_params(
    net: &NetworkModel,
    rho: &ParamAssignment,
    focus: &[String],
) -> Result<NetworkModel> {
    let mut out = net.clone();
    for f in focus {
        let d = net
            .device(f)
            .ok_or_else(|| Error::Validation(format!("focus device {f} does not exist")))?;
        if d.kind != DeviceKind::Ibr {
            return Err(Error::Validation(format!("focus device {f} is not an IBR")));
        }
    }
    for d in out.devices.iter_mut() {
        if d.kind != DeviceKind::Ibr || !(focus.is_empty() || focus.contains(&d.id)) {
            continue;
        }
        let spec = d
            .ibr
            .as_mut()
            .ok_or_else(|| Error::Validation(format!("device {}: missing ibr block", d.id)))?;
        for (k, v) in rho {
            spec.control.set(k, *v)?;
        }
        spec.control.validate(&d.id)?;
    }
    Ok(out)
}

/// A set of synchronous generators replaced by aggregated IBRs.
#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct Combination {
    pub name: String,
    pub replace: Vec<String>,
}

/// Replace each listed SG by an IBR of the same id and rating built from
/// `template`, with `N = round(rating / template s_base)` units.
pub fn replace_with_ibr(
    net: &NetworkModel,
    ids: &[String],
    template: &IbrSpec,
) -> Result<NetworkModel> {
    let mut out = net.clone();
    for id in ids {
        let d = out
            .device_mut(id)
            .ok_or_else(|| Error::Validation(format!("replacement target {id} does not exist")))?;
        if d.kind != DeviceKind::Sg {
            return Err(Error::Validation(format!(
                "replacement target {id} is not an SG"
            )));
        }
        let n = (d.rating / template.physical.s_base).round().max(1.0) as u32;
        d.kind = DeviceKind::Ibr;
        d.sg_params = None;
        d.ibr = Some(IbrSpec {
            n,
            ..template.clone()
        });
    }
    Ok(out)
}

/// One network configuration analysed by the oracle.
#[derive(Clone, Debug, PartialEq)]
pub struct StudyCase {
    pub name: String,
    pub net: NetworkModel,
    /// IBRs whose gains are overwritten by the parameter point; empty
    /// means every IBR.
    pub focus: Vec<String>,
    /// Analyse the Thévenin equivalent seen from this bus instead of the
    /// full network.
    pub thevenin_bus: Option<String>,
}

impl StudyCase {
    pub fn full(name: impl Into<String>, net: NetworkModel) -> Self {
        Self {
            name: name.into(),
            net,
            focus: vec![],
            thevenin_bus: None,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct ScenarioOutcome {
    pub scenario: String,
    /// `+inf` when no equilibrium was found.
    pub abscissa: f64,
    pub worst: Option<C64>,
    pub reason: Option<String>,
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct StabilityVerdict {
    pub stable: bool,
    pub outcomes: Vec<ScenarioOutcome>,
    /// One-based positions of the failing scenarios.
    pub failing: Vec<usize>,
}

impl StabilityVerdict {
    pub fn label(&self) -> u8 {
        u8::from(self.stable)
    }
}

/// Stability decision from per-scenario abscissae (strict inequality).
pub fn verdict_from_outcomes(outcomes: Vec<ScenarioOutcome>, stab_margin: f64) -> StabilityVerdict {
    let failing: Vec<usize> = outcomes
        .iter()
        .enumerate()
        .filter(|(_, o)| !(o.abscissa < -stab_margin))
        .map(|(k, _)| k + 1)
        .collect();
    StabilityVerdict {
        stable: failing.is_empty(),
        outcomes,
        failing,
    }
}

/// Stability decision for state matrices given directly, one per scenario.
pub fn matrices_verdict(
    mats: &[DMatrix<f64>],
    opts: &StabilityOptions,
) -> Result<StabilityVerdict> {
    let outcomes = mats
        .iter()
        .enumerate()
        .map(|(k, a)| {
            let s = eigenvalues(a, opts.zero_tol)?;
            Ok(ScenarioOutcome {
                scenario: format!("#{}", k + 1),
                abscissa: s.abscissa(),
                worst: s.worst(),
                reason: None,
            })
        })
        .collect::<Result<Vec<_>>>()?;
    Ok(verdict_from_outcomes(outcomes, opts.stab_margin))
}

fn counts_as_unstable(e: &Error) -> bool {
    matches!(
        e,
        Error::PowerFlowDiverged { .. }
            | Error::Singular(_)
            | Error::Equilibrium { .. }
            | Error::NonFinite(_)
            | Error::EigenSolver
    )
}

/// Linearized system of one case in one scenario with `rho` applied.
pub fn case_system(
    case: &StudyCase,
    rho: &ParamAssignment,
    scenario: &Scenario,
) -> Result<AssembledSystem> {
    let net = apply_params(&case.net, rho, &case.focus)?;
    let op = match &case.thevenin_bus {
        Some(bus) => {
            let (reduced, sc) = thevenin_case(&net, bus, scenario)?;
            apply_scenario(&reduced, &sc)?
        }
        None => apply_scenario(&net, scenario)?,
    };
    Ok(linearize_operating_point(&op)?.0)
}

/// Abscissa of one case in one scenario. Numerical failures to reach an
/// equilibrium give `+inf` with the reason.
pub fn scenario_outcome(
    case: &StudyCase,
    rho: &ParamAssignment,
    scenario: &Scenario,
    opts: &StabilityOptions,
) -> Result<ScenarioOutcome> {
    let result =
        case_system(case, rho, scenario).and_then(|sys| system_spectrum(&sys, opts.zero_tol));
    match result {
        Ok(s) => Ok(ScenarioOutcome {
            scenario: scenario.name.clone(),
            abscissa: s.abscissa(),
            worst: s.worst(),
            reason: None,
        }),
        Err(e) if counts_as_unstable(&e) => Ok(ScenarioOutcome {
            scenario: scenario.name.clone(),
            abscissa: f64::INFINITY,
            worst: None,
            reason: Some(e.to_string()),
        }),
        Err(e) => Err(e),
    }
}

fn check_case(case: &StudyCase, scenarios: &ScenarioSet) -> Result<()> {
    if scenarios.is_empty() {
        return Err(Error::Validation("scenario set is empty".into()));
    }
    for f in &case.focus {
        match case.net.device(f) {
            Some(d) if d.kind == DeviceKind::Ibr => {}
            Some(_) => return Err(Error::Validation(format!("focus device {f} is not an IBR"))),
            None => {
                return Err(Error::Validation(format!(
                    "focus device {f} does not exist"
                )))
            }
        }
    }
    Ok(())
}

/// `s = 1` iff every scenario's abscissa is below `-stab_margin`.
pub fn is_ps_stable(
    rho: &ParamAssignment,
    scenarios: &ScenarioSet,
    case: &StudyCase,
    opts: &StabilityOptions,
) -> Result<StabilityVerdict> {
    check_case(case, scenarios)?;
    let outcomes = scenarios
        .scenarios
        .par_iter()
        .map(|sc| scenario_outcome(case, rho, sc, opts))
        .collect::<Result<Vec<_>>>()?;
    Ok(verdict_from_outcomes(outcomes, opts.stab_margin))
}

/// Per-case, per-scenario outcomes of [`pssa`].
pub fn pssa_outcomes(
    rho: &ParamAssignment,
    cases: &[StudyCase],
    scenarios: &ScenarioSet,
    opts: &StabilityOptions,
) -> Result<Vec<Vec<ScenarioOutcome>>> {
    if cases.is_empty() {
        return Err(Error::Validation("no connection combination given".into()));
    }
    for c in cases {
        check_case(c, scenarios)?;
    }
    let ns = scenarios.len();
    let flat = (0..cases.len() * ns)
        .into_par_iter()
        .map(|k| scenario_outcome(&cases[k / ns], rho, &scenarios.scenarios[k % ns], opts))
        .collect::<Result<Vec<_>>>()?;
    Ok(flat.chunks(ns).map(|c| c.to_vec()).collect())
}

/// Maximum spectral abscissa over all cases and scenarios.
pub fn pssa(
    rho: &ParamAssignment,
    cases: &[StudyCase],
    scenarios: &ScenarioSet,
    opts: &StabilityOptions,
) -> Result<f64> {
    let out = pssa_outcomes(rho, cases, scenarios, opts)?;
    Ok(out
        .iter()
        .flatten()
        .map(|o| o.abscissa)
        .fold(f64::NEG_INFINITY, f64::max))
}
