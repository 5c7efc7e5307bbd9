//! Newton-Raphson AC power flow in polar coordinates.
//!
//! [`solve`] works on a bare admittance matrix with per-bus specifications;
//! [`solve_operating_point`] builds that problem from a network with a
//! scenario applied and reports per-device injections.

use std::collections::{BTreeMap, HashMap};

use nalgebra::{DMatrix, DVector};

use crate::error::{Error, Result};
use crate::linalg::C64;
use crate::netmodel::{
    apply_scenario, passive_admittance, BusRole, DeviceKind, NetworkModel, OperatingPoint, Scenario,
};

#[derive(Clone, Debug)]
pub struct PfOptions {
    /// Convergence tolerance on the largest power mismatch, pu.
    pub tol: f64,
    pub max_iter: usize,
}

impl Default for PfOptions {
    fn default() -> Self {
        Self {
            tol: 1e-8,
            max_iter: 50,
        }
    }
}

/// Voltage-dependent injection `P(V) = p0 + p2 V^2`,
/// `Q(V) = q0 + q1 (vref - V) + q2 V^2`.
#[derive(Clone, Copy, Debug, Default, PartialEq)]
pub struct PqSpec {
    pub p0: f64,
    pub p2: f64,
    pub q0: f64,
    pub q1: f64,
    pub vref: f64,
    pub q2: f64,
}

impl PqSpec {
    pub fn constant(p: f64, q: f64) -> Self {
        Self {
            p0: p,
            q0: q,
            ..Default::default()
        }
    }

    pub fn p(&self, v: f64) -> f64 {
        self.p0 + self.p2 * v * v
    }

    pub fn q(&self, v: f64) -> f64 {
        self.q0 + self.q1 * (self.vref - v) + self.q2 * v * v
    }

    fn dp(&self, v: f64) -> f64 {
        2.0 * self.p2 * v
    }

    fn dq(&self, v: f64) -> f64 {
        -self.q1 + 2.0 * self.q2 * v
    }
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub enum BusSpec {
    Slack { v: f64, theta: f64 },
    PV { p: f64, v: f64 },
    PQ(PqSpec),
}

#[derive(Clone, Debug)]
pub struct PfProblem {
    pub y: DMatrix<C64>,
    pub buses: Vec<BusSpec>,
}

#[derive(Clone, Debug)]
pub struct PfSolution {
    pub vm: Vec<f64>,
    pub va: Vec<f64>,
    /// Net injected active power, pu.
    pub p: Vec<f64>,
    /// Net injected reactive power, pu.
    pub q: Vec<f64>,
    pub iterations: usize,
    pub mismatch: f64,
}

impl PfSolution {
    pub fn phasor(&self, k: usize) -> C64 {
        C64::from_polar(self.vm[k], self.va[k])
    }
}

fn injections(y: &DMatrix<C64>, v: &DVector<C64>) -> (DVector<C64>, DVector<C64>) {
    let i = y * v;
    let s = v.zip_map(&i, |vk, ik| vk * ik.conj());
    (i, s)
}

/// Solve the power-flow problem from a flat start.
pub fn solve(problem: &PfProblem, opts: &PfOptions) -> Result<PfSolution> {
    let n = problem.buses.len();
    if problem.y.nrows() != n || problem.y.ncols() != n {
        return Err(Error::Domain(
            "admittance matrix size does not match bus count".into(),
        ));
    }
    if !problem
        .buses
        .iter()
        .any(|b| matches!(b, BusSpec::Slack { .. }))
    {
        return Err(Error::Validation("power flow needs a slack bus".into()));
    }
    let mut vm = vec![1.0; n];
    let mut va = vec![0.0; n];
    for (k, b) in problem.buses.iter().enumerate() {
        match *b {
            BusSpec::Slack { v, theta } => {
                vm[k] = v;
                va[k] = theta;
            }
            BusSpec::PV { v, .. } => vm[k] = v,
            BusSpec::PQ(_) => {}
        }
    }
    let ang: Vec<usize> = (0..n)
        .filter(|&k| !matches!(problem.buses[k], BusSpec::Slack { .. }))
        .collect();
    let mag: Vec<usize> = (0..n)
        .filter(|&k| matches!(problem.buses[k], BusSpec::PQ(_)))
        .collect();
    let m = ang.len() + mag.len();

    let mut iterations = 0;
    let mut polish = 3;
    let mut best: Option<PfSolution> = None;
    loop {
        let v = DVector::from_fn(n, |k, _| C64::from_polar(vm[k], va[k]));
        let (ibus, s) = injections(&problem.y, &v);
        let mut f = DVector::zeros(m);
        for (r, &k) in ang.iter().enumerate() {
            let p_spec = match problem.buses[k] {
                BusSpec::PV { p, .. } => p,
                BusSpec::PQ(spec) => spec.p(vm[k]),
                BusSpec::Slack { .. } => unreachable!(),
            };
            f[r] = s[k].re - p_spec;
        }
        for (r, &k) in mag.iter().enumerate() {
            let BusSpec::PQ(spec) = problem.buses[k] else {
                unreachable!()
            };
            f[ang.len() + r] = s[k].im - spec.q(vm[k]);
        }
        let mismatch = f.amax();
        if !mismatch.is_finite() {
            return Err(Error::PowerFlowDiverged {
                iterations,
                mismatch,
            });
        }
        if mismatch < opts.tol {
            // A few extra Newton steps cost little and tighten the operating
            // point well below the tolerance, which keeps equilibrium
            // residuals of stiff elements small.
            let improving = best
                .as_ref()
                .is_none_or(|b: &PfSolution| mismatch < 0.5 * b.mismatch);
            if improving {
                best = Some(PfSolution {
                    p: s.iter().map(|z| z.re).collect(),
                    q: s.iter().map(|z| z.im).collect(),
                    vm: vm.clone(),
                    va: va.clone(),
                    iterations,
                    mismatch,
                });
            }
            if !improving || polish == 0 || mismatch < 1e-14 {
                return Ok(best.expect("set above"));
            }
            polish -= 1;
        } else if let Some(b) = best {
            return Ok(b);
        }
        if iterations >= opts.max_iter {
            return best.ok_or(Error::PowerFlowDiverged {
                iterations,
                mismatch,
            });
        }
        iterations += 1;

        // dS/dtheta = j diag(V) conj(diag(I) - Y diag(V))
        // dS/d|V|   = diag(V) conj(Y diag(V/|V|)) + conj(diag(I)) diag(V/|V|)
        let vn = v.map(|z| z / z.norm());
        let mut col_pos = vec![usize::MAX; n];
        for (c, &k) in ang.iter().enumerate() {
            col_pos[k] = c;
        }
        let mut mag_pos = vec![usize::MAX; n];
        for (c, &k) in mag.iter().enumerate() {
            mag_pos[k] = ang.len() + c;
        }
        let row_of = |k: usize| -> (usize, usize) { (col_pos[k], mag_pos[k]) };
        let mut jac = DMatrix::<f64>::zeros(m, m);
        for i in 0..n {
            let (rp, rq) = row_of(i);
            if rp == usize::MAX && rq == usize::MAX {
                continue;
            }
            for j in 0..n {
                let yij = problem.y[(i, j)];
                let diag = i == j;
                if yij == C64::new(0.0, 0.0) && !diag {
                    continue;
                }
                let mut d_ang = -C64::i() * v[i] * (yij * v[j]).conj();
                if diag {
                    d_ang += C64::i() * v[i] * ibus[i].conj();
                }
                let mut d_mag = v[i] * (yij * vn[j]).conj();
                if diag {
                    d_mag += ibus[i].conj() * vn[i];
                }
                let (cp, cq) = row_of(j);
                if rp != usize::MAX {
                    if cp != usize::MAX {
                        jac[(rp, cp)] += d_ang.re;
                    }
                    if cq != usize::MAX {
                        jac[(rp, cq)] += d_mag.re;
                    }
                }
                if rq != usize::MAX {
                    if cp != usize::MAX {
                        jac[(rq, cp)] += d_ang.im;
                    }
                    if cq != usize::MAX {
                        jac[(rq, cq)] += d_mag.im;
                    }
                }
            }
            if let BusSpec::PQ(spec) = problem.buses[i] {
                let cq = mag_pos[i];
                jac[(rp, cq)] -= spec.dp(vm[i]);
                jac[(rq, cq)] -= spec.dq(vm[i]);
            }
        }
        let Some(dx) = jac.lu().solve(&f) else {
            return best.ok_or(Error::Singular("power-flow Jacobian".into()));
        };
        for (c, &k) in ang.iter().enumerate() {
            va[k] -= dx[c];
        }
        for (c, &k) in mag.iter().enumerate() {
            vm[k] -= dx[ang.len() + c];
        }
    }
}

/// Power-flow result on a network, including internal source nodes.
#[derive(Clone, Debug)]
pub struct NetworkPf {
    /// Bus ids in solution order; internal source nodes are appended.
    pub bus_ids: Vec<String>,
    pub solution: PfSolution,
    /// Complex power injected by each device at its terminal node, system pu.
    pub device_power: BTreeMap<String, C64>,
    /// Terminal node of each device (the internal node for a Thévenin source).
    pub device_node: BTreeMap<String, String>,
}

impl NetworkPf {
    pub fn index_of(&self, bus: &str) -> Option<usize> {
        self.bus_ids.iter().position(|b| b == bus)
    }

    pub fn voltage(&self, bus: &str) -> Option<C64> {
        self.index_of(bus).map(|k| self.solution.phasor(k))
    }

    pub fn vm(&self) -> &[f64] {
        &self.solution.vm
    }

    pub fn va(&self) -> &[f64] {
        &self.solution.va
    }
}

/// Name of the internal node behind a Thévenin source impedance.
pub fn internal_node(device: &str) -> String {
    format!("{device}#int")
}

/// Voltage-dependent injection of an IBR at its point of common coupling,
/// system pu: filter shunt losses and susceptance plus Q/v droop.
pub fn ibr_injection(net: &NetworkModel, op: &OperatingPoint, dev_id: &str) -> Result<PqSpec> {
    let d = net
        .device(dev_id)
        .ok_or_else(|| Error::Validation(format!("unknown device {dev_id}")))?;
    let spec = d
        .ibr
        .as_ref()
        .ok_or_else(|| Error::Validation(format!("device {dev_id} is not an IBR")))?;
    let agg = crate::netmodel::aggregate_ibr(&spec.physical, &spec.control, spec.n as f64)?;
    let ph = &agg.physical;
    let base = ph.s_base / net.power_base_mva;
    let zf = C64::new(ph.r_f, -1.0 / ph.c_f);
    let yf = C64::new(1.0, 0.0) / zf;
    let v_ref = op.v_set.get(dev_id).copied().unwrap_or(1.0);
    Ok(PqSpec {
        p0: op.p_set.get(dev_id).copied().unwrap_or(0.0),
        p2: -yf.re * base,
        q0: agg.control.q_ref * base,
        q1: agg.control.k_qv * base,
        vref: v_ref,
        q2: yf.im * base,
    })
}

/// Build and solve the power flow of an operating point.
pub fn solve_operating_point(op: &OperatingPoint, opts: &PfOptions) -> Result<NetworkPf> {
    let net = &op.net;
    let slack = net
        .slack_bus()
        .ok_or_else(|| Error::Validation("no slack bus".into()))?
        .id
        .clone();
    let mut bus_ids: Vec<String> = net.buses.iter().map(|b| b.id.clone()).collect();
    let thev = net
        .devices
        .iter()
        .find(|d| d.kind == DeviceKind::TheveninSource);
    let thev_internal = thev.filter(|d| !d.defines_bus_voltage());
    if let Some(d) = thev_internal {
        bus_ids.push(internal_node(&d.id));
    }
    let n = bus_ids.len();
    let y0 = passive_admittance(net);
    let mut y = DMatrix::from_element(n, n, C64::new(0.0, 0.0));
    y.view_mut((0, 0), (y0.nrows(), y0.ncols())).copy_from(&y0);
    let idx: HashMap<&str, usize> = bus_ids
        .iter()
        .enumerate()
        .map(|(i, b)| (b.as_str(), i))
        .collect();
    if let Some(d) = thev_internal {
        let t = d.thevenin.as_ref().expect("validated");
        let ys = C64::new(1.0, 0.0) / C64::new(t.r, t.x);
        let a = idx[d.bus.as_str()];
        let b = n - 1;
        y[(a, a)] += ys;
        y[(b, b)] += ys;
        y[(a, b)] -= ys;
        y[(b, a)] -= ys;
    }

    let mut specs = vec![BusSpec::PQ(PqSpec::default()); n];
    let mut device_node = BTreeMap::new();
    let mut ibr_specs: BTreeMap<String, PqSpec> = BTreeMap::new();
    for d in &net.devices {
        let k = idx[d.bus.as_str()];
        match d.kind {
            DeviceKind::TheveninSource => {
                let v = op.v_set.get(&d.id).copied().unwrap_or(1.0);
                if d.defines_bus_voltage() {
                    specs[k] = BusSpec::Slack { v, theta: 0.0 };
                    device_node.insert(d.id.clone(), d.bus.clone());
                } else {
                    specs[n - 1] = BusSpec::Slack { v, theta: 0.0 };
                    device_node.insert(d.id.clone(), internal_node(&d.id));
                }
            }
            DeviceKind::Sg => {
                let v = op.v_set.get(&d.id).copied().unwrap_or(1.0);
                let role = net.buses[k].role;
                specs[k] = if d.bus == slack && thev_internal.is_none() {
                    BusSpec::Slack { v, theta: 0.0 }
                } else if role == BusRole::PV || d.bus == slack {
                    BusSpec::PV {
                        p: op.p_set.get(&d.id).copied().unwrap_or(0.0),
                        v,
                    }
                } else {
                    BusSpec::PQ(PqSpec::constant(
                        op.p_set.get(&d.id).copied().unwrap_or(0.0),
                        0.0,
                    ))
                };
                device_node.insert(d.id.clone(), d.bus.clone());
            }
            DeviceKind::Ibr => {
                let s = ibr_injection(net, op, &d.id)?;
                specs[k] = BusSpec::PQ(s);
                ibr_specs.insert(d.id.clone(), s);
                device_node.insert(d.id.clone(), d.bus.clone());
            }
        }
    }
    let solution = solve(&PfProblem { y, buses: specs }, opts)?;
    let mut device_power = BTreeMap::new();
    for d in &net.devices {
        let node = &device_node[&d.id];
        let k = idx[node.as_str()];
        let s = match ibr_specs.get(&d.id) {
            Some(spec) => C64::new(spec.p(solution.vm[k]), spec.q(solution.vm[k])),
            None => C64::new(solution.p[k], solution.q[k]),
        };
        device_power.insert(d.id.clone(), s);
    }
    Ok(NetworkPf {
        bus_ids,
        solution,
        device_power,
        device_node,
    })
}

/// Apply `scenario` to `net` and solve the resulting power flow.
pub fn solve_power_flow(net: &NetworkModel, scenario: &Scenario) -> Result<NetworkPf> {
    let op = apply_scenario(net, scenario)?;
    solve_operating_point(&op, &PfOptions::default())
}
