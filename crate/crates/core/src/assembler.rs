//! Subsystem construction from a network, equilibrium initialization, and
//! composition of linear subsystems into the global state matrix.
//!
//! Each node voltage is defined by exactly one element: a device (SG, IBR,
//! ideal source) or the lumped capacitance of the node. Every other
//! element at the node reads that voltage and returns a current; the
//! voltage-defining element receives the Kirchhoff sum of those currents.

use std::collections::{BTreeMap, HashMap};

use nalgebra::{DMatrix, DVector};
use serde::Serialize;

use crate::components::{
    eval_nonlinear_dynamics, linearize_device, BusCapacitor, IbrModel, IdealSource, InPort, Model,
    OutPort, RlLoad, SeriesRl, SgModel, StateSpaceModel, Subsystem, TransformerT,
};
use crate::error::{Error, Result};
use crate::linalg::C64;
use crate::netmodel::{
    aggregate_ibr, apply_scenario, BranchElement, DeviceKind, NetworkModel, OperatingPoint,
    Scenario,
};
use crate::powerflow::{internal_node, solve_operating_point, NetworkPf, PfOptions};

/// Source of the signal feeding one input port.
#[derive(Clone, Debug, PartialEq)]
pub enum Binding {
    /// Output port `port` of subsystem `sub`.
    Output { sub: usize, port: usize },
    /// Signed sum of output ports (Kirchhoff current junction).
    Sum(Vec<(usize, usize, f64)>),
    /// External reference with the given index.
    External(usize),
}

/// Port graph of a list of subsystems.
#[derive(Clone, Debug, PartialEq)]
pub struct Topology {
    /// `bindings[s][p]` feeds input port `p` of subsystem `s`.
    pub bindings: Vec<Vec<Binding>>,
    pub references: Vec<String>,
    pub nodes: Vec<String>,
}

/// Derive the port graph. Fails when a node has no voltage-defining
/// element, more than one, or when a junction input is misplaced.
pub fn build_topology(subs: &[Subsystem]) -> Result<Topology> {
    let mut nodes: Vec<String> = Vec::new();
    let mut seen: HashMap<String, ()> = HashMap::new();
    let mut note = |n: &str, nodes: &mut Vec<String>| {
        if seen.insert(n.to_string(), ()).is_none() {
            nodes.push(n.to_string());
        }
    };
    let mut vdef: HashMap<&str, (usize, usize)> = HashMap::new();
    let mut currents: HashMap<&str, Vec<(usize, usize, f64)>> = HashMap::new();
    for (s, sub) in subs.iter().enumerate() {
        for (p, out) in sub.outputs.iter().enumerate() {
            match out {
                OutPort::Voltage(n) => {
                    note(n, &mut nodes);
                    if let Some((other, _)) = vdef.insert(n.as_str(), (s, p)) {
                        return Err(Error::Topology(format!(
                            "node {n}: both {} and {} define the voltage",
                            subs[other].name, sub.name
                        )));
                    }
                }
                OutPort::Current { node, sign } => {
                    note(node, &mut nodes);
                    currents
                        .entry(node.as_str())
                        .or_default()
                        .push((s, p, *sign));
                }
            }
        }
        for inp in &sub.inputs {
            if let InPort::Voltage(n) | InPort::Injection(n) = inp {
                note(n, &mut nodes);
            }
        }
    }
    for n in &nodes {
        if !vdef.contains_key(n.as_str()) {
            return Err(Error::Topology(format!(
                "no voltage source at junction {n}"
            )));
        }
    }
    let mut references = Vec::new();
    let mut bindings = Vec::with_capacity(subs.len());
    for (s, sub) in subs.iter().enumerate() {
        let mut b = Vec::with_capacity(sub.inputs.len());
        for inp in &sub.inputs {
            b.push(match inp {
                InPort::Voltage(n) => {
                    let (sub, port) = vdef[n.as_str()];
                    Binding::Output { sub, port }
                }
                InPort::Injection(n) => {
                    if vdef[n.as_str()].0 != s {
                        return Err(Error::Topology(format!(
                            "{} takes the junction current of {n} without defining its voltage",
                            sub.name
                        )));
                    }
                    Binding::Sum(currents.get(n.as_str()).cloned().unwrap_or_default())
                }
                InPort::Reference(r) => {
                    references.push(r.clone());
                    Binding::External(references.len() - 1)
                }
            });
        }
        bindings.push(b);
    }
    Ok(Topology {
        bindings,
        references,
        nodes,
    })
}

/// Subsystems of an operating point, before equilibrium values are known.
pub fn network_subsystems(op: &OperatingPoint) -> Result<Vec<Subsystem>> {
    let net = &op.net;
    let w = net.omega_nom();
    let mut subs = Vec::new();
    let mut caps: BTreeMap<usize, f64> = BTreeMap::new();
    let idx = net.bus_index();
    let series_ports = |a: &str, b: &str| {
        (
            vec![InPort::Voltage(a.into()), InPort::Voltage(b.into())],
            vec![
                OutPort::Current {
                    node: a.into(),
                    sign: -1.0,
                },
                OutPort::Current {
                    node: b.into(),
                    sign: 1.0,
                },
            ],
        )
    };
    for br in &net.branches {
        let a = br.terminals[0].as_str();
        match br.element {
            BranchElement::PiLine { r, x, b_total } => {
                let b = br.terminals[1].as_str();
                let (inputs, outputs) = series_ports(a, b);
                subs.push(Subsystem {
                    name: br.id.clone(),
                    model: Model::Series(SeriesRl { r, x, omega_b: w }),
                    inputs,
                    outputs,
                });
                if b_total > 0.0 {
                    *caps.entry(idx[a]).or_default() += b_total / 2.0;
                    *caps.entry(idx[b]).or_default() += b_total / 2.0;
                }
            }
            BranchElement::Transformer {
                r1,
                x1,
                r2,
                x2,
                r_m,
                x_m,
            } => {
                let b = br.terminals[1].as_str();
                let (inputs, outputs) = series_ports(a, b);
                subs.push(Subsystem {
                    name: br.id.clone(),
                    model: Model::Transformer(TransformerT {
                        r1,
                        x1,
                        r2,
                        x2,
                        r_m,
                        x_m,
                        omega_b: w,
                    }),
                    inputs,
                    outputs,
                });
            }
            BranchElement::RlLoad { r, x } => subs.push(Subsystem {
                name: br.id.clone(),
                model: Model::Load(RlLoad { r, x, omega_b: w }),
                inputs: vec![InPort::Voltage(a.into())],
                outputs: vec![OutPort::Current {
                    node: a.into(),
                    sign: -1.0,
                }],
            }),
            BranchElement::ShuntCap { b } => {
                *caps.entry(idx[a]).or_default() += b;
            }
        }
    }
    for (k, b) in caps {
        let bus = &net.buses[k].id;
        subs.push(Subsystem {
            name: format!("C@{bus}"),
            model: Model::Capacitor(BusCapacitor { b, omega_b: w }),
            inputs: vec![InPort::Injection(bus.clone())],
            outputs: vec![OutPort::Voltage(bus.clone())],
        });
    }
    for d in &net.devices {
        let bus = d.bus.clone();
        match d.kind {
            DeviceKind::TheveninSource => {
                let t = d.thevenin.as_ref().expect("validated");
                let node = if t.has_impedance() {
                    let int = internal_node(&d.id);
                    let (inputs, outputs) = series_ports(&int, &bus);
                    subs.push(Subsystem {
                        name: format!("{}.z", d.id),
                        model: Model::Series(SeriesRl {
                            r: t.r,
                            x: t.x,
                            omega_b: w,
                        }),
                        inputs,
                        outputs,
                    });
                    int
                } else {
                    bus
                };
                subs.push(Subsystem {
                    name: d.id.clone(),
                    model: Model::Source(IdealSource { v: (t.v, 0.0) }),
                    inputs: vec![],
                    outputs: vec![OutPort::Voltage(node)],
                });
            }
            DeviceKind::Sg => {
                let p = d.sg_params.as_ref().ok_or_else(|| {
                    Error::Validation(format!("device {}: missing sg_params", d.id))
                })?;
                subs.push(Subsystem {
                    name: d.id.clone(),
                    model: Model::Sg(SgModel::new(p, w, net.power_base_mva, d.rating)),
                    inputs: vec![
                        InPort::Reference(format!("{}.p_ref", d.id)),
                        InPort::Reference(format!("{}.v_ref", d.id)),
                        InPort::Injection(bus.clone()),
                    ],
                    outputs: vec![OutPort::Voltage(bus)],
                });
            }
            DeviceKind::Ibr => {
                let s = d.ibr.as_ref().ok_or_else(|| {
                    Error::Validation(format!("device {}: missing ibr block", d.id))
                })?;
                let agg = aggregate_ibr(&s.physical, &s.control, s.n as f64)?;
                subs.push(Subsystem {
                    name: d.id.clone(),
                    model: Model::Ibr(IbrModel::new(&agg, w, net.power_base_mva)),
                    inputs: vec![
                        InPort::Reference(format!("{}.i_dc", d.id)),
                        InPort::Reference(format!("{}.v_ref", d.id)),
                        InPort::Injection(bus.clone()),
                    ],
                    outputs: vec![OutPort::Voltage(bus)],
                });
            }
        }
    }
    Ok(subs)
}

/// Subsystems with their steady states and inputs.
#[derive(Clone, Debug)]
pub struct EquilibriumState {
    pub subsystems: Vec<Subsystem>,
    pub x0: Vec<Vec<f64>>,
    pub u0: Vec<Vec<f64>>,
}

impl EquilibriumState {
    /// Largest state derivative magnitude over all subsystems, with the
    /// subsystem attaining it.
    pub fn residual(&self) -> Result<(f64, String)> {
        let mut worst = (0.0, String::new());
        for (k, sub) in self.subsystems.iter().enumerate() {
            let (dx, _) = eval_nonlinear_dynamics(sub, &self.x0[k], &self.u0[k])?;
            for d in dx {
                if d.abs() > worst.0 {
                    worst = (d.abs(), sub.name.clone());
                }
            }
        }
        Ok(worst)
    }
}

fn put(v: &mut [f64], k: usize, z: C64) {
    v[k] = z.re;
    v[k + 1] = z.im;
}

/// Back-solve every subsystem's internal state from the power flow.
pub fn init_equilibrium(op: &OperatingPoint, pf: &NetworkPf) -> Result<EquilibriumState> {
    let mut subs = network_subsystems(op)?;
    let topo = build_topology(&subs)?;
    let volt = |node: &str| -> Result<C64> {
        pf.voltage(node)
            .ok_or_else(|| Error::Topology(format!("node {node} missing from the power flow")))
    };
    let n = subs.len();
    let mut x0: Vec<Vec<f64>> = subs.iter().map(|s| vec![0.0; s.n_states()]).collect();
    let mut u0: Vec<Vec<f64>> = subs.iter().map(|s| vec![0.0; s.n_inputs()]).collect();
    let mut y0: Vec<Vec<f64>> = subs.iter().map(|s| vec![0.0; s.n_outputs()]).collect();

    // Node voltages feed every voltage input; passive branch states follow.
    for (k, sub) in subs.iter().enumerate() {
        let mut off = 0;
        for inp in &sub.inputs {
            if let InPort::Voltage(node) = inp {
                put(&mut u0[k], off, volt(node)?);
            }
            off += inp.width();
        }
        for (p, out) in sub.outputs.iter().enumerate() {
            if let OutPort::Voltage(node) = out {
                put(&mut y0[k], 2 * p, volt(node)?);
            }
        }
        let x = &mut x0[k];
        match &sub.model {
            Model::Series(s) => {
                let i = (volt_of(&sub.inputs[0], &volt)? - volt_of(&sub.inputs[1], &volt)?)
                    / C64::new(s.r, s.x);
                put(x, 0, i);
                put(&mut y0[k], 0, i);
                put(&mut y0[k], 2, i);
            }
            Model::Transformer(t) => {
                let va = volt_of(&sub.inputs[0], &volt)?;
                let vb = volt_of(&sub.inputs[1], &volt)?;
                let y =
                    crate::netmodel::transformer_admittance(t.r1, t.x1, t.r2, t.x2, t.r_m, t.x_m);
                let i1 = y[0][0] * va + y[0][1] * vb;
                let i2 = -(y[1][0] * va + y[1][1] * vb);
                put(x, 0, i1);
                put(x, 2, i2);
                put(&mut y0[k], 0, i1);
                put(&mut y0[k], 2, i2);
            }
            Model::Load(l) => {
                let i = volt_of(&sub.inputs[0], &volt)? / C64::new(l.r, l.x);
                put(x, 0, i);
                put(&mut y0[k], 0, i);
            }
            Model::Capacitor(_) => {
                let OutPort::Voltage(node) = &sub.outputs[0] else {
                    unreachable!()
                };
                put(x, 0, volt(node)?);
            }
            Model::Source(_) | Model::Sg(_) | Model::Ibr(_) => {}
        }
    }
    for k in 0..n {
        if matches!(
            subs[k].model,
            Model::Series(_) | Model::Transformer(_) | Model::Load(_)
        ) {
            refine_linear_state(&subs[k], &mut x0[k], &u0[k])?;
            let (_, y) = eval_nonlinear_dynamics(&subs[k], &x0[k], &u0[k])?;
            y0[k] = y;
        }
    }
    // Junction currents, then device back-solve.
    for k in 0..n {
        let mut off = 0;
        for (p, inp) in subs[k].inputs.clone().iter().enumerate() {
            if let Binding::Sum(terms) = &topo.bindings[k][p] {
                let mut i = C64::new(0.0, 0.0);
                for &(s, q, sign) in terms {
                    i += C64::new(y0[s][2 * q], y0[s][2 * q + 1]) * sign;
                }
                put(&mut u0[k], off, i);
            }
            off += inp.width();
        }
        let bus = match &subs[k].outputs.first() {
            Some(OutPort::Voltage(node)) => Some(volt(node)?),
            _ => None,
        };
        let bus_v = || bus.ok_or_else(|| Error::Topology("device without a voltage output".into()));
        let name = subs[k].name.clone();
        match &mut subs[k].model {
            Model::Sg(m) => {
                let v = bus_v()?;
                let i_in = C64::new(u0[k][2], u0[k][3]);
                let s = v * (-i_in).conj();
                let (x, r) = m.equilibrium(&name, v, s)?;
                x0[k] = x;
                u0[k][0] = r[0];
                u0[k][1] = r[1];
            }
            Model::Ibr(m) => {
                let v = bus_v()?;
                let i_in = C64::new(u0[k][2], u0[k][3]);
                let s = v * (-i_in).conj();
                let (x, r) = m.equilibrium(&name, v, s)?;
                x0[k] = x;
                u0[k][0] = r[0];
                u0[k][1] = r[1];
            }
            Model::Source(src) => {
                let v = bus_v()?;
                src.v = (v.re, v.im);
            }
            _ => {}
        }
    }
    Ok(EquilibriumState {
        subsystems: subs,
        x0,
        u0,
    })
}

/// Newton steps on a linear element's own state equations to remove the
/// rounding left by the closed-form initial value.
fn refine_linear_state(sub: &Subsystem, x: &mut [f64], u: &[f64]) -> Result<()> {
    let lin = linearize_device(sub, x, u)?;
    let lu = lin.a.lu();
    for _ in 0..2 {
        let (dx, _) = eval_nonlinear_dynamics(sub, x, u)?;
        let Some(step) = lu.solve(&DVector::from_vec(dx)) else {
            return Ok(());
        };
        for (xi, s) in x.iter_mut().zip(step.iter()) {
            *xi -= s;
        }
    }
    Ok(())
}

fn volt_of(inp: &InPort, volt: &dyn Fn(&str) -> Result<C64>) -> Result<C64> {
    match inp {
        InPort::Voltage(n) => volt(n),
        _ => Err(Error::Topology("expected a voltage input".into())),
    }
}

/// Closed-loop linear model of the interconnected system.
#[derive(Clone, Debug, Serialize)]
pub struct AssembledSystem {
    pub a: DMatrix<f64>,
    /// Input matrix of the retained external references.
    pub b: DMatrix<f64>,
    pub state_names: Vec<String>,
    pub reference_names: Vec<String>,
    /// Tangent of the state under a common rotation of the global frame,
    /// present when no element pins the frame.
    pub rotation: Option<DVector<f64>>,
}

impl AssembledSystem {
    pub fn order(&self) -> usize {
        self.a.nrows()
    }
}

/// Eliminate the interconnection variables:
/// `A_ps = A + B K (I - D K)^-1 C`, keeping external references in `B_ps`.
pub fn assemble(models: &[StateSpaceModel], topo: &Topology) -> Result<AssembledSystem> {
    if models.len() != topo.bindings.len() {
        return Err(Error::Topology(
            "model count does not match the topology".into(),
        ));
    }
    let ns: usize = models.iter().map(|m| m.a.nrows()).sum();
    let ni: usize = models.iter().map(|m| m.b.ncols()).sum();
    let no: usize = models.iter().map(|m| m.c.nrows()).sum();
    let nr = topo.references.len();
    let mut a = DMatrix::zeros(ns, ns);
    let mut b = DMatrix::zeros(ns, ni);
    let mut c = DMatrix::zeros(no, ns);
    let mut d = DMatrix::zeros(no, ni);
    let mut xo = Vec::with_capacity(models.len());
    let mut uo = Vec::with_capacity(models.len());
    let mut yo = Vec::with_capacity(models.len());
    let (mut x, mut u, mut y) = (0, 0, 0);
    for m in models {
        let (n, i, o) = (m.a.nrows(), m.b.ncols(), m.c.nrows());
        a.view_mut((x, x), (n, n)).copy_from(&m.a);
        b.view_mut((x, u), (n, i)).copy_from(&m.b);
        c.view_mut((y, x), (o, n)).copy_from(&m.c);
        d.view_mut((y, u), (o, i)).copy_from(&m.d);
        xo.push(x);
        uo.push(u);
        yo.push(y);
        x += n;
        u += i;
        y += o;
    }
    let mut k = DMatrix::zeros(ni, no);
    let mut e = DMatrix::zeros(ni, nr);
    for (s, binds) in topo.bindings.iter().enumerate() {
        let mut off = uo[s];
        for bind in binds {
            match bind {
                Binding::Output { sub, port } => {
                    let src = yo[*sub] + 2 * port;
                    k[(off, src)] += 1.0;
                    k[(off + 1, src + 1)] += 1.0;
                    off += 2;
                }
                Binding::Sum(terms) => {
                    for &(sub, port, sign) in terms {
                        let src = yo[sub] + 2 * port;
                        k[(off, src)] += sign;
                        k[(off + 1, src + 1)] += sign;
                    }
                    off += 2;
                }
                Binding::External(r) => {
                    e[(off, *r)] = 1.0;
                    off += 1;
                }
            }
        }
    }
    let m = DMatrix::<f64>::identity(no, no) - &d * &k;
    let lu = m.lu();
    let loop_err = || {
        let names = models
            .iter()
            .zip(&topo.bindings)
            .enumerate()
            .filter(|(_, (m, _))| m.d.iter().any(|v| *v != 0.0))
            .map(|(i, _)| {
                models[i]
                    .state_names
                    .first()
                    .or(models[i].output_names.first())
                    .map(|s| s.split('.').next().unwrap_or(s).to_string())
                    .unwrap_or_else(|| format!("#{i}"))
            })
            .collect();
        Error::AlgebraicLoop(names)
    };
    // Solve (I - D K) Y = [C, D E] once for both products.
    let mut rhs = DMatrix::zeros(no, ns + nr);
    rhs.view_mut((0, 0), (no, ns)).copy_from(&c);
    rhs.view_mut((0, ns), (no, nr)).copy_from(&(&d * &e));
    let piv = lu.u().diagonal().abs();
    let scale = piv.max().max(1.0);
    if no > 0 && piv.min() <= 1e-12 * scale {
        return Err(loop_err());
    }
    let sol = lu.solve(&rhs).ok_or_else(loop_err)?;
    if sol.iter().any(|v| !v.is_finite()) {
        return Err(loop_err());
    }
    let bk = &b * &k;
    let a_ps = a + &bk * sol.columns(0, ns);
    let b_ps = &b * &e + &bk * sol.columns(ns, nr);
    let mut state_names = Vec::with_capacity(ns);
    for m in models {
        state_names.extend(m.state_names.iter().cloned());
    }
    Ok(AssembledSystem {
        a: a_ps,
        b: b_ps,
        state_names,
        reference_names: topo.references.clone(),
        rotation: None,
    })
}

/// Linearize every subsystem at equilibrium and assemble.
pub fn assemble_equilibrium(eq: &EquilibriumState) -> Result<AssembledSystem> {
    let topo = build_topology(&eq.subsystems)?;
    let models = eq
        .subsystems
        .iter()
        .enumerate()
        .map(|(k, s)| linearize_device(s, &eq.x0[k], &eq.u0[k]))
        .collect::<Result<Vec<_>>>()?;
    let mut sys = assemble(&models, &topo)?;
    let pinned = eq
        .subsystems
        .iter()
        .any(|s| matches!(s.model, Model::Source(_)));
    if !pinned {
        let mut z = Vec::with_capacity(sys.order());
        for (k, s) in eq.subsystems.iter().enumerate() {
            z.extend(s.rotation(&eq.x0[k]));
        }
        sys.rotation = Some(DVector::from_vec(z));
    }
    Ok(sys)
}

/// Full pipeline for one operating point of an already-scenario-applied
/// network: power flow, equilibrium, linearization, assembly.
pub fn linearize_operating_point(
    op: &OperatingPoint,
) -> Result<(AssembledSystem, EquilibriumState)> {
    let pf = solve_operating_point(op, &PfOptions::default())?;
    let eq = init_equilibrium(op, &pf)?;
    let sys = assemble_equilibrium(&eq)?;
    Ok((sys, eq))
}

/// Apply a scenario and linearize the resulting operating point.
pub fn linearize_network(net: &NetworkModel, scenario: &Scenario) -> Result<AssembledSystem> {
    let op = apply_scenario(net, scenario)?;
    Ok(linearize_operating_point(&op)?.0)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::components::linearize_passive;
    use crate::components::PassiveElement;
    use crate::linalg::EigenDecomposition;
    use std::f64::consts::PI;

    const W: f64 = 2.0 * PI * 50.0;

    fn source_and_branch(r: f64, x: f64) -> (Vec<Subsystem>, Vec<StateSpaceModel>) {
        let subs = vec![
            Subsystem {
                name: "S".into(),
                model: Model::Source(IdealSource { v: (1.0, 0.0) }),
                inputs: vec![],
                outputs: vec![OutPort::Voltage("1".into())],
            },
            Subsystem {
                name: "L".into(),
                model: Model::Load(RlLoad { r, x, omega_b: W }),
                inputs: vec![InPort::Voltage("1".into())],
                outputs: vec![OutPort::Current {
                    node: "1".into(),
                    sign: -1.0,
                }],
            },
        ];
        let models = vec![
            linearize_device(&subs[0], &[], &[]).unwrap(),
            linearize_passive(&PassiveElement::Load(RlLoad { r, x, omega_b: W })).unwrap(),
        ];
        (subs, models)
    }

    #[test]
    fn source_with_rl_branch_gives_damped_nominal_pair() {
        let (subs, models) = source_and_branch(0.02, 0.2);
        let topo = build_topology(&subs).unwrap();
        let sys = assemble(&models, &topo).unwrap();
        let e = EigenDecomposition::new(&sys.a).unwrap();
        for z in e.values() {
            assert!((z.re + 0.1 * W).abs() < 1e-9);
            assert!((z.im.abs() - W).abs() < 1e-9);
        }
    }

    #[test]
    fn block_feedback_formula() {
        // Two first-order systems in a loop, D = 0.
        let m = |a: f64, name: &str| StateSpaceModel {
            a: DMatrix::from_element(1, 1, a),
            b: DMatrix::from_row_slice(1, 2, &[1.0, 0.5]),
            c: DMatrix::from_row_slice(2, 1, &[2.0, -1.0]),
            d: DMatrix::zeros(2, 2),
            state_names: vec![format!("{name}.x")],
            input_names: vec![],
            output_names: vec![],
        };
        let topo = Topology {
            bindings: vec![
                vec![Binding::Output { sub: 1, port: 0 }],
                vec![Binding::Output { sub: 0, port: 0 }],
            ],
            references: vec![],
            nodes: vec![],
        };
        let sys = assemble(&[m(-1.0, "p"), m(-3.0, "q")], &topo).unwrap();
        // B1 C2 = [1, 0.5] . [2, -1] = 1.5
        let expect = DMatrix::from_row_slice(2, 2, &[-1.0, 1.5, 1.5, -3.0]);
        assert!((sys.a - expect).amax() < 1e-14);
    }

    #[test]
    fn algebraic_loop_detected() {
        let m = StateSpaceModel {
            a: DMatrix::zeros(0, 0),
            b: DMatrix::zeros(0, 2),
            c: DMatrix::zeros(2, 0),
            d: DMatrix::identity(2, 2),
            state_names: vec![],
            input_names: vec![],
            output_names: vec!["g.y_D".into(), "g.y_Q".into()],
        };
        let topo = Topology {
            bindings: vec![vec![Binding::Output { sub: 0, port: 0 }]],
            references: vec![],
            nodes: vec![],
        };
        assert!(matches!(
            assemble(&[m], &topo),
            Err(Error::AlgebraicLoop(_))
        ));
    }

    #[test]
    fn missing_voltage_definition_reported() {
        let subs = vec![Subsystem {
            name: "L".into(),
            model: Model::Load(RlLoad {
                r: 0.1,
                x: 0.1,
                omega_b: W,
            }),
            inputs: vec![InPort::Voltage("7".into())],
            outputs: vec![OutPort::Current {
                node: "7".into(),
                sign: -1.0,
            }],
        }];
        let e = build_topology(&subs).unwrap_err().to_string();
        assert!(e.contains("no voltage source at junction 7"), "{e}");
    }
}
