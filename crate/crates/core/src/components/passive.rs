//! Linear network elements in the global dq frame.
//!
//! Per-unit states with time in seconds: an inductor of reactance `x`
//! obeys `(x / w) di/dt = v - j x i` and a capacitor of susceptance `b`
//! obeys `(b / w) dv/dt = i - j b v`, with `w` the base angular frequency.

use nalgebra::DMatrix;

use super::{phasor_names, Dynamics, StateSpaceModel};
use crate::error::{Error, Result};
use crate::scalar::{Cx, Real};

fn cx<T: Real>(s: &[T], k: usize) -> Cx<T> {
    Cx::new(s[k], s[k + 1])
}

fn put<T: Real>(s: &mut [T], k: usize, z: Cx<T>) {
    s[k] = z.re;
    s[k + 1] = z.im;
}

/// `w / x (v - r i) - j w i` for an inductive branch.
fn rl_rate<T: Real>(w: f64, r: f64, x: f64, v: Cx<T>, i: Cx<T>) -> Cx<T> {
    (v - i.scale_f(r)).scale_f(w / x) - i.rot90().scale_f(w)
}

/// Series R-L between two nodes.
#[derive(Clone, Debug, PartialEq)]
pub struct SeriesRl {
    pub r: f64,
    pub x: f64,
    pub omega_b: f64,
}

impl Dynamics for SeriesRl {
    fn state_names(&self) -> Vec<String> {
        phasor_names("i").to_vec()
    }
    fn input_names(&self) -> Vec<String> {
        [phasor_names("v_a"), phasor_names("v_b")].concat()
    }
    fn output_names(&self) -> Vec<String> {
        [phasor_names("i_a"), phasor_names("i_b")].concat()
    }
    fn eval<T: Real>(&self, x: &[T], u: &[T], dx: &mut [T], y: &mut [T]) {
        let i = cx(x, 0);
        let v = cx(u, 0) - cx(u, 2);
        put(dx, 0, rl_rate(self.omega_b, self.r, self.x, v, i));
        put(y, 0, i);
        put(y, 2, i);
    }
    fn rotation(&self, x: &[f64]) -> Vec<f64> {
        vec![-x[1], x[0]]
    }
}

/// T-equivalent transformer: two series windings and a series `r_m`, `x_m`
/// magnetizing branch. The magnetizing current is `i1 - i2`, so the
/// midpoint voltage is algebraic and only the winding currents are states.
#[derive(Clone, Debug, PartialEq)]
pub struct TransformerT {
    pub r1: f64,
    pub x1: f64,
    pub r2: f64,
    pub x2: f64,
    pub r_m: f64,
    pub x_m: f64,
    pub omega_b: f64,
}

impl TransformerT {
    /// Coefficients of the midpoint voltage
    /// `e = c1 i1 + c2 i2 + ga v_a + gb v_b` as complex pairs.
    fn midpoint(&self) -> ([f64; 2], [f64; 2], f64, f64) {
        let (a1, a2) = (self.x_m / self.x1, self.x_m / self.x2);
        let g = 1.0 / (1.0 + a1 + a2);
        let c1 = [g * (self.r_m - a1 * self.r1), g * (self.x_m - a1 * self.x1)];
        let c2 = [g * (a2 * self.r2 - self.r_m), g * (a2 * self.x2 - self.x_m)];
        (c1, c2, g * a1, g * a2)
    }
}

fn cmul<T: Real>(c: [f64; 2], z: Cx<T>) -> Cx<T> {
    Cx::new(z.re * c[0] - z.im * c[1], z.re * c[1] + z.im * c[0])
}

impl Dynamics for TransformerT {
    fn state_names(&self) -> Vec<String> {
        [phasor_names("i1"), phasor_names("i2")].concat()
    }
    fn input_names(&self) -> Vec<String> {
        [phasor_names("v_a"), phasor_names("v_b")].concat()
    }
    fn output_names(&self) -> Vec<String> {
        [phasor_names("i_a"), phasor_names("i_b")].concat()
    }
    fn eval<T: Real>(&self, x: &[T], u: &[T], dx: &mut [T], y: &mut [T]) {
        let w = self.omega_b;
        let (i1, i2) = (cx(x, 0), cx(x, 2));
        let (va, vb) = (cx(u, 0), cx(u, 2));
        let (c1, c2, ga, gb) = self.midpoint();
        let e = cmul(c1, i1) + cmul(c2, i2) + va.scale_f(ga) + vb.scale_f(gb);
        put(dx, 0, rl_rate(w, self.r1, self.x1, va - e, i1));
        put(dx, 2, rl_rate(w, self.r2, self.x2, e - vb, i2));
        put(y, 0, i1);
        put(y, 2, i2);
    }
    fn rotation(&self, x: &[f64]) -> Vec<f64> {
        vec![-x[1], x[0], -x[3], x[2]]
    }
}

/// Constant-impedance R-L load to ground.
#[derive(Clone, Debug, PartialEq)]
pub struct RlLoad {
    pub r: f64,
    pub x: f64,
    pub omega_b: f64,
}

impl Dynamics for RlLoad {
    fn state_names(&self) -> Vec<String> {
        phasor_names("i").to_vec()
    }
    fn input_names(&self) -> Vec<String> {
        phasor_names("v").to_vec()
    }
    fn output_names(&self) -> Vec<String> {
        phasor_names("i").to_vec()
    }
    fn eval<T: Real>(&self, x: &[T], u: &[T], dx: &mut [T], y: &mut [T]) {
        let i = cx(x, 0);
        put(dx, 0, rl_rate(self.omega_b, self.r, self.x, cx(u, 0), i));
        put(y, 0, i);
    }
    fn rotation(&self, x: &[f64]) -> Vec<f64> {
        vec![-x[1], x[0]]
    }
}

/// Shunt capacitance of a node; defines the node voltage.
#[derive(Clone, Debug, PartialEq)]
pub struct BusCapacitor {
    pub b: f64,
    pub omega_b: f64,
}

impl Dynamics for BusCapacitor {
    fn state_names(&self) -> Vec<String> {
        phasor_names("v").to_vec()
    }
    fn input_names(&self) -> Vec<String> {
        phasor_names("i").to_vec()
    }
    fn output_names(&self) -> Vec<String> {
        phasor_names("v").to_vec()
    }
    fn eval<T: Real>(&self, x: &[T], u: &[T], dx: &mut [T], y: &mut [T]) {
        let w = self.omega_b;
        let v = cx(x, 0);
        put(dx, 0, cx(u, 0).scale_f(w / self.b) - v.rot90().scale_f(w));
        put(y, 0, v);
    }
    fn rotation(&self, x: &[f64]) -> Vec<f64> {
        vec![-x[1], x[0]]
    }
}

/// Ideal voltage source with a fixed phasor; no states, no inputs.
#[derive(Clone, Debug, PartialEq)]
pub struct IdealSource {
    pub v: (f64, f64),
}

impl Dynamics for IdealSource {
    fn state_names(&self) -> Vec<String> {
        vec![]
    }
    fn input_names(&self) -> Vec<String> {
        vec![]
    }
    fn output_names(&self) -> Vec<String> {
        phasor_names("v").to_vec()
    }
    fn eval<T: Real>(&self, _x: &[T], _u: &[T], _dx: &mut [T], y: &mut [T]) {
        y[0] = T::cst(self.v.0);
        y[1] = T::cst(self.v.1);
    }
    fn rotation(&self, _x: &[f64]) -> Vec<f64> {
        vec![]
    }
}

/// Passive element kinds with closed-form linear models.
#[derive(Clone, Debug, PartialEq)]
pub enum PassiveElement {
    Series(SeriesRl),
    Transformer(TransformerT),
    Load(RlLoad),
    Capacitor(BusCapacitor),
}

/// 2x2 real block of the complex scalar `re + j im` acting on (D, Q).
fn block(m: &mut DMatrix<f64>, r: usize, c: usize, re: f64, im: f64) {
    m[(r, c)] += re;
    m[(r, c + 1)] -= im;
    m[(r + 1, c)] += im;
    m[(r + 1, c + 1)] += re;
}

/// Exact linear model of a passive element, written directly from the
/// circuit equations.
pub fn linearize_passive(elem: &PassiveElement) -> Result<StateSpaceModel> {
    match elem {
        PassiveElement::Series(s) => {
            if !(s.x > 0.0) {
                return Err(Error::Domain(
                    "series element needs nonzero reactance".into(),
                ));
            }
            let (w, k) = (s.omega_b, s.omega_b / s.x);
            let mut a = DMatrix::zeros(2, 2);
            block(&mut a, 0, 0, -k * s.r, -w);
            let mut b = DMatrix::zeros(2, 4);
            block(&mut b, 0, 0, k, 0.0);
            block(&mut b, 0, 2, -k, 0.0);
            let mut c = DMatrix::zeros(4, 2);
            block(&mut c, 0, 0, 1.0, 0.0);
            block(&mut c, 2, 0, 1.0, 0.0);
            Ok(StateSpaceModel {
                a,
                b,
                c,
                d: DMatrix::zeros(4, 4),
                state_names: s.state_names(),
                input_names: s.input_names(),
                output_names: s.output_names(),
            })
        }
        PassiveElement::Load(l) => {
            if !(l.x > 0.0) {
                return Err(Error::Domain("load needs nonzero reactance".into()));
            }
            let (w, k) = (l.omega_b, l.omega_b / l.x);
            let mut a = DMatrix::zeros(2, 2);
            block(&mut a, 0, 0, -k * l.r, -w);
            let mut b = DMatrix::zeros(2, 2);
            block(&mut b, 0, 0, k, 0.0);
            Ok(StateSpaceModel {
                a,
                b,
                c: DMatrix::identity(2, 2),
                d: DMatrix::zeros(2, 2),
                state_names: l.state_names(),
                input_names: l.input_names(),
                output_names: l.output_names(),
            })
        }
        PassiveElement::Capacitor(cap) => {
            if !(cap.b > 0.0) {
                return Err(Error::Domain("capacitor needs nonzero susceptance".into()));
            }
            let w = cap.omega_b;
            let mut a = DMatrix::zeros(2, 2);
            block(&mut a, 0, 0, 0.0, -w);
            let mut b = DMatrix::zeros(2, 2);
            block(&mut b, 0, 0, w / cap.b, 0.0);
            Ok(StateSpaceModel {
                a,
                b,
                c: DMatrix::identity(2, 2),
                d: DMatrix::zeros(2, 2),
                state_names: cap.state_names(),
                input_names: cap.input_names(),
                output_names: cap.output_names(),
            })
        }
        PassiveElement::Transformer(t) => {
            if !(t.x1 > 0.0 && t.x2 > 0.0 && t.x_m > 0.0) {
                return Err(Error::Domain("transformer needs nonzero reactances".into()));
            }
            let w = t.omega_b;
            let (k1, k2) = (w / t.x1, w / t.x2);
            let (c1, c2, ga, gb) = t.midpoint();
            let mut a = DMatrix::zeros(4, 4);
            // winding 1: k1 (v_a - e - z1 i1)
            block(&mut a, 0, 0, -k1 * (t.r1 + c1[0]), -k1 * (t.x1 + c1[1]));
            block(&mut a, 0, 2, -k1 * c2[0], -k1 * c2[1]);
            // winding 2: k2 (e - v_b - z2 i2)
            block(&mut a, 2, 0, k2 * c1[0], k2 * c1[1]);
            block(&mut a, 2, 2, k2 * (c2[0] - t.r2), k2 * (c2[1] - t.x2));
            let mut b = DMatrix::zeros(4, 4);
            block(&mut b, 0, 0, k1 * (1.0 - ga), 0.0);
            block(&mut b, 0, 2, -k1 * gb, 0.0);
            block(&mut b, 2, 0, k2 * ga, 0.0);
            block(&mut b, 2, 2, k2 * (gb - 1.0), 0.0);
            Ok(StateSpaceModel {
                a,
                b,
                c: DMatrix::identity(4, 4),
                d: DMatrix::zeros(4, 4),
                state_names: t.state_names(),
                input_names: t.input_names(),
                output_names: t.output_names(),
            })
        }
    }
}
