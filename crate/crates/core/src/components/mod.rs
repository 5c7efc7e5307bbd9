//! Dynamic subsystem models and their linearization.
//!
//! Every subsystem is a nonlinear state-space model `dx = f(x, u)`,
//! `y = g(x, u)` written once over [`Real`]. Linearization evaluates the
//! same code with dual numbers, so `A, B, C, D` are exact Jacobians.
//!
//! Phasor ports are two scalars (D then Q component) in the global frame
//! rotating at nominal frequency. Currents are positive into devices; a
//! series element reports the current entering it from its first terminal
//! and the current leaving it into its second terminal.

pub mod ibr;
pub mod passive;
pub mod sg;

use nalgebra::DMatrix;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::scalar::{Dual, Real};

pub use ibr::IbrModel;
pub use passive::{
    linearize_passive, BusCapacitor, IdealSource, PassiveElement, RlLoad, SeriesRl, TransformerT,
};
pub use sg::SgModel;

/// Linear time-invariant model with named signals.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct StateSpaceModel {
    pub a: DMatrix<f64>,
    pub b: DMatrix<f64>,
    pub c: DMatrix<f64>,
    pub d: DMatrix<f64>,
    pub state_names: Vec<String>,
    pub input_names: Vec<String>,
    pub output_names: Vec<String>,
}

impl StateSpaceModel {
    pub fn order(&self) -> usize {
        self.a.nrows()
    }
}

/// Where an input port takes its signal from.
#[derive(Clone, Debug, PartialEq, Eq)]
pub enum InPort {
    /// Voltage phasor of a node.
    Voltage(String),
    /// Net current delivered by the network into the element that defines
    /// the node voltage.
    Injection(String),
    /// Scalar external reference.
    Reference(String),
}

impl InPort {
    pub fn width(&self) -> usize {
        match self {
            InPort::Reference(_) => 1,
            _ => 2,
        }
    }
}

/// What an output port drives.
#[derive(Clone, Debug, PartialEq)]
pub enum OutPort {
    /// Defines the voltage phasor of a node.
    Voltage(String),
    /// Current phasor entering (`sign = +1`) or leaving (`sign = -1`) a node.
    Current { node: String, sign: f64 },
}

#[derive(Clone, Debug)]
pub enum Model {
    Series(SeriesRl),
    Transformer(TransformerT),
    Load(RlLoad),
    Capacitor(BusCapacitor),
    Source(IdealSource),
    Sg(SgModel),
    Ibr(IbrModel),
}

/// Common interface of the concrete models.
pub trait Dynamics {
    fn state_names(&self) -> Vec<String>;
    fn input_names(&self) -> Vec<String>;
    fn output_names(&self) -> Vec<String>;
    fn eval<T: Real>(&self, x: &[T], u: &[T], dx: &mut [T], y: &mut [T]);
    /// Tangent of the state under a common rotation of every phasor and
    /// angle in the global frame.
    fn rotation(&self, x: &[f64]) -> Vec<f64>;
}

macro_rules! dispatch {
    ($self:expr, $m:ident => $body:expr) => {
        match $self {
            Model::Series($m) => $body,
            Model::Transformer($m) => $body,
            Model::Load($m) => $body,
            Model::Capacitor($m) => $body,
            Model::Source($m) => $body,
            Model::Sg($m) => $body,
            Model::Ibr($m) => $body,
        }
    };
}

/// A model bound to the network through its ports.
#[derive(Clone, Debug)]
pub struct Subsystem {
    pub name: String,
    pub model: Model,
    pub inputs: Vec<InPort>,
    pub outputs: Vec<OutPort>,
}

impl Subsystem {
    pub fn n_states(&self) -> usize {
        dispatch!(&self.model, m => m.state_names().len())
    }

    pub fn n_inputs(&self) -> usize {
        self.inputs.iter().map(InPort::width).sum()
    }

    pub fn n_outputs(&self) -> usize {
        2 * self.outputs.len()
    }

    pub fn state_names(&self) -> Vec<String> {
        dispatch!(&self.model, m => m.state_names())
            .into_iter()
            .map(|s| format!("{}.{}", self.name, s))
            .collect()
    }

    pub fn input_names(&self) -> Vec<String> {
        dispatch!(&self.model, m => m.input_names())
            .into_iter()
            .map(|s| format!("{}.{}", self.name, s))
            .collect()
    }

    pub fn output_names(&self) -> Vec<String> {
        dispatch!(&self.model, m => m.output_names())
            .into_iter()
            .map(|s| format!("{}.{}", self.name, s))
            .collect()
    }

    pub fn eval<T: Real>(&self, x: &[T], u: &[T], dx: &mut [T], y: &mut [T]) {
        dispatch!(&self.model, m => m.eval(x, u, dx, y))
    }

    pub fn rotation(&self, x: &[f64]) -> Vec<f64> {
        dispatch!(&self.model, m => m.rotation(x))
    }

    pub fn is_dynamic_device(&self) -> bool {
        matches!(self.model, Model::Sg(_) | Model::Ibr(_))
    }

    fn check_dims(&self, x: &[f64], u: &[f64]) -> Result<()> {
        if x.len() != self.n_states() || u.len() != self.n_inputs() {
            return Err(Error::Domain(format!(
                "{}: expected {} states and {} inputs, got {} and {}",
                self.name,
                self.n_states(),
                self.n_inputs(),
                x.len(),
                u.len()
            )));
        }
        if x.iter().chain(u).any(|v| !v.is_finite()) {
            return Err(Error::NonFinite(format!("state or input of {}", self.name)));
        }
        Ok(())
    }
}

/// State derivative and outputs of a subsystem.
pub fn eval_nonlinear_dynamics(
    sub: &Subsystem,
    x: &[f64],
    u: &[f64],
) -> Result<(Vec<f64>, Vec<f64>)> {
    sub.check_dims(x, u)?;
    let mut dx = vec![0.0; sub.n_states()];
    let mut y = vec![0.0; sub.n_outputs()];
    sub.eval(x, u, &mut dx, &mut y);
    if dx.iter().chain(&y).any(|v| !v.is_finite()) {
        return Err(Error::NonFinite(format!("dynamics of {}", sub.name)));
    }
    Ok((dx, y))
}

/// Exact Jacobians of a subsystem at `(x0, u0)` by forward-mode
/// differentiation, one tangent direction per state and input.
pub fn linearize_device(sub: &Subsystem, x0: &[f64], u0: &[f64]) -> Result<StateSpaceModel> {
    sub.check_dims(x0, u0)?;
    let n = sub.n_states();
    let m = sub.n_inputs();
    let p = sub.n_outputs();
    let mut a = DMatrix::zeros(n, n);
    let mut b = DMatrix::zeros(n, m);
    let mut c = DMatrix::zeros(p, n);
    let mut d = DMatrix::zeros(p, m);
    let mut xd: Vec<Dual> = x0.iter().map(|&v| Dual::cst(v)).collect();
    let mut ud: Vec<Dual> = u0.iter().map(|&v| Dual::cst(v)).collect();
    let mut dx = vec![Dual::cst(0.0); n];
    let mut y = vec![Dual::cst(0.0); p];
    for j in 0..n + m {
        if j < n {
            xd[j].du = 1.0;
        } else {
            ud[j - n].du = 1.0;
        }
        sub.eval(&xd, &ud, &mut dx, &mut y);
        for i in 0..n {
            if j < n {
                a[(i, j)] = dx[i].du;
            } else {
                b[(i, j - n)] = dx[i].du;
            }
        }
        for i in 0..p {
            if j < n {
                c[(i, j)] = y[i].du;
            } else {
                d[(i, j - n)] = y[i].du;
            }
        }
        if j < n {
            xd[j].du = 0.0;
        } else {
            ud[j - n].du = 0.0;
        }
    }
    let all = a.iter().chain(b.iter()).chain(c.iter()).chain(d.iter());
    if all.into_iter().any(|v| !v.is_finite()) {
        return Err(Error::Singular(format!(
            "linearization of {} is not finite",
            sub.name
        )));
    }
    Ok(StateSpaceModel {
        a,
        b,
        c,
        d,
        state_names: sub.state_names(),
        input_names: sub.input_names(),
        output_names: sub.output_names(),
    })
}

pub(crate) fn phasor_names(prefix: &str) -> [String; 2] {
    [format!("{prefix}_D"), format!("{prefix}_Q")]
}
