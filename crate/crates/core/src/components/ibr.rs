//! Grid-following inverter: L filter with damped shunt capacitor, dc link,
//! SRF-PLL, P/omega and Q/v droops on filtered measurements, power-to-current transformation, dq
//! current control and dc-voltage control.
//!
//! Electrical states live in the global frame; control acts in the PLL
//! frame at angle `theta`. Quantities are per-unit on the unit base of the
//! (possibly aggregated) model; the port current is on the system base and
//! converted with `scale = S_system / S_unit`.

use super::{phasor_names, Dynamics};
use crate::error::{Error, Result};
use crate::linalg::C64;
use crate::netmodel::{AggregatedIbr, DcVariant, IbrControlParams, IbrPhysicalParams};
use crate::scalar::{Cx, Real};

/// Optional integrator states; each is present only with a nonzero gain.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Integrator {
    Pll,
    Current,
    Dc,
}

#[derive(Clone, Debug, PartialEq)]
pub struct IbrModel {
    pub physical: IbrPhysicalParams,
    pub control: IbrControlParams,
    pub omega_b: f64,
    pub scale: f64,
    /// Values held by integrators whose gain is zero, set at equilibrium:
    /// PLL, current d, current q, dc.
    pub frozen: [f64; 4],
}

struct Layout {
    meas: Option<usize>,
    pll: Option<usize>,
    cur: Option<usize>,
    dc: Option<usize>,
    n: usize,
}

impl IbrModel {
    pub fn new(agg: &AggregatedIbr, omega_b: f64, s_system: f64) -> Self {
        Self {
            physical: agg.physical.clone(),
            control: agg.control.clone(),
            omega_b,
            scale: s_system / agg.physical.s_base,
            frozen: [0.0; 4],
        }
    }

    pub fn has(&self, which: Integrator) -> bool {
        match which {
            Integrator::Pll => self.control.k_i_pll != 0.0,
            Integrator::Current => self.control.k_i_i != 0.0,
            Integrator::Dc => self.control.dc_gains().1 != 0.0,
        }
    }

    fn layout(&self) -> Layout {
        let mut n = 6;
        let mut take = |present: bool, w: usize| {
            if present {
                let k = n;
                n += w;
                Some(k)
            } else {
                None
            }
        };
        let meas = take(self.control.t_m > 0.0, 2);
        let pll = take(self.has(Integrator::Pll), 1);
        let cur = take(self.has(Integrator::Current), 2);
        let dc = take(self.has(Integrator::Dc), 1);
        Layout {
            meas,
            pll,
            cur,
            dc,
            n,
        }
    }

    /// Filter shunt admittance `1 / (R_f + 1/(j C_f))`, unit base.
    pub fn filter_admittance(&self) -> C64 {
        C64::new(1.0, 0.0) / C64::new(self.physical.r_f, -1.0 / self.physical.c_f)
    }

    /// Steady state at PCC voltage `v` (global frame) while injecting complex
    /// power `s` (system base). Fixes frozen integrator values. Returns the
    /// states and the references `[I_dc, V_ref]`.
    pub fn equilibrium(&mut self, id: &str, v: C64, s: C64) -> Result<(Vec<f64>, [f64; 2])> {
        let ph = &self.physical;
        let c = &self.control;
        if v.norm() <= 0.0 {
            return Err(Error::Equilibrium {
                device: id.into(),
                reason: "zero PCC voltage".into(),
            });
        }
        let s_dev = s * self.scale;
        let i_in = -(s_dev / v).conj();
        let i_cf = v * self.filter_admittance();
        let v_c = v - i_cf * ph.r_f;
        let i_l = i_cf - i_in;
        let theta = v.arg();
        let rot = C64::from_polar(1.0, -theta);
        let vp = v * rot;
        let ilp = i_l * rot;
        let v_d = vp.re;
        let p_ref = v_d * ilp.re;
        let q_ref = -v_d * ilp.im;
        let v_ref = if c.k_qv > 0.0 {
            v_d + (q_ref - c.q_ref) / c.k_qv
        } else {
            if (q_ref - c.q_ref).abs() > 1e-6 {
                return Err(Error::Equilibrium {
                    device: id.into(),
                    reason: "reactive power differs from Q_ref with zero Q/v droop".into(),
                });
            }
            v_d
        };
        let v_dc = c.v_dc_ref;
        let p_conv = p_ref + ph.r * i_l.norm_sqr();
        let i_dc = p_conv / v_dc;
        if !(i_dc.is_finite() && v_ref.is_finite()) {
            return Err(Error::Equilibrium {
                device: id.into(),
                reason: "non-finite references".into(),
            });
        }
        let xi_cur = ilp * ph.r;
        let xi_dc = -p_ref;
        self.frozen = [0.0, xi_cur.re, xi_cur.im, xi_dc];
        let lay = self.layout();
        let mut x = vec![0.0; lay.n];
        x[0] = i_l.re;
        x[1] = i_l.im;
        x[2] = v_c.re;
        x[3] = v_c.im;
        x[4] = v_dc;
        x[5] = theta;
        if let Some(k) = lay.meas {
            x[k] = 1.0;
            x[k + 1] = v_d;
        }
        if let Some(k) = lay.pll {
            x[k] = 0.0;
        }
        if let Some(k) = lay.cur {
            x[k] = xi_cur.re;
            x[k + 1] = xi_cur.im;
        }
        if let Some(k) = lay.dc {
            x[k] = xi_dc;
        }
        Ok((x, [i_dc, v_ref]))
    }
}

impl Dynamics for IbrModel {
    fn state_names(&self) -> Vec<String> {
        let mut v = [phasor_names("i_l"), phasor_names("v_c")].concat();
        v.push("v_dc".into());
        v.push("theta_pll".into());
        let lay = self.layout();
        if lay.meas.is_some() {
            v.push("omega_m".into());
            v.push("v_m".into());
        }
        if lay.pll.is_some() {
            v.push("xi_pll".into());
        }
        if lay.cur.is_some() {
            v.push("xi_id".into());
            v.push("xi_iq".into());
        }
        if lay.dc.is_some() {
            v.push("xi_dc".into());
        }
        v
    }

    fn input_names(&self) -> Vec<String> {
        let mut v = vec!["i_dc".to_string(), "v_ref".to_string()];
        v.extend(phasor_names("i"));
        v
    }

    fn output_names(&self) -> Vec<String> {
        phasor_names("v").to_vec()
    }

    fn eval<T: Real>(&self, x: &[T], u: &[T], dx: &mut [T], y: &mut [T]) {
        let ph = &self.physical;
        let c = &self.control;
        let w = self.omega_b;
        let lay = self.layout();
        let i_l = Cx::new(x[0], x[1]);
        let v_c = Cx::new(x[2], x[3]);
        let v_dc = x[4];
        let theta = x[5];
        let xi_pll = lay.pll.map(|k| x[k]).unwrap_or(T::cst(self.frozen[0]));
        let xi_cur = lay
            .cur
            .map(|k| Cx::new(x[k], x[k + 1]))
            .unwrap_or(Cx::from_f64(self.frozen[1], self.frozen[2]));
        let xi_dc = lay.dc.map(|k| x[k]).unwrap_or(T::cst(self.frozen[3]));
        let (i_dc, v_ref) = (u[0], u[1]);
        let i_in = Cx::new(u[2], u[3]).scale_f(self.scale);

        let i_cf = i_l + i_in;
        let v = v_c + i_cf.scale_f(ph.r_f);

        let to_pll = Cx::expj(-theta);
        let vp = v * to_pll;
        let ilp = i_l * to_pll;

        let e_pll = -vp.im;
        let w_pll = -(e_pll * c.k_p_pll + xi_pll) + 1.0;

        let (kp_dc, ki_dc) = c.dc_gains();
        let e_dc = match c.dc_variant {
            DcVariant::Vdc => -v_dc + c.v_dc_ref,
            DcVariant::Vdc2 => -(v_dc * v_dc) + c.v_dc_ref * c.v_dc_ref,
        };
        let p_dc = -(e_dc * kp_dc + xi_dc);
        let (w_m, v_m) = match lay.meas {
            Some(k) => (x[k], x[k + 1]),
            None => (w_pll, vp.re),
        };
        let p_ref = p_dc + (-w_m + 1.0) * c.k_pw;
        let q_ref = (v_ref - v_m) * c.k_qv + c.q_ref;
        let i_ref = Cx::new(p_ref / vp.re, -(q_ref / vp.re));
        let e_i = i_ref - ilp;
        let v_conv_p = vp + ilp.rot90().scale_f(ph.l) + e_i.scale_f(c.k_p_i) + xi_cur;
        let v_conv = v_conv_p * Cx::expj(theta);

        let di = (v_conv - v - i_l.scale_f(ph.r)).scale_f(w / ph.l) - i_l.rot90().scale_f(w);
        let dv = i_cf.scale_f(w / ph.c_f) - v_c.rot90().scale_f(w);
        let p_conv = v_conv.re * i_l.re + v_conv.im * i_l.im;
        let tau = ph.tau_dc();

        dx[0] = di.re;
        dx[1] = di.im;
        dx[2] = dv.re;
        dx[3] = dv.im;
        dx[4] = (i_dc * v_dc - p_conv) / (v_dc * tau);
        dx[5] = (w_pll - 1.0) * w;
        if let Some(k) = lay.meas {
            dx[k] = (w_pll - w_m) / c.t_m;
            dx[k + 1] = (vp.re - v_m) / c.t_m;
        }
        if let Some(k) = lay.pll {
            dx[k] = e_pll * c.k_i_pll;
        }
        if let Some(k) = lay.cur {
            dx[k] = e_i.re * c.k_i_i;
            dx[k + 1] = e_i.im * c.k_i_i;
        }
        if let Some(k) = lay.dc {
            dx[k] = e_dc * ki_dc;
        }
        y[0] = v.re;
        y[1] = v.im;
    }

    fn rotation(&self, x: &[f64]) -> Vec<f64> {
        let mut r = vec![0.0; x.len()];
        r[0] = -x[1];
        r[1] = x[0];
        r[2] = -x[3];
        r[3] = x[2];
        r[5] = 1.0;
        r
    }
}
