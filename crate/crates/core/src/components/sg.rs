//! Synchronous generator: two-axis subtransient machine with algebraic
//! stator, swing equation, single-reheat steam governor and IEEE Type 1
//! exciter.
//!
//! Machine quantities are per-unit on the machine rating; the port current
//! is on the system base and converted with `scale = S_system / S_machine`.
//! The machine frame is related to the global frame by
//! `V_global = (V_d + j V_q) exp(j (delta - pi/2))`.

use std::f64::consts::FRAC_PI_2;

use super::{phasor_names, Dynamics};
use crate::error::{Error, Result};
use crate::linalg::C64;
use crate::netmodel::{AvrParams, GovernorParams, MachineParams, SgParams};
use crate::scalar::{Cx, Real};

pub const SG_STATES: [&str; 13] = [
    "delta", "omega", "e_q1", "e_d1", "psi_1d", "psi_2q", "p_gv", "p_hp", "p_rh", "v_m", "e_fd",
    "r_f", "v_r",
];

#[derive(Clone, Debug, PartialEq)]
pub struct SgModel {
    pub machine: MachineParams,
    pub governor: GovernorParams,
    pub avr: AvrParams,
    pub omega_b: f64,
    /// System base over machine base.
    pub scale: f64,
}

impl SgModel {
    pub fn new(p: &SgParams, omega_b: f64, s_system: f64, rating: f64) -> Self {
        Self {
            machine: p.machine.clone(),
            governor: p.governor.clone(),
            avr: p.avr.clone(),
            omega_b,
            scale: s_system / rating,
        }
    }

    /// Steady state holding terminal voltage `v` (global frame) while the
    /// machine injects complex power `s` (system base) into the network.
    /// Returns the states and the references `[P_ref, V_ref]`.
    pub fn equilibrium(&self, id: &str, v: C64, s: C64) -> Result<(Vec<f64>, [f64; 2])> {
        let m = &self.machine;
        if v.norm() <= 0.0 {
            return Err(Error::Equilibrium {
                device: id.into(),
                reason: "zero terminal voltage".into(),
            });
        }
        let i_gen = (s / v).conj() * self.scale;
        let e = v + C64::new(m.rs, m.xq) * i_gen;
        let delta = e.arg();
        let to_machine = C64::from_polar(1.0, -(delta - FRAC_PI_2));
        let vm = v * to_machine;
        let im = i_gen * to_machine;
        let (vd, vq, id_, iq) = (vm.re, vm.im, im.re, im.im);
        let ed1 = (m.xq - m.xq_p) * iq;
        let eq1 = vq + m.rs * iq + m.xd_p * id_;
        let psi1d = eq1 - (m.xd_p - m.xls) * id_;
        let psi2q = -ed1 - (m.xq_p - m.xls) * iq;
        let efd = eq1 + (m.xd - m.xd_p) * id_;
        let te = vd * id_ + vq * iq + m.rs * (id_ * id_ + iq * iq);
        if let Some(max) = self.avr.efd_max {
            if efd > max {
                return Err(Error::Equilibrium {
                    device: id.into(),
                    reason: format!("field voltage {efd:.4} exceeds limit {max}"),
                });
            }
        }
        let a = &self.avr;
        let v_r = a.k_e * efd;
        let r_f = a.k_f / a.t_f * efd;
        let v_meas = v.norm();
        let v_ref = v_meas + v_r / a.k_a.max(f64::MIN_POSITIVE);
        let x = vec![
            delta, 1.0, eq1, ed1, psi1d, psi2q, te, te, te, v_meas, efd, r_f, v_r,
        ];
        Ok((x, [te, v_ref]))
    }
}

impl Dynamics for SgModel {
    fn state_names(&self) -> Vec<String> {
        SG_STATES.iter().map(|s| s.to_string()).collect()
    }

    fn input_names(&self) -> Vec<String> {
        let mut v = vec!["p_ref".to_string(), "v_ref".to_string()];
        v.extend(phasor_names("i"));
        v
    }

    fn output_names(&self) -> Vec<String> {
        phasor_names("v").to_vec()
    }

    fn eval<T: Real>(&self, x: &[T], u: &[T], dx: &mut [T], y: &mut [T]) {
        let m = &self.machine;
        let g = &self.governor;
        let a = &self.avr;
        let [delta, w, eq1, ed1, psi1d, psi2q, pgv, php, prh, vmeas, efd, rf, vr] = [
            x[0], x[1], x[2], x[3], x[4], x[5], x[6], x[7], x[8], x[9], x[10], x[11], x[12],
        ];
        let (pref, vref) = (u[0], u[1]);
        let i_in = Cx::new(u[2], u[3]);

        let to_global = Cx::expj(delta - FRAC_PI_2);
        let im = (-i_in).scale_f(self.scale) * to_global.conj();
        let (id_, iq) = (im.re, im.im);

        let k1d = (m.xd_pp - m.xls) / (m.xd_p - m.xls);
        let k2d = (m.xd_p - m.xd_pp) / (m.xd_p - m.xls);
        let k1q = (m.xq_pp - m.xls) / (m.xq_p - m.xls);
        let k2q = (m.xq_p - m.xq_pp) / (m.xq_p - m.xls);
        let psid = -(id_ * m.xd_pp) + eq1 * k1d + psi1d * k2d;
        let psiq = -(iq * m.xq_pp) - ed1 * k1q + psi2q * k2q;
        let vd = -(id_ * m.rs) - w * psiq;
        let vq = -(iq * m.rs) + w * psid;
        let v = Cx::new(vd, vq) * to_global;
        let te = psid * iq - psiq * id_;
        let pm = php * g.f_hp + prh * (1.0 - g.f_hp);
        let tm = pm / w;
        let dw = w - 1.0;

        let cd = (m.xd_p - m.xd_pp) / ((m.xd_p - m.xls) * (m.xd_p - m.xls));
        let cq = (m.xq_p - m.xq_pp) / ((m.xq_p - m.xls) * (m.xq_p - m.xls));
        dx[0] = dw * self.omega_b;
        dx[1] = (tm - te - dw * m.d) / (2.0 * m.h);
        dx[2] = (-eq1 - (id_ - (psi1d + id_ * (m.xd_p - m.xls) - eq1) * cd) * (m.xd - m.xd_p)
            + efd)
            / m.td0_p;
        dx[3] =
            (-ed1 + (iq - (psi2q + iq * (m.xq_p - m.xls) + ed1) * cq) * (m.xq - m.xq_p)) / m.tq0_p;
        dx[4] = (-psi1d + eq1 - id_ * (m.xd_p - m.xls)) / m.td0_pp;
        dx[5] = (-psi2q - ed1 - iq * (m.xq_p - m.xls)) / m.tq0_pp;
        dx[6] = (-pgv + pref - dw / g.droop) / g.t_g;
        dx[7] = (-php + pgv) / g.t_ch;
        dx[8] = (-prh + php) / g.t_rh;
        dx[9] = (-vmeas + v.abs()) / a.t_r;
        dx[10] = (-(efd * a.k_e) + vr) / a.t_e;
        dx[11] = (-rf + efd * (a.k_f / a.t_f)) / a.t_f;
        dx[12] =
            (-vr + rf * a.k_a - efd * (a.k_a * a.k_f / a.t_f) + (vref - vmeas) * a.k_a) / a.t_a;
        y[0] = v.re;
        y[1] = v.im;
    }

    fn rotation(&self, _x: &[f64]) -> Vec<f64> {
        let mut r = vec![0.0; SG_STATES.len()];
        r[0] = 1.0;
        r
    }
}
