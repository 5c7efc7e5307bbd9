//! Network data model, per-unit conventions, IBR aggregation, scenario
//! synthesis and Thévenin reduction.
//!
//! All branch quantities in a [`NetworkModel`] are per-unit on the system
//! power base and the base voltage of the buses they touch. Device constants
//! are per-unit on the device's own rating and are converted when the
//! device model is built.

use std::collections::{BTreeMap, BTreeSet, HashMap, VecDeque};
use std::f64::consts::PI;
use std::path::Path;

use nalgebra::DMatrix;
use rand::RngCore;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::de::DeserializeOwned;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::linalg::{complex_solve, C64};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub enum BusRole {
    #[serde(rename = "slack")]
    Slack,
    PV,
    PQ,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Bus {
    pub id: String,
    pub role: BusRole,
    /// kV
    pub base_voltage: f64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub v_ref: Option<f64>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", content = "params", rename_all = "snake_case")]
pub enum BranchElement {
    PiLine {
        r: f64,
        x: f64,
        b_total: f64,
    },
    Transformer {
        r1: f64,
        x1: f64,
        r2: f64,
        x2: f64,
        r_m: f64,
        x_m: f64,
    },
    RlLoad {
        r: f64,
        x: f64,
    },
    ShuntCap {
        b: f64,
    },
}

impl BranchElement {
    pub fn kind_name(&self) -> &'static str {
        match self {
            BranchElement::PiLine { .. } => "pi_line",
            BranchElement::Transformer { .. } => "transformer",
            BranchElement::RlLoad { .. } => "rl_load",
            BranchElement::ShuntCap { .. } => "shunt_cap",
        }
    }

    fn terminal_count(&self) -> usize {
        match self {
            BranchElement::PiLine { .. } | BranchElement::Transformer { .. } => 2,
            BranchElement::RlLoad { .. } | BranchElement::ShuntCap { .. } => 1,
        }
    }

    fn values(&self) -> Vec<(&'static str, f64)> {
        match *self {
            BranchElement::PiLine { r, x, b_total } => {
                vec![("r", r), ("x", x), ("b_total", b_total)]
            }
            BranchElement::Transformer {
                r1,
                x1,
                r2,
                x2,
                r_m,
                x_m,
            } => vec![
                ("r1", r1),
                ("x1", x1),
                ("r2", r2),
                ("x2", x2),
                ("r_m", r_m),
                ("x_m", x_m),
            ],
            BranchElement::RlLoad { r, x } => vec![("r", r), ("x", x)],
            BranchElement::ShuntCap { b } => vec![("b", b)],
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Branch {
    pub id: String,
    pub terminals: Vec<String>,
    #[serde(flatten)]
    pub element: BranchElement,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub enum DeviceKind {
    #[serde(rename = "SG")]
    Sg,
    #[serde(rename = "IBR")]
    Ibr,
    #[serde(rename = "thevenin_source")]
    TheveninSource,
}

/// Sixth-order machine constants, per-unit on the machine rating.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct MachineParams {
    pub xd: f64,
    pub xd_p: f64,
    pub xd_pp: f64,
    pub xq: f64,
    pub xq_p: f64,
    pub xq_pp: f64,
    pub xls: f64,
    pub rs: f64,
    pub td0_p: f64,
    pub td0_pp: f64,
    pub tq0_p: f64,
    pub tq0_pp: f64,
    /// Inertia constant, s.
    pub h: f64,
    /// Speed damping, pu torque per pu speed.
    pub d: f64,
}

impl Default for MachineParams {
    fn default() -> Self {
        Self {
            xd: 1.8,
            xd_p: 0.3,
            xd_pp: 0.25,
            xq: 1.7,
            xq_p: 0.55,
            xq_pp: 0.25,
            xls: 0.2,
            rs: 0.0025,
            td0_p: 8.0,
            td0_pp: 0.03,
            tq0_p: 0.4,
            tq0_pp: 0.05,
            h: 6.5,
            d: 0.0,
        }
    }
}

/// Single-reheat steam turbine with speed-droop governor.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct GovernorParams {
    pub droop: f64,
    pub t_g: f64,
    pub t_ch: f64,
    pub t_rh: f64,
    pub f_hp: f64,
}

impl Default for GovernorParams {
    fn default() -> Self {
        Self {
            droop: 0.05,
            t_g: 0.2,
            t_ch: 0.3,
            t_rh: 7.0,
            f_hp: 0.3,
        }
    }
}

/// IEEE Type 1 exciter, saturation omitted.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct AvrParams {
    pub k_a: f64,
    pub t_a: f64,
    pub k_e: f64,
    pub t_e: f64,
    pub k_f: f64,
    pub t_f: f64,
    pub t_r: f64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub efd_max: Option<f64>,
}

impl Default for AvrParams {
    fn default() -> Self {
        Self {
            k_a: 20.0,
            t_a: 0.2,
            k_e: 1.0,
            t_e: 0.314,
            k_f: 0.063,
            t_f: 0.35,
            t_r: 0.02,
            efd_max: None,
        }
    }
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct SgParams {
    pub machine: MachineParams,
    #[serde(default)]
    pub governor: GovernorParams,
    #[serde(default)]
    pub avr: AvrParams,
}

/// Physical constants of one inverter unit.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct IbrPhysicalParams {
    /// Filter resistance, pu.
    pub r: f64,
    /// Filter inductance, pu.
    pub l: f64,
    /// Filter capacitance, pu.
    pub c_f: f64,
    /// Filter damping resistance in series with `c_f`, pu.
    pub r_f: f64,
    /// dc-link capacitance, F.
    pub c: f64,
    /// dc source current, A. Set from the operating point.
    #[serde(default)]
    pub i_dc: f64,
    /// MVA
    pub s_base: f64,
    /// V
    pub v_base_ac: f64,
    /// V
    pub v_base_dc: f64,
}

impl IbrPhysicalParams {
    /// Unit of the reference table: 5 MVA, 660 V ac, 1500 V dc.
    pub fn reference_unit() -> Self {
        Self {
            r: 0.05,
            l: 0.15,
            c_f: 0.05,
            r_f: 0.0016,
            c: 0.015,
            i_dc: 0.0,
            s_base: 5.0,
            v_base_ac: 660.0,
            v_base_dc: 1500.0,
        }
    }

    /// dc-link energy time constant `C V_dc,base^2 / S_base`, seconds.
    pub fn tau_dc(&self) -> f64 {
        self.c * self.v_base_dc * self.v_base_dc / (self.s_base * 1e6)
    }

    /// dc current base, A.
    pub fn i_dc_base(&self) -> f64 {
        self.s_base * 1e6 / self.v_base_dc
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum DcVariant {
    Vdc,
    Vdc2,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct IbrControlParams {
    pub k_p_pll: f64,
    pub k_i_pll: f64,
    pub k_p_i: f64,
    pub k_i_i: f64,
    pub dc_variant: DcVariant,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub k_p_dc: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub k_i_dc: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub k_p_2dc: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub k_i_2dc: Option<f64>,
    /// P/omega droop, pu power per pu frequency.
    #[serde(rename = "k_P")]
    pub k_pw: f64,
    /// Q/v droop, pu reactive power per pu voltage.
    #[serde(rename = "k_Q")]
    pub k_qv: f64,
    /// Reactive power reference at nominal voltage, pu.
    #[serde(default)]
    pub q_ref: f64,
    /// dc voltage reference, pu.
    #[serde(default = "one")]
    pub v_dc_ref: f64,
    /// Time constant of the first-order filters on the frequency and
    /// voltage measurements feeding the droops, s. Zero feeds them directly.
    #[serde(default = "default_t_m")]
    pub t_m: f64,
}

fn one() -> f64 {
    1.0
}

fn default_t_m() -> f64 {
    0.02
}

/// Canonical names of the tunable IBR gains.
pub const GAIN_NAMES: [&str; 10] = [
    "kp_pll", "ki_pll", "kp_i", "ki_i", "kp_dc", "ki_dc", "kp_2dc", "ki_2dc", "k_P", "k_Q",
];

/// Map accepted spellings (`k_p_pll`, `kp_pll`, ...) to the canonical name.
pub fn canonical_gain_name(name: &str) -> Result<&'static str> {
    let squashed: String = name.chars().filter(|c| *c != '_').collect();
    let found = match squashed.as_str() {
        "kppll" => "kp_pll",
        "kipll" => "ki_pll",
        "kpi" => "kp_i",
        "kii" => "ki_i",
        "kpdc" => "kp_dc",
        "kidc" => "ki_dc",
        "kp2dc" => "kp_2dc",
        "ki2dc" => "ki_2dc",
        "kP" => "k_P",
        "kQ" => "k_Q",
        _ => {
            return Err(Error::Validation(format!(
                "unknown parameter name '{name}'"
            )))
        }
    };
    Ok(found)
}

impl IbrControlParams {
    /// Gains used when a study does not supply its own.
    pub fn nominal(variant: DcVariant) -> Self {
        let (dc, dc2) = match variant {
            DcVariant::Vdc => ((Some(1.5), Some(40.0)), (None, None)),
            DcVariant::Vdc2 => ((None, None), (Some(0.75), Some(40.0))),
        };
        Self {
            k_p_pll: 0.1,
            k_i_pll: 2.0,
            k_p_i: 1.0,
            k_i_i: 100.0,
            dc_variant: variant,
            k_p_dc: dc.0,
            k_i_dc: dc.1,
            k_p_2dc: dc2.0,
            k_i_2dc: dc2.1,
            k_pw: 1.0 / 0.05,
            k_qv: 1.0 / 1.1,
            q_ref: 0.0,
            v_dc_ref: 1.0,
            t_m: default_t_m(),
        }
    }

    /// Active dc-voltage loop gains `(k_p, k_i)`.
    pub fn dc_gains(&self) -> (f64, f64) {
        match self.dc_variant {
            DcVariant::Vdc => (self.k_p_dc.unwrap_or(0.0), self.k_i_dc.unwrap_or(0.0)),
            DcVariant::Vdc2 => (self.k_p_2dc.unwrap_or(0.0), self.k_i_2dc.unwrap_or(0.0)),
        }
    }

    pub fn get(&self, name: &str) -> Result<f64> {
        let v = match canonical_gain_name(name)? {
            "kp_pll" => self.k_p_pll,
            "ki_pll" => self.k_i_pll,
            "kp_i" => self.k_p_i,
            "ki_i" => self.k_i_i,
            "kp_dc" => self.inactive_check(DcVariant::Vdc, name, self.k_p_dc)?,
            "ki_dc" => self.inactive_check(DcVariant::Vdc, name, self.k_i_dc)?,
            "kp_2dc" => self.inactive_check(DcVariant::Vdc2, name, self.k_p_2dc)?,
            "ki_2dc" => self.inactive_check(DcVariant::Vdc2, name, self.k_i_2dc)?,
            "k_P" => self.k_pw,
            "k_Q" => self.k_qv,
            _ => unreachable!(),
        };
        Ok(v)
    }

    fn inactive_check(&self, variant: DcVariant, name: &str, v: Option<f64>) -> Result<f64> {
        if self.dc_variant != variant {
            return Err(Error::Validation(format!(
                "parameter '{name}' is inactive for dc variant {:?}",
                self.dc_variant
            )));
        }
        Ok(v.unwrap_or(0.0))
    }

    pub fn set(&mut self, name: &str, value: f64) -> Result<()> {
        let canon = canonical_gain_name(name)?;
        match canon {
            "kp_dc" | "ki_dc" => {
                self.inactive_check(DcVariant::Vdc, name, None)?;
            }
            "kp_2dc" | "ki_2dc" => {
                self.inactive_check(DcVariant::Vdc2, name, None)?;
            }
            _ => {}
        }
        match canon {
            "kp_pll" => self.k_p_pll = value,
            "ki_pll" => self.k_i_pll = value,
            "kp_i" => self.k_p_i = value,
            "ki_i" => self.k_i_i = value,
            "kp_dc" => self.k_p_dc = Some(value),
            "ki_dc" => self.k_i_dc = Some(value),
            "kp_2dc" => self.k_p_2dc = Some(value),
            "ki_2dc" => self.k_i_2dc = Some(value),
            "k_P" => self.k_pw = value,
            "k_Q" => self.k_qv = value,
            _ => unreachable!(),
        }
        Ok(())
    }

    pub fn validate(&self, dev: &str) -> Result<()> {
        let gains = [
            ("k_p_pll", Some(self.k_p_pll)),
            ("k_i_pll", Some(self.k_i_pll)),
            ("k_p_i", Some(self.k_p_i)),
            ("k_i_i", Some(self.k_i_i)),
            ("k_p_dc", self.k_p_dc),
            ("k_i_dc", self.k_i_dc),
            ("k_p_2dc", self.k_p_2dc),
            ("k_i_2dc", self.k_i_2dc),
            ("k_P", Some(self.k_pw)),
            ("k_Q", Some(self.k_qv)),
        ];
        for (name, g) in gains {
            if let Some(g) = g {
                if !(g.is_finite() && g >= 0.0) {
                    return Err(Error::Validation(format!(
                        "device {dev}: gain {name} must be finite and >= 0, got {g}"
                    )));
                }
            }
        }
        let vdc_pair = self.k_p_dc.is_some() && self.k_i_dc.is_some();
        let vdc2_pair = self.k_p_2dc.is_some() && self.k_i_2dc.is_some();
        let vdc_any = self.k_p_dc.is_some() || self.k_i_dc.is_some();
        let vdc2_any = self.k_p_2dc.is_some() || self.k_i_2dc.is_some();
        let ok = match self.dc_variant {
            DcVariant::Vdc => vdc_pair && !vdc2_any,
            DcVariant::Vdc2 => vdc2_pair && !vdc_any,
        };
        if !ok {
            return Err(Error::Validation(format!(
                "device {dev}: exactly the {:?} dc gain pair must be given",
                self.dc_variant
            )));
        }
        if !(self.t_m.is_finite() && self.t_m >= 0.0) {
            return Err(Error::Validation(format!(
                "device {dev}: t_m must be finite and >= 0"
            )));
        }
        if !(self.v_dc_ref > 0.0 && self.q_ref.is_finite()) {
            return Err(Error::Validation(format!(
                "device {dev}: invalid references"
            )));
        }
        Ok(())
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct IbrSpec {
    pub physical: IbrPhysicalParams,
    pub control: IbrControlParams,
    /// Number of identical parallel units.
    pub n: u32,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TheveninParams {
    pub r: f64,
    pub x: f64,
    pub v: f64,
}

impl TheveninParams {
    pub fn has_impedance(&self) -> bool {
        self.r != 0.0 || self.x != 0.0
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Device {
    pub id: String,
    pub bus: String,
    pub kind: DeviceKind,
    /// MVA
    pub rating: f64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub sg_params: Option<SgParams>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub ibr: Option<IbrSpec>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub thevenin: Option<TheveninParams>,
}

impl Device {
    /// True when the device fixes the voltage of its own bus.
    pub fn defines_bus_voltage(&self) -> bool {
        match self.kind {
            DeviceKind::Sg | DeviceKind::Ibr => true,
            DeviceKind::TheveninSource => self
                .thevenin
                .as_ref()
                .map(|t| !t.has_impedance())
                .unwrap_or(true),
        }
    }

    pub fn is_generator(&self) -> bool {
        matches!(self.kind, DeviceKind::Sg | DeviceKind::Ibr)
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct NetworkModel {
    #[serde(default)]
    pub name: String,
    pub frequency_hz: f64,
    pub power_base_mva: f64,
    pub buses: Vec<Bus>,
    pub branches: Vec<Branch>,
    pub devices: Vec<Device>,
}

impl NetworkModel {
    /// Nominal angular frequency, rad/s. Also the base angular frequency.
    pub fn omega_nom(&self) -> f64 {
        2.0 * PI * self.frequency_hz
    }

    pub fn bus_index(&self) -> HashMap<&str, usize> {
        self.buses
            .iter()
            .enumerate()
            .map(|(i, b)| (b.id.as_str(), i))
            .collect()
    }

    pub fn device(&self, id: &str) -> Option<&Device> {
        self.devices.iter().find(|d| d.id == id)
    }

    pub fn device_mut(&mut self, id: &str) -> Option<&mut Device> {
        self.devices.iter_mut().find(|d| d.id == id)
    }

    pub fn slack_bus(&self) -> Option<&Bus> {
        self.buses.iter().find(|b| b.role == BusRole::Slack)
    }

    pub fn from_json_str(text: &str) -> Result<Self> {
        parse_json(text, "network")
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let text = std::fs::read_to_string(path)?;
        Self::from_json_str(&text)
    }
}

/// Parse JSON, reporting failures with the byte offset of the error.
pub fn parse_json<T: DeserializeOwned>(text: &str, what: &str) -> Result<T> {
    serde_json::from_str(text).map_err(|e| {
        let offset = byte_offset(text, e.line(), e.column());
        Error::Parse(format!("{what}: {e} (byte offset {offset})"))
    })
}

fn byte_offset(text: &str, line: usize, column: usize) -> usize {
    if line == 0 {
        return 0;
    }
    let mut offset = 0;
    for (i, l) in text.split_inclusive('\n').enumerate() {
        if i + 1 == line {
            return offset + column.saturating_sub(1).min(l.len());
        }
        offset += l.len();
    }
    text.len()
}

fn finite_nonneg(v: f64) -> bool {
    v.is_finite() && v >= 0.0
}

fn finite_pos(v: f64) -> bool {
    v.is_finite() && v > 0.0
}

/// Check every invariant of the network description. Returns the network
/// unchanged on success; otherwise the first violation, naming the element.
pub fn validate_network(net: NetworkModel) -> Result<NetworkModel> {
    let bad = |m: String| Err(Error::Validation(m));
    if !finite_pos(net.frequency_hz) {
        return bad(format!(
            "frequency_hz must be positive, got {}",
            net.frequency_hz
        ));
    }
    if !finite_pos(net.power_base_mva) {
        return bad(format!(
            "power_base_mva must be positive, got {}",
            net.power_base_mva
        ));
    }
    let mut ids = BTreeSet::new();
    for b in &net.buses {
        if !ids.insert(b.id.as_str()) {
            return bad(format!("duplicate bus id {}", b.id));
        }
        if !finite_pos(b.base_voltage) {
            return bad(format!("bus {}: base_voltage must be positive", b.id));
        }
        if matches!(b.role, BusRole::Slack | BusRole::PV) {
            match b.v_ref {
                Some(v) if finite_pos(v) => {}
                _ => {
                    return bad(format!(
                        "bus {}: v_ref must be > 0 for {:?} bus",
                        b.id, b.role
                    ))
                }
            }
        }
    }
    let slack: Vec<&Bus> = net
        .buses
        .iter()
        .filter(|b| b.role == BusRole::Slack)
        .collect();
    match slack.len() {
        0 => return bad("no slack bus".into()),
        1 => {}
        _ => {
            return bad(format!(
                "multiple slack buses: {}",
                slack
                    .iter()
                    .map(|b| b.id.as_str())
                    .collect::<Vec<_>>()
                    .join(", ")
            ))
        }
    }
    let mut branch_ids = BTreeSet::new();
    for br in &net.branches {
        if !branch_ids.insert(br.id.as_str()) {
            return bad(format!("duplicate branch id {}", br.id));
        }
        if br.terminals.len() != br.element.terminal_count() {
            return bad(format!(
                "branch {}: {} needs {} terminal(s), got {}",
                br.id,
                br.element.kind_name(),
                br.element.terminal_count(),
                br.terminals.len()
            ));
        }
        for t in &br.terminals {
            if !ids.contains(t.as_str()) {
                return bad(format!("branch {} references missing bus {}", br.id, t));
            }
        }
        if br.terminals.len() == 2 && br.terminals[0] == br.terminals[1] {
            return bad(format!(
                "branch {} connects bus {} to itself",
                br.id, br.terminals[0]
            ));
        }
        for (name, v) in br.element.values() {
            if !finite_nonneg(v) {
                return bad(format!(
                    "branch {}: {name} must be finite and >= 0, got {v}",
                    br.id
                ));
            }
        }
        let positive: &[(&str, f64)] = &match br.element {
            BranchElement::PiLine { x, .. } => vec![("x", x)],
            BranchElement::Transformer {
                x1, x2, r_m, x_m, ..
            } => vec![("x1", x1), ("x2", x2), ("r_m", r_m), ("x_m", x_m)],
            BranchElement::RlLoad { x, .. } => vec![("x", x)],
            BranchElement::ShuntCap { b } => vec![("b", b)],
        };
        for (name, v) in positive {
            if *v <= 0.0 {
                return bad(format!("branch {}: {name} must be nonzero", br.id));
            }
        }
    }
    let mut dev_ids = BTreeSet::new();
    let mut voltage_owner: HashMap<&str, &str> = HashMap::new();
    let mut thevenin_count = 0;
    for d in &net.devices {
        if !dev_ids.insert(d.id.as_str()) {
            return bad(format!("duplicate device id {}", d.id));
        }
        if !ids.contains(d.bus.as_str()) {
            return bad(format!("device {} references missing bus {}", d.id, d.bus));
        }
        if !finite_pos(d.rating) {
            return bad(format!("device {}: rating must be > 0", d.id));
        }
        match d.kind {
            DeviceKind::Sg => {
                let p = d.sg_params.as_ref().ok_or_else(|| {
                    Error::Validation(format!("device {}: SG without sg_params", d.id))
                })?;
                validate_sg(&d.id, p)?;
            }
            DeviceKind::Ibr => {
                let s = d.ibr.as_ref().ok_or_else(|| {
                    Error::Validation(format!("device {}: IBR without ibr block", d.id))
                })?;
                if s.n < 1 {
                    return bad(format!("device {}: unit count N must be >= 1", d.id));
                }
                validate_ibr_physical(&d.id, &s.physical)?;
                s.control.validate(&d.id)?;
            }
            DeviceKind::TheveninSource => {
                thevenin_count += 1;
                let t = d.thevenin.as_ref().ok_or_else(|| {
                    Error::Validation(format!(
                        "device {}: thevenin_source without thevenin block",
                        d.id
                    ))
                })?;
                if !(finite_nonneg(t.r) && finite_nonneg(t.x) && finite_pos(t.v)) {
                    return bad(format!(
                        "device {}: thevenin r, x must be >= 0 and v > 0",
                        d.id
                    ));
                }
                if t.has_impedance() && t.x <= 0.0 {
                    return bad(format!("device {}: thevenin impedance needs x > 0", d.id));
                }
                if d.bus != slack[0].id {
                    return bad(format!(
                        "device {}: thevenin_source must sit at the slack bus",
                        d.id
                    ));
                }
            }
        }
        if d.defines_bus_voltage() {
            if let Some(other) = voltage_owner.insert(d.bus.as_str(), d.id.as_str()) {
                return bad(format!(
                    "bus {}: devices {} and {} both define the bus voltage",
                    d.bus, other, d.id
                ));
            }
        }
    }
    if thevenin_count > 1 {
        return bad("at most one thevenin_source is supported".into());
    }
    let slack_has_source = net.devices.iter().any(|d| {
        d.bus == slack[0].id && matches!(d.kind, DeviceKind::Sg | DeviceKind::TheveninSource)
    });
    if !slack_has_source {
        return bad(format!(
            "slack bus {} holds no SG or thevenin_source",
            slack[0].id
        ));
    }
    check_connected(&net)?;
    Ok(net)
}

fn validate_sg(id: &str, p: &SgParams) -> Result<()> {
    let m = &p.machine;
    let vals = [
        ("xd", m.xd),
        ("xd_p", m.xd_p),
        ("xd_pp", m.xd_pp),
        ("xq", m.xq),
        ("xq_p", m.xq_p),
        ("xq_pp", m.xq_pp),
        ("xls", m.xls),
        ("td0_p", m.td0_p),
        ("td0_pp", m.td0_pp),
        ("tq0_p", m.tq0_p),
        ("tq0_pp", m.tq0_pp),
        ("h", m.h),
    ];
    for (n, v) in vals {
        if !finite_pos(v) {
            return Err(Error::Validation(format!("device {id}: {n} must be > 0")));
        }
    }
    if !(finite_nonneg(m.rs) && finite_nonneg(m.d)) {
        return Err(Error::Validation(format!(
            "device {id}: rs and d must be >= 0"
        )));
    }
    if !(m.xd > m.xd_p && m.xd_p > m.xd_pp && m.xd_pp > m.xls)
        || !(m.xq >= m.xq_p && m.xq_p > m.xq_pp && m.xq_pp > m.xls)
    {
        return Err(Error::Validation(format!(
            "device {id}: reactances must satisfy x > x' > x'' > xls"
        )));
    }
    let g = &p.governor;
    let a = &p.avr;
    for (n, v) in [
        ("droop", g.droop),
        ("t_g", g.t_g),
        ("t_ch", g.t_ch),
        ("t_rh", g.t_rh),
        ("t_a", a.t_a),
        ("t_e", a.t_e),
        ("t_f", a.t_f),
        ("t_r", a.t_r),
    ] {
        if !finite_pos(v) {
            return Err(Error::Validation(format!("device {id}: {n} must be > 0")));
        }
    }
    if !(0.0..=1.0).contains(&g.f_hp)
        || !finite_nonneg(a.k_a)
        || !finite_nonneg(a.k_f)
        || !a.k_e.is_finite()
    {
        return Err(Error::Validation(format!(
            "device {id}: invalid control constants"
        )));
    }
    Ok(())
}

fn validate_ibr_physical(id: &str, p: &IbrPhysicalParams) -> Result<()> {
    for (n, v) in [
        ("r", p.r),
        ("l", p.l),
        ("c_f", p.c_f),
        ("r_f", p.r_f),
        ("c", p.c),
        ("s_base", p.s_base),
        ("v_base_ac", p.v_base_ac),
        ("v_base_dc", p.v_base_dc),
    ] {
        if !finite_pos(v) {
            return Err(Error::Validation(format!(
                "device {id}: IBR {n} must be > 0, got {v}"
            )));
        }
    }
    if !finite_nonneg(p.i_dc) {
        return Err(Error::Validation(format!(
            "device {id}: IBR i_dc must be >= 0"
        )));
    }
    Ok(())
}

fn check_connected(net: &NetworkModel) -> Result<()> {
    let idx = net.bus_index();
    let n = net.buses.len();
    let mut adj = vec![Vec::new(); n];
    for br in &net.branches {
        if br.terminals.len() == 2 {
            let a = idx[br.terminals[0].as_str()];
            let b = idx[br.terminals[1].as_str()];
            adj[a].push(b);
            adj[b].push(a);
        }
    }
    let mut comp = vec![usize::MAX; n];
    let mut ncomp = 0;
    for s in 0..n {
        if comp[s] != usize::MAX {
            continue;
        }
        let mut q = VecDeque::from([s]);
        comp[s] = ncomp;
        while let Some(u) = q.pop_front() {
            for &v in &adj[u] {
                if comp[v] == usize::MAX {
                    comp[v] = ncomp;
                    q.push_back(v);
                }
            }
        }
        ncomp += 1;
    }
    if ncomp > 1 {
        let slack = net
            .buses
            .iter()
            .position(|b| b.role == BusRole::Slack)
            .unwrap_or(0);
        let island: Vec<&str> = (0..n)
            .filter(|&i| comp[i] != comp[slack])
            .map(|i| net.buses[i].id.as_str())
            .collect();
        return Err(Error::Validation(format!(
            "network is disconnected; island without slack: {}",
            island.join(", ")
        )));
    }
    Ok(())
}

/// Scaling applied to references when N units are aggregated.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ReferenceScaling {
    pub q_ref: f64,
    pub v_dc_ref: f64,
    pub v_d_ref: f64,
    pub omega_ref: f64,
}

#[derive(Clone, Debug, PartialEq)]
pub struct AggregatedIbr {
    pub physical: IbrPhysicalParams,
    pub control: IbrControlParams,
    pub scaling: ReferenceScaling,
}

/// Equivalent single model of `n` identical parallel units, all quantities
/// kept on the single-unit base.
///
/// Physical elements follow the parallel-connection rules (`I_dc`, `C`, `C_f`
/// times N; `R`, `L`, `R_f` divided by N). Gains whose output is a power
/// (dc-voltage loop, droops) and `Q_ref` are multiplied by N and PLL gains
/// are unchanged. The current loop maps a current error to a voltage, so
/// its gains are divided by N to keep the terminal behaviour of N units.
pub fn aggregate_ibr(
    physical: &IbrPhysicalParams,
    control: &IbrControlParams,
    n: f64,
) -> Result<AggregatedIbr> {
    if !(n.is_finite() && n >= 1.0 && n.fract() == 0.0) {
        return Err(Error::Domain(format!(
            "unit count must be an integer >= 1, got {n}"
        )));
    }
    let mut p = physical.clone();
    p.i_dc *= n;
    p.c *= n;
    p.c_f *= n;
    p.r /= n;
    p.l /= n;
    p.r_f /= n;
    let mut c = control.clone();
    c.k_p_i /= n;
    c.k_i_i /= n;
    c.k_p_dc = c.k_p_dc.map(|g| g * n);
    c.k_i_dc = c.k_i_dc.map(|g| g * n);
    c.k_p_2dc = c.k_p_2dc.map(|g| g * n);
    c.k_i_2dc = c.k_i_2dc.map(|g| g * n);
    c.k_pw *= n;
    c.k_qv *= n;
    c.q_ref *= n;
    Ok(AggregatedIbr {
        physical: p,
        control: c,
        scaling: ReferenceScaling {
            q_ref: n,
            v_dc_ref: 1.0,
            v_d_ref: 1.0,
            omega_ref: 1.0,
        },
    })
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct Dispatch {
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub p_mw: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub v_ref: Option<f64>,
}

/// One operating condition. Missing entries mean "unchanged": multiplier 1,
/// device available, rating as in the network, default dispatch rule.
#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct Scenario {
    #[serde(default)]
    pub name: String,
    #[serde(default)]
    pub load_multipliers: BTreeMap<String, f64>,
    #[serde(default)]
    pub shunt_multipliers: BTreeMap<String, f64>,
    #[serde(default)]
    pub dispatch: BTreeMap<String, Dispatch>,
    #[serde(default)]
    pub available: BTreeMap<String, bool>,
    #[serde(default, skip_serializing_if = "BTreeMap::is_empty")]
    pub rating_scale: BTreeMap<String, f64>,
}

impl Scenario {
    pub fn base() -> Self {
        Self {
            name: "base".into(),
            ..Default::default()
        }
    }
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct ScenarioSet {
    pub scenarios: Vec<Scenario>,
}

impl ScenarioSet {
    pub fn single(s: Scenario) -> Self {
        Self { scenarios: vec![s] }
    }

    pub fn len(&self) -> usize {
        self.scenarios.len()
    }

    pub fn is_empty(&self) -> bool {
        self.scenarios.is_empty()
    }

    pub fn from_json_str(text: &str) -> Result<Self> {
        parse_json(text, "scenarios")
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let text = std::fs::read_to_string(path)?;
        Self::from_json_str(&text)
    }

    pub fn validate(&self, net: &NetworkModel) -> Result<()> {
        if self.scenarios.is_empty() {
            return Err(Error::Validation("scenario set is empty".into()));
        }
        let buses: BTreeSet<&str> = net.buses.iter().map(|b| b.id.as_str()).collect();
        for (k, s) in self.scenarios.iter().enumerate() {
            let tag = if s.name.is_empty() {
                format!("#{}", k + 1)
            } else {
                s.name.clone()
            };
            for (b, m) in s.load_multipliers.iter().chain(s.shunt_multipliers.iter()) {
                if !buses.contains(b.as_str()) {
                    return Err(Error::Validation(format!(
                        "scenario {tag}: unknown bus {b}"
                    )));
                }
                if !finite_nonneg(*m) {
                    return Err(Error::Validation(format!(
                        "scenario {tag}: multiplier at {b} must be >= 0"
                    )));
                }
            }
            for d in s
                .dispatch
                .keys()
                .chain(s.available.keys())
                .chain(s.rating_scale.keys())
            {
                if net.device(d).is_none() {
                    return Err(Error::Validation(format!(
                        "scenario {tag}: unknown device {d}"
                    )));
                }
            }
            for (d, v) in &s.rating_scale {
                if !finite_pos(*v) {
                    return Err(Error::Validation(format!(
                        "scenario {tag}: rating scale of {d} must be > 0"
                    )));
                }
            }
        }
        Ok(())
    }
}

/// Network with a scenario applied: loads and shunts scaled, unavailable
/// devices removed, ratings adjusted, and set-points resolved.
#[derive(Clone, Debug)]
pub struct OperatingPoint {
    pub net: NetworkModel,
    /// Active-power set-point per non-slack generator, system pu.
    pub p_set: BTreeMap<String, f64>,
    /// Voltage reference per device, pu.
    pub v_set: BTreeMap<String, f64>,
}

/// Total load active power at 1 pu voltage, system pu.
pub fn load_power_at_nominal(net: &NetworkModel) -> f64 {
    net.branches
        .iter()
        .map(|br| match br.element {
            BranchElement::RlLoad { r, x } => r / (r * r + x * x),
            _ => 0.0,
        })
        .sum()
}

pub fn apply_scenario(net: &NetworkModel, sc: &Scenario) -> Result<OperatingPoint> {
    let mut out = net.clone();
    out.branches = net
        .branches
        .iter()
        .filter_map(|br| {
            let mut br = br.clone();
            match &mut br.element {
                BranchElement::RlLoad { r, x } => {
                    let m = *sc.load_multipliers.get(&br.terminals[0]).unwrap_or(&1.0);
                    if m == 0.0 {
                        return None;
                    }
                    *r /= m;
                    *x /= m;
                }
                BranchElement::ShuntCap { b } => {
                    let m = *sc.shunt_multipliers.get(&br.terminals[0]).unwrap_or(&1.0);
                    if m == 0.0 {
                        return None;
                    }
                    *b *= m;
                }
                _ => {}
            }
            Some(br)
        })
        .collect();
    out.devices = net
        .devices
        .iter()
        .filter(|d| *sc.available.get(&d.id).unwrap_or(&true))
        .map(|d| {
            let mut d = d.clone();
            d.rating *= sc.rating_scale.get(&d.id).copied().unwrap_or(1.0);
            d
        })
        .collect();
    let slack = out
        .slack_bus()
        .ok_or_else(|| Error::Validation("no slack bus".into()))?
        .id
        .clone();
    let bus_vref: HashMap<&str, Option<f64>> =
        out.buses.iter().map(|b| (b.id.as_str(), b.v_ref)).collect();
    let mut v_set = BTreeMap::new();
    for d in &out.devices {
        let v = sc
            .dispatch
            .get(&d.id)
            .and_then(|x| x.v_ref)
            .or_else(|| match d.kind {
                DeviceKind::TheveninSource => d.thevenin.as_ref().map(|t| t.v),
                _ => None,
            })
            .or(bus_vref[d.bus.as_str()])
            .unwrap_or(1.0);
        v_set.insert(d.id.clone(), v);
    }
    let p_load = load_power_at_nominal(&out);
    let s_gen: f64 = out
        .devices
        .iter()
        .filter(|d| d.is_generator())
        .map(|d| d.rating)
        .sum();
    let mut p_set = BTreeMap::new();
    let external_reference = out
        .devices
        .iter()
        .any(|d| d.kind == DeviceKind::TheveninSource && !d.defines_bus_voltage());
    for d in out
        .devices
        .iter()
        .filter(|d| d.is_generator() && (d.bus != slack || external_reference))
    {
        let p = match sc.dispatch.get(&d.id).and_then(|x| x.p_mw) {
            Some(mw) => mw / net.power_base_mva,
            None => p_load * d.rating / s_gen,
        };
        p_set.insert(d.id.clone(), p);
    }
    Ok(OperatingPoint {
        net: out,
        p_set,
        v_set,
    })
}

/// Inputs of [`synthesize_scenarios`].
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SynthesisSpec {
    /// Normalized daily curve, each sample in (0, 1].
    pub curve: Vec<f64>,
    /// Per-bus time shift in samples; missing buses are not shifted.
    #[serde(default)]
    pub shifts: BTreeMap<String, usize>,
    /// Half-width `a` of the multiplicative uniform noise on [-a, a].
    #[serde(default = "default_noise")]
    pub noise: f64,
    pub seed: u64,
    /// Append an unperturbed peak-load point after the curve samples.
    #[serde(default)]
    pub include_peak: bool,
    /// Generation variants; each repeats the full set of load points.
    #[serde(default)]
    pub variants: Vec<GenerationVariant>,
}

fn default_noise() -> f64 {
    0.03
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct GenerationVariant {
    pub name: String,
    #[serde(default)]
    pub rating_scale: BTreeMap<String, f64>,
    #[serde(default)]
    pub available: BTreeMap<String, bool>,
}

/// Counter-based uniform draw on [-1, 1) addressed by (seed, point, bus, stream).
pub fn unit_noise(seed: u64, point: usize, bus: usize, stream: usize) -> f64 {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(point as u64);
    rng.set_word_pos(((bus * 2 + stream) * 2) as u128);
    let bits = rng.next_u64() >> 11;
    bits as f64 / (1u64 << 53) as f64 * 2.0 - 1.0
}

/// Deterministic load/shunt scenarios from a time-shifted daily curve with
/// multiplicative noise, dispatched proportionally to generator ratings.
pub fn synthesize_scenarios(base: &NetworkModel, spec: &SynthesisSpec) -> Result<ScenarioSet> {
    if spec.curve.is_empty() {
        return Err(Error::Domain("daily curve is empty".into()));
    }
    if spec.curve.iter().any(|&c| !(c > 0.0 && c <= 1.0)) {
        return Err(Error::Domain("curve samples must lie in (0, 1]".into()));
    }
    if !(spec.noise.is_finite() && (0.0..1.0).contains(&spec.noise)) {
        return Err(Error::Domain(format!(
            "noise amplitude must be in [0, 1), got {}",
            spec.noise
        )));
    }
    let idx = base.bus_index();
    for b in spec.shifts.keys() {
        if !idx.contains_key(b.as_str()) {
            return Err(Error::Validation(format!(
                "shift given for unknown bus {b}"
            )));
        }
    }
    let mut load_buses = BTreeSet::new();
    let mut shunt_buses = BTreeSet::new();
    for br in &base.branches {
        match br.element {
            BranchElement::RlLoad { .. } => {
                load_buses.insert(br.terminals[0].clone());
            }
            BranchElement::ShuntCap { .. } => {
                shunt_buses.insert(br.terminals[0].clone());
            }
            _ => {}
        }
    }
    let len = spec.curve.len();
    let points = len + usize::from(spec.include_peak);
    let variants = if spec.variants.is_empty() {
        vec![GenerationVariant {
            name: "base".into(),
            ..Default::default()
        }]
    } else {
        spec.variants.clone()
    };
    let multiplier = |point: usize, bus: &str, stream: usize| -> f64 {
        if point >= len {
            return 1.0;
        }
        let shift = spec.shifts.get(bus).copied().unwrap_or(0);
        let c = spec.curve[(point + shift) % len];
        c * (1.0 + spec.noise * unit_noise(spec.seed, point, idx[bus], stream))
    };
    let mut scenarios = Vec::with_capacity(points * variants.len());
    for v in &variants {
        for point in 0..points {
            let mut sc = Scenario {
                name: if point < len {
                    format!("{}-t{:02}", v.name, point)
                } else {
                    format!("{}-peak", v.name)
                },
                rating_scale: v.rating_scale.clone(),
                available: v.available.clone(),
                ..Default::default()
            };
            for b in &load_buses {
                sc.load_multipliers
                    .insert(b.clone(), multiplier(point, b, 0));
            }
            for b in &shunt_buses {
                sc.shunt_multipliers
                    .insert(b.clone(), multiplier(point, b, 1));
            }
            let op = apply_scenario(base, &sc)?;
            for d in &op.net.devices {
                if !d.is_generator() {
                    continue;
                }
                let entry = Dispatch {
                    p_mw: op.p_set.get(&d.id).map(|p| p * base.power_base_mva),
                    v_ref: op.v_set.get(&d.id).copied(),
                };
                sc.dispatch.insert(d.id.clone(), entry);
            }
            scenarios.push(sc);
        }
    }
    Ok(ScenarioSet { scenarios })
}

/// System-base admittance a device presents for short-circuit purposes:
/// SGs as their subtransient impedance, IBRs as open circuits.
fn device_shunt_admittance(net: &NetworkModel, d: &Device) -> Option<C64> {
    match d.kind {
        DeviceKind::Sg => {
            let m = &d.sg_params.as_ref()?.machine;
            let scale = net.power_base_mva / d.rating;
            Some(C64::new(1.0, 0.0) / C64::new(m.rs * scale, m.xd_pp * scale))
        }
        DeviceKind::Ibr => None,
        DeviceKind::TheveninSource => {
            let t = d.thevenin.as_ref()?;
            if t.has_impedance() {
                Some(C64::new(1.0, 0.0) / C64::new(t.r, t.x))
            } else {
                None
            }
        }
    }
}

/// Two-port admittance `[[y11, y12], [y21, y22]]` of a T-equivalent transformer.
pub fn transformer_admittance(
    r1: f64,
    x1: f64,
    r2: f64,
    x2: f64,
    r_m: f64,
    x_m: f64,
) -> [[C64; 2]; 2] {
    let z1 = C64::new(r1, x1);
    let z2 = C64::new(r2, x2);
    let ym = C64::new(1.0, 0.0) / C64::new(r_m, x_m);
    let det = z1 + z2 + z1 * z2 * ym;
    let one = C64::new(1.0, 0.0);
    [
        [(one + z2 * ym) / det, -one / det],
        [-one / det, (one + z1 * ym) / det],
    ]
}

/// Bus admittance matrix of the passive network (lines, transformers,
/// loads as impedances, shunt capacitors), system pu, in bus order.
pub fn passive_admittance(net: &NetworkModel) -> DMatrix<C64> {
    let idx = net.bus_index();
    let n = net.buses.len();
    let mut y = DMatrix::from_element(n, n, C64::new(0.0, 0.0));
    for br in &net.branches {
        match br.element {
            BranchElement::PiLine { r, x, b_total } => {
                let a = idx[br.terminals[0].as_str()];
                let b = idx[br.terminals[1].as_str()];
                let ys = C64::new(1.0, 0.0) / C64::new(r, x);
                let yc = C64::new(0.0, b_total / 2.0);
                y[(a, a)] += ys + yc;
                y[(b, b)] += ys + yc;
                y[(a, b)] -= ys;
                y[(b, a)] -= ys;
            }
            BranchElement::Transformer {
                r1,
                x1,
                r2,
                x2,
                r_m,
                x_m,
            } => {
                let a = idx[br.terminals[0].as_str()];
                let b = idx[br.terminals[1].as_str()];
                let t = transformer_admittance(r1, x1, r2, x2, r_m, x_m);
                y[(a, a)] += t[0][0];
                y[(a, b)] += t[0][1];
                y[(b, a)] += t[1][0];
                y[(b, b)] += t[1][1];
            }
            BranchElement::RlLoad { r, x } => {
                let a = idx[br.terminals[0].as_str()];
                y[(a, a)] += C64::new(1.0, 0.0) / C64::new(r, x);
            }
            BranchElement::ShuntCap { b } => {
                let a = idx[br.terminals[0].as_str()];
                y[(a, a)] += C64::new(0.0, b);
            }
        }
    }
    y
}

/// Reduce the network seen from `keep_bus` to an ideal source behind the
/// driving-point impedance, keeping the device connected at `keep_bus`.
///
/// The impedance treats SGs as their subtransient impedance behind a
/// constant source and IBRs as open circuits. The source voltage is the
/// power-flow voltage at `keep_bus` with the local device disconnected.
pub fn thevenin_reduce(
    net: &NetworkModel,
    keep_bus: &str,
    scenario: &Scenario,
) -> Result<NetworkModel> {
    let bus = net
        .buses
        .iter()
        .find(|b| b.id == keep_bus)
        .ok_or_else(|| Error::Validation(format!("keep bus {keep_bus} does not exist")))?
        .clone();
    if bus.role == BusRole::Slack {
        return Err(Error::Domain(format!(
            "cannot reduce at the slack bus {keep_bus}"
        )));
    }
    let local: Vec<Device> = net
        .devices
        .iter()
        .filter(|d| d.bus == keep_bus)
        .cloned()
        .collect();
    let mut open = net.clone();
    open.devices.retain(|d| d.bus != keep_bus);
    let mut sc = scenario.clone();
    for d in &local {
        sc.dispatch.remove(&d.id);
        sc.available.remove(&d.id);
        sc.rating_scale.remove(&d.id);
    }
    let op = apply_scenario(&open, &sc)?;
    let pf = crate::powerflow::solve_operating_point(&op, &Default::default())?;
    let k = op.net.bus_index()[keep_bus];
    let v_th = pf.vm()[k];

    let n = op.net.buses.len();
    let mut y = passive_admittance(&op.net);
    let mut grounded = vec![false; n];
    let idx = op.net.bus_index();
    for d in &op.net.devices {
        let b = idx[d.bus.as_str()];
        if d.kind == DeviceKind::TheveninSource
            && !d.thevenin.as_ref().is_some_and(|t| t.has_impedance())
        {
            grounded[b] = true;
        } else if let Some(ya) = device_shunt_admittance(&op.net, d) {
            y[(b, b)] += ya;
        }
    }
    let z_th = if grounded[k] {
        C64::new(0.0, 0.0)
    } else {
        let keep: Vec<usize> = (0..n).filter(|&i| !grounded[i]).collect();
        let m = keep.len();
        let yr = DMatrix::from_fn(m, m, |i, j| y[(keep[i], keep[j])]);
        let pos = keep
            .iter()
            .position(|&i| i == k)
            .expect("keep bus retained");
        let mut e = DMatrix::from_element(m, 1, C64::new(0.0, 0.0));
        e[(pos, 0)] = C64::new(1.0, 0.0);
        let z = complex_solve(
            yr,
            e,
            &format!("admittance matrix seen from bus {keep_bus}"),
        )?;
        z[(pos, 0)]
    };
    if !(z_th.re.is_finite() && z_th.im.is_finite()) || z_th.norm() > 1e8 {
        return Err(Error::Singular(format!(
            "bus {keep_bus} is isolated from every source"
        )));
    }
    let mut reduced_bus = bus;
    reduced_bus.role = BusRole::Slack;
    reduced_bus.v_ref = Some(v_th);
    let mut devices = vec![Device {
        id: "thevenin".into(),
        bus: keep_bus.to_string(),
        kind: DeviceKind::TheveninSource,
        rating: net.power_base_mva,
        sg_params: None,
        ibr: None,
        thevenin: Some(TheveninParams {
            r: z_th.re.max(0.0),
            x: z_th.im,
            v: v_th,
        }),
    }];
    devices.extend(local);
    Ok(NetworkModel {
        name: format!("{} (thevenin at {keep_bus})", net.name),
        frequency_hz: net.frequency_hz,
        power_base_mva: net.power_base_mva,
        buses: vec![reduced_bus],
        branches: vec![],
        devices,
    })
}

/// Reduced network of [`thevenin_reduce`] together with the scenario that
/// carries the local devices' set-points from the full network.
pub fn thevenin_case(
    net: &NetworkModel,
    keep_bus: &str,
    scenario: &Scenario,
) -> Result<(NetworkModel, Scenario)> {
    let reduced = thevenin_reduce(net, keep_bus, scenario)?;
    let full = apply_scenario(net, scenario)?;
    let mut sc = Scenario {
        name: scenario.name.clone(),
        ..Default::default()
    };
    for d in net.devices.iter().filter(|d| d.bus == keep_bus) {
        if let Some(a) = scenario.available.get(&d.id) {
            sc.available.insert(d.id.clone(), *a);
        }
        if let Some(r) = scenario.rating_scale.get(&d.id) {
            sc.rating_scale.insert(d.id.clone(), *r);
        }
        sc.dispatch.insert(
            d.id.clone(),
            Dispatch {
                p_mw: full.p_set.get(&d.id).map(|p| p * net.power_base_mva),
                v_ref: full.v_set.get(&d.id).copied(),
            },
        );
    }
    Ok((reduced, sc))
}

#[cfg(test)]
mod tests {
    use super::*;

    pub(crate) fn two_bus() -> NetworkModel {
        NetworkModel {
            name: "two".into(),
            frequency_hz: 50.0,
            power_base_mva: 100.0,
            buses: vec![
                Bus {
                    id: "1".into(),
                    role: BusRole::Slack,
                    base_voltage: 220.0,
                    v_ref: Some(1.0),
                },
                Bus {
                    id: "2".into(),
                    role: BusRole::PQ,
                    base_voltage: 220.0,
                    v_ref: None,
                },
            ],
            branches: vec![Branch {
                id: "L12".into(),
                terminals: vec!["1".into(), "2".into()],
                element: BranchElement::PiLine {
                    r: 0.01,
                    x: 0.1,
                    b_total: 0.02,
                },
            }],
            devices: vec![Device {
                id: "G1".into(),
                bus: "1".into(),
                kind: DeviceKind::Sg,
                rating: 200.0,
                sg_params: Some(SgParams::default()),
                ibr: None,
                thevenin: None,
            }],
        }
    }

    #[test]
    fn minimal_network_is_valid() {
        assert!(validate_network(two_bus()).is_ok());
    }

    #[test]
    fn two_slack_buses_rejected() {
        let mut n = two_bus();
        n.buses[1].role = BusRole::Slack;
        n.buses[1].v_ref = Some(1.0);
        let e = validate_network(n).unwrap_err().to_string();
        assert!(e.contains("multiple slack"), "{e}");
    }

    #[test]
    fn dangling_branch_named() {
        let mut n = two_bus();
        n.branches[0].terminals[1] = "9".into();
        let e = validate_network(n).unwrap_err().to_string();
        assert!(e.contains("L12") && e.contains("missing bus 9"), "{e}");
    }

    #[test]
    fn island_reported() {
        let mut n = two_bus();
        n.buses.push(Bus {
            id: "3".into(),
            role: BusRole::PQ,
            base_voltage: 220.0,
            v_ref: None,
        });
        let e = validate_network(n).unwrap_err().to_string();
        assert!(e.contains("island") && e.contains('3'), "{e}");
    }

    #[test]
    fn missing_vref_and_negative_resistance_rejected() {
        let mut n = two_bus();
        n.buses[0].v_ref = None;
        assert!(validate_network(n).is_err());
        let mut n = two_bus();
        n.branches[0].element = BranchElement::PiLine {
            r: -0.1,
            x: 0.1,
            b_total: 0.0,
        };
        assert!(validate_network(n).is_err());
    }

    #[test]
    fn json_roundtrip_uses_declared_keys() {
        let text = serde_json::to_string(&two_bus()).unwrap();
        for key in [
            "frequency_hz",
            "power_base_mva",
            "buses",
            "branches",
            "devices",
            "\"kind\":\"pi_line\"",
            "b_total",
        ] {
            assert!(text.contains(key), "{key} missing in {text}");
        }
        let back = NetworkModel::from_json_str(&text).unwrap();
        assert_eq!(back, two_bus());
    }

    #[test]
    fn parse_error_reports_byte_offset() {
        let e = NetworkModel::from_json_str("{\n  \"frequency_hz\": x }").unwrap_err();
        let msg = e.to_string();
        assert!(msg.contains("byte offset 20"), "{msg}");
    }

    #[test]
    fn aggregation_identity_and_reference_unit() {
        let p = IbrPhysicalParams::reference_unit();
        let c = IbrControlParams::nominal(DcVariant::Vdc);
        let one = aggregate_ibr(&p, &c, 1.0).unwrap();
        assert_eq!(one.physical, p);
        assert_eq!(one.control, c);

        let agg = aggregate_ibr(&p, &c, 70.0).unwrap();
        assert!((agg.physical.r - 0.05 / 70.0).abs() < 1e-15);
        assert!((agg.physical.l - 0.15 / 70.0).abs() < 1e-15);
        assert!((agg.physical.r_f - 0.0016 / 70.0).abs() < 1e-15);
        assert!((agg.physical.c_f - 3.5).abs() < 1e-12);
        assert!((agg.physical.c - 1.05).abs() < 1e-12);
        assert_eq!(agg.control.k_p_pll, c.k_p_pll);
        assert_eq!(agg.control.k_i_pll, c.k_i_pll);

        let two = aggregate_ibr(&p, &c, 2.0).unwrap();
        assert!((two.physical.l - 0.075).abs() < 1e-15);
    }

    #[test]
    fn aggregation_rejects_bad_counts() {
        let p = IbrPhysicalParams::reference_unit();
        let c = IbrControlParams::nominal(DcVariant::Vdc);
        assert!(matches!(aggregate_ibr(&p, &c, 0.0), Err(Error::Domain(_))));
        assert!(matches!(aggregate_ibr(&p, &c, 2.5), Err(Error::Domain(_))));
    }

    #[test]
    fn gain_names_accept_both_spellings() {
        let mut c = IbrControlParams::nominal(DcVariant::Vdc);
        c.set("k_p_pll", 0.2).unwrap();
        assert_eq!(c.get("kp_pll").unwrap(), 0.2);
        assert!(c.set("kp_2dc", 1.0).is_err());
        assert!(c.get("kq_pll").is_err());
    }

    #[test]
    fn noise_is_bounded_and_addressable() {
        let a = unit_noise(1, 3, 2, 0);
        assert_eq!(a, unit_noise(1, 3, 2, 0));
        assert_ne!(a, unit_noise(1, 3, 2, 1));
        for p in 0..50 {
            let u = unit_noise(9, p, p % 7, p % 2);
            assert!((-1.0..1.0).contains(&u));
        }
    }

    #[test]
    fn empty_curve_is_domain_error() {
        let spec = SynthesisSpec {
            curve: vec![],
            shifts: BTreeMap::new(),
            noise: 0.0,
            seed: 1,
            include_peak: false,
            variants: vec![],
        };
        assert!(matches!(
            synthesize_scenarios(&two_bus(), &spec),
            Err(Error::Domain(_))
        ));
    }
}
