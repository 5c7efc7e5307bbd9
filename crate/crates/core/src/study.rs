//! Case studies: SG-to-IBR replacement sets, focus devices, and per-case
//! stability manifolds over a pair of gains.

use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::asm::{
    export_manifold, try_run_asm, AsmConfig, GridPoint, ManifoldModel, ParameterDomain,
};
use crate::error::{Error, Result};
use crate::netmodel::{
    parse_json, DcVariant, DeviceKind, IbrControlParams, IbrPhysicalParams, IbrSpec, NetworkModel,
    ScenarioSet,
};
use crate::stability::{
    is_ps_stable, replace_with_ibr, ParamAssignment, StabilityOptions, StudyCase,
};
use crate::tuner::{operating_voltage, rpi_member, with_gains, LoopPlant};

/// One row of a case matrix.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CaseStudy {
    pub name: String,
    /// Synchronous generators replaced by aggregated IBRs.
    pub ibr: Vec<String>,
    /// IBRs whose gains vary; the others keep the tuned gains.
    pub focus: Vec<String>,
    /// Analyse the Thévenin equivalent seen from the single focus IBR.
    #[serde(default)]
    pub thevenin: bool,
}

/// Case matrix file: IBR template plus cases.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CaseMatrix {
    #[serde(default = "default_template")]
    pub template: IbrSpec,
    pub cases: Vec<CaseStudy>,
}

/// Reference unit with nominal gains and the v_dc outer loop.
pub fn default_template() -> IbrSpec {
    IbrSpec {
        physical: IbrPhysicalParams::reference_unit(),
        control: IbrControlParams::nominal(DcVariant::Vdc),
        n: 1,
    }
}

impl CaseMatrix {
    pub fn from_json_str(text: &str) -> Result<Self> {
        parse_json(text, "case matrix")
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        Self::from_json_str(&std::fs::read_to_string(path)?)
    }

    pub fn validate(&self, net: &NetworkModel) -> Result<()> {
        if self.cases.is_empty() {
            return Err(Error::Validation("case matrix has no cases".into()));
        }
        let mut names = std::collections::BTreeSet::new();
        for c in &self.cases {
            if !names.insert(c.name.as_str()) {
                return Err(Error::Validation(format!("case {} appears twice", c.name)));
            }
            c.validate(net)?;
        }
        Ok(())
    }
}

impl CaseStudy {
    pub fn validate(&self, net: &NetworkModel) -> Result<()> {
        if self.name.is_empty() || self.name.contains(['/', '\\']) {
            return Err(Error::Validation(format!(
                "case name {:?} is not a valid directory name",
                self.name
            )));
        }
        if self.focus.is_empty() {
            return Err(Error::Validation(format!(
                "case {}: focus set is empty",
                self.name
            )));
        }
        for id in &self.ibr {
            match net.device(id) {
                Some(d) if d.kind == DeviceKind::Sg => {}
                Some(_) => {
                    return Err(Error::Validation(format!(
                        "case {}: {id} is not an SG",
                        self.name
                    )))
                }
                None => {
                    return Err(Error::Validation(format!(
                        "case {}: {id} does not exist",
                        self.name
                    )))
                }
            }
        }
        for f in &self.focus {
            let existing_ibr = net.device(f).is_some_and(|d| d.kind == DeviceKind::Ibr);
            if !self.ibr.contains(f) && !existing_ibr {
                return Err(Error::Validation(format!(
                    "case {}: focus {f} is not an IBR",
                    self.name
                )));
            }
        }
        if self.thevenin && self.focus.len() != 1 {
            return Err(Error::Validation(format!(
                "case {}: a Thévenin study needs exactly one focus IBR",
                self.name
            )));
        }
        Ok(())
    }

    /// Network variant with replacements done and `tuned` gains on every IBR.
    pub fn build(
        &self,
        net: &NetworkModel,
        template: &IbrSpec,
        tuned: &ParamAssignment,
    ) -> Result<StudyCase> {
        self.validate(net)?;
        let mut tpl = template.clone();
        tpl.control = with_gains(&template.control, tuned)?;
        let mut out = replace_with_ibr(net, &self.ibr, &tpl)?;
        for d in out.devices.iter_mut().filter(|d| d.kind == DeviceKind::Ibr) {
            if let Some(spec) = d.ibr.as_mut() {
                spec.control = with_gains(&spec.control, tuned)?;
                spec.control.validate(&d.id)?;
            }
        }
        let thevenin_bus = if self.thevenin {
            let f = &self.focus[0];
            Some(out.device(f).map(|d| d.bus.clone()).unwrap_or_default())
        } else {
            None
        };
        Ok(StudyCase {
            name: self.name.clone(),
            net: out,
            focus: self.focus.clone(),
            thevenin_bus,
        })
    }
}

/// All non-empty subsets of `ids`, smallest first, in index order within a size.
pub fn combinations(ids: &[String]) -> Vec<Vec<String>> {
    let n = ids.len().min(20);
    let mut masks: Vec<u32> = (1..(1u32 << n)).collect();
    masks.sort_by_key(|m| {
        (
            m.count_ones(),
            (0..n).filter(|k| m & (1 << k) != 0).collect::<Vec<_>>(),
        )
    });
    masks
        .into_iter()
        .map(|m| {
            (0..n)
                .filter(|k| m & (1 << k) != 0)
                .map(|k| ids[k].clone())
                .collect()
        })
        .collect()
}

/// Settings of one manifold computation.
#[derive(Clone, Debug, PartialEq)]
pub struct ManifoldJob {
    /// Two-dimensional domain over the varied gain pair.
    pub domain: ParameterDomain,
    pub asm: AsmConfig,
    pub stability: StabilityOptions,
    /// Grid nodes per axis of the exported manifold.
    pub grid: usize,
}

#[derive(Clone, Debug)]
pub struct CaseManifold {
    pub case: String,
    pub model: ManifoldModel,
    pub grid: Vec<GridPoint>,
    pub plant: LoopPlant,
    /// Gains of the focus IBRs before the pair is varied.
    pub base: IbrControlParams,
    /// Pair values in `base`.
    pub tuned_point: Vec<f64>,
}

/// Focus IBR control parameters and loop plant of a study case.
pub fn focus_plant(
    case: &StudyCase,
    scenarios: &ScenarioSet,
) -> Result<(IbrControlParams, LoopPlant)> {
    let f = case
        .focus
        .first()
        .ok_or_else(|| Error::Validation(format!("case {}: focus set is empty", case.name)))?;
    let dev = case
        .net
        .device(f)
        .ok_or_else(|| Error::Validation(format!("focus device {f} does not exist")))?;
    let spec = dev
        .ibr
        .as_ref()
        .ok_or_else(|| Error::Validation(format!("focus device {f} is not an IBR")))?;
    let full = StudyCase {
        thevenin_bus: None,
        ..case.clone()
    };
    let v_d0 = operating_voltage(&full, scenarios, f)?;
    let plant = LoopPlant::from_ibr(&spec.physical, &spec.control, case.net.omega_nom(), v_d0);
    Ok((spec.control.clone(), plant))
}

/// Adaptive-sampling manifold of a case over the job's gain pair, with the
/// exported grid masked by the region of practical interest.
pub fn case_manifold(
    case: &StudyCase,
    scenarios: &ScenarioSet,
    job: &ManifoldJob,
) -> Result<CaseManifold> {
    if job.domain.dim() != 2 {
        return Err(Error::Domain(format!(
            "manifold domain must be 2-D, got {}",
            job.domain.dim()
        )));
    }
    let (base, plant) = focus_plant(case, scenarios)?;
    let names = job.domain.names.clone();
    let tuned_point = names
        .iter()
        .map(|n| base.get(n))
        .collect::<Result<Vec<_>>>()?;
    let oracle = |rho: &[f64]| -> Result<u8> {
        let a: ParamAssignment = names.iter().cloned().zip(rho.iter().cloned()).collect();
        Ok(is_ps_stable(&a, scenarios, case, &job.stability)?.label())
    };
    let model = try_run_asm(&oracle, &job.domain, &job.asm)?;
    let mask = |rho: &[f64]| rpi_member(&base, &plant, &names, rho).unwrap_or(false);
    let grid = export_manifold(&model, job.grid, Some(&mask))?;
    Ok(CaseManifold {
        case: case.name.clone(),
        model,
        grid,
        plant,
        base,
        tuned_point,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn seven_combinations_of_three() {
        let ids: Vec<String> = ["a", "b", "c"].iter().map(|s| s.to_string()).collect();
        let c = combinations(&ids);
        assert_eq!(c.len(), 7);
        assert_eq!(c[0], vec!["a"]);
        assert_eq!(c[6], vec!["a", "b", "c"]);
        assert!(c[..3].iter().all(|s| s.len() == 1));
    }
}
