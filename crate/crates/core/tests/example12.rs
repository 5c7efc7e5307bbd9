use ssm_core::assembler::{assemble_equilibrium, init_equilibrium};
use ssm_core::netmodel::{
    apply_scenario, synthesize_scenarios, NetworkModel, Scenario, ScenarioSet, SynthesisSpec,
};
use ssm_core::powerflow::{solve_operating_point, PfOptions};
use ssm_core::stability::{
    case_system, replace_with_ibr, system_spectrum, ParamAssignment, StudyCase,
};
use ssm_core::study::default_template;

fn data(name: &str) -> String {
    format!("{}/../../data/{name}", env!("CARGO_MANIFEST_DIR"))
}

fn network() -> NetworkModel {
    NetworkModel::load(data("example12.json")).unwrap()
}

fn scenarios(net: &NetworkModel) -> ScenarioSet {
    let spec: SynthesisSpec =
        serde_json::from_str(&std::fs::read_to_string(data("example12_synthesis.json")).unwrap())
            .unwrap();
    synthesize_scenarios(net, &spec).unwrap()
}

#[test]
fn synthesis_is_deterministic_with_fifty_scenarios() {
    let net = network();
    let a = scenarios(&net);
    let b = scenarios(&net);
    assert_eq!(a.scenarios.len(), 50);
    assert_eq!(
        serde_json::to_string(&a).unwrap(),
        serde_json::to_string(&b).unwrap()
    );
}

#[test]
fn equilibrium_residual_small_for_every_scenario() {
    let net = network();
    let ibr = replace_with_ibr(
        &net,
        &["G10".into(), "G11".into(), "G12".into()],
        &default_template(),
    )
    .unwrap();
    let set = scenarios(&net);
    for n in [&net, &ibr] {
        for sc in &set.scenarios {
            let op = apply_scenario(n, sc).unwrap();
            let pf = solve_operating_point(&op, &PfOptions::default()).unwrap();
            assert!(
                pf.solution.mismatch < 1e-9,
                "{}: mismatch {}",
                sc.name,
                pf.solution.mismatch
            );
            let eq = init_equilibrium(&op, &pf).unwrap();
            let (r, at) = eq.residual().unwrap();
            assert!(r < 1e-6, "{}: residual {r} at {at}", sc.name);
        }
    }
}

#[test]
fn base_case_is_small_signal_stable() {
    let net = network();
    let op = apply_scenario(&net, &Scenario::base()).unwrap();
    let pf = solve_operating_point(&op, &PfOptions::default()).unwrap();
    let sys = assemble_equilibrium(&init_equilibrium(&op, &pf).unwrap()).unwrap();
    let s = system_spectrum(&sys, 1e-8).unwrap();
    assert!(s.abscissa() < 0.0, "abscissa {}", s.abscissa());
}

#[test]
fn every_single_replacement_assembles() {
    let net = network();
    for g in ["G10", "G11", "G12"] {
        let n2 = replace_with_ibr(&net, &[g.into()], &default_template()).unwrap();
        let sys = case_system(
            &StudyCase::full(g, n2),
            &ParamAssignment::new(),
            &Scenario::base(),
        )
        .unwrap();
        let s = system_spectrum(&sys, 1e-8).unwrap();
        assert!(s
            .eigenvalues
            .iter()
            .all(|l| l.re.is_finite() && l.im.is_finite()));
        assert_eq!(s.eigenvalues.len(), sys.order());
    }
}
