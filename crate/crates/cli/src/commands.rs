//! Subcommand implementations.

use std::ffi::OsString;
use std::path::{Path, PathBuf};

use rayon::prelude::*;
use ssm_core::asm::{grid_csv, samples_csv, AsmConfig, GridPoint, ManifoldModel, ParameterDomain};
use ssm_core::classifier::SvmOptions;
use ssm_core::linalg::EigenDecomposition;
use ssm_core::netmodel::{
    canonical_gain_name, parse_json, synthesize_scenarios, DcVariant, DeviceKind, IbrSpec,
    NetworkModel, Scenario, ScenarioSet, SynthesisSpec,
};
use ssm_core::powerflow::solve_power_flow;
use ssm_core::render::{manifold_svg, ManifoldPlot};
use ssm_core::stability::{
    apply_params, case_system, is_ps_stable, parse_assignment, replace_with_ibr, ParamAssignment,
    StabilityOptions, StudyCase,
};
use ssm_core::study::{
    case_manifold, combinations, default_template, CaseManifold, CaseMatrix, ManifoldJob,
};
use ssm_core::tuner::{
    default_domain, history_csv, operating_voltage, tune, with_gains, LoopPlant, SurrogateOptions,
    TunerProblem,
};

use crate::manifest::{sha256_file, unix_now, FileDigest, RunManifest};
use crate::{
    AsmArgs, CaseMatrixArgs, Cli, CliError, CliResult, Command, EigsArgs, FocusArgs, NetArgs,
    PowerflowArgs, ReportArgs, SamplingArgs, StabilityArgs, TuneArgs,
};

/// File access of one run, recorded for the manifest.
struct Ctx {
    out_dir: PathBuf,
    inputs: Vec<PathBuf>,
    outputs: Vec<PathBuf>,
    started: u64,
}

impl Ctx {
    fn read(&mut self, path: &Path) -> CliResult<String> {
        let text = std::fs::read_to_string(path).map_err(|e| CliError::io(path, e))?;
        if !self.inputs.iter().any(|p| p == path) {
            self.inputs.push(path.to_path_buf());
        }
        Ok(text)
    }

    fn out_path(&self, path: &Path) -> PathBuf {
        self.out_dir.join(path)
    }

    fn write(&mut self, path: &Path, text: &str) -> CliResult<()> {
        if let Some(dir) = path.parent().filter(|d| !d.as_os_str().is_empty()) {
            std::fs::create_dir_all(dir).map_err(|e| CliError::io(dir, e))?;
        }
        std::fs::write(path, text).map_err(|e| CliError::io(path, e))?;
        self.outputs.push(path.to_path_buf());
        Ok(())
    }

    fn write_manifest(&self, cli: &Cli, path: &Path) -> CliResult<()> {
        let dir = path.parent().unwrap_or(Path::new(""));
        let digest = |p: &Path, shown: String| -> CliResult<FileDigest> {
            Ok(FileDigest {
                path: shown,
                sha256: sha256_file(p).map_err(|e| CliError::io(p, e))?,
            })
        };
        let inputs = self
            .inputs
            .iter()
            .map(|p| digest(p, p.display().to_string()))
            .collect::<CliResult<Vec<_>>>()?;
        let outputs = self
            .outputs
            .iter()
            .map(|p| digest(p, p.strip_prefix(dir).unwrap_or(p).display().to_string()))
            .collect::<CliResult<Vec<_>>>()?;
        let (command, arguments) = match serde_json::to_value(&cli.command) {
            Ok(serde_json::Value::Object(m)) if m.len() == 1 => {
                let (k, v) = m.into_iter().next().unwrap_or_default();
                (k, v)
            }
            Ok(v) => (String::new(), v),
            Err(e) => return Err(CliError::Usage(format!("cannot record arguments: {e}"))),
        };
        let m = RunManifest {
            tool: "ssm".into(),
            version: env!("CARGO_PKG_VERSION").into(),
            command,
            arguments,
            seed: cli.seed,
            threads: cli.threads,
            started_unix: self.started,
            finished_unix: unix_now(),
            inputs,
            outputs,
        };
        let text =
            serde_json::to_string_pretty(&m).map_err(|e| CliError::Usage(e.to_string()))? + "\n";
        std::fs::write(path, text).map_err(|e| CliError::io(path, e))
    }
}

fn suffixed(prefix: &Path, suffix: &str) -> PathBuf {
    let mut s: OsString = prefix.as_os_str().to_owned();
    s.push(suffix);
    PathBuf::from(s)
}

/// `dir/stem.ext` → `dir/stem{suffix}`.
fn sibling(path: &Path, suffix: &str) -> PathBuf {
    suffixed(&path.with_extension(""), suffix)
}

fn to_json<T: serde::Serialize>(v: &T) -> CliResult<String> {
    serde_json::to_string_pretty(v)
        .map(|s| s + "\n")
        .map_err(|e| CliError::Usage(format!("serialization: {e}")))
}

fn csv_field(s: &str) -> String {
    if s.contains([',', '"', '\n']) {
        format!("\"{}\"", s.replace('"', "\"\""))
    } else {
        s.to_string()
    }
}

pub fn dispatch(cli: &Cli) -> CliResult<String> {
    let mut ctx = Ctx {
        out_dir: cli.out_dir.clone(),
        inputs: vec![],
        outputs: vec![],
        started: unix_now(),
    };
    match &cli.command {
        Command::Powerflow(a) => powerflow(cli, &mut ctx, a),
        Command::Eigs(a) => eigs(cli, &mut ctx, a),
        Command::Stability(a) => stability(&mut ctx, a),
        Command::Asm(a) => asm(cli, &mut ctx, a),
        Command::Tune(a) => tune_cmd(cli, &mut ctx, a),
        Command::Report(a) => report(cli, &mut ctx, a),
        Command::CaseMatrix(a) => case_matrix(cli, &mut ctx, a),
    }
}

// Input loading

fn load_net(ctx: &mut Ctx, path: &Path) -> CliResult<NetworkModel> {
    Ok(NetworkModel::from_json_str(&ctx.read(path)?)?)
}

/// A scenario set, or a synthesis spec expanded against `net`.
fn load_scenarios(
    ctx: &mut Ctx,
    path: Option<&Path>,
    net: &NetworkModel,
) -> CliResult<ScenarioSet> {
    let set = match path {
        None => ScenarioSet::single(Scenario::base()),
        Some(p) => {
            let text = ctx.read(p)?;
            let v: serde_json::Value = parse_json(&text, "scenario file")?;
            if v.get("scenarios").is_some() {
                ScenarioSet::from_json_str(&text)?
            } else {
                let spec: SynthesisSpec = parse_json(&text, "scenario synthesis spec")?;
                synthesize_scenarios(net, &spec)?
            }
        }
    };
    set.validate(net)?;
    Ok(set)
}

fn load_template(ctx: &mut Ctx, path: Option<&Path>) -> CliResult<IbrSpec> {
    match path {
        None => Ok(default_template()),
        Some(p) => Ok(parse_json(&ctx.read(p)?, "IBR template")?),
    }
}

/// Gains from a `tune` result (its `rho`) or a plain name→value map.
fn load_tuned(ctx: &mut Ctx, path: &Path) -> CliResult<ParamAssignment> {
    let text = ctx.read(path)?;
    let v: serde_json::Value = parse_json(&text, "tuned gains")?;
    let map = v.get("rho").cloned().unwrap_or(v);
    let raw: std::collections::BTreeMap<String, f64> = serde_json::from_value(map)
        .map_err(|e| CliError::Core(ssm_core::Error::Parse(format!("tuned gains: {e}"))))?;
    let mut out = ParamAssignment::new();
    for (k, v) in raw {
        out.insert(canonical_gain_name(&k)?.to_string(), v);
    }
    Ok(out)
}

fn apply_to_all_ibrs(net: &mut NetworkModel, rho: &ParamAssignment) -> CliResult<()> {
    for d in net.devices.iter_mut().filter(|d| d.kind == DeviceKind::Ibr) {
        if let Some(spec) = d.ibr.as_mut() {
            spec.control = with_gains(&spec.control, rho)?;
            spec.control.validate(&d.id)?;
        }
    }
    Ok(())
}

/// Network with replacements and tuned gains applied, and its scenarios.
fn build_network(ctx: &mut Ctx, a: &NetArgs) -> CliResult<(NetworkModel, ScenarioSet)> {
    let base = load_net(ctx, &a.net)?;
    let set = load_scenarios(ctx, a.scenarios.as_deref(), &base)?;
    let template = load_template(ctx, a.template.as_deref())?;
    let mut net = replace_with_ibr(&base, &a.replace, &template)?;
    if let Some(t) = &a.tuned {
        let rho = load_tuned(ctx, t)?;
        apply_to_all_ibrs(&mut net, &rho)?;
    }
    Ok((net, set))
}

fn study_case(net: NetworkModel, f: &FocusArgs) -> CliResult<(StudyCase, ParamAssignment)> {
    let rho = match &f.params {
        Some(p) => parse_assignment(p)?,
        None => ParamAssignment::new(),
    };
    let case = StudyCase {
        name: "cli".into(),
        net,
        focus: f.focus.clone(),
        thevenin_bus: f.thevenin.clone(),
    };
    Ok((case, rho))
}

fn select_scenario(set: &ScenarioSet, name: Option<&str>) -> CliResult<Scenario> {
    match name {
        None => set
            .scenarios
            .first()
            .cloned()
            .ok_or_else(|| CliError::Usage("scenario set is empty".into())),
        Some(n) => set
            .scenarios
            .iter()
            .find(|s| s.name == n)
            .cloned()
            .ok_or_else(|| CliError::Usage(format!("scenario {n} not found"))),
    }
}

fn pair_names(pair: &[String]) -> CliResult<Vec<String>> {
    if pair.len() != 2 {
        return Err(CliError::Usage(format!(
            "--pair needs two gain names, got {}",
            pair.len()
        )));
    }
    let names = pair
        .iter()
        .map(|n| canonical_gain_name(n).map(str::to_string))
        .collect::<Result<Vec<_>, _>>()?;
    if names[0] == names[1] {
        return Err(CliError::Usage(format!("--pair repeats {}", names[0])));
    }
    Ok(names)
}

/// Domain of the pair: explicit bounds, or the tuning bounds of the variant.
fn pair_domain(names: &[String], bounds: &[f64], variant: DcVariant) -> CliResult<ParameterDomain> {
    match bounds.len() {
        4 => Ok(ParameterDomain::new(
            names.to_vec(),
            vec![bounds[0], bounds[2]],
            vec![bounds[1], bounds[3]],
        )?),
        0 => {
            let full = default_domain(variant);
            let mut lo = vec![];
            let mut hi = vec![];
            for n in names {
                let k = full.names.iter().position(|m| m == n).ok_or_else(|| {
                    CliError::Usage(format!(
                        "no default bounds for {n}; pass --domain lo1,hi1,lo2,hi2"
                    ))
                })?;
                lo.push(full.lo[k]);
                hi.push(full.hi[k]);
            }
            Ok(ParameterDomain::new(names.to_vec(), lo, hi)?)
        }
        n => Err(CliError::Usage(format!(
            "--domain needs four values, got {n}"
        ))),
    }
}

fn asm_config(s: &SamplingArgs, seed: u64) -> AsmConfig {
    AsmConfig {
        n_init: s.ninit,
        n_r: s.nr,
        n_a: s.na,
        p_th: s.pth,
        seed,
        rounds: s.rounds,
        svm: SvmOptions::default(),
    }
}

fn focus_variant(net: &NetworkModel, focus: &[String]) -> CliResult<DcVariant> {
    let dev = match focus.first() {
        Some(f) => net.device(f),
        None => net.devices.iter().find(|d| d.kind == DeviceKind::Ibr),
    };
    dev.and_then(|d| d.ibr.as_ref())
        .map(|s| s.control.dc_variant)
        .ok_or_else(|| CliError::Usage("no focus IBR found".into()))
}

// Manifold files

fn plot_svg(
    title: &str,
    model: &ManifoldModel,
    grid: &[GridPoint],
    star: Option<[f64; 2]>,
) -> CliResult<String> {
    let res = (grid.len() as f64).sqrt().round() as usize;
    if res * res != grid.len() || model.domain.dim() != 2 {
        return Err(CliError::Usage(format!(
            "plot needs a square 2-D grid, got {} points in {} dimensions",
            grid.len(),
            model.domain.dim()
        )));
    }
    let prob: Vec<f64> = grid.iter().map(|g| g.probability).collect();
    let mask: Vec<bool> = grid.iter().map(|g| g.in_rpi).collect();
    let d = &model.domain;
    Ok(manifold_svg(&ManifoldPlot {
        title,
        names: [&d.names[0], &d.names[1]],
        lo: [d.lo[0], d.lo[1]],
        hi: [d.hi[0], d.hi[1]],
        res,
        prob: &prob,
        in_rpi: Some(&mask),
        p_th: model.config.p_th,
        samples: &model.samples,
        star,
    })?)
}

fn grid_counts(grid: &[GridPoint], p_th: f64) -> (usize, usize, usize) {
    let stable = grid.iter().filter(|g| g.probability >= p_th).count();
    let rpi = grid.iter().filter(|g| g.in_rpi).count();
    let both = grid
        .iter()
        .filter(|g| g.in_rpi && g.probability >= p_th)
        .count();
    (stable, rpi, both)
}

const SUMMARY_HEADER: &str = "case,oracle_calls,stable_samples,degenerate,grid_cells,stable_cells,rpi_cells,stable_rpi_cells\n";

fn summary_row(name: &str, m: &ManifoldModel, grid: &[GridPoint]) -> String {
    let (stable, rpi, both) = grid_counts(grid, m.config.p_th);
    format!(
        "{},{},{},{},{},{stable},{rpi},{both}\n",
        csv_field(name),
        m.oracle_calls,
        m.samples.iter().filter(|s| s.s == 1).count(),
        u8::from(m.degenerate),
        grid.len()
    )
}

fn write_manifold(
    ctx: &mut Ctx,
    files: [&Path; 4],
    title: &str,
    cm: &CaseManifold,
    plot: bool,
) -> CliResult<()> {
    let [samples, grid, model, svg] = files;
    ctx.write(samples, &samples_csv(&cm.model.domain, &cm.model.samples))?;
    ctx.write(grid, &grid_csv(&cm.model.domain, &cm.grid))?;
    ctx.write(model, &(cm.model.to_json()? + "\n"))?;
    if plot {
        let star = [cm.tuned_point[0], cm.tuned_point[1]];
        let text = plot_svg(title, &cm.model, &cm.grid, Some(star))?;
        ctx.write(svg, &text)?;
    }
    Ok(())
}

/// Inverse of [`grid_csv`].
pub fn parse_grid_csv(text: &str, domain: &ParameterDomain) -> CliResult<Vec<GridPoint>> {
    let parse_err = |line: usize, msg: String| {
        CliError::Core(ssm_core::Error::Parse(format!("grid line {line}: {msg}")))
    };
    let mut lines = text.lines();
    let expected = format!("{},probability,in_rpi", domain.names.join(","));
    match lines.next() {
        Some(h) if h.trim_end() == expected => {}
        Some(h) => {
            return Err(parse_err(
                1,
                format!("header {h:?} does not match {expected:?}"),
            ))
        }
        None => return Err(parse_err(1, "file is empty".into())),
    }
    let d = domain.dim();
    let mut out = vec![];
    for (k, line) in lines.enumerate().filter(|(_, l)| !l.trim().is_empty()) {
        let fields: Vec<&str> = line.trim_end().split(',').collect();
        if fields.len() != d + 2 {
            return Err(parse_err(
                k + 2,
                format!("expected {} fields, got {}", d + 2, fields.len()),
            ));
        }
        let num = |s: &str| {
            s.parse::<f64>()
                .map_err(|_| parse_err(k + 2, format!("cannot parse {s:?}")))
        };
        let rho = fields[..d]
            .iter()
            .map(|s| num(s))
            .collect::<CliResult<Vec<_>>>()?;
        let probability = num(fields[d])?;
        let in_rpi = match fields[d + 1] {
            "0" => false,
            "1" => true,
            s => {
                return Err(parse_err(
                    k + 2,
                    format!("in_rpi must be 0 or 1, got {s:?}"),
                ))
            }
        };
        out.push(GridPoint {
            rho,
            probability,
            in_rpi,
        });
    }
    Ok(out)
}

// Commands

fn powerflow(cli: &Cli, ctx: &mut Ctx, a: &PowerflowArgs) -> CliResult<String> {
    let (net, set) = build_network(ctx, &a.net)?;
    let sc = select_scenario(&set, a.scenario.as_deref())?;
    let pf = solve_power_flow(&net, &sc)?;
    let mut s = String::from("kind,id,vm_pu,va_rad,p_pu,q_pu\n");
    for (k, id) in pf.bus_ids.iter().enumerate() {
        s.push_str(&format!(
            "bus,{},{:.17e},{:.17e},,\n",
            csv_field(id),
            pf.solution.vm[k],
            pf.solution.va[k]
        ));
    }
    for (id, p) in &pf.device_power {
        s.push_str(&format!(
            "device,{},,,{:.17e},{:.17e}\n",
            csv_field(id),
            p.re,
            p.im
        ));
    }
    match &a.out {
        None => Ok(s),
        Some(out) => {
            let path = ctx.out_path(out);
            ctx.write(&path, &s)?;
            ctx.write_manifest(cli, &sibling(&path, "_manifest.json"))?;
            Ok(format!("wrote {}\n", path.display()))
        }
    }
}

fn eigs(cli: &Cli, ctx: &mut Ctx, a: &EigsArgs) -> CliResult<String> {
    let (net, set) = build_network(ctx, &a.net)?;
    let (case, rho) = study_case(net, &a.focus)?;
    let sc = select_scenario(&set, a.scenario.as_deref())?;
    let sys = case_system(&case, &rho, &sc)?;
    let names = &sys.state_names;
    let mut am = String::from("state");
    for n in names {
        am.push(',');
        am.push_str(&csv_field(n));
    }
    am.push('\n');
    for i in 0..sys.order() {
        am.push_str(&csv_field(&names[i]));
        for j in 0..sys.order() {
            am.push_str(&format!(",{:.17e}", sys.a[(i, j)]));
        }
        am.push('\n');
    }
    let e = EigenDecomposition::new(&sys.a)?;
    let mut order: Vec<usize> = (0..e.order()).collect();
    order.sort_by(|&i, &j| {
        let (x, y) = (e.values()[i], e.values()[j]);
        y.re.total_cmp(&x.re).then(y.im.total_cmp(&x.im))
    });
    let mut sp = String::from("re,im,dominant_state\n");
    for k in order {
        let v = e.vector(k);
        let dom = (0..v.len())
            .max_by(|&i, &j| v[i].norm().total_cmp(&v[j].norm()).then(j.cmp(&i)))
            .map(|i| names[i].as_str())
            .unwrap_or("");
        let l = e.values()[k];
        sp.push_str(&format!("{:.17e},{:.17e},{}\n", l.re, l.im, csv_field(dom)));
    }
    let prefix = ctx.out_path(&a.out);
    ctx.write(&suffixed(&prefix, "_a.csv"), &am)?;
    ctx.write(&suffixed(&prefix, "_spectrum.csv"), &sp)?;
    ctx.write_manifest(cli, &suffixed(&prefix, "_manifest.json"))?;
    Ok(format!("states,{}\n", sys.order()))
}

fn stability(ctx: &mut Ctx, a: &StabilityArgs) -> CliResult<String> {
    let (net, set) = build_network(ctx, &a.net)?;
    let (case, rho) = study_case(net, &a.focus)?;
    let opts = StabilityOptions {
        stab_margin: a.margin,
        ..StabilityOptions::default()
    };
    let v = is_ps_stable(&rho, &set, &case, &opts)?;
    let mut s = format!("verdict,{}\n", if v.stable { "stable" } else { "unstable" });
    s.push_str("scenario,abscissa,worst_re,worst_im,reason\n");
    for o in &v.outcomes {
        let (re, im) = o
            .worst
            .map(|l| (format!("{:.17e}", l.re), format!("{:.17e}", l.im)))
            .unwrap_or_default();
        s.push_str(&format!(
            "{},{:.17e},{re},{im},{}\n",
            csv_field(&o.scenario),
            o.abscissa,
            csv_field(o.reason.as_deref().unwrap_or(""))
        ));
    }
    Ok(s)
}

fn asm(cli: &Cli, ctx: &mut Ctx, a: &AsmArgs) -> CliResult<String> {
    if a.focus.focus.is_empty() {
        return Err(CliError::Usage(
            "--focus names the IBRs whose gains vary".into(),
        ));
    }
    let (net, set) = build_network(ctx, &a.net)?;
    let names = pair_names(&a.sampling.pair)?;
    let domain = pair_domain(
        &names,
        &a.sampling.domain,
        focus_variant(&net, &a.focus.focus)?,
    )?;
    let (case, fixed) = study_case(net, &a.focus)?;
    let case = StudyCase {
        net: apply_params(&case.net, &fixed, &case.focus)?,
        ..case
    };
    let job = ManifoldJob {
        domain,
        asm: asm_config(&a.sampling, cli.seed),
        stability: StabilityOptions::default(),
        grid: a.sampling.grid,
    };
    let cm = case_manifold(&case, &set, &job)?;
    let prefix = ctx.out_path(&a.out);
    let files =
        ["_samples.csv", "_grid.csv", "_model.json", "_plot.svg"].map(|s| suffixed(&prefix, s));
    let title = prefix
        .file_name()
        .map(|s| s.to_string_lossy().into_owned())
        .unwrap_or_default();
    write_manifold(
        ctx,
        [&files[0], &files[1], &files[2], &files[3]],
        &title,
        &cm,
        a.plot,
    )?;
    ctx.write_manifest(cli, &suffixed(&prefix, "_manifest.json"))?;
    Ok(SUMMARY_HEADER.to_string() + &summary_row(&title, &cm.model, &cm.grid))
}

fn parse_connections(a: &TuneArgs) -> CliResult<Vec<Vec<String>>> {
    let Some(text) = &a.connections else {
        return if a.all_combinations {
            Err(CliError::Usage(
                "--all-combinations needs --connections".into(),
            ))
        } else {
            Ok(vec![vec![]])
        };
    };
    let combos: Vec<Vec<String>> = text
        .split(';')
        .map(|c| {
            c.split(',')
                .map(|s| s.trim().to_string())
                .filter(|s| !s.is_empty())
                .collect()
        })
        .collect();
    if !a.all_combinations {
        return Ok(combos);
    }
    let mut ids: Vec<String> = vec![];
    for id in combos.into_iter().flatten() {
        if !ids.contains(&id) {
            ids.push(id);
        }
    }
    if ids.len() > 16 {
        return Err(CliError::Usage(format!(
            "{} generators give too many combinations",
            ids.len()
        )));
    }
    Ok(combinations(&ids))
}

fn tune_cmd(cli: &Cli, ctx: &mut Ctx, a: &TuneArgs) -> CliResult<String> {
    let base = load_net(ctx, &a.net)?;
    let set = load_scenarios(ctx, a.scenarios.as_deref(), &base)?;
    let template = load_template(ctx, a.template.as_deref())?;
    let cases = parse_connections(a)?
        .into_iter()
        .map(|c| {
            Ok(StudyCase {
                name: if c.is_empty() {
                    "as-given".into()
                } else {
                    c.join("+")
                },
                net: replace_with_ibr(&base, &c, &template)?,
                focus: vec![],
                thevenin_bus: None,
            })
        })
        .collect::<CliResult<Vec<_>>>()?;
    let first = &cases[0];
    let dev = first
        .net
        .devices
        .iter()
        .find(|d| d.kind == DeviceKind::Ibr)
        .ok_or_else(|| CliError::Usage(format!("connection {} has no IBR to tune", first.name)))?;
    let spec = dev
        .ibr
        .as_ref()
        .ok_or_else(|| CliError::Usage(format!("{} lacks an ibr block", dev.id)))?;
    let v_d0 = operating_voltage(first, &set, &dev.id)?;
    let plant = LoopPlant::from_ibr(&spec.physical, &spec.control, first.net.omega_nom(), v_d0);
    let fixed = match &a.fix {
        Some(f) => parse_assignment(f)?,
        None => ParamAssignment::new(),
    };
    let full = default_domain(spec.control.dc_variant);
    let keep: Vec<usize> = (0..full.dim())
        .filter(|&k| !fixed.contains_key(&full.names[k]))
        .collect();
    if keep.is_empty() {
        return Err(CliError::Usage(
            "every gain is fixed; nothing to tune".into(),
        ));
    }
    let domain = ParameterDomain::new(
        keep.iter().map(|&k| full.names[k].clone()).collect(),
        keep.iter().map(|&k| full.lo[k]).collect(),
        keep.iter().map(|&k| full.hi[k]).collect(),
    )?;
    let problem = TunerProblem {
        domain: domain.clone(),
        fixed,
        base: spec.control.clone(),
        plant,
        cases,
        scenarios: set,
        eps: a.eps,
        stability: StabilityOptions::default(),
    };
    let opts = SurrogateOptions {
        budget: a.budget,
        seed: cli.seed,
        batch: a.batch,
    };
    let res = tune(&problem, &opts)?;
    let out = ctx.out_path(&a.out);
    ctx.write(&out, &to_json(&res)?)?;
    ctx.write(
        &sibling(&out, "_history.csv"),
        &history_csv(&domain, &res.history),
    )?;
    ctx.write_manifest(cli, &sibling(&out, "_manifest.json"))?;
    let mut s = format!(
        "feasible,{}\nalpha_max,{:.17e}\nevaluations,{}\n",
        res.feasible, res.alpha_max, res.evaluations
    );
    for (k, v) in &res.rho {
        s.push_str(&format!("{k},{v:.17e}\n"));
    }
    if !res.feasible {
        return Err(CliError::Infeasible(format!(
            "no point met every constraint in {} evaluations (best alpha_max {:.4e}); results in {}",
            res.evaluations,
            res.alpha_max,
            out.display()
        )));
    }
    Ok(s)
}

fn report(cli: &Cli, ctx: &mut Ctx, a: &ReportArgs) -> CliResult<String> {
    let model = ManifoldModel::from_json(&ctx.read(&a.model)?)?;
    let grid = parse_grid_csv(&ctx.read(&a.grid)?, &model.domain)?;
    let star = match &a.tuned {
        Some(t) => {
            let rho = load_tuned(ctx, t)?;
            let n = &model.domain.names;
            match (
                n.first().and_then(|k| rho.get(k)),
                n.get(1).and_then(|k| rho.get(k)),
            ) {
                (Some(x), Some(y)) => Some([*x, *y]),
                _ => None,
            }
        }
        None => None,
    };
    let title = a.title.clone().unwrap_or_else(|| {
        a.model
            .file_stem()
            .map(|s| s.to_string_lossy().into_owned())
            .unwrap_or_default()
    });
    let svg = plot_svg(&title, &model, &grid, star)?;
    let out = ctx.out_path(&a.out);
    ctx.write(&out, &svg)?;
    ctx.write_manifest(cli, &sibling(&out, "_manifest.json"))?;
    Ok(SUMMARY_HEADER.to_string() + &summary_row(&title, &model, &grid))
}

fn case_matrix(cli: &Cli, ctx: &mut Ctx, a: &CaseMatrixArgs) -> CliResult<String> {
    let base = load_net(ctx, &a.net)?;
    let set = load_scenarios(ctx, a.scenarios.as_deref(), &base)?;
    let matrix = CaseMatrix::from_json_str(&ctx.read(&a.cases)?)?;
    matrix.validate(&base)?;
    if !a.tuned.exists() {
        return Err(CliError::Usage(format!(
            "tuned gains file {} not found; run `ssm tune` first",
            a.tuned.display()
        )));
    }
    let tuned = load_tuned(ctx, &a.tuned)?;
    for n in &a.only {
        if !matrix.cases.iter().any(|c| &c.name == n) {
            return Err(CliError::Usage(format!("case {n} is not in the matrix")));
        }
    }
    let cases: Vec<_> = matrix
        .cases
        .iter()
        .filter(|c| a.only.is_empty() || a.only.contains(&c.name))
        .collect();
    let names = pair_names(&a.sampling.pair)?;
    let domain = pair_domain(
        &names,
        &a.sampling.domain,
        matrix.template.control.dc_variant,
    )?;
    let job = ManifoldJob {
        domain,
        asm: asm_config(&a.sampling, cli.seed),
        stability: StabilityOptions::default(),
        grid: a.sampling.grid,
    };
    job.asm.validate()?;
    let results = cases
        .par_iter()
        .map(|c| {
            let sc = c.build(&base, &matrix.template, &tuned)?;
            case_manifold(&sc, &set, &job)
        })
        .collect::<Result<Vec<_>, _>>()?;
    let mut summary = SUMMARY_HEADER.to_string();
    for cm in &results {
        let dir = ctx.out_path(Path::new(&cm.case));
        let files = ["samples.csv", "grid.csv", "model.json", "plot.svg"].map(|f| dir.join(f));
        write_manifold(
            ctx,
            [&files[0], &files[1], &files[2], &files[3]],
            &cm.case,
            cm,
            true,
        )?;
        summary.push_str(&summary_row(&cm.case, &cm.model, &cm.grid));
    }
    ctx.write(&ctx.out_path(Path::new("summary.csv")), &summary)?;
    ctx.write_manifest(cli, &ctx.out_path(Path::new("manifest.json")))?;
    Ok(summary)
}
