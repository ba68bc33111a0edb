//! Executes scenario probes and writes one report per probe.

use std::fs;
use std::io;
use std::path::{Path, PathBuf};

use foliation_blowup::action::{
    self, adjoint_matrix, adjoint_transport, closed_subgroup_check, coset_equal, embedding_check, eta_estimate,
    hblup_metric, isotropy_subalgebra, GroupoidElement, LieAlgebraAction, Verdict,
};
use foliation_blowup::blowup::{self, algebroid_fiber, characteristic_set, functoriality_check};
use foliation_blowup::foliation::{isotropy, regular_test, structure_functions_at, tangent_fiber};
use foliation_blowup::holonomy::{
    flow, flow_jacobian_t, hblup_fiber_dim, leaf_distribution, leaf_trace, period_bound_foliation,
};
use foliation_blowup::{BlowupPoint, Error, Subspace};
use nalgebra::{DMatrix, DVector};
use rand::Rng;
use rand_chacha::rand_core::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::Serialize;
use serde_json::{json, Value};

use crate::report::{self, Assertion};
use crate::scenario::{Call, ElementSpec, Expect, Format, Payload, PointSpec, Probe, Scenario};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum Status {
    Passed,
    AssertionFailed,
    Failed,
    InputError,
}

#[derive(Debug, Clone, Serialize)]
pub struct ProbeReport {
    pub index: usize,
    pub op: &'static str,
    pub seed: u64,
    pub params: Value,
    pub status: Status,
    pub error: Option<String>,
    pub assertions: Vec<Assertion>,
    pub result: Value,
}

#[derive(Debug, Clone, Serialize)]
pub struct Summary {
    pub scenario: String,
    pub kind: crate::scenario::Kind,
    pub seed: u64,
    pub probes: usize,
    pub passed: usize,
    pub files: Vec<String>,
}

#[derive(Debug, Clone)]
pub struct RunOutcome {
    pub reports: Vec<ProbeReport>,
    pub summary: Summary,
    pub exit_code: i32,
}

fn rows(m: &DMatrix<f64>) -> Vec<Vec<f64>> {
    m.row_iter().map(|r| r.iter().copied().collect()).collect()
}

fn subspace_view(s: &Subspace) -> Value {
    json!({"ambient": s.ambient_dim(), "dim": s.dim(), "basis": s.basis_vectors()})
}

fn point_view(p: &BlowupPoint) -> Value {
    json!({"base": p.base, "subspace": subspace_view(&p.subspace), "direction": p.direction})
}

fn to_value<T: Serialize>(v: &T) -> Value {
    serde_json::to_value(v).unwrap_or(Value::Null)
}

fn error_name(e: &Error) -> &'static str {
    match e {
        Error::InvalidInput(_) => "InvalidInput",
        Error::DimensionMismatch { .. } => "DimensionMismatch",
        Error::NotBracketClosed { .. } => "NotBracketClosed",
        Error::NoRegularApproach => "NoRegularApproach",
        Error::NotInAlgebra { .. } => "NotInAlgebra",
        Error::NotComposable { .. } => "NotComposable",
        Error::FlowEscape { .. } => "FlowEscape",
        Error::ClassUnresolved { .. } => "ClassUnresolved",
        Error::RankDrop { .. } => "RankDrop",
        Error::InvalidAlgebra(_) => "InvalidAlgebra",
    }
}

fn is_input_error(e: &Error) -> bool {
    matches!(e, Error::InvalidInput(_) | Error::DimensionMismatch { .. } | Error::InvalidAlgebra(_))
}

fn fiber_view(r: &blowup::BlowupFiberReport) -> Value {
    json!({
        "base": r.base,
        "cluster_dims": r.cluster_dims(),
        "clusters": r.clusters.iter().map(point_view).collect::<Vec<_>>(),
        "rays_sampled": r.rays_sampled,
        "non_convergent_rays": r.non_convergent_rays,
        "rays": r.rays.iter().map(|ray| json!({
            "direction": ray.direction,
            "regular_points": ray.regular_points,
            "limit": ray.limit.as_ref().map(subspace_view),
            "cluster": ray.cluster,
        })).collect::<Vec<_>>(),
        "property_report": r.property_report,
    })
}

fn fiber(payload: &Payload, x: &[f64], cfg: &blowup::BlowupConfig) -> Result<blowup::BlowupFiberReport, Error> {
    match payload {
        Payload::Action(a) => action::blowup_fiber_action(a, x, cfg),
        Payload::Foliation(f) => blowup::blowup_fiber(f, x, cfg),
    }
}

fn point(act: &LieAlgebraAction, spec: &PointSpec) -> Result<BlowupPoint, Error> {
    let subspace = match &spec.subspace {
        Some(v) => v.clone(),
        None => isotropy_subalgebra(act, &spec.base, 1e-8)?,
    };
    BlowupPoint::new(act.foliation(), spec.base.clone(), subspace, 1e-6)
}

fn check_len(expected: usize, got: usize) -> Result<(), Error> {
    if expected == got {
        Ok(())
    } else {
        Err(Error::DimensionMismatch { expected, got })
    }
}

fn element(act: &LieAlgebraAction, spec: &ElementSpec) -> Result<GroupoidElement, Error> {
    check_len(act.dim(), spec.g.len())?;
    let subspace = match &spec.subspace {
        Some(v) => v.clone(),
        None => isotropy_subalgebra(act, &spec.base, 1e-8)?,
    };
    let g = act.exp(&DVector::from_column_slice(&spec.g));
    GroupoidElement::new(act, g, subspace, spec.base.clone(), 1e-6)
}

/// Result of random groupoid-axiom trials.
#[derive(Debug, Clone, Serialize)]
pub struct AxiomReport {
    pub checks: usize,
    pub yes: usize,
    pub no: usize,
    pub inconclusive: usize,
    pub conclusive_rate: f64,
    pub passed: bool,
}

fn random_coords(k: usize, scale: f64, rng: &mut ChaCha8Rng) -> DVector<f64> {
    DVector::from_fn(k, |_, _| scale * (2.0 * rng.random::<f64>() - 1.0))
}

/// Moves `g` to another representative `g exp(w)` of its coset, `w ∈ V`.
fn reshuffle(act: &LieAlgebraAction, gamma: &GroupoidElement, scale: f64, rng: &mut ChaCha8Rng) -> GroupoidElement {
    let b = gamma.subspace.basis();
    let w = b * random_coords(b.ncols(), scale, rng);
    GroupoidElement {
        g: &gamma.g * act.exp(&w),
        ..gamma.clone()
    }
}

/// Unit, inverse and associativity laws on random composable triples, each
/// compared up to coset equality with freshly randomised representatives.
pub fn groupoid_axioms(
    act: &LieAlgebraAction,
    samples: usize,
    scale: f64,
    origin_fraction: f64,
    tol: f64,
    seed: u64,
) -> Result<AxiomReport, Error> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let n = act.ambient_dim();
    let k = act.dim();
    let linear = act.group_dim() == n && !act.is_flow();
    let mut verdicts = Vec::with_capacity(samples * 5);
    for _ in 0..samples {
        let at_origin = linear && rng.random::<f64>() < origin_fraction;
        let dir: Vec<f64> = (0..n).map(|_| 2.0 * rng.random::<f64>() - 1.0).collect();
        let (x, v) = if at_origin {
            // For linear actions the ray limit along v is the isotropy at v.
            (vec![0.0; n], isotropy_subalgebra(act, &dir, 1e-8)?)
        } else {
            let x: Vec<f64> = dir.iter().map(|d| 2.0 * d).collect();
            let v = isotropy_subalgebra(act, &x, 1e-8)?;
            (x, v)
        };
        let g1 = act.exp(&random_coords(k, scale, &mut rng));
        let g2 = act.exp(&random_coords(k, scale, &mut rng));
        let g3 = act.exp(&random_coords(k, scale, &mut rng));
        let c1 = GroupoidElement { g: g1, subspace: v, base: x };
        let t1 = action::target(act, &c1)?;
        let c2 = GroupoidElement { g: g2, subspace: t1.subspace, base: t1.base };
        let t2 = action::target(act, &c2)?;
        let c3 = GroupoidElement { g: g3, subspace: t2.subspace, base: t2.base };
        let ctol = 1e-6;

        let unit_s = GroupoidElement::unit(act, c1.subspace.clone(), c1.base.clone());
        let unit_t = {
            let t = action::target(act, &c1)?;
            GroupoidElement::unit(act, t.subspace, t.base)
        };
        let right = action::compose(act, &c1, &unit_s, ctol)?;
        let left = action::compose(act, &unit_t, &c1, ctol)?;
        let inv = action::inverse(act, &c1)?;
        let inv_left = action::compose(act, &inv, &c1, ctol)?;
        let inv_right = action::compose(act, &c1, &inv, ctol)?;
        let a = action::compose(act, &action::compose(act, &c3, &c2, ctol)?, &c1, ctol)?;
        let b = action::compose(act, &c3, &action::compose(act, &c2, &c1, ctol)?, ctol)?;

        let pairs = [
            (right, reshuffle(act, &c1, scale, &mut rng)),
            (left, reshuffle(act, &c1, scale, &mut rng)),
            (inv_left, reshuffle(act, &unit_s, scale, &mut rng)),
            (inv_right, reshuffle(act, &unit_t, scale, &mut rng)),
            (reshuffle(act, &a, scale, &mut rng), reshuffle(act, &b, scale, &mut rng)),
        ];
        for (p, q) in &pairs {
            verdicts.push(coset_equal(act, p, q, tol)?);
        }
    }
    let yes = verdicts.iter().filter(|v| **v == Verdict::Yes).count();
    let no = verdicts.iter().filter(|v| **v == Verdict::No).count();
    let checks = verdicts.len();
    let conclusive_rate = if checks == 0 { 1.0 } else { (yes + no) as f64 / checks as f64 };
    Ok(AxiomReport {
        checks,
        yes,
        no,
        inconclusive: checks - yes - no,
        conclusive_rate,
        passed: no == 0 && conclusive_rate >= 0.95,
    })
}

/// Runs one probe call and returns its JSON result.
pub fn execute(payload: &Payload, call: &Call, scenario_seed: u64) -> Result<Value, Error> {
    let f = payload.foliation();
    let seeded = |s: u64| s.wrapping_add(scenario_seed);
    let act = || payload.action().ok_or_else(|| Error::InvalidInput("operation needs a lie_action scenario".into()));
    Ok(match call {
        Call::Isotropy(p) => subspace_view(&isotropy(f, &p.x, p.tol)?),
        Call::TangentFiber(p) => subspace_view(&tangent_fiber(f, &p.x, p.tol)?),
        Call::RegularTest(p) => to_value(&regular_test(f, &p.x, p.radius, p.samples, p.tol, seeded(p.seed.unwrap_or(0)))?),
        Call::StructureFunctions(p) => {
            let mut cfg = p.config.clone();
            cfg.seed = seeded(cfg.seed);
            let s = structure_functions_at(f, &p.x, &cfg, p.tol)?;
            json!({"k": s.k, "f": s.f, "residual": s.residual})
        }
        Call::BlowupFiber(p) => {
            let mut cfg = p.config.clone();
            cfg.seed = seeded(cfg.seed);
            fiber_view(&fiber(payload, &p.x, &cfg)?)
        }
        Call::FiberDimensions(p) => {
            let mut cfg = p.config.clone();
            cfg.seed = seeded(cfg.seed);
            let r = fiber(payload, &p.x, &cfg)?;
            let leaf = foliation_blowup::holonomy::LeafConfig {
                seed: cfg.seed,
                ..Default::default()
            };
            let mut out = Vec::new();
            let mut all_equal = true;
            for c in &r.clusters {
                let k_minus = f.rank() - c.subspace.dim();
                let alg = algebroid_fiber(f, c)?.dim();
                let hb = hblup_fiber_dim(f, c, &leaf)?;
                all_equal &= k_minus == alg && alg == hb;
                out.push(json!({
                    "dim_v": c.subspace.dim(),
                    "k_minus_dim_v": k_minus,
                    "algebroid_dim": alg,
                    "hblup_fiber_dim": hb,
                }));
            }
            json!({"clusters": out, "all_equal": all_equal})
        }
        Call::CharacteristicSet(p) => {
            let mut cfg = p.config.clone();
            cfg.seed = seeded(cfg.seed);
            let r = fiber(payload, &p.x, &cfg)?;
            let ann = characteristic_set(f, &r)?;
            json!({"annihilators": ann.iter().map(subspace_view).collect::<Vec<_>>()})
        }
        Call::Functoriality(p) => {
            let mut cfg = p.config.clone();
            cfg.seed = seeded(cfg.seed);
            to_value(&functoriality_check(f, &p.x, p.m, p.tol, &cfg)?)
        }
        Call::Flow(p) => json!({"point": flow(f, &p.y, &p.t)?}),
        Call::FlowJacobian(p) => json!({"d_t": rows(&flow_jacobian_t(f, &p.y, &p.t)?)}),
        Call::LeafDistribution(p) => {
            let v = match &p.v {
                Some(v) => v.clone(),
                None => isotropy(f, &p.y, 1e-8)?,
            };
            let mut cfg = p.config.clone();
            cfg.seed = seeded(cfg.seed);
            subspace_view(&leaf_distribution(f, &p.y, &p.t, &v, &cfg)?)
        }
        Call::LeafTrace(p) => {
            let v = match &p.v {
                Some(v) => v.clone(),
                None => isotropy(f, &p.y, 1e-8)?,
            };
            let mut cfg = p.config.clone();
            cfg.leaf.seed = seeded(cfg.leaf.seed);
            json!({"points": to_value(&leaf_trace(f, &p.y, &p.t, &v, &cfg)?)})
        }
        Call::PeriodBound(p) => {
            let mut cfg = p.config.clone();
            cfg.seed = seeded(cfg.seed);
            to_value(&period_bound_foliation(f, &p.region, &cfg)?)
        }
        Call::EtaEstimate(p) => {
            let mut cfg = p.config.clone();
            cfg.seed = seeded(cfg.seed);
            to_value(&eta_estimate(act()?, &p.region, &cfg)?)
        }
        Call::AdjointTransport(p) => {
            let a = act()?;
            check_len(a.dim(), p.g.len())?;
            let g = a.exp(&DVector::from_column_slice(&p.g));
            let v = match &p.v {
                Some(v) => v.clone(),
                None => isotropy_subalgebra(a, &p.x, 1e-8)?,
            };
            let gamma = GroupoidElement::new(a, g.clone(), v, p.x.clone(), 1e-6)?;
            let t = action::target(a, &gamma)?;
            json!({
                "ad": rows(&adjoint_matrix(a, &g)?),
                "subspace": subspace_view(&adjoint_transport(a, &g, &gamma.subspace)?),
                "target_base": t.base,
            })
        }
        Call::GroupoidAxioms(p) => to_value(&groupoid_axioms(
            act()?,
            p.samples,
            p.scale,
            p.origin_fraction,
            p.tol,
            seeded(p.seed.unwrap_or(0)),
        )?),
        Call::HblupMetric(p) => {
            let a = act()?;
            let d = hblup_metric(a, &element(a, &p.a)?, &element(a, &p.b)?, p.samples, seeded(p.seed.unwrap_or(0)))?;
            json!({"distance": d})
        }
        Call::Embedding(p) => {
            let a = act()?;
            let mut cfg = p.config.clone();
            cfg.seed = seeded(cfg.seed);
            let nearby = p.nearby.iter().map(|q| point(a, q)).collect::<Result<Vec<_>, _>>()?;
            to_value(&embedding_check(a, &point(a, &p.p)?, &nearby, &cfg)?)
        }
        Call::ClosedSubgroup(p) => {
            let mut cfg = p.config.clone();
            cfg.seed = seeded(cfg.seed);
            to_value(&closed_subgroup_check(act()?, &p.v, &cfg)?)
        }
    })
}

fn run_probe(scenario: &Scenario, index: usize, probe: &Probe) -> ProbeReport {
    let op = probe.call.op().name();
    log::info!("probe {index}: {op}");
    let expected_error = probe.expect.get("error").and_then(|e| match e {
        Expect::Exact(Value::String(s)) => Some(s.clone()),
        _ => None,
    });
    let mut report = ProbeReport {
        index,
        op,
        seed: scenario.seed,
        params: probe.call.params_json(),
        status: Status::Passed,
        error: None,
        assertions: Vec::new(),
        result: Value::Null,
    };
    match execute(&scenario.payload, &probe.call, scenario.seed) {
        Ok(result) => {
            report.assertions = report::check(&result, &probe.expect);
            if let Some(name) = &expected_error {
                report.assertions.push(Assertion {
                    path: "error".into(),
                    expected: Value::String(name.clone()),
                    actual: Vec::new(),
                    passed: false,
                });
            }
            if report.assertions.iter().any(|a| !a.passed) {
                report.status = Status::AssertionFailed;
            }
            report.result = result;
        }
        Err(e) => {
            let name = error_name(&e);
            report.error = Some(e.to_string());
            report.status = match &expected_error {
                Some(want) if want == name => Status::Passed,
                Some(_) => Status::AssertionFailed,
                None if is_input_error(&e) => Status::InputError,
                None => Status::Failed,
            };
            if let Some(want) = &expected_error {
                report.assertions.push(Assertion {
                    path: "error".into(),
                    expected: Value::String(want.clone()),
                    actual: vec![Value::String(name.into())],
                    passed: want == name,
                });
            }
        }
    }
    match report.status {
        Status::Passed => log::debug!("probe {index} passed"),
        s => log::warn!("probe {index} ({op}) finished with {s:?}"),
    }
    report
}

/// Runs every probe. Reports are identical whether probes run in parallel or not.
pub fn run(scenario: &Scenario, parallel: bool) -> Vec<ProbeReport> {
    let indexed: Vec<(usize, &Probe)> = scenario.probes.iter().enumerate().collect();
    if parallel {
        indexed.par_iter().map(|(i, p)| run_probe(scenario, *i, p)).collect()
    } else {
        indexed.iter().map(|(i, p)| run_probe(scenario, *i, p)).collect()
    }
}

/// 0 when every probe passed, 1 on input errors, 2 otherwise.
pub fn exit_code(reports: &[ProbeReport]) -> i32 {
    if reports.iter().any(|r| r.status == Status::InputError) {
        1
    } else if reports.iter().all(|r| r.status == Status::Passed) {
        0
    } else {
        2
    }
}

fn write(dir: &Path, name: &str, contents: &str, files: &mut Vec<String>) -> io::Result<()> {
    fs::write(dir.join(name), contents)?;
    files.push(name.to_string());
    Ok(())
}

/// Runs the scenario and writes `<index>-<op>.json` per probe (plus CSV
/// mirrors when requested) and `summary.json` into `out`.
pub fn run_to_dir(scenario: &Scenario, out: Option<&Path>, parallel: bool) -> io::Result<RunOutcome> {
    let dir: PathBuf = out.map_or_else(|| scenario.output.path.clone(), Path::to_path_buf);
    fs::create_dir_all(&dir)?;
    let reports = run(scenario, parallel);
    let mut files = Vec::new();
    for r in &reports {
        let stem = format!("{}-{}", r.index, r.op);
        write(&dir, &format!("{stem}.json"), &report::to_json_string(r), &mut files)?;
        if scenario.output.format == Format::Csv {
            for (table, body) in report::csv_tables(&r.result) {
                write(&dir, &format!("{stem}-{table}.csv"), &body, &mut files)?;
            }
        }
    }
    let summary = Summary {
        scenario: scenario.name.clone(),
        kind: scenario.payload.kind(),
        seed: scenario.seed,
        probes: reports.len(),
        passed: reports.iter().filter(|r| r.status == Status::Passed).count(),
        files,
    };
    fs::write(dir.join("summary.json"), report::to_json_string(&summary))?;
    let exit_code = exit_code(&reports);
    Ok(RunOutcome {
        reports,
        summary,
        exit_code,
    })
}
