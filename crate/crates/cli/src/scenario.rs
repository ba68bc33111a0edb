//! Scenario files: a foliation or action payload, a seed, and a list of probes.

use std::collections::BTreeMap;
use std::path::PathBuf;

use foliation_blowup::action::{ClosedSubgroupConfig, EmbeddingConfig, EtaConfig, Region};
use foliation_blowup::foliation::CollocationConfig;
use foliation_blowup::holonomy::{LeafConfig, TraceConfig};
use foliation_blowup::{BlowupConfig, FoliationModule, LieAlgebraAction, Subspace};
use serde::{Deserialize, Serialize};
use serde_json::value::RawValue;
use serde_json::Value;

#[derive(Debug, thiserror::Error)]
#[error("{message} at line {line}, column {column}")]
pub struct SchemaError {
    pub message: String,
    pub line: usize,
    pub column: usize,
}

impl SchemaError {
    fn from_json(e: serde_json::Error, offset: (usize, usize)) -> Self {
        // serde_json positions are relative to the fragment it was given.
        let (line, column) = if e.line() <= 1 {
            (offset.0, offset.1 + e.column().saturating_sub(1))
        } else {
            (offset.0 + e.line() - 1, e.column())
        };
        SchemaError {
            message: strip_position(&e.to_string()),
            line,
            column,
        }
    }
}

fn strip_position(msg: &str) -> String {
    match msg.rfind(" at line ") {
        Some(i) => msg[..i].to_string(),
        None => msg.to_string(),
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Kind {
    LieAction,
    PolyFoliation,
}

#[derive(Debug, Clone)]
pub enum Payload {
    Action(LieAlgebraAction),
    Foliation(FoliationModule),
}

impl Payload {
    pub fn foliation(&self) -> &FoliationModule {
        match self {
            Payload::Action(a) => a.foliation(),
            Payload::Foliation(f) => f,
        }
    }

    pub fn action(&self) -> Option<&LieAlgebraAction> {
        match self {
            Payload::Action(a) => Some(a),
            Payload::Foliation(_) => None,
        }
    }

    pub fn kind(&self) -> Kind {
        match self {
            Payload::Action(_) => Kind::LieAction,
            Payload::Foliation(_) => Kind::PolyFoliation,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Format {
    #[default]
    Json,
    Csv,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Output {
    #[serde(default = "default_dir")]
    pub path: PathBuf,
    #[serde(default)]
    pub format: Format,
}

fn default_dir() -> PathBuf {
    PathBuf::from("reports")
}

impl Default for Output {
    fn default() -> Self {
        Output {
            path: default_dir(),
            format: Format::Json,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Op {
    Isotropy,
    TangentFiber,
    RegularTest,
    StructureFunctions,
    BlowupFiber,
    FiberDimensions,
    CharacteristicSet,
    Functoriality,
    Flow,
    FlowJacobian,
    LeafDistribution,
    LeafTrace,
    PeriodBound,
    EtaEstimate,
    AdjointTransport,
    GroupoidAxioms,
    HblupMetric,
    Embedding,
    ClosedSubgroup,
}

impl Op {
    pub fn name(self) -> &'static str {
        match self {
            Op::Isotropy => "isotropy",
            Op::TangentFiber => "tangent_fiber",
            Op::RegularTest => "regular_test",
            Op::StructureFunctions => "structure_functions",
            Op::BlowupFiber => "blowup_fiber",
            Op::FiberDimensions => "fiber_dimensions",
            Op::CharacteristicSet => "characteristic_set",
            Op::Functoriality => "functoriality",
            Op::Flow => "flow",
            Op::FlowJacobian => "flow_jacobian",
            Op::LeafDistribution => "leaf_distribution",
            Op::LeafTrace => "leaf_trace",
            Op::PeriodBound => "period_bound",
            Op::EtaEstimate => "eta_estimate",
            Op::AdjointTransport => "adjoint_transport",
            Op::GroupoidAxioms => "groupoid_axioms",
            Op::HblupMetric => "hblup_metric",
            Op::Embedding => "embedding",
            Op::ClosedSubgroup => "closed_subgroup",
        }
    }

    pub fn needs_action(self) -> bool {
        matches!(
            self,
            Op::EtaEstimate
                | Op::AdjointTransport
                | Op::GroupoidAxioms
                | Op::HblupMetric
                | Op::Embedding
                | Op::ClosedSubgroup
        )
    }
}

fn tol_default() -> f64 {
    1e-8
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PointParams {
    pub x: Vec<f64>,
    #[serde(default = "tol_default")]
    pub tol: f64,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RegularParams {
    pub x: Vec<f64>,
    #[serde(default = "RegularParams::radius")]
    pub radius: f64,
    #[serde(default = "RegularParams::samples")]
    pub samples: usize,
    #[serde(default = "tol_default")]
    pub tol: f64,
    pub seed: Option<u64>,
}

impl RegularParams {
    fn radius() -> f64 {
        0.1
    }
    fn samples() -> usize {
        16
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct StructureParams {
    pub x: Vec<f64>,
    #[serde(default)]
    pub config: CollocationConfig,
    #[serde(default = "StructureParams::tol")]
    pub tol: f64,
}

impl StructureParams {
    fn tol() -> f64 {
        1e-6
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct FiberParams {
    pub x: Vec<f64>,
    #[serde(default)]
    pub config: BlowupConfig,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct FunctorialityParams {
    pub x: Vec<f64>,
    pub m: usize,
    #[serde(default = "FunctorialityParams::tol")]
    pub tol: f64,
    #[serde(default)]
    pub config: BlowupConfig,
}

impl FunctorialityParams {
    fn tol() -> f64 {
        1e-6
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct FlowParams {
    pub y: Vec<f64>,
    pub t: Vec<f64>,
}

/// `v` defaults to the isotropy at `y` when absent.
#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct LeafParams {
    pub y: Vec<f64>,
    pub t: Vec<f64>,
    pub v: Option<Subspace>,
    #[serde(default)]
    pub config: LeafConfig,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TraceParams {
    pub y: Vec<f64>,
    pub t: Vec<f64>,
    pub v: Option<Subspace>,
    #[serde(default)]
    pub config: TraceConfig,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct EtaParams {
    pub region: Region,
    #[serde(default)]
    pub config: EtaConfig,
}

/// Group elements are given by algebra coordinates and exponentiated.
#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct AdjointParams {
    pub g: Vec<f64>,
    pub x: Vec<f64>,
    pub v: Option<Subspace>,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct AxiomParams {
    #[serde(default = "AxiomParams::samples")]
    pub samples: usize,
    #[serde(default = "tol_default")]
    pub tol: f64,
    /// Coordinate scale of the random group elements.
    #[serde(default = "AxiomParams::scale")]
    pub scale: f64,
    /// Fraction of draws based at the origin.
    #[serde(default = "AxiomParams::origin_fraction")]
    pub origin_fraction: f64,
    pub seed: Option<u64>,
}

impl AxiomParams {
    fn samples() -> usize {
        100
    }
    fn scale() -> f64 {
        0.5
    }
    fn origin_fraction() -> f64 {
        0.25
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ElementSpec {
    pub g: Vec<f64>,
    pub base: Vec<f64>,
    pub subspace: Option<Subspace>,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct MetricParams {
    pub a: ElementSpec,
    pub b: ElementSpec,
    #[serde(default = "MetricParams::samples")]
    pub samples: usize,
    pub seed: Option<u64>,
}

impl MetricParams {
    fn samples() -> usize {
        64
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PointSpec {
    pub base: Vec<f64>,
    pub subspace: Option<Subspace>,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct EmbeddingParams {
    pub p: PointSpec,
    #[serde(default)]
    pub nearby: Vec<PointSpec>,
    #[serde(default)]
    pub config: EmbeddingConfig,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ClosedParams {
    pub v: Subspace,
    #[serde(default)]
    pub config: ClosedSubgroupConfig,
}

#[derive(Debug, Clone)]
pub enum Call {
    Isotropy(PointParams),
    TangentFiber(PointParams),
    RegularTest(RegularParams),
    StructureFunctions(StructureParams),
    BlowupFiber(FiberParams),
    FiberDimensions(FiberParams),
    CharacteristicSet(FiberParams),
    Functoriality(FunctorialityParams),
    Flow(FlowParams),
    FlowJacobian(FlowParams),
    LeafDistribution(LeafParams),
    LeafTrace(TraceParams),
    PeriodBound(EtaParams),
    EtaEstimate(EtaParams),
    AdjointTransport(AdjointParams),
    GroupoidAxioms(AxiomParams),
    HblupMetric(MetricParams),
    Embedding(EmbeddingParams),
    ClosedSubgroup(ClosedParams),
}

impl Call {
    pub fn parse(op: Op, params: &str) -> serde_json::Result<Call> {
        use serde_json::from_str as p;
        Ok(match op {
            Op::Isotropy => Call::Isotropy(p(params)?),
            Op::TangentFiber => Call::TangentFiber(p(params)?),
            Op::RegularTest => Call::RegularTest(p(params)?),
            Op::StructureFunctions => Call::StructureFunctions(p(params)?),
            Op::BlowupFiber => Call::BlowupFiber(p(params)?),
            Op::FiberDimensions => Call::FiberDimensions(p(params)?),
            Op::CharacteristicSet => Call::CharacteristicSet(p(params)?),
            Op::Functoriality => Call::Functoriality(p(params)?),
            Op::Flow => Call::Flow(p(params)?),
            Op::FlowJacobian => Call::FlowJacobian(p(params)?),
            Op::LeafDistribution => Call::LeafDistribution(p(params)?),
            Op::LeafTrace => Call::LeafTrace(p(params)?),
            Op::PeriodBound => Call::PeriodBound(p(params)?),
            Op::EtaEstimate => Call::EtaEstimate(p(params)?),
            Op::AdjointTransport => Call::AdjointTransport(p(params)?),
            Op::GroupoidAxioms => Call::GroupoidAxioms(p(params)?),
            Op::HblupMetric => Call::HblupMetric(p(params)?),
            Op::Embedding => Call::Embedding(p(params)?),
            Op::ClosedSubgroup => Call::ClosedSubgroup(p(params)?),
        })
    }

    pub fn op(&self) -> Op {
        match self {
            Call::Isotropy(_) => Op::Isotropy,
            Call::TangentFiber(_) => Op::TangentFiber,
            Call::RegularTest(_) => Op::RegularTest,
            Call::StructureFunctions(_) => Op::StructureFunctions,
            Call::BlowupFiber(_) => Op::BlowupFiber,
            Call::FiberDimensions(_) => Op::FiberDimensions,
            Call::CharacteristicSet(_) => Op::CharacteristicSet,
            Call::Functoriality(_) => Op::Functoriality,
            Call::Flow(_) => Op::Flow,
            Call::FlowJacobian(_) => Op::FlowJacobian,
            Call::LeafDistribution(_) => Op::LeafDistribution,
            Call::LeafTrace(_) => Op::LeafTrace,
            Call::PeriodBound(_) => Op::PeriodBound,
            Call::EtaEstimate(_) => Op::EtaEstimate,
            Call::AdjointTransport(_) => Op::AdjointTransport,
            Call::GroupoidAxioms(_) => Op::GroupoidAxioms,
            Call::HblupMetric(_) => Op::HblupMetric,
            Call::Embedding(_) => Op::Embedding,
            Call::ClosedSubgroup(_) => Op::ClosedSubgroup,
        }
    }

    pub fn params_json(&self) -> Value {
        let v = match self {
            Call::Isotropy(p) | Call::TangentFiber(p) => serde_json::to_value(p),
            Call::RegularTest(p) => serde_json::to_value(p),
            Call::StructureFunctions(p) => serde_json::to_value(p),
            Call::BlowupFiber(p) | Call::FiberDimensions(p) | Call::CharacteristicSet(p) => serde_json::to_value(p),
            Call::Functoriality(p) => serde_json::to_value(p),
            Call::Flow(p) | Call::FlowJacobian(p) => serde_json::to_value(p),
            Call::LeafDistribution(p) => serde_json::to_value(p),
            Call::LeafTrace(p) => serde_json::to_value(p),
            Call::PeriodBound(p) | Call::EtaEstimate(p) => serde_json::to_value(p),
            Call::AdjointTransport(p) => serde_json::to_value(p),
            Call::GroupoidAxioms(p) => serde_json::to_value(p),
            Call::HblupMetric(p) => serde_json::to_value(p),
            Call::Embedding(p) => serde_json::to_value(p),
            Call::ClosedSubgroup(p) => serde_json::to_value(p),
        };
        v.unwrap_or(Value::Null)
    }
}

/// Expected value at a dotted path of the probe result: `{"approx", "tol"}`,
/// `{"min", "max"}` (either bound optional) or any other JSON value compared
/// exactly.
#[derive(Debug, Clone, PartialEq, Serialize)]
#[serde(untagged)]
pub enum Expect {
    Approx { approx: f64, tol: f64 },
    Range(Range),
    Exact(Value),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Range {
    #[serde(default)]
    pub min: Option<f64>,
    #[serde(default)]
    pub max: Option<f64>,
}

#[derive(Deserialize)]
#[serde(deny_unknown_fields)]
struct ApproxSpec {
    approx: f64,
    #[serde(default = "ApproxSpec::tol")]
    tol: f64,
}

impl ApproxSpec {
    fn tol() -> f64 {
        1e-9
    }
}

impl<'de> Deserialize<'de> for Expect {
    fn deserialize<D: serde::Deserializer<'de>>(d: D) -> Result<Self, D::Error> {
        use serde::de::Error as _;
        let v = Value::deserialize(d)?;
        let Value::Object(map) = &v else {
            return Ok(Expect::Exact(v));
        };
        if map.contains_key("approx") {
            let a: ApproxSpec = serde_json::from_value(v).map_err(D::Error::custom)?;
            Ok(Expect::Approx {
                approx: a.approx,
                tol: a.tol,
            })
        } else if !map.is_empty() && map.keys().all(|k| k == "min" || k == "max") {
            Ok(Expect::Range(serde_json::from_value(v).map_err(D::Error::custom)?))
        } else {
            Ok(Expect::Exact(v))
        }
    }
}

#[derive(Debug, Clone)]
pub struct Probe {
    pub call: Call,
    /// Dotted path into the result (`"clusters.len"`, `"rays.*.cluster"`).
    /// The key `"error"` names an expected error variant instead.
    pub expect: BTreeMap<String, Expect>,
}

impl Probe {
    pub fn new(call: Call) -> Self {
        Probe {
            call,
            expect: BTreeMap::new(),
        }
    }

    pub fn expect(mut self, path: &str, e: Expect) -> Self {
        self.expect.insert(path.to_string(), e);
        self
    }
}

#[derive(Debug, Clone)]
pub struct Scenario {
    pub name: String,
    pub payload: Payload,
    pub probes: Vec<Probe>,
    pub seed: u64,
    pub output: Output,
}

#[derive(Deserialize)]
#[serde(deny_unknown_fields)]
struct RawScenario<'a> {
    kind: Kind,
    #[serde(borrow)]
    payload: &'a RawValue,
    #[serde(default, borrow)]
    probes: Vec<RawProbe<'a>>,
    #[serde(default)]
    seed: u64,
    #[serde(default)]
    output: Output,
}

#[derive(Deserialize)]
#[serde(deny_unknown_fields)]
struct RawProbe<'a> {
    #[serde(borrow)]
    op: &'a RawValue,
    #[serde(default, borrow)]
    params: Option<&'a RawValue>,
    #[serde(default, borrow)]
    expect: Option<&'a RawValue>,
}

/// 1-based line and column of `fragment` inside `src`.
fn locate(src: &str, fragment: &str) -> (usize, usize) {
    let offset = (fragment.as_ptr() as usize).saturating_sub(src.as_ptr() as usize).min(src.len());
    let before = &src[..offset];
    let line = before.matches('\n').count() + 1;
    let column = before.rfind('\n').map_or(offset, |i| offset - i - 1) + 1;
    (line, column)
}

fn parse_fragment<T: for<'de> Deserialize<'de>>(src: &str, raw: &RawValue) -> Result<T, SchemaError> {
    serde_json::from_str(raw.get()).map_err(|e| SchemaError::from_json(e, locate(src, raw.get())))
}

impl Scenario {
    /// Parses and type-checks a scenario file. Every probe is validated
    /// before anything runs.
    pub fn parse(name: &str, src: &str) -> Result<Scenario, SchemaError> {
        let raw: RawScenario = serde_json::from_str(src).map_err(|e| SchemaError::from_json(e, (1, 1)))?;
        let payload = match raw.kind {
            Kind::LieAction => Payload::Action(parse_fragment(src, raw.payload)?),
            Kind::PolyFoliation => Payload::Foliation(parse_fragment(src, raw.payload)?),
        };
        let mut probes = Vec::with_capacity(raw.probes.len());
        for rp in &raw.probes {
            let op: Op = parse_fragment(src, rp.op)?;
            if op.needs_action() && payload.action().is_none() {
                let (line, column) = locate(src, rp.op.get());
                return Err(SchemaError {
                    message: format!("operation `{}` needs a lie_action scenario", op.name()),
                    line,
                    column,
                });
            }
            let call = match rp.params {
                Some(p) => Call::parse(op, p.get()).map_err(|e| SchemaError::from_json(e, locate(src, p.get())))?,
                None => Call::parse(op, "{}").map_err(|e| {
                    let (line, column) = locate(src, rp.op.get());
                    SchemaError {
                        message: strip_position(&e.to_string()),
                        line,
                        column,
                    }
                })?,
            };
            let expect = match rp.expect {
                Some(e) => parse_fragment(src, e)?,
                None => BTreeMap::new(),
            };
            probes.push(Probe { call, expect });
        }
        Ok(Scenario {
            name: name.to_string(),
            payload,
            probes,
            seed: raw.seed,
            output: raw.output,
        })
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    const SRC: &str = r#"{
  "kind": "poly_foliation",
  "payload": {"n": 1, "generators": [{"components": [[{"exponents": [0], "coeff": 1.0}]]}]},
  "probes": [
    {"op": "isotropy", "params": {"x": [0.5]}},
    {"op": "flow", "params": {"y": [0.0], "t": [1.0]}, "expect": {"point.0": {"approx": 1.0}}}
  ]
}"#;

    #[test]
    fn parses_probes() {
        let s = Scenario::parse("t", SRC).unwrap();
        assert_eq!(s.probes.len(), 2);
        assert_eq!(s.probes[1].call.op(), Op::Flow);
        assert_eq!(s.probes[1].expect["point.0"], Expect::Approx { approx: 1.0, tol: 1e-9 });
        assert_eq!(s.output.format, Format::Json);
    }

    #[test]
    fn expectation_forms() {
        let e: Expect = serde_json::from_str("[0, 1]").unwrap();
        assert_eq!(e, Expect::Exact(serde_json::json!([0, 1])));
        let e: Expect = serde_json::from_str(r#"{"min": 2}"#).unwrap();
        assert_eq!(e, Expect::Range(Range { min: Some(2.0), max: None }));
        let e: Expect = serde_json::from_str(r#"{"approx": 2, "tol": 0.1}"#).unwrap();
        assert_eq!(e, Expect::Approx { approx: 2.0, tol: 0.1 });
        assert!(serde_json::from_str::<Expect>(r#"{"approx": 2, "tl": 0.1}"#).is_err());
    }

    #[test]
    fn unknown_op_is_located() {
        let src = SRC.replace("\"isotropy\"", "\"isotropic\"");
        let e = Scenario::parse("t", &src).unwrap_err();
        assert_eq!(e.line, 5);
        assert!(e.message.contains("unknown variant"), "{}", e.message);
    }

    #[test]
    fn bad_params_are_located() {
        let src = SRC.replace("{\"x\": [0.5]}", "{\"x\": [0.5], \"bogus\": 1}");
        let e = Scenario::parse("t", &src).unwrap_err();
        assert_eq!(e.line, 5);
        assert!(e.column > 20);
    }

    #[test]
    fn action_ops_need_an_action() {
        let src = SRC.replace("\"op\": \"isotropy\", \"params\": {\"x\": [0.5]}", "\"op\": \"eta_estimate\"");
        let e = Scenario::parse("t", &src).unwrap_err();
        assert!(e.message.contains("lie_action"));
    }

    #[test]
    fn syntax_errors_carry_position() {
        let e = Scenario::parse("t", "{\n  \"kind\": }").unwrap_err();
        assert_eq!(e.line, 2);
    }
}
