//! Built-in scenarios over the library fixtures.

use std::f64::consts::TAU;

use foliation_blowup::fixtures;
use foliation_blowup::foliation::pullback_foliation;
use serde_json::{json, Value};

use crate::scenario::Scenario;

pub struct Builtin {
    pub name: &'static str,
    pub description: &'static str,
    build: fn() -> Value,
}

impl Builtin {
    pub fn scenario(&self) -> Scenario {
        let src = serde_json::to_string_pretty(&(self.build)()).expect("builtin serialises");
        Scenario::parse(self.name, &src).expect("builtin scenarios are well formed")
    }
}

pub const BUILTINS: &[Builtin] = &[
    Builtin {
        name: "sl2",
        description: "SL2 ⋉ R^2: sl2 acting linearly on the plane",
        build: sl2,
    },
    Builtin {
        name: "sln",
        description: "sl_n acting linearly on R^n (n = 3)",
        build: sln,
    },
    Builtin {
        name: "bump",
        description: "flow of rho(x) d/dx on R, rho(x) = exp(-1/(1-x^2)) on (-1,1) and 0 outside",
        build: bump,
    },
    Builtin {
        name: "vanish_origin",
        description: "fields x∂x, y∂x, x∂y, y∂y vanishing at the origin of R^2",
        build: vanish_origin,
    },
    Builtin {
        name: "regular",
        description: "a single constant field on R^2",
        build: regular,
    },
    Builtin {
        name: "pullback_sl2",
        description: "pullback of the sl2 foliation along R^3 -> R^2",
        build: pullback_sl2,
    },
    Builtin {
        name: "pullback_bump",
        description: "pullback of the bump foliation along R^2 -> R",
        build: pullback_bump,
    },
];

pub fn find(name: &str) -> Option<&'static Builtin> {
    BUILTINS.iter().find(|b| b.name == name)
}

pub fn list_examples() -> String {
    BUILTINS
        .iter()
        .map(|b| format!("{:<14} {}\n", b.name, b.description))
        .collect()
}

fn bump_config(rays: usize) -> Value {
    json!({"rays": rays, "decay": 0.6, "steps": 12})
}

fn sl2() -> Value {
    let eta = TAU * 2f64.sqrt();
    json!({
        "kind": "lie_action",
        "payload": fixtures::sl2(),
        "seed": 0,
        "probes": [
            {"op": "blowup_fiber", "params": {"x": [0.0, 0.0], "config": {"rays": 64}},
             "expect": {"clusters.len": 32, "cluster_dims.*": 1, "property_report.containment_ok": true,
                        "non_convergent_rays": 0}},
            {"op": "blowup_fiber", "params": {"x": [1.0, 0.0], "config": {"rays": 16}},
             "expect": {"clusters.len": 1, "cluster_dims.0": 1}},
            {"op": "fiber_dimensions", "params": {"x": [0.0, 0.0], "config": {"rays": 8}},
             "expect": {"all_equal": true}},
            {"op": "isotropy", "params": {"x": [1.0, 0.0]}, "expect": {"dim": 1}},
            {"op": "groupoid_axioms", "params": {"samples": 100}, "expect": {"passed": true}},
            {"op": "adjoint_transport", "params": {"g": [0.3, 0.2, -0.1], "x": [1.0, 0.0]},
             "expect": {"subspace.dim": 1}},
            {"op": "eta_estimate",
             "params": {"region": {"lo": [-2.0, -2.0], "hi": [2.0, 2.0], "r_min": 0.5, "r_max": 2.0},
                        "config": {"grid": 3, "directions": 600}},
             "expect": {"eta_hat": {"min": eta * 0.98, "max": eta * 1.02}}},
            {"op": "leaf_distribution", "params": {"y": [1.0, 0.5], "t": [0.3, -0.2, 0.5]},
             "expect": {"dim": 1}},
            {"op": "flow", "params": {"y": [0.3, 0.4], "t": [0.4, -0.3, 0.8]}},
            {"op": "functoriality", "params": {"x": [0.0, 0.0], "m": 1, "config": {"rays": 8}},
             "expect": {"passed": true}},
            {"op": "characteristic_set", "params": {"x": [0.0, 0.0], "config": {"rays": 8}},
             "expect": {"annihilators.*.dim": 2}}
        ]
    })
}

fn sln() -> Value {
    json!({
        "kind": "lie_action",
        "payload": fixtures::sln(3),
        "seed": 0,
        "probes": [
            {"op": "blowup_fiber", "params": {"x": [0.0, 0.0, 0.0], "config": {"rays": 12}},
             "expect": {"cluster_dims.*": 5, "property_report.containment_ok": true}},
            {"op": "blowup_fiber", "params": {"x": [1.0, 0.0, 0.0], "config": {"rays": 8}},
             "expect": {"clusters.len": 1, "cluster_dims.0": 5}},
            {"op": "fiber_dimensions", "params": {"x": [0.0, 0.0, 0.0], "config": {"rays": 8}},
             "expect": {"all_equal": true}},
            {"op": "structure_functions", "params": {"x": [0.5, -0.2, 0.1]}, "expect": {"k": 8}}
        ]
    })
}

fn bump() -> Value {
    let fiber = |x: f64, dims: Value| {
        json!({"op": "blowup_fiber", "params": {"x": [x], "config": bump_config(16)},
               "expect": {"cluster_dims": dims}})
    };
    json!({
        "kind": "poly_foliation",
        "payload": fixtures::bump_foliation(),
        "seed": 0,
        "probes": [
            fiber(0.0, json!([0])),
            fiber(1.5, json!([1])),
            fiber(-1.5, json!([1])),
            fiber(1.0, json!([0, 1])),
            fiber(-1.0, json!([0, 1])),
            {"op": "fiber_dimensions", "params": {"x": [1.0], "config": bump_config(16)},
             "expect": {"all_equal": true}},
            {"op": "flow", "params": {"y": [2.0], "t": [5.0]}, "expect": {"point.0": 2.0}},
            {"op": "period_bound", "params": {"region": {"lo": [-0.5], "hi": [0.5]}},
             "expect": {"witnesses.len": 0}},
            {"op": "leaf_trace", "params": {"y": [1.5], "t": [0.0]}, "expect": {"points.len": 21}}
        ]
    })
}

fn vanish_origin() -> Value {
    json!({
        "kind": "lie_action",
        "payload": fixtures::vanish_origin(),
        "seed": 0,
        "probes": [
            {"op": "blowup_fiber", "params": {"x": [0.0, 0.0], "config": {"rays": 16}},
             "expect": {"clusters.len": 8, "cluster_dims.*": 2, "property_report.containment_ok": true}},
            {"op": "fiber_dimensions", "params": {"x": [0.0, 0.0], "config": {"rays": 8}},
             "expect": {"all_equal": true}},
            {"op": "characteristic_set", "params": {"x": [0.0, 0.0], "config": {"rays": 8}},
             "expect": {"annihilators.*.dim": 2}},
            {"op": "functoriality", "params": {"x": [0.0, 0.0], "m": 2, "config": {"rays": 8}},
             "expect": {"passed": true}}
        ]
    })
}

fn regular() -> Value {
    json!({
        "kind": "lie_action",
        "payload": fixtures::regular(),
        "seed": 0,
        "probes": [
            {"op": "blowup_fiber", "params": {"x": [0.0, 0.0], "config": {"rays": 8}},
             "expect": {"cluster_dims": [0]}},
            {"op": "regular_test", "params": {"x": [0.0, 0.0]}, "expect": {"is_regular": true}},
            {"op": "eta_estimate", "params": {"region": {"lo": [-1.0, -1.0], "hi": [1.0, 1.0]}, "config": {"grid": 3}},
             "expect": {"witnesses.len": 0}},
            {"op": "embedding", "params": {"p": {"base": [0.0, 0.0]}}, "expect": {"passed": true}}
        ]
    })
}

fn pullback_sl2() -> Value {
    let f = pullback_foliation(fixtures::sl2().foliation(), 1).expect("pullback of sl2");
    json!({
        "kind": "poly_foliation",
        "payload": f,
        "seed": 0,
        "probes": [
            {"op": "blowup_fiber", "params": {"x": [0.0, 0.0, 0.0], "config": {"rays": 12}},
             "expect": {"cluster_dims.*": 1, "property_report.containment_ok": true}},
            {"op": "fiber_dimensions", "params": {"x": [0.0, 0.0, 0.0], "config": {"rays": 8}},
             "expect": {"all_equal": true}}
        ]
    })
}

fn pullback_bump() -> Value {
    let f = pullback_foliation(&fixtures::bump_foliation(), 1).expect("pullback of bump");
    json!({
        "kind": "poly_foliation",
        "payload": f,
        "seed": 0,
        "probes": [
            {"op": "blowup_fiber", "params": {"x": [0.0, 0.0], "config": bump_config(8)},
             "expect": {"cluster_dims": [0]}},
            {"op": "blowup_fiber", "params": {"x": [1.0, 0.0], "config": bump_config(16)},
             "expect": {"cluster_dims": [0, 1]}},
            {"op": "fiber_dimensions", "params": {"x": [1.0, 0.0], "config": bump_config(16)},
             "expect": {"all_equal": true}}
        ]
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn builtins_parse() {
        for b in BUILTINS {
            let s = b.scenario();
            assert!(!s.probes.is_empty(), "{}", b.name);
        }
    }

    #[test]
    fn listing_names_fixtures() {
        let text = list_examples();
        assert!(text.contains("sl2") && text.contains("bump"));
        assert!(text.lines().count() >= 5);
    }
}
