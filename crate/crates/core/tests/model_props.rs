use std::collections::BTreeMap;

use proptest::prelude::*;
use serde_json::{json, Value};
use tpsim::model::{InstrClass, ResourceDesc, ResourceUse};
use tpsim::{load_model, MachineModel, ModelError};

/// Random valid model, as parts.
fn arb_model() -> impl Strategy<Value = MachineModel> {
    let resources = prop::collection::vec(1u32..4, 1..5);
    (resources, 1u32..7, 1u32..7, 0u32..40, 1u32..20, 1u32..20, any::<u64>()).prop_map(
        |(units, dw, rw, rob_extra, lq, sq, seed)| {
            let resources: Vec<ResourceDesc> = units
                .iter()
                .enumerate()
                .map(|(i, &u)| ResourceDesc { name: format!("P{i}"), units: u })
                .collect();
            let mut s = seed;
            let mut next = |m: u64| {
                s = s.wrapping_mul(6364136223846793005).wrapping_add(1442695040888963407);
                (s >> 33) % m
            };
            let tables = BTreeMap::from([(
                "lmul".to_string(),
                BTreeMap::from([("1".to_string(), 1 + next(9) as u32), ("2".to_string(), 1 + next(9) as u32)]),
            )]);
            let classes = (0..1 + next(7))
                .map(|c| {
                    let mut uses = Vec::new();
                    for r in &resources {
                        for _ in 0..next(r.units as u64 + 1) {
                            uses.push(ResourceUse { resource: r.name.clone(), cycles: 1 + next(3) as u32 });
                        }
                    }
                    InstrClass {
                        name: format!("c{c}"),
                        latency: 1 + next(12) as u32,
                        num_uops: 1 + next(8) as u32,
                        resource_usage: uses,
                        may_load: next(2) == 0,
                        may_store: next(3) == 0,
                        is_branch: next(5) == 0,
                        context_latency_key: (next(3) == 0).then(|| "lmul".to_string()),
                    }
                })
                .collect();
            MachineModel::new("m", dw, rw, dw + rob_extra, lq, sq, resources, classes, tables).unwrap()
        },
    )
}

proptest! {
    #[test]
    fn render_round_trips(m in arb_model()) {
        let text = m.render();
        prop_assert_eq!(load_model(&text).unwrap(), m);
    }

    #[test]
    fn effective_latency_is_positive(m in arb_model()) {
        for class in &m.classes {
            for ctx in [None, Some(("lmul", "1")), Some(("lmul", "2")), Some(("other", "1"))] {
                prop_assert!(m.effective_latency(class, ctx, 0).unwrap() >= 1);
            }
        }
    }

    #[test]
    fn mutations_are_rejected_exactly(m in arb_model(), kind in 0usize..17, pick in any::<prop::sample::Index>()) {
        let mut v: Value = serde_json::from_str(&m.render()).unwrap();
        let nres = v["resources"].as_array().unwrap().len();
        let ncls = v["classes"].as_array().unwrap().len();
        let r = pick.index(nres);
        let c = pick.index(ncls);
        let valid = match kind {
            0 => { v["dispatch_width"] = json!(0); false }
            1 => { v["retire_width"] = json!(0); false }
            2 => { v["rob_size"] = json!(v["dispatch_width"].as_u64().unwrap() - 1); false }
            3 => { v["lq_size"] = json!(0); false }
            4 => { v["sq_size"] = json!(0); false }
            5 => { v["resources"][r]["units"] = json!(0); false }
            6 => {
                let dup = v["resources"][r].clone();
                v["resources"].as_array_mut().unwrap().push(dup);
                false
            }
            7 => { v["classes"][c]["latency"] = json!(0); false }
            8 => { v["classes"][c]["uops"] = json!(0); false }
            9 => {
                v["classes"][c]["uses"].as_array_mut().unwrap().push(json!({"resource": "P9", "cycles": 1}));
                false
            }
            10 => {
                v["classes"][c]["uses"].as_array_mut().unwrap().push(json!({"resource": "P0", "cycles": 0}));
                false
            }
            11 => {
                let dup = v["classes"][c].clone();
                v["classes"].as_array_mut().unwrap().push(dup);
                false
            }
            12 => { v["classes"][c]["context_key"] = json!("vl"); false }
            13 => { v["context_tables"]["lmul"]["1"] = json!(0); false }
            14 => {
                // more simultaneous claims than the resource has units
                let units = v["resources"][0]["units"].as_u64().unwrap();
                let uses = v["classes"][c]["uses"].as_array_mut().unwrap();
                uses.retain(|u| u["resource"] != "P0");
                for _ in 0..=units {
                    uses.push(json!({"resource": "P0", "cycles": 1}));
                }
                false
            }
            _ => {
                // harmless edits
                v["name"] = json!("renamed");
                v["rob_size"] = json!(v["rob_size"].as_u64().unwrap() + 5);
                v["context_tables"]["unused"] = json!({"x": 3});
                true
            }
        };
        let result = load_model(&v.to_string());
        prop_assert_eq!(result.is_ok(), valid, "kind {} gave {:?}", kind, result.err());
        if kind == 9 {
            let msg = load_model(&v.to_string()).unwrap_err().to_string();
            prop_assert!(msg.contains("P9"), "{}", msg);
        }
    }
}

#[test]
fn published_port_example_is_valid() {
    let m = load_model(
        r#"{"name": "p5", "dispatch_width": 4, "rob_size": 32, "lq_size": 8, "sq_size": 8,
            "resources": [{"name": "P5", "units": 1}],
            "classes": [
                {"name": "vhaddps", "latency": 6, "uops": 2, "uses": [{"resource": "P5", "cycles": 1}]},
                {"name": "mulq", "latency": 4, "uops": 2, "uses": [{"resource": "P5", "cycles": 1}]}
            ]}"#,
    )
    .unwrap();
    assert_eq!(m.retire_width, 4);
    assert_eq!(m.claims(m.class_id("mulq").unwrap()), m.claims(m.class_id("vhaddps").unwrap()));
}

#[test]
fn parse_errors_report_position() {
    match load_model("{\n  \"name\": \"x\",\n  \"dispatch_width\": ,\n}") {
        Err(ModelError::Parse { line, column, .. }) => {
            assert_eq!(line, 3);
            assert!(column > 0);
        }
        other => panic!("{other:?}"),
    }
    assert!(matches!(load_model(r#"{"name": "x", "bogus": 1}"#), Err(ModelError::Parse { .. })));
}

#[test]
fn context_latency_lookup() {
    let m = load_model(
        r#"{"name": "rvv", "dispatch_width": 2, "rob_size": 8, "lq_size": 2, "sq_size": 2,
            "resources": [{"name": "V", "units": 1}],
            "classes": [
                {"name": "vadd", "latency": 4, "uops": 1, "uses": [{"resource": "V", "cycles": 1}], "context_key": "lmul"},
                {"name": "addq", "latency": 1, "uops": 1}
            ],
            "context_tables": {"lmul": {"1": 4, "2": 8}}}"#,
    )
    .unwrap();
    let vadd = m.class(m.class_id("vadd").unwrap());
    let addq = m.class(m.class_id("addq").unwrap());
    assert_eq!(m.effective_latency(vadd, Some(("lmul", "2")), 0), Ok(8));
    assert_eq!(m.effective_latency(vadd, None, 0), Ok(4));
    assert_eq!(m.effective_latency(addq, Some(("lmul", "2")), 0), Ok(1));
    let err = m.effective_latency(vadd, Some(("lmul", "3")), 42).unwrap_err();
    assert_eq!(err.seq, 42);
    assert!(err.to_string().contains("seq 42"));
}
