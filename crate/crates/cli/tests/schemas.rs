use std::path::{Path, PathBuf};

use cicd_cli::{cmd_eval, cmd_explain, cmd_gen, cmd_train, TrainArgs};
use jsonschema::JSONSchema;
use serde_json::Value;

fn schema(name: &str) -> JSONSchema {
    let path = Path::new(env!("CARGO_MANIFEST_DIR")).join("../../schemas").join(name);
    let v: Value = serde_json::from_str(&std::fs::read_to_string(&path).unwrap()).unwrap();
    JSONSchema::compile(&v).unwrap_or_else(|e| panic!("{name}: {e}"))
}

fn assert_valid(s: &JSONSchema, v: &Value, what: &str) {
    if let Err(errors) = s.validate(v) {
        let msgs: Vec<String> = errors.map(|e| format!("{} at {}", e, e.instance_path)).collect();
        panic!("{what}: {msgs:?}");
    }
}

fn lines(path: &Path) -> Vec<Value> {
    std::fs::read_to_string(path).unwrap().lines().map(|l| serde_json::from_str(l).unwrap()).collect()
}

fn run(dir: &Path, ablate: &[&str]) -> PathBuf {
    let out = dir.join(format!("run{}", ablate.join("").replace(' ', "_")));
    cmd_train(&TrainArgs {
        preset: Some("synthetic".into()),
        data: dir.join("syn.jsonl"),
        out: out.clone(),
        epochs: Some(2),
        ablate: ablate.iter().map(|s| s.to_string()).collect(),
        ..Default::default()
    })
    .unwrap();
    out
}

#[test]
fn artifacts_conform_to_schemas() {
    let dir = tempfile::tempdir().unwrap();
    let params = dir.path().join("gen.json");
    std::fs::write(&params, r#"{"n_instances": 24}"#).unwrap();
    cmd_gen(Some(&params), &dir.path().join("syn.jsonl"), None).unwrap();
    let (report, trace, explanation, config) = (
        schema("eval_report.schema.json"),
        schema("trace_record.schema.json"),
        schema("explanation.schema.json"),
        schema("config.schema.json"),
    );

    for ablate in [&[][..], &["-CED"], &["-ISI"], &["-interaction I", "-inconsistency loss"]] {
        let out = run(dir.path(), ablate);
        let what = format!("{ablate:?}");
        let cfg: Value = serde_json::from_slice(&std::fs::read(out.join("config.resolved.json")).unwrap()).unwrap();
        assert_valid(&config, &cfg, &what);
        for rec in lines(&out.join("trace.jsonl")) {
            assert_valid(&trace, &rec, &what);
        }
        let m = cmd_eval(&out.join("best.ckpt"), &dir.path().join("syn.jsonl"), Some(&out.join("report.json"))).unwrap();
        assert_valid(&report, &serde_json::to_value(&m).unwrap(), &what);
        let on_disk: Value = serde_json::from_slice(&std::fs::read(out.join("report.json")).unwrap()).unwrap();
        assert_valid(&report, &on_disk, &what);
        cmd_explain(&out.join("final.ckpt"), &dir.path().join("syn.jsonl"), &out.join("ex.jsonl")).unwrap();
        for dump in lines(&out.join("ex.jsonl")) {
            assert_valid(&explanation, &dump, &what);
        }
    }
}

#[test]
fn schemas_reject_malformed_documents() {
    let report = schema("eval_report.schema.json");
    assert!(!report.is_valid(&serde_json::json!({"n": 3, "micro_f1": 1.5, "macro_f1": 0.1, "per_class": []})));
    let config = schema("config.schema.json");
    assert!(!config.is_valid(&serde_json::json!({"labels": "snopes2"})));
}
