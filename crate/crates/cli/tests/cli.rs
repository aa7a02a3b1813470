use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use serde_json::{json, Map, Value};

fn root() -> PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR")).join("../..")
}

fn ref_config() -> PathBuf {
    root().join("configs/ref.json")
}

fn run(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_volterra-ltm"))
        .args(args)
        .output()
        .expect("binary runs")
}

fn code(out: &Output) -> i32 {
    out.status.code().expect("exit code")
}

fn stdout_json(out: &Output) -> Value {
    serde_json::from_slice(&out.stdout).expect("stdout is JSON")
}

fn ref_with(patch: Value) -> Value {
    let text = std::fs::read_to_string(ref_config()).unwrap();
    let mut cfg: Value = serde_json::from_str(&text).unwrap();
    for (k, v) in patch.as_object().unwrap() {
        cfg[k] = v.clone();
    }
    cfg
}

fn write_config(dir: &tempfile::TempDir, name: &str, cfg: &Value) -> String {
    let p = dir.path().join(name);
    std::fs::write(&p, cfg.to_string()).unwrap();
    p.to_str().unwrap().to_owned()
}

fn unlinked() -> Value {
    ref_with(json!({ "levels": { "ell1": 3.0, "ell2": 3.5, "h1": 2.22, "h2": 2.34 } }))
}

/// Checks `value` against the subset of JSON Schema the certificate schema uses.
fn conforms(schema: &Value, root: &Value, value: &Value, at: &str) -> Result<(), String> {
    let fail = |why: &str| Err(format!("{at}: {why}"));
    if let Some(r) = schema.get("$ref").and_then(Value::as_str) {
        let name = r.strip_prefix("#/$defs/").expect("local ref");
        return conforms(&root["$defs"][name], root, value, at);
    }
    if let Some(alts) = schema.get("oneOf").and_then(Value::as_array) {
        let hits = alts.iter().filter(|s| conforms(s, root, value, at).is_ok()).count();
        return if hits == 1 { Ok(()) } else { fail(&format!("{hits} oneOf branches match")) };
    }
    if let Some(options) = schema.get("enum").and_then(Value::as_array) {
        if !options.contains(value) {
            return fail("not in enum");
        }
    }
    if let Some(ty) = schema.get("type") {
        let names: Vec<&str> = match ty {
            Value::String(s) => vec![s.as_str()],
            Value::Array(v) => v.iter().filter_map(Value::as_str).collect(),
            _ => panic!("bad type keyword"),
        };
        let ok = names.iter().any(|n| match *n {
            "object" => value.is_object(),
            "array" => value.is_array(),
            "number" => value.is_number(),
            "integer" => value.is_u64() || value.is_i64(),
            "string" => value.is_string(),
            "boolean" => value.is_boolean(),
            "null" => value.is_null(),
            other => panic!("unknown type {other}"),
        });
        if !ok {
            return fail(&format!("expected {names:?}"));
        }
    }
    if let Some(x) = value.as_f64() {
        if let Some(m) = schema.get("minimum").and_then(Value::as_f64) {
            if x < m {
                return fail("below minimum");
            }
        }
        if let Some(m) = schema.get("exclusiveMinimum").and_then(Value::as_f64) {
            if x <= m {
                return fail("not above exclusive minimum");
            }
        }
    }
    if let Some(items) = value.as_array() {
        if let Some(n) = schema.get("minItems").and_then(Value::as_u64) {
            if (items.len() as u64) < n {
                return fail("too few items");
            }
        }
        if let Some(n) = schema.get("maxItems").and_then(Value::as_u64) {
            if (items.len() as u64) > n {
                return fail("too many items");
            }
        }
        if let Some(s) = schema.get("items") {
            for (i, item) in items.iter().enumerate() {
                conforms(s, root, item, &format!("{at}[{i}]"))?;
            }
        }
    }
    if let Some(obj) = value.as_object() {
        let empty = Map::new();
        let props = schema.get("properties").and_then(Value::as_object).unwrap_or(&empty);
        for key in schema.get("required").and_then(Value::as_array).into_iter().flatten() {
            if !obj.contains_key(key.as_str().unwrap()) {
                return fail(&format!("missing {key}"));
            }
        }
        for (k, v) in obj {
            match props.get(k) {
                Some(s) => conforms(s, root, v, &format!("{at}.{k}"))?,
                None if schema.get("additionalProperties") == Some(&Value::Bool(false)) => {
                    return fail(&format!("unexpected key {k}"));
                }
                None => {}
            }
        }
    }
    Ok(())
}

fn schema() -> Value {
    let text = std::fs::read_to_string(root().join("docs/certificate.schema.json")).unwrap();
    serde_json::from_str(&text).unwrap()
}

#[test]
fn certify_reference_succeeds_and_matches_schema() {
    let cfg = ref_config();
    let out = run(&["--config", cfg.to_str().unwrap(), "certify"]);
    assert_eq!(code(&out), 0, "{}", String::from_utf8_lossy(&out.stderr));
    let cert = stdout_json(&out);
    assert_eq!(cert["verdict"], "certified");
    assert_eq!(cert["linked"], true);
    assert_eq!(cert["config"]["r0"], 755.0);
    assert_eq!(cert["config"]["rmu"], 1507.0);
    assert!((cert["entropy_floor"].as_f64().unwrap() - 2f64.ln()).abs() < 1e-15);
    for report in cert["witnesses_phase0"].as_array().unwrap() {
        assert_eq!(report["witnesses"].as_array().unwrap().len(), 2);
    }
    for report in cert["witnesses_phase_mu"].as_array().unwrap() {
        assert_eq!(report["witnesses"].as_array().unwrap().len(), 1);
    }
    let s = schema();
    conforms(&s, &s, &cert, "$").unwrap();
}

#[test]
fn certify_is_byte_identical_across_runs_and_thread_counts() {
    let cfg = ref_config();
    let a = run(&["--config", cfg.to_str().unwrap(), "certify"]);
    let b = run(&["--config", cfg.to_str().unwrap(), "--threads", "1", "certify"]);
    assert_eq!(code(&a), 0);
    assert_eq!(a.stdout, b.stdout);
}

#[test]
fn short_phase_is_not_certified() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write_config(&dir, "short.json", &ref_with(json!({ "r0": 7.545, "rmu": 1507.0 })));
    let out = run(&["--config", &cfg, "certify"]);
    assert_eq!(code(&out), 1);
    let cert = stdout_json(&out);
    assert_eq!(cert["verdict"], "not_certified");
    assert_eq!(cert["failure"]["stage"], "phase0");
    let s = schema();
    conforms(&s, &s, &cert, "$").unwrap();
}

#[test]
fn unlinked_annuli_fail_at_linking() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write_config(&dir, "unlinked.json", &unlinked());
    let out = run(&["--config", &cfg, "certify"]);
    assert_eq!(code(&out), 1);
    let cert = stdout_json(&out);
    assert_eq!(cert["failure"]["stage"], "linking");
    assert_eq!(cert["linked"], false);
    let s = schema();
    conforms(&s, &s, &cert, "$").unwrap();

    let plot = run(&["--config", &cfg, "plot-data", "--n", "16"]);
    assert_eq!(code(&plot), 0);
    assert_eq!(stdout_json(&plot)["linked"], false);
}

#[test]
fn invalid_configs_exit_with_two() {
    let dir = tempfile::tempdir().unwrap();
    let cases = [
        ("mu.json", ref_with(json!({ "mu": 1.0 }))),
        ("unknown.json", ref_with(json!({ "colour": "red" }))),
        (
            "levels.json",
            ref_with(json!({ "levels": { "ell1": 2.5, "ell2": 2.2, "h1": 2.22, "h2": 2.34 } })),
        ),
        ("m1.json", ref_with(json!({ "m1": 0 }))),
    ];
    for (name, cfg) in cases {
        let path = write_config(&dir, name, &cfg);
        let out = run(&["--config", &path, "certify"]);
        assert_eq!(code(&out), 2, "{name}");
        assert!(out.stdout.is_empty(), "{name}");
    }
    assert_eq!(code(&run(&["certify"])), 2);
    assert_eq!(code(&run(&["--config", "/nonexistent.json", "certify"])), 2);
    assert_eq!(code(&run(&["no-such-command"])), 2);
}

#[test]
fn schema_rejects_tampered_certificates() {
    let cfg = ref_config();
    let cert = stdout_json(&run(&["--config", cfg.to_str().unwrap(), "plot-data"]));
    assert!(cert.get("verdict").is_none());
    let s = schema();
    assert!(conforms(&s, &s, &cert, "$").is_err());
    let mut bogus = json!({ "verdict": "maybe" });
    assert!(conforms(&s["properties"]["verdict"], &s, &bogus["verdict"], "$").is_err());
    bogus["verdict"] = json!("certified");
    assert!(conforms(&s["properties"]["verdict"], &s, &bogus["verdict"], "$").is_ok());
}

fn csv_rows(out: &Output) -> Vec<(f64, f64)> {
    let text = String::from_utf8(out.stdout.clone()).unwrap();
    let mut lines = text.lines();
    assert_eq!(lines.next(), Some("level,period"));
    lines
        .map(|l| {
            let (a, b) = l.split_once(',').unwrap();
            (a.parse().unwrap(), b.parse().unwrap())
        })
        .collect()
}

#[test]
fn period_map_tabulates_an_increasing_function() {
    let out = run(&["period-map", "--params", "1,1,1,1", "--from", "2.000001", "--to", "3.5"]);
    assert_eq!(code(&out), 0, "{}", String::from_utf8_lossy(&out.stderr));
    let rows = csv_rows(&out);
    assert_eq!(rows.len(), 50);
    assert!((rows[0].1 - std::f64::consts::TAU).abs() < 1e-3);
    assert!(rows.windows(2).all(|w| w[0].0 < w[1].0 && w[0].1 < w[1].1));

    let out = run(&["period-map", "--params", "1,1,1,1", "--mu", "0.2", "--from", "1.97", "--to", "2.5", "--n", "5"]);
    assert_eq!(code(&out), 0, "{}", String::from_utf8_lossy(&out.stderr));
    assert_eq!(csv_rows(&out).len(), 5);
}

#[test]
fn period_map_reads_rates_from_config_and_honours_n() {
    let cfg = ref_config();
    let out = run(&["--config", cfg.to_str().unwrap(), "period-map", "--from", "2.2", "--to", "2.5", "--n", "1"]);
    assert_eq!(code(&out), 0);
    assert_eq!(csv_rows(&out).len(), 1);
}

#[test]
fn period_map_rejects_bad_input() {
    for args in [
        &["period-map", "--params", "1,1,1", "--from", "2.2", "--to", "2.5"][..],
        &["period-map", "--params", "1,1,1,1", "--from", "1.5", "--to", "2.5"],
        &["period-map", "--params", "1,1,1,1", "--from", "2.5", "--to", "2.2"],
        &["period-map", "--params", "1,-1,1,1", "--from", "2.2", "--to", "2.5"],
    ] {
        assert_eq!(code(&run(args)), 2, "{args:?}");
    }
}

#[test]
fn plot_data_emits_closed_polylines() {
    let cfg = ref_config();
    let out = run(&["--config", cfg.to_str().unwrap(), "plot-data", "--n", "32"]);
    assert_eq!(code(&out), 0);
    let data = stdout_json(&out);
    assert_eq!(data["linked"], true);
    for annulus in ["annulusP", "annulusQ"] {
        for ring in ["inner", "outer"] {
            let pts = data[annulus][ring].as_array().unwrap();
            assert_eq!(pts.len(), 32, "{annulus}.{ring}");
        }
    }
    for rect in ["rect1", "rect2"] {
        let pts = data[rect].as_array().unwrap();
        assert_eq!(pts.len(), 33);
        assert_eq!(pts.first(), pts.last());
    }
    assert_eq!(data["line_r"].as_array().unwrap().len(), 2);
    assert_eq!(code(&run(&["--config", cfg.to_str().unwrap(), "plot-data", "--n", "4"])), 2);
}

#[test]
fn find_periodic_locates_both_fixed_points() {
    let cfg = ref_config();
    let cfg = cfg.to_str().unwrap();
    let a = run(&["--config", cfg, "find-periodic", "--word", "00"]);
    let b = run(&["--config", cfg, "find-periodic", "--word", "10"]);
    assert_eq!(code(&a), 0, "{}", String::from_utf8_lossy(&a.stderr));
    assert_eq!(code(&b), 0, "{}", String::from_utf8_lossy(&b.stderr));
    let (a, b) = (stdout_json(&a), stdout_json(&b));
    assert!(a["residual"].as_f64().unwrap() <= 1e-8);
    assert!(b["residual"].as_f64().unwrap() <= 1e-8);
    let dx = a["anchor"]["x"].as_f64().unwrap() - b["anchor"]["x"].as_f64().unwrap();
    let dy = a["anchor"]["y"].as_f64().unwrap() - b["anchor"]["y"].as_f64().unwrap();
    assert!(dx.hypot(dy) > 1e-3);
    let ca = a["crossings"][0].as_u64().unwrap();
    let cb = b["crossings"][0].as_u64().unwrap();
    assert_eq!(cb, ca + 1);
}

#[test]
fn find_periodic_writes_orbit_csv() {
    let dir = tempfile::tempdir().unwrap();
    let csv = dir.path().join("orbit.csv");
    let cfg = ref_config();
    let out = run(&[
        "--config",
        cfg.to_str().unwrap(),
        "find-periodic",
        "--word",
        "00|10",
        "--csv",
        csv.to_str().unwrap(),
    ]);
    assert_eq!(code(&out), 0, "{}", String::from_utf8_lossy(&out.stderr));
    let summary = stdout_json(&out);
    assert_eq!(summary["period"], 2);
    assert_eq!(summary["points"].as_array().unwrap().len(), 2);
    let text = std::fs::read_to_string(csv).unwrap();
    let mut lines = text.lines();
    assert_eq!(lines.next(), Some("cycle,phase,t,x,y"));
    let rows: Vec<Vec<&str>> = lines.map(|l| l.split(',').collect()).collect();
    assert!(rows.len() > 1000);
    assert!(rows.iter().all(|r| r.len() == 5));
    assert!(rows.iter().any(|r| r[0] == "1" && r[1] == "mu"));
}

#[test]
fn find_periodic_rejects_words_outside_the_alphabet() {
    let cfg = ref_config();
    let cfg = cfg.to_str().unwrap();
    for word in ["30", "01", "0", "0a", ""] {
        let out = run(&["--config", cfg, "find-periodic", "--word", word]);
        assert_eq!(code(&out), 2, "{word:?}");
    }
}

#[test]
fn orbit_writes_requested_cycles() {
    let dir = tempfile::tempdir().unwrap();
    let out_path = dir.path().join("orbit.csv");
    let cfg = ref_config();
    let out = run(&[
        "--config",
        cfg.to_str().unwrap(),
        "--out",
        out_path.to_str().unwrap(),
        "orbit",
        "--x",
        "0.76",
        "--y",
        "0.33",
        "--cycles",
        "2",
    ]);
    assert_eq!(code(&out), 0);
    assert!(out.stdout.is_empty());
    let text = std::fs::read_to_string(out_path).unwrap();
    let cycles: std::collections::BTreeSet<&str> = text.lines().skip(1).map(|l| l.split(',').next().unwrap()).collect();
    assert_eq!(cycles.into_iter().collect::<Vec<_>>(), ["0", "1"]);
    assert_eq!(
        code(&run(&["--config", cfg.to_str().unwrap(), "orbit", "--x", "-1", "--y", "1"])),
        2
    );
}
