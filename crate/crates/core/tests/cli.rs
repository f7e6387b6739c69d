use evshare::cli::run_cli;
use evshare::graph::{expand_graph, NodeCharge, Zone};
use evshare::instances::save_instance;
use evshare::model::{Instance, RelocationSolution};
use evshare::queueing::QueueParams;
use std::path::Path;

fn run(args: &[&str]) -> (i32, String) {
    let mut out = Vec::new();
    let code = run_cli(
        std::iter::once("evshare").chain(args.iter().copied()),
        &mut out,
    );
    (code, String::from_utf8(out).unwrap())
}

/// Two zones five minutes apart, one vehicle at (1, 2) and demand 1/h at (2, 1).
fn two_zone(mu: f64) -> Instance {
    let g = expand_graph(
        vec![Zone::plain(1), Zone::plain(2)],
        vec![vec![0.0, 5.0], vec![5.0, 0.0]],
        2,
        1.0,
    )
    .unwrap();
    let mut lambda = vec![0.0; 4];
    lambda[g.index(NodeCharge::new(2, 1))] = 1.0;
    let mut idle = vec![0; 4];
    idle[g.index(NodeCharge::new(1, 2))] = 1;
    let q = QueueParams::new(0.5, 0, 1).unwrap();
    Instance::new(g, lambda, vec![mu; 4], idle, 0.02, q).unwrap()
}

fn write_instance(dir: &Path, name: &str, inst: &Instance) -> String {
    let path = dir.join(name);
    save_instance(inst, &path).unwrap();
    path.to_string_lossy().into_owned()
}

#[test]
fn solve_moves_the_vehicle_to_the_demand() {
    let tmp = tempfile::tempdir().unwrap();
    let inst = write_instance(tmp.path(), "two.json", &two_zone(10.0));
    let sol = tmp.path().join("sol.json");
    for method in ["exact", "heuristic"] {
        let (code, out) = run(&[
            "solve",
            "--in",
            &inst,
            "--method",
            method,
            "--out",
            sol.to_str().unwrap(),
        ]);
        assert_eq!(code, 0, "{out}");
        assert!(out.contains("validation: ok"), "{out}");
        let s = RelocationSolution::from_json(&std::fs::read_to_string(&sol).unwrap()).unwrap();
        assert!(
            (s.objective - 0.1).abs() < 1e-9,
            "{method}: {}",
            s.objective
        );
    }
}

#[test]
fn infeasible_model_exits_with_two() {
    let tmp = tempfile::tempdir().unwrap();
    // One server absorbs μ·0.707 < 1.
    let inst = write_instance(tmp.path(), "tight.json", &two_zone(1.0));
    let (code, out) = run(&["solve", "--in", &inst]);
    assert_eq!(code, 2, "{out}");
    assert!(out.contains("infeasible"));
    let (code, _) = run(&["solve", "--in", &inst, "--myopic"]);
    assert_eq!(code, 0);
}

#[test]
fn bad_input_exits_with_three() {
    let tmp = tempfile::tempdir().unwrap();
    let missing = tmp.path().join("missing.json");
    assert_eq!(run(&["solve", "--in", missing.to_str().unwrap()]).0, 3);
    let garbage = tmp.path().join("garbage.json");
    std::fs::write(&garbage, "{ not json").unwrap();
    assert_eq!(run(&["solve", "--in", garbage.to_str().unwrap()]).0, 3);
    assert_eq!(run(&["frobnicate"]).0, 3);
    assert_eq!(run(&["rho-table", "--eta", "1.5"]).0, 3);
    assert_eq!(
        run(&["gen", "--zones", "0", "--out", garbage.to_str().unwrap()]).0,
        3
    );
}

#[test]
fn rho_table_json() {
    let (code, out) = run(&["rho-table", "--eta", "0.95", "--servers", "4", "--json"]);
    assert_eq!(code, 0);
    let rho: Vec<f64> = serde_json::from_str(out.trim()).unwrap();
    assert_eq!(rho.len(), 4);
    assert!((rho[0] - 0.05f64.sqrt()).abs() < 1e-9);
}

#[test]
fn compare_writes_a_row_per_policy() {
    let tmp = tempfile::tempdir().unwrap();
    let inst = tmp.path().join("small.json");
    let inst = inst.to_str().unwrap();
    assert_eq!(run(&["gen", "--preset", "small", "--out", inst]).0, 0);
    let out_dir = tmp.path().join("cmp");
    let (code, out) = run(&[
        "compare",
        "--in",
        inst,
        "--horizon",
        "300",
        "--policies",
        "myopic,no-rebalance",
        "--out-dir",
        out_dir.to_str().unwrap(),
    ]);
    assert_eq!(code, 0, "{out}");
    let rows: Vec<serde_json::Value> =
        serde_json::from_str(&std::fs::read_to_string(out_dir.join("compare.json")).unwrap())
            .unwrap();
    assert_eq!(rows.len(), 2);
    for r in &rows {
        let (delay, km, theta) = (
            r["delay"].as_f64().unwrap(),
            r["rebalance_km"].as_f64().unwrap(),
            r["theta"].as_f64().unwrap(),
        );
        assert!((r["total_cost"].as_f64().unwrap() - (delay + theta * km)).abs() < 1e-6);
    }
    assert_eq!(rows[1]["rebalance_km"].as_f64(), Some(0.0));
    assert!(out_dir.join("myopic-events-seed0.jsonl").exists());
}

#[test]
fn simulate_rejects_zero_runs() {
    let tmp = tempfile::tempdir().unwrap();
    let inst = write_instance(tmp.path(), "two.json", &two_zone(10.0));
    let (code, _) = run(&[
        "simulate",
        "--in",
        &inst,
        "--runs",
        "0",
        "--out-dir",
        tmp.path().to_str().unwrap(),
    ]);
    assert_eq!(code, 3);
}
