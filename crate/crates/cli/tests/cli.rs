use std::process::Command;

#[test]
fn datagen_writes_reproducible_csv() {
    let dir = tempfile::tempdir().unwrap();
    let a = dir.path().join("a.csv");
    let b = dir.path().join("b.csv");
    for p in [&a, &b] {
        let st = Command::new(env!("CARGO_BIN_EXE_datagen"))
            .args(["--n", "12", "--seed", "5", "--out"])
            .arg(p)
            .status()
            .unwrap();
        assert!(st.success());
    }
    let text = std::fs::read_to_string(&a).unwrap();
    assert_eq!(text, std::fs::read_to_string(&b).unwrap());
    assert!(text.starts_with("s1,s2,s3,s4,s1n,s2n,g1,g2,label\n"));
    assert_eq!(text.lines().count(), 13);
}

#[test]
fn bench_runs_a_tiny_plan() {
    let dir = tempfile::tempdir().unwrap();
    let plan = dir.path().join("plan.toml");
    std::fs::write(
        &plan,
        r#"
name = "cli-smoke"
budget = 4
realizations = 2
auc_start = 2
dataset = { kind = "sdof", n = 20, seed = 2 }
mle = { max_iters = 5 }

[[configs]]
id = "rnd"
strategy = "RND"
score_every = 2

[[configs]]
id = "alk"
strategy = "MI-ALK"
epsilon = 0.9
d = 4
"#,
    )
    .unwrap();
    let out = dir.path().join("out");
    let st = Command::new(env!("CARGO_BIN_EXE_bench"))
        .args(["run", "--workers", "2", "--plan"])
        .arg(&plan)
        .arg("--out")
        .arg(&out)
        .status()
        .unwrap();
    assert!(st.success());
    let metrics = std::fs::read_to_string(out.join("metrics.csv")).unwrap();
    assert!(metrics.starts_with("config,realization,step,metric,value\n"));
    assert!(metrics.contains("rnd,1,4,smse,"));
    let summary: serde_json::Value = serde_json::from_str(&std::fs::read_to_string(out.join("summary.json")).unwrap()).unwrap();
    assert_eq!(summary["summary"]["configs"].as_array().unwrap().len(), 2);
}

#[test]
fn bench_rejects_oversized_budget() {
    let dir = tempfile::tempdir().unwrap();
    let plan = dir.path().join("plan.toml");
    std::fs::write(
        &plan,
        "name = \"bad\"\nbudget = 50\ndataset = { kind = \"sdof\", n = 20 }\n[[configs]]\nid = \"a\"\nstrategy = \"ALM\"\n",
    )
    .unwrap();
    let st = Command::new(env!("CARGO_BIN_EXE_bench"))
        .args(["check", "--plan"])
        .arg(&plan)
        .status()
        .unwrap();
    assert!(!st.success());
}
