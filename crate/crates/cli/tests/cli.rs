use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use tempfile::TempDir;

fn bin() -> Command {
    Command::new(env!("CARGO_BIN_EXE_anticipate"))
}

fn run(args: &[&str]) -> Output {
    bin().args(args).output().expect("binary runs")
}

fn code(out: &Output) -> i32 {
    out.status.code().expect("exited normally")
}

fn stdout(out: &Output) -> String {
    String::from_utf8_lossy(&out.stdout).into_owned()
}

fn stderr(out: &Output) -> String {
    String::from_utf8_lossy(&out.stderr).into_owned()
}

fn s(p: &Path) -> &str {
    p.to_str().unwrap()
}

fn rps_file(dir: &TempDir) -> PathBuf {
    let path = dir.path().join("rps.json");
    let out = run(&["builtin", "rps", "-o", s(&path)]);
    assert_eq!(code(&out), 0, "{}", stderr(&out));
    path
}

#[test]
fn validate_accepts_builtin_games() {
    let dir = TempDir::new().unwrap();
    for name in ["rps", "rps-mem", "ant-avoid"] {
        let path = dir.path().join(format!("{name}.json"));
        assert_eq!(code(&run(&["builtin", name, "--size", "12", "-o", s(&path)])), 0);
        let out = run(&["validate", s(&path)]);
        assert_eq!(code(&out), 0, "{name}: {}", stderr(&out));
        assert!(stdout(&out).starts_with("ok:"));
    }
}

#[test]
fn validate_rejects_bad_probabilities_with_code_2() {
    let dir = TempDir::new().unwrap();
    let path = dir.path().join("bad.json");
    let mut doc: serde_json::Value = serde_json::from_str(&std::fs::read_to_string(rps_file(&dir)).unwrap()).unwrap();
    doc["switch"][0][0] = serde_json::json!(0.9);
    std::fs::write(&path, doc.to_string()).unwrap();
    let out = run(&["validate", s(&path)]);
    assert_eq!(code(&out), 2);
    assert!(stderr(&out).contains("violation"), "{}", stderr(&out));
}

#[test]
fn unreadable_or_unparsable_input_is_code_5() {
    let dir = TempDir::new().unwrap();
    let path = dir.path().join("broken.json");
    std::fs::write(&path, "{\"states\": [\n").unwrap();
    let out = run(&["validate", s(&path)]);
    assert_eq!(code(&out), 5);
    assert!(stderr(&out).contains("line 2"));
    assert_eq!(code(&run(&["validate", s(&dir.path().join("missing.json"))])), 5);
}

#[test]
fn synthesis_failure_prints_the_edge_and_exits_3() {
    let dir = TempDir::new().unwrap();
    let game = rps_file(&dir);
    let out = run(&[
        "synth",
        s(&game),
        "--lambda",
        "0.1",
        "--stay",
        "0.8",
        "-o",
        s(&dir.path().join("m.ism")),
    ]);
    assert_eq!(code(&out), 3);
    let err = stderr(&out);
    assert!(err.contains("observation") && err.contains("witness"), "{err}");
    assert!(!dir.path().join("m.ism").exists());
}

#[test]
fn state_budget_exits_4() {
    let dir = TempDir::new().unwrap();
    let game = rps_file(&dir);
    let out = run(&[
        "synth",
        s(&game),
        "--lambda",
        "0.25",
        "--max-states",
        "3",
        "-o",
        s(&dir.path().join("m.ism")),
    ]);
    assert_eq!(code(&out), 4, "{}", stderr(&out));
}

#[test]
fn paper_eps_mapping_is_reported() {
    let dir = TempDir::new().unwrap();
    let game = rps_file(&dir);
    let out = run(&[
        "synth",
        s(&game),
        "--lambda",
        "0.1",
        "--paper-eps",
        "0.5",
        "-o",
        s(&dir.path().join("m.ism")),
    ]);
    assert_eq!(code(&out), 0);
    assert!(stderr(&out).contains("stay 0.5"));
}

#[test]
fn pipeline_outputs_are_byte_identical_across_runs() {
    let dir = TempDir::new().unwrap();
    let game = rps_file(&dir);
    let mut snapshots = Vec::new();
    for k in 0..2 {
        let ism = dir.path().join(format!("m{k}.ism"));
        let pol = dir.path().join(format!("p{k}.json"));
        assert_eq!(code(&run(&["synth", s(&game), "--lambda", "0.25", "-o", s(&ism)])), 0);
        assert!(ism.with_extension("dot").exists());
        let verify = run(&[
            "verify",
            s(&game),
            s(&ism),
            "--lambda",
            "0.25",
            "--sequences",
            "500",
            "--seed",
            "3",
        ]);
        assert_eq!(code(&verify), 0, "{}", stdout(&verify));
        assert!(stdout(&verify).contains("violations 0"));
        assert_eq!(code(&run(&["plan", s(&game), s(&ism), "-o", s(&pol)])), 0);
        let sim = run(&[
            "simulate",
            s(&game),
            s(&ism),
            s(&pol),
            "--horizon",
            "2000",
            "--seed",
            "9",
        ]);
        assert_eq!(code(&sim), 0, "{}", stderr(&sim));
        snapshots.push((std::fs::read(&ism).unwrap(), std::fs::read(&pol).unwrap(), stdout(&sim)));
    }
    assert_eq!(snapshots[0], snapshots[1]);
}

#[test]
fn scripted_replay_runs() {
    let dir = TempDir::new().unwrap();
    let game = rps_file(&dir);
    let ism = dir.path().join("m.ism");
    let pol = dir.path().join("p.json");
    let script = dir.path().join("script.txt");
    std::fs::write(&script, "# opponent keeps playing paper\np2\np2\np2\nr2\n").unwrap();
    assert_eq!(code(&run(&["synth", s(&game), "--lambda", "0.25", "-o", s(&ism)])), 0);
    assert_eq!(code(&run(&["plan", s(&game), s(&ism), "-o", s(&pol)])), 0);
    let out = run(&[
        "simulate",
        s(&game),
        s(&ism),
        s(&pol),
        "--script",
        s(&script),
        "--horizon",
        "10",
    ]);
    assert_eq!(code(&out), 0, "{}", stderr(&out));
    assert!(stdout(&out).contains("steps 4"));
    std::fs::write(&script, "p2\nlizard\n").unwrap();
    let out = run(&["simulate", s(&game), s(&ism), s(&pol), "--script", s(&script)]);
    assert_eq!(code(&out), 2, "{}", stderr(&out));
    assert!(stderr(&out).contains("index 2"));
}

#[test]
fn check_edge_refutes_the_worked_query() {
    let dir = TempDir::new().unwrap();
    let path = dir.path().join("q.json");
    let query = serde_json::json!({
        "lambda": 0.25,
        "source": [0.25, 0.17, 0.32, 0.26],
        "target": [0.31, 0.17, 0.26, 0.26],
        "alphas": [0.5, 0.0, 0.5, 1.0 / 3.0],
        "switch": [
            [0.55, 0.15, 0.15, 0.15],
            [0.15, 0.55, 0.15, 0.15],
            [0.12, 0.12, 0.64, 0.12],
            [0.12, 0.12, 0.12, 0.64]
        ],
        "observation": [0, 0]
    });
    std::fs::write(&path, query.to_string()).unwrap();
    let out = run(&["check-edge", s(&path)]);
    assert_eq!(code(&out), 0, "{}", stderr(&out));
    let text = stdout(&out);
    assert!(text.starts_with("refuted"), "{text}");
    assert!(text.contains("witness"));
}

#[test]
fn bounds_prints_table_and_csv() {
    let dir = TempDir::new().unwrap();
    let out = run(&["bounds", s(&rps_file(&dir))]);
    assert_eq!(code(&out), 0);
    let text = stdout(&out);
    assert!(text.contains("kappa_max 0.150000"));
    assert!(text.contains("state,action,alpha_max,alpha_sum,kappa,contraction"));
    let with_stay = stdout(&run(&["bounds", s(&rps_file(&dir)), "--stay", "0.5"]));
    assert!(with_stay.contains("guaranteed termination: yes"), "{with_stay}");
}

#[test]
fn bench_prints_a_table_row() {
    let out = run(&["bench", "rps", "--lambda", "0.1", "--stay", "0.5"]);
    assert_eq!(code(&out), 0, "{}", stderr(&out));
    let text = stdout(&out);
    let lines: Vec<&str> = text.lines().collect();
    assert_eq!(lines.len(), 2);
    assert!(lines[0].contains("|M|") && lines[0].contains("|MDP|"));
    let row: Vec<&str> = lines[1].split_whitespace().collect();
    assert_eq!(row[0], "rps");
    assert!(row[3].parse::<usize>().unwrap() > 0);
    assert_eq!(code(&run(&["bench", "rps", "--paper-eps", "0.2"])), 3);
}

#[test]
fn grid_writes_csv() {
    let dir = TempDir::new().unwrap();
    let csv = dir.path().join("grid.csv");
    let out = run(&[
        "grid",
        s(&rps_file(&dir)),
        "--lambdas",
        "0.25",
        "--stays",
        "0.5",
        "--actual-stays",
        "0.5,0.4",
        "--seeds",
        "1,2",
        "--horizon",
        "500",
        "-o",
        s(&csv),
    ]);
    assert_eq!(code(&out), 0, "{}", stderr(&out));
    let text = std::fs::read_to_string(&csv).unwrap();
    assert!(text.starts_with(
        "lambda,stay_design,stay_actual,seed,horizon,r_avg,ap_avg,policy_pred,ism_states,synth_seconds,plan_seconds"
    ));
    // two seeds plus mean and stderr, per actual stay
    assert_eq!(text.lines().count(), 1 + 2 * 4);
}

#[test]
fn help_lists_defaults() {
    for sub in ["synth", "verify", "plan", "simulate", "bench", "grid"] {
        let out = run(&[sub, "--help"]);
        assert_eq!(code(&out), 0);
        let text = stdout(&out);
        assert!(text.contains("[default:"), "{sub}: {text}");
    }
    let plan = stdout(&run(&["plan", "--help"]));
    assert!(plan.contains("--gamma") && plan.contains("[default: 0.95]"));
}
