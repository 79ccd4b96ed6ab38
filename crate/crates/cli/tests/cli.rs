use std::fs;
use std::path::{Path, PathBuf};
use std::process::{Command, Output};

fn bin() -> Command {
    Command::new(env!("CARGO_BIN_EXE_orbitmesh"))
}

fn configs() -> PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR")).join("../../configs")
}

fn run(args: &[&str]) -> Output {
    bin().args(args).output().expect("binary runs")
}

fn stderr(o: &Output) -> String {
    String::from_utf8_lossy(&o.stderr).into_owned()
}

fn small_config() -> String {
    configs().join("small.toml").display().to_string()
}

#[test]
fn trace_then_replay_with_deterministic_plans() {
    let dir = tempfile::tempdir().unwrap();
    let trace = dir.path().join("t.csv");
    let t = trace.to_str().unwrap();
    let o = run(&["--config", &small_config(), "--out", t, "trace"]);
    assert!(o.status.success(), "{}", stderr(&o));
    let bytes = fs::read(&trace).unwrap();
    assert!(bytes.starts_with(b"#orbitmesh-trace v1 config="));

    let again = dir.path().join("t2.csv");
    run(&["--config", &small_config(), "--out", again.to_str().unwrap(), "trace"]);
    assert_eq!(fs::read(&again).unwrap(), bytes);

    let o = run(&["validate", "trace", t]);
    assert!(o.status.success(), "{}", stderr(&o));

    let mut listings = Vec::new();
    for name in ["plans-a", "plans-b"] {
        let plans = dir.path().join(name);
        let o = run(&[
            "--config",
            &small_config(),
            "replay",
            t,
            "--plan-out",
            plans.to_str().unwrap(),
        ]);
        assert!(o.status.success(), "{}", stderr(&o));
        let report = String::from_utf8(o.stdout).unwrap();
        assert!(report.starts_with("epoch,created,removed,modified\n0,"));
        assert_eq!(report.lines().count(), 31);
        let mut files: Vec<(String, Vec<u8>)> = fs::read_dir(&plans)
            .unwrap()
            .map(|e| {
                let e = e.unwrap();
                (e.file_name().into_string().unwrap(), fs::read(e.path()).unwrap())
            })
            .collect();
        files.sort();
        assert!(!files.is_empty());
        assert!(files[0].0.starts_with("epoch-00000-host-"));
        let text = String::from_utf8(files[0].1.clone()).unwrap();
        assert!(
            text.starts_with("## netem-plan\ntc qdisc replace dev eth0 parent 1:"),
            "{text}"
        );
        assert!(text.contains("## edt-plan\nSET 10.0.0."), "{text}");
        listings.push(files);
    }
    assert_eq!(listings[0], listings[1]);
}

#[test]
fn replay_rejects_machine_mismatch() {
    let dir = tempfile::tempdir().unwrap();
    let trace = dir.path().join("t.csv");
    run(&["--config", &small_config(), "--out", trace.to_str().unwrap(), "trace"]);
    let text = fs::read_to_string(configs().join("small.toml")).unwrap();
    let other = dir.path().join("other.toml");
    fs::write(&other, text.replace("\"0.5.0\"]", "\"0.5.0\", \"0.5.1\"]")).unwrap();
    let o = run(&["--config", other.to_str().unwrap(), "replay", trace.to_str().unwrap()]);
    assert_eq!(o.status.code(), Some(1));
    assert!(stderr(&o).starts_with("config: trace has 9 machines"), "{}", stderr(&o));
}

#[test]
fn exit_codes_distinguish_failures() {
    let dir = tempfile::tempdir().unwrap();
    let out = dir.path().join("t.csv");
    let o = run(&[
        "--config",
        "/nonexistent/cfg.toml",
        "--out",
        out.to_str().unwrap(),
        "trace",
    ]);
    assert_eq!(o.status.code(), Some(2));
    assert!(stderr(&o).starts_with("io: "));

    let bad = dir.path().join("bad.toml");
    fs::write(&bad, "isl_bandwidth_kbps = 1\ngsl_bandwidth_kbps = 1\nbogus_key = 3\n").unwrap();
    let o = run(&[
        "--config",
        bad.to_str().unwrap(),
        "--out",
        out.to_str().unwrap(),
        "trace",
    ]);
    assert_eq!(o.status.code(), Some(1));
    assert!(stderr(&o).contains("bogus_key"), "{}", stderr(&o));
    assert_eq!(stderr(&o).lines().count(), 1);

    let o = run(&["frobnicate"]);
    assert_eq!(o.status.code(), Some(1));
    let o = run(&["replay", "/nonexistent/trace.csv"]);
    assert_eq!(o.status.code(), Some(2));
}

#[test]
fn corrupt_trace_lists_violations() {
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("bad.csv");
    fs::write(
        &path,
        "#orbitmesh-trace v1 config=00 machines=2 step_s=1 epochs=1\r\nnope\n",
    )
    .unwrap();
    let o = run(&["validate", "trace", path.to_str().unwrap()]);
    assert_eq!(o.status.code(), Some(1));
    let err = stderr(&o);
    assert!(err.lines().count() >= 2, "{err}");
    for line in err.lines() {
        let (code, _) = line.split_once(": ").unwrap();
        assert!(code.chars().all(|c| c.is_ascii_lowercase() || c == '_'), "{line}");
    }
}

#[test]
fn bench_writes_one_row_per_backend_and_size() {
    let o = run(&["bench", "--sizes", "8,16", "--reps", "2"]);
    assert!(o.status.success(), "{}", stderr(&o));
    let csv = String::from_utf8(o.stdout).unwrap();
    let lines: Vec<&str> = csv.lines().collect();
    assert_eq!(lines[0], "backend,n,mean_ns,p50_ns,p99_ns,total_ns");
    let keys: Vec<&str> = lines[1..].iter().map(|l| l.rsplitn(5, ',').last().unwrap()).collect();
    assert_eq!(keys, ["hash,8", "hash,16", "scan,8", "scan,16"]);
    assert_eq!(run(&["bench", "--sizes", "1"]).status.code(), Some(1));
}

#[test]
fn orchestrate_chain_plan() {
    let plan = configs().join("chain-plan.toml");
    let plan = plan.to_str().unwrap();
    let start = std::time::Instant::now();
    let o = run(&["orchestrate", plan, "--machines", "3", "--inject", "420:sla_violation"]);
    assert!(start.elapsed().as_secs_f64() < 5.0);
    assert!(o.status.success(), "{}", stderr(&o));
    let log = String::from_utf8(o.stdout).unwrap();
    let rows: Vec<(u64, &str)> = log
        .lines()
        .skip(1)
        .map(|l| {
            let mut f = l.split(',');
            let t = f.next().unwrap().parse().unwrap();
            (t, f.nth(1).unwrap())
        })
        .collect();
    let at = |rule: &str| rows.iter().filter(|r| r.1 == rule).map(|r| r.0).collect::<Vec<_>>();
    assert_eq!(at("start"), [0, 0]);
    assert_eq!(at("drop"), [300_000_000]);
    assert_eq!(at("change"), [420_000_000, 420_000_000]);
    assert_eq!(at("double"), [430_000_000, 430_000_000]);

    let again = run(&["orchestrate", plan, "--machines", "3", "--inject", "420:sla_violation"]);
    assert_eq!(again.stdout, log.as_bytes());

    let o = run(&["orchestrate", plan, "--machines", "3", "--inject", "1:unknown_event"]);
    assert_eq!(o.status.code(), Some(1));
}

#[test]
fn orchestrate_rejects_invalid_plan() {
    let dir = tempfile::tempdir().unwrap();
    let plan = dir.path().join("p.toml");
    fs::write(
        &plan,
        "[[rules]]\nid = \"a\"\non_event = \"never\"\nactions = [{ type = \"emit\", event = \"x\" }]\n",
    )
    .unwrap();
    let o = run(&["orchestrate", plan.to_str().unwrap(), "--machines", "2"]);
    assert_eq!(o.status.code(), Some(1));
    assert!(
        stderr(&o).starts_with("unreachable_trigger: rule a: "),
        "{}",
        stderr(&o)
    );
    assert_eq!(
        run(&["validate", "plan", plan.to_str().unwrap()]).status.code(),
        Some(1)
    );
}

#[test]
fn orchestrate_over_a_trace() {
    let dir = tempfile::tempdir().unwrap();
    let trace = dir.path().join("t.csv");
    run(&["--config", &small_config(), "--out", trace.to_str().unwrap(), "trace"]);
    let plan = dir.path().join("p.toml");
    fs::write(
        &plan,
        "[[rules]]\nid = \"cut\"\nat_time_s = 90\nactions = [{ type = \"node_off\", node = 0 }]\n",
    )
    .unwrap();
    let log_path = dir.path().join("log.csv");
    let o = run(&[
        "--out",
        log_path.to_str().unwrap(),
        "orchestrate",
        plan.to_str().unwrap(),
        "--trace",
        trace.to_str().unwrap(),
    ]);
    assert!(o.status.success(), "{}", stderr(&o));
    let log = fs::read_to_string(&log_path).unwrap();
    assert_eq!(log.lines().filter(|l| l.contains(",trace_epoch,")).count(), 30);
    assert!(log.contains("90000000,timer,cut,node_off(0),ok"), "{log}");
}

#[test]
fn viz_is_deterministic() {
    let dir = tempfile::tempdir().unwrap();
    let a = dir.path().join("a.svg");
    let b = dir.path().join("b.svg");
    for p in [&a, &b] {
        let o = run(&[
            "--config",
            &small_config(),
            "--out",
            p.to_str().unwrap(),
            "viz",
            "--time",
            "600",
        ]);
        assert!(o.status.success(), "{}", stderr(&o));
    }
    let svg = fs::read_to_string(&a).unwrap();
    assert_eq!(svg, fs::read_to_string(&b).unwrap());
    assert_eq!(svg.matches("<circle class=\"sat\"").count(), 48);
    assert_eq!(svg.matches("class=\"station\"").count(), 3);

    let empty = dir.path().join("empty.toml");
    fs::write(&empty, "isl_bandwidth_kbps = 1\ngsl_bandwidth_kbps = 1\n").unwrap();
    let o = run(&["--config", empty.to_str().unwrap(), "viz"]);
    assert!(o.status.success(), "{}", stderr(&o));
    let svg = String::from_utf8(o.stdout).unwrap();
    assert!(svg.contains("class=\"frame\"") && !svg.contains("<circle"));
}

#[test]
fn help_exits_zero() {
    assert!(run(&["--help"]).status.success());
    assert!(run(&["validate", "config"]).status.code() == Some(1));
}
