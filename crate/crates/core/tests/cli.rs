use std::fs;
use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use edgebench::cli::dataset_io::read_dataset;
use edgebench::model::{ConfigPoint, Quantization};

const BIN: &str = env!("CARGO_BIN_EXE_edgebench");
const STUB: &str = env!("CARGO_BIN_EXE_bench-stub");

fn fixture(name: &str) -> PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR"))
        .join("tests/fixtures")
        .join(name)
}

fn run(args: &[&str]) -> Output {
    Command::new(BIN).args(args).output().unwrap()
}

fn text(b: &[u8]) -> String {
    String::from_utf8_lossy(b).into_owned()
}

fn p(path: &Path) -> &str {
    path.to_str().unwrap()
}

fn stub_config(dir: &Path, iterations: u32, extra: &str) -> PathBuf {
    let config = format!(
        r#"
[sweep]
iterations = {iterations}
token_target = 16
idle_seconds = 1.0

[sampler]
virtual_seed = 11
trace = "trace.txt"

[workload]
command = "'{STUB}' --virtual --idle {{idle_seconds}} --load 0.75 --gen 2.5 --tokens {{tokens}} --iteration {{iteration}} {extra}"

[[devices]]
name = "AGX Orin Devkit"
cuda_cores = 2048
memory_mb = 65536
power_models = ["MAXN"]

[[models]]
id = "pythia-70m-deduped"
parameter_count = 70000000
"#
    );
    fs::write(
        dir.join("trace.txt"),
        "0 5 0 800\n1 5 0 800\n1.75 12 600 1400\n4.25 20 700 1500\n",
    )
    .unwrap();
    let path = dir.join("sweep.toml");
    fs::write(&path, config).unwrap();
    path
}

fn ingest_tables(dir: &Path) -> PathBuf {
    let out = dir.join("dataset.csv");
    for (table, schema) in [
        ("table2_load_latency.csv", "load-latency"),
        ("table3_gen_latency.csv", "gen-latency"),
    ] {
        let o = run(&[
            "ingest",
            p(&fixture(table)),
            "--schema",
            schema,
            "--out",
            p(&out),
        ]);
        assert!(o.status.success(), "{}", text(&o.stderr));
    }
    out
}

#[test]
fn sweep_writes_one_log_per_run() {
    let dir = tempfile::tempdir().unwrap();
    let config = stub_config(dir.path(), 2, "");
    let logs = dir.path().join("logs");
    let o = run(&["sweep", "--config", p(&config), "--out", p(&logs)]);
    assert!(o.status.success(), "{}", text(&o.stderr));
    let mut names: Vec<String> = fs::read_dir(&logs)
        .unwrap()
        .map(|e| e.unwrap().file_name().into_string().unwrap())
        .collect();
    names.sort();
    assert_eq!(
        names,
        [
            "AGX%20Orin%20Devkit_MAXN_pythia-70m-deduped_int4_iter0.jsonl",
            "AGX%20Orin%20Devkit_MAXN_pythia-70m-deduped_int4_iter1.jsonl",
            "AGX%20Orin%20Devkit_MAXN_pythia-70m-deduped_none_iter0.jsonl",
            "AGX%20Orin%20Devkit_MAXN_pythia-70m-deduped_none_iter1.jsonl",
        ]
    );
    let stdout = text(&o.stdout);
    assert!(stdout.contains("[1/4]"), "{stdout}");
    assert!(stdout.contains("4 run(s), 0 failed"), "{stdout}");
}

#[test]
fn invalid_config_names_the_field() {
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("bad.toml");
    fs::write(
        &path,
        "[sweep]\ntimeout_s = -1\n[workload]\ncommand = \"x\"\n",
    )
    .unwrap();
    let o = run(&["sweep", "--config", p(&path), "--out", p(dir.path())]);
    assert_eq!(o.status.code(), Some(1));
    assert!(
        text(&o.stderr).contains("sweep.timeout_s"),
        "{}",
        text(&o.stderr)
    );

    fs::write(&path, "[sweep]\niterationz = 3\n").unwrap();
    let o = run(&["sweep", "--config", p(&path), "--out", p(dir.path())]);
    assert_eq!(o.status.code(), Some(1));
    assert!(
        text(&o.stderr).contains("iterationz"),
        "{}",
        text(&o.stderr)
    );

    let o = run(&["sweep", "--bogus"]);
    assert_eq!(o.status.code(), Some(1));
}

#[test]
fn unwritable_output_is_a_runtime_error() {
    let dir = tempfile::tempdir().unwrap();
    let config = stub_config(dir.path(), 1, "");
    let file = dir.path().join("plain-file");
    fs::write(&file, "").unwrap();
    let o = run(&[
        "sweep",
        "--config",
        p(&config),
        "--out",
        p(&file.join("logs")),
    ]);
    assert_eq!(o.status.code(), Some(2), "{}", text(&o.stderr));
}

#[test]
fn analyze_excludes_failed_configs_and_skips_bad_logs() {
    let dir = tempfile::tempdir().unwrap();
    let config = stub_config(dir.path(), 3, "--fail gen --fail-iteration 1");
    let logs = dir.path().join("logs");
    let o = run(&["sweep", "--config", p(&config), "--out", p(&logs)]);
    assert!(o.status.success(), "{}", text(&o.stderr));
    assert!(
        text(&o.stdout).contains("6 run(s), 2 failed"),
        "{}",
        text(&o.stdout)
    );
    fs::write(logs.join("zz_garbage.jsonl"), "{not json\n").unwrap();

    let out = dir.path().join("ds.csv");
    let o = run(&[
        "analyze",
        p(&logs),
        "--out",
        p(&out),
        "--config",
        p(&config),
    ]);
    assert!(o.status.success(), "{}", text(&o.stderr));
    assert!(
        text(&o.stderr).contains("zz_garbage.jsonl"),
        "{}",
        text(&o.stderr)
    );

    // every configuration fails on iteration 1, so both are excluded
    let ds = read_dataset(&fs::read_to_string(&out).unwrap()).unwrap();
    assert_eq!(ds.len(), 0);
    assert_eq!(ds.excluded.len(), 2);
    let sidecar = fs::read_to_string(dir.path().join("ds.excluded.csv")).unwrap();
    assert!(sidecar.contains(",1,crash"), "{sidecar}");

    let empty = dir.path().join("empty");
    fs::create_dir(&empty).unwrap();
    let o = run(&["analyze", p(&empty), "--out", p(&out)]);
    assert_eq!(o.status.code(), Some(2));
}

#[test]
fn analyze_recovers_scripted_durations() {
    let dir = tempfile::tempdir().unwrap();
    let config = stub_config(dir.path(), 3, "");
    let logs = dir.path().join("logs");
    assert!(run(&["sweep", "--config", p(&config), "--out", p(&logs)])
        .status
        .success());
    let out = dir.path().join("ds.jsonl");
    let o = run(&[
        "analyze",
        p(&logs),
        "--out",
        p(&out),
        "--format",
        "json-lines",
        "--config",
        p(&config),
    ]);
    assert!(o.status.success(), "{}", text(&o.stderr));
    let ds = read_dataset(&fs::read_to_string(&out).unwrap()).unwrap();
    assert_eq!(ds.len(), 2);
    for e in ds.entries.values() {
        let m = &e.medians;
        assert!((m.load_latency_s.unwrap() - 0.75).abs() <= 0.05);
        assert!((m.gen_latency_s.unwrap() - 2.5).abs() <= 0.05);
        assert_eq!(e.iteration_count, Some(3));
        assert!(m.peak_power_gen_w.unwrap() >= 12.0);
        assert!(m.baseline_power_w.unwrap() > 4.0 && m.baseline_power_w.unwrap() < 6.0);
    }
}

#[test]
fn ingest_merges_tables_and_is_idempotent() {
    let dir = tempfile::tempdir().unwrap();
    let out = ingest_tables(dir.path());
    let first = fs::read_to_string(&out).unwrap();
    let ds = read_dataset(&first).unwrap();
    assert_eq!(ds.len(), 204);
    assert_eq!(ds.excluded.len(), 6);
    let e = &ds.entries[&ConfigPoint::new(
        "AGX Orin Devkit",
        "MAXN",
        "pythia-70m-deduped",
        Quantization::None,
    )];
    assert_eq!(e.medians.gen_latency_s, Some(7.033));

    // re-ingesting the same table changes nothing
    let o = run(&[
        "ingest",
        p(&fixture("table3_gen_latency.csv")),
        "--schema",
        "gen-latency",
        "--out",
        p(&out),
    ]);
    assert!(o.status.success(), "{}", text(&o.stderr));
    assert_eq!(fs::read_to_string(&out).unwrap(), first);

    // a conflicting value is rejected and the file left alone
    let bad = dir.path().join("bad.csv");
    fs::write(
        &bad,
        "device,power_model,model,quantization,value\nAGX Orin Devkit,MAXN,70m,none,9.0\n",
    )
    .unwrap();
    let o = run(&[
        "ingest",
        p(&bad),
        "--schema",
        "gen-latency",
        "--out",
        p(&out),
    ]);
    assert_eq!(o.status.code(), Some(1));
    assert_eq!(fs::read_to_string(&out).unwrap(), first);

    let o = run(&["ingest", p(&bad), "--schema", "tables", "--out", p(&out)]);
    assert_eq!(o.status.code(), Some(1));
}

#[test]
fn recommend_inline_and_from_file() {
    let dir = tempfile::tempdir().unwrap();
    let ds = ingest_tables(dir.path());

    let o = run(&[
        "recommend",
        p(&ds),
        "--objective",
        "gen_latency",
        "--direction",
        "min",
    ]);
    assert!(o.status.success(), "{}", text(&o.stderr));
    let out = text(&o.stdout);
    assert!(
        out.contains("AGX Orin Devkit, MAXN NV power model, pythia-70m-deduped, no quantization"),
        "{out}"
    );
    assert!(
        out.contains("Configuration with Lowest Gen. Latency"),
        "{out}"
    );

    let csv = dir.path().join("sel.csv");
    let o = run(&[
        "recommend",
        p(&ds),
        "--constraint",
        "gen_latency<=7.0",
        "--objective",
        "gen_latency",
        "--csv",
        p(&csv),
    ]);
    assert!(o.status.success(), "{}", text(&o.stderr));
    assert!(text(&o.stdout).contains("infeasible"));
    assert!(fs::read_to_string(&csv).unwrap().contains(",infeasible,"));

    let q = dir.path().join("q.toml");
    fs::write(
        &q,
        "[[query]]\nconstraints = [\"total_latency<=40\"]\nobjective = \"load_latency\"\ndirection = \"max\"\n",
    )
    .unwrap();
    let o = run(&["recommend", p(&ds), "--query", p(&q)]);
    assert!(o.status.success(), "{}", text(&o.stderr));
    assert!(text(&o.stdout).contains("≤ 40 s"), "{}", text(&o.stdout));

    // unknown metric lists the allowed names
    let o = run(&["recommend", p(&ds), "--objective", "speed"]);
    assert_eq!(o.status.code(), Some(1));
    assert!(
        text(&o.stderr).contains("gen_latency"),
        "{}",
        text(&o.stderr)
    );

    // accuracy needs a joined table
    let o = run(&[
        "recommend",
        p(&ds),
        "--objective",
        "accuracy",
        "--direction",
        "max",
    ]);
    assert_eq!(o.status.code(), Some(1));

    let o = run(&["recommend", p(&ds)]);
    assert_eq!(o.status.code(), Some(1));
}

#[test]
fn report_writes_plot_series() {
    let dir = tempfile::tempdir().unwrap();
    let ds = ingest_tables(dir.path());
    let figs = dir.path().join("figs");
    let o = run(&[
        "report",
        p(&ds),
        "--figure",
        "quant-comp",
        "--out",
        p(&figs),
    ]);
    assert!(o.status.success(), "{}", text(&o.stderr));
    let qc = fs::read_to_string(figs.join("quant-comp.csv")).unwrap();
    assert!(
        qc.contains("AGX Orin Devkit,MAXN,pythia-70m-deduped,9.279,7.033,"),
        "{qc}"
    );

    let o = run(&[
        "report",
        p(&ds),
        "--figure",
        "time-per-token",
        "--out",
        p(&figs),
        "--tokens",
        "512",
    ]);
    assert!(o.status.success(), "{}", text(&o.stderr));
    let tpt = fs::read_to_string(figs.join("time-per-token.csv")).unwrap();
    assert!(
        tpt.contains("pythia-70m-deduped,none,0.013736328125"),
        "{tpt}"
    );

    // latency-only data cannot draw the memory figure
    let o = run(&["report", p(&ds), "--figure", "all", "--out", p(&figs)]);
    assert_eq!(o.status.code(), Some(1));
    assert!(
        text(&o.stderr).contains("peak_gpu_mem"),
        "{}",
        text(&o.stderr)
    );

    let o = run(&["report", p(&ds), "--figure", "fig9", "--out", p(&figs)]);
    assert_eq!(o.status.code(), Some(1));
}
