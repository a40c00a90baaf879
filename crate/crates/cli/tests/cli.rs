use std::path::Path;
use std::process::{Command, Output};

const SMALL: &str = "n_samples = 600\nn_features = 8\nrounds = 3\nreps = 2\n";

fn stackfed(args: &[&str], threads: Option<&str>) -> Output {
    let mut cmd = Command::new(env!("CARGO_BIN_EXE_stackfed"));
    cmd.args(args).env("RUST_LOG", "error");
    match threads {
        Some(t) => cmd.env("STACKFED_THREADS", t),
        None => cmd.env_remove("STACKFED_THREADS"),
    };
    cmd.output().unwrap()
}

fn write_config(dir: &Path, text: &str) -> String {
    let path = dir.join("exp.toml");
    std::fs::write(&path, text).unwrap();
    path.to_str().unwrap().to_string()
}

fn read(path: &Path) -> String {
    std::fs::read_to_string(path).unwrap()
}

#[test]
fn run_writes_both_csv_files() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write_config(dir.path(), SMALL);
    let out = dir.path().join("out");
    let o = stackfed(
        &["run", "--config", &cfg, "--strategy", "dswm", "--seed", "5", "--out", out.to_str().unwrap()],
        None,
    );
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    let results = read(&out.join("results.csv"));
    let mut lines = results.lines();
    assert_eq!(
        lines.next().unwrap(),
        "strategy,node_id,role,rep,round,contribution_weight,val_loss,test_auc"
    );
    assert_eq!(lines.count(), 2 * 3 * 3);
    assert!(results.lines().skip(1).all(|l| l.starts_with("dswm,")));
    let summary = read(&out.join("summary.csv"));
    assert_eq!(
        summary.lines().next().unwrap(),
        "strategy,node_id,role,mean_auc,std_auc,mean_loss,delta_vs_fedavg_pct"
    );
    assert_eq!(summary.lines().count(), 1 + 3);
}

#[test]
fn compare_is_byte_reproducible_across_runs_and_thread_counts() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write_config(dir.path(), SMALL);
    let mut outputs = Vec::new();
    for (name, threads) in [("a", None), ("b", None), ("c", Some("3"))] {
        let out = dir.path().join(name);
        let o = stackfed(
            &["compare", "--config", &cfg, "--strategies", "fedavg,pwfedavg,dswm,aswm", "--out", out.to_str().unwrap()],
            threads,
        );
        assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
        outputs.push((read(&out.join("results.csv")), read(&out.join("summary.csv"))));
    }
    assert_eq!(outputs[0], outputs[1]);
    assert_eq!(outputs[0], outputs[2]);
    assert_eq!(outputs[0].1.lines().count(), 1 + 4 * 3);
}

#[test]
fn flags_and_set_override_the_config_file() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write_config(dir.path(), SMALL);
    let out = dir.path().join("out");
    let o = stackfed(
        &[
            "run", "--config", &cfg, "--rounds", "2", "--reps", "1", "--set", "strategy=pwfedavg",
            "--set", "hidden_layers=[]", "--out", out.to_str().unwrap(), "--json",
        ],
        None,
    );
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    let results = read(&out.join("results.csv"));
    assert_eq!(results.lines().count(), 1 + 2 * 3);
    assert!(results.lines().skip(1).all(|l| l.starts_with("pwfedavg,")));
    assert!(out.join("results.json").exists());
}

#[test]
fn out_dir_can_come_from_set() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write_config(dir.path(), SMALL);
    let out = dir.path().join("via_set");
    let set = format!("out_dir={}", out.display());
    let o = stackfed(&["run", "--config", &cfg, "--reps", "1", "--set", &set], None);
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    assert!(out.join("summary.csv").exists());
}

#[test]
fn bad_input_exits_with_an_error() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write_config(dir.path(), SMALL);
    let cases: [&[&str]; 5] = [
        &["run", "--config", &cfg, "--strategy", "nope"],
        &["run", "--config", &cfg, "--set", "no_such_key=1"],
        &["run", "--config", &cfg, "--set", "missing_equals"],
        &["run", "--config", "/nonexistent.toml"],
        &["compare", "--config", &cfg],
    ];
    for args in cases {
        let o = stackfed(args, None);
        assert!(!o.status.success(), "{args:?} should fail");
    }
    let bad = write_config(dir.path(), "reps = 0\n");
    assert!(!stackfed(&["run", "--config", &bad], None).status.success());
}

#[test]
fn failed_repetitions_give_nonzero_exit_with_partial_output() {
    let dir = tempfile::tempdir().unwrap();
    // Header for a 300 x 1 dataset with two classes, every label 0.
    let mut bytes = b"SFD1".to_vec();
    for v in [300u32, 1, 2] {
        bytes.extend_from_slice(&v.to_le_bytes());
    }
    bytes.extend(std::iter::repeat_n(0u8, 300 * 4 + 300 * 2));
    let data = dir.path().join("one_class.sfd");
    std::fs::write(&data, bytes).unwrap();
    let cfg = write_config(
        dir.path(),
        &format!("{SMALL}dataset_path = \"{}\"\n", data.display()),
    );
    let out = dir.path().join("out");
    let o = stackfed(&["run", "--config", &cfg, "--out", out.to_str().unwrap()], None);
    assert_eq!(o.status.code(), Some(1));
    assert!(String::from_utf8_lossy(&o.stderr).contains("failed"));
    assert_eq!(read(&out.join("results.csv")).lines().count(), 1);
}
