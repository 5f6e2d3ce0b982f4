//! End-to-end runs of the `recast-lab` binary.

use std::io::Write;
use std::process::{Command, Stdio};

use recast_lab::formats::{load_checkpoint, load_dataset, read_steps, SignalRecord};

fn bin() -> Command {
    Command::new(env!("CARGO_BIN_EXE_recast-lab"))
}

fn run(cmd: &mut Command) -> String {
    let out = cmd.output().unwrap();
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    String::from_utf8(out.stdout).unwrap()
}

#[test]
fn generate_train_eval_report() {
    let dir = tempfile::tempdir().unwrap();
    let data = dir.path().join("data.jsonl");
    run(bin().args(["generate", "--shape", "4,4,4", "--num-prompts", "16", "--seed", "3", "--out"]).arg(&data));
    assert_eq!(load_dataset(&data).unwrap().len(), 16);

    let mut runs = Vec::new();
    for mode in ["grpo", "recast"] {
        let out = dir.path().join(mode);
        run(bin()
            .args(["train", "--mode", mode, "--steps", "20", "--group-size", "4", "--eval-every", "5", "--k", "1,4"])
            .args(["--eval-samples", "4", "--dataset"])
            .arg(&data)
            .arg("--out")
            .arg(&out));
        let steps = read_steps(std::fs::File::open(out.join("steps.csv")).unwrap()).unwrap();
        assert_eq!(steps.len(), 20);
        assert!(out.join("curves/pass1_exact.csv").exists());
        assert!(out.join("plots/composition.dat").exists());
        assert!(out.join("config.json").exists());
        runs.push(out);
    }

    let ckpt = runs[1].join("checkpoint.json");
    assert_eq!(load_checkpoint(&ckpt).unwrap().num_prompts, 16);
    let stdout = run(bin().args(["eval", "--k", "1,4", "--eval-samples", "4", "--checkpoint"]).arg(&ckpt).arg("--dataset").arg(&data));
    let metrics: serde_json::Map<String, serde_json::Value> = serde_json::from_str(&stdout).unwrap();
    for key in ["pass1_exact", "pass_at_1", "pass_at_4", "recall_at_4"] {
        let v = metrics[key].as_f64().unwrap();
        assert!((0.0..=1.0).contains(&v), "{key} = {v}");
    }

    let csv = dir.path().join("report.csv");
    let stdout = run(bin().arg("report").arg("--reference").arg(&runs[0]).arg("--candidate").args(&runs).arg("--out").arg(&csv));
    assert!(stdout.contains("budget_ratio"));
    assert_eq!(std::fs::read_to_string(&csv).unwrap().lines().count(), 3);
}

#[test]
fn sweep_rejects_k_above_eval_samples() {
    let dir = tempfile::tempdir().unwrap();
    let manifest = dir.path().join("m.json");
    std::fs::write(&manifest, r#"{"eval": {"k_values": [1, 64], "eval_samples": 32}}"#).unwrap();
    let out = bin().arg("sweep").arg("--config").arg(&manifest).arg("--out").arg(dir.path()).output().unwrap();
    assert!(!out.status.success());
    assert!(!dir.path().join("default").exists());
}

#[test]
fn signal_filter_over_stdin() {
    let mut child = bin()
        .args(["signal", "--mode", "recast", "--shape", "3,3,3"])
        .stdin(Stdio::piped())
        .stdout(Stdio::piped())
        .spawn()
        .unwrap();
    let input = concat!(
        r#"{"prompt_id":0,"responses":["<a_0><b_0><c_1>","<a_2><b_2><c_2>","<a_0><b_1><c_0>"],"target":[[0,0,0]]}"#,
        "\n",
        r#"{"prompt_id":1,"responses":["<a_1><b_1><c_1>","junk"],"target":[[1,1,1]]}"#,
        "\n"
    );
    child.stdin.take().unwrap().write_all(input.as_bytes()).unwrap();
    let out = child.wait_with_output().unwrap();
    assert!(out.status.success());
    let records: Vec<SignalRecord> = String::from_utf8(out.stdout)
        .unwrap()
        .lines()
        .map(|l| serde_json::from_str(l).unwrap())
        .collect();
    assert_eq!(records.len(), 2);
    // All-zero group: the lowest-structural response (index 1) is repaired.
    assert!(records[0].group.repaired);
    assert_eq!(records[0].group.replaced_index, Some(1));
    assert_eq!(records[0].advantages.active.len(), 2);
    assert_eq!(records[0].advantages.values[1], 1.0);
    assert_eq!(records[1].advantages.values, vec![1.0, -1.0]);
}
