use std::fs;
use std::path::Path;
use std::process::{Command, Output};

fn mbssl(args: &[&str], cwd: &Path) -> Output {
    Command::new(env!("CARGO_BIN_EXE_mbssl"))
        .args(args)
        .current_dir(cwd)
        .output()
        .expect("binary runs")
}

fn stdout(o: &Output) -> String {
    String::from_utf8(o.stdout.clone()).unwrap()
}

const TINY: &str = "\
synthetic.users = 40
synthetic.items = 60
synthetic.density = 0.1
dim = 8
attention_dim = 8
layers = 2
batch_size = 16
epochs = 2
lr = 0.01
";

fn tiny_config(dir: &Path) -> String {
    let p = dir.join("tiny.cfg");
    fs::write(&p, TINY).unwrap();
    p.to_string_lossy().into_owned()
}

#[test]
fn gen_synthetic_writes_interaction_tsv() {
    let tmp = tempfile::tempdir().unwrap();
    let cfg = tiny_config(tmp.path());
    let o = mbssl(&["gen-synthetic", "--spec", &cfg, "--out", "data/x.tsv"], tmp.path());
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    let text = fs::read_to_string(tmp.path().join("data/x.tsv")).unwrap();
    assert!(!text.is_empty());
    for line in text.lines() {
        let f: Vec<&str> = line.split('\t').collect();
        assert_eq!(f.len(), 3, "{line}");
        assert!(f[0].starts_with('u') && f[1].starts_with('i'));
        assert!(matches!(f[2], "1" | "2" | "3"), "{line}");
    }
}

#[test]
fn train_then_evaluate_reproduces_final_metrics() {
    let tmp = tempfile::tempdir().unwrap();
    let cfg = tiny_config(tmp.path());
    let o = mbssl(&["train", "--config", &cfg, "--output", "run"], tmp.path());
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    let trained = stdout(&o);
    assert!(trained.starts_with("epoch,recall@10,ndcg@10,recall@50,ndcg@50\n"));

    let run = tmp.path().join("run");
    for f in [
        "manifest.tsv",
        "params.bin",
        "config.cfg",
        "metrics.csv",
        "diagnostics_steps.csv",
        "users.tsv",
    ] {
        assert!(run.join(f).is_file(), "missing {f}");
    }
    let metrics = fs::read_to_string(run.join("metrics.csv")).unwrap();
    assert_eq!(metrics.lines().count(), 3);
    assert_eq!(metrics.lines().last(), trained.lines().last());

    let o = mbssl(
        &["evaluate", "--checkpoint", "run", "--report", "report.csv"],
        tmp.path(),
    );
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    assert_eq!(stdout(&o), trained);
    let report = fs::read_to_string(tmp.path().join("report.csv")).unwrap();
    assert!(report.starts_with("cutoff,recall,ndcg\n10,"));
}

#[test]
fn overrides_take_precedence_over_the_file() {
    let tmp = tempfile::tempdir().unwrap();
    let cfg = tiny_config(tmp.path());
    let o = mbssl(
        &[
            "train",
            "--config",
            &cfg,
            "--set",
            "epochs=1",
            "--set",
            "cutoffs=5",
            "--output",
            "run",
        ],
        tmp.path(),
    );
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    assert!(stdout(&o).starts_with("epoch,recall@5,ndcg@5\n1,"));
}

#[test]
fn swing_index_dump_has_both_sides() {
    let tmp = tempfile::tempdir().unwrap();
    let cfg = tiny_config(tmp.path());
    let o = mbssl(&["build-swing-index", "--config", &cfg, "--out", "swing"], tmp.path());
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    for f in ["user_swing.tsv", "item_swing.tsv"] {
        assert!(!fs::read_to_string(tmp.path().join("swing").join(f)).unwrap().is_empty());
    }
}

#[test]
fn studies_write_their_reports() {
    let tmp = tempfile::tempdir().unwrap();
    let cfg = tiny_config(tmp.path());
    let o = mbssl(
        &[
            "noise-study",
            "--config",
            &cfg,
            "--set",
            "epochs=1",
            "--set",
            "study_seeds=0,1",
            "--set",
            "noise_ratios=0.2",
            "--out",
            "noise.csv",
        ],
        tmp.path(),
    );
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    let noise = fs::read_to_string(tmp.path().join("noise.csv")).unwrap();
    assert!(noise.starts_with("noise_ratio,decline_pct\n0.2,"));

    let o = mbssl(
        &[
            "sparsity-study",
            "--config",
            &cfg,
            "--set",
            "epochs=1",
            "--out",
            "sparsity.csv",
        ],
        tmp.path(),
    );
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    let buckets = fs::read_to_string(tmp.path().join("sparsity.csv")).unwrap();
    assert!(buckets.starts_with("bucket_lo,bucket_hi,count,mean_ndcg\n"));
    assert!(buckets.lines().count() > 1);
}

#[test]
fn bad_input_fails_with_a_message() {
    let tmp = tempfile::tempdir().unwrap();
    let cases: [&[&str]; 4] = [
        &["train", "--no-such-flag"],
        &["train", "--set", "no_such_key=1"],
        &["train", "--set", "epochs"],
        &["evaluate", "--checkpoint", "missing"],
    ];
    for args in cases {
        let o = mbssl(args, tmp.path());
        assert!(!o.status.success(), "{args:?} succeeded");
        assert!(!o.stderr.is_empty(), "{args:?} printed nothing");
    }
    let o = mbssl(&["train", "--set", "no_such_key=1"], tmp.path());
    assert!(
        String::from_utf8_lossy(&o.stderr).contains("epochs"),
        "valid keys are listed"
    );
}
