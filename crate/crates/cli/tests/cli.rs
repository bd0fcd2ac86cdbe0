use std::fs;
use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use weightcell::checkpoint::Checkpoint;

const TEXT: &str = "To be, or not to be, that is the question:\n\
Whether 'tis nobler in the mind to suffer\n\
The slings and arrows of outrageous fortune,\n\
Or to take arms against a sea of troubles\n\
And by opposing end them. To die: to sleep;\n";

fn bin() -> Command {
    Command::new(env!("CARGO_BIN_EXE_weightcell"))
}

struct Sandbox {
    dir: tempfile::TempDir,
}

impl Sandbox {
    fn new() -> Self {
        let dir = tempfile::tempdir().unwrap();
        fs::write(dir.path().join("corpus.txt"), TEXT.repeat(5)).unwrap();
        Sandbox { dir }
    }

    fn path(&self, rel: &str) -> PathBuf {
        self.dir.path().join(rel)
    }

    fn run(&self, args: &[&str]) -> Output {
        bin()
            .args(args)
            .current_dir(self.dir.path())
            .env("WEIGHTCELL_OUT", self.path("out"))
            .output()
            .unwrap()
    }

    /// `command` with a small language-model config, then `extra`.
    fn smoke(&self, command: &str, extra: &[&str]) -> Output {
        let mut args = vec![
            command,
            "--set",
            "corpus=corpus.txt",
            "--set",
            "hidden_dim=16",
            "--set",
            "epochs=1",
        ];
        args.extend(["--set", "bptt_len=10", "--set", "batch_size=4"]);
        args.extend(extra);
        self.run(&args)
    }
}

fn stdout(o: &Output) -> String {
    String::from_utf8_lossy(&o.stdout).into_owned()
}

fn stderr(o: &Output) -> String {
    String::from_utf8_lossy(&o.stderr).into_owned()
}

fn train(sb: &Sandbox, extra: &[&str]) -> Output {
    sb.smoke("train", extra)
}

fn without_wallclock(csv: &str) -> String {
    csv.lines()
        .map(|l| {
            let mut f: Vec<&str> = l.split(',').collect();
            if f.len() == 7 {
                f.remove(4);
            }
            f.join(",")
        })
        .collect::<Vec<_>>()
        .join("\n")
}

#[test]
fn missing_variant_is_usage_error() {
    let sb = Sandbox::new();
    let o = train(&sb, &[]);
    assert_eq!(o.status.code(), Some(2));
    assert!(stderr(&o).contains("`variant`"), "{}", stderr(&o));
}

#[test]
fn unknown_key_is_usage_error() {
    let sb = Sandbox::new();
    let o = train(&sb, &["--set", "variant=lstm", "--set", "hidden=3"]);
    assert_eq!(o.status.code(), Some(2));
    assert!(stderr(&o).contains("hidden"));
}

#[test]
fn zero_epochs_writes_header_only() {
    let sb = Sandbox::new();
    let o = train(&sb, &["--set", "variant=lstm", "--set", "epochs=0"]);
    assert_eq!(o.status.code(), Some(0), "{}", stderr(&o));
    let metrics = fs::read_to_string(sb.path("out/lstm-seed0/metrics.csv")).unwrap();
    let lines: Vec<&str> = metrics.lines().filter(|l| !l.starts_with('#')).collect();
    assert_eq!(
        lines,
        ["epoch,split,loss,perplexity_or_accuracy,wallclock_seconds,grad_norm_mean,lr"]
    );
}

#[test]
fn smoke_train_round_trips_and_reproduces() {
    let sb = Sandbox::new();
    let o = train(&sb, &["--set", "variant=coupled", "--seed", "4"]);
    assert_eq!(o.status.code(), Some(0), "{}", stderr(&o));
    let dir = sb.path("out/coupled-seed4");
    let ck = Checkpoint::load(&dir.join("model.ck")).unwrap();
    assert_eq!(ck.network.arch().hidden_dim, 16);
    assert!(ck.vocab.is_some());
    let first = fs::read_to_string(dir.join("metrics.csv")).unwrap();

    // The echoed config alone reproduces the run.
    let echoed = dir.join("config.txt");
    let again = sb.run(&["train", "--config", echoed.to_str().unwrap()]);
    assert_eq!(again.status.code(), Some(0), "{}", stderr(&again));
    let second = fs::read_to_string(dir.join("metrics.csv")).unwrap();
    assert_eq!(without_wallclock(&first), without_wallclock(&second));

    let eval = sb.run(&["eval", dir.join("model.ck").to_str().unwrap()]);
    assert_eq!(eval.status.code(), Some(0), "{}", stderr(&eval));
    let line = stdout(&eval);
    let loss: f64 = line.split_whitespace().nth(2).unwrap().parse().unwrap();
    let recorded: f64 = second
        .lines()
        .find(|l| l.starts_with("1,valid,"))
        .and_then(|l| l.split(',').nth(2))
        .unwrap()
        .parse()
        .unwrap();
    assert!((loss - recorded).abs() <= 1e-12, "{loss} vs {recorded}");
}

#[test]
fn config_file_with_comments() {
    let sb = Sandbox::new();
    fs::write(
        sb.path("run.cfg"),
        "# smoke run\nvariant = lstm-srnn\ncorpus = corpus.txt\nhidden_dim = 8 # small\nepochs = 1\nbptt_len = 10\nbatch_size = 4\n",
    )
    .unwrap();
    let o = sb.run(&["train", "--config", "run.cfg"]);
    assert_eq!(o.status.code(), Some(0), "{}", stderr(&o));
    assert!(sb.path("out/lstm-srnn-seed0/model.ck").exists());
}

#[test]
fn divergence_exits_3() {
    let sb = Sandbox::new();
    let o = train(
        &sb,
        &[
            "--set",
            "variant=srnn",
            "--set",
            "learning_rate=1e300",
            "--set",
            "clip_norm=1e300",
        ],
    );
    assert_eq!(o.status.code(), Some(3), "{}", stderr(&o));
    assert!(stderr(&o).contains("diverged"));
}

#[test]
fn ablate_single_cell_and_seeds() {
    let sb = Sandbox::new();
    let o = sb.smoke("ablate", &["--set", "variant=lstm"]);
    assert_eq!(o.status.code(), Some(0), "{}", stderr(&o));
    let table = fs::read_to_string(sb.path("out/ablation.txt")).unwrap();
    assert!(table.lines().nth(2).unwrap().starts_with("LSTM"));
    assert!(!table.contains('±'));

    let o = sb.smoke(
        "ablate",
        &["--set", "variant=lstm", "--set", "seeds=1,2", "--jobs", "2"],
    );
    assert_eq!(o.status.code(), Some(0), "{}", stderr(&o));
    let summary = fs::read_to_string(sb.path("out/ablation_summary.csv")).unwrap();
    let row: Vec<&str> = summary.lines().nth(1).unwrap().split(',').collect();
    assert_eq!(row[1], "2");
    assert!(row[3].parse::<f64>().unwrap() >= 0.0);
}

#[test]
fn ablate_full_sweep_in_canonical_order() {
    let sb = Sandbox::new();
    let o = sb.smoke(
        "ablate",
        &[
            "--set",
            "variants=srnn,lstm-srnn-hidden,lstm,lstm-srnn-out,lstm-srnn",
            "--set",
            "lr_override.srnn=0.5",
        ],
    );
    assert_eq!(o.status.code(), Some(0), "{}", stderr(&o));
    assert!(stderr(&o).contains("lr override: srnn"));
    let table = stdout(&o);
    let labels: Vec<&str> = table
        .lines()
        .skip(2)
        .take(5)
        .map(|l| l.split("  ").next().unwrap())
        .collect();
    assert_eq!(
        labels,
        ["LSTM", "- S-RNN", "- S-RNN - OUT", "- S-RNN - HIDDEN", "- GATES"]
    );
    assert!(table.contains("learning_rate 0.5 (override)"));
    let echoed = fs::read_to_string(sb.path("out/srnn-seed0/config.txt")).unwrap();
    assert!(echoed.contains("lr_override.srnn = 0.5"));
}

#[test]
fn gradcheck_passes_and_detects_faults() {
    let o = bin().arg("gradcheck").output().unwrap();
    assert_eq!(o.status.code(), Some(0), "{}", stderr(&o));
    assert!(stdout(&o).contains("PASSED"));

    let o = bin()
        .args([
            "gradcheck",
            "--variant",
            "lstm",
            "--draws",
            "1",
            "--inject-fault",
            "W_fh",
        ])
        .output()
        .unwrap();
    assert_eq!(o.status.code(), Some(1));
    assert!(stderr(&o).contains("W_fh"));

    let o = bin()
        .args([
            "gradcheck",
            "--variant",
            "srnn",
            "--input-dim",
            "60",
            "--hidden-dim",
            "90",
            "--len",
            "2",
            "--draws",
            "1",
        ])
        .output()
        .unwrap();
    assert!(stderr(&o).contains("warning"), "{}", stderr(&o));
}

fn fresh_checkpoint(sb: &Sandbox, variant: &str) -> PathBuf {
    let o = train(sb, &["--set", &format!("variant={variant}"), "--set", "epochs=0"]);
    assert_eq!(o.status.code(), Some(0), "{}", stderr(&o));
    sb.path(&format!("out/{variant}-seed0/model.ck"))
}

fn pgm_dims(path: &Path) -> (usize, usize) {
    let bytes = fs::read(path).unwrap();
    let header = String::from_utf8_lossy(&bytes[..bytes.len().min(32)]).into_owned();
    let mut f = header.split_whitespace();
    assert_eq!(f.next(), Some("P5"));
    (f.next().unwrap().parse().unwrap(), f.next().unwrap().parse().unwrap())
}

#[test]
fn decompose_fresh_lstm() {
    let sb = Sandbox::new();
    let ck = fresh_checkpoint(&sb, "lstm");
    let text: String = TEXT.chars().take(50).collect();
    let o = sb.run(&[
        "decompose",
        ck.to_str().unwrap(),
        "--text",
        &text,
        "--heatmap",
        "h.pgm",
        "--heatmap",
        "h.svg",
    ]);
    assert_eq!(o.status.code(), Some(0), "{}", stderr(&o));
    assert!(stdout(&o).contains("PASSED"));
    assert!(stdout(&o).contains("max deviation"));
    assert_eq!(pgm_dims(&sb.path("h.pgm")), (50, 50));
    assert!(fs::read_to_string(sb.path("h.svg")).unwrap().starts_with("<svg"));

    let o = sb.run(&["decompose", ck.to_str().unwrap(), "--text", &text, "--tolerance", "0"]);
    assert_eq!(o.status.code(), Some(1));
    assert!(stdout(&o).contains("FAILED"));
}

#[test]
fn decompose_rejects_srnn() {
    let sb = Sandbox::new();
    let ck = fresh_checkpoint(&sb, "srnn");
    let o = sb.run(&["decompose", ck.to_str().unwrap(), "--text", "To be"]);
    assert_eq!(o.status.code(), Some(2));
    assert!(stderr(&o).contains("has no memory cell"));
}

#[test]
fn decompose_bidirectional_synthetic() {
    let sb = Sandbox::new();
    let o = sb.run(&[
        "train",
        "--set",
        "variant=lstm",
        "--set",
        "task=recall",
        "--set",
        "delay=3",
        "--set",
        "alphabet_size=3",
        "--set",
        "train_count=20",
        "--set",
        "test_count=10",
        "--set",
        "hidden_dim=4",
        "--set",
        "directions=2",
        "--set",
        "epochs=1",
    ]);
    assert_eq!(o.status.code(), Some(0), "{}", stderr(&o));
    let rows: Vec<String> = (0..6)
        .map(|t| {
            (0..5)
                .map(|k| if k == t % 5 { "1" } else { "0" })
                .collect::<Vec<_>>()
                .join(",")
        })
        .collect();
    fs::write(sb.path("seq.csv"), rows.join("\n")).unwrap();
    let ck = sb.path("out/lstm-seed0/model.ck");
    let o = sb.run(&[
        "decompose",
        ck.to_str().unwrap(),
        "--input",
        "seq.csv",
        "--heatmap",
        "b.pgm",
    ]);
    assert_eq!(o.status.code(), Some(0), "{}", stderr(&o));
    assert!(stdout(&o).contains("layer 0 bwd"));
    assert_eq!(pgm_dims(&sb.path("b.pgm")), (6, 6));

    let eval = sb.run(&["eval", ck.to_str().unwrap(), "--split", "test"]);
    assert_eq!(eval.status.code(), Some(0), "{}", stderr(&eval));
    assert!(stdout(&eval).contains("accuracy"));
}
