use std::fs;
use std::path::Path;
use std::process::{Command, Output};

use steam::checkpoint::Checkpoint;
use steam::cli::{Cli, Command as Sub};
use steam::config::load_config;
use steam::data::Dataset;
use clap::Parser;

fn steam(dir: &Path, args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_steam"))
        .current_dir(dir)
        .args(args)
        .output()
        .unwrap()
}

fn stderr(o: &Output) -> String {
    String::from_utf8_lossy(&o.stderr).into_owned()
}

const SMALL: &str = "seeds = 1\nepochs = 2\nper_domain = 80\nhidden = 8\nfeature_dim = 6\nembed_dim = 4\nbank_size = 16\ntargets = 0,1\n";

fn write_small(dir: &Path) {
    fs::write(dir.join("small.cfg"), SMALL).unwrap();
}

#[test]
fn parses_train_command() {
    let cli = Cli::try_parse_from(["steam", "train", "--config", "cfg", "--out", "runs/"]).unwrap();
    match cli.command {
        Sub::Train(a) => {
            assert_eq!(a.common.config.as_deref(), Some(Path::new("cfg")));
            assert_eq!(a.common.out, Path::new("runs/"));
            assert_eq!(a.common.seed, None);
        }
        other => panic!("{other:?}"),
    }
}

#[test]
fn no_subcommand_prints_usage_and_exits_two() {
    let dir = tempfile::tempdir().unwrap();
    let o = steam(dir.path(), &[]);
    assert_eq!(o.status.code(), Some(2));
    assert!(stderr(&o).contains("Usage"));
}

#[test]
fn duplicate_and_unknown_flags_are_rejected_everywhere() {
    let with_value: &[(&str, &str)] = &[("--config", "a.cfg"), ("--out", "o"), ("--seed", "7")];
    for sub in ["train", "ablation", "design-study", "msda", "gen-data"] {
        for (flag, value) in with_value {
            let args = ["steam", sub, flag, value, flag, value];
            assert!(Cli::try_parse_from(args).is_err(), "{sub} accepted a repeated {flag}");
        }
        let e = Cli::try_parse_from(["steam", sub, "--bogus"]).unwrap_err();
        assert_eq!(e.exit_code(), 2);
        assert!(e.to_string().contains("--bogus"));
    }
    for sub in ["train", "msda"] {
        let args = ["steam", sub, "--variant", "steam", "--variant", "vanilla"];
        assert!(Cli::try_parse_from(args).is_err());
    }
    for sub in ["ablation", "design-study", "gen-data", "verify"] {
        assert!(Cli::try_parse_from(["steam", sub, "--variant", "steam"]).is_err());
    }
    assert!(Cli::try_parse_from(["steam", "verify", "--seed", "1"]).is_err());
    assert!(Cli::try_parse_from(["steam", "train", "--seed", "x"]).is_err());
    assert!(Cli::try_parse_from(["steam", "train", "--variant", "nope"]).is_err());
    assert!(Cli::try_parse_from(["steam", "train", "ablation"]).is_err());
}

#[test]
fn repeated_seed_exits_two_naming_the_flag() {
    let dir = tempfile::tempdir().unwrap();
    let o = steam(dir.path(), &["train", "--seed", "7", "--seed", "9"]);
    assert_eq!(o.status.code(), Some(2));
    assert!(stderr(&o).contains("--seed"));
}

#[test]
fn config_errors_exit_two_with_line_or_key() {
    let dir = tempfile::tempdir().unwrap();
    fs::write(dir.path().join("bad.cfg"), "epochs = 2\nalpha = 1.5\n").unwrap();
    let o = steam(dir.path(), &["train", "--config", "bad.cfg"]);
    assert_eq!(o.status.code(), Some(2));
    assert!(stderr(&o).contains("alpha"));
    fs::write(dir.path().join("bad2.cfg"), "epochs = 2\nwhat = 1\n").unwrap();
    let o = steam(dir.path(), &["train", "--config", "bad2.cfg"]);
    assert_eq!(o.status.code(), Some(2));
    assert!(stderr(&o).contains("line 2"));
    fs::write(dir.path().join("dg.cfg"), "mode = dg\n").unwrap();
    let o = steam(dir.path(), &["msda", "--config", "dg.cfg"]);
    assert_eq!(o.status.code(), Some(2));
    assert!(!dir.path().join("out").exists());
}

#[test]
fn train_writes_only_inside_out_dir() {
    let dir = tempfile::tempdir().unwrap();
    write_small(dir.path());
    let o = steam(dir.path(), &["train", "--config", "small.cfg", "--out", "run/nested", "--variant", "vanilla-style"]);
    assert!(o.status.success(), "{}", stderr(&o));
    let mut top: Vec<String> = fs::read_dir(dir.path())
        .unwrap()
        .map(|e| e.unwrap().file_name().to_string_lossy().into_owned())
        .collect();
    top.sort();
    assert_eq!(top, vec!["run", "small.cfg"]);
    let out = dir.path().join("run/nested");
    for f in ["config.txt", "manifest.json", "epochs.csv", "runs.csv", "summary.csv", "timing.csv"] {
        assert!(out.join(f).is_file(), "{f}");
    }
    let epochs = fs::read_to_string(out.join("epochs.csv")).unwrap();
    assert_eq!(
        epochs.lines().next().unwrap(),
        "variant,target_domain,seed,epoch,l_cls,l_s,l_c,l_o,total,source_acc,target_acc"
    );
    assert_eq!(epochs.lines().count(), 1 + 2 * 2);
    let echoed = load_config(&out.join("config.txt")).unwrap();
    assert_eq!(echoed.variant.name(), "vanilla-style");
    assert_eq!(echoed.epochs, 2);
    let manifest: serde_json::Value = serde_json::from_str(&fs::read_to_string(out.join("manifest.json")).unwrap()).unwrap();
    assert_eq!(manifest["seed"], 0);
    assert_eq!(manifest["version"], env!("CARGO_PKG_VERSION"));
    let ckpt = Checkpoint::load(&out.join("checkpoints/vanilla-style-target1-seed0.ckpt")).unwrap();
    let enc = ckpt.encoder().unwrap();
    assert!(ckpt.memory().unwrap().is_some());
    assert_eq!(enc.classifier.outputs(), 7);
}

#[test]
fn seed_override_reaches_outputs() {
    let dir = tempfile::tempdir().unwrap();
    write_small(dir.path());
    let o = steam(dir.path(), &["train", "--config", "small.cfg", "--out", "o", "--seed", "42"]);
    assert!(o.status.success(), "{}", stderr(&o));
    let runs = fs::read_to_string(dir.path().join("o/runs.csv")).unwrap();
    assert!(runs.lines().skip(1).all(|l| l.split(',').nth(3) == Some("42")));
    let cfg = fs::read_to_string(dir.path().join("o/config.txt")).unwrap();
    assert!(cfg.contains("seed = 42\n"));
}

#[test]
fn ablation_and_design_tables_have_four_rows() {
    let dir = tempfile::tempdir().unwrap();
    write_small(dir.path());
    for (sub, first) in [("ablation", "vanilla"), ("design-study", "steam")] {
        let o = steam(dir.path(), &[sub, "--config", "small.cfg", "--out", sub]);
        assert!(o.status.success(), "{}", stderr(&o));
        let summary = fs::read_to_string(dir.path().join(sub).join("summary.csv")).unwrap();
        let lines: Vec<&str> = summary.lines().collect();
        assert_eq!(lines.len(), 5);
        assert_eq!(lines[0], "variant,domain0_mean,domain0_sd,domain1_mean,domain1_sd,avg_mean,avg_sd");
        assert!(lines[1].starts_with(first));
        assert_eq!(String::from_utf8_lossy(&o.stdout), summary);
    }
}

#[test]
fn gen_data_round_trips() {
    let dir = tempfile::tempdir().unwrap();
    fs::write(dir.path().join("d.cfg"), "per_domain = 30\n").unwrap();
    let o = steam(dir.path(), &["gen-data", "--config", "d.cfg", "--out", "data"]);
    assert!(o.status.success(), "{}", stderr(&o));
    let text = fs::read(dir.path().join("data/dataset.csv")).unwrap();
    let data = Dataset::read_csv(&text[..]).unwrap();
    assert_eq!(data.len(), 120);
    assert_eq!((data.n_classes, data.n_domains, data.dim), (7, 4, 10));
    let mut again = Vec::new();
    data.write_csv(&mut again).unwrap();
    assert_eq!(again, text);
}

#[test]
fn msda_command_marks_runs() {
    let dir = tempfile::tempdir().unwrap();
    write_small(dir.path());
    let o = steam(dir.path(), &["msda", "--config", "small.cfg", "--out", "m"]);
    assert!(o.status.success(), "{}", stderr(&o));
    let runs = fs::read_to_string(dir.path().join("m/runs.csv")).unwrap();
    assert_eq!(runs.lines().count(), 3);
    assert!(runs.lines().skip(1).all(|l| l.split(',').nth(1) == Some("msda")));
    let cfg = fs::read_to_string(dir.path().join("m/config.txt")).unwrap();
    assert!(cfg.contains("batch_size = 32\n"));
}
