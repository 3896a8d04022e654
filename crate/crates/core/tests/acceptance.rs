//! Acceptance run: one PASS/FAIL line per criterion, exit status 1 if any
//! criterion fails.

use std::fs;
use std::path::Path;
use std::process::Command;
use std::time::{Duration, Instant};

use steam::autodiff::Graph;
use steam::data::{epoch_batches, make_batch, VariantSampler};
use steam::losses::classification_loss;
use steam::train::{benchmark_dataset, run_ablation, Mode, RunPlan, StudyResult, TrainConfig, TrainState, Variant};
use steam::verify::{self, Check};

const GRADIENT_BUDGET: Duration = Duration::from_secs(60);
const ORACLE_BUDGET: Duration = Duration::from_secs(30);
const ABLATION_BUDGET: Duration = Duration::from_secs(15 * 60);
const ABLATION_MARGIN: f64 = 0.02;
const SEED_WINS_NEEDED: usize = 4;

struct Outcome {
    passed: bool,
    detail: String,
}

fn worst(checks: &[Check]) -> f64 {
    checks.iter().map(|c| c.observed).fold(f64::NEG_INFINITY, f64::max)
}

fn failed_names(checks: &[Check]) -> String {
    let bad: Vec<&str> = checks.iter().filter(|c| !c.passed).map(|c| c.name.as_str()).collect();
    if bad.is_empty() {
        String::new()
    } else {
        format!("; failing: {}", bad.join(", "))
    }
}

fn timed<T>(f: impl FnOnce() -> T) -> (T, Duration) {
    let start = Instant::now();
    let v = f();
    (v, start.elapsed())
}

fn gradient_correctness() -> Outcome {
    let (checks, took) = timed(verify::gradient_checks);
    let ok = checks.iter().all(|c| c.passed) && took < GRADIENT_BUDGET;
    Outcome {
        passed: ok,
        detail: format!(
            "{} loss and composed-objective checks over {} seeds, worst relative error {:.2e} (tol {:.0e}), {:.1} s (budget {} s){}",
            checks.len(),
            verify::FD_SEEDS,
            worst(&checks),
            verify::FD_TOL,
            took.as_secs_f64(),
            GRADIENT_BUDGET.as_secs(),
            failed_names(&checks)
        ),
    }
}

fn oracle_equivalence() -> Outcome {
    let (checks, took) = timed(verify::oracle_checks);
    let ok = checks.iter().all(|c| c.passed) && took < ORACLE_BUDGET;
    Outcome {
        passed: ok,
        detail: format!(
            "{} objectives on {} instances each, worst absolute gap {:.2e} (tol {:.0e}), {:.1} s (budget {} s){}",
            checks.len(),
            verify::ORACLE_INSTANCES,
            worst(&checks),
            verify::ORACLE_TOL,
            took.as_secs_f64(),
            ORACLE_BUDGET.as_secs(),
            failed_names(&checks)
        ),
    }
}

fn closed_forms() -> Outcome {
    let checks = verify::closed_form_checks();
    let detail = checks
        .iter()
        .map(|c| format!("{} {:.1e}/{:.0e}", c.name, c.observed, c.tolerance))
        .collect::<Vec<_>>()
        .join(", ");
    Outcome {
        passed: checks.iter().all(|c| c.passed),
        detail,
    }
}

fn mechanism_invariants() -> Outcome {
    let checks = verify::invariant_checks();
    let wanted = [
        "invariant.queue_fifo_model",
        "invariant.momentum_exact",
        "invariant.memory_isolation_epoch",
    ];
    let picked: Vec<&Check> = checks.iter().filter(|c| wanted.contains(&c.name.as_str())).collect();
    let detail = picked
        .iter()
        .map(|c| format!("{} {:.1e}/{:.0e}", c.name, c.observed, c.tolerance))
        .collect::<Vec<_>>()
        .join(", ");
    Outcome {
        passed: picked.len() == wanted.len() && picked.iter().all(|c| c.passed),
        detail: format!("{detail} ({} queue scripts){}", verify::QUEUE_SCRIPTS, failed_names(&checks)),
    }
}

fn seeds_at_least(study: &StudyResult, v: Variant, base: &[f64]) -> usize {
    study.avg_per_seed(v).iter().zip(base).filter(|(a, b)| a >= b).count()
}

fn ablation_ordering(study: &StudyResult, took: Duration) -> Outcome {
    let vanilla = study.avg_per_seed(Variant::Vanilla);
    let steam = study.avg_per_seed(Variant::Steam);
    let mean = |xs: &[f64]| xs.iter().sum::<f64>() / xs.len() as f64;
    let gain = mean(&steam) - mean(&vanilla);
    let style_wins = seeds_at_least(study, Variant::VanillaStyle, &vanilla);
    let semantic_wins = seeds_at_least(study, Variant::VanillaSemantic, &vanilla);
    let ok = gain >= ABLATION_MARGIN
        && style_wins >= SEED_WINS_NEEDED
        && semantic_wins >= SEED_WINS_NEEDED
        && took < ABLATION_BUDGET;
    Outcome {
        passed: ok,
        detail: format!(
            "steam {:.2}% vs vanilla {:.2}% (gain {:+.2} points, need {:+.0}); vanilla-style >= vanilla in {}/{} seeds, vanilla-semantic >= vanilla in {}/{} seeds (need {}); {:.0} s (budget {} s)",
            100.0 * mean(&steam),
            100.0 * mean(&vanilla),
            100.0 * gain,
            100.0 * ABLATION_MARGIN,
            style_wins,
            vanilla.len(),
            semantic_wins,
            vanilla.len(),
            SEED_WINS_NEEDED,
            took.as_secs_f64(),
            ABLATION_BUDGET.as_secs()
        ),
    }
}

fn style_diagnostic(study: &StudyResult) -> Outcome {
    let runs: Vec<_> = study.runs_of(Variant::Steam).collect();
    let n = runs.len() as f64;
    let dom = runs.iter().map(|r| r.style.domain_accuracy).sum::<f64>() / n;
    let cls = runs.iter().map(|r| r.style.class_accuracy).sum::<f64>() / n;
    Outcome {
        passed: !runs.is_empty() && dom > cls,
        detail: format!(
            "steam style features over {} runs: nearest-centroid domain accuracy {:.3}, class accuracy {:.3}",
            runs.len(),
            dom,
            cls
        ),
    }
}

fn bin() -> &'static str {
    env!("CARGO_BIN_EXE_steam")
}

fn run_cli(args: &[&str]) -> std::io::Result<std::process::Output> {
    Command::new(bin()).args(args).output()
}

/// Rows belonging to the unlabelled target receive exactly zero gradient
/// from the classification loss on a real adaptation batch.
fn target_cls_gradient(cfg: &TrainConfig) -> steam::Result<(f64, f64, usize)> {
    let data = benchmark_dataset(cfg)?;
    let plan = RunPlan::msda(&data, 0, cfg.source_holdout, cfg.msda_adapt_fraction, cfg.seed)?;
    plan.check(Mode::Msda)?;
    let state = TrainState::new(cfg, plan.train_domains.clone(), 3)?;
    let pools: Vec<Vec<usize>> = plan.train_domains.iter().map(|&d| plan.train.indices_of_domain(d)).collect();
    let sampler = VariantSampler::new(&plan.train, &(0..plan.train.len()).collect::<Vec<_>>());
    let mut rng = steam::data::rng_for(cfg.seed, 77);
    let mut target_grad: f64 = 0.0;
    let mut source_grad: f64 = 0.0;
    let mut target_rows = 0;
    for idx in epoch_batches(&pools, cfg.batch_size, &mut rng)? {
        let batch = make_batch(&plan.train, &idx, &sampler, &cfg.policy, &mut rng);
        let logits = state.encoder.predict_logits(&batch.x)?;
        let mut g = Graph::new();
        let z = g.param(logits);
        let loss = classification_loss(&mut g, z, &batch.labels)?;
        g.backward(loss)?;
        let grad = g.grad(z).cloned().unwrap_or_else(|| g.value(z).zeros_like());
        for (r, &d) in batch.domains.iter().enumerate() {
            let mag: f64 = grad.row(r).iter().map(|v| v.abs()).sum();
            if d == plan.target {
                target_rows += 1;
                target_grad = target_grad.max(mag);
            } else {
                source_grad = source_grad.max(mag);
            }
        }
    }
    Ok((target_grad, source_grad, target_rows))
}

fn msda_mode(dir: &Path) -> Outcome {
    let out = dir.join("msda");
    let out_s = out.to_string_lossy().into_owned();
    let cli = run_cli(&["msda", "--out", &out_s]);
    let status_ok = matches!(&cli, Ok(o) if o.status.success());
    let summary = fs::read_to_string(out.join("summary.csv")).unwrap_or_default();
    let header = summary.lines().next().unwrap_or("");
    let expected_header =
        "variant,domain0_mean,domain0_sd,domain1_mean,domain1_sd,domain2_mean,domain2_sd,domain3_mean,domain3_sd,avg_mean,avg_sd";
    let rows = summary.lines().skip(1).filter(|l| !l.is_empty()).count();
    let runs = fs::read_to_string(out.join("runs.csv")).unwrap_or_default();
    let msda_rows = runs.lines().skip(1).filter(|l| l.split(',').nth(1) == Some("msda")).count();
    let cfg = TrainConfig::for_mode(Mode::Msda);
    let grads = target_cls_gradient(&cfg);
    let labelled_target_rejected = {
        let data = benchmark_dataset(&cfg).expect("benchmark");
        let mut plan = RunPlan::msda(&data, 1, cfg.source_holdout, cfg.msda_adapt_fraction, cfg.seed).expect("plan");
        if let Some(s) = plan.train.samples.iter_mut().find(|s| s.d == 1) {
            s.y = Some(0);
        }
        matches!(plan.check(Mode::Msda), Err(steam::Error::Contract(_)))
    };
    let (tg, sg, tr) = grads.as_ref().map(|g| *g).unwrap_or((f64::NAN, f64::NAN, 0));
    let ok = status_ok
        && header == expected_header
        && rows == 1
        && msda_rows == 20
        && tg == 0.0
        && sg > 0.0
        && tr > 0
        && labelled_target_rejected;
    Outcome {
        passed: ok,
        detail: format!(
            "cli exit ok: {status_ok}; summary columns {}; {msda_rows} msda runs; max L_cls gradient on {tr} target rows {tg:e} (sources {sg:.2e}); labelled target rejected: {labelled_target_rejected}",
            header.split(',').count()
        ),
    }
}

fn determinism(dir: &Path) -> Outcome {
    let cfg_path = dir.join("det.cfg");
    let written = fs::write(&cfg_path, "seeds = 2\nepochs = 6\nper_domain = 200\n").is_ok();
    let cfg_s = cfg_path.to_string_lossy().into_owned();
    let mut statuses = Vec::new();
    for name in ["a", "b"] {
        let out = dir.join(name).to_string_lossy().into_owned();
        statuses.push(matches!(run_cli(&["train", "--config", &cfg_s, "--out", &out, "--seed", "11"]), Ok(o) if o.status.success()));
    }
    let files = ["epochs.csv", "runs.csv", "summary.csv", "config.txt"];
    let mut identical = 0;
    for f in files {
        let a = fs::read(dir.join("a").join(f));
        let b = fs::read(dir.join("b").join(f));
        if let (Ok(a), Ok(b)) = (a, b) {
            if a == b && !a.is_empty() {
                identical += 1;
            }
        }
    }
    Outcome {
        passed: written && statuses.iter().all(|&s| s) && identical == files.len(),
        detail: format!("{identical}/{} metric files byte-identical across two seeded train runs", files.len()),
    }
}

fn verify_command() -> Outcome {
    match run_cli(&["verify"]) {
        Ok(o) => {
            let text = String::from_utf8_lossy(&o.stdout);
            let lines: Vec<&str> = text.lines().filter(|l| l.starts_with("PASS") || l.starts_with("FAIL")).collect();
            let groups = ["fd.", "oracle.", "closed.", "invariant."];
            let covered = groups.iter().all(|g| lines.iter().any(|l| l.contains(g)));
            Outcome {
                passed: o.status.success() && covered && lines.len() >= 25,
                detail: format!(
                    "exit code {:?}, {} checks listed, all four check groups present: {covered}",
                    o.status.code(),
                    lines.len()
                ),
            }
        }
        Err(e) => Outcome {
            passed: false,
            detail: format!("could not start the binary: {e}"),
        },
    }
}

fn main() {
    let dir = tempfile::tempdir().expect("temporary directory");
    let mut results: Vec<(&str, Outcome)> = vec![
        ("gradient correctness", gradient_correctness()),
        ("oracle equivalence", oracle_equivalence()),
        ("closed-form values", closed_forms()),
        ("mechanism invariants", mechanism_invariants()),
    ];
    let (study, took) = timed(|| run_ablation(&TrainConfig::default()));
    match study {
        Ok(study) => {
            results.push(("ablation ordering", ablation_ordering(&study, took)));
            results.push(("style diagnostic", style_diagnostic(&study)));
        }
        Err(e) => {
            for name in ["ablation ordering", "style diagnostic"] {
                results.push((
                    name,
                    Outcome {
                        passed: false,
                        detail: format!("ablation failed: {e}"),
                    },
                ));
            }
        }
    }
    results.push(("adaptation mode", msda_mode(dir.path())));
    results.push(("determinism", determinism(dir.path())));
    results.push(("verify command", verify_command()));

    let mut failures = 0;
    for (i, (name, o)) in results.iter().enumerate() {
        println!(
            "criterion {} {:<22} {}  {}",
            i + 1,
            name,
            if o.passed { "PASS" } else { "FAIL" },
            o.detail
        );
        failures += usize::from(!o.passed);
    }
    println!("{}/{} criteria passed", results.len() - failures, results.len());
    if failures > 0 {
        std::process::exit(1);
    }
}
