use std::fs;
use std::path::Path;
use std::process::ExitCode;

use anyhow::{bail, Context, Result};
use signseq::data::{load_dataset, split_train_val, synth_generate, write_dataset, SynthConfig};
use signseq::eval::{benchmark_fps, evaluate_parallel, render_bench, render_report, BenchResult, Format};
use signseq::models::{build, model_suite, Arch, Model, ModelConfig};
use signseq::nn::{layer_suite, SuiteRow};
use signseq::training::{fit_with, load_checkpoint, save_checkpoint, TrainConfig};

use crate::settings::{threads, RunSettings};
use crate::{Command, Scope};

pub const LAYER_TOLERANCE: f64 = 1e-4;
pub const MODEL_TOLERANCE: f64 = 1e-3;

pub fn run(cmd: Command) -> Result<ExitCode> {
    match cmd {
        Command::Gen {
            classes,
            samples,
            frames,
            features,
            seed,
            noise,
            out,
        } => {
            let cfg = SynthConfig {
                num_classes: classes,
                samples_per_class: samples,
                frames,
                features,
                seed,
                noise_sigma: noise,
                ..SynthConfig::default()
            };
            let ds = synth_generate(&cfg)?;
            let manifest = write_dataset(&ds, &out).with_context(|| format!("writing dataset to {}", out.display()))?;
            println!(
                "wrote {} sequences ({} classes x {} samples, {} frames x {} features) to {}",
                ds.len(),
                classes,
                samples,
                frames,
                features,
                manifest.display()
            );
        }
        Command::Train {
            arch,
            data,
            config,
            out,
            seed,
            epochs,
            batch_size,
            lr_start,
            lr_min,
            val_fraction,
            seq_len,
            init,
            overrides,
            quiet,
        } => {
            let mut flags: Vec<(&str, String)> = Vec::new();
            let mut flag = |k: &'static str, v: Option<String>| {
                if let Some(v) = v {
                    flags.push((k, v));
                }
            };
            flag("seed", seed.map(|v| v.to_string()));
            flag("epochs", epochs.map(|v| v.to_string()));
            flag("batch_size", batch_size.map(|v| v.to_string()));
            flag("lr_start", lr_start.map(|v| v.to_string()));
            flag("lr_min", lr_min.map(|v| v.to_string()));
            flag("val_fraction", val_fraction.map(|v| v.to_string()));
            flag("seq_len", seq_len.map(|v| v.to_string()));
            train(arch.into(), &data, config.as_deref(), &out, &flags, &overrides, init.as_deref(), quiet)?;
        }
        Command::Eval {
            checkpoint,
            data,
            format,
            out,
            batch_size,
        } => {
            let threads = threads()?;
            let ckpt = load_checkpoint(&checkpoint)?;
            let ds = load_dataset(&data)?;
            if ckpt.class_names != ds.class_names {
                bail!(
                    "class table mismatch: checkpoint has {} classes ({}), dataset has {} ({})",
                    ckpt.class_names.len(),
                    preview(&ckpt.class_names),
                    ds.class_names.len(),
                    preview(&ds.class_names)
                );
            }
            let report = evaluate_parallel(&ckpt.model, &ds, batch_size, threads)?;
            emit(&render_report(&report, format.into())?, out.as_deref())?;
        }
        Command::Bench {
            checkpoint,
            arch,
            seq_len,
            features,
            classes,
            warmup,
            repeats,
            seed,
            out,
        } => {
            if checkpoint.is_empty() && arch.is_empty() {
                bail!("give at least one --checkpoint or --arch");
            }
            let mut results: Vec<BenchResult> = Vec::new();
            for path in &checkpoint {
                let ckpt = load_checkpoint(path)?;
                let mut r = benchmark_fps(&ckpt.model, warmup, repeats)?;
                r.model = format!("{} ({})", r.model, path.display());
                results.push(r);
            }
            for a in arch {
                let arch: Arch = a.into();
                let mut cfg = ModelConfig::new(arch, features, classes);
                if let Some(n) = seq_len {
                    cfg.seq_len = n;
                }
                let model: Model<f32> = build(&cfg, seed)?;
                results.push(benchmark_fps(&model, warmup, repeats)?);
            }
            print!("{}", render_bench(&results, Format::Text)?);
            if let Some(path) = out {
                write_file(&path, &render_bench(&results, Format::Json)?)?;
            }
        }
        Command::Gradcheck {
            scope,
            epsilon,
            inject_broken,
        } => return gradcheck(scope, epsilon, inject_broken),
    }
    Ok(ExitCode::SUCCESS)
}

fn preview(names: &[String]) -> String {
    let head: Vec<&str> = names.iter().take(3).map(String::as_str).collect();
    if names.len() > 3 {
        format!("{}, ...", head.join(", "))
    } else {
        head.join(", ")
    }
}

fn write_file(path: &Path, text: &str) -> Result<()> {
    if let Some(dir) = path.parent().filter(|d| !d.as_os_str().is_empty()) {
        fs::create_dir_all(dir).with_context(|| format!("creating {}", dir.display()))?;
    }
    fs::write(path, text).with_context(|| format!("writing {}", path.display()))
}

fn emit(text: &str, out: Option<&Path>) -> Result<()> {
    match out {
        Some(path) => write_file(path, text),
        None => {
            print!("{text}");
            Ok(())
        }
    }
}

#[allow(clippy::too_many_arguments)]
fn train(
    arch: Arch,
    data: &Path,
    config: Option<&Path>,
    out: &Path,
    flags: &[(&str, String)],
    overrides: &[String],
    init: Option<&Path>,
    quiet: bool,
) -> Result<()> {
    let ds = load_dataset(data).with_context(|| format!("loading {}", data.display()))?;
    let features = ds.features().context("dataset is empty")?;
    let start = match init {
        Some(path) => {
            let ckpt = load_checkpoint(path)?;
            if ckpt.model.config().arch != arch {
                bail!("--init checkpoint is a {} model, not {arch}", ckpt.model.config().arch);
            }
            Some(ckpt.model)
        }
        None => None,
    };
    let base_model = match &start {
        Some(m) => m.config().clone(),
        None => ModelConfig::new(arch, features, ds.num_classes()),
    };
    let mut s = RunSettings::new(base_model, TrainConfig::for_arch(arch));
    if let Some(path) = config {
        s.apply_file(path)?;
    }
    for pair in overrides {
        s.apply_pair(pair)?;
    }
    for (k, v) in flags {
        s.apply(k, v)?;
    }
    if arch == Arch::Lstm && start.is_none() && !s.is_explicit("seq_len") {
        s.model.seq_len = ds.max_frames();
    }
    s.model.num_classes = ds.num_classes();
    if s.model.features != features {
        bail!("dataset has {features} features per frame, model expects {}", s.model.features);
    }
    s.validate()?;

    fs::create_dir_all(out).with_context(|| format!("creating {}", out.display()))?;
    let best_path = out.join("best.ckpt");
    if !s.is_explicit("checkpoint_path") {
        s.train.checkpoint_path = Some(best_path.clone());
    }
    if !s.is_explicit("log_path") {
        s.train.log_path = Some(out.join("train_log.csv"));
    }
    write_file(&out.join("config.txt"), &s.render())?;

    let model: Model<f32> = match start {
        Some(m) if m.config().num_classes == s.model.num_classes && *m.config() == s.model => m,
        Some(m) => {
            let m = m.reinit_head(s.model.num_classes, s.train.seed)?;
            if *m.config() != s.model {
                bail!("--init checkpoint architecture cannot be changed by settings other than the class count");
            }
            m
        }
        None => build(&s.model, s.train.seed)?,
    };
    let (train_ds, val_ds) = split_train_val(&ds, s.val_fraction, s.train.seed)?;
    if !quiet {
        eprintln!(
            "training {arch}: {} parameters, {} train / {} val samples, {} epochs",
            model.param_count(),
            train_ds.len(),
            val_ds.len(),
            s.train.epochs
        );
    }
    let outcome = fit_with(model, &train_ds, &val_ds, &s.train, &mut |r| {
        if !quiet {
            eprintln!(
                "epoch {:>4}  loss {:.4}  acc {:.4}  val_loss {:.4}  val_acc {:.4}  lr {:.3e}",
                r.epoch, r.train_loss, r.train_acc, r.val_loss, r.val_acc, r.lr
            );
        }
    })?;
    save_checkpoint(&outcome.best, &ds.class_names, &best_path)?;
    let final_path = out.join("final.ckpt");
    save_checkpoint(&outcome.last, &ds.class_names, &final_path)?;
    let best_acc = outcome.history[outcome.best_epoch - 1].val_acc;
    println!(
        "best val_acc {best_acc:.4} at epoch {} of {} ({:?}); wrote {} and {}",
        outcome.best_epoch,
        outcome.history.len(),
        outcome.stop_reason,
        best_path.display(),
        final_path.display()
    );
    Ok(())
}

fn gradcheck(scope: Scope, epsilon: f64, inject_broken: bool) -> Result<ExitCode> {
    let mut rows: Vec<(SuiteRow, f64)> = Vec::new();
    if scope != Scope::Models {
        rows.extend(layer_suite(epsilon)?.into_iter().map(|r| (r, LAYER_TOLERANCE)));
        if inject_broken {
            rows.push((broken_row(epsilon)?, LAYER_TOLERANCE));
        }
    }
    if scope != Scope::Layers {
        rows.extend(model_suite(epsilon)?.into_iter().map(|r| (r, MODEL_TOLERANCE)));
    }
    let width = rows.iter().map(|(r, _)| r.op.len()).max().unwrap_or(2).max(2);
    println!("{:<width$}  {:>12}  {:>9}  {:>8}  result", "op", "max_rel_err", "tolerance", "compared");
    let mut failed = 0;
    for (row, tol) in &rows {
        let ok = row.report.max_rel_error < *tol;
        failed += usize::from(!ok);
        println!(
            "{:<width$}  {:>12.3e}  {:>9.0e}  {:>8}  {}",
            row.op,
            row.report.max_rel_error,
            tol,
            row.report.compared,
            if ok { "PASS" } else { "FAIL" }
        );
    }
    println!("{} of {} checks passed (epsilon {epsilon:e})", rows.len() - failed, rows.len());
    Ok(if failed == 0 { ExitCode::SUCCESS } else { ExitCode::FAILURE })
}

/// `x * x` with one factor detached from the tape, so its gradient is half
/// the true one.
fn broken_row(epsilon: f64) -> Result<SuiteRow> {
    use signseq::autograd::{Graph, Var};
    use signseq::nn::gradient_check;
    use signseq::Tensor;

    let op = |g: &mut Graph<f64>, v: &[Var]| -> signseq::Result<Var> {
        let detached = g.constant(g.value(v[0]).clone());
        g.mul(v[0], detached)
    };
    let input = Tensor::from_f64(&[2, 3], &[0.3, -0.7, 1.1, 0.05, -1.4, 0.9])?;
    Ok(SuiteRow {
        op: "broken/detached-square".into(),
        report: gradient_check(op, &[input], epsilon)?,
    })
}
