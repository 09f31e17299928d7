use std::fmt::Write as _;
use std::path::{Path, PathBuf};

use anyhow::{anyhow, Context};
use chiralnet::geom::{enumerate_internal_coords, random_rigid, transform_conformer, Transform};
use chiralnet::model::Model;
use chiralnet::molio::{parse_dataset_json, parse_sdf, write_dataset_json, Conformer};
use chiralnet::synthgen::{build_dataset, SplitManifest, Task};
use chiralnet::training::{check_splits, evaluate_metrics, fit, head_for, EpochLog, TrainError};
use chiralnet::verify::{run_suite, CheckKind};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::Serialize;
use serde_json::{json, Value};

use crate::config::RunConfig;
use crate::{EvalArgs, Failure, GenerateArgs, InspectArgs, TrainArgs, TransformArgs, VerifyArgs};

type Outcome = Result<(), Failure>;

fn parse_task(s: &str) -> Result<Task, Failure> {
    Task::parse(s).ok_or_else(|| {
        Failure::usage(anyhow!("unknown task `{s}` (expected contrastive, rs, classify2 or rank_regress)"))
    })
}

fn task_name(task: Task) -> String {
    serde_json::to_value(task).ok().and_then(|v| v.as_str().map(String::from)).unwrap_or_default()
}

/// The resolved config as recorded in artifacts. Output locations are left
/// out so reruns into another directory write identical files.
fn provenance(command: &str, config: &RunConfig, seed: u64) -> Value {
    let mut recorded = config.clone();
    recorded.paths.out = None;
    json!({
        "command": command,
        "version": env!("CARGO_PKG_VERSION"),
        "seed": seed,
        "config": recorded,
    })
}

/// Prints the config and reports whether the command should stop there.
fn printed(print: bool, config: &RunConfig) -> Result<bool, Failure> {
    if print {
        println!("{}", serde_json::to_string_pretty(config).map_err(Failure::failed)?);
    }
    Ok(print)
}

fn meta_path(data: &Path) -> PathBuf {
    let mut s = data.as_os_str().to_owned();
    s.push(".meta.json");
    PathBuf::from(s)
}

fn read_text(path: &Path) -> Result<String, Failure> {
    std::fs::read_to_string(path).with_context(|| format!("reading {}", path.display())).map_err(Failure::usage)
}

fn write_text(path: &Path, text: &str) -> Result<(), Failure> {
    if let Some(dir) = path.parent().filter(|d| !d.as_os_str().is_empty()) {
        std::fs::create_dir_all(dir).with_context(|| format!("creating {}", dir.display())).map_err(Failure::failed)?;
    }
    std::fs::write(path, text).with_context(|| format!("writing {}", path.display())).map_err(Failure::failed)
}

fn to_json<T: Serialize>(value: &T) -> Result<String, Failure> {
    let mut s = serde_json::to_string_pretty(value).map_err(Failure::failed)?;
    s.push('\n');
    Ok(s)
}

fn read_dataset(path: &Path) -> Result<Vec<Conformer>, Failure> {
    let text = read_text(path)?;
    let is_sdf = path.extension().is_some_and(|e| e.eq_ignore_ascii_case("sdf") || e.eq_ignore_ascii_case("sd"));
    if is_sdf {
        parse_sdf(&text)
            .into_iter()
            .enumerate()
            .map(|(k, r)| r.map_err(|e| Failure::usage(anyhow!("{}: record {k}: {e}", path.display()))))
            .collect()
    } else {
        parse_dataset_json(&text).map_err(|e| Failure::usage(anyhow!("{}: {e}", path.display())))
    }
}

/// Writes a dataset and its `<path>.meta.json` sidecar.
fn write_dataset(path: &Path, records: &[Conformer], meta: &Value) -> Result<(), Failure> {
    write_text(path, &write_dataset_json(records))?;
    write_text(&meta_path(path), &to_json(meta)?)
}

/// The split manifest from `paths.splits`, else from the dataset's sidecar.
/// A splits file may hold a bare manifest or an object with a `splits` key.
fn read_splits(config: &RunConfig, data: &Path) -> Result<Option<SplitManifest>, Failure> {
    let (path, explicit) = match &config.paths.splits {
        Some(p) => (p.clone(), true),
        None => (meta_path(data), false),
    };
    if !explicit && !path.exists() {
        return Ok(None);
    }
    let value: Value = serde_json::from_str(&read_text(&path)?)
        .map_err(|e| Failure::usage(anyhow!("{}: {e}", path.display())))?;
    let inner = value.get("splits").cloned().unwrap_or(value);
    if inner.is_null() {
        return Ok(None);
    }
    serde_json::from_value(inner).map(Some).map_err(|e| Failure::usage(anyhow!("{}: splits: {e}", path.display())))
}

pub fn generate(mut config: RunConfig, a: GenerateArgs, print: bool) -> Outcome {
    if let Some(t) = &a.task {
        config.train.task = parse_task(t)?;
    }
    config.generate.n_graphs = a.n_graphs.unwrap_or(config.generate.n_graphs);
    config.generate.conformers_per_stereoisomer = a.conformers.unwrap_or(config.generate.conformers_per_stereoisomer);
    config.generate.seed = a.seed.unwrap_or(config.generate.seed);
    config.paths.out = a.out.or(config.paths.out);
    let config = config.resolve();
    if printed(print, &config)? {
        return Ok(());
    }
    let out = config.require(&config.paths.out, "out", "--out").map_err(Failure::usage)?;
    let task = config.train.task;
    let (records, splits) = build_dataset(&config.generate, task).map_err(Failure::usage)?;
    let mut meta = provenance("generate", &config, config.generate.seed);
    meta["task"] = json!(task_name(task));
    meta["splits"] = serde_json::to_value(&splits).map_err(Failure::failed)?;
    write_dataset(out, &records, &meta)?;
    println!(
        "wrote {} conformers of {} graphs to {} (splits {}/{}/{})",
        records.len(),
        config.generate.n_graphs,
        out.display(),
        splits.train.len(),
        splits.val.len(),
        splits.test.len()
    );
    Ok(())
}

fn load_model(path: &Path) -> Result<(Model, Value), Failure> {
    Model::from_checkpoint(&read_text(path)?).map_err(|e| Failure::usage(anyhow!("{}: {e}", path.display())))
}

pub fn verify(mut config: RunConfig, a: VerifyArgs, print: bool) -> Outcome {
    config.paths.data = a.data.or(config.paths.data);
    config.paths.checkpoint = a.checkpoint.or(config.paths.checkpoint);
    config.paths.out = a.out.or(config.paths.out);
    config.verify.max_conformers = a.max_conformers.unwrap_or(config.verify.max_conformers);
    config.verify.seed = a.seed.unwrap_or(config.verify.seed);
    if let Some(kinds) = &a.kinds {
        config.verify.kinds = kinds
            .iter()
            .map(|k| CheckKind::parse(k.trim()).ok_or_else(|| Failure::usage(anyhow!("unknown check kind `{k}`"))))
            .collect::<Result<_, _>>()?;
    }
    let config = config.resolve();
    if printed(print, &config)? {
        return Ok(());
    }
    let data = config.require(&config.paths.data, "data", "--data").map_err(Failure::usage)?;
    let model = match &config.paths.checkpoint {
        Some(p) => load_model(p)?.0,
        None => Model::new(config.model.clone()).map_err(Failure::usage)?,
    };
    let records = read_dataset(data)?;
    let mut report = run_suite(&records, &model, &config.verify).map_err(Failure::usage)?;
    let run = provenance("verify", &config, config.verify.seed);
    report.header.provenance = run.clone();
    let summary = json!({ "run": run, "summary": &report.summary });
    if let Some(out) = &config.paths.out {
        let mut buf = Vec::new();
        report.write_jsonl(&mut buf).map_err(Failure::failed)?;
        write_text(out, &String::from_utf8(buf).map_err(Failure::failed)?)?;
        let mut s = out.as_os_str().to_owned();
        s.push(".summary.json");
        write_text(Path::new(&s), &to_json(&summary)?)?;
    }
    println!("{}", to_json(&report.summary)?.trim_end());
    if report.summary.passed {
        Ok(())
    } else {
        let failed: Vec<&str> = report.summary.kinds.iter().filter(|k| !k.ok).map(|k| k.kind.as_str()).collect();
        Err(Failure::failed(anyhow!("checks failed: {}", failed.join(", "))))
    }
}

fn train_failure(e: TrainError) -> Failure {
    match e {
        TrainError::NonFiniteGradient(_) | TrainError::Autodiff(_) => Failure::failed(e),
        _ => Failure::usage(e),
    }
}

fn select(records: &[Conformer], indices: &[usize]) -> Vec<Conformer> {
    indices.iter().map(|&k| records[k].clone()).collect()
}

pub fn train(mut config: RunConfig, a: TrainArgs, print: bool) -> Outcome {
    config.paths.data = a.data.or(config.paths.data);
    config.paths.splits = a.splits.or(config.paths.splits);
    config.paths.out = a.out.or(config.paths.out);
    if let Some(t) = &a.task {
        config.train.task = parse_task(t)?;
    }
    config.train.epochs = a.epochs.or(config.train.epochs);
    config.train.lr = a.lr.or(config.train.lr);
    config.train.batch_size = a.batch_size.or(config.train.batch_size);
    config.train.seed = a.seed.unwrap_or(config.train.seed);
    config.model.head = head_for(config.train.task);
    let config = config.resolve();
    if printed(print, &config)? {
        return Ok(());
    }
    let data = config.require(&config.paths.data, "data", "--data").map_err(Failure::usage)?;
    let out = config.require(&config.paths.out, "out", "--out").map_err(Failure::usage)?;
    let records = read_dataset(data)?;
    let splits = read_splits(&config, data)?
        .ok_or_else(|| Failure::usage(anyhow!("no split manifest: set paths.splits or generate {}", meta_path(data).display())))?;
    let [_, _, test] = check_splits(&records, &splits).map_err(train_failure)?;
    let model = Model::new(config.model.clone()).map_err(Failure::usage)?;
    let task = config.train.task;
    let outcome = fit(model, &records, &splits, &config.train).map_err(train_failure)?;

    let run = provenance("train", &config, config.train.seed);
    let extra = json!({
        "run": run,
        "task": task_name(task),
        "best_epoch": outcome.best_epoch,
        "best_val_metric": outcome.best_metric,
        "score_scale": outcome.score_scale,
    });
    let checkpoint = outcome.best.to_checkpoint(extra).map_err(Failure::failed)?;
    write_text(&out.join("checkpoint.json"), &checkpoint)?;

    let mut log = serde_json::to_string(&json!({ "header": run })).map_err(Failure::failed)?;
    log.push('\n');
    for e in &outcome.log {
        log.push_str(&serde_json::to_string(e).map_err(Failure::failed)?);
        log.push('\n');
    }
    write_text(&out.join("log.jsonl"), &log)?;

    let test_metrics = if test.is_empty() {
        None
    } else {
        Some(evaluate_metrics(&outcome.best, &select(&records, &test), task, &config.eval).map_err(train_failure)?)
    };
    let metrics = json!({
        "run": run,
        "task": task_name(task),
        "best_epoch": outcome.best_epoch,
        "best_val_metric": outcome.best_metric,
        "final_train_loss": outcome.log.last().map(|e: &EpochLog| e.train_loss),
        "test": test_metrics,
    });
    write_text(&out.join("metrics.json"), &to_json(&metrics)?)?;
    match &test_metrics {
        Some(m) => println!("best epoch {}, test {} {:.4}", outcome.best_epoch, task_name(task), m.headline()),
        None => println!("best epoch {}, no test split", outcome.best_epoch),
    }
    Ok(())
}

pub fn eval(mut config: RunConfig, a: EvalArgs, print: bool) -> Outcome {
    config.paths.data = a.data.or(config.paths.data);
    config.paths.splits = a.splits.or(config.paths.splits);
    config.paths.checkpoint = a.checkpoint.or(config.paths.checkpoint);
    config.paths.out = a.out.or(config.paths.out);
    let config = config.resolve();
    if printed(print, &config)? {
        return Ok(());
    }
    let data = config.require(&config.paths.data, "data", "--data").map_err(Failure::usage)?;
    let ckpt = config.require(&config.paths.checkpoint, "checkpoint", "--checkpoint").map_err(Failure::usage)?;
    let (model, extra) = load_model(ckpt)?;
    let task = match (a.task.as_deref(), extra.get("task").and_then(Value::as_str)) {
        (Some(t), _) | (None, Some(t)) => parse_task(t)?,
        (None, None) => config.train.task,
    };
    if model.config.head != head_for(task) {
        return Err(Failure::usage(anyhow!(
            "task {} needs the {:?} head; the checkpoint has {:?}",
            task_name(task),
            head_for(task),
            model.config.head
        )));
    }
    let records = read_dataset(data)?;
    let splits = read_splits(&config, data)?;
    let split = a.split.clone().unwrap_or_else(|| if splits.is_some() { "test".into() } else { "all".into() });
    let chosen = match (split.as_str(), &splits) {
        ("all", _) => records,
        (name @ ("train" | "val" | "test"), Some(m)) => {
            let parts = check_splits(&records, m).map_err(train_failure)?;
            let idx = match name {
                "train" => &parts[0],
                "val" => &parts[1],
                _ => &parts[2],
            };
            select(&records, idx)
        }
        ("train" | "val" | "test", None) => {
            return Err(Failure::usage(anyhow!("split `{split}` requested but no split manifest was found")))
        }
        _ => return Err(Failure::usage(anyhow!("unknown split `{split}` (expected train, val, test or all)"))),
    };
    let metrics = evaluate_metrics(&model, &chosen, task, &config.eval).map_err(train_failure)?;
    let report = json!({
        "run": provenance("eval", &config, config.eval.triplet_seed),
        "checkpoint": extra,
        "task": task_name(task),
        "split": split,
        "metrics": metrics,
    });
    let text = to_json(&report)?;
    if let Some(out) = &config.paths.out {
        write_text(out, &text)?;
    }
    println!("{}", to_json(&metrics)?.trim_end());
    Ok(())
}

fn parse_rotation(s: &str) -> Result<(usize, usize, f64), Failure> {
    let bad = || Failure::usage(anyhow!("--rotate-bond expects `x,y,R` with atom indices and an angle in radians, got `{s}`"));
    let parts: Vec<&str> = s.split(',').map(str::trim).collect();
    if parts.len() != 3 {
        return Err(bad());
    }
    let x = parts[0].parse().map_err(|_| bad())?;
    let y = parts[1].parse().map_err(|_| bad())?;
    let r: f64 = parts[2].parse().map_err(|_| bad())?;
    if !r.is_finite() {
        return Err(bad());
    }
    Ok((x, y, r))
}

pub fn transform(mut config: RunConfig, a: TransformArgs, print: bool) -> Outcome {
    config.paths.data = a.data.or(config.paths.data);
    config.paths.out = a.out.or(config.paths.out);
    let config = config.resolve();
    if printed(print, &config)? {
        return Ok(());
    }
    let rotation = a.rotate_bond.as_deref().map(parse_rotation).transpose()?;
    if !a.reflect && rotation.is_none() && a.rigid_random.is_none() {
        return Err(Failure::usage(anyhow!("nothing to do: pass --reflect, --rotate-bond or --rigid-random")));
    }
    let data = config.require(&config.paths.data, "data", "--data").map_err(Failure::usage)?;
    let out = config.require(&config.paths.out, "out", "--out").map_err(Failure::usage)?;
    let records = read_dataset(data)?;
    let mut rng = a.rigid_random.map(ChaCha8Rng::seed_from_u64);
    let mut moved = Vec::with_capacity(records.len());
    for (k, c) in records.iter().enumerate() {
        let mut steps = Vec::new();
        if a.reflect {
            steps.push(Transform::Reflect { normal: [0.0, 0.0, 1.0] });
        }
        if let Some((x, y, angle)) = rotation {
            steps.push(Transform::RotateBond { x, y, angle });
        }
        if let Some(r) = rng.as_mut() {
            steps.push(random_rigid(r));
        }
        let mut cur = c.clone();
        for t in &steps {
            cur = transform_conformer(&cur, t)
                .map_err(|e| Failure::usage(anyhow!("record {k} (`{}`): {e}", c.stereoisomer_id)))?;
        }
        moved.push(cur);
    }
    let mut meta = provenance("transform", &config, a.rigid_random.unwrap_or(0));
    meta["transform"] = json!({
        "reflect": a.reflect,
        "rotate_bond": rotation.map(|(x, y, r)| json!({ "x": x, "y": y, "angle": r })),
        "rigid_random": a.rigid_random,
    });
    write_dataset(out, &moved, &meta)?;
    println!("wrote {} conformers to {}", moved.len(), out.display());
    Ok(())
}

fn describe(k: usize, c: &Conformer) -> String {
    let mut s = String::new();
    let _ = writeln!(
        s,
        "conformer {k}: graph {} stereoisomer {} ({} atoms, {} bonds)",
        c.graph_id,
        c.stereoisomer_id,
        c.num_atoms(),
        c.bonds.len()
    );
    let ic = match enumerate_internal_coords(c) {
        Ok(ic) => ic,
        Err(e) => {
            let _ = writeln!(s, "  no internal coordinates: {e}");
            return s;
        }
    };
    let range = |v: &mut dyn Iterator<Item = f64>| {
        let v: Vec<f64> = v.collect();
        let lo = v.iter().copied().fold(f64::INFINITY, f64::min);
        let hi = v.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        (v.len(), lo, hi)
    };
    let (n, lo, hi) = range(&mut ic.distances.iter().map(|d| d.2));
    let _ = writeln!(s, "  bond lengths: {n}, {lo:.3}..{hi:.3} Å");
    let (n, lo, hi) = range(&mut ic.angles.iter().map(|a| a.3.to_degrees()));
    if n > 0 {
        let _ = writeln!(s, "  bond angles:  {n}, {lo:.1}..{hi:.1}°");
    } else {
        let _ = writeln!(s, "  bond angles:  0");
    }
    let torsions: usize = ic.torsion_groups.iter().map(|g| g.torsions.len()).sum();
    let _ = writeln!(s, "  torsions:     {torsions} in {} coupled groups", ic.torsion_groups.len());
    if !ic.torsion_groups.is_empty() {
        let _ = writeln!(s, "  {:<8} {:<5} {}", "bond", "ring", "torsions i-x-y-j: ψ (deg)");
        for g in &ic.torsion_groups {
            let list: Vec<String> =
                g.torsions.iter().map(|(i, j, psi)| format!("{i}-{}-{}-{j}: {:.1}", g.x, g.y, psi.to_degrees())).collect();
            let ring = if c.bonds[g.bond].in_ring { "yes" } else { "no" };
            let _ = writeln!(s, "  {:<8} {:<5} {}", format!("{}-{}", g.x, g.y), ring, list.join(", "));
        }
    }
    s
}

pub fn inspect(mut config: RunConfig, a: InspectArgs, print: bool) -> Outcome {
    config.paths.data = a.data.or(config.paths.data);
    let config = config.resolve();
    if printed(print, &config)? {
        return Ok(());
    }
    let data = config.require(&config.paths.data, "data", "--data").map_err(Failure::usage)?;
    let records = read_dataset(data)?;
    let n = a.limit.unwrap_or(records.len()).min(records.len());
    for (k, c) in records.iter().take(n).enumerate() {
        print!("{}", describe(k, c));
    }
    Ok(())
}
