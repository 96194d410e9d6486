use std::fmt::Write as _;
use std::fs;
use std::io::{self, Write as _};
use std::path::{Path, PathBuf};

use biasguard::data::{
    load_features_with_manifest, make_splits, save_features, synth_gzsl, FeatureFormat,
    GzslDataset, SplitWarning,
};
use biasguard::pipeline::{
    self, classify_batch_with, evaluate, expand, lambda_grid, load_checkpoint, rows_to_csv,
    save_checkpoint, AblationAxis, Branches, Checkpoint, MetricMode,
};
use biasguard::{Error, FusionMode, Tensor};

use crate::failure::{usage, Failure};
use crate::manifest::{manifest_path, now, RunManifest};
use crate::settings::{resolve_train, Entries, SynthSettings};
use crate::{AblateArgs, ClassifyArgs, DataArgs, EvalArgs, InspectArgs, SynthArgs, TrainArgs, TrainSettingArgs};

type Outcome = Result<(), Failure>;

const THREADS_VAR: &str = "BIASGUARD_THREADS";

fn load_data(a: &DataArgs) -> Result<GzslDataset, Failure> {
    let format = FeatureFormat::from_path(&a.data)?;
    Ok(load_features_with_manifest(&a.data, format, a.class_manifest.as_deref())?)
}

fn data_inputs(a: &DataArgs) -> Vec<(&'static str, PathBuf)> {
    let mut out = vec![("data", a.data.clone())];
    if let Some(m) = &a.class_manifest {
        out.push(("class_manifest", m.clone()));
    }
    out
}

/// Writes to standard output; a closed reader is not an error.
fn emit(text: &str) -> Outcome {
    match io::stdout().lock().write_all(text.as_bytes()) {
        Err(e) if e.kind() == io::ErrorKind::BrokenPipe => Ok(()),
        r => Ok(r?),
    }
}

fn finish(m: RunManifest) -> Outcome {
    m.write()?;
    Ok(())
}

pub fn synth(a: SynthArgs, argv: Vec<String>) -> Outcome {
    let started = now();
    // Fail on a bad extension before doing any work.
    let format = FeatureFormat::from_path(&a.out).map_err(usage_format)?;
    let mut e = Entries::from_file(a.config.as_deref())?;
    e.push("classes", a.classes);
    e.push("unseen", a.unseen);
    e.push("per_class", a.per_class);
    e.push("d_visual", a.dim);
    e.push("k_semantic", a.semantic_dim);
    e.push("bias", a.bias);
    e.push("cluster_scale", a.cluster_scale);
    e.push("anisotropy", a.anisotropy);
    e.push("test_fraction", a.test_fraction);
    e.push("seed", a.seed);
    let s = SynthSettings::resolve(&e)?;

    let raw = synth_gzsl(&s.synth)?;
    let (ds, warnings) = make_splits(&raw, s.test_fraction, s.synth.seed)?;
    for w in warnings {
        match w {
            SplitWarning::EmptyTrainSplit => eprintln!("warning: no record was tagged train"),
        }
    }
    save_features(&ds, &a.out, format)?;
    println!(
        "wrote {} records ({} seen, {} unseen classes; d={}, k={}) to {}",
        ds.len(),
        ds.seen_classes().len(),
        ds.unseen_classes().len(),
        ds.d_visual(),
        ds.k_semantic(),
        a.out.display()
    );
    finish(RunManifest {
        command: "synth",
        argv,
        seed: Some(s.synth.seed),
        inputs: a.config.map(|c| vec![("config", c)]).unwrap_or_default(),
        output: a.out,
        config: s.to_text(),
        started,
    })
}

/// An output path with the wrong extension is an argument error, not a data error.
fn usage_format(e: Error) -> Failure {
    match e {
        Error::Format(m) => Failure::Usage(m),
        other => Failure::Engine(other),
    }
}

fn train_entries(s: &TrainSettingArgs) -> Result<Entries, Failure> {
    let mut e = Entries::from_file(s.config.as_deref())?;
    e.push("epochs", s.epochs);
    e.push("seed", s.seed);
    e.push("batch_size", s.batch_size);
    e.push("lr", s.lr);
    e.push("metric", s.metric.as_ref());
    e.push("branches", s.branches.as_ref());
    e.push("fusion", s.fusion.as_ref());
    e.push("lambda_vae", s.lambda_vae);
    e.push("lambda_mse", s.lambda_mse);
    e.push("lambda_m", s.lambda_m);
    e.push("ridge", s.ridge);
    e.push("d_latent", s.latent);
    e.push("k_proj", s.proj);
    if s.exact_metric {
        e.push("differentiate_metric", Some(true));
    }
    e.extend_assignments(&s.set)?;
    Ok(e)
}

fn settings_inputs(s: &TrainSettingArgs, mut inputs: Vec<(&'static str, PathBuf)>) -> Vec<(&'static str, PathBuf)> {
    if let Some(c) = &s.config {
        inputs.push(("config", c.clone()));
    }
    inputs
}

fn last_good_path(out: &Path) -> PathBuf {
    let mut s = out.as_os_str().to_owned();
    s.push(".last_good");
    PathBuf::from(s)
}

fn history_csv(ck: &Checkpoint) -> String {
    let mut out = String::from("epoch,l_wgan,l_vae,l_mse,l_m,total\n");
    for (i, l) in ck.history.iter().enumerate() {
        let _ = writeln!(
            out,
            "{},{},{},{},{},{}",
            i + 1,
            l.l_wgan,
            l.l_vae,
            l.l_mse,
            l.l_m,
            l.total
        );
    }
    out
}

pub fn train(a: TrainArgs, argv: Vec<String>) -> Outcome {
    let started = now();
    let entries = train_entries(&a.settings)?;
    let ds = load_data(&a.data)?;
    let cfg = resolve_train(&entries, ds.d_visual(), ds.k_semantic())?;
    let manifest = |output: PathBuf| RunManifest {
        command: "train",
        argv: argv.clone(),
        seed: Some(cfg.seed),
        inputs: settings_inputs(&a.settings, data_inputs(&a.data)),
        output,
        config: cfg.to_text(),
        started: started.clone(),
    };
    let ck = match pipeline::train(&cfg, &ds) {
        Ok(ck) => ck,
        Err(e) => {
            if let Error::TrainingAborted { last_good, .. } = &e {
                let path = last_good_path(&a.out);
                save_checkpoint(last_good, &path)?;
                manifest(path.clone()).write()?;
                eprintln!("last finite state saved to {}", path.display());
            }
            return Err(e.into());
        }
    };
    save_checkpoint(&ck, &a.out)?;
    manifest(a.out.clone()).write()?;
    if let Some(h) = &a.history {
        fs::write(h, history_csv(&ck))?;
        manifest(h.clone()).write()?;
    }
    let last = ck.history.last().map(|l| l.total).unwrap_or(f64::NAN);
    println!(
        "trained {} epochs (final loss {last:.4}) -> {}",
        ck.epoch,
        a.out.display()
    );
    Ok(())
}

pub fn eval(a: EvalArgs, argv: Vec<String>) -> Outcome {
    let started = now();
    let ds = load_data(&a.data)?;
    let ck = load_checkpoint(&a.checkpoint)?;
    let report = evaluate(&ds, &ck)?;
    let row = format!("U,S,H\n{:.4},{:.4},{:.4}\n", report.u, report.s, report.h);
    emit(&row)?;
    let mut inputs = data_inputs(&a.data);
    inputs.push(("checkpoint", a.checkpoint.clone()));
    let manifest = |output: PathBuf| RunManifest {
        command: "eval",
        argv: argv.clone(),
        seed: None,
        inputs: inputs.clone(),
        output,
        config: ck.config.to_text(),
        started: started.clone(),
    };
    if let Some(out) = &a.out {
        fs::write(out, &row)?;
        manifest(out.clone()).write()?;
    }
    if let Some(out) = &a.per_class {
        let mut table = String::from("class,partition,accuracy\n");
        for (c, acc) in &report.per_class {
            let part = if ds.is_seen(*c) { "seen" } else { "unseen" };
            let _ = writeln!(table, "{c},{part},{acc:.4}");
        }
        fs::write(out, table)?;
        manifest(out.clone()).write()?;
    }
    Ok(())
}

fn list<T>(flag: &str, text: &str, parse: impl Fn(&str) -> Option<T>) -> Result<Vec<T>, Failure> {
    text.split(',')
        .map(str::trim)
        .filter(|s| !s.is_empty())
        .map(|s| parse(s).ok_or_else(|| Failure::Usage(format!("--{flag}: cannot parse `{s}`"))))
        .collect()
}

fn lambda_triple(s: &str) -> Option<(f64, f64, f64)> {
    let v: Vec<f64> = s.split(':').map(|p| p.trim().parse().ok()).collect::<Option<_>>()?;
    match v[..] {
        [a, b, c] => Some((a, b, c)),
        _ => None,
    }
}

fn dims_pair(s: &str) -> Option<(usize, usize)> {
    let (p, l) = s.split_once(['x', 'X'])?;
    Some((p.trim().parse().ok()?, l.trim().parse().ok()?))
}

fn axes(a: &AblateArgs) -> Result<(Vec<AblationAxis>, String), Failure> {
    let mut axes = Vec::new();
    let mut text = String::new();
    if let Some(v) = &a.metrics {
        axes.push(AblationAxis::Metric(list("metrics", v, MetricMode::parse)?));
        let _ = writeln!(text, "axis.metrics={v}");
    }
    if let Some(v) = &a.branch_set {
        axes.push(AblationAxis::Branches(list("branch-set", v, Branches::parse)?));
        let _ = writeln!(text, "axis.branches={v}");
    }
    if let Some(v) = &a.fusions {
        axes.push(AblationAxis::Fusion(list("fusions", v, FusionMode::parse)?));
        let _ = writeln!(text, "axis.fusions={v}");
    }
    if let Some(v) = &a.lambdas {
        let grid = if v.trim().eq_ignore_ascii_case("grid") {
            lambda_grid()
        } else {
            list("lambdas", v, lambda_triple)?
        };
        axes.push(AblationAxis::Lambda(grid));
        let _ = writeln!(text, "axis.lambdas={v}");
    }
    if let Some(v) = &a.dims {
        axes.push(AblationAxis::Dims(list("dims", v, dims_pair)?));
        let _ = writeln!(text, "axis.dims={v}");
    }
    Ok((axes, text))
}

fn threads() -> Result<usize, Failure> {
    match std::env::var(THREADS_VAR) {
        Err(_) => Ok(1),
        Ok(v) => match v.trim().parse::<usize>() {
            Ok(n) if n >= 1 => Ok(n),
            _ => Err(Failure::Usage(format!("{THREADS_VAR} must be a positive integer, got `{v}`"))),
        },
    }
}

pub fn ablate(a: AblateArgs, argv: Vec<String>) -> Outcome {
    let started = now();
    let entries = train_entries(&a.settings)?;
    let (axes, axes_text) = axes(&a)?;
    let threads = threads()?;
    let ds = load_data(&a.data)?;
    let base = resolve_train(&entries, ds.d_visual(), ds.k_semantic())?;
    let planned = expand(&base, &axes).map_err(usage)?;
    eprintln!("ablating {} configurations on {threads} thread(s)", planned.len());
    let rows = pipeline::ablate(&base, &axes, &ds, threads)?;
    let table = rows_to_csv(&rows);
    match &a.out {
        None => emit(&table)?,
        Some(out) => {
            fs::write(out, &table)?;
            println!("wrote {} rows to {}", rows.len(), out.display());
            finish(RunManifest {
                command: "ablate",
                argv,
                seed: Some(base.seed),
                inputs: settings_inputs(&a.settings, data_inputs(&a.data)),
                output: out.clone(),
                config: format!("{}{axes_text}threads={threads}\n", base.to_text()),
                started,
            })?;
        }
    }
    Ok(())
}

/// Numeric rows of a query file. Row numbers in errors are 1-based lines.
fn read_queries(path: &Path, width: usize) -> Result<Vec<Vec<f64>>, Failure> {
    let mut reader = csv::ReaderBuilder::new()
        .has_headers(false)
        .flexible(true)
        .trim(csv::Trim::All)
        .from_path(path)
        .map_err(|e| csv_failure(e, path))?;
    let mut rows = Vec::new();
    for (i, rec) in reader.records().enumerate() {
        let rec = rec.map_err(|e| csv_failure(e, path))?;
        let line = i + 1;
        let parsed: Result<Vec<f64>, _> = rec.iter().map(str::parse::<f64>).collect();
        let values = match parsed {
            Ok(v) => v,
            Err(_) if i == 0 => continue,
            Err(e) => {
                return Err(Error::Parse {
                    line,
                    detail: format!("non-numeric query value ({e})"),
                }
                .into())
            }
        };
        if values.len() != width {
            return Err(Error::RowDimension {
                row: line,
                expected: width,
                found: values.len(),
            }
            .into());
        }
        rows.push(values);
    }
    if rows.is_empty() {
        return Err(Error::Format(format!("`{}` holds no query rows", path.display())).into());
    }
    Ok(rows)
}

fn csv_failure(e: csv::Error, path: &Path) -> Failure {
    if e.is_io_error() {
        if let csv::ErrorKind::Io(io) = e.into_kind() {
            return io.into();
        }
        unreachable!("io errors carry an io kind");
    }
    Error::Format(format!("`{}`: {e}", path.display())).into()
}

pub fn classify(a: ClassifyArgs, argv: Vec<String>) -> Outcome {
    let started = now();
    let ck = load_checkpoint(&a.checkpoint)?;
    let ds = load_data(&a.data)?;
    let rows = read_queries(&a.query, ck.config.model.d_visual)?;
    let refs: Vec<&[f64]> = rows.iter().map(Vec::as_slice).collect();
    let predicted = classify_batch_with(
        &ck.params,
        &ck.metric,
        ck.config.branches,
        &Tensor::from_rows(&refs)?,
        &ds.class_semantics(),
    )?;
    let mut table = String::from("row,predicted\n");
    for (i, c) in predicted.iter().enumerate() {
        let _ = writeln!(table, "{},{c}", i + 1);
    }
    match &a.out {
        None => emit(&table)?,
        Some(out) => {
            fs::write(out, &table)?;
            println!("classified {} rows -> {}", predicted.len(), out.display());
            let mut inputs = data_inputs(&a.data);
            inputs.push(("checkpoint", a.checkpoint.clone()));
            inputs.push(("query", a.query.clone()));
            finish(RunManifest {
                command: "classify",
                argv,
                seed: None,
                inputs,
                output: out.clone(),
                config: ck.config.to_text(),
                started,
            })?;
        }
    }
    Ok(())
}

fn describe_dataset(out: &mut String, ds: &GzslDataset, kind: &str) {
    let _ = writeln!(out, "{kind} dataset");
    let _ = writeln!(out, "records={}", ds.len());
    let _ = writeln!(out, "train_records={}", ds.train_records().count());
    let _ = writeln!(out, "test_records={}", ds.test_records().count());
    let _ = writeln!(out, "seen_classes={}", ds.seen_classes().len());
    let _ = writeln!(out, "unseen_classes={}", ds.unseen_classes().len());
    let _ = writeln!(out, "d_visual={}", ds.d_visual());
    let _ = writeln!(out, "k_semantic={}", ds.k_semantic());
}

pub fn inspect(a: InspectArgs) -> Outcome {
    let bytes = fs::read(&a.path)?;
    let mut out = String::new();
    match bytes.get(..4) {
        Some(b"BGCP") => {
            let ck = Checkpoint::from_bytes(&bytes)?;
            let _ = writeln!(out, "checkpoint");
            let _ = writeln!(out, "epochs_trained={}", ck.epoch);
            if let Some(l) = ck.history.last() {
                let _ = writeln!(out, "final_loss={}", l.total);
            }
            let _ = writeln!(out, "metric_source_batch={}", ck.metric.source_batch_size());
            for line in ck.config.to_text().lines() {
                let _ = writeln!(out, "config.{line}");
            }
        }
        Some(b"GZSL") => describe_dataset(&mut out, &biasguard::data::dataset_from_bin(&bytes)?, "BIN"),
        _ => {
            let text = String::from_utf8(bytes)
                .map_err(|_| Error::Format(format!("`{}` is neither a known binary nor text", a.path.display())))?;
            match biasguard::data::parse_csv(&text, None) {
                Ok(ds) => describe_dataset(&mut out, &ds, "CSV"),
                Err(_) => {
                    let _ = writeln!(out, "text file");
                    let _ = writeln!(out, "lines={}", text.lines().count());
                    if let Some(h) = text.lines().next() {
                        let _ = writeln!(out, "first_line={h}");
                    }
                }
            }
        }
    }
    let mp = manifest_path(&a.path);
    match fs::read_to_string(&mp) {
        Ok(m) => {
            let _ = writeln!(out, "--- manifest {} ---", mp.display());
            out.push_str(&m);
        }
        Err(_) => {
            let _ = writeln!(out, "no run manifest at {}", mp.display());
        }
    }
    emit(&out)
}
