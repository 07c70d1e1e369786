use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};

use smm_core::dataio::{generate_synthetic_with, loso_splits, write_csv, Dataset, SynthConfig};
use smm_core::experiments::{
    compute_metrics, decide, majority_vote, run_baseline, run_protocol, run_seed, separability, train_ensemble,
    Arch, Baseline, CnnTrainConfig, EnsembleConfig, ExperimentConfig, LstmTrainConfig, Metrics, ResultTable,
    SvmConfig, TransferConfig, TransferScope,
};
use smm_core::models::{load_any_params, Model};
use smm_core::signal::{highpass_filter, resample_linear, window_overlap};
use smm_core::Rng;

use crate::args::{
    CnnArgs, EnsembleArgs, EvalArgs, LstmArgs, PreprocessArgs, SynthArgs, TrainArgs, TransferArgs,
};
use crate::data::{load_dataset, load_recordings, segment_all, ArchiveMeta, ARCHIVE_META, ARCHIVE_RECORDINGS};
use crate::error::{CliError, CliResult};
use crate::manifest::{parse_pairs, Manifest};

const ENSEMBLE_HEADER: &str = "# smm-ensemble";

fn create_dir(dir: &Path) -> CliResult<()> {
    fs::create_dir_all(dir).map_err(|e| CliError::io(dir, e))
}

fn write_file(dir: &Path, rel: &str, contents: impl AsRef<[u8]>) -> CliResult<()> {
    let path = dir.join(rel);
    if let Some(parent) = path.parent() {
        create_dir(parent)?;
    }
    fs::write(&path, contents).map_err(|e| CliError::io(&path, e))
}

fn parse_flag<T: std::str::FromStr<Err = smm_core::Error>>(flag: &str, value: &str) -> CliResult<T> {
    value.parse().map_err(|e| CliError::usage(format!("--{flag}: {e}")))
}

/// Records an input path as absolute so a replay works from any directory.
fn pin_path(m: &mut Manifest, flag: &str, path: &Path) {
    if let Ok(abs) = fs::canonicalize(path) {
        m.flags.insert(flag.to_string(), abs.display().to_string());
    }
}

fn finish(m: &mut Manifest, out: &Path) -> CliResult<()> {
    pin_path(m, "out", out);
    let path = m.write(out)?;
    println!("manifest: {}", path.display());
    Ok(())
}

// ------------------------------------------------------------------ synth

pub fn synth(args: &SynthArgs, m: &mut Manifest) -> CliResult<()> {
    if !(args.smm > 0.0 && args.smm < 1.0) {
        return Err(CliError::usage(format!("--smm must lie in (0, 1), got {}", args.smm)));
    }
    if args.subjects == 0 {
        return Err(CliError::usage("--subjects must be >= 1"));
    }
    let cfg = SynthConfig {
        n_subjects: args.subjects,
        duration_s: args.minutes * 60.0,
        rate: args.rate,
        smm_fraction: args.smm,
        channels: args.channels,
        band: (args.band_lo, args.band_hi),
        subject_prefix: args.prefix.clone(),
        template_seed: args.template_seed,
        ..SynthConfig::default()
    };
    let recs = generate_synthetic_with(&mut Rng::new(args.seed), &cfg)?;
    create_dir(&args.out)?;
    let (mut smm, mut total) = (0.0, 0usize);
    for rec in &recs {
        let rel = format!("{}.csv", rec.subject_id);
        let path = args.out.join(&rel);
        write_csv(rec, &path).map_err(|e| CliError::data(format!("{}: {e}", path.display())))?;
        m.output(format!("recording.{}", rec.subject_id), rel);
        let f = rec.smm_fraction();
        println!("{}: {} samples, SMM fraction {f:.4}", rec.subject_id, rec.len());
        smm += f * rec.len() as f64;
        total += rec.len();
    }
    let overall = smm / total as f64;
    println!("realized SMM fraction: {overall:.4}");
    m.resolve("seed", args.seed);
    m.resolve("smm_fraction", overall);
    finish(m, &args.out)
}

// ------------------------------------------------------------------ preprocess

pub fn preprocess(args: &PreprocessArgs, m: &mut Manifest) -> CliResult<()> {
    pin_path(m, "input", &args.input);
    let meta = ArchiveMeta {
        window_s: args.window,
        step: args.step,
        threshold: args.threshold,
        provenance: parse_flag("provenance", &args.provenance)?,
        channels: args.channels,
    };
    if args.step == 0 {
        return Err(CliError::usage("--step must be >= 1"));
    }
    if !(0.0..=1.0).contains(&args.threshold) {
        return Err(CliError::usage("--threshold must lie in [0, 1]"));
    }
    let mut recs = load_recordings(&args.input, args.channels)?;
    for rec in &mut recs {
        if args.highpass > 0.0 {
            *rec = highpass_filter(rec, args.highpass)?;
        }
        if let Some(hz) = args.resample {
            *rec = resample_linear(rec, hz)?;
        }
    }
    create_dir(&args.out.join(ARCHIVE_RECORDINGS))?;
    let mut stats = String::new();
    let rates: Vec<f64> = recs.iter().map(|r| r.rate).collect();
    for rec in &recs {
        let rel = format!("{ARCHIVE_RECORDINGS}/{}.csv", rec.subject_id);
        let path = args.out.join(&rel);
        write_csv(rec, &path).map_err(|e| CliError::data(format!("{}: {e}", path.display())))?;
        m.output(format!("recording.{}", rec.subject_id), rel);
    }
    let data = segment_all(recs, &meta)?;

    let mut listing = String::from("subject,t_index,len,label\n");
    for w in &data.windows {
        let _ = writeln!(listing, "{},{},{},{}", w.subject_id(), w.t_index(), w.len(), w.label);
    }
    write_file(&args.out, "windows.csv", listing)?;
    write_file(&args.out, ARCHIVE_META, meta.render())?;

    let w = data.windows[0].len();
    let _ = writeln!(stats, "rate={}", rates[0]);
    if rates.iter().any(|&r| r != rates[0]) {
        let _ = writeln!(stats, "rates={}", rates.iter().map(f64::to_string).collect::<Vec<_>>().join(","));
    }
    let _ = writeln!(stats, "window_samples={w}");
    let _ = writeln!(stats, "step={}", args.step);
    let _ = writeln!(stats, "overlap={}", window_overlap(w, args.step));
    for (subject, neg, pos) in data.subject_counts() {
        let ratio = pos as f64 / (neg + pos) as f64;
        let _ = writeln!(stats, "subject.{subject}=windows:{} smm:{pos} ratio:{ratio:.4}", neg + pos);
    }
    let _ = writeln!(stats, "windows={}", data.len());
    let _ = writeln!(stats, "smm_ratio={:.4}", data.smm_ratio());
    write_file(&args.out, "stats.txt", &stats)?;
    print!("{stats}");

    m.output("windows", "windows.csv");
    m.output("stats", "stats.txt");
    m.output("archive", ARCHIVE_META);
    finish(m, &args.out)
}

// ------------------------------------------------------------------ training

fn cnn_config(a: &CnnArgs) -> CliResult<CnnTrainConfig> {
    Ok(CnnTrainConfig {
        epochs: a.epochs,
        batch: a.batch,
        learning_rate: a.lr,
        momentum: a.momentum,
        pool_mode: parse_flag("pool", &a.pool)?,
        init: parse_flag("init", &a.init)?,
    })
}

fn lstm_config(a: &LstmArgs, default_q: usize) -> LstmTrainConfig {
    LstmTrainConfig {
        tau: a.tau.unwrap_or(25),
        q: a.q.unwrap_or(default_q),
        epochs: a.lstm_epochs,
        batch: a.lstm_batch,
        learning_rate: a.lstm_lr,
        fine_tune: a.fine_tune,
        ..LstmTrainConfig::default()
    }
}

fn check_finite(table: &ResultTable) -> CliResult<()> {
    if table.is_finite() {
        Ok(())
    } else {
        Err(CliError::Numeric(format!("non-finite loss or metric in `{}`", table.config)))
    }
}

fn write_table(table: &ResultTable, out: &Path, m: &mut Manifest) -> CliResult<()> {
    let csv = table.to_csv();
    write_file(out, "results.csv", &csv)?;
    write_file(out, "runs.csv", table.runs_csv())?;
    m.output("results", "results.csv");
    m.output("runs", "runs.csv");
    print!("{csv}");
    Ok(())
}

enum Learner {
    Net(Arch),
    Svm(Baseline),
}

fn learner(arch: &str) -> CliResult<Learner> {
    if arch.starts_with("svm") {
        Ok(Learner::Svm(parse_flag("arch", arch)?))
    } else {
        Ok(Learner::Net(parse_flag("arch", arch)?))
    }
}

fn run_training(args: &TrainArgs, transfer: Option<&TransferConfig>, m: &mut Manifest) -> CliResult<()> {
    pin_path(m, "data", &args.data.data);
    let (data, _) = load_dataset(&args.data)?;
    m.resolve("seed", args.seed);
    let table = match learner(&args.arch)? {
        Learner::Svm(kind) => {
            if transfer.is_some() {
                return Err(CliError::usage("transfer needs a neural architecture"));
            }
            let svm = SvmConfig {
                lambda: args.svm_lambda,
                epochs: args.svm_epochs,
            };
            let mut table = run_baseline(&data, kind, args.balanced, svm, args.repeats, args.seed)?;
            if !args.data.subjects.is_empty() {
                table.runs.retain(|r| args.data.subjects.contains(&r.subject));
            }
            table
        }
        Learner::Net(arch) => {
            let cfg = ExperimentConfig {
                arch,
                balanced: args.balanced,
                repeats: args.repeats,
                cnn: cnn_config(&args.cnn)?,
                lstm: lstm_config(&args.lstm, 10),
                subjects: args.data.subjects.clone(),
            };
            if arch == Arch::CnnLstm {
                m.resolve("tau", cfg.lstm.tau);
                m.resolve("q", cfg.lstm.q);
            }
            let (table, models) = run_protocol(&data, &cfg, transfer, args.seed)?;
            check_finite(&table)?;
            for (run, model) in table.runs.iter().zip(&models) {
                let rel = format!("models/{}-r{}.model", run.subject, run.repeat);
                write_file(&args.out, &rel, model.to_bytes())?;
                m.output(format!("model.{}.r{}", run.subject, run.repeat), rel);
            }
            table
        }
    };
    check_finite(&table)?;
    write_table(&table, &args.out, m)?;
    finish(m, &args.out)
}

pub fn train(args: &TrainArgs, m: &mut Manifest) -> CliResult<()> {
    create_dir(&args.out)?;
    run_training(args, None, m)
}

pub fn transfer(args: &TransferArgs, m: &mut Manifest) -> CliResult<()> {
    create_dir(&args.train.out)?;
    pin_path(m, "source", &args.source);
    let source = load_any_params(&args.source)?;
    let cfg = TransferConfig {
        source,
        source_tag: args.source.display().to_string(),
        target_tag: args.train.data.data.display().to_string(),
        scope: parse_flag::<TransferScope>("scope", &args.scope)?,
    };
    run_training(&args.train, Some(&cfg), m)
}

// ------------------------------------------------------------------ eval

/// Models behind `path`: a single model file, or the selected members of an
/// ensemble spec written by `ensemble`.
fn load_predictor(path: &Path) -> CliResult<Vec<Model>> {
    let bytes = fs::read(path).map_err(|e| CliError::io(path, e))?;
    if !bytes.starts_with(ENSEMBLE_HEADER.as_bytes()) {
        return Ok(vec![Model::from_bytes(&bytes)?]);
    }
    let text = String::from_utf8_lossy(&bytes);
    let pairs = parse_pairs(&text)?;
    let get = |k: &str| pairs.iter().find(|(key, _)| key == k).map(|(_, v)| v.as_str());
    let selected = get("selected").ok_or_else(|| CliError::data("ensemble spec lacks `selected=`"))?;
    let base = path.parent().unwrap_or(Path::new("."));
    selected
        .split(',')
        .map(|k| {
            let rel = get(&format!("member.{k}")).ok_or_else(|| CliError::data(format!("ensemble spec lacks member.{k}")))?;
            Ok(Model::load(base.join(rel))?)
        })
        .collect()
}

fn predict_votes(models: &[Model], data: &Dataset) -> CliResult<(Vec<u8>, Vec<u8>)> {
    let mut votes = Vec::new();
    let mut truth = Vec::new();
    for model in models {
        let (p, t) = model.predict_dataset(data)?;
        votes.push(decide(&p));
        truth = t;
    }
    Ok((majority_vote(&votes)?, truth))
}

fn metrics_row(out: &mut String, name: &str, n: usize, mt: &Metrics) {
    let _ = writeln!(
        out,
        "{name},{n},{},{},{},{},{},{},{}",
        mt.tp, mt.fp, mt.fn_, mt.tn, mt.precision, mt.recall, mt.f1
    );
}

pub fn eval(args: &EvalArgs, m: &mut Manifest) -> CliResult<()> {
    create_dir(&args.out)?;
    pin_path(m, "data", &args.data.data);
    pin_path(m, "model", &args.model);
    let models = load_predictor(&args.model)?;
    let (data, _) = load_dataset(&args.data)?;
    let subjects: Vec<String> = if args.data.subjects.is_empty() {
        data.subjects.clone()
    } else {
        args.data.subjects.clone()
    };
    let mut csv = String::from("subject,n,tp,fp,fn,tn,precision,recall,f1\n");
    let (mut all_pred, mut all_truth) = (Vec::new(), Vec::new());
    for s in &subjects {
        let part = data.of_subjects(|id| id == s);
        let (pred, truth) = predict_votes(&models, &part)?;
        let mt = compute_metrics(&pred, &truth)?;
        metrics_row(&mut csv, s, truth.len(), &mt);
        all_pred.extend(pred);
        all_truth.extend(truth);
    }
    let mt = compute_metrics(&all_pred, &all_truth)?;
    metrics_row(&mut csv, "all", all_truth.len(), &mt);
    write_file(&args.out, "metrics.csv", &csv)?;
    m.output("metrics", "metrics.csv");
    print!("{csv}");

    if args.fisher {
        let cnn = match &models[0] {
            Model::Cnn(c) => c,
            Model::CnnLstm(c) => c.cnn(),
        };
        let rep = separability(&data, cnn)?;
        let text = format!("raw={}\nhandcrafted={}\nlearned={}\n", rep.raw, rep.handcrafted, rep.learned);
        write_file(&args.out, "separability.txt", &text)?;
        m.output("separability", "separability.txt");
        print!("{text}");
    }
    if !mt.f1.is_finite() {
        return Err(CliError::Numeric("non-finite metric".into()));
    }
    finish(m, &args.out)
}

// ------------------------------------------------------------------ ensemble

pub fn ensemble(args: &EnsembleArgs, m: &mut Manifest) -> CliResult<()> {
    create_dir(&args.out)?;
    pin_path(m, "data", &args.data.data);
    let (data, _) = load_dataset(&args.data)?;
    let cfg = EnsembleConfig {
        l: args.l,
        arch: parse_flag("arch", &args.arch)?,
        balanced_cnn: args.balanced_cnn,
        cnn: cnn_config(&args.cnn)?,
        lstm: lstm_config(&args.lstm, 40),
    };
    if args.repeats == 0 {
        return Err(CliError::usage("--repeats must be >= 1"));
    }
    m.resolve("seed", args.seed);
    m.resolve("tau", cfg.lstm.tau);
    m.resolve("q", cfg.lstm.q);
    let mut csv = String::from("subject,repeat,seed,l,b,precision,recall,f1,single_f1\n");
    for (fold, split) in loso_splits(&data)?.iter().enumerate() {
        if !args.data.subjects.is_empty() && !args.data.subjects.contains(&split.test_subject) {
            continue;
        }
        for r in 0..args.repeats {
            let seed = run_seed(args.seed, fold, r);
            let spec = train_ensemble(&split.train, &cfg, seed)?;
            let (pred, truth) = spec.predict(&split.test)?;
            let ens = compute_metrics(&pred, &truth)?;
            let (p0, t0) = spec.members[0].predict_dataset(&split.test)?;
            let single = compute_metrics(&decide(&p0), &t0)?;
            if !(ens.f1.is_finite() && single.f1.is_finite()) {
                return Err(CliError::Numeric("non-finite ensemble metric".into()));
            }
            let _ = writeln!(
                csv,
                "{},{r},{seed},{},{},{},{},{},{}",
                split.test_subject,
                cfg.l,
                spec.b(),
                ens.precision,
                ens.recall,
                ens.f1,
                single.f1
            );
            let tag = format!("{}-r{r}", split.test_subject);
            let mut desc = format!("{ENSEMBLE_HEADER}\n{}", spec.describe());
            for (k, member) in spec.members.iter().enumerate() {
                let rel = format!("{tag}/member{k}.model");
                write_file(&args.out.join("ensembles"), &rel, member.to_bytes())?;
                let _ = writeln!(desc, "member.{k}={rel}");
            }
            let spec_rel = format!("ensembles/{tag}.spec");
            write_file(&args.out, &spec_rel, &desc)?;
            m.output(format!("spec.{tag}"), spec_rel);
            for k in 0..spec.members.len() {
                m.output(format!("member.{tag}.{k}"), format!("ensembles/{tag}/member{k}.model"));
            }
        }
    }
    write_file(&args.out, "ensemble.csv", &csv)?;
    m.output("ensemble", "ensemble.csv");
    print!("{csv}");
    finish(m, &args.out)
}

// ------------------------------------------------------------------ replay

/// Files listed in a manifest, as (key, original path, replayed path).
pub fn output_pairs(manifest: &Manifest, original: &Path, replayed: &Path) -> Vec<(String, PathBuf, PathBuf)> {
    manifest
        .outputs
        .iter()
        .map(|(k, rel)| (k.clone(), original.join(rel), replayed.join(rel)))
        .collect()
}

pub fn compare_outputs(manifest: &Manifest, original: &Path, replayed: &Path) -> CliResult<()> {
    let mut differing = Vec::new();
    for (key, a, b) in output_pairs(manifest, original, replayed) {
        let x = fs::read(&a).map_err(|e| CliError::io(&a, e))?;
        let y = fs::read(&b).map_err(|e| CliError::io(&b, e))?;
        if x == y {
            println!("identical {key}");
        } else {
            println!("DIFFERS   {key}");
            differing.push(key);
        }
    }
    if differing.is_empty() {
        Ok(())
    } else {
        Err(CliError::Numeric(format!("replay differs in: {}", differing.join(", "))))
    }
}

/// Directory a manifest's outputs live in: its recorded absolute `out`, else
/// the manifest's own directory.
pub fn manifest_out(manifest: &Manifest, path: &Path) -> PathBuf {
    let own = path.parent().map(Path::to_path_buf).unwrap_or_default();
    match manifest.flags.get("out") {
        Some(o) if Path::new(o).is_absolute() => PathBuf::from(o),
        _ => own,
    }
}
