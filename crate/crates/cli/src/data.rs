//! Recording directories and window archives.

use std::fs;
use std::path::{Path, PathBuf};
use std::sync::Arc;

use smm_core::dataio::{load_csv, CsvSchema, Dataset, Provenance};
use smm_core::signal::{segment_with, Recording, DEFAULT_LABEL_THRESHOLD};

use crate::args::DataArgs;
use crate::error::{CliError, CliResult};
use crate::manifest::parse_pairs;

pub const ARCHIVE_META: &str = "archive.txt";
pub const ARCHIVE_RECORDINGS: &str = "recordings";
pub const DEFAULT_WINDOW_S: f64 = 1.0;
pub const DEFAULT_STEP: usize = 10;

/// Segmentation settings stored with a preprocessed archive.
#[derive(Debug, Clone, PartialEq)]
pub struct ArchiveMeta {
    pub window_s: f64,
    pub step: usize,
    pub threshold: f64,
    pub provenance: Provenance,
    pub channels: usize,
}

impl ArchiveMeta {
    pub fn render(&self) -> String {
        format!(
            "window={}\nstep={}\nthreshold={}\nprovenance={}\nchannels={}\n",
            self.window_s,
            self.step,
            self.threshold,
            self.provenance.as_str(),
            self.channels
        )
    }

    pub fn parse(text: &str) -> CliResult<Self> {
        let mut meta = ArchiveMeta {
            window_s: DEFAULT_WINDOW_S,
            step: DEFAULT_STEP,
            threshold: DEFAULT_LABEL_THRESHOLD,
            provenance: Provenance::Synthetic,
            channels: CsvSchema::default().channels,
        };
        let bad = |k: &str, v: &str| CliError::data(format!("{ARCHIVE_META}: bad value `{v}` for `{k}`"));
        for (k, v) in parse_pairs(text)? {
            match k.as_str() {
                "window" => meta.window_s = v.parse().map_err(|_| bad(&k, &v))?,
                "step" => meta.step = v.parse().map_err(|_| bad(&k, &v))?,
                "threshold" => meta.threshold = v.parse().map_err(|_| bad(&k, &v))?,
                "provenance" => meta.provenance = v.parse().map_err(|_| bad(&k, &v))?,
                "channels" => meta.channels = v.parse().map_err(|_| bad(&k, &v))?,
                _ => {}
            }
        }
        Ok(meta)
    }
}

/// `*.csv` files of `dir`, sorted by name.
pub fn csv_files(dir: &Path) -> CliResult<Vec<PathBuf>> {
    let entries = fs::read_dir(dir).map_err(|e| CliError::io(dir, e))?;
    let mut files = Vec::new();
    for entry in entries {
        let path = entry.map_err(|e| CliError::io(dir, e))?.path();
        if path.extension().is_some_and(|x| x == "csv") {
            files.push(path);
        }
    }
    files.sort();
    if files.is_empty() {
        return Err(CliError::data(format!("{}: no .csv recordings found", dir.display())));
    }
    Ok(files)
}

pub fn load_recordings(dir: &Path, channels: usize) -> CliResult<Vec<Recording>> {
    let schema = CsvSchema { channels };
    csv_files(dir)?
        .iter()
        .map(|p| load_csv(p, schema).map_err(|e| CliError::data(format!("{}: {e}", p.display()))))
        .collect()
}

pub fn segment_all(recs: Vec<Recording>, meta: &ArchiveMeta) -> CliResult<Dataset> {
    let mut windows = Vec::new();
    for rec in recs {
        windows.extend(segment_with(&Arc::new(rec), meta.window_s, meta.step, meta.threshold)?);
    }
    if windows.is_empty() {
        return Err(CliError::data("no complete window in any recording"));
    }
    Ok(Dataset::new(windows, meta.provenance, meta.step))
}

/// Loads `--data`: an archive written by `preprocess`, or a directory of raw
/// CSV recordings segmented with `--window`/`--step`.
pub fn load_dataset(args: &DataArgs) -> CliResult<(Dataset, ArchiveMeta)> {
    let meta_path = args.data.join(ARCHIVE_META);
    let (meta, recs) = if meta_path.is_file() {
        let text = fs::read_to_string(&meta_path).map_err(|e| CliError::io(&meta_path, e))?;
        let meta = ArchiveMeta::parse(&text)?;
        if args.window.is_some_and(|w| w != meta.window_s) || args.step.is_some_and(|s| s != meta.step) {
            return Err(CliError::usage(format!(
                "{} was segmented with window={} step={}; drop --window/--step or re-run preprocess",
                args.data.display(),
                meta.window_s,
                meta.step
            )));
        }
        let recs = load_recordings(&args.data.join(ARCHIVE_RECORDINGS), meta.channels)?;
        (meta, recs)
    } else {
        let meta = ArchiveMeta {
            window_s: args.window.unwrap_or(DEFAULT_WINDOW_S),
            step: args.step.unwrap_or(DEFAULT_STEP),
            threshold: DEFAULT_LABEL_THRESHOLD,
            provenance: Provenance::Synthetic,
            channels: args.channels,
        };
        let recs = load_recordings(&args.data, args.channels)?;
        (meta, recs)
    };
    let data = segment_all(recs, &meta)?;
    for s in &args.subjects {
        if !data.subjects.contains(s) {
            return Err(CliError::usage(format!("unknown subject `{s}` (have {})", data.subjects.join(","))));
        }
    }
    Ok((data, meta))
}
