use std::collections::BTreeMap;
use std::fs::File;
use std::future::Future;
use std::io::{BufWriter, Write};
use std::path::{Path, PathBuf};

use futures::stream::{self, StreamExt};
use serde::de::DeserializeOwned;
use serde::Serialize;
use serde_json::Value;

use super::manifest::{self, config_diff, IngestWarning, ItemEntry, ItemStatus, Journal, RunManifest, Stage};
use super::{digest_value, file_digest, PipelineError, RunOptions, StageOutput, MANIFEST_VERSION};

pub(crate) struct Audit {
    pub coin: f64,
    pub branch: String,
}

pub(crate) struct ItemFailure {
    pub class: String,
    pub message: String,
    pub fatal: bool,
}

impl ItemFailure {
    pub fn new(class: impl Into<String>, message: impl Into<String>) -> Self {
        Self {
            class: class.into(),
            message: message.into(),
            fatal: false,
        }
    }
}

impl From<crate::genclient::GenError> for ItemFailure {
    fn from(e: crate::genclient::GenError) -> Self {
        let class = serde_json::to_value(e.class())
            .ok()
            .and_then(|v| v.as_str().map(str::to_string))
            .unwrap_or_else(|| "generation".into());
        Self {
            class,
            fatal: e.is_fatal(),
            message: e.to_string(),
        }
    }
}

pub(crate) struct StageRun {
    pub stage: Stage,
    pub output: PathBuf,
    pub keys: Vec<String>,
    pub seed: u64,
    pub config: Value,
    pub inputs_digest: String,
    pub ingest_warnings: Vec<IngestWarning>,
    pub workers: usize,
    pub flush_every: usize,
    pub max_skip_rate: f64,
    pub options: RunOptions,
}

/// Writes records in index order as soon as a contiguous prefix is settled.
struct Reorder<W: Write> {
    out: W,
    next: usize,
    parked: BTreeMap<usize, Option<String>>,
    rows: usize,
}

impl<W: Write> Reorder<W> {
    fn settle(&mut self, index: usize, line: Option<String>) -> std::io::Result<()> {
        self.parked.insert(index, line);
        while let Some(line) = self.parked.remove(&self.next) {
            if let Some(line) = line {
                self.out.write_all(line.as_bytes())?;
                self.out.write_all(b"\n")?;
                self.rows += 1;
            }
            self.next += 1;
        }
        Ok(())
    }
}

fn fresh_manifest(run: &StageRun, digest: &str) -> RunManifest {
    let mut m = RunManifest {
        version: MANIFEST_VERSION,
        run_id: digest_value(&serde_json::json!([digest, run.inputs_digest]))[..16].to_string(),
        stage: run.stage,
        master_seed: run.seed,
        config_digest: digest.to_string(),
        config: run.config.clone(),
        inputs_digest: run.inputs_digest.clone(),
        items: run
            .keys
            .iter()
            .map(|k| ItemEntry {
                key: k.clone(),
                status: ItemStatus::Pending,
                branch_coin: None,
                branch: None,
            })
            .collect(),
        ingest_warnings: run.ingest_warnings.clone(),
        counts: Default::default(),
    };
    m.recount();
    m
}

fn check_resumable(old: &RunManifest, run: &StageRun, digest: &str) -> Result<(), PipelineError> {
    if old.stage != run.stage {
        return Err(PipelineError::Manifest(format!(
            "manifest is for stage {:?}, not {:?}",
            old.stage, run.stage
        )));
    }
    if old.config_digest != digest {
        return Err(PipelineError::ConfigMismatch {
            manifest: old.config_digest.clone(),
            current: digest.to_string(),
            changes: config_diff(&old.config, &run.config),
        });
    }
    if old.inputs_digest != run.inputs_digest || old.items.len() != run.keys.len() {
        return Err(PipelineError::Manifest("inputs changed since the manifest was written".into()));
    }
    Ok(())
}

/// Drives `process` over every not-yet-done item and assembles the output.
pub(crate) async fn run_stage<T, F, Fut>(run: StageRun, process: F) -> Result<StageOutput, PipelineError>
where
    T: Serialize + DeserializeOwned,
    F: Fn(usize) -> Fut,
    Fut: Future<Output = (Option<Audit>, Result<T, ItemFailure>)>,
{
    let digest = digest_value(&run.config);
    let manifest_path = manifest::manifest_path(&run.output);
    let journal_path = manifest::journal_path(&run.output);

    let (mut manifest, done) = if run.options.resume {
        if !manifest_path.exists() {
            return Err(PipelineError::Manifest(format!(
                "nothing to resume: {} not found",
                manifest_path.display()
            )));
        }
        let old = RunManifest::load(&manifest_path)?;
        check_resumable(&old, &run, &digest)?;
        let done: BTreeMap<usize, T> = manifest::read_journal(&journal_path, &run.keys)?;
        let mut m = old;
        for (i, item) in m.items.iter_mut().enumerate() {
            if done.contains_key(&i) {
                item.status = ItemStatus::Done;
            } else {
                item.status = ItemStatus::Pending;
            }
        }
        m.ingest_warnings = run.ingest_warnings.clone();
        (m, done)
    } else {
        (fresh_manifest(&run, &digest), BTreeMap::new())
    };
    manifest.recount();
    manifest.save(&manifest_path)?;

    let mut journal = Journal::create(&journal_path, !run.options.resume)?;
    let out_file = File::create(&run.output).map_err(|e| PipelineError::io(&run.output, e))?;
    let mut reorder = Reorder {
        out: BufWriter::new(out_file),
        next: 0,
        parked: BTreeMap::new(),
        rows: 0,
    };
    let io_err = |e| PipelineError::io(&run.output, e);
    for (i, rec) in &done {
        let line = serde_json::to_string(rec).expect("record is serializable");
        reorder.settle(*i, Some(line)).map_err(io_err)?;
    }
    let pending: Vec<usize> = (0..run.keys.len()).filter(|i| !done.contains_key(i)).collect();
    drop(done);

    let mut generated = 0usize;
    let mut since_flush = 0usize;
    let mut abort = None;
    let process = &process;
    let mut results = stream::iter(pending)
        .map(|i| async move { (i, process(i).await) })
        .buffer_unordered(run.workers.max(1));

    while let Some((i, (audit, result))) = results.next().await {
        let entry = &mut manifest.items[i];
        if let Some(a) = audit {
            entry.branch_coin = Some(a.coin);
            entry.branch = Some(a.branch);
        }
        match result {
            Ok(record) => {
                journal.append(i, &run.keys[i], &record)?;
                entry.status = ItemStatus::Done;
                generated += 1;
                let line = serde_json::to_string(&record).expect("record is serializable");
                reorder.settle(i, Some(line)).map_err(io_err)?;
            }
            Err(f) if f.fatal => {
                abort = Some(PipelineError::Aborted {
                    key: run.keys[i].clone(),
                    message: f.message,
                });
                break;
            }
            Err(f) => {
                log::warn!("skipping `{}`: {} ({})", run.keys[i], f.message, f.class);
                entry.status = ItemStatus::Skipped {
                    class: f.class,
                    message: f.message,
                };
                reorder.settle(i, None).map_err(io_err)?;
            }
        }
        since_flush += 1;
        if since_flush >= run.flush_every.max(1) {
            since_flush = 0;
            manifest.recount();
            manifest.save(&manifest_path)?;
        }
    }
    drop(results);

    reorder.out.flush().map_err(io_err)?;
    let rows = reorder.rows;
    drop(reorder);
    manifest.recount();
    manifest.save(&manifest_path)?;
    if let Some(e) = abort {
        return Err(e);
    }

    let rate = manifest.skip_rate();
    if rate > run.max_skip_rate {
        return Err(PipelineError::SkipRateExceeded {
            rate,
            limit: run.max_skip_rate,
            skipped: manifest.counts.skipped,
            total: manifest.counts.total,
            manifest: Box::new(manifest),
        });
    }
    Ok(StageOutput {
        output_digest: file_digest(&run.output)?,
        output: run.output,
        manifest_path,
        manifest,
        rows,
        generated,
    })
}

pub(crate) fn output_parent_exists(output: &Path) -> Result<(), PipelineError> {
    match output.parent() {
        Some(p) if !p.as_os_str().is_empty() && !p.is_dir() => Err(PipelineError::Precondition(format!(
            "output directory {} does not exist",
            p.display()
        ))),
        _ => Ok(()),
    }
}
