//! Seeded ensemble runs and their persisted event logs.

use std::path::{Path, PathBuf};
use std::time::Instant;

use kinlab_core::{run, sample_configuration, sample_configuration_n, EventLog, RngStream};
use rayon::prelude::*;

use crate::config::ExperimentConfig;
use crate::error::{CliError, CliResult};
use crate::io;
use crate::manifest::{MemberRecord, MemberStatus, RunManifest};

/// Environment variable holding the worker count; unset means one worker
/// per core.
pub const WORKERS_ENV: &str = "KINLAB_WORKERS";

pub const MANIFEST: &str = "manifest.txt";

pub fn member_path(id: usize) -> String {
    format!("logs/member-{id:04}.klev")
}

/// Runs `body` on a pool sized by [`WORKERS_ENV`].
pub fn with_pool<T: Send>(body: impl FnOnce() -> T + Send) -> CliResult<T> {
    let mut builder = rayon::ThreadPoolBuilder::new();
    if let Ok(s) = std::env::var(WORKERS_ENV) {
        let n: usize = s
            .trim()
            .parse()
            .ok()
            .filter(|&n| n > 0)
            .ok_or_else(|| CliError::config("invalid_parameter", format!("{WORKERS_ENV}={s} is not a positive integer")))?;
        builder = builder.num_threads(n);
    }
    let pool = builder
        .build()
        .map_err(|e| CliError::runtime("thread_pool", e.to_string()))?;
    Ok(pool.install(body))
}

/// Stream of member `id`: its own stream unless the config forces every
/// member onto stream 0.
pub fn member_stream(cfg: &ExperimentConfig, id: usize) -> RngStream {
    let stream = if cfg.shared_stream { 0 } else { id as u64 };
    RngStream::new(cfg.seed, stream)
}

/// Samples and evolves one member up to `t_end` (physical time).
pub fn run_member(cfg: &ExperimentConfig, id: usize, t_end: f64) -> kinlab_core::Result<EventLog> {
    let stream = member_stream(cfg, id);
    let mut rng = stream.rng();
    let config = match cfg.force_n {
        Some(n) => sample_configuration_n(&cfg.params, &cfg.initial, n, &mut rng, cfg.max_retries)?,
        None => sample_configuration(&cfg.params, &cfg.initial, &mut rng, cfg.max_retries)?,
    };
    Ok(run(&config, t_end, &cfg.params)?.with_provenance(stream))
}

/// Runs every member, persists `logs/member-XXXX.klev` under `out` and
/// writes the manifest last. Failed members are recorded and skipped; the
/// caller decides the exit status from [`RunManifest::failures`].
pub fn run_ensemble(cfg: &ExperimentConfig, out: &Path) -> CliResult<RunManifest> {
    let start = Instant::now();
    let mft = cfg.mean_free_time()?;
    let t_end = cfg.t_end * mft;
    io::create_dir(&out.join("logs"))?;
    let results: Vec<(MemberRecord, Option<String>)> = with_pool(|| {
        (0..cfg.members)
            .into_par_iter()
            .map(|id| {
                let stream = member_stream(cfg, id);
                let outcome = run_member(cfg, id, t_end).map_err(CliError::from).and_then(|log| {
                    let bytes = log.to_bytes();
                    io::write_atomic(&out.join(member_path(id)), &bytes)?;
                    Ok((log.n_particles(), log.events.len(), io::sha256_hex(&bytes)))
                });
                let (status, digest) = match outcome {
                    Ok((particles, events, digest)) => (MemberStatus::Ok { particles, events }, Some(digest)),
                    Err(e) => (MemberStatus::Failed { reason: format!("{}: {}", e.kind, e.reason) }, None),
                };
                let record = MemberRecord {
                    id,
                    seed: stream.seed,
                    stream: stream.stream_id,
                    status,
                };
                (record, digest)
            })
            .collect()
    })?;
    let mut manifest = RunManifest::new("simulate", cfg.to_text(), mft);
    for (record, digest) in results {
        if let Some(digest) = digest {
            manifest.artifacts.push((member_path(record.id), digest));
        }
        manifest.members.push(record);
    }
    manifest.wall_clock_seconds = start.elapsed().as_secs_f64();
    io::write_atomic(&out.join(MANIFEST), manifest.to_text().as_bytes())?;
    Ok(manifest)
}

/// A persisted ensemble: its manifest, config and successful member logs.
pub struct Ensemble {
    pub root: PathBuf,
    pub manifest: RunManifest,
    pub config: ExperimentConfig,
    pub logs: Vec<EventLog>,
}

impl Ensemble {
    pub fn mean_free_time(&self) -> f64 {
        self.manifest.mean_free_time
    }
}

/// Loads the ensemble under `root`, checking each log against its digest.
pub fn load_ensemble(root: &Path) -> CliResult<Ensemble> {
    let manifest = RunManifest::read(&root.join(MANIFEST))?;
    if manifest.command != "simulate" {
        return Err(CliError::config(
            "invalid_manifest",
            format!("{} was written by `{}`, not `simulate`", root.join(MANIFEST).display(), manifest.command),
        ));
    }
    let config = ExperimentConfig::from_text(&manifest.config)?;
    let logs = manifest
        .artifacts
        .par_iter()
        .map(|(path, digest)| {
            let full = root.join(path);
            let bytes = std::fs::read(&full).map_err(|e| CliError::config("missing_artifact", format!("{}: {e}", full.display())))?;
            if &io::sha256_hex(&bytes) != digest {
                return Err(CliError::config("checksum_mismatch", format!("{} does not match its manifest digest", full.display())));
            }
            EventLog::read_binary(&mut bytes.as_slice()).map_err(CliError::from)
        })
        .collect::<CliResult<Vec<_>>>()?;
    if logs.is_empty() {
        return Err(CliError::runtime("empty_ensemble", format!("{} holds no successful members", root.display())));
    }
    Ok(Ensemble {
        root: root.to_path_buf(),
        manifest,
        config,
        logs,
    })
}
