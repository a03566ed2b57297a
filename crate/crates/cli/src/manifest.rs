//! Run manifests: enough to regenerate every artifact of a stage.
//!
//! ```text
//! version = 0.1.0
//! command = simulate
//! wall_clock_seconds = 1.52
//! mean_free_time = 0.0693
//! status = ok
//! [config]
//! eps = 1e-3
//! [members]
//! 0 seed=1 stream=0 status=ok particles=998 events=2110
//! [artifacts]
//! logs/member-0000.klev 3f2a...
//! ```
//!
//! The `[config]` block is a valid config file on its own, and
//! [`ExperimentConfig::from_text`](crate::config::ExperimentConfig::from_text)
//! reads it straight out of a manifest.

use std::fmt::Write as _;
use std::path::Path;

use crate::error::{CliError, CliResult};
use crate::io;

pub const CODE_VERSION: &str = env!("CARGO_PKG_VERSION");

#[derive(Clone, Debug, PartialEq)]
pub enum MemberStatus {
    Ok { particles: usize, events: usize },
    Failed { reason: String },
}

#[derive(Clone, Debug, PartialEq)]
pub struct MemberRecord {
    pub id: usize,
    pub seed: u64,
    pub stream: u64,
    pub status: MemberStatus,
}

#[derive(Clone, Debug, PartialEq)]
pub struct RunManifest {
    pub version: String,
    pub command: String,
    pub wall_clock_seconds: f64,
    pub mean_free_time: f64,
    pub config: String,
    pub members: Vec<MemberRecord>,
    /// Paths relative to the manifest's directory, with SHA-256 digests.
    pub artifacts: Vec<(String, String)>,
}

impl RunManifest {
    pub fn new(command: &str, config: String, mean_free_time: f64) -> Self {
        Self {
            version: CODE_VERSION.to_string(),
            command: command.to_string(),
            wall_clock_seconds: 0.0,
            mean_free_time,
            config,
            members: Vec::new(),
            artifacts: Vec::new(),
        }
    }

    pub fn failures(&self) -> usize {
        self.members
            .iter()
            .filter(|m| matches!(m.status, MemberStatus::Failed { .. }))
            .count()
    }

    /// Records an artifact already on disk under `root`.
    pub fn record(&mut self, root: &Path, relative: &str) -> CliResult<()> {
        let digest = io::sha256_file(&root.join(relative))?;
        self.artifacts.push((relative.to_string(), digest));
        Ok(())
    }

    /// Writes `bytes` under `root` atomically and records its digest.
    pub fn emit(&mut self, root: &Path, relative: &str, bytes: &[u8]) -> CliResult<()> {
        io::write_atomic(&root.join(relative), bytes)?;
        self.artifacts.push((relative.to_string(), io::sha256_hex(bytes)));
        Ok(())
    }

    pub fn to_text(&self) -> String {
        let mut s = String::new();
        let status = if self.failures() == 0 { "ok" } else { "partial" };
        writeln!(s, "version = {}", self.version).unwrap();
        writeln!(s, "command = {}", self.command).unwrap();
        writeln!(s, "wall_clock_seconds = {:.3}", self.wall_clock_seconds).unwrap();
        writeln!(s, "mean_free_time = {:e}", self.mean_free_time).unwrap();
        writeln!(s, "status = {status}").unwrap();
        s.push_str("[config]\n");
        s.push_str(&self.config);
        if !self.config.is_empty() && !self.config.ends_with('\n') {
            s.push('\n');
        }
        s.push_str("[members]\n");
        for m in &self.members {
            write!(s, "{} seed={} stream={} ", m.id, m.seed, m.stream).unwrap();
            match &m.status {
                MemberStatus::Ok { particles, events } => {
                    writeln!(s, "status=ok particles={particles} events={events}").unwrap()
                }
                MemberStatus::Failed { reason } => {
                    writeln!(s, "status=failed reason=\"{}\"", reason.replace('"', "'").replace('\n', " ")).unwrap()
                }
            }
        }
        s.push_str("[artifacts]\n");
        for (path, digest) in &self.artifacts {
            writeln!(s, "{path} {digest}").unwrap();
        }
        s
    }

    pub fn parse(text: &str) -> CliResult<Self> {
        let bad = |msg: String| CliError::config("invalid_manifest", msg);
        let mut m = Self::new("", String::new(), f64::NAN);
        let mut section = "";
        for line in text.lines() {
            let trimmed = line.trim();
            if trimmed.is_empty() {
                continue;
            }
            if trimmed.starts_with('[') {
                section = match trimmed {
                    "[config]" => "config",
                    "[members]" => "members",
                    "[artifacts]" => "artifacts",
                    other => return Err(bad(format!("unknown section {other}"))),
                };
                continue;
            }
            match section {
                "" => {
                    let (k, v) = trimmed.split_once('=').ok_or_else(|| bad(format!("bad header line `{trimmed}`")))?;
                    let v = v.trim();
                    match k.trim() {
                        "version" => m.version = v.to_string(),
                        "command" => m.command = v.to_string(),
                        "wall_clock_seconds" => m.wall_clock_seconds = v.parse().map_err(|_| bad(format!("bad wall clock `{v}`")))?,
                        "mean_free_time" => m.mean_free_time = v.parse().map_err(|_| bad(format!("bad mean free time `{v}`")))?,
                        "status" => {}
                        other => return Err(bad(format!("unknown header key `{other}`"))),
                    }
                }
                "config" => {
                    m.config.push_str(line);
                    m.config.push('\n');
                }
                "members" => m.members.push(parse_member(trimmed).ok_or_else(|| bad(format!("bad member line `{trimmed}`")))?),
                _ => {
                    let (path, digest) = trimmed.rsplit_once(' ').ok_or_else(|| bad(format!("bad artifact line `{trimmed}`")))?;
                    m.artifacts.push((path.to_string(), digest.to_string()));
                }
            }
        }
        Ok(m)
    }

    pub fn read(path: &Path) -> CliResult<Self> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| CliError::config("missing_artifact", format!("{}: {e}", path.display())))?;
        Self::parse(&text)
    }

    /// Rechecks every artifact digest relative to `root`; returns the
    /// paths that differ or are missing.
    pub fn verify(&self, root: &Path) -> Vec<String> {
        self.artifacts
            .iter()
            .filter(|(p, digest)| io::sha256_file(&root.join(p)).map_or(true, |d| &d != digest))
            .map(|(p, _)| p.clone())
            .collect()
    }
}

fn parse_member(line: &str) -> Option<MemberRecord> {
    let mut parts = line.splitn(2, ' ');
    let id = parts.next()?.parse().ok()?;
    let rest = parts.next()?;
    let field = |key: &str| -> Option<&str> {
        let start = rest.find(&format!("{key}="))? + key.len() + 1;
        let tail = &rest[start..];
        Some(tail.split(' ').next().unwrap_or(""))
    };
    let seed = field("seed")?.parse().ok()?;
    let stream = field("stream")?.parse().ok()?;
    let status = match field("status")? {
        "ok" => MemberStatus::Ok {
            particles: field("particles")?.parse().ok()?,
            events: field("events")?.parse().ok()?,
        },
        "failed" => {
            let start = rest.find("reason=\"")? + 8;
            let reason = rest[start..].trim_end_matches('"').to_string();
            MemberStatus::Failed { reason }
        }
        _ => return None,
    };
    Some(MemberRecord {
        id,
        seed,
        stream,
        status,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn text_round_trip() {
        let mut m = RunManifest::new("simulate", "eps = 1e-2\nmembers = 2\n".into(), 0.07);
        m.wall_clock_seconds = 1.5;
        m.members.push(MemberRecord {
            id: 0,
            seed: 3,
            stream: 0,
            status: MemberStatus::Ok { particles: 10, events: 4 },
        });
        m.members.push(MemberRecord {
            id: 1,
            seed: 3,
            stream: 1,
            status: MemberStatus::Failed {
                reason: "retries exhausted after 5 attempts".into(),
            },
        });
        m.artifacts.push(("logs/member-0000.klev".into(), "ab".repeat(32)));
        let text = m.to_text();
        assert!(text.contains("status = partial"));
        let back = RunManifest::parse(&text).unwrap();
        assert_eq!(back.members, m.members);
        assert_eq!(back.artifacts, m.artifacts);
        assert_eq!(back.config, m.config);
        assert_eq!(back.to_text(), text);
    }
}
