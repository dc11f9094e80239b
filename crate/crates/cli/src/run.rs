//! Artifact writing and the per-run metadata record.

use std::path::{Path, PathBuf};
use std::time::{Instant, SystemTime, UNIX_EPOCH};

use serde::Serialize;
use serde_json::{Map, Value};

use crate::failure::{DataContext, Result};

/// Writes through a sibling temp file and a rename, so readers never see a
/// partial file.
pub fn write_atomic(path: &Path, bytes: &[u8]) -> Result<()> {
    if let Some(dir) = path.parent().filter(|d| !d.as_os_str().is_empty()) {
        std::fs::create_dir_all(dir).data(|| format!("creating {}", dir.display()))?;
    }
    let mut tmp = path.as_os_str().to_owned();
    tmp.push(".tmp");
    let tmp = PathBuf::from(tmp);
    std::fs::write(&tmp, bytes).data(|| format!("writing {}", tmp.display()))?;
    std::fs::rename(&tmp, path).data(|| format!("renaming into {}", path.display()))
}

/// Prints to stdout, ending quietly if the reader went away (`| head`).
pub fn say(text: &str) {
    use std::io::Write;
    let mut out = std::io::stdout().lock();
    if let Err(e) = out.write_all(text.as_bytes()).and_then(|_| out.flush()) {
        if e.kind() == std::io::ErrorKind::BrokenPipe {
            std::process::exit(0);
        }
    }
}

pub fn write_json(path: &Path, value: &impl Serialize) -> Result<()> {
    let mut text = serde_json::to_string_pretty(value).expect("report serializes");
    text.push('\n');
    write_atomic(path, text.as_bytes())
}

/// Collects what `run.json` records: the command line, the merged config,
/// the seed, phase timings and produced artifacts.
pub struct RunRecord {
    command: String,
    started: SystemTime,
    clock: Instant,
    last: Instant,
    timings: Map<String, Value>,
    outputs: Map<String, Value>,
    config: Value,
    seed: Option<u64>,
}

impl RunRecord {
    pub fn start(command: &str) -> Self {
        let now = Instant::now();
        Self {
            command: command.into(),
            started: SystemTime::now(),
            clock: now,
            last: now,
            timings: Map::new(),
            outputs: Map::new(),
            config: Value::Null,
            seed: None,
        }
    }

    pub fn config(&mut self, cfg: &impl Serialize, seed: Option<u64>) {
        self.config = serde_json::to_value(cfg).expect("config serializes");
        self.seed = seed;
    }

    /// Seconds since the previous phase ended.
    pub fn phase(&mut self, name: &str) {
        let now = Instant::now();
        self.timings.insert(format!("{name}_s"), (now - self.last).as_secs_f64().into());
        self.last = now;
    }

    pub fn output(&mut self, key: &str, value: impl Serialize) {
        self.outputs.insert(key.into(), serde_json::to_value(value).expect("output serializes"));
    }

    pub fn finish(mut self, dir: &Path) -> Result<()> {
        self.timings.insert("total_s".into(), self.clock.elapsed().as_secs_f64().into());
        let started = self.started.duration_since(UNIX_EPOCH).map(|d| d.as_secs()).unwrap_or(0);
        let record = serde_json::json!({
            "command": self.command,
            "argv": std::env::args().collect::<Vec<_>>(),
            "version": env!("CARGO_PKG_VERSION"),
            "started_unix": started,
            "seed": self.seed,
            "config": self.config,
            "timings": self.timings,
            "outputs": self.outputs,
        });
        write_json(&dir.join("run.json"), &record)
    }
}
