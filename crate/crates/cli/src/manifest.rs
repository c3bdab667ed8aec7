use std::path::{Path, PathBuf};
use std::time::{Instant, SystemTime, UNIX_EPOCH};

use serde::Serialize;
use serde_json::Value;

/// Everything needed to rerun a command: pass the file back with
/// `--config` to repeat it.
#[derive(Debug, Serialize)]
pub struct RunManifest {
    pub tool: &'static str,
    pub version: &'static str,
    pub command: String,
    pub argv: Vec<String>,
    pub config: Value,
    pub threads: Option<usize>,
    pub rng: &'static str,
    pub seeds: Value,
    pub inputs: Vec<PathBuf>,
    pub outputs: Vec<PathBuf>,
    /// Settings without a counterpart in the published method.
    pub assumed_defaults: Vec<&'static str>,
    pub started_unix: f64,
    pub wall_seconds: f64,
}

pub struct Recorder {
    start: Instant,
    manifest: RunManifest,
}

impl Recorder {
    pub fn new(command: &str, config: Value, threads: Option<usize>) -> Self {
        let started_unix = SystemTime::now()
            .duration_since(UNIX_EPOCH)
            .map(|d| d.as_secs_f64())
            .unwrap_or(0.0);
        Recorder {
            start: Instant::now(),
            manifest: RunManifest {
                tool: "wop",
                version: env!("CARGO_PKG_VERSION"),
                command: command.to_string(),
                argv: std::env::args().collect(),
                config,
                threads,
                rng: wop::rng::GENERATOR,
                seeds: Value::Object(Default::default()),
                inputs: Vec::new(),
                outputs: Vec::new(),
                assumed_defaults: Vec::new(),
                started_unix,
                wall_seconds: 0.0,
            },
        }
    }

    pub fn seed(&mut self, name: &str, value: u64) {
        if let Value::Object(m) = &mut self.manifest.seeds {
            m.insert(name.to_string(), value.into());
        }
    }

    pub fn input(&mut self, p: impl AsRef<Path>) {
        self.manifest.inputs.push(p.as_ref().to_path_buf());
    }

    pub fn output(&mut self, p: impl AsRef<Path>) {
        self.manifest.outputs.push(p.as_ref().to_path_buf());
    }

    pub fn cnn_defaults(&mut self) {
        self.manifest.assumed_defaults.extend([
            "fc_hidden width",
            "He-normal initialization with zero biases",
            "Adam beta1 = 0.9, beta2 = 0.999, eps = 1e-8",
            "batch size",
        ]);
    }

    pub fn finish(mut self, path: &Path) -> std::io::Result<()> {
        self.manifest.wall_seconds = self.start.elapsed().as_secs_f64();
        let json = serde_json::to_string_pretty(&self.manifest).expect("manifest serializes");
        std::fs::write(path, json + "\n")
    }
}
