//! External interpolator protocol.
//!
//! For each frame pair the toolkit creates a request directory holding
//!
//! - `a.png`, `b.png`: the endpoint frames, 16-bit lossless;
//! - `request.json`: `{"width", "height", "channels", "count", "fractions": [...]}`.
//!
//! It then runs the configured command with the request directory appended as
//! the last argument. The command must write `result_0000.png`,
//! `result_0001.png`, … into the same directory, one per entry of `fractions`,
//! and exit with status 0.

use std::path::{Path, PathBuf};
use std::process::Command;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::image::Image;
use crate::io::{read_png, write_png, BitDepth};

use super::{check_fractions, Capabilities, Interpolator, PairContext, PairFrames};

pub const REQUEST_FILE: &str = "request.json";
pub const ENDPOINT_A: &str = "a.png";
pub const ENDPOINT_B: &str = "b.png";

pub fn result_name(index: usize) -> String {
    format!("result_{index:04}.png")
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct PluginRequest {
    pub width: usize,
    pub height: usize,
    pub channels: usize,
    pub count: usize,
    pub fractions: Vec<f64>,
}

/// Writes a request directory for `fractions` between `a` and `b`.
pub fn write_request(dir: &Path, a: &Image, b: &Image, fractions: &[f64]) -> Result<PluginRequest> {
    a.check_same_shape(b)?;
    std::fs::create_dir_all(dir)?;
    write_png(&dir.join(ENDPOINT_A), a, BitDepth::Sixteen)?;
    write_png(&dir.join(ENDPOINT_B), b, BitDepth::Sixteen)?;
    let req = PluginRequest {
        width: a.width(),
        height: a.height(),
        channels: a.channels(),
        count: fractions.len(),
        fractions: fractions.to_vec(),
    };
    let text = serde_json::to_string_pretty(&req).expect("request serializes");
    std::fs::write(dir.join(REQUEST_FILE), text + "\n")?;
    Ok(req)
}

pub fn read_request(dir: &Path) -> Result<(PluginRequest, Image, Image)> {
    let path = dir.join(REQUEST_FILE);
    if !path.exists() {
        return Err(Error::MissingResource(path));
    }
    let req: PluginRequest = serde_json::from_str(&std::fs::read_to_string(&path)?)
        .map_err(|e| Error::Plugin(format!("bad request manifest: {e}")))?;
    if req.count != req.fractions.len() {
        return Err(Error::Plugin(format!(
            "request lists {} fractions but count = {}",
            req.fractions.len(),
            req.count
        )));
    }
    let a = read_png(&dir.join(ENDPOINT_A), req.channels)?;
    let b = read_png(&dir.join(ENDPOINT_B), req.channels)?;
    for img in [&a, &b] {
        if img.width() != req.width || img.height() != req.height {
            return Err(Error::Plugin("endpoint size disagrees with request".into()));
        }
    }
    Ok((req, a, b))
}

/// Answers a request directory with any in-process interpolator.
pub fn serve_request(dir: &Path, interp: &dyn Interpolator) -> Result<()> {
    let (req, a, b) = read_request(dir)?;
    let ctx = PairContext::plain(0, 2);
    let mut frames = interp.begin_pair(&a, &b, &req.fractions, &ctx)?;
    for i in 0..req.count {
        write_png(&dir.join(result_name(i)), &frames.frame(i)?, BitDepth::Sixteen)?;
    }
    Ok(())
}

/// Runs an external command per request.
#[derive(Clone, Debug)]
pub struct PluginInterpolator {
    pub program: PathBuf,
    pub args: Vec<String>,
    /// Largest number of fractions sent in one request.
    pub max_batch: Option<usize>,
    /// Whether the command tolerates concurrent invocations.
    pub concurrent: bool,
}

impl PluginInterpolator {
    pub fn new(program: impl Into<PathBuf>, args: Vec<String>) -> Self {
        Self {
            program: program.into(),
            args,
            max_batch: None,
            concurrent: false,
        }
    }

    fn run(&self, dir: &Path) -> Result<()> {
        let out = Command::new(&self.program)
            .args(&self.args)
            .arg(dir)
            .output()
            .map_err(|e| Error::Plugin(format!("cannot run {}: {e}", self.program.display())))?;
        if !out.status.success() {
            return Err(Error::Plugin(format!(
                "{} exited with {}: {}",
                self.program.display(),
                out.status,
                String::from_utf8_lossy(&out.stderr).trim()
            )));
        }
        Ok(())
    }
}

struct PluginFrames<'a> {
    plugin: &'a PluginInterpolator,
    a: &'a Image,
    b: &'a Image,
    fractions: Vec<f64>,
    batch: usize,
    root: tempfile::TempDir,
    done: Vec<bool>,
}

impl PairFrames for PluginFrames<'_> {
    fn len(&self) -> usize {
        self.fractions.len()
    }

    fn frame(&mut self, index: usize) -> Result<Image> {
        let chunk = index / self.batch;
        let dir = self.root.path().join(format!("req_{chunk:04}"));
        if !self.done[chunk] {
            let lo = chunk * self.batch;
            let hi = (lo + self.batch).min(self.fractions.len());
            write_request(&dir, self.a, self.b, &self.fractions[lo..hi])?;
            self.plugin.run(&dir)?;
            self.done[chunk] = true;
        }
        let path = dir.join(result_name(index % self.batch));
        if !path.exists() {
            return Err(Error::Plugin(format!("plugin wrote no {}", path.display())));
        }
        let img = read_png(&path, self.a.channels())?;
        if !img.same_shape(self.a) {
            return Err(Error::Plugin(format!(
                "{} is {}x{}, expected {}x{}",
                path.display(),
                img.width(),
                img.height(),
                self.a.width(),
                self.a.height()
            )));
        }
        Ok(img)
    }
}

impl Interpolator for PluginInterpolator {
    fn name(&self) -> &str {
        "plugin"
    }

    fn capabilities(&self) -> Capabilities {
        Capabilities {
            max_displacement: None,
            max_batch: self.max_batch,
            concurrent: self.concurrent,
        }
    }

    fn begin_pair<'a>(
        &'a self,
        a: &'a Image,
        b: &'a Image,
        fractions: &[f64],
        _ctx: &PairContext,
    ) -> Result<Box<dyn PairFrames + 'a>> {
        a.check_same_shape(b)?;
        check_fractions(fractions)?;
        let batch = self.max_batch.unwrap_or(usize::MAX).max(1).min(fractions.len().max(1));
        Ok(Box::new(PluginFrames {
            plugin: self,
            a,
            b,
            fractions: fractions.to_vec(),
            batch,
            root: tempfile::Builder::new().prefix("rsunroll-plugin").tempdir()?,
            done: vec![false; fractions.len().div_ceil(batch)],
        }))
    }
}
