use std::io::{BufRead, BufReader, BufWriter, Write};
use std::process::{Child, ChildStdin, ChildStdout, Command, Stdio};
use std::sync::atomic::{AtomicUsize, Ordering};
use std::sync::Mutex;

use base64::Engine;

use super::wire::{TileRequest, TileResponse};
use super::{DetectError, DetectorBackend, Region, TileContext};
use crate::classes::ClassRegistry;
use crate::raster::Raster;

struct Worker {
    child: Child,
    stdin: Option<BufWriter<ChildStdin>>,
    stdout: BufReader<ChildStdout>,
}

impl Worker {
    fn round_trip(&mut self, request: &TileRequest) -> Result<TileResponse, String> {
        let stdin = self.stdin.as_mut().ok_or("stdin closed")?;
        serde_json::to_writer(&mut *stdin, request).map_err(|e| e.to_string())?;
        stdin.write_all(b"\n").map_err(|e| e.to_string())?;
        stdin.flush().map_err(|e| e.to_string())?;
        let mut line = String::new();
        let n = self.stdout.read_line(&mut line).map_err(|e| e.to_string())?;
        if n == 0 {
            return Err("detector process closed its output".into());
        }
        serde_json::from_str(&line).map_err(|e| format!("bad response: {e}"))
    }
}

impl Drop for Worker {
    fn drop(&mut self) {
        self.stdin.take();
        let _ = self.child.kill();
        let _ = self.child.wait();
    }
}

/// Runs detection in child processes speaking newline-delimited JSON on
/// stdin/stdout: one request line in, one response line out.
///
/// Each process handles one request at a time; concurrent tiles are spread
/// over `instances` processes.
pub struct ExternalBackend {
    workers: Vec<Mutex<Worker>>,
    next: AtomicUsize,
    registry: ClassRegistry,
}

impl ExternalBackend {
    pub fn spawn(program: &str, args: &[String], instances: usize, registry: ClassRegistry) -> Result<Self, DetectError> {
        let mut workers = Vec::new();
        for _ in 0..instances.max(1) {
            let mut child = Command::new(program)
                .args(args)
                .stdin(Stdio::piped())
                .stdout(Stdio::piped())
                .stderr(Stdio::inherit())
                .spawn()
                .map_err(|e| DetectError::Io(format!("cannot start detector {program:?}: {e}")))?;
            let stdin = child.stdin.take().expect("piped stdin");
            let stdout = child.stdout.take().expect("piped stdout");
            workers.push(Mutex::new(Worker {
                child,
                stdin: Some(BufWriter::new(stdin)),
                stdout: BufReader::new(stdout),
            }));
        }
        Ok(Self {
            workers,
            next: AtomicUsize::new(0),
            registry,
        })
    }

    pub fn instances(&self) -> usize {
        self.workers.len()
    }

    fn with_worker<T>(&self, f: impl FnOnce(&mut Worker) -> T) -> T {
        let n = self.workers.len();
        let start = self.next.fetch_add(1, Ordering::Relaxed) % n;
        for i in 0..n {
            if let Ok(mut w) = self.workers[(start + i) % n].try_lock() {
                return f(&mut w);
            }
        }
        let mut w = self.workers[start].lock().unwrap_or_else(|p| p.into_inner());
        f(&mut w)
    }
}

impl DetectorBackend for ExternalBackend {
    fn detect_tile(&self, tile: &Raster, ctx: &TileContext<'_>) -> Result<Vec<Region>, DetectError> {
        let request = TileRequest {
            id: ctx.tile_id(),
            width: tile.width(),
            height: tile.height(),
            channels: tile.channels(),
            pixels_b64: base64::engine::general_purpose::STANDARD.encode(tile.pixels()),
        };
        let response = self.with_worker(|w| w.round_trip(&request)).map_err(|m| ctx.failure(m))?;
        if response.id != request.id {
            return Err(ctx.failure(format!("response id {:?} does not match request", response.id)));
        }
        let (w, h) = (tile.width() as f64, tile.height() as f64);
        response
            .detections
            .iter()
            .map(|d| {
                let mut r = d.to_region(&self.registry).map_err(|e| ctx.failure(e.to_string()))?;
                r.bbox = r.bbox.clip_to(w, h);
                Ok(r)
            })
            .collect()
    }
}
