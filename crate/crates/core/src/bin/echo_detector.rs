//! Minimal detector process for exercising the line protocol.
//!
//! Answers every request with one box at a fixed position in tile pixels.
//! Usage: `echo-detector [CLASS X1 Y1 X2 Y2 SCORE]`; with `--fail-after N`
//! it exits without answering request N+1.

use std::io::{self, BufRead, BufWriter, Write};

use base64::Engine;
use roicount::detector::wire::{TileRequest, TileResponse, WireDetection};

fn main() {
    let mut args: Vec<String> = std::env::args().skip(1).collect();
    let mut fail_after = None;
    if let Some(i) = args.iter().position(|a| a == "--fail-after") {
        fail_after = args.get(i + 1).and_then(|v| v.parse::<usize>().ok());
        args.drain(i..(i + 2).min(args.len()));
    }
    let num = |i: usize, d: f64| args.get(i).and_then(|v| v.parse().ok()).unwrap_or(d);
    let template = WireDetection {
        class: args.first().cloned().unwrap_or_else(|| "Small Car".into()),
        x1: num(1, 10.0),
        y1: num(2, 10.0),
        x2: num(3, 22.0),
        y2: num(4, 18.0),
        score: num(5, 0.9),
    };

    let stdin = io::stdin();
    let mut out = BufWriter::new(io::stdout());
    for (n, line) in stdin.lock().lines().enumerate() {
        let Ok(line) = line else { break };
        if line.trim().is_empty() {
            continue;
        }
        if fail_after.is_some_and(|k| n >= k) {
            std::process::exit(1);
        }
        let req: TileRequest = match serde_json::from_str(&line) {
            Ok(r) => r,
            Err(e) => {
                eprintln!("echo-detector: bad request: {e}");
                std::process::exit(2);
            }
        };
        let bytes = base64::engine::general_purpose::STANDARD
            .decode(&req.pixels_b64)
            .unwrap_or_default();
        let detections = if bytes.len() == req.width * req.height * req.channels {
            vec![template.clone()]
        } else {
            eprintln!("echo-detector: pixel payload has {} bytes", bytes.len());
            Vec::new()
        };
        let resp = TileResponse { id: req.id, detections };
        serde_json::to_writer(&mut out, &resp).expect("serialize response");
        out.write_all(b"\n").and_then(|_| out.flush()).expect("write response");
    }
}
