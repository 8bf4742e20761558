use std::time::Instant;

use rand::Rng;

use crate::data::rng::stream;
use crate::data::{pad_and_mask, KeypointSequence};
use crate::error::{Error, Result};
use crate::models::Model;
use crate::tensor::Scalar;

pub const MIN_MEASURED: usize = 30;

/// Batch-1 latency statistics; one "frame" is one full-sequence forward pass.
#[derive(Clone, Debug, PartialEq, serde::Serialize, serde::Deserialize)]
pub struct BenchResult {
    pub model: String,
    pub seq_len: usize,
    pub features: usize,
    pub warmup: usize,
    pub measured: usize,
    pub latencies_seconds: Vec<f64>,
    pub mean_latency: f64,
    pub median_latency: f64,
    pub p95_latency: f64,
    pub average_fps: f64,
    pub hardware: String,
}

pub fn hardware_note() -> String {
    let cpu = std::fs::read_to_string("/proc/cpuinfo")
        .ok()
        .and_then(|s| {
            s.lines()
                .find(|l| l.starts_with("model name"))
                .and_then(|l| l.split_once(':'))
                .map(|(_, v)| v.trim().to_string())
        })
        .unwrap_or_else(|| std::env::consts::ARCH.to_string());
    format!("{cpu}, {}, single thread", std::env::consts::OS)
}

/// Times `run` after `warmup` untimed calls. Percentiles use the
/// nearest-rank method.
pub fn benchmark_fn<F: FnMut() -> Result<()>>(
    name: &str,
    seq_len: usize,
    features: usize,
    warmup: usize,
    measured: usize,
    mut run: F,
) -> Result<BenchResult> {
    if measured < MIN_MEASURED {
        return Err(Error::Config(format!(
            "at least {MIN_MEASURED} measured runs are required, got {measured}"
        )));
    }
    for _ in 0..warmup {
        run()?;
    }
    let mut latencies = Vec::with_capacity(measured);
    for _ in 0..measured {
        let t0 = Instant::now();
        run()?;
        latencies.push(t0.elapsed().as_secs_f64());
    }
    let mean = latencies.iter().sum::<f64>() / measured as f64;
    let mut sorted = latencies.clone();
    sorted.sort_by(f64::total_cmp);
    let median = if measured % 2 == 1 {
        sorted[measured / 2]
    } else {
        0.5 * (sorted[measured / 2 - 1] + sorted[measured / 2])
    };
    let rank = ((0.95 * measured as f64).ceil() as usize).clamp(1, measured);
    Ok(BenchResult {
        model: name.to_string(),
        seq_len,
        features,
        warmup,
        measured,
        latencies_seconds: latencies,
        mean_latency: mean,
        median_latency: median,
        p95_latency: sorted[rank - 1],
        average_fps: 1.0 / mean.max(f64::MIN_POSITIVE),
        hardware: hardware_note(),
    })
}

/// Batch-1 inference latency of `model` on a fixed random full-length input.
pub fn benchmark_fps<T: Scalar>(model: &Model<T>, warmup: usize, measured: usize) -> Result<BenchResult> {
    let cfg = model.config();
    let mut rng = stream(0, "bench-input");
    let values = (0..cfg.seq_len * cfg.features).map(|_| rng.random_range(-1.0f32..1.0)).collect();
    let sample = KeypointSequence::new(cfg.seq_len, cfg.features, values, 0)?;
    let batch = pad_and_mask(&[sample], cfg.seq_len)?;
    benchmark_fn(&cfg.arch.to_string(), cfg.seq_len, cfg.features, warmup, measured, || {
        model.predict_proba(&batch).map(|_| ())
    })
}
