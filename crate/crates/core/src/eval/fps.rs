use std::time::Instant;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

pub const MIN_TIMED_FRAMES: usize = 30;
pub const MIN_WARMUP: usize = 5;
pub const FPS_REPETITIONS: usize = 5;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct FpsMeasurement {
    /// Median over repetitions.
    pub fps: f64,
    pub runs: Vec<f64>,
    pub frames: usize,
}

/// Single-threaded throughput of `pipeline` over `frames`. The first
/// `warmup` calls (cycling through the frames) are not timed; each of the
/// [`FPS_REPETITIONS`] timed runs processes every frame once.
pub fn fps_benchmark<T, F>(mut pipeline: F, frames: &[T], warmup: usize) -> Result<FpsMeasurement>
where
    F: FnMut(&T) -> Result<()>,
{
    if frames.len() < MIN_TIMED_FRAMES {
        return Err(Error::config(format!("FPS needs at least {MIN_TIMED_FRAMES} frames, got {}", frames.len())));
    }
    if warmup < MIN_WARMUP {
        return Err(Error::config(format!("FPS needs at least {MIN_WARMUP} warmup frames, got {warmup}")));
    }
    for f in frames.iter().cycle().take(warmup) {
        pipeline(f)?;
    }
    let mut runs = Vec::with_capacity(FPS_REPETITIONS);
    for _ in 0..FPS_REPETITIONS {
        let start = Instant::now();
        for f in frames {
            pipeline(f)?;
        }
        let secs = start.elapsed().as_secs_f64();
        if secs <= 0.0 {
            return Err(Error::ZeroElapsed);
        }
        runs.push(frames.len() as f64 / secs);
    }
    let mut sorted = runs.clone();
    sorted.sort_by(f64::total_cmp);
    Ok(FpsMeasurement { fps: sorted[sorted.len() / 2], runs, frames: frames.len() })
}
