//! Per-stage message rates and the δ_Perf load ratio.

use std::collections::VecDeque;
use std::time::{Duration, Instant};

use serde::{Deserialize, Serialize};

/// Default sliding-window length, seconds.
pub const DEFAULT_WINDOW: f64 = 10.0;

/// Time source shared by all workers. Seconds since an arbitrary epoch.
pub trait Clock: Send + Sync {
    fn now(&self) -> f64;
    fn sleep(&self, seconds: f64);

    fn sleep_until(&self, t: f64) {
        let dt = t - self.now();
        if dt > 0.0 {
            self.sleep(dt);
        }
    }
}

/// Wall clock, optionally running `speedup` times faster than real time.
/// Sleeps shrink by the same factor.
#[derive(Debug, Clone)]
pub struct ScaledClock {
    start: Instant,
    speedup: f64,
}

impl ScaledClock {
    pub fn new(speedup: f64) -> Self {
        assert!(speedup > 0.0, "speedup must be positive");
        Self {
            start: Instant::now(),
            speedup,
        }
    }

    pub fn realtime() -> Self {
        Self::new(1.0)
    }
}

impl Clock for ScaledClock {
    fn now(&self) -> f64 {
        self.start.elapsed().as_secs_f64() * self.speedup
    }

    fn sleep(&self, seconds: f64) {
        if seconds > 0.0 {
            std::thread::sleep(Duration::from_secs_f64(seconds / self.speedup));
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Direction {
    In,
    Out,
}

/// Sliding-window message counters for one stage.
#[derive(Debug, Clone)]
pub struct StageStats {
    pub stage: String,
    window: f64,
    inputs: VecDeque<f64>,
    outputs: VecDeque<f64>,
    total_in: u64,
    total_out: u64,
}

/// One sampled row of a stage's history.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct StatsSample {
    /// Seconds since the run started.
    pub t: f64,
    pub f_in: f64,
    pub f_out: f64,
    /// `f_in / f_out`; absent while nothing has been published in the window.
    pub delta_perf: Option<f64>,
}

impl StageStats {
    pub fn new(stage: impl Into<String>, window: f64) -> Self {
        assert!(window > 0.0, "window must be positive");
        Self {
            stage: stage.into(),
            window,
            inputs: VecDeque::new(),
            outputs: VecDeque::new(),
            total_in: 0,
            total_out: 0,
        }
    }

    pub fn record_message(&mut self, direction: Direction, t: f64) {
        let (q, total) = match direction {
            Direction::In => (&mut self.inputs, &mut self.total_in),
            Direction::Out => (&mut self.outputs, &mut self.total_out),
        };
        q.push_back(t);
        *total += 1;
        Self::expire(q, t - self.window);
    }

    fn expire(q: &mut VecDeque<f64>, cutoff: f64) {
        while q.front().is_some_and(|&t| t <= cutoff) {
            q.pop_front();
        }
    }

    fn rate(&self, q: &VecDeque<f64>, now: f64) -> f64 {
        let cutoff = now - self.window;
        q.iter().rev().take_while(|&&t| t > cutoff).filter(|&&t| t <= now).count() as f64 / self.window
    }

    /// Received messages per second over the window ending at `now`.
    pub fn f_in(&self, now: f64) -> f64 {
        self.rate(&self.inputs, now)
    }

    /// Published messages per second over the window ending at `now`.
    pub fn f_out(&self, now: f64) -> f64 {
        self.rate(&self.outputs, now)
    }

    pub fn delta_perf(&self, now: f64) -> Option<f64> {
        let out = self.f_out(now);
        (out > 0.0).then(|| self.f_in(now) / out)
    }

    pub fn sample(&self, now: f64) -> StatsSample {
        StatsSample {
            t: now,
            f_in: self.f_in(now),
            f_out: self.f_out(now),
            delta_perf: self.delta_perf(now),
        }
    }

    pub fn total_in(&self) -> u64 {
        self.total_in
    }

    pub fn total_out(&self) -> u64 {
        self.total_out
    }
}

/// Mean δ_Perf over the samples taken in `[from, to]`.
pub fn steady_state_delta(history: &[StatsSample], from: f64, to: f64) -> Option<f64> {
    let vals: Vec<f64> = history
        .iter()
        .filter(|s| s.t >= from && s.t <= to)
        .filter_map(|s| s.delta_perf)
        .collect();
    (!vals.is_empty()).then(|| vals.iter().sum::<f64>() / vals.len() as f64)
}
