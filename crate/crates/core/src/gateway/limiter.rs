//! Concurrency cap plus token-bucket rate limit for one provider.

use std::sync::{Condvar, Mutex};
use std::time::{Duration, Instant};

#[derive(Debug)]
struct State {
    in_flight: usize,
    peak: usize,
    tokens: f64,
    refilled_at: Instant,
}

#[derive(Debug)]
pub struct Limiter {
    max_in_flight: usize,
    rate_per_sec: Option<f64>,
    burst: f64,
    state: Mutex<State>,
    freed: Condvar,
}

/// Holds one in-flight slot until dropped.
pub struct Permit<'a> {
    limiter: &'a Limiter,
}

impl Drop for Permit<'_> {
    fn drop(&mut self) {
        let mut state = self.limiter.state.lock().unwrap_or_else(|e| e.into_inner());
        state.in_flight -= 1;
        self.limiter.freed.notify_one();
    }
}

impl Limiter {
    pub fn new(max_in_flight: usize, rate_per_sec: Option<f64>) -> Self {
        let max_in_flight = max_in_flight.max(1);
        let burst = max_in_flight as f64;
        Limiter {
            max_in_flight,
            rate_per_sec: rate_per_sec.filter(|r| *r > 0.0),
            burst,
            state: Mutex::new(State {
                in_flight: 0,
                peak: 0,
                tokens: burst,
                refilled_at: Instant::now(),
            }),
            freed: Condvar::new(),
        }
    }

    /// Blocks until a slot is free and a token is available.
    pub fn acquire(&self) -> Permit<'_> {
        let mut state = self.state.lock().unwrap_or_else(|e| e.into_inner());
        loop {
            while state.in_flight >= self.max_in_flight {
                state = self.freed.wait(state).unwrap_or_else(|e| e.into_inner());
            }
            let Some(rate) = self.rate_per_sec else { break };
            let now = Instant::now();
            let elapsed = now.duration_since(state.refilled_at).as_secs_f64();
            state.tokens = (state.tokens + elapsed * rate).min(self.burst);
            state.refilled_at = now;
            if state.tokens >= 1.0 {
                state.tokens -= 1.0;
                break;
            }
            let wait = Duration::from_secs_f64((1.0 - state.tokens) / rate);
            state = self
                .freed
                .wait_timeout(state, wait)
                .unwrap_or_else(|e| e.into_inner())
                .0;
        }
        state.in_flight += 1;
        state.peak = state.peak.max(state.in_flight);
        Permit { limiter: self }
    }

    /// Largest number of simultaneous permits observed so far.
    pub fn peak_in_flight(&self) -> usize {
        self.state.lock().unwrap_or_else(|e| e.into_inner()).peak
    }

    pub fn max_in_flight(&self) -> usize {
        self.max_in_flight
    }
}
