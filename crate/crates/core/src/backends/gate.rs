use std::collections::VecDeque;
use std::sync::{Condvar, Mutex, MutexGuard};
use std::time::{Duration, Instant};

use serde::{Deserialize, Serialize};
use thiserror::Error;

/// Admission ceiling for one backend. Absent fields mean no limit on that axis.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
pub struct RatePolicy {
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub max_in_flight: Option<usize>,
    /// At most this many admissions in any sliding window of `interval_ms`.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub max_requests: Option<u32>,
    #[serde(default = "default_interval_ms")]
    pub interval_ms: u64,
}

fn default_interval_ms() -> u64 {
    60_000
}

impl RatePolicy {
    pub fn unlimited() -> Self {
        Self {
            max_in_flight: None,
            max_requests: None,
            interval_ms: default_interval_ms(),
        }
    }

    pub fn in_flight(n: usize) -> Self {
        Self {
            max_in_flight: Some(n),
            ..Self::unlimited()
        }
    }

    pub fn per_interval(n: u32, interval: Duration) -> Self {
        Self {
            max_in_flight: None,
            max_requests: Some(n),
            interval_ms: interval.as_millis() as u64,
        }
    }
}

#[derive(Debug, Error, Clone, Copy, PartialEq, Eq)]
#[error("rate gate shut down")]
pub struct GateClosed;

#[derive(Debug, Default)]
struct GateState {
    in_flight: usize,
    admitted: VecDeque<Instant>,
    closed: bool,
}

/// Counting and sliding-window admission control shared by concurrent callers.
#[derive(Debug)]
pub struct RateGate {
    policy: RatePolicy,
    state: Mutex<GateState>,
    changed: Condvar,
}

/// Holds one in-flight slot until dropped.
#[derive(Debug)]
pub struct GatePermit<'a> {
    gate: &'a RateGate,
}

impl Drop for GatePermit<'_> {
    fn drop(&mut self) {
        let mut st = self.gate.lock();
        st.in_flight -= 1;
        drop(st);
        self.gate.changed.notify_all();
    }
}

impl RateGate {
    pub fn new(policy: RatePolicy) -> Self {
        Self {
            policy,
            state: Mutex::new(GateState::default()),
            changed: Condvar::new(),
        }
    }

    pub fn policy(&self) -> RatePolicy {
        self.policy
    }

    fn lock(&self) -> MutexGuard<'_, GateState> {
        self.state.lock().unwrap_or_else(|e| e.into_inner())
    }

    /// Block until admitted, or until [`RateGate::shutdown`] is called.
    pub fn acquire(&self) -> Result<GatePermit<'_>, GateClosed> {
        let window = Duration::from_millis(self.policy.interval_ms);
        let mut st = self.lock();
        loop {
            if st.closed {
                return Err(GateClosed);
            }
            let now = Instant::now();
            while st
                .admitted
                .front()
                .is_some_and(|t| now.duration_since(*t) >= window)
            {
                st.admitted.pop_front();
            }
            let slot_free = self.policy.max_in_flight.is_none_or(|n| st.in_flight < n);
            let window_wait = match self.policy.max_requests {
                Some(n) if st.admitted.len() >= n as usize => {
                    let oldest = st.admitted[st.admitted.len() - n as usize];
                    Some((oldest + window).saturating_duration_since(now))
                }
                _ => None,
            };
            match (slot_free, window_wait) {
                (true, None) => {
                    st.in_flight += 1;
                    if self.policy.max_requests.is_some() {
                        st.admitted.push_back(now);
                    }
                    return Ok(GatePermit { gate: self });
                }
                (_, Some(wait)) => {
                    st = self
                        .changed
                        .wait_timeout(st, wait.max(Duration::from_millis(1)))
                        .unwrap_or_else(|e| e.into_inner())
                        .0;
                }
                (false, None) => {
                    st = self.changed.wait(st).unwrap_or_else(|e| e.into_inner());
                }
            }
        }
    }

    pub fn shutdown(&self) {
        self.lock().closed = true;
        self.changed.notify_all();
    }

    pub fn in_flight(&self) -> usize {
        self.lock().in_flight
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use std::sync::atomic::{AtomicUsize, Ordering};
    use std::sync::Arc;
    use std::thread;

    #[test]
    fn in_flight_ceiling() {
        let gate = Arc::new(RateGate::new(RatePolicy::in_flight(2)));
        let a = gate.acquire().unwrap();
        let _b = gate.acquire().unwrap();
        let admitted = Arc::new(AtomicUsize::new(0));
        let h = {
            let gate = gate.clone();
            let admitted = admitted.clone();
            thread::spawn(move || {
                let _c = gate.acquire().unwrap();
                admitted.fetch_add(1, Ordering::SeqCst);
            })
        };
        thread::sleep(Duration::from_millis(50));
        assert_eq!(admitted.load(Ordering::SeqCst), 0, "third caller must wait");
        drop(a);
        h.join().unwrap();
        assert_eq!(admitted.load(Ordering::SeqCst), 1);
    }

    #[test]
    fn window_ceiling() {
        let interval = Duration::from_millis(150);
        let gate = RateGate::new(RatePolicy::per_interval(10, interval));
        let start = Instant::now();
        for _ in 0..10 {
            drop(gate.acquire().unwrap());
        }
        assert!(start.elapsed() < interval);
        drop(gate.acquire().unwrap());
        assert!(start.elapsed() >= interval);
    }

    #[test]
    fn unlimited_never_blocks() {
        let gate = RateGate::new(RatePolicy::unlimited());
        let permits: Vec<_> = (0..100).map(|_| gate.acquire().unwrap()).collect();
        assert_eq!(gate.in_flight(), 100);
        drop(permits);
        assert_eq!(gate.in_flight(), 0);
    }

    #[test]
    fn shutdown_cancels_waiters() {
        let gate = Arc::new(RateGate::new(RatePolicy::in_flight(1)));
        let _held = gate.acquire().unwrap();
        let h = {
            let gate = gate.clone();
            thread::spawn(move || gate.acquire().map(|_| ()))
        };
        thread::sleep(Duration::from_millis(30));
        gate.shutdown();
        assert_eq!(h.join().unwrap(), Err(GateClosed));
    }
}
