//! Timestamped directed events.
//!
//! Node indices are 0-based in memory; files and reports use 1-based ids.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Event {
    pub sender: usize,
    pub receiver: usize,
    pub time: f64,
}

impl Event {
    pub fn new(sender: usize, receiver: usize, time: f64) -> Self {
        Self {
            sender,
            receiver,
            time,
        }
    }
}

/// Events on `n` nodes over `(0, tau]`, sorted by (time, sender, receiver).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EventStream {
    n: usize,
    tau: f64,
    events: Vec<Event>,
}

impl EventStream {
    pub fn new(n: usize, tau: f64, mut events: Vec<Event>) -> Result<Self> {
        if n < 2 {
            return Err(Error::InvalidEvents(format!("need at least 2 nodes, got {n}")));
        }
        if !(tau > 0.0 && tau.is_finite()) {
            return Err(Error::InvalidEvents(format!("horizon must be positive, got {tau}")));
        }
        for (k, e) in events.iter().enumerate() {
            if e.sender >= n || e.receiver >= n {
                return Err(Error::InvalidEvents(format!(
                    "event {k}: node index out of range for n = {n}"
                )));
            }
            if e.sender == e.receiver {
                return Err(Error::InvalidEvents(format!(
                    "event {k}: self-loop on node {}",
                    e.sender + 1
                )));
            }
            if !(e.time > 0.0 && e.time <= tau) {
                return Err(Error::InvalidEvents(format!(
                    "event {k}: time {} outside (0, {tau}]",
                    e.time
                )));
            }
        }
        events.sort_by(|a, b| {
            a.time
                .total_cmp(&b.time)
                .then(a.sender.cmp(&b.sender))
                .then(a.receiver.cmp(&b.receiver))
        });
        Ok(Self { n, tau, events })
    }

    pub fn empty(n: usize, tau: f64) -> Result<Self> {
        Self::new(n, tau, Vec::new())
    }

    pub fn n(&self) -> usize {
        self.n
    }

    pub fn tau(&self) -> f64 {
        self.tau
    }

    pub fn events(&self) -> &[Event] {
        &self.events
    }

    pub fn len(&self) -> usize {
        self.events.len()
    }

    pub fn is_empty(&self) -> bool {
        self.events.is_empty()
    }

    /// Events with time in `[lo, hi]`.
    pub fn window(&self, lo: f64, hi: f64) -> &[Event] {
        let a = self.events.partition_point(|e| e.time < lo);
        let b = self.events.partition_point(|e| e.time <= hi);
        &self.events[a..b.max(a)]
    }

    /// Per-dyad event counts, row-major `n × n`.
    pub fn dyad_counts(&self) -> Vec<usize> {
        let mut c = vec![0; self.n * self.n];
        for e in &self.events {
            c[e.sender * self.n + e.receiver] += 1;
        }
        c
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn sorts_canonically() {
        let es = EventStream::new(
            3,
            1.0,
            vec![
                Event::new(2, 0, 0.5),
                Event::new(0, 1, 0.5),
                Event::new(1, 0, 0.2),
            ],
        )
        .unwrap();
        let order: Vec<_> = es.events().iter().map(|e| (e.sender, e.receiver)).collect();
        assert_eq!(order, vec![(1, 0), (0, 1), (2, 0)]);
    }

    #[test]
    fn rejects_invalid() {
        assert!(EventStream::new(3, 1.0, vec![Event::new(1, 1, 0.5)]).is_err());
        assert!(EventStream::new(3, 1.0, vec![Event::new(0, 3, 0.5)]).is_err());
        assert!(EventStream::new(3, 1.0, vec![Event::new(0, 1, 0.0)]).is_err());
        assert!(EventStream::new(3, 1.0, vec![Event::new(0, 1, 1.5)]).is_err());
        assert!(EventStream::new(3, 1.0, vec![Event::new(0, 1, 1.0)]).is_ok());
    }

    #[test]
    fn window_is_inclusive() {
        let ev = (1..10).map(|k| Event::new(0, 1, k as f64 / 10.0)).collect();
        let es = EventStream::new(2, 1.0, ev).unwrap();
        assert_eq!(es.window(0.3, 0.5).len(), 3);
        assert_eq!(es.window(0.95, 2.0).len(), 0);
        assert_eq!(es.window(0.7, 0.2).len(), 0);
    }
}
