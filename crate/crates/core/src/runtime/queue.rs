use std::collections::VecDeque;
use std::sync::{Arc, Condvar, Mutex};
use std::time::Duration;

use serde::{Deserialize, Serialize};

use crate::Ms;

/// A completed call's result waiting for injection.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct QueuedInterrupt {
    pub id: String,
    pub value: String,
    pub enqueued_at_ms: Ms,
}

/// FIFO of pending interrupts. Workers push from any thread; the decode
/// loop is the only consumer.
#[derive(Debug, Clone, Default)]
pub struct InterruptQueue {
    inner: Arc<(Mutex<VecDeque<QueuedInterrupt>>, Condvar)>,
}

impl InterruptQueue {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn push(&self, entry: QueuedInterrupt) {
        let (lock, cv) = &*self.inner;
        lock.lock().expect("queue lock").push_back(entry);
        cv.notify_all();
    }

    pub fn drain(&self) -> Vec<QueuedInterrupt> {
        self.inner.0.lock().expect("queue lock").drain(..).collect()
    }

    pub fn len(&self) -> usize {
        self.inner.0.lock().expect("queue lock").len()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    /// Blocks until the queue is non-empty or `timeout` passes. Returns
    /// whether anything is queued.
    pub fn wait_timeout(&self, timeout: Duration) -> bool {
        let (lock, cv) = &*self.inner;
        let guard = lock.lock().expect("queue lock");
        let (guard, _) = cv.wait_timeout_while(guard, timeout, |q| q.is_empty()).expect("queue lock");
        !guard.is_empty()
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use std::thread;

    fn entry(id: &str) -> QueuedInterrupt {
        QueuedInterrupt { id: id.into(), value: "v".into(), enqueued_at_ms: 0.0 }
    }

    #[test]
    fn fifo_across_producers() {
        let q = InterruptQueue::new();
        let handles: Vec<_> = (0..4)
            .map(|w| {
                let q = q.clone();
                thread::spawn(move || {
                    for i in 0..50 {
                        q.push(entry(&format!("w{w}_{i}")));
                    }
                })
            })
            .collect();
        for h in handles {
            h.join().unwrap();
        }
        let all = q.drain();
        assert_eq!(all.len(), 200);
        // each producer's entries keep their relative order
        for w in 0..4 {
            let mine: Vec<usize> = all
                .iter()
                .filter_map(|e| e.id.strip_prefix(&format!("w{w}_")).map(|i| i.parse().unwrap()))
                .collect();
            assert_eq!(mine, (0..50).collect::<Vec<_>>());
        }
        assert!(q.is_empty());
    }

    #[test]
    fn wait_wakes_on_push() {
        let q = InterruptQueue::new();
        let p = q.clone();
        let t = thread::spawn(move || {
            thread::sleep(Duration::from_millis(10));
            p.push(entry("a"));
        });
        assert!(q.wait_timeout(Duration::from_secs(5)));
        t.join().unwrap();
        assert!(!InterruptQueue::new().wait_timeout(Duration::from_millis(1)));
    }
}
