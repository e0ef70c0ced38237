//! First-come first-served buffer manager.

use std::collections::VecDeque;
use std::sync::{Condvar, Mutex};

pub struct BufferManager {
    capacity: u64,
    state: Mutex<State>,
    cv: Condvar,
}

struct State {
    available: u64,
    queue: VecDeque<u64>,
    next_ticket: u64,
}

/// Buffer space held until dropped.
pub struct Grant<'a> {
    mgr: &'a BufferManager,
    bytes: u64,
}

impl Grant<'_> {
    pub fn bytes(&self) -> u64 {
        self.bytes
    }
}

impl Drop for Grant<'_> {
    fn drop(&mut self) {
        let mut s = self.mgr.state.lock().unwrap();
        s.available += self.bytes;
        self.mgr.cv.notify_all();
    }
}

impl BufferManager {
    pub fn new(capacity: u64) -> Self {
        BufferManager {
            capacity,
            state: Mutex::new(State {
                available: capacity,
                queue: VecDeque::new(),
                next_ticket: 0,
            }),
            cv: Condvar::new(),
        }
    }

    pub fn capacity(&self) -> u64 {
        self.capacity
    }

    /// Grants `min(want, capacity)` bytes once every earlier request has been
    /// served and enough space is free.
    pub fn acquire(&self, want: u64) -> Grant<'_> {
        let bytes = want.clamp(1, self.capacity);
        let mut s = self.state.lock().unwrap();
        let ticket = s.next_ticket;
        s.next_ticket += 1;
        s.queue.push_back(ticket);
        while s.queue.front() != Some(&ticket) || s.available < bytes {
            s = self.cv.wait(s).unwrap();
        }
        s.queue.pop_front();
        s.available -= bytes;
        self.cv.notify_all();
        Grant { mgr: self, bytes }
    }

    /// Bytes currently free.
    pub fn available(&self) -> u64 {
        self.state.lock().unwrap().available
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use std::sync::mpsc;
    use std::sync::Arc;
    use std::thread;
    use std::time::Duration;

    #[test]
    fn grant_is_capped() {
        let m = BufferManager::new(8192);
        let g = m.acquire(20 * 1024);
        assert_eq!(g.bytes(), 8192);
        drop(g);
        assert_eq!(m.acquire(1).bytes(), 1);
    }

    #[test]
    fn second_full_request_waits_for_the_first() {
        let m = Arc::new(BufferManager::new(8192));
        let first = m.acquire(8192);
        let (tx, rx) = mpsc::channel();
        let m2 = m.clone();
        let h = thread::spawn(move || {
            let g = m2.acquire(8192);
            tx.send(g.bytes()).unwrap();
        });
        assert!(rx.recv_timeout(Duration::from_millis(100)).is_err());
        drop(first);
        assert_eq!(rx.recv_timeout(Duration::from_secs(5)).unwrap(), 8192);
        h.join().unwrap();
    }

    #[test]
    fn waiters_are_served_in_arrival_order() {
        let m = Arc::new(BufferManager::new(100));
        let hold = m.acquire(100);
        let order = Arc::new(std::sync::Mutex::new(Vec::new()));
        let mut hs = Vec::new();
        for i in 0..5u64 {
            let (m2, order) = (m.clone(), order.clone());
            hs.push(thread::spawn(move || {
                // large then small: a small late request may not overtake
                let g = m2.acquire(if i % 2 == 0 { 100 } else { 10 });
                order.lock().unwrap().push(i);
                thread::sleep(Duration::from_millis(5));
                drop(g);
            }));
            // make arrival order deterministic
            while m.state.lock().unwrap().queue.len() < i as usize + 1 {
                thread::yield_now();
            }
        }
        drop(hold);
        for h in hs {
            h.join().unwrap();
        }
        assert_eq!(*order.lock().unwrap(), vec![0, 1, 2, 3, 4]);
    }
}
