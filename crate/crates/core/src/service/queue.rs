use std::collections::VecDeque;
use std::sync::{Condvar, Mutex};
use std::time::Duration;

/// Result of waiting on a [`FreshestQueue`].
#[derive(Debug, PartialEq, Eq)]
pub enum Pop<T> {
    Item(T),
    TimedOut,
    Closed,
}

/// Bounded FIFO that makes room for a new item by evicting the oldest.
pub struct FreshestQueue<T> {
    capacity: usize,
    state: Mutex<State<T>>,
    ready: Condvar,
}

struct State<T> {
    items: VecDeque<T>,
    closed: bool,
}

impl<T> FreshestQueue<T> {
    pub fn new(capacity: usize) -> Self {
        assert!(capacity > 0, "queue capacity must be positive");
        Self { capacity, state: Mutex::new(State { items: VecDeque::new(), closed: false }), ready: Condvar::new() }
    }

    pub fn capacity(&self) -> usize {
        self.capacity
    }

    pub fn len(&self) -> usize {
        self.state.lock().unwrap().items.len()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    /// Enqueues `item`. Returns the evicted oldest item when the queue was
    /// full, or `item` itself once the queue is closed.
    pub fn push(&self, item: T) -> Option<T> {
        let mut state = self.state.lock().unwrap();
        if state.closed {
            return Some(item);
        }
        let evicted = if state.items.len() == self.capacity { state.items.pop_front() } else { None };
        state.items.push_back(item);
        drop(state);
        self.ready.notify_one();
        evicted
    }

    /// Waits up to `timeout` for the oldest item. Items still queued at
    /// close are delivered before [`Pop::Closed`].
    pub fn pop_timeout(&self, timeout: Duration) -> Pop<T> {
        let state = self.state.lock().unwrap();
        let (mut state, _) =
            self.ready.wait_timeout_while(state, timeout, |s| s.items.is_empty() && !s.closed).unwrap();
        match state.items.pop_front() {
            Some(item) => Pop::Item(item),
            None if state.closed => Pop::Closed,
            None => Pop::TimedOut,
        }
    }

    pub fn close(&self) {
        self.state.lock().unwrap().closed = true;
        self.ready.notify_all();
    }
}
