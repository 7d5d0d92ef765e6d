//! Bounded single-producer/single-consumer channel between stage workers.

use std::collections::VecDeque;
use std::sync::{Condvar, Mutex};

/// What a full queue does with a new item.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, serde::Serialize, serde::Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum QueuePolicy {
    /// The producer waits for space.
    #[default]
    Block,
    /// The oldest queued item is discarded. Control messages are never dropped.
    DropOldest,
}

/// Item carried between stages; `Flush` marks the end of the input.
#[derive(Debug)]
pub enum Message<T> {
    Item(T),
    Flush,
}

/// The queue has been closed by the other side.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Closed;

#[derive(Debug)]
struct State<T> {
    items: VecDeque<Message<T>>,
    closed: bool,
    dropped: u64,
    high_water: usize,
}

#[derive(Debug)]
pub struct BoundedQueue<T> {
    capacity: usize,
    policy: QueuePolicy,
    state: Mutex<State<T>>,
    not_empty: Condvar,
    not_full: Condvar,
}

/// Outcome of a successful push.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Pushed {
    Queued,
    /// Queued after discarding the oldest item.
    Displaced,
}

impl<T> BoundedQueue<T> {
    pub fn new(capacity: usize, policy: QueuePolicy) -> Self {
        Self {
            capacity: capacity.max(1),
            policy,
            state: Mutex::new(State {
                items: VecDeque::new(),
                closed: false,
                dropped: 0,
                high_water: 0,
            }),
            not_empty: Condvar::new(),
            not_full: Condvar::new(),
        }
    }

    pub fn capacity(&self) -> usize {
        self.capacity
    }

    pub fn push(&self, msg: Message<T>) -> Result<Pushed, Closed> {
        let mut s = self.state.lock().expect("queue lock");
        let mut outcome = Pushed::Queued;
        loop {
            if s.closed {
                return Err(Closed);
            }
            if s.items.len() < self.capacity || matches!(msg, Message::Flush) {
                break;
            }
            if self.policy == QueuePolicy::DropOldest {
                if let Some(pos) = s.items.iter().position(|m| matches!(m, Message::Item(_))) {
                    s.items.remove(pos);
                    s.dropped += 1;
                    outcome = Pushed::Displaced;
                    break;
                }
            }
            s = self.not_full.wait(s).expect("queue lock");
        }
        s.items.push_back(msg);
        s.high_water = s.high_water.max(s.items.len());
        drop(s);
        self.not_empty.notify_one();
        Ok(outcome)
    }

    /// Next message, or `None` once the queue is closed and drained.
    pub fn pop(&self) -> Option<Message<T>> {
        let mut s = self.state.lock().expect("queue lock");
        loop {
            if let Some(m) = s.items.pop_front() {
                drop(s);
                self.not_full.notify_one();
                return Some(m);
            }
            if s.closed {
                return None;
            }
            s = self.not_empty.wait(s).expect("queue lock");
        }
    }

    /// Wakes both sides; further pushes fail and pops drain what is left.
    pub fn close(&self) {
        self.state.lock().expect("queue lock").closed = true;
        self.not_empty.notify_all();
        self.not_full.notify_all();
    }

    pub fn len(&self) -> usize {
        self.state.lock().expect("queue lock").items.len()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn dropped(&self) -> u64 {
        self.state.lock().expect("queue lock").dropped
    }

    /// Largest length observed.
    pub fn high_water(&self) -> usize {
        self.state.lock().expect("queue lock").high_water
    }
}
