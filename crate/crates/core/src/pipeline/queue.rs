//! Bounded FIFO queue connecting pipeline stages.
//!
//! Blocking pushes wait for space; `push_drop_oldest` evicts the head
//! instead. Dropping either end closes the queue: pops drain what is left and
//! then return `None`, pushes fail immediately.

use std::collections::VecDeque;
use std::sync::{Arc, Condvar, Mutex};

struct State<T> {
    items: VecDeque<T>,
    sender_alive: bool,
    receiver_alive: bool,
}

struct Shared<T> {
    state: Mutex<State<T>>,
    not_empty: Condvar,
    not_full: Condvar,
    capacity: usize,
}

pub struct Sender<T> {
    shared: Arc<Shared<T>>,
}

pub struct Receiver<T> {
    shared: Arc<Shared<T>>,
}

/// Creates a queue holding at most `capacity` items (at least one).
pub fn bounded<T>(capacity: usize) -> (Sender<T>, Receiver<T>) {
    let shared = Arc::new(Shared {
        state: Mutex::new(State {
            items: VecDeque::with_capacity(capacity.max(1)),
            sender_alive: true,
            receiver_alive: true,
        }),
        not_empty: Condvar::new(),
        not_full: Condvar::new(),
        capacity: capacity.max(1),
    });
    (
        Sender {
            shared: Arc::clone(&shared),
        },
        Receiver { shared },
    )
}

impl<T> Sender<T> {
    /// Waits for space. Returns the item back if the receiver is gone.
    pub fn push(&self, item: T) -> Result<(), T> {
        let mut state = self.shared.state.lock().unwrap();
        loop {
            if !state.receiver_alive {
                return Err(item);
            }
            if state.items.len() < self.shared.capacity {
                state.items.push_back(item);
                self.shared.not_empty.notify_one();
                return Ok(());
            }
            state = self.shared.not_full.wait(state).unwrap();
        }
    }

    /// Never waits. When full, the oldest queued item is evicted and returned.
    pub fn push_drop_oldest(&self, item: T) -> Result<Option<T>, T> {
        let mut state = self.shared.state.lock().unwrap();
        if !state.receiver_alive {
            return Err(item);
        }
        let evicted = if state.items.len() >= self.shared.capacity {
            state.items.pop_front()
        } else {
            None
        };
        state.items.push_back(item);
        self.shared.not_empty.notify_one();
        Ok(evicted)
    }
}

impl<T> Drop for Sender<T> {
    fn drop(&mut self) {
        let mut state = self.shared.state.lock().unwrap();
        state.sender_alive = false;
        self.shared.not_empty.notify_all();
    }
}

impl<T> Receiver<T> {
    /// Next item, or `None` once the sender is gone and the queue is drained.
    pub fn pop(&self) -> Option<T> {
        let mut state = self.shared.state.lock().unwrap();
        loop {
            if let Some(item) = state.items.pop_front() {
                self.shared.not_full.notify_one();
                return Some(item);
            }
            if !state.sender_alive {
                return None;
            }
            state = self.shared.not_empty.wait(state).unwrap();
        }
    }

    pub fn len(&self) -> usize {
        self.shared.state.lock().unwrap().items.len()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }
}

impl<T> Drop for Receiver<T> {
    fn drop(&mut self) {
        let mut state = self.shared.state.lock().unwrap();
        state.receiver_alive = false;
        state.items.clear();
        self.shared.not_full.notify_all();
    }
}

impl<T> Iterator for Receiver<T> {
    type Item = T;

    fn next(&mut self) -> Option<T> {
        self.pop()
    }
}
