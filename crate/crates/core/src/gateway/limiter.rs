use std::sync::{Condvar, Mutex};

/// Counting semaphore that admits waiters in arrival order.
#[derive(Debug)]
pub struct InFlightLimiter {
    limit: usize,
    state: Mutex<State>,
    cv: Condvar,
}

#[derive(Debug, Default)]
struct State {
    in_flight: usize,
    next_ticket: u64,
    serving: u64,
}

pub struct Permit<'a> {
    limiter: &'a InFlightLimiter,
}

impl InFlightLimiter {
    pub fn new(limit: usize) -> Self {
        Self {
            limit: limit.max(1),
            state: Mutex::new(State::default()),
            cv: Condvar::new(),
        }
    }

    pub fn limit(&self) -> usize {
        self.limit
    }

    pub fn in_flight(&self) -> usize {
        self.state.lock().unwrap().in_flight
    }

    /// Block until a slot is free and every earlier caller has been admitted.
    pub fn acquire(&self) -> Permit<'_> {
        let mut st = self.state.lock().unwrap();
        let ticket = st.next_ticket;
        st.next_ticket += 1;
        while st.serving != ticket || st.in_flight >= self.limit {
            st = self.cv.wait(st).unwrap();
        }
        st.serving += 1;
        st.in_flight += 1;
        drop(st);
        // the next ticket holder may now be admissible
        self.cv.notify_all();
        Permit { limiter: self }
    }
}

impl Drop for Permit<'_> {
    fn drop(&mut self) {
        let mut st = self.limiter.state.lock().unwrap();
        st.in_flight -= 1;
        drop(st);
        self.limiter.cv.notify_all();
    }
}
