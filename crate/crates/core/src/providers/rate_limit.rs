//! Fixed-window per-user request quotas.

use std::collections::HashMap;
use std::sync::atomic::{AtomicU64, Ordering};
use std::sync::{Arc, Mutex};
use std::time::{Duration, Instant};

use serde::Serialize;

pub trait Clock: Send + Sync {
    /// Time elapsed since an arbitrary fixed origin.
    fn now(&self) -> Duration;
}

#[derive(Debug)]
pub struct SystemClock {
    origin: Instant,
}

impl Default for SystemClock {
    fn default() -> Self {
        SystemClock {
            origin: Instant::now(),
        }
    }
}

impl Clock for SystemClock {
    fn now(&self) -> Duration {
        self.origin.elapsed()
    }
}

/// Clock advanced explicitly, for tests.
#[derive(Debug, Default)]
pub struct ManualClock {
    millis: AtomicU64,
}

impl ManualClock {
    pub fn new() -> Self {
        ManualClock::default()
    }

    pub fn advance(&self, by: Duration) {
        self.millis.fetch_add(by.as_millis() as u64, Ordering::SeqCst);
    }
}

impl Clock for ManualClock {
    fn now(&self) -> Duration {
        Duration::from_millis(self.millis.load(Ordering::SeqCst))
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
pub struct Permit {
    pub remaining: u32,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
pub struct Refusal {
    pub remaining: u32,
    pub retry_after: Duration,
}

#[derive(Debug, Clone, Copy)]
struct Window {
    start: Duration,
    used: u32,
}

/// At most `limit` permits per user per window. A user's window opens at
/// their first request and lasts `window`.
pub struct RateLimiter {
    limit: u32,
    window: Duration,
    clock: Arc<dyn Clock>,
    users: Mutex<HashMap<String, Window>>,
}

impl RateLimiter {
    pub fn new(limit: u32, window: Duration) -> Self {
        RateLimiter::with_clock(limit, window, Arc::new(SystemClock::default()))
    }

    pub fn with_clock(limit: u32, window: Duration, clock: Arc<dyn Clock>) -> Self {
        RateLimiter {
            limit,
            window,
            clock,
            users: Mutex::new(HashMap::new()),
        }
    }

    pub fn limit(&self) -> u32 {
        self.limit
    }

    fn live_window(&self, users: &HashMap<String, Window>, user: &str, now: Duration) -> Option<Window> {
        users
            .get(user)
            .copied()
            .filter(|w| now < w.start + self.window)
    }

    /// Consume one request from `user`'s quota.
    pub fn check(&self, user: &str) -> Result<Permit, Refusal> {
        let now = self.clock.now();
        let mut users = self.users.lock().unwrap();
        let mut window = self
            .live_window(&users, user, now)
            .unwrap_or(Window { start: now, used: 0 });
        if window.used >= self.limit {
            return Err(Refusal {
                remaining: 0,
                retry_after: window.start + self.window - now,
            });
        }
        window.used += 1;
        users.insert(user.to_string(), window);
        Ok(Permit {
            remaining: self.limit - window.used,
        })
    }

    /// Remaining quota without consuming any.
    pub fn remaining(&self, user: &str) -> u32 {
        let now = self.clock.now();
        let users = self.users.lock().unwrap();
        let used = self.live_window(&users, user, now).map_or(0, |w| w.used);
        self.limit.saturating_sub(used)
    }

    /// Return one permit to `user`, for requests rejected before doing any work.
    pub fn refund(&self, user: &str) {
        let now = self.clock.now();
        let mut users = self.users.lock().unwrap();
        if let Some(mut window) = self.live_window(&users, user, now) {
            window.used = window.used.saturating_sub(1);
            users.insert(user.to_string(), window);
        }
    }
}

pub fn check_rate_limit(user_id: &str, limiter: &RateLimiter) -> Result<Permit, Refusal> {
    limiter.check(user_id)
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    #[test]
    fn fourth_request_refused() {
        let limiter = RateLimiter::new(3, Duration::from_secs(3600));
        assert_eq!(limiter.check("u").unwrap().remaining, 2);
        assert_eq!(limiter.check("u").unwrap().remaining, 1);
        assert_eq!(limiter.check("u").unwrap().remaining, 0);
        let refusal = limiter.check("u").unwrap_err();
        assert_eq!(refusal.remaining, 0);
    }

    #[test]
    fn users_do_not_share_quota() {
        let limiter = RateLimiter::new(1, Duration::from_secs(60));
        assert!(limiter.check("a").is_ok());
        assert!(limiter.check("b").is_ok());
        assert!(limiter.check("a").is_err());
    }

    #[test]
    fn quota_query_is_free() {
        let limiter = RateLimiter::new(2, Duration::from_secs(60));
        for _ in 0..10 {
            assert_eq!(limiter.remaining("u"), 2);
        }
        limiter.check("u").unwrap();
        assert_eq!(limiter.remaining("u"), 1);
    }

    #[test]
    fn window_expiry_resets() {
        let clock = Arc::new(ManualClock::new());
        let limiter = RateLimiter::with_clock(2, Duration::from_secs(60), clock.clone());
        limiter.check("u").unwrap();
        clock.advance(Duration::from_secs(30));
        limiter.check("u").unwrap();
        let refusal = limiter.check("u").unwrap_err();
        assert_eq!(refusal.retry_after, Duration::from_secs(30));
        clock.advance(Duration::from_secs(30));
        assert_eq!(limiter.remaining("u"), 2);
        assert_eq!(limiter.check("u").unwrap().remaining, 1);
    }

    proptest! {
        #[test]
        fn permits_per_window_never_exceed_limit(
            limit in 1u32..5,
            events in prop::collection::vec((0usize..4, 0u64..50), 0..200),
        ) {
            let clock = Arc::new(ManualClock::new());
            let window = Duration::from_secs(100);
            let limiter = RateLimiter::with_clock(limit, window, clock.clone());
            // (user, window start) -> permits observed
            let mut starts: HashMap<usize, u64> = HashMap::new();
            let mut counts: HashMap<(usize, u64), u32> = HashMap::new();
            let mut now = 0u64;
            for (user, step) in events {
                clock.advance(Duration::from_secs(step));
                now += step;
                let start = starts.entry(user).or_insert(now);
                if now >= *start + 100 { *start = now; }
                if limiter.check(&format!("user{user}")).is_ok() {
                    let c = counts.entry((user, *start)).or_default();
                    *c += 1;
                    prop_assert!(*c <= limit);
                }
            }
        }
    }
}
