use std::collections::VecDeque;
use std::sync::Mutex;
use std::time::{Duration, Instant};

use rand::rngs::StdRng;
use rand::{Rng, SeedableRng};

/// Time source used by the limiter and retry backoff.
pub trait Clock: Send + Sync {
    /// Time elapsed since an arbitrary fixed origin.
    fn now(&self) -> Duration;
    fn sleep(&self, d: Duration);
}

pub struct SystemClock {
    origin: Instant,
}

impl Default for SystemClock {
    fn default() -> Self {
        SystemClock { origin: Instant::now() }
    }
}

impl Clock for SystemClock {
    fn now(&self) -> Duration {
        self.origin.elapsed()
    }

    fn sleep(&self, d: Duration) {
        std::thread::sleep(d);
    }
}

/// Manually driven clock; `sleep` advances time instantly.
#[derive(Default)]
pub struct SimulatedClock {
    now: Mutex<Duration>,
    slept: Mutex<Vec<Duration>>,
}

impl SimulatedClock {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn advance(&self, d: Duration) {
        *self.now.lock().unwrap() += d;
    }

    /// Every duration passed to `sleep`, in call order.
    pub fn sleeps(&self) -> Vec<Duration> {
        self.slept.lock().unwrap().clone()
    }
}

impl Clock for SimulatedClock {
    fn now(&self) -> Duration {
        *self.now.lock().unwrap()
    }

    fn sleep(&self, d: Duration) {
        self.slept.lock().unwrap().push(d);
        self.advance(d);
    }
}

/// Sliding-window limiter: at most `per_minute` acquisitions in any 60 s
/// window.
pub struct RateLimiter {
    per_minute: usize,
    window: Duration,
    issued: Mutex<VecDeque<Duration>>,
}

impl RateLimiter {
    pub fn per_minute(per_minute: u32) -> Self {
        RateLimiter {
            per_minute: per_minute.max(1) as usize,
            window: Duration::from_secs(60),
            issued: Mutex::new(VecDeque::new()),
        }
    }

    /// Blocks (via `clock.sleep`) until a request may be issued, then
    /// records it. Returns the issue time.
    pub fn acquire(&self, clock: &dyn Clock) -> Duration {
        loop {
            let wait = {
                let mut issued = self.issued.lock().unwrap();
                let now = clock.now();
                while issued.front().is_some_and(|&t| t + self.window <= now) {
                    issued.pop_front();
                }
                if issued.len() < self.per_minute {
                    issued.push_back(now);
                    return now;
                }
                issued[0] + self.window - now
            };
            clock.sleep(wait);
        }
    }
}

/// Exponential backoff with full jitter: the delay before retry `n`
/// (0-based) is uniform in `[0, min(cap, base * factor^n)]`.
pub struct Backoff {
    pub base: Duration,
    pub factor: f64,
    pub cap: Duration,
    rng: Mutex<StdRng>,
}

impl Backoff {
    pub fn new(seed: Option<u64>) -> Self {
        let rng = match seed {
            Some(s) => StdRng::seed_from_u64(s),
            None => StdRng::from_os_rng(),
        };
        Backoff {
            base: Duration::from_secs(1),
            factor: 2.0,
            cap: Duration::from_secs(60),
            rng: Mutex::new(rng),
        }
    }

    pub fn ceiling(&self, retry: u32) -> Duration {
        let exp = self.base.as_secs_f64() * self.factor.powi(retry.min(63) as i32);
        Duration::from_secs_f64(exp.min(self.cap.as_secs_f64()))
    }

    pub fn delay(&self, retry: u32) -> Duration {
        let ceiling = self.ceiling(retry).as_secs_f64();
        let u: f64 = self.rng.lock().unwrap().random_range(0.0..=1.0);
        Duration::from_secs_f64(ceiling * u)
    }
}
