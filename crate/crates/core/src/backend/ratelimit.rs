use std::time::Duration;

use tokio::sync::Mutex;
use tokio::time::Instant;

/// Token bucket: at most `capacity` requests in a burst, refilled at
/// `per_minute / 60` tokens per second.
#[derive(Debug)]
pub struct TokenBucket {
    capacity: f64,
    refill_per_s: f64,
    state: Mutex<(f64, Instant)>,
}

impl TokenBucket {
    pub fn per_minute(per_minute: f64, capacity: u32) -> Self {
        let capacity = f64::from(capacity.max(1));
        Self {
            capacity,
            refill_per_s: per_minute / 60.0,
            state: Mutex::new((capacity, Instant::now())),
        }
    }

    /// Waits until a token is available and takes it.
    pub async fn acquire(&self) {
        loop {
            let wait = {
                let mut state = self.state.lock().await;
                let now = Instant::now();
                let elapsed = now.duration_since(state.1).as_secs_f64();
                state.0 = (state.0 + elapsed * self.refill_per_s).min(self.capacity);
                state.1 = now;
                if state.0 >= 1.0 {
                    state.0 -= 1.0;
                    return;
                }
                (1.0 - state.0) / self.refill_per_s
            };
            tokio::time::sleep(Duration::from_secs_f64(wait)).await;
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[tokio::test(start_paused = true)]
    async fn burst_then_steady_rate() {
        let bucket = TokenBucket::per_minute(60.0, 2);
        let start = Instant::now();
        bucket.acquire().await;
        bucket.acquire().await;
        assert!(start.elapsed() < Duration::from_millis(1));
        bucket.acquire().await;
        let third = start.elapsed();
        assert!(third >= Duration::from_millis(999) && third < Duration::from_millis(1100), "{third:?}");
        for _ in 0..3 {
            bucket.acquire().await;
        }
        assert!(start.elapsed() >= Duration::from_millis(3999));
    }

    #[tokio::test(start_paused = true)]
    async fn concurrent_acquirers_respect_rate() {
        let bucket = std::sync::Arc::new(TokenBucket::per_minute(120.0, 1));
        let start = Instant::now();
        let handles: Vec<_> = (0..5)
            .map(|_| {
                let b = bucket.clone();
                tokio::spawn(async move {
                    b.acquire().await;
                    Instant::now()
                })
            })
            .collect();
        let mut times = Vec::new();
        for h in handles {
            times.push(h.await.unwrap().duration_since(start));
        }
        times.sort();
        // 1 immediately, then one every 500 ms.
        assert!(times[4] >= Duration::from_millis(1999), "{times:?}");
    }
}
