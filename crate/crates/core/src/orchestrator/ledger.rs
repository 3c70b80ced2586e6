use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use crate::backend::ResponseRecord;

/// Request accounting for one backend on one benchmark.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct BackendCost {
    pub requests: u64,
    pub cache_hits: u64,
    pub live_calls: u64,
    pub retries: u64,
    /// Summed latency of live calls.
    pub wall_clock_s: f64,
    pub prompt_tokens: u64,
    pub completion_tokens: u64,
}

impl BackendCost {
    pub fn record_hit(&mut self) {
        self.requests += 1;
        self.cache_hits += 1;
    }

    pub fn record_live(&mut self, rec: Option<&ResponseRecord>) {
        self.requests += 1;
        self.live_calls += 1;
        if let Some(r) = rec {
            self.retries += u64::from(r.retries);
            self.wall_clock_s += r.latency_ms as f64 / 1000.0;
            self.prompt_tokens += r.prompt_tokens.unwrap_or(0);
            self.completion_tokens += r.completion_tokens.unwrap_or(0);
        }
    }

    fn add(&mut self, other: &BackendCost) {
        self.requests += other.requests;
        self.cache_hits += other.cache_hits;
        self.live_calls += other.live_calls;
        self.retries += other.retries;
        self.wall_clock_s += other.wall_clock_s;
        self.prompt_tokens += other.prompt_tokens;
        self.completion_tokens += other.completion_tokens;
    }
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct BenchmarkCost {
    pub questions: u64,
    pub backends: BTreeMap<String, BackendCost>,
}

impl BenchmarkCost {
    pub fn total(&self) -> BackendCost {
        let mut t = BackendCost::default();
        for c in self.backends.values() {
            t.add(c);
        }
        t
    }
}

/// Per-benchmark, per-backend request ledger.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct CostLedger {
    pub benchmarks: BTreeMap<String, BenchmarkCost>,
}

impl CostLedger {
    pub fn benchmark_mut(&mut self, name: &str) -> &mut BenchmarkCost {
        self.benchmarks.entry(name.to_string()).or_default()
    }

    pub fn backend_mut(&mut self, benchmark: &str, backend_id: &str) -> &mut BackendCost {
        self.benchmark_mut(benchmark).backends.entry(backend_id.to_string()).or_default()
    }

    pub fn total(&self) -> BackendCost {
        let mut t = BackendCost::default();
        for b in self.benchmarks.values() {
            t.add(&b.total());
        }
        t
    }

    pub fn merge(&mut self, other: &CostLedger) {
        for (name, bench) in &other.benchmarks {
            let mine = self.benchmark_mut(name);
            mine.questions += bench.questions;
            for (id, cost) in &bench.backends {
                mine.backends.entry(id.clone()).or_default().add(cost);
            }
        }
    }

    /// Every backend's requests split exactly into hits and live calls.
    pub fn is_conserved(&self) -> bool {
        self.benchmarks
            .values()
            .flat_map(|b| b.backends.values())
            .all(|c| c.requests == c.cache_hits + c.live_calls)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::backend::ResponseStatus;

    #[test]
    fn hits_and_live_calls_add_up() {
        let mut l = CostLedger::default();
        l.benchmark_mut("VideoMME").questions = 2;
        l.backend_mut("VideoMME", "gpt").record_hit();
        let rec = ResponseRecord {
            backend_id: "gpt".into(),
            digest: "00".into(),
            raw_text: "A".into(),
            latency_ms: 1500,
            prompt_tokens: Some(100),
            completion_tokens: Some(2),
            status: ResponseStatus::Ok,
            timestamp_ms: 0,
            retries: 1,
        };
        l.backend_mut("VideoMME", "gpt").record_live(Some(&rec));
        let t = l.total();
        assert_eq!((t.requests, t.cache_hits, t.live_calls, t.retries), (2, 1, 1, 1));
        assert!((t.wall_clock_s - 1.5).abs() < 1e-12);
        assert!(l.is_conserved());
        let mut m = l.clone();
        m.merge(&l);
        assert_eq!(m.total().requests, 4);
        assert_eq!(m.benchmarks["VideoMME"].questions, 4);
    }
}
