use serde::{Deserialize, Serialize};

use crate::Timestamp;

/// Running count, mean and sum of squared deviations (Welford).
#[derive(Debug, Clone, Copy, Default, PartialEq, Serialize, Deserialize)]
pub struct Moments {
    pub n: u64,
    pub mean: f64,
    pub m2: f64,
}

impl Moments {
    pub fn push(&mut self, x: f64) {
        self.n += 1;
        let delta = x - self.mean;
        self.mean += delta / self.n as f64;
        self.m2 += delta * (x - self.mean);
    }

    /// Pairwise combination of two disjoint samples.
    pub fn combine(&self, other: &Moments) -> Moments {
        if self.n == 0 {
            return *other;
        }
        if other.n == 0 {
            return *self;
        }
        let n = self.n + other.n;
        let (na, nb) = (self.n as f64, other.n as f64);
        let delta = other.mean - self.mean;
        Moments {
            n,
            mean: self.mean + delta * nb / n as f64,
            m2: self.m2 + other.m2 + delta * delta * na * nb / n as f64,
        }
    }

    pub fn mean(&self) -> Option<f64> {
        (self.n > 0).then_some(self.mean)
    }

    /// Sample (n - 1) standard deviation; zero for a single observation.
    pub fn sample_sd(&self) -> Option<f64> {
        match self.n {
            0 => None,
            1 => Some(0.0),
            n => Some((self.m2.max(0.0) / (n - 1) as f64).sqrt()),
        }
    }
}

/// Inter-arrival and length statistics of one flow.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FlowStats {
    pub count: u64,
    pub first_ts: Timestamp,
    pub last_ts: Timestamp,
    gaps: Moments,
    lengths: Moments,
    /// Packets that arrived earlier than `last_ts`; counted but contribute no gap.
    pub late: u64,
}

impl FlowStats {
    pub fn new(timestamp: Timestamp, length: u16) -> Self {
        let mut lengths = Moments::default();
        lengths.push(f64::from(length));
        Self {
            count: 1,
            first_ts: timestamp,
            last_ts: timestamp,
            gaps: Moments::default(),
            lengths,
            late: 0,
        }
    }

    /// Add one packet. Timestamps must not go backwards; a packet that does is
    /// counted in `late` and skipped for timing.
    pub fn record(&mut self, timestamp: Timestamp, length: u16) {
        self.count += 1;
        self.lengths.push(f64::from(length));
        if timestamp < self.last_ts {
            self.late += 1;
            return;
        }
        self.gaps.push(timestamp.seconds_since(self.last_ts));
        self.last_ts = timestamp;
    }

    pub fn accumulate(mut self, timestamp: Timestamp, length: u16) -> Self {
        self.record(timestamp, length);
        self
    }

    /// Mean inter-arrival time in seconds; needs two packets.
    pub fn tau(&self) -> Option<f64> {
        self.gaps.mean()
    }

    /// Sample standard deviation of inter-arrival times in seconds.
    pub fn sigma(&self) -> Option<f64> {
        self.gaps.sample_sd()
    }

    pub fn gap_count(&self) -> u64 {
        self.gaps.n
    }

    pub fn mean_length(&self) -> f64 {
        self.lengths.mean
    }

    pub fn sd_length(&self) -> f64 {
        self.lengths.sample_sd().unwrap_or(0.0)
    }

    pub fn length_count(&self) -> u64 {
        self.lengths.n
    }

    /// Fold in statistics of a later capture of the same flow. The gap between
    /// the two captures counts as one inter-arrival gap, so the result equals a
    /// single pass over both when `later` starts at or after `self.last_ts`.
    pub fn merge(&mut self, later: &FlowStats) {
        let (first, second) = if later.first_ts >= self.last_ts {
            (self.clone(), later.clone())
        } else if self.first_ts >= later.last_ts {
            (later.clone(), self.clone())
        } else {
            // Overlapping spans: interleaving is unknown, keep both gap sets only.
            self.count += later.count;
            self.late += later.late;
            self.gaps = self.gaps.combine(&later.gaps);
            self.lengths = self.lengths.combine(&later.lengths);
            self.first_ts = self.first_ts.min(later.first_ts);
            self.last_ts = self.last_ts.max(later.last_ts);
            return;
        };
        let mut bridge = Moments::default();
        bridge.push(second.first_ts.seconds_since(first.last_ts));
        *self = FlowStats {
            count: first.count + second.count,
            first_ts: first.first_ts,
            last_ts: second.last_ts,
            gaps: first.gaps.combine(&bridge).combine(&second.gaps),
            lengths: first.lengths.combine(&second.lengths),
            late: first.late + second.late,
        };
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn from_gaps(gaps: &[f64]) -> FlowStats {
        let mut t = Timestamp::from_parts(1_000, 0);
        let mut s = FlowStats::new(t, 30);
        for g in gaps {
            t = t.add_secs_f64(*g);
            s.record(t, 30);
        }
        s
    }

    #[test]
    fn constant_gaps() {
        let s = from_gaps(&[1.0, 1.0, 1.0]);
        assert_eq!(s.tau(), Some(1.0));
        assert_eq!(s.sigma(), Some(0.0));
        assert_eq!(s.count, 4);
    }

    #[test]
    fn two_gaps() {
        let s = from_gaps(&[1.0, 3.0]);
        assert_eq!(s.tau(), Some(2.0));
        assert!((s.sigma().unwrap() - 2f64.sqrt()).abs() < 1e-12);
    }

    #[test]
    fn single_packet_has_no_timing() {
        let s = FlowStats::new(Timestamp::from_parts(5, 0), 10);
        assert_eq!(s.count, 1);
        assert_eq!(s.tau(), None);
        assert_eq!(s.sigma(), None);
    }

    #[test]
    fn zero_gaps_are_kept() {
        let s = from_gaps(&[0.0, 2.0]);
        assert_eq!(s.gap_count(), 2);
        assert_eq!(s.tau(), Some(1.0));
    }

    #[test]
    fn late_packets_count_without_gap() {
        let mut s = from_gaps(&[1.0]);
        s.record(Timestamp::from_parts(999, 0), 30);
        assert_eq!(s.count, 3);
        assert_eq!(s.late, 1);
        assert_eq!(s.gap_count(), 1);
    }

    #[test]
    fn merge_matches_single_pass() {
        let gaps = [0.5, 2.0, 0.1, 3.0, 1.25, 0.75, 4.0];
        let whole = from_gaps(&gaps);
        let mut t = Timestamp::from_parts(1_000, 0);
        let mut a = FlowStats::new(t, 30);
        for g in &gaps[..3] {
            t = t.add_secs_f64(*g);
            a.record(t, 30);
        }
        t = t.add_secs_f64(gaps[3]);
        let mut b = FlowStats::new(t, 30);
        for g in &gaps[4..] {
            t = t.add_secs_f64(*g);
            b.record(t, 30);
        }
        let mut merged = a.clone();
        merged.merge(&b);
        assert_eq!(merged.count, whole.count);
        assert!((merged.tau().unwrap() - whole.tau().unwrap()).abs() < 1e-12);
        assert!((merged.sigma().unwrap() - whole.sigma().unwrap()).abs() < 1e-12);
        // Order of arguments does not matter.
        let mut rev = b.clone();
        rev.merge(&a);
        assert!((rev.sigma().unwrap() - whole.sigma().unwrap()).abs() < 1e-12);
    }
}
