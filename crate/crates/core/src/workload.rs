//! Interval-rated Poisson workloads and their CSV trace format.

use crate::domain::Request;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Exp};
use serde::{Deserialize, Serialize};
use std::fmt::Write as _;
use std::io::{BufRead, Write};
use std::path::Path;

pub const TRACE_HEADER: &str = "id,arrival_seconds,top_k";

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Interval {
    /// Seconds.
    pub duration: f64,
    /// Requests per second.
    pub rate: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct IntervalSchedule {
    pub intervals: Vec<Interval>,
}

#[derive(Debug, thiserror::Error)]
pub enum WorkloadError {
    #[error("interval {index}: duration must be positive, got {value}")]
    Duration { index: usize, value: f64 },
    #[error("interval {index}: rate must be non-negative, got {value}")]
    Rate { index: usize, value: f64 },
    #[error("line {line}: {message}")]
    Parse { line: usize, message: String },
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

impl IntervalSchedule {
    pub fn new(intervals: Vec<Interval>) -> Result<Self, WorkloadError> {
        let s = Self { intervals };
        s.validate()?;
        Ok(s)
    }

    /// Four 20-minute intervals at 4, 8, 12 and 16 requests per minute.
    pub fn default_steps() -> Self {
        Self {
            intervals: [4.0, 8.0, 12.0, 16.0]
                .into_iter()
                .map(|per_min| Interval {
                    duration: 1200.0,
                    rate: per_min / 60.0,
                })
                .collect(),
        }
    }

    pub fn validate(&self) -> Result<(), WorkloadError> {
        for (index, iv) in self.intervals.iter().enumerate() {
            if !(iv.duration > 0.0 && iv.duration.is_finite()) {
                return Err(WorkloadError::Duration { index, value: iv.duration });
            }
            if !(iv.rate >= 0.0 && iv.rate.is_finite()) {
                return Err(WorkloadError::Rate { index, value: iv.rate });
            }
        }
        Ok(())
    }

    pub fn total_duration(&self) -> f64 {
        self.intervals.iter().map(|i| i.duration).sum()
    }

    pub fn expected_count(&self) -> f64 {
        self.intervals.iter().map(|i| i.rate * i.duration).sum()
    }

    /// `(start, end)` of every interval.
    pub fn spans(&self) -> Vec<(f64, f64)> {
        let mut t = 0.0;
        self.intervals
            .iter()
            .map(|i| {
                let span = (t, t + i.duration);
                t += i.duration;
                span
            })
            .collect()
    }

    /// Index of the interval containing `t`; times past the end map to the last interval.
    pub fn interval_index(&self, t: f64) -> Option<usize> {
        if self.intervals.is_empty() {
            return None;
        }
        let spans = self.spans();
        Some(spans.iter().position(|&(_, end)| t < end).unwrap_or(spans.len() - 1))
    }

    /// Declared arrival rate at `t`.
    pub fn rate_at(&self, t: f64) -> f64 {
        self.interval_index(t).map_or(0.0, |i| self.intervals[i].rate)
    }

    /// Divides durations and multiplies rates by `factor`.
    pub fn scaled(&self, factor: f64) -> Self {
        Self {
            intervals: self
                .intervals
                .iter()
                .map(|i| Interval {
                    duration: i.duration / factor,
                    rate: i.rate * factor,
                })
                .collect(),
        }
    }
}

/// Derives an independent seed for a named sub-stream.
pub fn sub_seed(seed: u64, label: &str) -> u64 {
    let mut h: u64 = 0xcbf2_9ce4_8422_2325;
    for b in label.bytes() {
        h ^= b as u64;
        h = h.wrapping_mul(0x0000_0100_0000_01b3);
    }
    splitmix64(seed ^ h)
}

pub fn splitmix64(x: u64) -> u64 {
    let mut z = x.wrapping_add(0x9e37_79b9_7f4a_7c15);
    z = (z ^ (z >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
    z ^ (z >> 31)
}

pub fn generate_poisson(schedule: &IntervalSchedule, seed: u64, top_k: u32) -> Vec<Request> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut out = Vec::new();
    for (iv, (start, end)) in schedule.intervals.iter().zip(schedule.spans()) {
        if iv.rate <= 0.0 {
            continue;
        }
        let gap = Exp::new(iv.rate).expect("positive rate");
        let mut t = start;
        loop {
            t += gap.sample(&mut rng);
            if t >= end {
                break;
            }
            out.push(Request {
                id: out.len() as u64,
                arrival_time: t,
                top_k,
            });
        }
    }
    out
}

/// Plain decimal with 17 significant digits, which round-trips any finite f64.
pub fn format_float(x: f64) -> String {
    if x == 0.0 {
        return "0".into();
    }
    let sci = format!("{:.16e}", x.abs());
    let (mantissa, exp) = sci.split_once('e').expect("scientific notation");
    let exp: i32 = exp.parse().expect("integer exponent");
    let digits: String = mantissa.chars().filter(|c| c.is_ascii_digit()).collect();
    let point = exp + 1;
    let mut s = String::new();
    if x < 0.0 {
        s.push('-');
    }
    if point <= 0 {
        s.push_str("0.");
        s.extend(std::iter::repeat_n('0', (-point) as usize));
        s.push_str(&digits);
    } else if point as usize >= digits.len() {
        s.push_str(&digits);
        s.extend(std::iter::repeat_n('0', point as usize - digits.len()));
    } else {
        let (int, frac) = digits.split_at(point as usize);
        s.push_str(int);
        s.push('.');
        s.push_str(frac);
    }
    if s.contains('.') {
        let trimmed = s.trim_end_matches('0').trim_end_matches('.').len();
        s.truncate(trimmed);
    }
    s
}

pub fn write_trace<W: Write>(requests: &[Request], mut w: W) -> std::io::Result<()> {
    let mut buf = String::with_capacity(32 * (requests.len() + 1));
    buf.push_str(TRACE_HEADER);
    buf.push('\n');
    for r in requests {
        let _ = writeln!(buf, "{},{},{}", r.id, format_float(r.arrival_time), r.top_k);
    }
    w.write_all(buf.as_bytes())
}

pub fn read_trace<R: BufRead>(r: R) -> Result<Vec<Request>, WorkloadError> {
    let mut out = Vec::new();
    let mut lines = r.lines().enumerate();
    match lines.next() {
        Some((_, header)) => {
            if header?.trim() != TRACE_HEADER {
                return Err(WorkloadError::Parse {
                    line: 1,
                    message: format!("expected header `{TRACE_HEADER}`"),
                });
            }
        }
        None => return Ok(out),
    }
    let mut last = 0.0;
    for (i, line) in lines {
        let line_no = i + 1;
        let line = line?;
        if line.trim().is_empty() {
            continue;
        }
        let err = |message: String| WorkloadError::Parse { line: line_no, message };
        let fields: Vec<&str> = line.split(',').map(str::trim).collect();
        let [id, arrival, top_k] = fields[..] else {
            return Err(err(format!("expected 3 fields, found {}", fields.len())));
        };
        let id: u64 = id.parse().map_err(|e| err(format!("id `{id}`: {e}")))?;
        let arrival_time: f64 = arrival.parse().map_err(|e| err(format!("arrival `{arrival}`: {e}")))?;
        if !(arrival_time >= 0.0 && arrival_time.is_finite()) {
            return Err(err(format!("arrival time must be finite and non-negative, got {arrival}")));
        }
        if arrival_time < last {
            return Err(err("arrivals must be sorted".into()));
        }
        last = arrival_time;
        let top_k: u32 = top_k.parse().map_err(|e| err(format!("top_k `{top_k}`: {e}")))?;
        out.push(Request { id, arrival_time, top_k });
    }
    Ok(out)
}

pub fn save_trace(requests: &[Request], path: &Path) -> Result<(), WorkloadError> {
    let file = std::fs::File::create(path)?;
    write_trace(requests, std::io::BufWriter::new(file))?;
    Ok(())
}

pub fn load_trace(path: &Path) -> Result<Vec<Request>, WorkloadError> {
    let file = std::fs::File::open(path)?;
    read_trace(std::io::BufReader::new(file))
}

/// Number of requests arriving in each interval.
pub fn interval_counts(schedule: &IntervalSchedule, requests: &[Request]) -> Vec<usize> {
    let spans = schedule.spans();
    let mut counts = vec![0; spans.len()];
    for r in requests {
        if let Some(i) = spans.iter().position(|&(s, e)| r.arrival_time >= s && r.arrival_time < e) {
            counts[i] += 1;
        }
    }
    counts
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn default_schedule_expects_800() {
        let s = IntervalSchedule::default_steps();
        assert!((s.expected_count() - 800.0).abs() < 1e-9);
        assert_eq!(s.total_duration(), 4800.0);
    }

    #[test]
    fn zero_rate_interval_is_empty() {
        let s = IntervalSchedule::new(vec![
            Interval { duration: 60.0, rate: 0.0 },
            Interval { duration: 60.0, rate: 1.0 },
        ])
        .unwrap();
        let reqs = generate_poisson(&s, 3, 5);
        assert!(reqs.iter().all(|r| r.arrival_time >= 60.0));
        assert!(!reqs.is_empty());
    }

    #[test]
    fn fixed_seed_is_deterministic() {
        let s = IntervalSchedule::default_steps();
        assert_eq!(generate_poisson(&s, 7, 5), generate_poisson(&s, 7, 5));
        assert_ne!(generate_poisson(&s, 7, 5), generate_poisson(&s, 8, 5));
    }

    #[test]
    fn ids_sequential_and_sorted() {
        let reqs = generate_poisson(&IntervalSchedule::default_steps(), 1, 5);
        for (i, w) in reqs.windows(2).enumerate() {
            assert!(w[0].arrival_time <= w[1].arrival_time);
            assert_eq!(w[0].id, i as u64);
        }
    }

    #[test]
    fn invalid_schedules_rejected() {
        assert!(IntervalSchedule::new(vec![Interval { duration: 0.0, rate: 1.0 }]).is_err());
        assert!(IntervalSchedule::new(vec![Interval { duration: 1.0, rate: -1.0 }]).is_err());
    }

    #[test]
    fn trace_round_trip() {
        let reqs = generate_poisson(&IntervalSchedule::default_steps(), 11, 5);
        let mut buf = Vec::new();
        write_trace(&reqs, &mut buf).unwrap();
        assert_eq!(read_trace(buf.as_slice()).unwrap(), reqs);

        let mut empty = Vec::new();
        write_trace(&[], &mut empty).unwrap();
        assert_eq!(String::from_utf8(empty.clone()).unwrap(), format!("{TRACE_HEADER}\n"));
        assert!(read_trace(empty.as_slice()).unwrap().is_empty());
    }

    #[test]
    fn negative_arrival_is_parse_error() {
        let text = format!("{TRACE_HEADER}\n0,1.5,5\n1,-2,5\n");
        let e = read_trace(text.as_bytes()).unwrap_err();
        assert!(matches!(e, WorkloadError::Parse { line: 3, .. }), "{e}");
    }

    #[test]
    fn malformed_lines_report_line_number() {
        let e = read_trace(format!("{TRACE_HEADER}\n0,abc,5\n").as_bytes()).unwrap_err();
        assert!(e.to_string().starts_with("line 2:"), "{e}");
        let e = read_trace(format!("{TRACE_HEADER}\n0,1\n").as_bytes()).unwrap_err();
        assert!(e.to_string().contains("3 fields"));
        assert!(read_trace("nope\n".as_bytes()).is_err());
    }

    #[test]
    fn floats_round_trip() {
        for x in [0.1, 1.0 / 3.0, 1234.5678e-9, 4799.999999999, 5e-324, 1e300, 2.0, -0.75, 999.9999999999999] {
            assert_eq!(format_float(x).parse::<f64>().unwrap(), x, "{x}");
        }
        assert_eq!(format_float(2.0), "2");
        assert!(!format_float(1e300).contains('e'));
    }

    #[test]
    fn rate_lookup_and_scaling() {
        let s = IntervalSchedule::default_steps();
        assert_eq!(s.rate_at(0.0), 4.0 / 60.0);
        assert_eq!(s.rate_at(1200.0), 8.0 / 60.0);
        assert_eq!(s.rate_at(1e9), 16.0 / 60.0);
        let fast = s.scaled(60.0);
        assert_eq!(fast.total_duration(), 80.0);
        assert!((fast.expected_count() - 800.0).abs() < 1e-9);
    }

    #[test]
    fn sub_seeds_differ_by_label() {
        assert_ne!(sub_seed(1, "workload"), sub_seed(1, "jitter"));
        assert_eq!(sub_seed(1, "jitter"), sub_seed(1, "jitter"));
    }
}
