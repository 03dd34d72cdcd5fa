//! Job records, trace file parsing, the temporally ordered event view, and
//! the seeded synthetic workload generator used for desk-scale experiments.
//!
//! A trace file is UTF-8, one JSON object per line, with exactly the
//! [`JobRecord`] field names. Optional fields are omitted when absent.
//! Lines starting with `#` are comments.

use std::collections::HashSet;
use std::io::BufRead;

use rand::Rng;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Exp, Normal};
use serde::{Deserialize, Serialize};
use thiserror::Error;

#[derive(Debug, Error)]
pub enum WorkloadError {
    #[error("malformed trace line {line_no}: {detail}")]
    MalformedLine { line_no: usize, detail: String },
    #[error("job {job_id}: invariant violation on field {field}")]
    InvariantViolation { job_id: String, field: &'static str },
    #[error("duplicate job id {0}")]
    DuplicateJobId(String),
    #[error("invalid generator config: {0}")]
    InvalidConfig(String),
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

/// One job: submission-time features, lifecycle timestamps, and the
/// peak-memory label (present only once the job has finished).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct JobRecord {
    pub job_id: String,
    pub user: String,
    pub group: String,
    pub queue: String,
    pub cwd: String,
    pub resreq: String,
    pub command: String,
    pub priority: i64,
    pub submit_time: i64,
    pub req_time: i64,
    pub req_procs: i64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub finish_time: Option<i64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub max_mem_mib: Option<f64>,
}

impl JobRecord {
    pub fn is_finished(&self) -> bool {
        self.finish_time.is_some()
    }

    pub fn validate(&self) -> Result<(), WorkloadError> {
        let bad = |field| WorkloadError::InvariantViolation {
            job_id: self.job_id.clone(),
            field,
        };
        if self.finish_time.is_some() != self.max_mem_mib.is_some() {
            return Err(bad("finish_time/max_mem_mib"));
        }
        if let Some(ft) = self.finish_time {
            if ft <= self.submit_time {
                return Err(bad("finish_time"));
            }
        }
        if let Some(mem) = self.max_mem_mib {
            if !(mem >= 0.0) || !mem.is_finite() {
                return Err(bad("max_mem_mib"));
            }
        }
        if self.req_procs < 1 {
            return Err(bad("req_procs"));
        }
        if self.req_time < 0 {
            return Err(bad("req_time"));
        }
        if self.submit_time < 0 {
            return Err(bad("submit_time"));
        }
        Ok(())
    }
}

/// Parse a line-oriented trace. Records come back in file order; every
/// record is validated and job ids must be unique.
pub fn parse_trace<R: BufRead>(reader: R) -> Result<Vec<JobRecord>, WorkloadError> {
    let mut records = Vec::new();
    let mut seen = HashSet::new();
    for (idx, line) in reader.lines().enumerate() {
        let line_no = idx + 1;
        let line = line?;
        let trimmed = line.trim();
        if trimmed.is_empty() || trimmed.starts_with('#') {
            continue;
        }
        let record: JobRecord =
            serde_json::from_str(trimmed).map_err(|e| WorkloadError::MalformedLine {
                line_no,
                detail: e.to_string(),
            })?;
        record.validate()?;
        if !seen.insert(record.job_id.clone()) {
            return Err(WorkloadError::DuplicateJobId(record.job_id));
        }
        records.push(record);
    }
    Ok(records)
}

/// Parse a single trace line (no comment/blank handling). Used by the
/// fuzz targets so the line decoder can be hit directly.
pub fn parse_trace_line(line: &str) -> Result<JobRecord, String> {
    let record: JobRecord = serde_json::from_str(line).map_err(|e| e.to_string())?;
    record.validate().map_err(|e| e.to_string())?;
    Ok(record)
}

pub fn serialize_trace<W: std::io::Write>(
    records: &[JobRecord],
    mut writer: W,
) -> Result<(), WorkloadError> {
    for record in records {
        serde_json::to_writer(&mut writer, record)
            .map_err(|e| std::io::Error::new(std::io::ErrorKind::Other, e))?;
        writer.write_all(b"\n")?;
    }
    Ok(())
}

/// Finished sorts before Submitted at equal times: a job finishing "now"
/// is usable history for a job submitted "now".
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord)]
pub enum EventKind {
    Finished,
    Submitted,
}

#[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord)]
pub struct JobEvent {
    pub time: i64,
    pub kind: EventKind,
    pub job_id: String,
}

/// One `Submitted` event per record plus one `Finished` event per finished
/// record, sorted by (time, Finished-before-Submitted, job_id).
pub fn event_stream(records: &[JobRecord]) -> Vec<JobEvent> {
    let mut events = Vec::with_capacity(records.len() * 2);
    for r in records {
        events.push(JobEvent {
            time: r.submit_time,
            kind: EventKind::Submitted,
            job_id: r.job_id.clone(),
        });
        if let Some(ft) = r.finish_time {
            events.push(JobEvent {
                time: ft,
                kind: EventKind::Finished,
                job_id: r.job_id.clone(),
            });
        }
    }
    events.sort();
    events
}

/// Weekday (Monday = 0) and seconds since midnight, both in UTC.
pub fn derive_calendar_features(submit_time: i64) -> (i64, i64) {
    // 1970-01-01 was a Thursday.
    let weekday = (submit_time.div_euclid(86_400) + 3).rem_euclid(7);
    let seconds_since_midnight = submit_time.rem_euclid(86_400);
    (weekday, seconds_since_midnight)
}

pub const GENERATOR_BIN_SIZE_MIB: f64 = 512.0;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SyntheticConfig {
    pub n_jobs: usize,
    pub n_users: usize,
    pub n_commands: usize,
    /// Planted base memories are spread across this many distinct 512 MiB bins.
    pub base_bin_spread: usize,
    pub noise_sigma_mib: f64,
    pub mean_interarrival_s: f64,
    pub mean_runtime_s: f64,
    /// When set, jobs at index >= drift_at follow a remapped planted rule.
    pub drift_at: Option<usize>,
    pub seed: u64,
}

impl SyntheticConfig {
    pub fn new(n_jobs: usize, seed: u64) -> Self {
        SyntheticConfig {
            n_jobs,
            n_users: 20,
            n_commands: 10,
            base_bin_spread: 12,
            noise_sigma_mib: 64.0,
            mean_interarrival_s: 60.0,
            mean_runtime_s: 3600.0,
            drift_at: None,
            seed,
        }
    }

    fn check(&self) -> Result<(), WorkloadError> {
        if self.n_jobs == 0 || self.n_users == 0 || self.n_commands == 0 || self.base_bin_spread == 0
        {
            return Err(WorkloadError::InvalidConfig(
                "n_jobs, n_users, n_commands and base_bin_spread must be positive".into(),
            ));
        }
        if self.noise_sigma_mib < 0.0
            || self.mean_interarrival_s <= 0.0
            || self.mean_runtime_s <= 0.0
        {
            return Err(WorkloadError::InvalidConfig(
                "noise and rate parameters must be positive".into(),
            ));
        }
        Ok(())
    }
}

/// The generator's ground truth: for every (user, command) pair, the bin its
/// base memory was planted in. Exposed so acceptance can score against the
/// planted rule instead of proprietary traces.
#[derive(Debug, Clone)]
pub struct PlantedTable {
    pub n_users: usize,
    pub n_commands: usize,
    bins: Vec<usize>,
}

impl PlantedTable {
    pub fn bin(&self, user: usize, command: usize) -> usize {
        self.bins[user * self.n_commands + command]
    }

    pub fn base_mem_mib(&self, user: usize, command: usize) -> f64 {
        (self.bin(user, command) as f64 + 0.5) * GENERATOR_BIN_SIZE_MIB
    }
}

fn build_planted_table(config: &SyntheticConfig, salt: u64) -> PlantedTable {
    let mut rng = ChaCha8Rng::seed_from_u64(config.seed.wrapping_mul(0x9e37_79b9_7f4a_7c15) ^ salt);
    let n = config.n_users * config.n_commands;
    let bins = (0..n)
        .map(|_| rng.gen_range(0..config.base_bin_spread))
        .collect();
    PlantedTable {
        n_users: config.n_users,
        n_commands: config.n_commands,
        bins,
    }
}

/// Planted table in effect before `drift_at`.
pub fn planted_table(config: &SyntheticConfig) -> PlantedTable {
    build_planted_table(config, 0x7261_6e6b)
}

/// Planted table in effect from `drift_at` on (differs from the base table).
pub fn planted_table_after_drift(config: &SyntheticConfig) -> PlantedTable {
    build_planted_table(config, 0x6472_6966)
}

/// Ground-truth bin for job index `job_idx`, honoring `drift_at`.
pub fn oracle_bin(config: &SyntheticConfig, user: usize, command: usize, job_idx: usize) -> usize {
    match config.drift_at {
        Some(d) if job_idx >= d => planted_table_after_drift(config).bin(user, command),
        _ => planted_table(config).bin(user, command),
    }
}

// Deterministic per-(user, command) attribute derivation.
fn mix(seed: u64, user: usize, command: usize, tag: u64) -> u64 {
    let mut x = seed ^ tag.wrapping_mul(0x517c_c1b7_2722_0a95);
    x = x.wrapping_add((user as u64).wrapping_mul(0x2545_f491_4f6c_dd1d));
    x = x.wrapping_add((command as u64).wrapping_mul(0x9e37_79b9_7f4a_7c15));
    x ^= x >> 33;
    x = x.wrapping_mul(0xff51_afd7_ed55_8ccd);
    x ^= x >> 33;
    x = x.wrapping_mul(0xc4ce_b9fe_1a85_ec53);
    x ^ (x >> 33)
}

const QUEUES: [&str; 4] = ["normal", "long", "short", "night"];
const SUBMIT_EPOCH: f64 = 1_500_000_000.0;

/// Seeded synthetic workload with planted (user, command) -> base-memory
/// structure. Pure function of the config: identical configs give
/// byte-identical traces.
pub fn generate_synthetic(config: &SyntheticConfig) -> Result<Vec<JobRecord>, WorkloadError> {
    config.check()?;
    let table = planted_table(config);
    let drift_table = planted_table_after_drift(config);
    let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
    let interarrival = Exp::new(1.0 / config.mean_interarrival_s)
        .map_err(|e| WorkloadError::InvalidConfig(e.to_string()))?;
    let runtime = Exp::new(1.0 / config.mean_runtime_s)
        .map_err(|e| WorkloadError::InvalidConfig(e.to_string()))?;

    let mut clock = SUBMIT_EPOCH;
    let mut records = Vec::with_capacity(config.n_jobs);
    for i in 0..config.n_jobs {
        let user = rng.gen_range(0..config.n_users);
        let command = rng.gen_range(0..config.n_commands);
        let active = match config.drift_at {
            Some(d) if i >= d => &drift_table,
            _ => &table,
        };
        let base = active.base_mem_mib(user, command);
        let noise: f64 = if config.noise_sigma_mib > 0.0 {
            Normal::new(0.0, config.noise_sigma_mib)
                .map_err(|e| WorkloadError::InvalidConfig(e.to_string()))?
                .sample(&mut rng)
        } else {
            0.0
        };
        let max_mem_mib = (base + noise).max(1.0);

        clock += interarrival.sample(&mut rng);
        let submit_time = clock as i64;
        let run_s = 1.0 + runtime.sample(&mut rng);
        let finish_time = submit_time + run_s as i64 + 1;

        let queue = QUEUES[(mix(config.seed, user, command, 1) % QUEUES.len() as u64) as usize];
        let priority = (mix(config.seed, user, command, 2) % 100) as i64 + 1;
        let req_time = 600 + (mix(config.seed, user, command, 3) % 48) as i64 * 600;
        let req_procs = (mix(config.seed, user, command, 4) % 16) as i64 + 1;

        records.push(JobRecord {
            job_id: format!("job-{i:06}"),
            user: format!("user{user:02}"),
            group: format!("grp{}", user % 5),
            queue: queue.to_string(),
            cwd: format!("/home/user{user:02}/proj{command:02}"),
            resreq: format!("select[mem>{}]", 256 * (1 + (command as i64 % 4))),
            command: format!("app{command:02} --run"),
            priority,
            submit_time,
            req_time,
            req_procs,
            finish_time: Some(finish_time),
            max_mem_mib: Some(max_mem_mib),
        });
    }
    Ok(records)
}

/// Recover the (user, command) indices the generator encoded into its
/// string fields. Test/oracle helper for planted traces.
pub fn generator_indices(record: &JobRecord) -> Option<(usize, usize)> {
    let user = record.user.strip_prefix("user")?.parse().ok()?;
    let command = record
        .command
        .strip_prefix("app")?
        .strip_suffix(" --run")?
        .parse()
        .ok()?;
    Some((user, command))
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn job(id: &str, submit: i64, finish: Option<i64>, mem: Option<f64>) -> JobRecord {
        JobRecord {
            job_id: id.to_string(),
            user: "alice".into(),
            group: "grp0".into(),
            queue: "normal".into(),
            cwd: "/home/alice".into(),
            resreq: "select[mem>256]".into(),
            command: "./sim".into(),
            priority: 10,
            submit_time: submit,
            req_time: 3600,
            req_procs: 4,
            finish_time: finish,
            max_mem_mib: mem,
        }
    }

    #[test]
    fn parse_well_formed_line() {
        let line = r#"{"job_id":"j1","user":"alice","group":"g","queue":"q","cwd":"/w","resreq":"r","command":"c","priority":1,"submit_time":10,"req_time":60,"req_procs":1,"finish_time":20,"max_mem_mib":612.5}"#;
        let records = parse_trace(line.as_bytes()).unwrap();
        assert_eq!(records.len(), 1);
        assert_eq!(records[0].max_mem_mib, Some(612.5));
    }

    #[test]
    fn finish_without_label_is_invariant_violation() {
        let line = r#"{"job_id":"j1","user":"a","group":"g","queue":"q","cwd":"/w","resreq":"r","command":"c","priority":1,"submit_time":10,"req_time":60,"req_procs":1,"finish_time":20}"#;
        match parse_trace(line.as_bytes()) {
            Err(WorkloadError::InvariantViolation { .. }) => {}
            other => panic!("expected InvariantViolation, got {other:?}"),
        }
    }

    #[test]
    fn empty_file_parses_to_nothing() {
        assert!(parse_trace("".as_bytes()).unwrap().is_empty());
        assert!(parse_trace("# comment only\n\n".as_bytes()).unwrap().is_empty());
    }

    #[test]
    fn duplicate_id_rejected() {
        let a = job("j1", 10, Some(20), Some(100.0));
        let mut buf = Vec::new();
        serialize_trace(&[a.clone(), a], &mut buf).unwrap();
        match parse_trace(&buf[..]) {
            Err(WorkloadError::DuplicateJobId(id)) => assert_eq!(id, "j1"),
            other => panic!("expected DuplicateJobId, got {other:?}"),
        }
    }

    #[test]
    fn event_stream_orders_by_time() {
        let a = job("A", 10, Some(20), Some(1.0));
        let b = job("B", 15, None, None);
        let events = event_stream(&[a, b]);
        let shape: Vec<_> = events.iter().map(|e| (e.time, e.kind, e.job_id.as_str())).collect();
        assert_eq!(
            shape,
            vec![
                (10, EventKind::Submitted, "A"),
                (15, EventKind::Submitted, "B"),
                (20, EventKind::Finished, "A"),
            ]
        );
    }

    #[test]
    fn finished_sorts_before_submitted_at_equal_time() {
        let a = job("A", 5, Some(15), Some(1.0));
        let b = job("B", 15, None, None);
        let events = event_stream(&[a, b]);
        assert_eq!(events[1].kind, EventKind::Finished);
        assert_eq!(events[2].kind, EventKind::Submitted);
    }

    #[test]
    fn event_stream_empty() {
        assert!(event_stream(&[]).is_empty());
    }

    #[test]
    fn calendar_features_known_instants() {
        assert_eq!(derive_calendar_features(0), (3, 0)); // 1970-01-01, Thursday
        assert_eq!(derive_calendar_features(93_000), (4, 6_600)); // Friday 01:50
        assert_eq!(derive_calendar_features(345_600), (0, 0)); // Monday
    }

    #[test]
    fn generator_is_deterministic() {
        let config = SyntheticConfig::new(200, 42);
        let a = generate_synthetic(&config).unwrap();
        let b = generate_synthetic(&config).unwrap();
        assert_eq!(a, b);
        let mut buf_a = Vec::new();
        let mut buf_b = Vec::new();
        serialize_trace(&a, &mut buf_a).unwrap();
        serialize_trace(&b, &mut buf_b).unwrap();
        assert_eq!(buf_a, buf_b);
    }

    #[test]
    fn generator_rejects_zero_jobs() {
        let config = SyntheticConfig::new(0, 1);
        assert!(matches!(
            generate_synthetic(&config),
            Err(WorkloadError::InvalidConfig(_))
        ));
    }

    #[test]
    fn generated_records_validate_and_sort_by_submit() {
        let config = SyntheticConfig::new(500, 7);
        let records = generate_synthetic(&config).unwrap();
        assert_eq!(records.len(), 500);
        for r in &records {
            r.validate().unwrap();
        }
        for pair in records.windows(2) {
            assert!(pair[0].submit_time <= pair[1].submit_time);
        }
    }

    // With bases at bin centers and sigma = 64, a label leaves its planted
    // bin only when |noise| > 256 MiB, i.e. beyond 4 sigma.
    #[test]
    fn planted_rule_oracle_accuracy() {
        let config = SyntheticConfig::new(5_000, 7);
        let records = generate_synthetic(&config).unwrap();
        let mut hits = 0usize;
        for (i, r) in records.iter().enumerate() {
            let (u, c) = generator_indices(r).unwrap();
            let label_bin = (r.max_mem_mib.unwrap() / GENERATOR_BIN_SIZE_MIB).floor() as usize;
            if label_bin == oracle_bin(&config, u, c, i) {
                hits += 1;
            }
        }
        let acc = hits as f64 / records.len() as f64;
        assert!(acc >= 0.99, "oracle accuracy {acc}");
    }

    #[test]
    fn drift_remaps_planted_rule() {
        let mut config = SyntheticConfig::new(10, 3);
        config.drift_at = Some(5);
        let before = planted_table(&config);
        let after = planted_table_after_drift(&config);
        let differs = (0..config.n_users)
            .flat_map(|u| (0..config.n_commands).map(move |c| (u, c)))
            .any(|(u, c)| before.bin(u, c) != after.bin(u, c));
        assert!(differs);
    }

    proptest! {
        #[test]
        fn trace_roundtrip(submits in proptest::collection::vec(0i64..1_000_000, 0..20)) {
            let records: Vec<JobRecord> = submits
                .iter()
                .enumerate()
                .map(|(i, &s)| {
                    let finished = i % 2 == 0;
                    job(
                        &format!("j{i}"),
                        s,
                        finished.then_some(s + 100),
                        finished.then_some(i as f64 * 17.5),
                    )
                })
                .collect();
            let mut buf = Vec::new();
            serialize_trace(&records, &mut buf).unwrap();
            let back = parse_trace(&buf[..]).unwrap();
            prop_assert_eq!(back, records);
        }

        #[test]
        fn event_stream_is_sorted_permutation(n in 0usize..30, seed in 0u64..1000) {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let records: Vec<JobRecord> = (0..n)
                .map(|i| {
                    let s = rand::Rng::gen_range(&mut rng, 0i64..500);
                    let finished = rand::Rng::gen_bool(&mut rng, 0.6);
                    job(
                        &format!("j{i}"),
                        s,
                        finished.then(|| s + rand::Rng::gen_range(&mut rng, 1i64..100)),
                        finished.then_some(1.0),
                    )
                })
                .collect();
            let events = event_stream(&records);
            let finished = records.iter().filter(|r| r.is_finished()).count();
            prop_assert_eq!(events.len(), records.len() + finished);
            for pair in events.windows(2) {
                prop_assert!(pair[0] <= pair[1]);
            }
        }
    }
}
