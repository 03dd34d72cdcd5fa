//! Flag parsing for the `predict` verb, which mimics a batch submission
//! command line: single-dash multi-character flags (`-cwd`, `-R`), a `--`
//! separator, and everything after it forming the job command.

use thiserror::Error;

use crate::workload::JobRecord;

#[derive(Debug, Error, PartialEq)]
pub enum PredictArgsError {
    #[error("unknown flag {0}")]
    UnknownFlag(String),
    #[error("flag {0} requires a value")]
    MissingValue(String),
    #[error("invalid value for {flag}: {value}")]
    InvalidValue { flag: String, value: String },
    #[error("missing job command: supply it after --")]
    MissingCommand,
    #[error("duplicate flag {0}")]
    DuplicateFlag(String),
}

/// A parsed prediction request. Unset fields fall back to neutral values so
/// a minimal invocation still forms a full job record.
#[derive(Debug, Clone, PartialEq)]
pub struct PredictArgs {
    pub queue: String,
    pub procs: i64,
    pub runtime_limit_s: i64,
    pub priority: i64,
    pub cwd: String,
    pub resreq: String,
    pub user: String,
    pub group: String,
    pub submit_time: Option<i64>,
    pub command: String,
    pub explain: bool,
    pub allow_cold: bool,
}

impl Default for PredictArgs {
    fn default() -> Self {
        PredictArgs {
            queue: "normal".into(),
            procs: 1,
            runtime_limit_s: 0,
            priority: 0,
            cwd: String::new(),
            resreq: String::new(),
            user: String::new(),
            group: String::new(),
            submit_time: None,
            command: String::new(),
            explain: false,
            allow_cold: false,
        }
    }
}

impl PredictArgs {
    pub fn to_job_record(&self, default_submit_time: i64) -> JobRecord {
        let submit_time = self.submit_time.unwrap_or(default_submit_time);
        JobRecord {
            job_id: "adhoc-predict".into(),
            user: self.user.clone(),
            group: self.group.clone(),
            queue: self.queue.clone(),
            cwd: self.cwd.clone(),
            resreq: self.resreq.clone(),
            command: self.command.clone(),
            priority: self.priority,
            submit_time,
            req_time: self.runtime_limit_s,
            req_procs: self.procs,
            finish_time: None,
            max_mem_mib: None,
        }
    }
}

fn parse_int(flag: &str, value: &str) -> Result<i64, PredictArgsError> {
    value.parse().map_err(|_| PredictArgsError::InvalidValue {
        flag: flag.to_string(),
        value: value.to_string(),
    })
}

/// Parse `predict` arguments (everything after the verb).
///
/// Recognized: `-q queue`, `-n procs`, `-W minutes`, `-P priority`,
/// `-cwd dir`, `-R resreq`, `-u user`, `-g group`, `--submit-time epoch`,
/// `--explain`, `--allow-cold`, then `-- command args…`.
pub fn parse_predict_args(args: &[String]) -> Result<PredictArgs, PredictArgsError> {
    let mut out = PredictArgs::default();
    let mut seen: Vec<&'static str> = Vec::new();
    let mut iter = args.iter();
    let mut command_parts: Option<Vec<String>> = None;

    while let Some(arg) = iter.next() {
        if let Some(parts) = &mut command_parts {
            parts.push(arg.clone());
            continue;
        }
        if arg == "--" {
            command_parts = Some(Vec::new());
            continue;
        }
        let mut take = |flag: &'static str| -> Result<&String, PredictArgsError> {
            if seen.contains(&flag) {
                return Err(PredictArgsError::DuplicateFlag(flag.to_string()));
            }
            seen.push(flag);
            iter.next()
                .ok_or_else(|| PredictArgsError::MissingValue(flag.to_string()))
        };
        match arg.as_str() {
            "-q" => out.queue = take("-q")?.clone(),
            "-n" => out.procs = parse_int("-n", take("-n")?)?,
            "-W" => out.runtime_limit_s = parse_int("-W", take("-W")?)? * 60,
            "-P" => out.priority = parse_int("-P", take("-P")?)?,
            "-cwd" => out.cwd = take("-cwd")?.clone(),
            "-R" => out.resreq = take("-R")?.clone(),
            "-u" => out.user = take("-u")?.clone(),
            "-g" => out.group = take("-g")?.clone(),
            "--submit-time" => {
                out.submit_time = Some(parse_int("--submit-time", take("--submit-time")?)?)
            }
            "--explain" => out.explain = true,
            "--allow-cold" => out.allow_cold = true,
            other => return Err(PredictArgsError::UnknownFlag(other.to_string())),
        }
    }

    match command_parts {
        Some(parts) if !parts.is_empty() => out.command = parts.join(" "),
        _ => return Err(PredictArgsError::MissingCommand),
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn argv(s: &[&str]) -> Vec<String> {
        s.iter().map(|s| s.to_string()).collect()
    }

    #[test]
    fn full_invocation() {
        let args = parse_predict_args(&argv(&[
            "-q", "night", "-n", "4", "-W", "90", "-P", "10", "-cwd", "/scratch/a", "-R",
            "select[mem>512]", "-u", "alice", "-g", "hpc", "--submit-time", "1500000000",
            "--explain", "--", "simulate", "--steps", "100",
        ]))
        .unwrap();
        assert_eq!(args.queue, "night");
        assert_eq!(args.procs, 4);
        assert_eq!(args.runtime_limit_s, 5400);
        assert_eq!(args.priority, 10);
        assert_eq!(args.cwd, "/scratch/a");
        assert_eq!(args.resreq, "select[mem>512]");
        assert_eq!(args.user, "alice");
        assert_eq!(args.group, "hpc");
        assert_eq!(args.submit_time, Some(1_500_000_000));
        assert_eq!(args.command, "simulate --steps 100");
        assert!(args.explain);
        assert!(!args.allow_cold);
    }

    #[test]
    fn minimal_invocation_uses_defaults() {
        let args = parse_predict_args(&argv(&["-u", "bob", "--", "true"])).unwrap();
        assert_eq!(args.queue, "normal");
        assert_eq!(args.procs, 1);
        assert_eq!(args.command, "true");
        assert_eq!(args.submit_time, None);
    }

    #[test]
    fn errors() {
        assert_eq!(
            parse_predict_args(&argv(&["-x", "--", "c"])).unwrap_err(),
            PredictArgsError::UnknownFlag("-x".into())
        );
        assert_eq!(
            parse_predict_args(&argv(&["-q"])).unwrap_err(),
            PredictArgsError::MissingValue("-q".into())
        );
        assert_eq!(
            parse_predict_args(&argv(&["-n", "four", "--", "c"])).unwrap_err(),
            PredictArgsError::InvalidValue {
                flag: "-n".into(),
                value: "four".into()
            }
        );
        assert_eq!(
            parse_predict_args(&argv(&["-u", "a"])).unwrap_err(),
            PredictArgsError::MissingCommand
        );
        assert_eq!(
            parse_predict_args(&argv(&["--"])).unwrap_err(),
            PredictArgsError::MissingCommand
        );
        assert_eq!(
            parse_predict_args(&argv(&["-q", "a", "-q", "b", "--", "c"])).unwrap_err(),
            PredictArgsError::DuplicateFlag("-q".into())
        );
    }

    #[test]
    fn flags_after_separator_are_command_text() {
        let args = parse_predict_args(&argv(&["--", "tool", "-q", "ignored"])).unwrap();
        assert_eq!(args.command, "tool -q ignored");
        assert_eq!(args.queue, "normal");
    }

    #[test]
    fn record_conversion() {
        let args = parse_predict_args(&argv(&["-u", "carl", "-W", "2", "--", "app"])).unwrap();
        let rec = args.to_job_record(42);
        assert_eq!(rec.submit_time, 42);
        assert_eq!(rec.req_time, 120);
        assert_eq!(rec.user, "carl");
        assert!(rec.finish_time.is_none());
    }
}
