//! Runs generated code through an external sandbox command.
//!
//! Each test spawns `<command…> --timeout <seconds>` with the JSON payload
//! `{"code", "input"}` on stdin. A test passes iff the process exits with
//! status 0 and its stdout, trimmed, equals the expected output. The child
//! environment is cleared except for the allowlisted variables.

use std::io::{Read, Write};
use std::process::{Command, Stdio};
use std::sync::atomic::{AtomicUsize, Ordering};
use std::sync::mpsc;
use std::thread;
use std::time::{Duration, Instant};

use prunekit_core::recovery::{CodeRunner, TestCase, TestOutcome};

use crate::error::{Error, Result};

#[derive(Debug, Clone, PartialEq)]
pub struct ProcessExecutor {
    /// Program followed by its fixed arguments.
    pub command: Vec<String>,
    pub timeout: Duration,
    pub env_allowlist: Vec<String>,
    /// Maximum concurrently running test processes.
    pub max_procs: usize,
}

impl ProcessExecutor {
    pub fn new(command: Vec<String>, timeout: Duration) -> Result<Self> {
        if command.first().is_none_or(|c| c.is_empty()) {
            return Err(Error::Usage("executor command is empty".into()));
        }
        if timeout.is_zero() {
            return Err(Error::Usage("executor timeout must be positive".into()));
        }
        Ok(Self {
            command,
            timeout,
            env_allowlist: vec!["PATH".into()],
            max_procs: thread::available_parallelism().map_or(1, |n| n.get()),
        })
    }

    /// Splits a command line on whitespace.
    pub fn from_command_line(line: &str, timeout: Duration) -> Result<Self> {
        Self::new(line.split_whitespace().map(String::from).collect(), timeout)
    }

    pub fn with_env_allowlist(mut self, vars: Vec<String>) -> Self {
        self.env_allowlist = vars;
        self
    }

    pub fn with_max_procs(mut self, n: usize) -> Self {
        self.max_procs = n.max(1);
        self
    }

    fn timeout_arg(&self) -> String {
        let secs = self.timeout.as_secs_f64();
        if secs.fract() == 0.0 {
            format!("{}", secs as u64)
        } else {
            format!("{secs}")
        }
    }

    pub fn run_one(&self, code: &str, test: &TestCase) -> prunekit_core::Result<TestOutcome> {
        let mut cmd = Command::new(&self.command[0]);
        cmd.args(&self.command[1..])
            .arg("--timeout")
            .arg(self.timeout_arg())
            .env_clear()
            .stdin(Stdio::piped())
            .stdout(Stdio::piped())
            .stderr(Stdio::null());
        for var in &self.env_allowlist {
            if let Some(v) = std::env::var_os(var) {
                cmd.env(var, v);
            }
        }
        let mut child = cmd
            .spawn()
            .map_err(|e| prunekit_core::Error::ExecutorUnavailable(format!("{}: {e}", self.command[0])))?;

        let payload = serde_json::json!({ "code": code, "input": test.input }).to_string();
        let mut stdin = child.stdin.take().expect("stdin is piped");
        thread::spawn(move || {
            // the command may exit without reading its input
            let _ = stdin.write_all(payload.as_bytes());
        });
        let mut stdout = child.stdout.take().expect("stdout is piped");
        let (tx, rx) = mpsc::channel();
        thread::spawn(move || {
            let mut buf = Vec::new();
            let _ = stdout.read_to_end(&mut buf);
            let _ = tx.send(buf);
        });

        let deadline = Instant::now() + self.timeout;
        let status = loop {
            match child.try_wait() {
                Ok(Some(status)) => break Some(status),
                Ok(None) if Instant::now() >= deadline => break None,
                Ok(None) => thread::sleep(Duration::from_millis(2)),
                Err(_) => break None,
            }
        };
        let Some(status) = status else {
            let _ = child.kill();
            let _ = child.wait();
            return Ok(TestOutcome { passed: false, timed_out: true });
        };
        // a lingering grandchild can hold stdout open past the deadline
        let remaining = deadline.saturating_duration_since(Instant::now()).max(Duration::from_millis(50));
        let Ok(out) = rx.recv_timeout(remaining) else {
            return Ok(TestOutcome { passed: false, timed_out: true });
        };
        let out = String::from_utf8_lossy(&out);
        let passed = status.success() && out.trim() == test.expected;
        Ok(TestOutcome { passed, timed_out: false })
    }
}

impl CodeRunner for ProcessExecutor {
    fn run_tests(&self, code: &str, tests: &[TestCase]) -> prunekit_core::Result<Vec<TestOutcome>> {
        let next = AtomicUsize::new(0);
        let workers = self.max_procs.min(tests.len()).max(1);
        let mut results: Vec<(usize, prunekit_core::Result<TestOutcome>)> = thread::scope(|s| {
            let handles: Vec<_> = (0..workers)
                .map(|_| {
                    s.spawn(|| {
                        let mut done = Vec::new();
                        loop {
                            let i = next.fetch_add(1, Ordering::Relaxed);
                            let Some(test) = tests.get(i) else { break done };
                            done.push((i, self.run_one(code, test)));
                        }
                    })
                })
                .collect();
            handles.into_iter().flat_map(|h| h.join().expect("executor worker panicked")).collect()
        });
        results.sort_by_key(|(i, _)| *i);
        results.into_iter().map(|(_, r)| r).collect()
    }
}
