//! Client for an external execution backend.
//!
//! The backend is a child process reading one JSON request per line on
//! stdin and answering one JSON response per line on stdout:
//!
//! ```text
//! → {"id": "r0", "solution": "...", "test": "...", "timeout_ms": 2000}
//! ← {"id": "r0", "status": "pass"}
//! ```
//!
//! Responses may arrive in any order and are matched by id. Requests to one
//! backend are serialized; run several backends for parallelism.

use std::collections::{HashMap, HashSet};
use std::io::{BufRead, BufReader, Write};
use std::process::{Child, ChildStdin, Command, Stdio};
use std::sync::mpsc::{self, Receiver, RecvTimeoutError};
use std::sync::Mutex;
use std::thread;
use std::time::Duration;

use serde::{Deserialize, Serialize};

use super::{ExecError, Executor, Outcome};

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExecRequest {
    pub id: String,
    pub solution: String,
    pub test: String,
    pub timeout_ms: u64,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExecResponse {
    pub id: String,
    pub status: Outcome,
}

enum ReaderEvent {
    Line(String),
    Closed,
    Failed(String),
}

struct Backend {
    child: Child,
    stdin: ChildStdin,
    events: Receiver<ReaderEvent>,
    next_id: u64,
    /// Ids whose requests timed out; their late answers are dropped.
    abandoned: HashSet<String>,
    closed: bool,
}

pub struct ExternalExecutor {
    backend: Mutex<Backend>,
    timeout_ms: u64,
    grace: Duration,
}

impl ExternalExecutor {
    /// Starts `command` through `sh -c`.
    pub fn spawn(command: &str, timeout_ms: u64) -> Result<Self, ExecError> {
        let mut child = Command::new("sh")
            .arg("-c")
            .arg(command)
            .stdin(Stdio::piped())
            .stdout(Stdio::piped())
            .stderr(Stdio::inherit())
            .spawn()
            .map_err(|e| ExecError::Io(format!("spawning `{command}`: {e}")))?;
        let stdin = child.stdin.take().expect("piped stdin");
        let stdout = child.stdout.take().expect("piped stdout");
        let (tx, rx) = mpsc::channel();
        thread::spawn(move || {
            let reader = BufReader::new(stdout);
            for line in reader.lines() {
                let event = match line {
                    Ok(l) => ReaderEvent::Line(l),
                    Err(e) => ReaderEvent::Failed(e.to_string()),
                };
                if tx.send(event).is_err() {
                    return;
                }
            }
            let _ = tx.send(ReaderEvent::Closed);
        });
        Ok(Self {
            backend: Mutex::new(Backend {
                child,
                stdin,
                events: rx,
                next_id: 0,
                abandoned: HashSet::new(),
                closed: false,
            }),
            timeout_ms,
            grace: Duration::from_millis(250),
        })
    }

    /// Extra wait beyond `timeout_ms` before a request is declared timed out.
    pub fn with_grace(mut self, grace: Duration) -> Self {
        self.grace = grace;
        self
    }

    pub fn timeout_ms(&self) -> u64 {
        self.timeout_ms
    }

    /// Runs one solution/test pair.
    pub fn external_execute(&self, solution: &str, test: &str, timeout_ms: u64) -> Result<Outcome, ExecError> {
        self.execute_batch(&[(solution, test)], timeout_ms)?
            .pop()
            .expect("one result per request")
    }

    /// Sends every pair, then collects answers in whatever order they come.
    ///
    /// The outer error reports a broken backend. Inner results carry
    /// `Timeout` for requests left unanswered once the backend has been
    /// silent for `timeout_ms` plus the grace period.
    pub fn execute_batch(&self, pairs: &[(&str, &str)], timeout_ms: u64) -> Result<Vec<Result<Outcome, ExecError>>, ExecError> {
        let mut backend = self.backend.lock().map_err(|_| ExecError::Io("backend lock poisoned".into()))?;
        if backend.closed {
            return Err(ExecError::ProtocolViolation("backend closed its output".into()));
        }
        let mut pending: HashMap<String, usize> = HashMap::with_capacity(pairs.len());
        for (slot, (solution, test)) in pairs.iter().enumerate() {
            let id = format!("r{}", backend.next_id);
            backend.next_id += 1;
            let req = ExecRequest {
                id: id.clone(),
                solution: (*solution).to_owned(),
                test: (*test).to_owned(),
                timeout_ms,
            };
            let mut line = serde_json::to_string(&req).expect("request serializes");
            line.push('\n');
            backend
                .stdin
                .write_all(line.as_bytes())
                .map_err(|e| ExecError::Io(format!("writing request: {e}")))?;
            pending.insert(id, slot);
        }
        backend.stdin.flush().map_err(|e| ExecError::Io(format!("flushing requests: {e}")))?;

        let mut results: Vec<Option<Result<Outcome, ExecError>>> = vec![None; pairs.len()];
        let wait = Duration::from_millis(timeout_ms) + self.grace;
        while !pending.is_empty() {
            match backend.events.recv_timeout(wait) {
                Ok(ReaderEvent::Line(line)) => {
                    let resp: ExecResponse = serde_json::from_str(&line)
                        .map_err(|e| ExecError::ProtocolViolation(format!("bad response line {line:?}: {e}")))?;
                    if let Some(slot) = pending.remove(&resp.id) {
                        results[slot] = Some(Ok(resp.status));
                    } else if !backend.abandoned.remove(&resp.id) {
                        return Err(ExecError::ProtocolViolation(format!("response for unknown id `{}`", resp.id)));
                    }
                }
                Ok(ReaderEvent::Closed) | Err(RecvTimeoutError::Disconnected) => {
                    backend.closed = true;
                    return Err(ExecError::ProtocolViolation("backend closed its output".into()));
                }
                Ok(ReaderEvent::Failed(e)) => return Err(ExecError::Io(format!("reading response: {e}"))),
                Err(RecvTimeoutError::Timeout) => {
                    for (id, slot) in pending.drain() {
                        results[slot] = Some(Err(ExecError::Timeout(timeout_ms)));
                        backend.abandoned.insert(id);
                    }
                }
            }
        }
        Ok(results.into_iter().map(|r| r.expect("every slot resolved")).collect())
    }
}

impl Executor for ExternalExecutor {
    type Solution = String;
    type Test = String;

    /// Timeouts fold into [`Outcome::Error`].
    fn execute(&self, solution: &String, test: &String) -> Result<Outcome, ExecError> {
        match self.external_execute(solution, test, self.timeout_ms) {
            Err(ExecError::Timeout(_)) => Ok(Outcome::Error),
            other => other,
        }
    }
}

impl Drop for ExternalExecutor {
    fn drop(&mut self) {
        if let Ok(backend) = self.backend.get_mut() {
            let _ = backend.child.kill();
            let _ = backend.child.wait();
        }
    }
}
