//! External harness adapter: a child process speaking line-delimited JSON
//! over its stdin/stdout, and the matching server loop for the simulator.

use std::collections::{BTreeMap, HashMap, VecDeque};
use std::io::{BufRead, BufReader, Write};
use std::process::{Child, ChildStdin, Command, Stdio};
use std::sync::mpsc::{self, Receiver, RecvTimeoutError};
use std::sync::Mutex;
use std::thread;
use std::time::Duration;

use serde::{Deserialize, Serialize};

use super::{Adapter, Simulator, TaskRequest, TaskResult};
use crate::error::{Error, Result};
use crate::flagspace::FlagValue;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "type", rename_all = "lowercase")]
pub enum WireMessage {
    Hello {
        parallel: bool,
    },
    Eval {
        config: BTreeMap<String, FlagValue>,
        task_id: String,
        session_index: u64,
        seed: u64,
    },
    Result {
        task_id: String,
        passed: u8,
        cost: f64,
        #[serde(default)]
        counters: BTreeMap<String, f64>,
        #[serde(default, skip_serializing_if = "Option::is_none")]
        turns: Option<u64>,
    },
}

struct Session {
    child: Child,
    stdin: ChildStdin,
    lines: Receiver<String>,
    parallel: bool,
}

impl Drop for Session {
    fn drop(&mut self) {
        let _ = self.child.kill();
        let _ = self.child.wait();
    }
}

/// Runs tasks through a child process started with `sh -c COMMAND`. The
/// child is spawned on first use and respawned after a timeout or a broken
/// pipe.
pub struct ProcessAdapter {
    command: String,
    timeout: Duration,
    timeout_cost: f64,
    session: Mutex<Option<Session>>,
}

impl ProcessAdapter {
    pub fn new(command: impl Into<String>) -> Self {
        ProcessAdapter {
            command: command.into(),
            timeout: Duration::from_secs(600),
            timeout_cost: 1.0,
            session: Mutex::new(None),
        }
    }

    /// Per-task deadline; a task that misses it is recorded as a failure
    /// costing `cost`.
    pub fn with_timeout(mut self, timeout: Duration, cost: f64) -> Self {
        self.timeout = timeout;
        self.timeout_cost = cost;
        self
    }

    fn spawn(&self) -> Result<Session> {
        let transport = |reason: String| Error::Transport { task_id: "<handshake>".into(), reason };
        let mut child = Command::new("sh")
            .arg("-c")
            .arg(&self.command)
            .stdin(Stdio::piped())
            .stdout(Stdio::piped())
            .stderr(Stdio::inherit())
            .spawn()
            .map_err(|e| transport(format!("spawn `{}`: {e}", self.command)))?;
        let stdin = child.stdin.take().expect("piped stdin");
        let stdout = child.stdout.take().expect("piped stdout");
        let (tx, lines) = mpsc::channel();
        thread::spawn(move || {
            for line in BufReader::new(stdout).lines() {
                let Ok(line) = line else { break };
                if line.trim().is_empty() {
                    continue;
                }
                if tx.send(line).is_err() {
                    break;
                }
            }
        });
        let hello = match lines.recv_timeout(self.timeout) {
            Ok(line) => line,
            Err(RecvTimeoutError::Timeout) => return Err(transport("no hello before timeout".into())),
            Err(RecvTimeoutError::Disconnected) => return Err(transport("adapter exited before hello".into())),
        };
        match serde_json::from_str::<WireMessage>(&hello) {
            Ok(WireMessage::Hello { parallel }) => Ok(Session { child, stdin, lines, parallel }),
            Ok(_) => Err(Error::Malformed { payload: hello, reason: "expected hello".into() }),
            Err(e) => Err(Error::Malformed { payload: hello, reason: e.to_string() }),
        }
    }
}

fn parse_result(line: &str) -> Result<TaskResult> {
    let malformed = |reason: String| Error::Malformed { payload: line.to_string(), reason };
    match serde_json::from_str::<WireMessage>(line) {
        Ok(WireMessage::Result { task_id, passed, cost, counters, turns }) => {
            if passed > 1 {
                return Err(malformed(format!("passed must be 0 or 1, got {passed}")));
            }
            if !cost.is_finite() || cost < 0.0 {
                return Err(malformed(format!("cost must be a nonnegative number, got {cost}")));
            }
            if let Some((k, v)) = counters.iter().find(|(_, v)| !v.is_finite() || **v < 0.0) {
                return Err(malformed(format!("counter `{k}` is {v}")));
            }
            Ok(TaskResult { task_id, passed: passed == 1, cost, counters, turns: turns.unwrap_or(0) })
        }
        Ok(_) => Err(malformed("expected a result message".into())),
        Err(e) => Err(malformed(e.to_string())),
    }
}

impl Adapter for ProcessAdapter {
    fn run_tasks(&self, requests: &[TaskRequest], parallelism: usize) -> Result<Vec<TaskResult>> {
        let mut guard = self.session.lock().unwrap_or_else(|p| p.into_inner());
        let mut results: Vec<Option<TaskResult>> = vec![None; requests.len()];
        let mut queue: VecDeque<usize> = (0..requests.len()).collect();
        let mut in_flight: HashMap<String, usize> = HashMap::new();

        while !queue.is_empty() || !in_flight.is_empty() {
            if guard.is_none() {
                *guard = Some(self.spawn()?);
            }
            let session = guard.as_mut().expect("session just ensured");
            let window = if session.parallel { parallelism.max(1) } else { 1 };
            while in_flight.len() < window {
                let Some(i) = queue.pop_front() else { break };
                let req = &requests[i];
                let msg = WireMessage::Eval {
                    config: req.assignment.clone(),
                    task_id: req.task_id.clone(),
                    session_index: req.session_index,
                    seed: req.seed,
                };
                let mut line = serde_json::to_string(&msg)?;
                line.push('\n');
                if let Err(e) = session.stdin.write_all(line.as_bytes()).and_then(|_| session.stdin.flush()) {
                    *guard = None;
                    return Err(Error::Transport { task_id: req.task_id.clone(), reason: e.to_string() });
                }
                in_flight.insert(req.task_id.clone(), i);
            }

            match session.lines.recv_timeout(self.timeout) {
                Ok(line) => {
                    let result = parse_result(&line)?;
                    let Some(i) = in_flight.remove(&result.task_id) else {
                        return Err(Error::Malformed {
                            payload: line,
                            reason: "result for a task that is not in flight".into(),
                        });
                    };
                    results[i] = Some(result);
                }
                Err(RecvTimeoutError::Timeout) => {
                    // Everything in flight is charged as a failure; a fresh
                    // child picks up the rest so late replies cannot leak.
                    for (task_id, i) in in_flight.drain() {
                        results[i] = Some(TaskResult {
                            task_id,
                            passed: false,
                            cost: self.timeout_cost,
                            counters: BTreeMap::new(),
                            turns: 0,
                        });
                    }
                    *guard = None;
                }
                Err(RecvTimeoutError::Disconnected) => {
                    *guard = None;
                    let mut pending: Vec<&String> = in_flight.keys().collect();
                    pending.sort();
                    return Err(Error::Transport {
                        task_id: pending.first().map(|s| s.to_string()).unwrap_or_default(),
                        reason: "adapter closed its output".into(),
                    });
                }
            }
        }
        Ok(results.into_iter().map(|r| r.expect("every task resolved")).collect())
    }
}

/// Serves the simulator over the wire protocol: a hello line, then one
/// result line per eval line until end of input.
pub fn serve_simulator<R: BufRead, W: Write>(sim: &Simulator, input: R, mut output: W) -> Result<()> {
    writeln!(output, "{}", serde_json::to_string(&WireMessage::Hello { parallel: true })?)?;
    output.flush()?;
    for line in input.lines() {
        let line = line?;
        if line.trim().is_empty() {
            continue;
        }
        let (config, task_id, session_index, seed) = match serde_json::from_str::<WireMessage>(&line) {
            Ok(WireMessage::Eval { config, task_id, session_index, seed }) => (config, task_id, session_index, seed),
            Ok(_) => return Err(Error::Malformed { payload: line, reason: "expected an eval message".into() }),
            Err(e) => return Err(Error::Malformed { payload: line, reason: e.to_string() }),
        };
        let parsed = sim.space().configuration(&config)?;
        let r = sim.run_task(&TaskRequest { config: parsed, assignment: config, task_id, session_index, seed })?;
        let msg = WireMessage::Result {
            task_id: r.task_id,
            passed: u8::from(r.passed),
            cost: r.cost,
            counters: r.counters,
            turns: Some(r.turns),
        };
        writeln!(output, "{}", serde_json::to_string(&msg)?)?;
        output.flush()?;
    }
    Ok(())
}
