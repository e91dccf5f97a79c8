use std::io::{BufRead, BufReader, Write};
use std::process::{Child, ChildStdin, Command, Stdio};
use std::sync::mpsc::{self, Receiver, RecvTimeoutError};
use std::sync::Mutex;
use std::thread;
use std::time::Duration;

use serde::{Deserialize, Serialize};

use super::ModelError;
use crate::tensor::Tensor;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ExternalRequest {
    pub id: u64,
    pub shape: Vec<usize>,
    pub data: Vec<f32>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ExternalResponse {
    pub id: u64,
    pub scores: Vec<f64>,
}

struct Channel {
    child: Child,
    stdin: ChildStdin,
    lines: Receiver<std::io::Result<String>>,
    next_id: u64,
    dead: bool,
}

/// Handle to a long-running scorer process. Requests are serialized: the
/// mutex guarantees exactly one request in flight per handle.
pub struct ExternalModel {
    channel: Mutex<Channel>,
    num_classes: usize,
    timeout: Duration,
}

impl std::fmt::Debug for ExternalModel {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("ExternalModel")
            .field("num_classes", &self.num_classes)
            .field("timeout", &self.timeout)
            .finish_non_exhaustive()
    }
}

impl ExternalModel {
    pub fn spawn(
        command: &[String],
        workdir: Option<&str>,
        num_classes: usize,
        timeout: Duration,
    ) -> Result<Self, ModelError> {
        let (program, args) = command
            .split_first()
            .ok_or_else(|| ModelError::InvalidSpec("external command is empty".into()))?;
        let mut cmd = Command::new(program);
        cmd.args(args)
            .stdin(Stdio::piped())
            .stdout(Stdio::piped())
            .stderr(Stdio::inherit());
        if let Some(dir) = workdir {
            cmd.current_dir(dir);
        }
        let mut child = cmd.spawn().map_err(|e| ModelError::Spawn(e.to_string()))?;
        let stdin = child
            .stdin
            .take()
            .ok_or_else(|| ModelError::Spawn("stdin unavailable".into()))?;
        let stdout = child
            .stdout
            .take()
            .ok_or_else(|| ModelError::Spawn("stdout unavailable".into()))?;

        let (tx, rx) = mpsc::channel();
        thread::spawn(move || {
            for line in BufReader::new(stdout).lines() {
                let failed = line.is_err();
                if tx.send(line).is_err() || failed {
                    break;
                }
            }
            // dropping tx signals EOF
        });

        Ok(Self {
            channel: Mutex::new(Channel {
                child,
                stdin,
                lines: rx,
                next_id: 1,
                dead: false,
            }),
            num_classes,
            timeout,
        })
    }

    pub fn num_classes(&self) -> usize {
        self.num_classes
    }

    /// Sends one request line and waits for the matching response line.
    pub fn query(&self, input: &Tensor) -> Result<Vec<f64>, ModelError> {
        let mut ch = self.channel.lock().map_err(|_| ModelError::ProcessDied {
            detail: Some("handle poisoned".into()),
        })?;
        if ch.dead {
            return Err(ModelError::ProcessDied { detail: None });
        }
        let id = ch.next_id;
        ch.next_id += 1;
        let request = ExternalRequest {
            id,
            shape: input.shape().to_vec(),
            data: input.data().to_vec(),
        };
        let mut line = serde_json::to_string(&request).expect("request serializes");
        line.push('\n');
        if let Err(e) = ch.stdin.write_all(line.as_bytes()).and_then(|_| ch.stdin.flush()) {
            ch.dead = true;
            return Err(ModelError::ProcessDied {
                detail: Some(e.to_string()),
            });
        }
        let reply = match ch.lines.recv_timeout(self.timeout) {
            Ok(Ok(reply)) => reply,
            Ok(Err(e)) => {
                ch.dead = true;
                return Err(ModelError::ProcessDied {
                    detail: Some(e.to_string()),
                });
            }
            Err(RecvTimeoutError::Disconnected) => {
                ch.dead = true;
                return Err(ModelError::ProcessDied {
                    detail: Some("end of output stream".into()),
                });
            }
            Err(RecvTimeoutError::Timeout) => {
                // a late answer would desynchronize ids, so the handle is retired
                ch.dead = true;
                let _ = ch.child.kill();
                return Err(ModelError::Timeout(self.timeout));
            }
        };
        let response: ExternalResponse = serde_json::from_str(reply.trim())
            .map_err(|e| ModelError::ProtocolViolation(format!("unparseable response: {e}")))?;
        if response.id != id {
            return Err(ModelError::ProtocolViolation(format!(
                "response id {} does not match request id {id}",
                response.id
            )));
        }
        if response.scores.len() != self.num_classes {
            return Err(ModelError::ProtocolViolation(format!(
                "expected {} scores, got {}",
                self.num_classes,
                response.scores.len()
            )));
        }
        if response.scores.iter().any(|s| !s.is_finite()) {
            return Err(ModelError::ProtocolViolation("non-finite score".into()));
        }
        Ok(response.scores)
    }
}

impl Drop for ExternalModel {
    fn drop(&mut self) {
        if let Ok(ch) = self.channel.get_mut() {
            let _ = ch.child.kill();
            let _ = ch.child.wait();
        }
    }
}
