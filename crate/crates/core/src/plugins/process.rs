//! Child-process execution with output caps and whole-group kill on timeout.

use std::process::Stdio;
use std::time::Duration;

use tokio::io::{AsyncRead, AsyncReadExt, AsyncWriteExt};
use tokio::process::Command;

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ProcOutput {
    pub stdout: Vec<u8>,
    pub stderr: Vec<u8>,
    /// Exit code, or `128 + signal` when killed by a signal.
    pub status: i32,
    pub truncated: bool,
}

#[derive(Debug, thiserror::Error)]
pub enum ProcError {
    #[error("process exceeded {0:?}")]
    Timeout(Duration),
    #[error("failed to run process: {0}")]
    Io(#[from] std::io::Error),
}

/// Kills the child's process group on drop.
struct GroupKill(Option<i32>);

impl Drop for GroupKill {
    fn drop(&mut self) {
        if let Some(pgid) = self.0 {
            // SAFETY: signalling a process group we created; failure (already gone) is harmless
            unsafe {
                libc::kill(-pgid, libc::SIGKILL);
            }
        }
    }
}

async fn read_capped<R: AsyncRead + Unpin>(mut r: R, cap: usize) -> std::io::Result<(Vec<u8>, bool)> {
    let mut kept = Vec::new();
    let mut buf = [0u8; 8192];
    let mut truncated = false;
    loop {
        let n = r.read(&mut buf).await?;
        if n == 0 {
            return Ok((kept, truncated));
        }
        let room = cap.saturating_sub(kept.len());
        kept.extend_from_slice(&buf[..n.min(room)]);
        truncated |= n > room;
    }
}

/// Runs `cmd` in its own process group, feeding `stdin` and capturing at most
/// `cap` bytes of each output stream. The whole group is killed on timeout
/// or if the future is dropped early.
pub async fn run_capped(
    mut cmd: Command,
    stdin: Option<Vec<u8>>,
    timeout: Duration,
    cap: usize,
) -> Result<ProcOutput, ProcError> {
    cmd.stdin(if stdin.is_some() { Stdio::piped() } else { Stdio::null() })
        .stdout(Stdio::piped())
        .stderr(Stdio::piped())
        .process_group(0)
        .kill_on_drop(true);
    let mut child = cmd.spawn()?;
    let guard = GroupKill(child.id().map(|p| p as i32));

    let mut input = child.stdin.take();
    let stdout = child.stdout.take().expect("piped stdout");
    let stderr = child.stderr.take().expect("piped stderr");
    let work = async {
        if let (Some(mut w), Some(data)) = (input.take(), stdin) {
            // a child that exits without reading its input is not an error here
            let _ = w.write_all(&data).await;
            drop(w);
        }
        let (out, err, status) = tokio::join!(read_capped(stdout, cap), read_capped(stderr, cap), child.wait());
        Ok::<_, std::io::Error>((out?, err?, status?))
    };
    match tokio::time::timeout(timeout, work).await {
        Ok(res) => {
            let ((stdout, t1), (stderr, t2), status) = res?;
            // the leader is reaped; kill stragglers left in the group
            drop(guard);
            use std::os::unix::process::ExitStatusExt;
            let code = status.code().unwrap_or_else(|| 128 + status.signal().unwrap_or(0));
            Ok(ProcOutput { stdout, stderr, status: code, truncated: t1 || t2 })
        }
        Err(_) => Err(ProcError::Timeout(timeout)),
    }
}
