use std::io::Read;
use std::path::{Path, PathBuf};
use std::process::{Command, Stdio};
use std::sync::atomic::{AtomicU64, Ordering};
use std::sync::{Arc, Mutex};
use std::time::{Duration, Instant};

use serde::Serialize;
use wait_timeout::ChildExt;

use super::OrchestratorError;

pub const SUBMISSION_FILE: &str = "submission.csv";
pub const SCRIPT_FILE: &str = "solution.py";

/// What one execution produced.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ExecOutcome {
    /// `None` when the process was killed (timeout or signal).
    pub exit_code: Option<i32>,
    pub stdout: String,
    pub stderr: String,
    pub wall_time: Duration,
    pub timed_out: bool,
}

impl ExecOutcome {
    pub fn succeeded(&self) -> bool {
        self.exit_code == Some(0) && !self.timed_out
    }
}

/// Runs a generated script inside a workspace.
pub trait Executor: Send + Sync {
    /// Errors mean the executor itself is unusable, not that the script
    /// failed; script failures are reported through `ExecOutcome`.
    fn execute(&self, script: &str, workspace: &Path, timeout: Duration) -> Result<ExecOutcome, OrchestratorError>;
}

/// Monotonic time source, so refinement deadlines are testable.
pub trait Clock: Send + Sync {
    fn now(&self) -> Duration;
}

#[derive(Debug)]
pub struct SystemClock(Instant);

impl SystemClock {
    pub fn new() -> Self {
        Self(Instant::now())
    }
}

impl Default for SystemClock {
    fn default() -> Self {
        Self::new()
    }
}

impl Clock for SystemClock {
    fn now(&self) -> Duration {
        self.0.elapsed()
    }
}

/// A clock that only moves when told to.
#[derive(Debug, Default)]
pub struct ManualClock {
    nanos: AtomicU64,
}

impl ManualClock {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn advance(&self, by: Duration) {
        self.nanos.fetch_add(by.as_nanos() as u64, Ordering::SeqCst);
    }
}

impl Clock for ManualClock {
    fn now(&self) -> Duration {
        Duration::from_nanos(self.nanos.load(Ordering::SeqCst))
    }
}

impl<C: Clock + ?Sized> Clock for Arc<C> {
    fn now(&self) -> Duration {
        (**self).now()
    }
}

/// Writes the script to the workspace and runs it with a Python interpreter,
/// killing it at the timeout.
#[derive(Debug, Clone)]
pub struct SubprocessExecutor {
    pub interpreter: PathBuf,
}

impl Default for SubprocessExecutor {
    fn default() -> Self {
        Self {
            interpreter: PathBuf::from("python3"),
        }
    }
}

impl SubprocessExecutor {
    pub fn new(interpreter: impl Into<PathBuf>) -> Self {
        Self {
            interpreter: interpreter.into(),
        }
    }
}

fn drain<R: Read + Send + 'static>(pipe: Option<R>) -> std::thread::JoinHandle<String> {
    std::thread::spawn(move || {
        let mut buf = Vec::new();
        if let Some(mut p) = pipe {
            let _ = p.read_to_end(&mut buf);
        }
        String::from_utf8_lossy(&buf).into_owned()
    })
}

impl Executor for SubprocessExecutor {
    fn execute(&self, script: &str, workspace: &Path, timeout: Duration) -> Result<ExecOutcome, OrchestratorError> {
        let path = workspace.join(SCRIPT_FILE);
        std::fs::write(&path, script).map_err(|e| OrchestratorError::WorkspaceInvalid(format!("{}: {e}", path.display())))?;
        let start = Instant::now();
        let mut child = Command::new(&self.interpreter)
            .arg(SCRIPT_FILE)
            .current_dir(workspace)
            .stdin(Stdio::null())
            .stdout(Stdio::piped())
            .stderr(Stdio::piped())
            .spawn()
            .map_err(|e| OrchestratorError::ExecutorUnavailable(format!("{}: {e}", self.interpreter.display())))?;
        let out = drain(child.stdout.take());
        let err = drain(child.stderr.take());
        let status = child
            .wait_timeout(timeout)
            .map_err(|e| OrchestratorError::ExecutorUnavailable(e.to_string()))?;
        let (exit_code, timed_out) = match status {
            Some(s) => (s.code(), false),
            None => {
                let _ = child.kill();
                let _ = child.wait();
                (None, true)
            }
        };
        let stdout = out.join().unwrap_or_default();
        let mut stderr = err.join().unwrap_or_default();
        if timed_out {
            stderr.push_str(&format!("\nTimeoutExpired: killed after {} s\n", timeout.as_secs_f64()));
        }
        Ok(ExecOutcome {
            exit_code,
            stdout,
            stderr,
            wall_time: start.elapsed(),
            timed_out,
        })
    }
}

/// One scripted execution result.
#[derive(Debug, Clone, PartialEq)]
pub struct ScriptedRun {
    pub exit_code: Option<i32>,
    pub stdout: String,
    pub stderr: String,
    /// Written to `submission.csv` in the workspace when set.
    pub submission: Option<String>,
    pub elapsed: Duration,
    pub timed_out: bool,
}

impl ScriptedRun {
    /// Exit 0, writes a small submission, prints the score when given.
    pub fn success(score: Option<f64>) -> Self {
        Self {
            exit_code: Some(0),
            stdout: score.map(|s| format!("training done\nVALIDATION_SCORE: {s}\n")).unwrap_or_default(),
            stderr: String::new(),
            submission: Some("id,target\n1,0\n".into()),
            elapsed: Duration::from_secs(1),
            timed_out: false,
        }
    }

    pub fn failure(stderr: impl Into<String>) -> Self {
        Self {
            exit_code: Some(1),
            stdout: String::new(),
            stderr: stderr.into(),
            submission: None,
            elapsed: Duration::from_secs(1),
            timed_out: false,
        }
    }

    pub fn timeout() -> Self {
        Self {
            exit_code: None,
            stdout: String::new(),
            stderr: "TimeoutExpired".into(),
            submission: None,
            elapsed: Duration::from_secs(300),
            timed_out: true,
        }
    }

    pub fn with_submission(mut self, csv: impl Into<String>) -> Self {
        self.submission = Some(csv.into());
        self
    }

    pub fn with_elapsed(mut self, elapsed: Duration) -> Self {
        self.elapsed = elapsed;
        self
    }
}

/// Plays back scripted runs in order (repeating the last), advancing an
/// optional manual clock by each run's elapsed time.
pub struct ScriptedExecutor {
    runs: Vec<ScriptedRun>,
    clock: Option<Arc<ManualClock>>,
    scripts: Mutex<Vec<String>>,
}

impl ScriptedExecutor {
    pub fn new(runs: Vec<ScriptedRun>) -> Result<Self, OrchestratorError> {
        if runs.is_empty() {
            return Err(OrchestratorError::ExecutorUnavailable("empty execution script".into()));
        }
        Ok(Self {
            runs,
            clock: None,
            scripts: Mutex::new(Vec::new()),
        })
    }

    pub fn with_clock(mut self, clock: Arc<ManualClock>) -> Self {
        self.clock = Some(clock);
        self
    }

    pub fn call_count(&self) -> usize {
        self.scripts.lock().unwrap_or_else(|e| e.into_inner()).len()
    }

    /// Scripts received so far, in call order.
    pub fn scripts(&self) -> Vec<String> {
        self.scripts.lock().unwrap_or_else(|e| e.into_inner()).clone()
    }
}

impl Executor for ScriptedExecutor {
    fn execute(&self, script: &str, workspace: &Path, timeout: Duration) -> Result<ExecOutcome, OrchestratorError> {
        let run = {
            let mut scripts = self.scripts.lock().unwrap_or_else(|e| e.into_inner());
            let i = scripts.len().min(self.runs.len() - 1);
            scripts.push(script.to_string());
            self.runs[i].clone()
        };
        let (elapsed, timed_out) = if run.elapsed > timeout {
            (timeout, true)
        } else {
            (run.elapsed, run.timed_out)
        };
        if let Some(c) = &self.clock {
            c.advance(elapsed);
        }
        if !timed_out {
            if let Some(csv) = &run.submission {
                let path = workspace.join(SUBMISSION_FILE);
                std::fs::write(&path, csv)
                    .map_err(|e| OrchestratorError::WorkspaceInvalid(format!("{}: {e}", path.display())))?;
            }
        }
        Ok(ExecOutcome {
            exit_code: if timed_out { None } else { run.exit_code },
            stdout: run.stdout,
            stderr: if timed_out && !run.timed_out { "TimeoutExpired".into() } else { run.stderr },
            wall_time: elapsed,
            timed_out,
        })
    }
}

/// Value of the last `VALIDATION_SCORE: <float>` line. A non-finite or
/// unparseable value on that line yields `None`.
pub fn parse_validation_score(stdout: &str) -> Option<f64> {
    let value = stdout
        .lines()
        .rev()
        .find_map(|l| l.trim().strip_prefix("VALIDATION_SCORE:"))?;
    value.trim().parse::<f64>().ok().filter(|v| v.is_finite())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn score_lines() {
        assert_eq!(parse_validation_score("VALIDATION_SCORE: 0.8421"), Some(0.8421));
        assert_eq!(parse_validation_score("nothing here"), None);
        assert_eq!(parse_validation_score("VALIDATION_SCORE: 0.7\nlog\nVALIDATION_SCORE: 0.9\n"), Some(0.9));
        assert_eq!(parse_validation_score("VALIDATION_SCORE: nan"), None);
        assert_eq!(parse_validation_score("VALIDATION_SCORE: 0.7\nVALIDATION_SCORE: oops"), None);
        assert_eq!(parse_validation_score("  VALIDATION_SCORE:1e-3  "), Some(0.001));
        assert_eq!(parse_validation_score("fold VALIDATION_SCORE: 0.5"), None);
    }

    #[test]
    fn scripted_playback_writes_submission_and_ticks_clock() {
        let dir = tempfile::tempdir().unwrap();
        let clock = Arc::new(ManualClock::new());
        let ex = ScriptedExecutor::new(vec![
            ScriptedRun::failure("boom"),
            ScriptedRun::success(Some(0.5)).with_elapsed(Duration::from_secs(10)),
        ])
        .unwrap()
        .with_clock(clock.clone());
        let a = ex.execute("s1", dir.path(), Duration::from_secs(300)).unwrap();
        assert!(!a.succeeded());
        assert!(!dir.path().join(SUBMISSION_FILE).exists());
        let b = ex.execute("s2", dir.path(), Duration::from_secs(300)).unwrap();
        assert!(b.succeeded());
        assert!(dir.path().join(SUBMISSION_FILE).exists());
        assert_eq!(clock.now(), Duration::from_secs(11));
        assert_eq!(ex.scripts(), ["s1", "s2"]);
    }

    #[test]
    fn scripted_run_longer_than_timeout_is_cut() {
        let dir = tempfile::tempdir().unwrap();
        let ex = ScriptedExecutor::new(vec![ScriptedRun::success(None).with_elapsed(Duration::from_secs(500))]).unwrap();
        let o = ex.execute("s", dir.path(), Duration::from_secs(300)).unwrap();
        assert!(o.timed_out);
        assert_eq!(o.wall_time, Duration::from_secs(300));
        assert!(!dir.path().join(SUBMISSION_FILE).exists());
    }

    #[test]
    fn subprocess_runs_python() {
        let dir = tempfile::tempdir().unwrap();
        let ex = SubprocessExecutor::default();
        let o = ex
            .execute(
                "open('submission.csv','w').write('id,y\\n1,2\\n')\nprint('VALIDATION_SCORE: 0.25')",
                dir.path(),
                Duration::from_secs(30),
            )
            .unwrap();
        assert!(o.succeeded(), "{o:?}");
        assert_eq!(parse_validation_score(&o.stdout), Some(0.25));
        assert!(dir.path().join(SUBMISSION_FILE).exists());

        let o = ex.execute("import time\ntime.sleep(10)", dir.path(), Duration::from_millis(300)).unwrap();
        assert!(o.timed_out);
        assert!(o.wall_time < Duration::from_secs(5));

        let o = ex.execute("import not_a_module_zz", dir.path(), Duration::from_secs(30)).unwrap();
        assert_eq!(o.exit_code, Some(1));
        assert!(o.stderr.contains("ModuleNotFoundError"));
    }

    #[test]
    fn missing_interpreter_is_unavailable() {
        let dir = tempfile::tempdir().unwrap();
        let ex = SubprocessExecutor::new("/nonexistent/python");
        assert!(matches!(
            ex.execute("", dir.path(), Duration::from_secs(1)),
            Err(OrchestratorError::ExecutorUnavailable(_))
        ));
    }
}
