//! Running a target on one input and turning the run into a [`Sample`].
//!
//! Native targets are spawned as child processes with a cleared
//! environment. They write their trace to the file named by `RCAB_TRACE`;
//! the verdict comes from the process status. Mock targets are interpreted
//! in-process.

use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};
use std::process::{Command, ExitStatus, Stdio};
use std::thread;
use std::time::Duration;

use log::debug;
use tempfile::TempDir;
use wait_timeout::ChildExt;

use crate::manifest::{Exec, InputMode, TargetSpec, INPUT_PLACEHOLDER};
use crate::model::{Sample, Verdict};
use crate::trace::{Event, Terminal, Trace};

/// Environment variable naming the trace file a native target writes.
pub const TRACE_ENV: &str = "RCAB_TRACE";

/// Variables passed through to native targets; everything else is cleared.
pub const ENV_ALLOWLIST: [&str; 5] = ["PATH", "HOME", "LANG", "LC_ALL", "TMPDIR"];

/// Maps how a run ended to a verdict under the target's crash rules.
/// A signal outside `crash_signals` is not a clean exit either, so it becomes
/// a harness error.
pub fn classify(spec: &TargetSpec, terminal: Terminal) -> Verdict {
    match terminal {
        Terminal::Signal(sig) if spec.crash_signals.contains(&sig) => Verdict::crash_signal(sig),
        Terminal::Signal(_) => Verdict::harness_error(),
        Terminal::Exit(code) if spec.crash_exit_codes.contains(&code) => Verdict::crash_exit(code),
        Terminal::Exit(code) => Verdict::non_crash(code),
    }
}

/// Executes targets for one worker. Native runs reuse a private temporary
/// directory for the input and trace files.
pub struct Runner<'a> {
    spec: &'a TargetSpec,
    workdir: Option<TempDir>,
}

impl<'a> Runner<'a> {
    pub fn new(spec: &'a TargetSpec) -> std::io::Result<Self> {
        let workdir = match spec.exec {
            Exec::Native(_) => Some(tempfile::Builder::new().prefix("rcab-run").tempdir()?),
            Exec::Mock(_) => None,
        };
        Ok(Runner { spec, workdir })
    }

    pub fn spec(&self) -> &'a TargetSpec {
        self.spec
    }

    /// Runs `input` once. Never fails: problems with the run surface as a
    /// `Timeout` or `HarnessError` verdict. `born_at` is left at 0.
    pub fn execute(&mut self, input: &[u8], deadline: Duration) -> Sample {
        let (trace, verdict) = match (&self.spec.exec, &self.workdir) {
            (Exec::Mock(program), _) => {
                let trace = program.run(input);
                let verdict = classify(self.spec, trace.terminal.expect("mock traces terminate"));
                (trace, verdict)
            }
            (Exec::Native(argv), Some(dir)) => run_native(self.spec, argv, dir.path(), input, deadline),
            (Exec::Native(_), None) => unreachable!("native runner without workdir"),
        };
        let verdict = if verdict.is_labelled() && !ids_known(self.spec, &trace) {
            debug!("{}: trace references unknown sites", self.spec.id);
            Verdict::harness_error()
        } else {
            verdict
        };
        Sample {
            input: input.to_vec(),
            trace,
            verdict,
            born_at: 0,
        }
    }
}

/// Convenience wrapper that runs a single input with a fresh [`Runner`].
pub fn execute(spec: &TargetSpec, input: &[u8], deadline: Duration) -> std::io::Result<Sample> {
    Ok(Runner::new(spec)?.execute(input, deadline))
}

fn ids_known(spec: &TargetSpec, trace: &Trace) -> bool {
    trace.events.iter().all(|e| match *e {
        Event::Block(id) => spec.block(id).is_some(),
        Event::Value { site, .. } => spec.value_site(site).is_some(),
    })
}

fn resolve_program(spec: &TargetSpec, program: &str) -> PathBuf {
    let path = Path::new(program);
    if path.is_relative() && program.contains('/') {
        spec.base_dir.join(path)
    } else {
        path.to_owned()
    }
}

fn run_native(
    spec: &TargetSpec,
    argv: &[String],
    workdir: &Path,
    input: &[u8],
    deadline: Duration,
) -> (Trace, Verdict) {
    let trace_path = workdir.join("trace");
    let input_path = workdir.join("input");
    let _ = fs::remove_file(&trace_path);
    let error = || (Trace::default(), Verdict::harness_error());

    if spec.input_mode == InputMode::FileArg {
        if let Err(e) = fs::write(&input_path, input) {
            debug!("{}: cannot write input: {e}", spec.id);
            return error();
        }
    }
    let input_arg = input_path.to_string_lossy();
    let mut cmd = Command::new(resolve_program(spec, &argv[0]));
    cmd.args(argv[1..].iter().map(|a| a.replace(INPUT_PLACEHOLDER, &input_arg)))
        .env_clear()
        .envs(ENV_ALLOWLIST.iter().filter_map(|k| std::env::var_os(k).map(|v| (k, v))))
        .env(TRACE_ENV, &trace_path)
        .stdout(Stdio::null())
        .stderr(Stdio::null())
        .stdin(match spec.input_mode {
            InputMode::Stdin => Stdio::piped(),
            InputMode::FileArg => Stdio::null(),
        });
    if spec.base_dir.is_dir() {
        cmd.current_dir(&spec.base_dir);
    }

    let mut child = match cmd.spawn() {
        Ok(child) => child,
        Err(e) => {
            debug!("{}: spawn failed: {e}", spec.id);
            return error();
        }
    };
    let feeder = child.stdin.take().map(|mut stdin| {
        let data = input.to_vec();
        // A target may exit without draining stdin; the broken pipe is expected.
        thread::spawn(move || {
            let _ = stdin.write_all(&data);
        })
    });
    let status = match child.wait_timeout(deadline) {
        Ok(Some(status)) => Some(status),
        Ok(None) => {
            let _ = child.kill();
            let _ = child.wait();
            None
        }
        Err(e) => {
            debug!("{}: wait failed: {e}", spec.id);
            let _ = child.kill();
            let _ = child.wait();
            return error();
        }
    };
    if let Some(feeder) = feeder {
        let _ = feeder.join();
    }

    let trace = fs::read_to_string(&trace_path)
        .ok()
        .and_then(|text| Trace::parse_partial(&text).ok());
    let Some(status) = status else {
        return (trace.unwrap_or_default(), Verdict::timeout());
    };
    let Some(mut trace) = trace else {
        debug!("{}: missing or corrupt trace", spec.id);
        return error();
    };
    let Some(observed) = terminal_of(status) else {
        return (trace, Verdict::harness_error());
    };
    match trace.terminal {
        None if matches!(observed, Terminal::Signal(s) if spec.crash_signals.contains(&s)) => {
            // The runtime died before flushing its terminal line.
            trace.terminal = Some(observed);
        }
        None => {
            debug!("{}: trace has no terminal line", spec.id);
            return (trace, Verdict::harness_error());
        }
        Some(recorded) if recorded != observed => {
            debug!("{}: trace says {recorded:?} but process ended with {observed:?}", spec.id);
            return (trace, Verdict::harness_error());
        }
        Some(_) => {}
    }
    let verdict = classify(spec, observed);
    (trace, verdict)
}

#[cfg(unix)]
fn terminal_of(status: ExitStatus) -> Option<Terminal> {
    use std::os::unix::process::ExitStatusExt;
    status
        .signal()
        .map(Terminal::Signal)
        .or_else(|| status.code().map(Terminal::Exit))
}

#[cfg(not(unix))]
fn terminal_of(status: ExitStatus) -> Option<Terminal> {
    status.code().map(Terminal::Exit)
}
