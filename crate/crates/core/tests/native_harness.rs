#![cfg(unix)]

use std::fs;
use std::path::Path;
use std::time::{Duration, Instant};

use rcab_core::augment::{self, Budget};
use rcab_core::harness::{self, Runner};
use rcab_core::manifest::{load_manifest, TargetSpec};
use rcab_core::model::{Dataset, Verdict, VerdictKind};
use rcab_core::trace::{Event, Terminal};

/// Reads the first input byte into `$n` as a decimal number, 0 on empty input.
const READ_FILE_BYTE: &str = r#"n=$(od -An -tu1 -N1 "$1" | tr -d ' ')
n=${n:-0}"#;

const READ_STDIN_BYTE: &str = r#"n=$(od -An -tu1 -N1 | tr -d ' ')
n=${n:-0}"#;

fn target(dir: &Path, script: &str, extra: &str) -> TargetSpec {
    let exec = if extra.contains("Stdin") { "/bin/sh target.sh" } else { "/bin/sh target.sh @@" };
    fs::write(dir.join("target.sh"), script).unwrap();
    let manifest = format!(
        "id = native\nexec = {exec}\ntimeout_ms = 2000\nseeds = hex:05\n{extra}\n\
         [block_map]\n1 offbyone.c:10\n2 offbyone.c:14 cond\n\
         [value_map]\n1 offbyone.c:14\n\
         [ground_truth]\noffbyone.c:14 guard admits count == 5\n"
    );
    fs::write(dir.join("target.manifest"), manifest).unwrap();
    load_manifest(&dir.join("target.manifest")).unwrap()
}

/// Writes a trace for an off-by-one read: inputs with first byte > 4 crash.
fn offbyone(read: &str) -> String {
    format!(
        r#"{read}
printf 'RCAB1\nB 1\nV 1 %d\n' "$n" > "$RCAB_TRACE"
if [ "$n" -gt 4 ]; then
  printf 'B 2\nS 11\n' >> "$RCAB_TRACE"
  kill -SEGV $$
fi
printf 'X 0\n' >> "$RCAB_TRACE"
exit 0
"#
    )
}

const SEC: Duration = Duration::from_secs(5);

#[test]
fn file_arg_target_crashes_and_exits() {
    let dir = tempfile::tempdir().unwrap();
    let spec = target(dir.path(), &offbyone(READ_FILE_BYTE), "");
    let crash = harness::execute(&spec, &[5], SEC).unwrap();
    assert_eq!(crash.verdict, Verdict::crash_signal(11));
    assert_eq!(
        crash.trace.events,
        vec![Event::Block(1), Event::Value { site: 1, value: 5 }, Event::Block(2)]
    );
    assert_eq!(crash.trace.terminal, Some(Terminal::Signal(11)));

    let ok = harness::execute(&spec, &[3], SEC).unwrap();
    assert_eq!(ok.verdict, Verdict::non_crash(0));
    assert_eq!(ok.trace.events.len(), 2);
}

#[test]
fn stdin_target_reads_input() {
    let dir = tempfile::tempdir().unwrap();
    let spec = target(dir.path(), &offbyone(READ_STDIN_BYTE), "input_mode = Stdin");
    assert_eq!(harness::execute(&spec, &[9], SEC).unwrap().verdict, Verdict::crash_signal(11));
    assert_eq!(harness::execute(&spec, &[0], SEC).unwrap().verdict, Verdict::non_crash(0));
}

#[test]
fn runner_reuses_its_workdir() {
    let dir = tempfile::tempdir().unwrap();
    let spec = target(dir.path(), &offbyone(READ_FILE_BYTE), "");
    let mut runner = Runner::new(&spec).unwrap();
    let verdicts: Vec<_> = [1u8, 7, 2, 200]
        .iter()
        .map(|&b| runner.execute(&[b], SEC).verdict.kind)
        .collect();
    assert_eq!(
        verdicts,
        [VerdictKind::NonCrash, VerdictKind::Crash, VerdictKind::NonCrash, VerdictKind::Crash]
    );
}

#[test]
fn slow_target_times_out() {
    let dir = tempfile::tempdir().unwrap();
    let spec = target(dir.path(), "printf 'RCAB1\\nB 1\\n' > \"$RCAB_TRACE\"\nsleep 10\n", "");
    let start = Instant::now();
    let s = harness::execute(&spec, &[0], Duration::from_millis(200)).unwrap();
    assert_eq!(s.verdict.kind, VerdictKind::Timeout);
    assert!(start.elapsed() < Duration::from_secs(5));
    assert!(!s.verdict.is_labelled());
}

#[test]
fn missing_trace_is_harness_error() {
    let dir = tempfile::tempdir().unwrap();
    let spec = target(dir.path(), "exit 0\n", "");
    let s = harness::execute(&spec, &[0], SEC).unwrap();
    assert_eq!(s.verdict.kind, VerdictKind::HarnessError);
}

#[test]
fn unflushed_crash_terminal_is_repaired() {
    let dir = tempfile::tempdir().unwrap();
    let spec = target(dir.path(), "printf 'RCAB1\\nB 1\\nB 2\\n' > \"$RCAB_TRACE\"\nkill -SEGV $$\n", "");
    let s = harness::execute(&spec, &[0], SEC).unwrap();
    assert_eq!(s.verdict, Verdict::crash_signal(11));
    assert_eq!(s.trace.terminal, Some(Terminal::Signal(11)));
    assert_eq!(s.trace.events, vec![Event::Block(1), Event::Block(2)]);
}

#[test]
fn clean_exit_without_terminal_is_harness_error() {
    let dir = tempfile::tempdir().unwrap();
    let spec = target(dir.path(), "printf 'RCAB1\\nB 1\\n' > \"$RCAB_TRACE\"\nexit 0\n", "");
    assert_eq!(harness::execute(&spec, &[0], SEC).unwrap().verdict.kind, VerdictKind::HarnessError);
}

#[test]
fn terminal_mismatch_is_harness_error() {
    let dir = tempfile::tempdir().unwrap();
    let spec = target(dir.path(), "printf 'RCAB1\\nB 1\\nX 0\\n' > \"$RCAB_TRACE\"\nexit 3\n", "");
    assert_eq!(harness::execute(&spec, &[0], SEC).unwrap().verdict.kind, VerdictKind::HarnessError);
}

#[test]
fn unknown_block_is_harness_error() {
    let dir = tempfile::tempdir().unwrap();
    let spec = target(dir.path(), "printf 'RCAB1\\nB 99\\nX 0\\n' > \"$RCAB_TRACE\"\nexit 0\n", "");
    assert_eq!(harness::execute(&spec, &[0], SEC).unwrap().verdict.kind, VerdictKind::HarnessError);
}

#[test]
fn listed_exit_code_counts_as_crash() {
    let dir = tempfile::tempdir().unwrap();
    let script = "printf 'RCAB1\\nB 1\\nX 3\\n' > \"$RCAB_TRACE\"\nexit 3\n";
    let spec = target(dir.path(), script, "crash_exit_codes = 3");
    assert_eq!(harness::execute(&spec, &[0], SEC).unwrap().verdict, Verdict::crash_exit(3));
    let spec = target(dir.path(), script, "");
    assert_eq!(harness::execute(&spec, &[0], SEC).unwrap().verdict, Verdict::non_crash(3));
}

#[test]
fn unlisted_signal_is_harness_error() {
    let dir = tempfile::tempdir().unwrap();
    let spec = target(dir.path(), "printf 'RCAB1\\nB 1\\n' > \"$RCAB_TRACE\"\nkill -TERM $$\n", "");
    assert_eq!(harness::execute(&spec, &[0], SEC).unwrap().verdict.kind, VerdictKind::HarnessError);
}

#[test]
fn environment_is_cleared() {
    let dir = tempfile::tempdir().unwrap();
    // Crashes only if CARGO, which cargo sets for tests, leaked through.
    let script = r#"printf 'RCAB1\nB 1\n' > "$RCAB_TRACE"
if [ -n "$CARGO" ]; then printf 'S 11\n' >> "$RCAB_TRACE"; kill -SEGV $$; fi
printf 'X 0\n' >> "$RCAB_TRACE"
"#;
    let spec = target(dir.path(), script, "");
    assert!(std::env::var_os("CARGO").is_some());
    assert_eq!(harness::execute(&spec, &[0], SEC).unwrap().verdict, Verdict::non_crash(0));
}

#[test]
fn aflcem_drives_a_native_target() {
    let dir = tempfile::tempdir().unwrap();
    let spec = target(dir.path(), &offbyone(READ_FILE_BYTE), "");
    let aug = augment::by_id("aflcem", 8).unwrap();
    let mut d = Dataset::new("native", "aflcem", 3);
    let stats = aug.run(&spec, &[5], Budget::Execs(60), 3, &mut d).unwrap();
    assert_eq!(stats.executions, 60);
    assert!(d.samples().iter().any(|s| s.verdict.is_crash()));
    assert!(d.samples().iter().any(|s| s.verdict.kind == VerdictKind::NonCrash));
    for s in d.samples() {
        let n = s.input.first().copied().unwrap_or(0);
        assert_eq!(s.verdict.is_crash(), n > 4, "input {:?}", s.input);
    }
}
