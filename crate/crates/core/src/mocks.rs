//! Built-in mock targets.
//!
//! These run in-process and need no corpus on disk. Bench configurations can
//! name them by id instead of giving a manifest path.

use std::fmt::Write;
use std::path::Path;

use crate::manifest::{parse_manifest, TargetSpec};

const M1: &str = include_str!("../mocks/m1.manifest");
const TWO_BRANCH: &str = include_str!("../mocks/two_branch.manifest");
const VALUE_THRESHOLD: &str = include_str!("../mocks/value_threshold.manifest");
const IMBALANCED: &str = include_str!("../mocks/imbalanced.manifest");
const MISSNULL: &str = include_str!("../mocks/missnull.manifest");

fn builtin(text: &str) -> TargetSpec {
    parse_manifest(text, Path::new("")).expect("built-in mock manifest is valid")
}

/// One guard on the first byte; the seed `[4]` crashes.
pub fn m1() -> TargetSpec {
    builtin(M1)
}

pub fn two_branch() -> TargetSpec {
    builtin(TWO_BRANCH)
}

pub fn value_threshold() -> TargetSpec {
    builtin(VALUE_THRESHOLD)
}

pub fn imbalanced() -> TargetSpec {
    builtin(IMBALANCED)
}

/// Two acceptable root-cause locations.
pub fn missnull() -> TargetSpec {
    builtin(MISSNULL)
}

/// A mock with `locations` distinct block locations. Block `i` below the last
/// is executed when input byte `i % 8` is at least `(i * 37) % 256`; the last
/// block is the crash site, reached when byte 0 is 7.
pub fn wide(locations: u32) -> TargetSpec {
    assert!(locations >= 2, "wide mock needs at least two locations");
    let last = locations;
    let mut text = format!(
        "id = wide{locations}\nexec = mock\nseeds = hex:0700000000000000\n[block_map]\n"
    );
    for i in 1..=last {
        let cond = if i == last { " cond" } else { "" };
        let _ = writeln!(text, "{i} wide.c:{}{cond}", 10 + i);
    }
    let _ = writeln!(text, "[value_map]\n1 wide.c:{}", 10 + last);
    let _ = writeln!(text, "[ground_truth]\nwide.c:{} byte 0 == 7", 10 + last);
    text.push_str("[mock]\n");
    for i in 1..last {
        let _ = writeln!(
            text,
            "LOAD {}; IF < {} GOTO S{i}; EMIT {i}\nS{i}:",
            i % 8,
            (i * 37) % 256
        );
    }
    let _ = writeln!(text, "LOAD 0; VAL 1; IF == 7 GOTO C; EXIT 0\nC: EMIT {last}; CRASH 11");
    builtin(&text)
}

pub const BUILTIN_IDS: [&str; 5] = ["m1", "two_branch", "value_threshold", "imbalanced", "missnull"];

/// Looks up a built-in mock by id. `wide<N>` builds [`wide`] with `N`
/// locations.
pub fn by_id(id: &str) -> Option<TargetSpec> {
    match id {
        "m1" => Some(m1()),
        "two_branch" => Some(two_branch()),
        "value_threshold" => Some(value_threshold()),
        "imbalanced" => Some(imbalanced()),
        "missnull" => Some(missnull()),
        _ => id
            .strip_prefix("wide")
            .and_then(|n| n.parse().ok())
            .filter(|&n| n >= 2)
            .map(wide),
    }
}
