//! Deterministic in-process mock targets.
//!
//! A mock program is a loop-free list of instructions over a single
//! accumulator:
//!
//! ```text
//! EMIT 1            # trace block 1
//! LOAD 0            # acc = input[0], or 0 when out of bounds
//! VAL 1             # trace value site 1 with the accumulator
//! IF == 4 GOTO C    # forward jump when acc == 4
//! EXIT 0
//! C: EMIT 2
//! CRASH 11
//! ```
//!
//! Instructions can also be separated by `;` on one line. Jumps must go
//! forward, so every run executes each instruction at most once. Falling off
//! the end behaves like `EXIT 0`.

use std::collections::HashMap;
use std::fmt;

use thiserror::Error;

use crate::model::{Sample, Verdict};
use crate::trace::{Event, Terminal, Trace};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Cmp {
    Eq,
    Ne,
    Lt,
    Le,
    Gt,
    Ge,
}

impl Cmp {
    fn holds(self, lhs: i64, rhs: i64) -> bool {
        match self {
            Cmp::Eq => lhs == rhs,
            Cmp::Ne => lhs != rhs,
            Cmp::Lt => lhs < rhs,
            Cmp::Le => lhs <= rhs,
            Cmp::Gt => lhs > rhs,
            Cmp::Ge => lhs >= rhs,
        }
    }

    fn symbol(self) -> &'static str {
        match self {
            Cmp::Eq => "==",
            Cmp::Ne => "!=",
            Cmp::Lt => "<",
            Cmp::Le => "<=",
            Cmp::Gt => ">",
            Cmp::Ge => ">=",
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub enum Instr {
    Load(usize),
    Emit(u32),
    Val(u32),
    If { cmp: Cmp, rhs: i64, target: usize },
    Crash(i32),
    Exit(i32),
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct MockProgram {
    instructions: Vec<Instr>,
    labels: HashMap<String, usize>,
}

#[derive(Debug, Error, PartialEq, Eq)]
pub enum MockError {
    #[error("mock line {line}: {message}")]
    Syntax { line: usize, message: String },
    #[error("undefined label `{0}`")]
    UndefinedLabel(String),
    #[error("duplicate label `{0}`")]
    DuplicateLabel(String),
    #[error("jump to `{0}` goes backwards; loops are not allowed")]
    BackwardJump(String),
}

impl MockProgram {
    /// Parses program text. `first_line` offsets reported line numbers when
    /// the program is embedded in a larger file.
    pub fn parse(text: &str, first_line: usize) -> Result<Self, MockError> {
        let mut instructions = Vec::new();
        let mut labels = HashMap::new();
        let mut pending_jumps = Vec::new();

        for (i, raw) in text.lines().enumerate() {
            let line = first_line + i;
            let code = raw.split('#').next().unwrap_or_default();
            for stmt in code.split(';') {
                let mut stmt = stmt.trim();
                if stmt.is_empty() {
                    continue;
                }
                if let Some((label, rest)) = stmt.split_once(':') {
                    let label = label.trim();
                    if label.is_empty() || !label.chars().all(|c| c.is_alphanumeric() || c == '_') {
                        return Err(MockError::Syntax {
                            line,
                            message: format!("bad label in {stmt:?}"),
                        });
                    }
                    if labels.insert(label.to_owned(), instructions.len()).is_some() {
                        return Err(MockError::DuplicateLabel(label.to_owned()));
                    }
                    stmt = rest.trim();
                    if stmt.is_empty() {
                        continue;
                    }
                }
                let (instr, jump) = parse_instr(stmt).map_err(|message| MockError::Syntax { line, message })?;
                if let Some(label) = jump {
                    pending_jumps.push((instructions.len(), label));
                }
                instructions.push(instr);
            }
        }

        for (at, label) in pending_jumps {
            let target = *labels
                .get(&label)
                .ok_or_else(|| MockError::UndefinedLabel(label.clone()))?;
            if target <= at {
                return Err(MockError::BackwardJump(label));
            }
            if let Instr::If { target: t, .. } = &mut instructions[at] {
                *t = target;
            }
        }
        Ok(MockProgram { instructions, labels })
    }

    pub fn instructions(&self) -> &[Instr] {
        &self.instructions
    }

    pub fn emitted_blocks(&self) -> impl Iterator<Item = u32> + '_ {
        self.instructions.iter().filter_map(|i| match i {
            Instr::Emit(id) => Some(*id),
            _ => None,
        })
    }

    pub fn value_sites(&self) -> impl Iterator<Item = u32> + '_ {
        self.instructions.iter().filter_map(|i| match i {
            Instr::Val(id) => Some(*id),
            _ => None,
        })
    }

    /// Runs the program and returns its trace. The terminal is always set.
    pub fn run(&self, input: &[u8]) -> Trace {
        let mut acc: i64 = 0;
        let mut events = Vec::new();
        let mut pc = 0;
        while let Some(instr) = self.instructions.get(pc) {
            pc += 1;
            match *instr {
                Instr::Load(i) => acc = input.get(i).copied().map_or(0, i64::from),
                Instr::Emit(id) => events.push(Event::Block(id)),
                Instr::Val(site) => events.push(Event::Value { site, value: acc }),
                Instr::If { cmp, rhs, target } => {
                    if cmp.holds(acc, rhs) {
                        pc = target;
                    }
                }
                Instr::Crash(sig) => return Trace::new(events, Terminal::Signal(sig)),
                Instr::Exit(code) => return Trace::new(events, Terminal::Exit(code)),
            }
        }
        Trace::new(events, Terminal::Exit(0))
    }
}

fn parse_instr(stmt: &str) -> Result<(Instr, Option<String>), String> {
    let (op, rest) = stmt.split_once(char::is_whitespace).unwrap_or((stmt, ""));
    let rest = rest.trim();
    let num = |what: &str| -> Result<i64, String> {
        rest.parse().map_err(|_| format!("{what} expects a number, got {rest:?}"))
    };
    let instr = match op.to_ascii_uppercase().as_str() {
        "LOAD" => Instr::Load(usize::try_from(num("LOAD")?).map_err(|_| "LOAD index must be >= 0")?),
        "EMIT" => Instr::Emit(u32::try_from(num("EMIT")?).map_err(|_| "EMIT id out of range")?),
        "VAL" => Instr::Val(u32::try_from(num("VAL")?).map_err(|_| "VAL site out of range")?),
        "CRASH" => Instr::Crash(i32::try_from(num("CRASH")?).map_err(|_| "signal out of range")?),
        "EXIT" => Instr::Exit(i32::try_from(num("EXIT")?).map_err(|_| "exit code out of range")?),
        "IF" => {
            let (cond, label) = rest
                .split_once("GOTO")
                .ok_or_else(|| format!("IF without GOTO: {stmt:?}"))?;
            let cond: String = cond.chars().filter(|c| !c.is_whitespace()).collect();
            let split = cond
                .find(|c: char| c.is_ascii_digit() || c == '-')
                .ok_or_else(|| format!("IF without constant: {stmt:?}"))?;
            let (sym, rhs) = cond.split_at(split);
            let cmp = match sym {
                "==" => Cmp::Eq,
                "!=" => Cmp::Ne,
                "<" => Cmp::Lt,
                "<=" => Cmp::Le,
                ">" => Cmp::Gt,
                ">=" => Cmp::Ge,
                _ => return Err(format!("unknown comparison {sym:?}")),
            };
            let rhs = rhs.parse().map_err(|_| format!("bad IF constant {rhs:?}"))?;
            let label = label.trim();
            if label.is_empty() {
                return Err("GOTO needs a label".to_owned());
            }
            return Ok((Instr::If { cmp, rhs, target: 0 }, Some(label.to_owned())));
        }
        other => return Err(format!("unknown instruction {other:?}")),
    };
    Ok((instr, None))
}

impl fmt::Display for MockProgram {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let mut by_index: Vec<(&usize, &String)> = self.labels.iter().map(|(k, v)| (v, k)).collect();
        by_index.sort();
        for (pc, instr) in self.instructions.iter().enumerate() {
            for (_, name) in by_index.iter().filter(|(at, _)| **at == pc) {
                write!(f, "{name}: ")?;
            }
            match instr {
                Instr::Load(i) => writeln!(f, "LOAD {i}")?,
                Instr::Emit(id) => writeln!(f, "EMIT {id}")?,
                Instr::Val(s) => writeln!(f, "VAL {s}")?,
                Instr::If { cmp, rhs, target } => {
                    let name = by_index
                        .iter()
                        .find(|(at, _)| **at == *target)
                        .map(|(_, n)| n.as_str())
                        .unwrap_or("?");
                    writeln!(f, "IF {} {rhs} GOTO {name}", cmp.symbol())?
                }
                Instr::Crash(s) => writeln!(f, "CRASH {s}")?,
                Instr::Exit(c) => writeln!(f, "EXIT {c}")?,
            }
        }
        Ok(())
    }
}

/// Runs a mock program with its own verdict rule: `CRASH` is a crash, `EXIT`
/// is a normal exit.
pub fn interpret_mock(program: &MockProgram, input: &[u8]) -> Sample {
    let trace = program.run(input);
    let verdict = match trace.terminal {
        Some(Terminal::Signal(sig)) => Verdict::crash_signal(sig),
        Some(Terminal::Exit(code)) => Verdict::non_crash(code),
        None => unreachable!("mock runs always terminate"),
    };
    Sample {
        input: input.to_vec(),
        trace,
        verdict,
        born_at: 0,
    }
}
