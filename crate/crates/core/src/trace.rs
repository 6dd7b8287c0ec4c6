//! The line-oriented trace-file protocol.
//!
//! A trace is what a target writes while it runs:
//!
//! ```text
//! RCAB1
//! B <block_id>
//! V <site_id> <signed-64-bit-decimal>
//! X <exit_code>|S <signal>
//! ```
//!
//! The header is mandatory, events appear in execution order, and a complete
//! trace ends with exactly one terminal line. Crashing targets flush the
//! terminal from their signal handler, so a trace that lacks one can still be
//! parsed with [`Trace::parse_partial`] and repaired by the harness.

use std::fmt;

use thiserror::Error;

pub const TRACE_HEADER: &str = "RCAB1";

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Event {
    Block(u32),
    Value { site: u32, value: i64 },
}

/// How the traced execution ended.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Terminal {
    Exit(i32),
    Signal(i32),
}

#[derive(Debug, Clone, Default, PartialEq, Eq, Hash)]
pub struct Trace {
    pub events: Vec<Event>,
    pub terminal: Option<Terminal>,
}

#[derive(Debug, Error, PartialEq, Eq)]
pub enum TraceError {
    #[error("missing `{TRACE_HEADER}` header")]
    MissingHeader,
    #[error("line {line}: {message}")]
    Malformed { line: usize, message: String },
    #[error("line {line}: event after terminal line")]
    EventAfterTerminal { line: usize },
    #[error("trace has no terminal line")]
    MissingTerminal,
}

impl Trace {
    pub fn new(events: Vec<Event>, terminal: Terminal) -> Self {
        Trace {
            events,
            terminal: Some(terminal),
        }
    }

    /// Parses a complete trace: header, events, and one terminal line.
    pub fn parse(text: &str) -> Result<Trace, TraceError> {
        let trace = Self::parse_partial(text)?;
        if trace.terminal.is_none() {
            return Err(TraceError::MissingTerminal);
        }
        Ok(trace)
    }

    /// Parses a trace that may have been cut off before its terminal line.
    pub fn parse_partial(text: &str) -> Result<Trace, TraceError> {
        let mut lines = text.lines().enumerate();
        match lines.next() {
            Some((_, header)) if header == TRACE_HEADER => {}
            _ => return Err(TraceError::MissingHeader),
        }

        let mut trace = Trace::default();
        for (idx, raw) in lines {
            let line = idx + 1;
            if raw.is_empty() {
                continue;
            }
            if trace.terminal.is_some() {
                return Err(TraceError::EventAfterTerminal { line });
            }
            let malformed = |message: &str| TraceError::Malformed {
                line,
                message: format!("{message}: {raw:?}"),
            };
            let mut fields = raw.split(' ');
            let tag = fields.next().unwrap_or_default();
            let args: Vec<&str> = fields.collect();
            match (tag, args.as_slice()) {
                ("B", [id]) => {
                    let id = id.parse().map_err(|_| malformed("bad block id"))?;
                    trace.events.push(Event::Block(id));
                }
                ("V", [site, value]) => {
                    let site = site.parse().map_err(|_| malformed("bad value site"))?;
                    let value = value.parse().map_err(|_| malformed("bad value"))?;
                    trace.events.push(Event::Value { site, value });
                }
                ("X", [code]) => {
                    let code = code.parse().map_err(|_| malformed("bad exit code"))?;
                    trace.terminal = Some(Terminal::Exit(code));
                }
                ("S", [sig]) => {
                    let sig = sig.parse().map_err(|_| malformed("bad signal"))?;
                    trace.terminal = Some(Terminal::Signal(sig));
                }
                _ => return Err(malformed("unrecognized line")),
            }
        }
        Ok(trace)
    }

    pub fn blocks(&self) -> impl Iterator<Item = u32> + '_ {
        self.events.iter().filter_map(|e| match e {
            Event::Block(id) => Some(*id),
            Event::Value { .. } => None,
        })
    }

    pub fn contains_block(&self, id: u32) -> bool {
        self.blocks().any(|b| b == id)
    }
}

impl fmt::Display for Trace {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        writeln!(f, "{TRACE_HEADER}")?;
        for event in &self.events {
            match event {
                Event::Block(id) => writeln!(f, "B {id}")?,
                Event::Value { site, value } => writeln!(f, "V {site} {value}")?,
            }
        }
        match self.terminal {
            Some(Terminal::Exit(code)) => writeln!(f, "X {code}"),
            Some(Terminal::Signal(sig)) => writeln!(f, "S {sig}"),
            None => Ok(()),
        }
    }
}
