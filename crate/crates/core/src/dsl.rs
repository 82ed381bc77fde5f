//! The `.sbs` scenario text format.
//!
//! ```text
//! # keep hot and cold additions interleaved
//! scenario Stability
//! state hot_turn initial
//!   wait AddHot
//!   block AddCold
//!   on AddHot -> cold_turn
//! state cold_turn
//!   wait AddCold
//!   block AddHot
//!   on AddCold -> hot_turn
//! ```
//!
//! A document holds one or more `scenario` blocks. Each state may carry one
//! `request`, `wait` and `block` clause (comma-separated event lists; `wait`
//! and `block` also accept `*`) and one `on <event> -> <state>` line per
//! event it requests or waits for. `#` starts a comment. LF and CRLF line
//! endings are both accepted.

use std::fmt;

use crate::event::{Event, EventSet};
use crate::program::{ScenarioProgram, SyncDeclaration};

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ScenarioSource {
    pub text: String,
    /// File path, or `<inline>`.
    pub origin: String,
}

impl ScenarioSource {
    pub fn new(text: impl Into<String>, origin: impl Into<String>) -> Self {
        ScenarioSource {
            text: text.into(),
            origin: origin.into(),
        }
    }

    pub fn inline(text: impl Into<String>) -> Self {
        Self::new(text, "<inline>")
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Severity {
    Error,
    Warning,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Diagnostic {
    pub origin: String,
    pub line: usize,
    pub column: usize,
    pub message: String,
    pub severity: Severity,
}

impl Diagnostic {
    pub fn is_error(&self) -> bool {
        self.severity == Severity::Error
    }
}

impl fmt::Display for Diagnostic {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let level = match self.severity {
            Severity::Error => "error",
            Severity::Warning => "warning",
        };
        write!(
            f,
            "{}:{}:{}: {}: {}",
            self.origin, self.line, self.column, level, self.message
        )
    }
}

/// Parses a document that must contain exactly one scenario.
pub fn parse_scenario(src: &ScenarioSource) -> Result<ScenarioProgram, Vec<Diagnostic>> {
    let (mut programs, _) = parse_with_warnings(src)?;
    if programs.len() == 1 {
        return Ok(programs.pop().expect("one program"));
    }
    Err(vec![Diagnostic {
        origin: src.origin.clone(),
        line: 1,
        column: 1,
        message: format!("expected exactly one scenario, found {}", programs.len()),
        severity: Severity::Error,
    }])
}

/// Parses every scenario in a document. On failure the diagnostics include
/// at least one error, warnings included.
pub fn parse_scenarios(src: &ScenarioSource) -> Result<Vec<ScenarioProgram>, Vec<Diagnostic>> {
    parse_with_warnings(src).map(|(programs, _)| programs)
}

/// Like [`parse_scenarios`] but also hands back warnings on success.
pub fn parse_with_warnings(
    src: &ScenarioSource,
) -> Result<(Vec<ScenarioProgram>, Vec<Diagnostic>), Vec<Diagnostic>> {
    let mut p = Parser {
        origin: &src.origin,
        diagnostics: Vec::new(),
        scenarios: Vec::new(),
    };
    p.run(&src.text);
    let programs = p.finish();
    if p.diagnostics.iter().any(Diagnostic::is_error) {
        Err(p.diagnostics)
    } else {
        Ok((programs, p.diagnostics))
    }
}

/// Pretty-prints a program back into the text format.
pub fn render(program: &ScenarioProgram) -> String {
    let mut out = format!("scenario {}\n", program.name());
    let list = |set: &EventSet| match set {
        EventSet::All => Some("*".to_owned()),
        EventSet::None => None,
        EventSet::Explicit(v) if v.is_empty() => None,
        EventSet::Explicit(v) => Some(join(v)),
    };
    for (i, state) in program.states().iter().enumerate() {
        out.push_str("state ");
        out.push_str(state.id());
        if i == program.initial() {
            out.push_str(" initial");
        }
        out.push('\n');
        let d = state.declaration();
        if !d.requested.is_empty() {
            out.push_str(&format!("  request {}\n", join(&d.requested)));
        }
        if let Some(w) = list(&d.waited_for) {
            out.push_str(&format!("  wait {w}\n"));
        }
        if let Some(b) = list(&d.blocked) {
            out.push_str(&format!("  block {b}\n"));
        }
        for (event, to) in state.transitions() {
            out.push_str(&format!(
                "  on {} -> {}\n",
                event,
                program.states()[*to].id()
            ));
        }
    }
    out
}

fn join(events: &[Event]) -> String {
    events
        .iter()
        .map(Event::name)
        .collect::<Vec<_>>()
        .join(", ")
}

/// A word on a line with its 1-based column.
#[derive(Debug, Clone, Copy)]
struct Word<'a> {
    text: &'a str,
    column: usize,
}

struct PendingState {
    id: String,
    line: usize,
    column: usize,
    initial: bool,
    requested: Option<Vec<Event>>,
    waited_for: Option<EventSet>,
    blocked: Option<EventSet>,
    transitions: Vec<PendingTransition>,
}

struct PendingTransition {
    event: Event,
    line: usize,
    event_column: usize,
    target: String,
    target_column: usize,
}

struct PendingScenario {
    name: String,
    line: usize,
    column: usize,
    states: Vec<PendingState>,
}

struct Parser<'o> {
    origin: &'o str,
    diagnostics: Vec<Diagnostic>,
    scenarios: Vec<PendingScenario>,
}

fn is_name(s: &str) -> bool {
    !s.is_empty()
        && s.chars()
            .all(|c| !c.is_whitespace() && c != ',' && c != '#' && c != '*')
        && s != "->"
}

impl Parser<'_> {
    fn error(&mut self, line: usize, column: usize, message: impl Into<String>) {
        self.push(line, column, message, Severity::Error);
    }

    fn warn(&mut self, line: usize, column: usize, message: impl Into<String>) {
        self.push(line, column, message, Severity::Warning);
    }

    fn push(&mut self, line: usize, column: usize, message: impl Into<String>, severity: Severity) {
        self.diagnostics.push(Diagnostic {
            origin: self.origin.to_owned(),
            line,
            column,
            message: message.into(),
            severity,
        });
    }

    fn run(&mut self, text: &str) {
        let text = text.strip_prefix('\u{feff}').unwrap_or(text);
        let mut any = false;
        for (i, raw) in text.split('\n').enumerate() {
            let line = i + 1;
            let raw = raw.strip_suffix('\r').unwrap_or(raw);
            let content = match raw.find('#') {
                Some(at) => &raw[..at],
                None => raw,
            };
            let words = split_words(content);
            if words.is_empty() {
                continue;
            }
            any = true;
            self.directive(line, content, &words);
        }
        if !any {
            self.error(1, 1, "empty source: expected `scenario <name>`");
        }
    }

    fn current_state(&mut self, line: usize, word: Word<'_>) -> Option<&mut PendingState> {
        let has_state = self
            .scenarios
            .last()
            .is_some_and(|s| !s.states.is_empty());
        if !has_state {
            self.error(
                line,
                word.column,
                format!("`{}` must appear inside a `state` block", word.text),
            );
            return None;
        }
        self.scenarios
            .last_mut()
            .and_then(|s| s.states.last_mut())
    }

    fn directive(&mut self, line: usize, content: &str, words: &[Word<'_>]) {
        let head = words[0];
        match head.text {
            "scenario" => {
                if words.len() != 2 || !is_name(words[1].text) {
                    let col = words.get(2).or(words.get(1)).unwrap_or(&head).column;
                    self.error(line, col, "expected `scenario <name>`");
                    return;
                }
                let name = words[1].text.to_owned();
                if self.scenarios.iter().any(|s| s.name == name) {
                    self.error(line, words[1].column, format!("duplicate scenario `{name}`"));
                }
                self.scenarios.push(PendingScenario {
                    name,
                    line,
                    column: words[1].column,
                    states: Vec::new(),
                });
            }
            "state" => {
                if self.scenarios.is_empty() {
                    self.error(line, head.column, "expected `scenario <name>` before `state`");
                    return;
                }
                let (id, initial) = match words {
                    [_, id] => (*id, false),
                    [_, id, flag] if flag.text == "initial" => (*id, true),
                    [_, _, flag] => {
                        self.error(
                            line,
                            flag.column,
                            format!("unexpected `{}` after state id; only `initial` is allowed", flag.text),
                        );
                        return;
                    }
                    _ => {
                        let col = words.get(3).unwrap_or(&head).column;
                        self.error(line, col, "expected `state <id> [initial]`");
                        return;
                    }
                };
                if !is_name(id.text) {
                    self.error(line, id.column, format!("invalid state id `{}`", id.text));
                    return;
                }
                let scenario = self.scenarios.last().expect("checked above");
                if scenario.states.iter().any(|s| s.id == id.text) {
                    let name = scenario.name.clone();
                    self.error(
                        line,
                        id.column,
                        format!("duplicate state `{}` in scenario `{name}`", id.text),
                    );
                    return;
                }
                if initial && scenario.states.iter().any(|s| s.initial) {
                    self.error(
                        line,
                        words[2].column,
                        format!("multiple initial states in scenario `{}`", scenario.name),
                    );
                }
                self.scenarios.last_mut().expect("checked above").states.push(PendingState {
                    id: id.text.to_owned(),
                    line,
                    column: id.column,
                    initial,
                    requested: None,
                    waited_for: None,
                    blocked: None,
                    transitions: Vec::new(),
                });
            }
            "request" | "wait" | "block" => {
                let Some(set) = self.event_list(line, content, words) else {
                    return;
                };
                let kind = head.text;
                let Some(state) = self.current_state(line, head) else {
                    return;
                };
                let duplicate = match kind {
                    "request" => match set {
                        EventSet::Explicit(v) => state.requested.replace(v).is_some(),
                        _ => unreachable!("request rejects `*`"),
                    },
                    "wait" => state.waited_for.replace(set).is_some(),
                    _ => state.blocked.replace(set).is_some(),
                };
                if duplicate {
                    self.error(
                        line,
                        head.column,
                        format!("duplicate `{kind}` clause in this state"),
                    );
                }
            }
            "on" => {
                let ok = words.len() == 4 && words[2].text == "->";
                if !ok {
                    let col = words.get(1).unwrap_or(&head).column;
                    self.error(line, col, "expected `on <event> -> <state>`");
                    return;
                }
                let (ev, target) = (words[1], words[3]);
                if !is_name(ev.text) {
                    self.error(line, ev.column, format!("invalid event name `{}`", ev.text));
                    return;
                }
                if !is_name(target.text) {
                    self.error(line, target.column, format!("invalid state id `{}`", target.text));
                    return;
                }
                let Some(state) = self.current_state(line, head) else {
                    return;
                };
                state.transitions.push(PendingTransition {
                    event: Event::new(ev.text),
                    line,
                    event_column: ev.column,
                    target: target.text.to_owned(),
                    target_column: target.column,
                });
            }
            other => {
                self.error(line, head.column, format!("unknown directive `{other}`"));
            }
        }
    }

    /// Parses the comma-separated list after `request`/`wait`/`block`.
    fn event_list(&mut self, line: usize, content: &str, words: &[Word<'_>]) -> Option<EventSet> {
        let head = words[0];
        let start = head.column - 1 + head.text.chars().count();
        let rest: String = content.chars().skip(start).collect();
        let base = start + 1;
        if rest.trim().is_empty() {
            self.error(line, head.column, format!("`{}` needs at least one event", head.text));
            return None;
        }
        let mut items: Vec<(String, usize)> = Vec::new();
        let mut offset = 0;
        for piece in rest.split(',') {
            let lead = piece.chars().take_while(|c| c.is_whitespace()).count();
            let item = piece.trim();
            items.push((item.to_owned(), base + offset + lead));
            offset += piece.chars().count() + 1;
        }
        if items.len() == 1 && items[0].0 == "*" {
            if head.text == "request" {
                self.error(line, items[0].1, "`request *` is not allowed; list the events");
                return None;
            }
            return Some(EventSet::All);
        }
        let mut events: Vec<Event> = Vec::new();
        for (item, column) in items {
            if item.is_empty() {
                self.error(line, column, "empty event name in list");
                return None;
            }
            if !is_name(&item) {
                let msg = if item.contains('*') {
                    "`*` must stand alone".to_owned()
                } else {
                    format!("invalid event name `{item}`")
                };
                self.error(line, column, msg);
                return None;
            }
            let e = Event::new(&item);
            if events.contains(&e) {
                self.warn(line, column, format!("event `{item}` listed twice; ignoring repeat"));
                continue;
            }
            events.push(e);
        }
        Some(EventSet::Explicit(events))
    }

    fn finish(&mut self) -> Vec<ScenarioProgram> {
        let scenarios = std::mem::take(&mut self.scenarios);
        let mut programs = Vec::new();
        for sc in scenarios {
            if let Some(p) = self.check_scenario(sc) {
                programs.push(p);
            }
        }
        programs
    }

    fn check_scenario(&mut self, sc: PendingScenario) -> Option<ScenarioProgram> {
        let errors_before = self.diagnostics.iter().filter(|d| d.is_error()).count();
        if sc.states.is_empty() {
            self.error(sc.line, sc.column, format!("scenario `{}` has no states", sc.name));
            return None;
        }
        if !sc.states.iter().any(|s| s.initial) {
            self.error(
                sc.line,
                sc.column,
                format!("missing initial state in scenario `{}`", sc.name),
            );
        }
        for st in &sc.states {
            let decl = declaration(st);
            for t in &st.transitions {
                if !decl.wakes_on(&t.event) {
                    self.error(
                        t.line,
                        t.event_column,
                        format!(
                            "transition on undeclared event `{}`: state `{}` neither requests nor waits for it",
                            t.event, st.id
                        ),
                    );
                }
                if !sc.states.iter().any(|s| s.id == t.target) {
                    self.error(
                        t.line,
                        t.target_column,
                        format!("unknown target state `{}`", t.target),
                    );
                }
            }
            for (i, t) in st.transitions.iter().enumerate() {
                if st.transitions[..i].iter().any(|u| u.event == t.event) {
                    self.error(
                        t.line,
                        t.event_column,
                        format!("duplicate transition on `{}` in state `{}`", t.event, st.id),
                    );
                }
            }
            for e in decl.requested.iter().chain(decl.waited_for.explicit()) {
                if !st.transitions.iter().any(|t| t.event == *e) {
                    self.error(
                        st.line,
                        st.column,
                        format!("state `{}` declares `{e}` but has no `on {e} -> ...` transition", st.id),
                    );
                }
            }
            for e in &decl.requested {
                if decl.blocked.contains(e) {
                    self.warn(
                        st.line,
                        st.column,
                        format!("state `{}` both requests and blocks `{e}`; it can never be enabled", st.id),
                    );
                }
            }
        }
        let errors_after = self.diagnostics.iter().filter(|d| d.is_error()).count();
        if errors_after > errors_before {
            return None;
        }

        let mut b = ScenarioProgram::builder(sc.name.clone());
        for st in &sc.states {
            b = b.state(st.id.clone(), declaration(st));
            if st.initial {
                b = b.initial(st.id.clone());
            }
            for t in &st.transitions {
                b = b.on(st.id.clone(), t.event.clone(), t.target.clone());
            }
        }
        match b.build() {
            Ok(p) => Some(p),
            Err(e) => {
                self.error(sc.line, sc.column, e.to_string());
                None
            }
        }
    }
}

fn declaration(st: &PendingState) -> SyncDeclaration {
    SyncDeclaration {
        requested: st.requested.clone().unwrap_or_default(),
        waited_for: st.waited_for.clone().unwrap_or_default(),
        blocked: st.blocked.clone().unwrap_or_default(),
    }
}

/// Whitespace-separated words with 1-based char columns. Commas stay attached.
fn split_words(content: &str) -> Vec<Word<'_>> {
    let mut out = Vec::new();
    let mut start: Option<(usize, usize)> = None;
    for (col, (byte, c)) in content.char_indices().enumerate() {
        match (c.is_whitespace(), start) {
            (false, None) => start = Some((byte, col + 1)),
            (true, Some((b, column))) => {
                out.push(Word {
                    text: &content[b..byte],
                    column,
                });
                start = None;
            }
            _ => {}
        }
    }
    if let Some((b, column)) = start {
        out.push(Word {
            text: &content[b..],
            column,
        });
    }
    out
}
