//! Named events and the event sets scenarios declare over them.

use std::fmt;
use std::sync::Arc;

/// A named occurrence. Two events are equal iff their names are equal.
#[derive(Clone, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct Event(Arc<str>);

impl Event {
    /// Panics if `name` is empty; use [`Event::try_new`] for untrusted input.
    pub fn new(name: impl AsRef<str>) -> Self {
        Self::try_new(name).expect("event name must be non-empty")
    }

    pub fn try_new(name: impl AsRef<str>) -> Option<Self> {
        let name = name.as_ref();
        if name.is_empty() {
            None
        } else {
            Some(Event(Arc::from(name)))
        }
    }

    pub fn name(&self) -> &str {
        &self.0
    }
}

impl fmt::Debug for Event {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "Event({})", self.0)
    }
}

impl fmt::Display for Event {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.0)
    }
}

impl From<&str> for Event {
    fn from(name: &str) -> Self {
        Event::new(name)
    }
}

impl PartialEq<str> for Event {
    fn eq(&self, other: &str) -> bool {
        &*self.0 == other
    }
}

impl PartialEq<&str> for Event {
    fn eq(&self, other: &&str) -> bool {
        &*self.0 == *other
    }
}

/// The wait-for and block declarations of a synchronization point.
#[derive(Clone, Debug, PartialEq, Eq, Default)]
pub enum EventSet {
    /// A finite list of distinct events.
    Explicit(Vec<Event>),
    /// Every event, including ones no scenario mentions.
    All,
    #[default]
    None,
}

impl EventSet {
    /// Builds an explicit set, dropping repeated names (first occurrence wins).
    /// No events at all gives [`EventSet::None`].
    pub fn of<I, E>(events: I) -> Self
    where
        I: IntoIterator<Item = E>,
        E: Into<Event>,
    {
        let mut out: Vec<Event> = Vec::new();
        for e in events {
            let e = e.into();
            if !out.contains(&e) {
                out.push(e);
            }
        }
        if out.is_empty() {
            EventSet::None
        } else {
            EventSet::Explicit(out)
        }
    }

    pub fn contains(&self, event: &Event) -> bool {
        match self {
            EventSet::Explicit(list) => list.contains(event),
            EventSet::All => true,
            EventSet::None => false,
        }
    }

    /// True for `None` and for an explicit empty list.
    pub fn is_empty(&self) -> bool {
        match self {
            EventSet::Explicit(list) => list.is_empty(),
            EventSet::All => false,
            EventSet::None => true,
        }
    }

    /// The listed events; empty for `All` and `None`.
    pub fn explicit(&self) -> &[Event] {
        match self {
            EventSet::Explicit(list) => list,
            _ => &[],
        }
    }
}

impl<E: Into<Event>> FromIterator<E> for EventSet {
    fn from_iter<T: IntoIterator<Item = E>>(iter: T) -> Self {
        EventSet::of(iter)
    }
}
