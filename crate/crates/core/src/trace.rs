//! Forward-pass diagnostics: named snapshots of internal distributions
//! (attention rows, graph adjacencies, retrieval and coherence weights)
//! so tests can assert normalization without touching the tape.

use crate::numerics::Tensor;

#[derive(Debug, Default)]
pub struct ForwardTrace {
    entries: Vec<(String, Tensor)>,
}

impl ForwardTrace {
    pub fn new() -> Self {
        ForwardTrace::default()
    }

    pub fn push(&mut self, name: impl Into<String>, value: Tensor) {
        self.entries.push((name.into(), value));
    }

    pub fn entries(&self) -> &[(String, Tensor)] {
        &self.entries
    }

    pub fn get(&self, name: &str) -> Option<&Tensor> {
        self.entries.iter().find(|(n, _)| n == name).map(|(_, t)| t)
    }

    /// All entries whose name starts with `prefix`.
    pub fn with_prefix<'a>(&'a self, prefix: &'a str) -> impl Iterator<Item = &'a (String, Tensor)> {
        self.entries.iter().filter(move |(n, _)| n.starts_with(prefix))
    }
}

/// Convenience for threading an optional trace through forward functions.
pub type TraceOpt<'a> = Option<&'a mut ForwardTrace>;

pub(crate) fn record(trace: &mut TraceOpt<'_>, name: &str, value: &Tensor) {
    if let Some(t) = trace.as_deref_mut() {
        t.push(name, value.clone());
    }
}
