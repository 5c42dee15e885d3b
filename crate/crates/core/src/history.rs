//! Append-only interaction history with per-cell feedback counts.

use std::io::{BufRead, Write};

use serde::{Deserialize, Serialize};

use crate::em::Policy;
use crate::error::{Error, Result};
use crate::model::{ActionIndex, FeedbackKind, StateId};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct InteractionRecord {
    pub t: u64,
    pub s: StateId,
    pub a: ActionIndex,
    pub f: FeedbackKind,
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct FeedbackCounts {
    pub n_plus: u32,
    pub n_minus: u32,
    pub n_none: u32,
}

impl FeedbackCounts {
    #[inline]
    pub fn total(&self) -> u32 {
        self.n_plus + self.n_minus + self.n_none
    }

    #[inline]
    pub fn get(&self, f: FeedbackKind) -> u32 {
        match f {
            FeedbackKind::Positive => self.n_plus,
            FeedbackKind::Negative => self.n_minus,
            FeedbackKind::None => self.n_none,
        }
    }

    fn bump(&mut self, f: FeedbackKind) {
        match f {
            FeedbackKind::Positive => self.n_plus += 1,
            FeedbackKind::Negative => self.n_minus += 1,
            FeedbackKind::None => self.n_none += 1,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct InteractionHistory {
    n_states: usize,
    n_actions: usize,
    records: Vec<InteractionRecord>,
    counts: Vec<FeedbackCounts>,
}

impl InteractionHistory {
    pub fn new(n_states: usize, n_actions: usize) -> Self {
        Self {
            n_states,
            n_actions,
            records: Vec::new(),
            counts: vec![FeedbackCounts::default(); n_states * n_actions],
        }
    }

    pub fn n_states(&self) -> usize {
        self.n_states
    }

    pub fn n_actions(&self) -> usize {
        self.n_actions
    }

    pub fn len(&self) -> usize {
        self.records.len()
    }

    pub fn is_empty(&self) -> bool {
        self.records.is_empty()
    }

    pub fn records(&self) -> &[InteractionRecord] {
        &self.records
    }

    /// Appends `(s, a, f)` with the next step index.
    pub fn record(&mut self, s: StateId, a: ActionIndex, f: FeedbackKind) -> Result<&InteractionRecord> {
        let t = self.records.last().map_or(0, |r| r.t + 1);
        self.push(InteractionRecord { t, s, a, f })
    }

    /// Appends a record carrying its own step index, which must exceed the last one.
    pub fn push(&mut self, rec: InteractionRecord) -> Result<&InteractionRecord> {
        StateId::checked(rec.s.0, self.n_states)?;
        ActionIndex::checked(rec.a.0, self.n_actions)?;
        if let Some(last) = self.records.last() {
            if rec.t <= last.t {
                return Err(Error::Protocol(format!(
                    "step index {} does not follow {}",
                    rec.t, last.t
                )));
            }
        }
        let idx = self.cell(rec.s, rec.a);
        self.counts[idx].bump(rec.f);
        self.records.push(rec);
        Ok(self.records.last().unwrap())
    }

    #[inline]
    fn cell(&self, s: StateId, a: ActionIndex) -> usize {
        s.0 * self.n_actions + a.0
    }

    /// Counts at `(s, a)`. Out-of-range cells read as empty.
    #[inline]
    pub fn counts(&self, s: StateId, a: ActionIndex) -> FeedbackCounts {
        if s.0 >= self.n_states || a.0 >= self.n_actions {
            return FeedbackCounts::default();
        }
        self.counts[self.cell(s, a)]
    }

    /// Counts for every action of state `s`, indexed by action.
    pub fn state_counts(&self, s: StateId) -> &[FeedbackCounts] {
        let start = s.0 * self.n_actions;
        &self.counts[start..start + self.n_actions]
    }

    pub fn visits(&self, s: StateId, a: ActionIndex) -> u32 {
        self.counts(s, a).total()
    }

    /// Empirical frequency of `f` at `(s, a)`; `None` for an unvisited cell.
    pub fn empirical_prob(&self, s: StateId, a: ActionIndex, f: FeedbackKind) -> Option<f64> {
        let c = self.counts(s, a);
        let n = c.total();
        (n > 0).then(|| f64::from(c.get(f)) / f64::from(n))
    }

    /// Ratio of the empirical probability of `f` at `a` to that at the reference
    /// action: `lam(s)` for positive feedback, the grid endpoint farthest from
    /// `lam(s)` for negative feedback. Not clamped to `[0, 1]`.
    pub fn empirical_ratio(
        &self,
        s: StateId,
        a: ActionIndex,
        f: FeedbackKind,
        lam: &Policy,
    ) -> Option<f64> {
        let lam_s = lam.get(s);
        let reference = match f {
            FeedbackKind::Positive => lam_s,
            FeedbackKind::Negative => most_disliked(lam_s, self.n_actions),
            FeedbackKind::None => return None,
        };
        let num = self.empirical_prob(s, a, f)?;
        let den = self.empirical_prob(s, reference, f)?;
        (den > 0.0).then(|| num / den)
    }

    pub fn write_jsonl<W: Write>(&self, mut out: W) -> std::io::Result<()> {
        for r in &self.records {
            serde_json::to_writer(&mut out, r)?;
            out.write_all(b"\n")?;
        }
        Ok(())
    }
}

/// The grid endpoint farthest from `lam`; the larger index wins ties.
pub fn most_disliked(lam: ActionIndex, n_actions: usize) -> ActionIndex {
    let last = n_actions - 1;
    if lam.0 > last - lam.0 {
        ActionIndex(0)
    } else {
        ActionIndex(last)
    }
}

/// Parses a JSON-lines record log, skipping blank lines.
pub fn read_jsonl<R: BufRead>(input: R) -> Result<Vec<InteractionRecord>> {
    let mut out = Vec::new();
    for (i, line) in input.lines().enumerate() {
        let line = line.map_err(|e| Error::io("<record log>", e))?;
        if line.trim().is_empty() {
            continue;
        }
        let rec = serde_json::from_str(&line)
            .map_err(|e| Error::json(format!("record log line {}", i + 1), e))?;
        out.push(rec);
    }
    Ok(out)
}
