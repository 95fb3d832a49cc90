//! Per-dataset view state shared with the UI: active DOI, palette order and
//! color-bound run selections.

use serde::{Deserialize, Serialize};
use tbss_core::analytics::doi::DoiKind;
use tbss_core::solver::RunId;

use crate::error::{Result, ServiceError};

/// Number of qualitative hues in the palette.
pub const PALETTE_SIZE: usize = 8;

/// At most this many runs are selected at once; the remaining hue stays free
/// for hover highlighting.
pub const MAX_SELECTIONS: usize = PALETTE_SIZE - 1;

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Selection {
    pub run_id: RunId,
    /// Palette hue index bound to the run.
    pub color: usize,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct SessionState {
    pub doi_kind: DoiKind,
    /// Palette hue indices in user order; also the plotting order.
    pub color_order: Vec<usize>,
    pub selections: Vec<Selection>,
    /// Incremented on every change.
    pub version: u64,
}

impl Default for SessionState {
    fn default() -> Self {
        SessionState {
            doi_kind: DoiKind::default(),
            color_order: (0..PALETTE_SIZE).collect(),
            selections: Vec::new(),
            version: 0,
        }
    }
}

impl SessionState {
    /// First hue in palette order that no selection holds.
    pub fn next_free_color(&self) -> Option<usize> {
        self.color_order
            .iter()
            .copied()
            .find(|c| self.selections.iter().all(|s| s.color != *c))
    }

    pub fn color_of(&self, run: &RunId) -> Option<usize> {
        self.selections.iter().find(|s| &s.run_id == run).map(|s| s.color)
    }

    /// Binds the next free hue to `run`. Selecting an already selected run
    /// returns its hue.
    pub fn select(&mut self, run: RunId) -> Result<usize> {
        if let Some(color) = self.color_of(&run) {
            return Ok(color);
        }
        if self.selections.len() >= MAX_SELECTIONS {
            return Err(ServiceError::SelectionFull(MAX_SELECTIONS));
        }
        let color = self.next_free_color().ok_or(ServiceError::SelectionFull(MAX_SELECTIONS))?;
        self.selections.push(Selection { run_id: run, color });
        self.version += 1;
        Ok(color)
    }

    /// Releases the hue of `run`; returns whether it was selected.
    pub fn deselect(&mut self, run: &RunId) -> bool {
        let before = self.selections.len();
        self.selections.retain(|s| &s.run_id != run);
        let removed = self.selections.len() != before;
        if removed {
            self.version += 1;
        }
        removed
    }

    pub fn set_color_order(&mut self, order: Vec<usize>) -> Result<()> {
        let mut sorted = order.clone();
        sorted.sort_unstable();
        if sorted != (0..PALETTE_SIZE).collect::<Vec<_>>() {
            return Err(ServiceError::InvalidRequest(format!(
                "color_order must be a permutation of 0..{PALETTE_SIZE}"
            )));
        }
        self.color_order = order;
        self.version += 1;
        Ok(())
    }

    pub fn set_doi_kind(&mut self, kind: DoiKind) {
        if self.doi_kind != kind {
            self.doi_kind = kind;
            self.version += 1;
        }
    }

    /// Selected runs in plotting order (palette order of their hues).
    pub fn plotting_order(&self) -> Vec<RunId> {
        self.color_order
            .iter()
            .filter_map(|c| self.selections.iter().find(|s| s.color == *c))
            .map(|s| s.run_id.clone())
            .collect()
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn id(i: usize) -> RunId {
        RunId(format!("m{i:012}"))
    }

    #[test]
    fn colors_follow_palette_order_and_budget() {
        let mut s = SessionState::default();
        s.set_color_order(vec![3, 1, 0, 2, 4, 5, 6, 7]).unwrap();
        assert_eq!(s.select(id(0)).unwrap(), 3);
        assert_eq!(s.select(id(1)).unwrap(), 1);
        assert_eq!(s.select(id(0)).unwrap(), 3);
        for i in 2..7 {
            s.select(id(i)).unwrap();
        }
        assert!(matches!(s.select(id(7)), Err(ServiceError::SelectionFull(7))));
        assert_eq!(s.next_free_color(), Some(7));
        assert!(s.deselect(&id(1)));
        assert_eq!(s.select(id(7)).unwrap(), 1);
    }

    #[test]
    fn plotting_order_tracks_palette() {
        let mut s = SessionState::default();
        s.select(id(0)).unwrap();
        s.select(id(1)).unwrap();
        assert_eq!(s.plotting_order(), vec![id(0), id(1)]);
        s.set_color_order(vec![1, 0, 2, 3, 4, 5, 6, 7]).unwrap();
        assert_eq!(s.plotting_order(), vec![id(1), id(0)]);
        assert!(s.set_color_order(vec![0, 0, 1, 2, 3, 4, 5, 6]).is_err());
        assert!(s.set_color_order(vec![0, 1]).is_err());
    }
}
