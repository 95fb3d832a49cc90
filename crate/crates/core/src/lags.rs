//! Lag sets and the compact lag expression grammar.
//!
//! An expression is a comma separated list of terms, each an integer `a`,
//! an inclusive range `a:b`, or a stepped range `a:b:s`. Whitespace around
//! tokens is ignored. The resulting set is deduplicated and sorted.
//!
//! ```
//! use tbss_core::lags::{parse_lag_expr, format_lag_set};
//! let set = parse_lag_expr("1,5,10:20:5").unwrap();
//! assert_eq!(set.as_slice(), &[1, 5, 10, 15, 20]);
//! assert_eq!(format_lag_set(&set), "1,5,10,15,20");
//! ```

use std::collections::BTreeSet;
use std::fmt;

use serde::{Deserialize, Serialize};
use thiserror::Error;

/// Largest lag value accepted by the grammar.
pub const MAX_LAG_VALUE: usize = 1_000_000;
/// Largest number of lags a single set may hold.
pub const MAX_SET_SIZE: usize = 512;

/// Ordered set of distinct positive lags.
#[derive(Debug, Clone, PartialEq, Eq, Hash, Default, Serialize, Deserialize)]
#[serde(try_from = "Vec<usize>", into = "Vec<usize>")]
pub struct LagSet(Vec<usize>);

impl LagSet {
    /// Builds a set from arbitrary lags, sorting and removing duplicates.
    /// Zero lags are rejected.
    pub fn new<I: IntoIterator<Item = usize>>(lags: I) -> Result<Self, LagExprError> {
        let set: BTreeSet<usize> = lags.into_iter().collect();
        if set.contains(&0) {
            return Err(LagExprError::OutOfRange { position: 0, value: 0 });
        }
        Ok(LagSet(set.into_iter().collect()))
    }

    /// `{lo, ..., hi}`.
    pub fn range(lo: usize, hi: usize) -> Self {
        LagSet((lo.max(1)..=hi).collect())
    }

    pub fn as_slice(&self) -> &[usize] {
        &self.0
    }

    pub fn len(&self) -> usize {
        self.0.len()
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }

    pub fn max(&self) -> Option<usize> {
        self.0.last().copied()
    }

    pub fn min(&self) -> Option<usize> {
        self.0.first().copied()
    }

    pub fn contains(&self, lag: usize) -> bool {
        self.0.binary_search(&lag).is_ok()
    }

    pub fn iter(&self) -> impl Iterator<Item = usize> + '_ {
        self.0.iter().copied()
    }

    pub fn union(&self, other: &LagSet) -> LagSet {
        let set: BTreeSet<usize> = self.iter().chain(other.iter()).collect();
        LagSet(set.into_iter().collect())
    }
}

impl TryFrom<Vec<usize>> for LagSet {
    type Error = LagExprError;
    fn try_from(v: Vec<usize>) -> Result<Self, Self::Error> {
        LagSet::new(v)
    }
}

impl From<LagSet> for Vec<usize> {
    fn from(s: LagSet) -> Self {
        s.0
    }
}

impl fmt::Display for LagSet {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&format_lag_set(self))
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum LagExprError {
    #[error("parse error at position {position}: {message}")]
    Parse { position: usize, message: String },
    #[error("lag {value} at position {position} is out of range 1..={max}", max = MAX_LAG_VALUE)]
    OutOfRange { position: usize, value: usize },
    #[error("lag set has {count} elements, at most {max} allowed", max = MAX_SET_SIZE)]
    TooMany { count: usize },
}

struct Cursor<'a> {
    bytes: &'a [u8],
    pos: usize,
}

impl<'a> Cursor<'a> {
    fn skip_ws(&mut self) {
        while self.pos < self.bytes.len() && self.bytes[self.pos].is_ascii_whitespace() {
            self.pos += 1;
        }
    }

    fn peek(&self) -> Option<u8> {
        self.bytes.get(self.pos).copied()
    }

    fn error(&self, message: impl Into<String>) -> LagExprError {
        LagExprError::Parse { position: self.pos, message: message.into() }
    }

    fn integer(&mut self) -> Result<(usize, usize), LagExprError> {
        self.skip_ws();
        let start = self.pos;
        while self.pos < self.bytes.len() && self.bytes[self.pos].is_ascii_digit() {
            self.pos += 1;
        }
        if start == self.pos {
            return Err(match self.peek() {
                Some(c) => self.error(format!("expected integer, found '{}'", c as char)),
                None => self.error("expected integer, found end of input"),
            });
        }
        // Only ASCII digits were consumed, so this is valid UTF-8.
        let digits = std::str::from_utf8(&self.bytes[start..self.pos]).unwrap_or_default();
        let value = digits
            .parse::<usize>()
            .ok()
            .filter(|v| *v <= MAX_LAG_VALUE)
            .ok_or(LagExprError::OutOfRange { position: start, value: usize::MAX })?;
        Ok((value, start))
    }
}

/// Parses a lag expression such as `1:12` or `1,5,10:20:5`.
pub fn parse_lag_expr(text: &str) -> Result<LagSet, LagExprError> {
    let mut cur = Cursor { bytes: text.as_bytes(), pos: 0 };
    let mut set = BTreeSet::new();
    loop {
        let (first, first_pos) = cur.integer()?;
        check_positive(first, first_pos)?;
        cur.skip_ws();
        if cur.peek() == Some(b':') {
            cur.pos += 1;
            let (last, last_pos) = cur.integer()?;
            check_positive(last, last_pos)?;
            cur.skip_ws();
            let mut step = 1;
            if cur.peek() == Some(b':') {
                cur.pos += 1;
                let (s, s_pos) = cur.integer()?;
                if s == 0 {
                    return Err(LagExprError::Parse { position: s_pos, message: "step must be positive".into() });
                }
                step = s;
                cur.skip_ws();
            }
            if last < first {
                return Err(LagExprError::Parse {
                    position: first_pos,
                    message: format!("descending range {first}:{last} is not supported"),
                });
            }
            let mut lag = first;
            while lag <= last {
                set.insert(lag);
                if set.len() > MAX_SET_SIZE {
                    return Err(LagExprError::TooMany { count: set.len() });
                }
                lag += step;
            }
        } else {
            set.insert(first);
        }
        match cur.peek() {
            None => break,
            Some(b',') => cur.pos += 1,
            Some(c) => return Err(cur.error(format!("unexpected character '{}'", c as char))),
        }
    }
    if set.len() > MAX_SET_SIZE {
        return Err(LagExprError::TooMany { count: set.len() });
    }
    Ok(LagSet(set.into_iter().collect()))
}

fn check_positive(value: usize, position: usize) -> Result<(), LagExprError> {
    if value == 0 {
        Err(LagExprError::OutOfRange { position, value })
    } else {
        Ok(())
    }
}

/// Canonical text form: runs of three or more consecutive lags are written
/// as `a:b`, everything else as single comma separated integers.
pub fn format_lag_set(set: &LagSet) -> String {
    let lags = set.as_slice();
    let mut parts = Vec::new();
    let mut i = 0;
    while i < lags.len() {
        let mut j = i;
        while j + 1 < lags.len() && lags[j + 1] == lags[j] + 1 {
            j += 1;
        }
        if j - i >= 2 {
            parts.push(format!("{}:{}", lags[i], lags[j]));
        } else {
            parts.extend(lags[i..=j].iter().map(|l| l.to_string()));
        }
        i = j + 1;
    }
    parts.join(",")
}
