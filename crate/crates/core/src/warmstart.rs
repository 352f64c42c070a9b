//! Linear prediction of a block's starting trainables from earlier blocks.

use std::collections::VecDeque;

use crate::error::{Error, Result};
use crate::generator::ParamVector;
use crate::scalar::{lit, Scalar};

#[derive(Debug, Clone, PartialEq)]
pub enum InitSpec<S> {
    FreshRandom,
    Copy(ParamVector<S>),
    Predicted(ParamVector<S>),
}

impl<S> InitSpec<S> {
    pub fn kind(&self) -> &'static str {
        match self {
            InitSpec::FreshRandom => "fresh",
            InitSpec::Copy(_) => "copy",
            InitSpec::Predicted(_) => "predicted",
        }
    }
}

const CAPACITY: usize = 2;

/// The two most recent `(block_index, params)` pairs, oldest first.
#[derive(Debug, Clone, PartialEq)]
pub struct ParamHistory<S> {
    entries: VecDeque<(usize, ParamVector<S>)>,
}

impl<S: Scalar> Default for ParamHistory<S> {
    fn default() -> Self {
        Self::new()
    }
}

impl<S: Scalar> ParamHistory<S> {
    pub fn new() -> Self {
        ParamHistory {
            entries: VecDeque::with_capacity(CAPACITY + 1),
        }
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn indices(&self) -> Vec<usize> {
        self.entries.iter().map(|e| e.0).collect()
    }

    pub fn push(&mut self, block_index: usize, params: ParamVector<S>) -> Result<()> {
        if let Some(&(last, ref p)) = self.entries.back() {
            if block_index <= last {
                return Err(Error::OutOfOrder {
                    index: block_index,
                    last,
                });
            }
            if p.len() != params.len() {
                return Err(Error::LengthMismatch {
                    expected: p.len(),
                    got: params.len(),
                });
            }
        }
        self.entries.push_back((block_index, params));
        while self.entries.len() > CAPACITY {
            self.entries.pop_front();
        }
        Ok(())
    }

    /// Nothing stored: fresh. One entry: copy it. Two: `2 p[t-1] - p[t-2]`.
    pub fn predict_init(&self) -> Result<InitSpec<S>> {
        match self.entries.len() {
            0 => Ok(InitSpec::FreshRandom),
            1 => Ok(InitSpec::Copy(self.entries[0].1.clone())),
            _ => {
                let older = &self.entries[self.entries.len() - 2].1;
                let newer = &self.entries[self.entries.len() - 1].1;
                if older.len() != newer.len() {
                    return Err(Error::LengthMismatch {
                        expected: newer.len(),
                        got: older.len(),
                    });
                }
                let two = lit::<S>(2.0);
                let p = newer
                    .as_slice()
                    .iter()
                    .zip(older.as_slice())
                    .map(|(&n, &o)| two * n - o)
                    .collect();
                Ok(InitSpec::Predicted(ParamVector::new(p)))
            }
        }
    }
}
