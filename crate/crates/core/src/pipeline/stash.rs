use std::collections::VecDeque;

use crate::error::{Error, Result};
use crate::numerics::DenseVector;

#[derive(Debug, Clone)]
struct Entry {
    version: u64,
    weights: DenseVector,
    refs: usize,
}

/// Weight versions still needed by in-flight microbatches.
///
/// A version is stored when the first microbatch is forwarded with it and
/// dropped when the last such microbatch finishes its backward pass.
#[derive(Debug, Clone)]
pub struct WeightStash {
    capacity: usize,
    entries: VecDeque<Entry>,
    peak: usize,
}

impl WeightStash {
    pub fn new(capacity: usize) -> Self {
        Self {
            capacity,
            entries: VecDeque::with_capacity(capacity),
            peak: 0,
        }
    }

    pub fn capacity(&self) -> usize {
        self.capacity
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    /// Largest number of versions held at once.
    pub fn peak(&self) -> usize {
        self.peak
    }

    pub fn acquire(&mut self, version: u64, weights: &DenseVector) -> Result<()> {
        if let Some(last) = self.entries.back_mut() {
            if last.version == version {
                last.refs += 1;
                return Ok(());
            }
            if last.version > version {
                return Err(Error::Stash(format!(
                    "version {version} stashed after newer version {}",
                    last.version
                )));
            }
        }
        if self.entries.len() == self.capacity {
            return Err(Error::Stash(format!(
                "capacity {} exceeded while stashing version {version}",
                self.capacity
            )));
        }
        self.entries.push_back(Entry {
            version,
            weights: weights.clone(),
            refs: 1,
        });
        self.peak = self.peak.max(self.entries.len());
        Ok(())
    }

    fn position(&self, version: u64) -> Result<usize> {
        self.entries
            .iter()
            .position(|e| e.version == version)
            .ok_or_else(|| Error::Stash(format!("version {version} is not stashed")))
    }

    pub fn get(&self, version: u64) -> Result<&DenseVector> {
        Ok(&self.entries[self.position(version)?].weights)
    }

    pub fn release(&mut self, version: u64) -> Result<()> {
        let pos = self.position(version)?;
        let entry = &mut self.entries[pos];
        entry.refs -= 1;
        if entry.refs == 0 {
            self.entries.remove(pos);
        }
        Ok(())
    }
}
