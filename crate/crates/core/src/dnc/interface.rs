//! Layout and parsing of the controller's interface vector.
//!
//! Field order inside the raw vector is fixed:
//! read keys, read strengths, write key, write strength, erase vector,
//! write vector, free gates, allocation gate, write gate, read modes.

use std::ops::Range;

use super::DncConfig;
use crate::error::{Error, Result};
use crate::tensor::{oneplus, sigmoid, softmax_rows};

/// Number of read modes: backward link, content, forward link.
pub const READ_MODES: usize = 3;

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct InterfaceLayout {
    pub read_keys: Range<usize>,
    pub read_strengths: Range<usize>,
    pub write_key: Range<usize>,
    pub write_strength: Range<usize>,
    pub erase: Range<usize>,
    pub write_vector: Range<usize>,
    pub free_gates: Range<usize>,
    pub allocation_gate: Range<usize>,
    pub write_gate: Range<usize>,
    pub read_modes: Range<usize>,
}

impl InterfaceLayout {
    pub fn new(config: &DncConfig) -> Self {
        let (w, r) = (config.word_size, config.read_heads);
        let mut at = 0;
        let mut take = |n: usize| {
            let range = at..at + n;
            at += n;
            range
        };
        InterfaceLayout {
            read_keys: take(r * w),
            read_strengths: take(r),
            write_key: take(w),
            write_strength: take(1),
            erase: take(w),
            write_vector: take(w),
            free_gates: take(r),
            allocation_gate: take(1),
            write_gate: take(1),
            read_modes: take(READ_MODES * r),
        }
    }

    pub fn total(&self) -> usize {
        self.read_modes.end
    }

    /// Field ranges in layout order.
    pub fn fields(&self) -> [Range<usize>; 10] {
        [
            self.read_keys.clone(),
            self.read_strengths.clone(),
            self.write_key.clone(),
            self.write_strength.clone(),
            self.erase.clone(),
            self.write_vector.clone(),
            self.free_gates.clone(),
            self.allocation_gate.clone(),
            self.write_gate.clone(),
            self.read_modes.clone(),
        ]
    }

    /// The pre-activation slices of `raw`, one per field.
    pub fn split<'a>(&self, raw: &'a [f64]) -> Result<Vec<&'a [f64]>> {
        self.check_len(raw.len())?;
        Ok(self.fields().into_iter().map(|r| &raw[r]).collect())
    }

    fn check_len(&self, actual: usize) -> Result<()> {
        if actual != self.total() {
            return Err(Error::InterfaceLength {
                expected: self.total(),
                actual,
            });
        }
        Ok(())
    }
}

/// Activated interface fields for a single example.
#[derive(Clone, Debug, PartialEq)]
pub struct InterfaceVector {
    pub read_keys: Vec<Vec<f64>>,
    pub read_strengths: Vec<f64>,
    pub write_key: Vec<f64>,
    pub write_strength: f64,
    pub erase: Vec<f64>,
    pub write_vector: Vec<f64>,
    pub free_gates: Vec<f64>,
    pub allocation_gate: f64,
    pub write_gate: f64,
    pub read_modes: Vec<[f64; READ_MODES]>,
}

impl InterfaceVector {
    /// Slices `raw` by [`InterfaceLayout`] and applies sigmoid to gates and
    /// erase, oneplus to strengths and softmax to each read-mode triple.
    pub fn parse(raw: &[f64], config: &DncConfig) -> Result<Self> {
        let layout = InterfaceLayout::new(config);
        layout.check_len(raw.len())?;
        let w = config.word_size;
        let sig = |r: &Range<usize>| {
            raw[r.clone()]
                .iter()
                .map(|&x| sigmoid(x))
                .collect::<Vec<_>>()
        };
        let mut modes = raw[layout.read_modes.clone()].to_vec();
        softmax_rows(&mut modes, READ_MODES);
        Ok(InterfaceVector {
            read_keys: raw[layout.read_keys.clone()]
                .chunks(w)
                .map(<[f64]>::to_vec)
                .collect(),
            read_strengths: raw[layout.read_strengths.clone()]
                .iter()
                .map(|&x| oneplus(x))
                .collect(),
            write_key: raw[layout.write_key.clone()].to_vec(),
            write_strength: oneplus(raw[layout.write_strength.start]),
            erase: sig(&layout.erase),
            write_vector: raw[layout.write_vector.clone()].to_vec(),
            free_gates: sig(&layout.free_gates),
            allocation_gate: sigmoid(raw[layout.allocation_gate.start]),
            write_gate: sigmoid(raw[layout.write_gate.start]),
            read_modes: modes
                .chunks(READ_MODES)
                .map(|c| [c[0], c[1], c[2]])
                .collect(),
        })
    }
}
