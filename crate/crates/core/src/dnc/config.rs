use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Sizes of one DNC cell.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct DncConfig {
    /// Number of memory locations (N).
    pub memory_size: usize,
    /// Width of each memory word (W).
    pub word_size: usize,
    pub read_heads: usize,
    /// LSTM controller units.
    pub hidden_size: usize,
    pub input_size: usize,
    pub output_size: usize,
}

impl DncConfig {
    pub fn validate(&self) -> Result<()> {
        let fields = [
            ("memory_size", self.memory_size),
            ("word_size", self.word_size),
            ("read_heads", self.read_heads),
            ("hidden_size", self.hidden_size),
            ("input_size", self.input_size),
            ("output_size", self.output_size),
        ];
        for (name, v) in fields {
            if v == 0 {
                return Err(Error::InvalidArgument(format!(
                    "DncConfig.{name} must be >= 1"
                )));
            }
        }
        Ok(())
    }

    /// Length of the raw interface vector: `W*R + 3W + 5R + 3`.
    pub fn interface_size(&self) -> usize {
        let (w, r) = (self.word_size, self.read_heads);
        w * r + 3 * w + 5 * r + 3
    }

    /// Width of the controller input `[x; r_1 .. r_R]`.
    pub fn controller_input_size(&self) -> usize {
        self.input_size + self.read_heads * self.word_size
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn cfg(w: usize, r: usize) -> DncConfig {
        DncConfig {
            memory_size: 4,
            word_size: w,
            read_heads: r,
            hidden_size: 8,
            input_size: 3,
            output_size: 2,
        }
    }

    #[test]
    fn interface_sizes() {
        assert_eq!(cfg(64, 5).interface_size(), 540);
        assert_eq!(cfg(1, 1).interface_size(), 12);
    }

    #[test]
    fn zero_sizes_rejected() {
        let mut c = cfg(1, 1);
        assert!(c.validate().is_ok());
        c.read_heads = 0;
        assert!(c.validate().unwrap_err().to_string().contains("read_heads"));
    }
}
