use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::flowcore::NUM_FEATURES;

/// Encoder layer sizes `[16, h1, .., p]`. The decoder mirrors the encoder
/// without repeating the embedding layer.
///
/// The input size is fixed at 16. Sizes after the input strictly decrease,
/// and the embedding `p` is smaller than the input, so `[16, 62, 9]` is
/// valid while `[16, 20]` and `[16, 30, 40, 9]` are not.
#[derive(Debug, Clone, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(try_from = "Vec<usize>", into = "Vec<usize>")]
pub struct Architecture {
    encoder: Vec<usize>,
}

impl Architecture {
    pub fn new(encoder: Vec<usize>) -> Result<Self> {
        let fail = |reason: &str| {
            Err(Error::Architecture {
                sizes: encoder.clone(),
                reason: reason.to_string(),
            })
        };
        if encoder.len() < 2 {
            return fail("needs the input size and at least an embedding size");
        }
        if encoder[0] != NUM_FEATURES {
            return fail("first entry must be 16, the number of flow features");
        }
        if encoder[1..].windows(2).any(|w| w[1] >= w[0]) {
            return fail("encoder sizes after the input must strictly decrease");
        }
        let embedding = encoder[encoder.len() - 1];
        if embedding == 0 || embedding >= NUM_FEATURES {
            return fail("embedding size must be between 1 and 15");
        }
        Ok(Architecture { encoder })
    }

    pub fn encoder(&self) -> &[usize] {
        &self.encoder
    }

    pub fn embedding(&self) -> usize {
        self.encoder[self.encoder.len() - 1]
    }

    /// Number of encoder hidden layers, excluding input and embedding.
    pub fn hidden_layers(&self) -> usize {
        self.encoder.len() - 2
    }

    /// Full layer-size sequence, e.g. `[16, 62, 9, 62, 16]`.
    pub fn layer_sizes(&self) -> Vec<usize> {
        let mut sizes = self.encoder.clone();
        sizes.extend(self.encoder.iter().rev().skip(1));
        sizes
    }
}

impl fmt::Display for Architecture {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let parts: Vec<String> = self.encoder.iter().map(usize::to_string).collect();
        f.write_str(&parts.join(","))
    }
}

/// Parses `"16,62,9"` (spaces and surrounding brackets allowed).
impl FromStr for Architecture {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        let trimmed = s.trim().trim_start_matches('[').trim_end_matches(']');
        let sizes = trimmed
            .split(',')
            .map(|p| {
                p.trim().parse::<usize>().map_err(|_| Error::Architecture {
                    sizes: Vec::new(),
                    reason: format!("{s:?} is not a comma-separated list of sizes"),
                })
            })
            .collect::<Result<Vec<_>>>()?;
        Architecture::new(sizes)
    }
}

impl TryFrom<Vec<usize>> for Architecture {
    type Error = Error;

    fn try_from(v: Vec<usize>) -> Result<Self> {
        Architecture::new(v)
    }
}

impl From<Architecture> for Vec<usize> {
    fn from(a: Architecture) -> Self {
        a.encoder
    }
}

/// Encoder sizes of the ten best architectures reported for the original
/// datasets, best first.
pub const REFERENCE_ARCHITECTURES: [&[usize]; 10] = [
    &[16, 62, 9],
    &[16, 26, 17, 9],
    &[16, 98, 9],
    &[16, 86, 9],
    &[16, 62, 35, 9],
    &[16, 38, 23, 9],
    &[16, 26, 20, 14, 9],
    &[16, 74, 38, 3],
    &[16, 50, 29, 9],
    &[16, 110, 56, 3],
];
