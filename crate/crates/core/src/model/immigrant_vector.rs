use serde::{Deserialize, Serialize};

use crate::error::{HawkesError, Result};

/// Immigrant indicators `z_1..z_n` with `z_1 = 1`.
#[derive(Debug, Clone, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct ImmigrantVector {
    z: Vec<bool>,
}

impl ImmigrantVector {
    pub fn new(z: Vec<bool>) -> Result<Self> {
        match z.first() {
            Some(true) => Ok(Self { z }),
            Some(false) => Err(HawkesError::InvalidImmigrantVector(
                "the first event must be an immigrant".into(),
            )),
            None => Err(HawkesError::InvalidImmigrantVector("empty vector".into())),
        }
    }

    /// Builds from 0/1 integers, rejecting any other value.
    pub fn from_bits(bits: &[u8]) -> Result<Self> {
        let z = bits
            .iter()
            .map(|&b| match b {
                0 => Ok(false),
                1 => Ok(true),
                other => Err(HawkesError::InvalidImmigrantVector(format!(
                    "entry {other} is not 0 or 1"
                ))),
            })
            .collect::<Result<Vec<_>>>()?;
        Self::new(z)
    }

    pub fn all_immigrants(n: usize) -> Result<Self> {
        Self::new(vec![true; n])
    }

    pub fn len(&self) -> usize {
        self.z.len()
    }

    pub fn is_empty(&self) -> bool {
        self.z.is_empty()
    }

    pub fn as_slice(&self) -> &[bool] {
        &self.z
    }

    pub fn immigrant_count(&self) -> usize {
        self.z.iter().filter(|&&b| b).count()
    }

    /// Errors unless the vector has one entry per event.
    pub fn check_len(&self, n: usize) -> Result<()> {
        if self.z.len() != n {
            return Err(HawkesError::InvalidImmigrantVector(format!(
                "length {} does not match {} events",
                self.z.len(),
                n
            )));
        }
        Ok(())
    }
}
