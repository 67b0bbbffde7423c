//! Partitioned system state.
//!
//! States are split into an indirectly actuated block (deterministic
//! dynamics, e.g. positions and angles) followed by a directly actuated
//! block (the rows where control and noise enter, e.g. velocities or
//! actuator states). The split is fixed per model and drives both the
//! integrator and the trajectory likelihood machinery.

use nalgebra::{DVector, DVectorView};

/// System state partitioned as `[a_block; c_block]`.
///
/// The `a_block` (size `n_a`) holds the indirectly actuated components,
/// the `c_block` (size `n_c`) the directly actuated ones. Stored
/// contiguously so dynamics code can view the full vector.
#[derive(Debug, Clone, PartialEq)]
pub struct StateVector {
    data: DVector<f64>,
    n_a: usize,
}

impl StateVector {
    /// Builds a state from the stacked full vector and the partition size.
    ///
    /// Panics if `n_a` exceeds the vector length; the partition is fixed
    /// for the life of the value.
    pub fn new(data: DVector<f64>, n_a: usize) -> Self {
        assert!(
            n_a <= data.len(),
            "a-block size {} exceeds state dimension {}",
            n_a,
            data.len()
        );
        Self { data, n_a }
    }

    /// Builds a state from separate a/c blocks.
    pub fn from_blocks(a_block: &[f64], c_block: &[f64]) -> Self {
        let n_a = a_block.len();
        let mut data = DVector::zeros(n_a + c_block.len());
        data.as_mut_slice()[..n_a].copy_from_slice(a_block);
        data.as_mut_slice()[n_a..].copy_from_slice(c_block);
        Self { data, n_a }
    }

    /// Zero state with the given block sizes.
    pub fn zeros(n_a: usize, n_c: usize) -> Self {
        Self {
            data: DVector::zeros(n_a + n_c),
            n_a,
        }
    }

    pub fn dim(&self) -> usize {
        self.data.len()
    }

    pub fn n_a(&self) -> usize {
        self.n_a
    }

    pub fn n_c(&self) -> usize {
        self.data.len() - self.n_a
    }

    /// Full state vector, a-block first.
    pub fn as_vector(&self) -> &DVector<f64> {
        &self.data
    }

    pub fn as_mut_vector(&mut self) -> &mut DVector<f64> {
        &mut self.data
    }

    pub fn as_slice(&self) -> &[f64] {
        self.data.as_slice()
    }

    pub fn a_block(&self) -> DVectorView<'_, f64> {
        self.data.rows(0, self.n_a)
    }

    pub fn c_block(&self) -> DVectorView<'_, f64> {
        self.data.rows(self.n_a, self.n_c())
    }

    /// True when every component is finite; diverged rollouts fail this.
    pub fn all_finite(&self) -> bool {
        self.data.iter().all(|v| v.is_finite())
    }
}

impl std::ops::Index<usize> for StateVector {
    type Output = f64;

    fn index(&self, i: usize) -> &f64 {
        &self.data[i]
    }
}

impl std::ops::IndexMut<usize> for StateVector {
    fn index_mut(&mut self, i: usize) -> &mut f64 {
        &mut self.data[i]
    }
}
