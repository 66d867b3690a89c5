//! Small fixed-size parameter vectors.
//!
//! The learned parameter blocks in this crate are tiny (two or three
//! entries), so they are plain `[f64; N]` arrays behind a trait that gives
//! the update loops the few vector operations they need without heap
//! allocation.

/// Operations on a fixed-length parameter vector.
pub trait ParamVec: Copy + Send + Sync + 'static {
    /// Number of entries.
    const DIM: usize;

    fn zeros() -> Self;
    fn as_slice(&self) -> &[f64];
    fn as_mut_slice(&mut self) -> &mut [f64];

    /// `self += c * other`
    fn axpy(&mut self, c: f64, other: &Self) {
        for (s, o) in self.as_mut_slice().iter_mut().zip(other.as_slice()) {
            *s += c * o;
        }
    }

    /// `self *= c`
    fn scale(&mut self, c: f64) {
        for s in self.as_mut_slice() {
            *s *= c;
        }
    }

    fn add(&mut self, other: &Self) {
        self.axpy(1.0, other);
    }

    fn dot(&self, other: &Self) -> f64 {
        self.as_slice()
            .iter()
            .zip(other.as_slice())
            .map(|(a, b)| a * b)
            .sum()
    }

    fn max_abs(&self) -> f64 {
        self.as_slice().iter().fold(0.0, |m, v| m.max(v.abs()))
    }

    fn all_finite(&self) -> bool {
        self.as_slice().iter().all(|v| v.is_finite())
    }

    /// Componentwise scaled sum `a + c*b` as a new vector.
    fn lin_comb(a: &Self, c: f64, b: &Self) -> Self {
        let mut out = *a;
        out.axpy(c, b);
        out
    }
}

impl<const N: usize> ParamVec for [f64; N] {
    const DIM: usize = N;

    fn zeros() -> Self {
        [0.0; N]
    }

    fn as_slice(&self) -> &[f64] {
        self
    }

    fn as_mut_slice(&mut self) -> &mut [f64] {
        self
    }
}
