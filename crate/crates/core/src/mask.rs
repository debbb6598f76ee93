//! Binary target x reference relations stored as packed bit rows.

use std::fmt;

use crate::error::{ensure_dims, Result};

const WORD: usize = 64;

/// Which tracker produced a mask.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum MaskOrigin {
    Instance,
    Dense,
    Combined,
    Manual,
}

/// Binary relation `n_target x n_ref`: bit `(i, j)` allows target cell `i`
/// to draw color from reference cell `j`.
#[derive(Clone, PartialEq, Eq)]
pub struct TrackMask {
    n_target: usize,
    n_ref: usize,
    words_per_row: usize,
    bits: Vec<u64>,
    origin: MaskOrigin,
}

impl TrackMask {
    pub fn empty(n_target: usize, n_ref: usize, origin: MaskOrigin) -> Self {
        let words_per_row = n_ref.div_ceil(WORD);
        Self {
            n_target,
            n_ref,
            words_per_row,
            bits: vec![0; n_target * words_per_row],
            origin,
        }
    }

    pub fn full(n_target: usize, n_ref: usize, origin: MaskOrigin) -> Self {
        let mut m = Self::empty(n_target, n_ref, origin);
        for i in 0..n_target {
            for j in 0..n_ref {
                m.set(i, j, true);
            }
        }
        m
    }

    pub fn identity(n: usize, origin: MaskOrigin) -> Self {
        let mut m = Self::empty(n, n, origin);
        for i in 0..n {
            m.set(i, i, true);
        }
        m
    }

    /// Builds a mask from a dense row-major boolean matrix.
    pub fn from_fn(n_target: usize, n_ref: usize, origin: MaskOrigin, f: impl Fn(usize, usize) -> bool) -> Self {
        let mut m = Self::empty(n_target, n_ref, origin);
        for i in 0..n_target {
            for j in 0..n_ref {
                if f(i, j) {
                    m.set(i, j, true);
                }
            }
        }
        m
    }

    pub fn n_target(&self) -> usize {
        self.n_target
    }

    pub fn n_ref(&self) -> usize {
        self.n_ref
    }

    pub fn origin(&self) -> MaskOrigin {
        self.origin
    }

    pub fn with_origin(mut self, origin: MaskOrigin) -> Self {
        self.origin = origin;
        self
    }

    #[inline]
    pub fn get(&self, i: usize, j: usize) -> bool {
        debug_assert!(i < self.n_target && j < self.n_ref);
        self.bits[i * self.words_per_row + j / WORD] >> (j % WORD) & 1 == 1
    }

    #[inline]
    pub fn set(&mut self, i: usize, j: usize, value: bool) {
        debug_assert!(i < self.n_target && j < self.n_ref);
        let w = &mut self.bits[i * self.words_per_row + j / WORD];
        let bit = 1u64 << (j % WORD);
        if value {
            *w |= bit;
        } else {
            *w &= !bit;
        }
    }

    pub fn row_words(&self, i: usize) -> &[u64] {
        &self.bits[i * self.words_per_row..(i + 1) * self.words_per_row]
    }

    pub fn row_words_mut(&mut self, i: usize) -> &mut [u64] {
        &mut self.bits[i * self.words_per_row..(i + 1) * self.words_per_row]
    }

    pub fn row_is_empty(&self, i: usize) -> bool {
        self.row_words(i).iter().all(|&w| w == 0)
    }

    pub fn row_count(&self, i: usize) -> usize {
        self.row_words(i).iter().map(|w| w.count_ones() as usize).sum()
    }

    pub fn count_ones(&self) -> usize {
        self.bits.iter().map(|w| w.count_ones() as usize).sum()
    }

    /// Set columns of row `i`, ascending.
    pub fn row_iter(&self, i: usize) -> impl Iterator<Item = usize> + '_ {
        self.row_words(i).iter().enumerate().flat_map(|(k, &word)| {
            let mut w = word;
            std::iter::from_fn(move || {
                if w == 0 {
                    return None;
                }
                let tz = w.trailing_zeros() as usize;
                w &= w - 1;
                Some(k * WORD + tz)
            })
        })
    }

    pub fn set_row(&mut self, i: usize, cols: impl IntoIterator<Item = usize>) {
        self.row_words_mut(i).fill(0);
        for j in cols {
            self.set(i, j, true);
        }
    }

    pub fn copy_row_from(&mut self, i: usize, src: &[u64]) {
        self.row_words_mut(i).copy_from_slice(src);
    }

    pub fn same_dims(&self, other: &TrackMask) -> Result<()> {
        ensure_dims(
            self.n_target == other.n_target && self.n_ref == other.n_ref,
            || {
                format!(
                    "masks are {}x{} and {}x{}",
                    self.n_target, self.n_ref, other.n_target, other.n_ref
                )
            },
        )
    }
}

impl fmt::Debug for TrackMask {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("TrackMask")
            .field("n_target", &self.n_target)
            .field("n_ref", &self.n_ref)
            .field("ones", &self.count_ones())
            .field("origin", &self.origin)
            .finish()
    }
}
