/// Boolean attention mask over (query, key) positions.
///
/// `true` means the pair may attend. Packed batches use block-diagonal
/// masks so samples sharing a sequence cannot see each other; padding
/// rows and columns are all `false`.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct AttnMask {
    rows: usize,
    cols: usize,
    data: Vec<bool>,
}

impl AttnMask {
    pub fn new_allow_all(rows: usize, cols: usize) -> Self {
        Self { rows, cols, data: vec![true; rows * cols] }
    }

    pub fn new_deny_all(rows: usize, cols: usize) -> Self {
        Self { rows, cols, data: vec![false; rows * cols] }
    }

    /// Square block-diagonal mask of the given total size: `true` inside
    /// consecutive `blocks[i] x blocks[i]` squares, `false` elsewhere
    /// (including any trailing padding rows/cols).
    pub fn block_diagonal(total: usize, blocks: &[usize]) -> Self {
        let mut m = Self::new_deny_all(total, total);
        let mut start = 0;
        for &b in blocks {
            for i in start..start + b {
                for j in start..start + b {
                    m.data[i * total + j] = true;
                }
            }
            start += b;
        }
        debug_assert!(start <= total);
        m
    }

    pub fn rows(&self) -> usize {
        self.rows
    }

    pub fn cols(&self) -> usize {
        self.cols
    }

    pub fn allowed(&self, row: usize, col: usize) -> bool {
        self.data[row * self.cols + col]
    }

    pub fn set(&mut self, row: usize, col: usize, allowed: bool) {
        self.data[row * self.cols + col] = allowed;
    }

    /// Sub-mask for query rows `[r0, r1)` against key cols `[c0, c1)`.
    pub fn window(&self, r0: usize, r1: usize, c0: usize, c1: usize) -> Self {
        let mut out = Self::new_deny_all(r1 - r0, c1 - c0);
        for i in r0..r1 {
            for j in c0..c1 {
                out.data[(i - r0) * out.cols + (j - c0)] = self.allowed(i, j);
            }
        }
        out
    }

    /// True if every entry in query row `row` is denied.
    pub fn row_fully_masked(&self, row: usize) -> bool {
        (0..self.cols).all(|j| !self.allowed(row, j))
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn block_diagonal_layout() {
        // segments [2,2] in max_len 5: two 2x2 blocks, 5th row/col false
        let m = AttnMask::block_diagonal(5, &[2, 2]);
        assert!(m.allowed(0, 1));
        assert!(m.allowed(1, 0));
        assert!(m.allowed(2, 3));
        assert!(!m.allowed(0, 2));
        assert!(!m.allowed(3, 1));
        for k in 0..5 {
            assert!(!m.allowed(4, k));
            assert!(!m.allowed(k, 4));
        }
        assert!(m.row_fully_masked(4));
    }

    #[test]
    fn window_extracts_submask() {
        let m = AttnMask::block_diagonal(4, &[2, 2]);
        let w = m.window(0, 2, 2, 4);
        assert!(!w.allowed(0, 0) && !w.allowed(1, 1));
        let w2 = m.window(2, 4, 2, 4);
        assert!(w2.allowed(0, 0) && w2.allowed(1, 1));
    }
}
