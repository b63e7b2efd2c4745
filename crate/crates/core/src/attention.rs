//! Sparse attention patterns: sliding window, dilation and symmetric global
//! positions, plus a dense masked reference used to check the sparse path.
//!
//! A non-global query `i` attends to itself, to `i ± k·d` for
//! `1 ≤ k ≤ w/2` (offsets outside the sequence are dropped), and to every
//! global position. A global query attends to every position.

use std::collections::BTreeSet;

use ndarray::{Array2, ArrayView2};

use crate::model::Real;
use crate::{Error, Result};

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct AttentionPattern {
    /// Total window span `w`; `w/2` positions on each side.
    pub window: usize,
    /// Stride inside the window; 1 is a contiguous window.
    pub dilation: usize,
    pub global_positions: BTreeSet<usize>,
    pub seq_len: usize,
}

impl AttentionPattern {
    pub fn new(
        seq_len: usize,
        window: usize,
        dilation: usize,
        global_positions: impl IntoIterator<Item = usize>,
    ) -> Result<Self> {
        let p = Self {
            window,
            dilation,
            global_positions: global_positions.into_iter().collect(),
            seq_len,
        };
        p.validate()?;
        Ok(p)
    }

    pub fn validate(&self) -> Result<()> {
        if self.window < 2 || self.window % 2 != 0 {
            return Err(Error::InvalidPattern(format!(
                "window {} must be even and >= 2",
                self.window
            )));
        }
        if self.dilation == 0 {
            return Err(Error::InvalidPattern("dilation must be >= 1".into()));
        }
        if let Some(&g) = self.global_positions.iter().find(|&&g| g >= self.seq_len) {
            return Err(Error::InvalidPattern(format!(
                "global position {g} outside sequence of length {}",
                self.seq_len
            )));
        }
        Ok(())
    }

    pub fn is_global(&self, i: usize) -> bool {
        self.global_positions.contains(&i)
    }

    /// Sorted key positions visible from query `i`.
    pub fn row(&self, i: usize) -> Vec<usize> {
        let n = self.seq_len;
        if self.is_global(i) {
            return (0..n).collect();
        }
        let half = self.window / 2;
        let d = self.dilation;
        let mut row: Vec<usize> = Vec::with_capacity(self.window + 1 + self.global_positions.len());
        for k in (1..=half).rev() {
            if let Some(j) = i.checked_sub(k * d) {
                row.push(j);
            }
        }
        row.push(i);
        for k in 1..=half {
            let j = i + k * d;
            if j < n {
                row.push(j);
            }
        }
        if !self.global_positions.is_empty() {
            row.extend(self.global_positions.iter().copied());
            row.sort_unstable();
            row.dedup();
        }
        row
    }

    /// Number of allowed pairs without materializing them.
    pub fn row_len(&self, i: usize) -> usize {
        let n = self.seq_len;
        if self.is_global(i) {
            return n;
        }
        let half = self.window / 2;
        let d = self.dilation;
        let left = (1..=half).filter(|k| k * d <= i).count();
        let right = (1..=half).filter(|k| i + k * d < n).count();
        let in_window = |g: usize| {
            g == i || (g.abs_diff(i) % d == 0 && g.abs_diff(i) / d <= half)
        };
        1 + left + right + self.global_positions.iter().filter(|&&g| !in_window(g)).count()
    }
}

/// Per-query sorted key lists.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct AllowedPairs {
    pub rows: Vec<Vec<usize>>,
}

impl AllowedPairs {
    pub fn pair_count(&self) -> usize {
        self.rows.iter().map(Vec::len).sum()
    }

    pub fn to_mask(&self) -> Array2<bool> {
        let n = self.rows.len();
        let mut mask = Array2::from_elem((n, n), false);
        for (i, row) in self.rows.iter().enumerate() {
            for &j in row {
                mask[[i, j]] = true;
            }
        }
        mask
    }
}

pub fn build_allowed_pairs(pattern: &AttentionPattern) -> Result<AllowedPairs> {
    pattern.validate()?;
    Ok(AllowedPairs {
        rows: (0..pattern.seq_len).map(|i| pattern.row(i)).collect(),
    })
}

pub fn attended_pair_count(pattern: &AttentionPattern) -> Result<usize> {
    pattern.validate()?;
    Ok((0..pattern.seq_len).map(|i| pattern.row_len(i)).sum())
}

/// Softmax over the allowed positions with max subtraction; disallowed
/// positions get exactly zero.
pub fn masked_softmax<T: Real>(scores: &[T], allowed: &[bool]) -> Result<Vec<T>> {
    if scores.len() != allowed.len() {
        return Err(Error::LengthMismatch {
            what: "scores vs allowed mask",
            left: scores.len(),
            right: allowed.len(),
        });
    }
    let max = scores
        .iter()
        .zip(allowed)
        .filter(|(_, &a)| a)
        .map(|(&s, _)| s)
        .fold(None, |m: Option<T>, s| Some(m.map_or(s, |m| m.max(s))))
        .ok_or(Error::Empty("softmax row has no allowed position"))?;
    let mut out: Vec<T> = scores
        .iter()
        .zip(allowed)
        .map(|(&s, &a)| if a { (s - max).exp() } else { T::zero() })
        .collect();
    let sum = out.iter().fold(T::zero(), |acc, &x| acc + x);
    for w in &mut out {
        *w = *w / sum;
    }
    Ok(out)
}

#[derive(Debug, Clone)]
pub struct AttentionOutput<T> {
    pub output: Array2<T>,
    /// Row `i` lists `(key, weight)` over the allowed keys of query `i`.
    pub weights: Vec<Vec<(usize, T)>>,
}

impl<T: Real> AttentionOutput<T> {
    pub fn dense_weights(&self) -> Array2<T> {
        let n = self.weights.len();
        let mut w = Array2::zeros((n, n));
        for (i, row) in self.weights.iter().enumerate() {
            for &(j, p) in row {
                w[[i, j]] = p;
            }
        }
        w
    }
}

fn check_shapes<T>(q: &ArrayView2<T>, k: &ArrayView2<T>, v: &ArrayView2<T>) -> Result<()> {
    if q.dim() != k.dim() || q.nrows() != v.nrows() {
        return Err(Error::ShapeMismatch {
            name: "attention inputs".into(),
            detail: format!("q {:?}, k {:?}, v {:?}", q.dim(), k.dim(), v.dim()),
        });
    }
    Ok(())
}

fn attend_row<T: Real>(
    i: usize,
    keys: &[usize],
    q: &ArrayView2<T>,
    k: &ArrayView2<T>,
    v: &ArrayView2<T>,
    scale: T,
) -> (Vec<T>, Vec<(usize, T)>) {
    let qi = q.row(i);
    let scores: Vec<T> = keys.iter().map(|&j| qi.dot(&k.row(j)) * scale).collect();
    let probs = masked_softmax(&scores, &vec![true; keys.len()]).expect("row is non-empty");
    let mut out = vec![T::zero(); v.ncols()];
    for (&j, &p) in keys.iter().zip(&probs) {
        for (o, &x) in out.iter_mut().zip(v.row(j)) {
            *o = *o + p * x;
        }
    }
    (out, keys.iter().copied().zip(probs).collect())
}

/// Attention restricted to the pattern's allowed pairs.
pub fn sparse_attention<T: Real>(
    q: ArrayView2<T>,
    k: ArrayView2<T>,
    v: ArrayView2<T>,
    pattern: &AttentionPattern,
    scale: T,
) -> Result<AttentionOutput<T>> {
    check_shapes(&q, &k, &v)?;
    if q.nrows() != pattern.seq_len {
        return Err(Error::ShapeMismatch {
            name: "attention inputs".into(),
            detail: format!("{} rows for pattern of length {}", q.nrows(), pattern.seq_len),
        });
    }
    let pairs = build_allowed_pairs(pattern)?;
    let mut output = Array2::zeros((q.nrows(), v.ncols()));
    let mut weights = Vec::with_capacity(q.nrows());
    for (i, keys) in pairs.rows.iter().enumerate() {
        let (row, w) = attend_row(i, keys, &q, &k, &v, scale);
        output.row_mut(i).assign(&ndarray::ArrayView1::from(&row));
        weights.push(w);
    }
    Ok(AttentionOutput { output, weights })
}

/// Full `n × n` masked attention. Quadratic; a test oracle.
pub fn dense_reference_attention<T: Real>(
    q: ArrayView2<T>,
    k: ArrayView2<T>,
    v: ArrayView2<T>,
    mask: ArrayView2<bool>,
    scale: T,
) -> Result<AttentionOutput<T>> {
    check_shapes(&q, &k, &v)?;
    let n = q.nrows();
    if mask.dim() != (n, n) {
        return Err(Error::ShapeMismatch {
            name: "attention mask".into(),
            detail: format!("{:?} for {n} queries", mask.dim()),
        });
    }
    let scores = q.dot(&k.t()).mapv(|s| s * scale);
    let mut output = Array2::zeros((n, v.ncols()));
    let mut weights = Vec::with_capacity(n);
    for i in 0..n {
        let allowed: Vec<bool> = mask.row(i).to_vec();
        let probs = masked_softmax(&scores.row(i).to_vec(), &allowed)?;
        let row_w: Vec<(usize, T)> = (0..n).filter(|&j| allowed[j]).map(|j| (j, probs[j])).collect();
        for &(j, p) in &row_w {
            let vj = v.row(j);
            let mut out = output.row_mut(i);
            out.zip_mut_with(&vj, |o, &x| *o = *o + p * x);
        }
        weights.push(row_w);
    }
    Ok(AttentionOutput { output, weights })
}

#[cfg(test)]
mod tests {
    use super::*;
    use ndarray::Array2;
    use proptest::prelude::*;
    use rand::{Rng, SeedableRng};

    fn pattern(n: usize, w: usize, d: usize, g: &[usize]) -> AttentionPattern {
        AttentionPattern::new(n, w, d, g.iter().copied()).unwrap()
    }

    #[test]
    fn enumerated_rows() {
        let p = build_allowed_pairs(&pattern(4, 2, 1, &[])).unwrap();
        assert_eq!(p.rows, vec![vec![0, 1], vec![0, 1, 2], vec![1, 2, 3], vec![2, 3]]);
        assert_eq!(p.pair_count(), 10);
        assert_eq!(attended_pair_count(&pattern(4, 2, 1, &[])).unwrap(), 10);
    }

    #[test]
    fn all_global_is_dense() {
        let p = pattern(3, 2, 1, &[0, 1, 2]);
        assert_eq!(build_allowed_pairs(&p).unwrap().pair_count(), 9);
        assert_eq!(attended_pair_count(&p).unwrap(), 9);
    }

    #[test]
    fn dilated_row() {
        let p = build_allowed_pairs(&pattern(8, 4, 2, &[])).unwrap();
        assert_eq!(p.rows[3], vec![1, 3, 5, 7]);
        assert_eq!(p.rows[0], vec![0, 2, 4]);
    }

    #[test]
    fn global_is_symmetric() {
        let p = build_allowed_pairs(&pattern(10, 2, 1, &[5])).unwrap();
        assert_eq!(p.rows[5], (0..10).collect::<Vec<_>>());
        for (i, row) in p.rows.iter().enumerate() {
            assert!(row.contains(&5), "row {i}");
            assert!(row.contains(&i));
        }
    }

    #[test]
    fn invalid_patterns() {
        assert!(AttentionPattern::new(4, 3, 1, []).is_err());
        assert!(AttentionPattern::new(4, 0, 1, []).is_err());
        assert!(AttentionPattern::new(4, 2, 0, []).is_err());
        assert!(AttentionPattern::new(4, 2, 1, [4]).is_err());
    }

    #[test]
    fn softmax_examples() {
        assert_eq!(masked_softmax(&[3.0f64, 9.0], &[false, true]).unwrap(), vec![0.0, 1.0]);
        let w = masked_softmax(&[0.7f64; 4], &[true, true, false, true]).unwrap();
        for &x in [w[0], w[1], w[3]].iter() {
            assert!((x - 1.0 / 3.0).abs() < 1e-15);
        }
        assert_eq!(w[2], 0.0);
        let w = masked_softmax(&[1.0f64, 2.0], &[true, true]).unwrap();
        assert!((w[0] - 0.26894).abs() < 1e-5 && (w[1] - 0.73106).abs() < 1e-5);
        assert!(masked_softmax(&[1.0f64], &[false]).is_err());
        // large scores stay finite
        let w = masked_softmax(&[1000.0f32, 1001.0], &[true, true]).unwrap();
        assert!(w.iter().all(|x| x.is_finite()));
    }

    fn random(n: usize, d: usize, rng: &mut impl Rng) -> Array2<f64> {
        Array2::from_shape_fn((n, d), |_| rng.random_range(-1.0..1.0))
    }

    #[test]
    fn ones_value_gives_ones() {
        let mut rng = rand::rngs::StdRng::seed_from_u64(1);
        let (q, k) = (random(9, 4, &mut rng), random(9, 4, &mut rng));
        let v = Array2::<f64>::ones((9, 4));
        let out = sparse_attention(q.view(), k.view(), v.view(), &pattern(9, 4, 2, &[3]), 0.5).unwrap();
        assert!(out.output.iter().all(|&x| (x - 1.0).abs() < 1e-12));
    }

    #[test]
    fn identity_mask_returns_values() {
        let mut rng = rand::rngs::StdRng::seed_from_u64(2);
        let (q, k, v) = (random(5, 3, &mut rng), random(5, 3, &mut rng), random(5, 3, &mut rng));
        let mask = Array2::from_shape_fn((5, 5), |(i, j)| i == j);
        let out = dense_reference_attention(q.view(), k.view(), v.view(), mask.view(), 1.0).unwrap();
        assert_eq!(out.output, v);
        let one = dense_reference_attention(
            q.slice(ndarray::s![..1, ..]),
            k.slice(ndarray::s![..1, ..]),
            v.slice(ndarray::s![..1, ..]),
            Array2::from_elem((1, 1), true).view(),
            1.0,
        )
        .unwrap();
        assert_eq!(one.output.row(0), v.row(0));
        let empty = Array2::from_elem((5, 5), false);
        assert!(dense_reference_attention(q.view(), k.view(), v.view(), empty.view(), 1.0).is_err());
    }

    #[test]
    fn shape_mismatch() {
        let a = Array2::<f64>::zeros((4, 2));
        let b = Array2::<f64>::zeros((3, 2));
        assert!(sparse_attention(a.view(), b.view(), a.view(), &pattern(4, 2, 1, &[]), 1.0).is_err());
    }

    #[test]
    fn saturated_sparse_equals_full_dense() {
        let mut rng = rand::rngs::StdRng::seed_from_u64(3);
        let (q, k, v) = (random(6, 4, &mut rng), random(6, 4, &mut rng), random(6, 4, &mut rng));
        let p = pattern(6, 2, 1, &[0, 1, 2, 3, 4, 5]);
        let s = sparse_attention(q.view(), k.view(), v.view(), &p, 0.5).unwrap();
        let d = dense_reference_attention(q.view(), k.view(), v.view(), Array2::from_elem((6, 6), true).view(), 0.5).unwrap();
        let diff = (&s.output - &d.output).mapv(f64::abs).fold(0.0f64, |a, &b| a.max(b));
        assert!(diff < 1e-12);
    }

    proptest! {
        #[test]
        fn sparse_matches_dense(
            n in 1usize..=32,
            half in 1usize..=4,
            d in 1usize..=3,
            globals in proptest::collection::vec(0usize..32, 0..4),
            seed in any::<u64>(),
        ) {
            let globals: Vec<usize> = globals.into_iter().filter(|&g| g < n).collect();
            let p = pattern(n, 2 * half, d, &globals);
            let mut rng = rand::rngs::StdRng::seed_from_u64(seed);
            let (q, k, v) = (random(n, 4, &mut rng), random(n, 4, &mut rng), random(n, 4, &mut rng));
            let pairs = build_allowed_pairs(&p).unwrap();
            let s = sparse_attention(q.view(), k.view(), v.view(), &p, 0.5).unwrap();
            let dn = dense_reference_attention(q.view(), k.view(), v.view(), pairs.to_mask().view(), 0.5).unwrap();
            let diff = (&s.output - &dn.output).mapv(f64::abs).fold(0.0f64, |a, &b| a.max(b));
            prop_assert!(diff < 1e-12);
            let dw = s.dense_weights();
            for (i, row) in pairs.rows.iter().enumerate() {
                let sum: f64 = dw.row(i).sum();
                prop_assert!((sum - 1.0).abs() < 1e-6);
                for j in 0..n {
                    if !row.contains(&j) {
                        prop_assert_eq!(dw[[i, j]], 0.0);
                    }
                }
            }
            // count agrees with materialization and respects the linear bound
            let count = attended_pair_count(&p).unwrap();
            prop_assert_eq!(count, pairs.pair_count());
            prop_assert!(count <= n * (2 * half + 1) + 2 * p.global_positions.len() * n);
        }

        #[test]
        fn global_order_is_irrelevant(mut globals in proptest::collection::vec(0usize..16, 0..5)) {
            let a = pattern(16, 4, 1, &globals);
            globals.reverse();
            let b = pattern(16, 4, 1, &globals);
            prop_assert_eq!(build_allowed_pairs(&a).unwrap(), build_allowed_pairs(&b).unwrap());
        }
    }
}
