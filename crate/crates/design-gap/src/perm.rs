//! Symmetric-group algebra and the r-parameterized metric on permutation
//! labels.
//!
//! Labels are elements of S_t in one-line notation. The overlap between two
//! labels is `r^(c(sigma tau^-1) - t)` where `c` counts disjoint cycles,
//! fixed points included, and `r > 1` is a (possibly non-integer) virtual
//! local dimension. With this normalization the diagonal is exactly 1; a
//! global per-site scale drops out of every projector and singular value, so
//! unit diagonal is the numerically safest choice.
//!
//! For `r < t` the metric is degenerate. All consumers go through the
//! Moore-Penrose pseudoinverse and an eigenvalue-cutoff support restriction,
//! which is what [`WeingartenMatrix`] and [`OrthoFrame`] provide.

use nalgebra::{DMatrix, DVector};
use thiserror::Error;

/// Largest copy count for which dense t! x t! metric work is allowed.
pub const MAX_DENSE_T: usize = 6;

/// Default eigenvalue threshold below which metric directions are discarded.
pub const DEFAULT_CUTOFF: f64 = 1e-12;

#[derive(Debug, Error)]
pub enum PermError {
    #[error("copy counts differ: {0} vs {1}")]
    MismatchedT(usize, usize),
    #[error("mapping {0:?} is not a bijection on its index range")]
    NotABijection(Vec<usize>),
    #[error("copy count t must be at least 1")]
    ZeroT,
    #[error("copy count t = {0} exceeds the dense-metric limit {MAX_DENSE_T}")]
    TTooLarge(usize),
    #[error("virtual local dimension must exceed 1, got {0}")]
    InvalidDimension(f64),
    #[error("cutoff must be positive, got {0}")]
    InvalidCutoff(f64),
    #[error("every metric eigenvalue fell below the cutoff {0}")]
    EmptySupport(f64),
}

/// A permutation of `t` copies, stored in one-line notation.
#[derive(Debug, Clone, PartialEq, Eq, Hash)]
pub struct Permutation {
    mapping: Vec<usize>,
}

impl Permutation {
    pub fn identity(t: usize) -> Self {
        Self {
            mapping: (0..t).collect(),
        }
    }

    /// Builds a permutation from one-line notation, checking bijectivity.
    pub fn from_one_line(mapping: Vec<usize>) -> Result<Self, PermError> {
        if mapping.is_empty() {
            return Err(PermError::ZeroT);
        }
        let t = mapping.len();
        let mut seen = vec![false; t];
        for &v in &mapping {
            if v >= t || seen[v] {
                return Err(PermError::NotABijection(mapping));
            }
            seen[v] = true;
        }
        Ok(Self { mapping })
    }

    /// The transposition swapping `a` and `b`.
    pub fn transposition(t: usize, a: usize, b: usize) -> Self {
        let mut mapping: Vec<usize> = (0..t).collect();
        mapping.swap(a, b);
        Self { mapping }
    }

    pub fn t(&self) -> usize {
        self.mapping.len()
    }

    pub fn apply(&self, i: usize) -> usize {
        self.mapping[i]
    }

    pub fn one_line(&self) -> &[usize] {
        &self.mapping
    }

    /// `self . other`: applies `other` first.
    pub fn compose(&self, other: &Self) -> Result<Self, PermError> {
        if self.t() != other.t() {
            return Err(PermError::MismatchedT(self.t(), other.t()));
        }
        let mapping = (0..self.t()).map(|i| self.mapping[other.mapping[i]]).collect();
        Ok(Self { mapping })
    }

    pub fn inverse(&self) -> Self {
        let mut mapping = vec![0; self.t()];
        for (i, &v) in self.mapping.iter().enumerate() {
            mapping[v] = i;
        }
        Self { mapping }
    }

    /// Number of disjoint cycles, fixed points included.
    pub fn cycle_count(&self) -> usize {
        let mut visited = vec![false; self.t()];
        let mut cycles = 0;
        for start in 0..self.t() {
            if visited[start] {
                continue;
            }
            cycles += 1;
            let mut i = start;
            while !visited[i] {
                visited[i] = true;
                i = self.mapping[i];
            }
        }
        cycles
    }

    /// All of S_t in lexicographic order of one-line notation.
    pub fn enumerate(t: usize) -> Vec<Permutation> {
        fn rec(out: &mut Vec<Permutation>, cur: &mut Vec<usize>, used: &mut [bool]) {
            let t = used.len();
            if cur.len() == t {
                out.push(Permutation { mapping: cur.clone() });
                return;
            }
            for v in 0..t {
                if !used[v] {
                    used[v] = true;
                    cur.push(v);
                    rec(out, cur, used);
                    cur.pop();
                    used[v] = false;
                }
            }
        }
        let mut out = Vec::new();
        rec(&mut out, &mut Vec::with_capacity(t), &mut vec![false; t]);
        out
    }
}

pub fn factorial(t: usize) -> usize {
    (1..=t).product()
}

fn check_t_r(t: usize, r: f64) -> Result<(), PermError> {
    if t == 0 {
        return Err(PermError::ZeroT);
    }
    if t > MAX_DENSE_T {
        return Err(PermError::TTooLarge(t));
    }
    if !(r > 1.0) {
        return Err(PermError::InvalidDimension(r));
    }
    Ok(())
}

/// The t! x t! overlap matrix of permutation labels at virtual dimension `r`.
#[derive(Debug, Clone)]
pub struct GramMatrix {
    t: usize,
    r: f64,
    entries: DMatrix<f64>,
}

impl GramMatrix {
    pub fn new(t: usize, r: f64) -> Result<Self, PermError> {
        check_t_r(t, r)?;
        let perms = Permutation::enumerate(t);
        let n = perms.len();
        let inverses: Vec<Permutation> = perms.iter().map(Permutation::inverse).collect();
        let mut entries = DMatrix::zeros(n, n);
        for i in 0..n {
            for j in 0..n {
                let c = perms[i].compose(&inverses[j]).expect("equal t").cycle_count();
                entries[(i, j)] = r.powi(c as i32 - t as i32);
            }
        }
        Ok(Self { t, r, entries })
    }

    pub fn t(&self) -> usize {
        self.t
    }

    pub fn r(&self) -> f64 {
        self.r
    }

    pub fn entries(&self) -> &DMatrix<f64> {
        &self.entries
    }

    pub fn dim(&self) -> usize {
        self.entries.nrows()
    }

    /// Numeric rank: eigenvalues above `cutoff`.
    pub fn rank(&self, cutoff: f64) -> usize {
        self.entries
            .clone()
            .symmetric_eigen()
            .eigenvalues
            .iter()
            .filter(|&&l| l > cutoff)
            .count()
    }
}

/// Moore-Penrose pseudoinverse of the label metric.
#[derive(Debug, Clone)]
pub struct WeingartenMatrix {
    t: usize,
    r: f64,
    entries: DMatrix<f64>,
    support_rank: usize,
}

impl WeingartenMatrix {
    pub fn new(t: usize, r: f64) -> Result<Self, PermError> {
        Self::from_gram(&GramMatrix::new(t, r)?, DEFAULT_CUTOFF)
    }

    pub fn from_gram(gram: &GramMatrix, cutoff: f64) -> Result<Self, PermError> {
        if !(cutoff > 0.0) {
            return Err(PermError::InvalidCutoff(cutoff));
        }
        let eig = gram.entries.clone().symmetric_eigen();
        let n = gram.dim();
        let mut entries = DMatrix::zeros(n, n);
        let mut support_rank = 0;
        for k in 0..n {
            // The metric is indefinite for non-integer r, so the pseudoinverse
            // must invert negative eigenvalues as well.
            let l = eig.eigenvalues[k];
            if l.abs() > cutoff {
                support_rank += 1;
                let v = eig.eigenvectors.column(k);
                for i in 0..n {
                    for j in 0..n {
                        entries[(i, j)] += v[i] * v[j] / l;
                    }
                }
            }
        }
        Ok(Self {
            t: gram.t,
            r: gram.r,
            entries,
            support_rank,
        })
    }

    pub fn t(&self) -> usize {
        self.t
    }

    pub fn r(&self) -> f64 {
        self.r
    }

    pub fn entries(&self) -> &DMatrix<f64> {
        &self.entries
    }

    pub fn support_rank(&self) -> usize {
        self.support_rank
    }
}

/// An orthonormalizing frame for the (possibly degenerate) label metric.
///
/// `frame` is the rank x t! map satisfying `frame . G . frame^T = I` on the
/// support. `embed` carries each label basis vector to its coordinates in the
/// orthonormal frame: `embed = frame . G`, so columns of `embed` have the
/// metric overlaps as their Euclidean inner products.
#[derive(Debug, Clone)]
pub struct OrthoFrame {
    t: usize,
    r: f64,
    cutoff: f64,
    frame: DMatrix<f64>,
    embed: DMatrix<f64>,
}

impl OrthoFrame {
    pub fn new(t: usize, r: f64, cutoff: f64) -> Result<Self, PermError> {
        if !(cutoff > 0.0) {
            return Err(PermError::InvalidCutoff(cutoff));
        }
        let gram = GramMatrix::new(t, r)?;
        let eig = gram.entries.clone().symmetric_eigen();
        let n = gram.dim();
        // Kept eigenpairs sorted by descending eigenvalue for determinism.
        let mut order: Vec<usize> = (0..n).filter(|&k| eig.eigenvalues[k] > cutoff).collect();
        order.sort_by(|&a, &b| {
            eig.eigenvalues[b]
                .partial_cmp(&eig.eigenvalues[a])
                .expect("finite eigenvalues")
        });
        if order.is_empty() {
            return Err(PermError::EmptySupport(cutoff));
        }
        let rank = order.len();
        let mut frame = DMatrix::zeros(rank, n);
        let mut embed = DMatrix::zeros(rank, n);
        for (row, &k) in order.iter().enumerate() {
            let l = eig.eigenvalues[k];
            let v = eig.eigenvectors.column(k);
            for j in 0..n {
                frame[(row, j)] = v[j] / l.sqrt();
                embed[(row, j)] = v[j] * l.sqrt();
            }
        }
        Ok(Self {
            t,
            r,
            cutoff,
            frame,
            embed,
        })
    }

    pub fn t(&self) -> usize {
        self.t
    }

    pub fn r(&self) -> f64 {
        self.r
    }

    pub fn cutoff(&self) -> f64 {
        self.cutoff
    }

    pub fn rank(&self) -> usize {
        self.frame.nrows()
    }

    pub fn label_dim(&self) -> usize {
        self.frame.ncols()
    }

    pub fn frame(&self) -> &DMatrix<f64> {
        &self.frame
    }

    pub fn embed(&self) -> &DMatrix<f64> {
        &self.embed
    }

    /// Orthonormal-frame coordinates of the label basis vector `sigma`.
    pub fn embed_label(&self, sigma: usize) -> DVector<f64> {
        self.embed.column(sigma).into_owned()
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_abs_diff_eq;
    use proptest::prelude::*;

    fn mat(rows: &[&[f64]]) -> DMatrix<f64> {
        DMatrix::from_fn(rows.len(), rows[0].len(), |i, j| rows[i][j])
    }

    #[test]
    fn identity_has_t_fixed_points() {
        assert_eq!(Permutation::identity(3).cycle_count(), 3);
    }

    #[test]
    fn swap_is_a_single_cycle() {
        assert_eq!(Permutation::transposition(2, 0, 1).cycle_count(), 1);
    }

    #[test]
    fn swap_is_an_involution() {
        let s = Permutation::transposition(2, 0, 1);
        assert_eq!(s.compose(&s).unwrap(), Permutation::identity(2));
    }

    #[test]
    fn compose_rejects_mismatched_t() {
        let a = Permutation::identity(2);
        let b = Permutation::identity(3);
        assert!(matches!(a.compose(&b), Err(PermError::MismatchedT(2, 3))));
    }

    #[test]
    fn enumerate_is_lexicographic() {
        let perms = Permutation::enumerate(3);
        assert_eq!(perms.len(), 6);
        assert_eq!(perms[0].one_line(), &[0, 1, 2]);
        assert_eq!(perms[1].one_line(), &[0, 2, 1]);
        assert_eq!(perms[5].one_line(), &[2, 1, 0]);
        let mut lines: Vec<Vec<usize>> = perms.iter().map(|p| p.one_line().to_vec()).collect();
        let sorted = {
            let mut s = lines.clone();
            s.sort();
            s
        };
        assert_eq!(lines, sorted);
        lines.dedup();
        assert_eq!(lines.len(), 6);
    }

    #[test]
    fn gram_2_2_matches_hand_value() {
        let g = GramMatrix::new(2, 2.0).unwrap();
        let expected = mat(&[&[1.0, 0.5], &[0.5, 1.0]]);
        assert_abs_diff_eq!(g.entries(), &expected, epsilon = 1e-15);
    }

    #[test]
    fn gram_2_4_matches_hand_value() {
        let g = GramMatrix::new(2, 4.0).unwrap();
        let expected = mat(&[&[1.0, 0.25], &[0.25, 1.0]]);
        assert_abs_diff_eq!(g.entries(), &expected, epsilon = 1e-15);
    }

    #[test]
    fn gram_rejects_degenerate_dimension() {
        assert!(matches!(GramMatrix::new(2, 1.0), Err(PermError::InvalidDimension(_))));
        assert!(matches!(GramMatrix::new(2, 0.5), Err(PermError::InvalidDimension(_))));
    }

    #[test]
    fn gram_3_2_has_one_null_direction() {
        // The antisymmetrizer over three copies of a two-dimensional space
        // vanishes, leaving rank 5 out of 3! = 6.
        let g = GramMatrix::new(3, 2.0).unwrap();
        assert_eq!(g.rank(1e-12), 5);
    }

    #[test]
    fn gram_full_rank_for_integer_r_at_least_t() {
        for t in 1..=4 {
            for r in t.max(2)..=5 {
                let g = GramMatrix::new(t, r as f64).unwrap();
                assert_eq!(g.rank(1e-12), factorial(t), "t={t} r={r}");
            }
        }
    }

    #[test]
    fn gram_symmetry_and_right_invariance() {
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(7);
        use rand::prelude::*;
        for t in 2..=5 {
            let perms = Permutation::enumerate(t);
            for &r in &[2.0, 3.0, 4.0, 2.5] {
                let g = GramMatrix::new(t, r).unwrap();
                assert_abs_diff_eq!(g.entries(), &g.entries().transpose(), epsilon = 1e-14);
                for _ in 0..50 {
                    let si = rng.random_range(0..perms.len());
                    let ti = rng.random_range(0..perms.len());
                    let pi = &perms[rng.random_range(0..perms.len())];
                    let sp = perms[si].compose(pi).unwrap();
                    let tp = perms[ti].compose(pi).unwrap();
                    let idx = |p: &Permutation| perms.iter().position(|q| q == p).unwrap();
                    assert_abs_diff_eq!(
                        g.entries()[(si, ti)],
                        g.entries()[(idx(&sp), idx(&tp))],
                        epsilon = 1e-14
                    );
                }
            }
        }
    }

    #[test]
    fn weingarten_2_2_matches_inverse() {
        let w = WeingartenMatrix::new(2, 2.0).unwrap();
        let expected = mat(&[&[4.0 / 3.0, -2.0 / 3.0], &[-2.0 / 3.0, 4.0 / 3.0]]);
        assert_abs_diff_eq!(w.entries(), &expected, epsilon = 1e-12);
        assert_eq!(w.support_rank(), 2);
    }

    #[test]
    fn weingarten_2_4_matches_inverse() {
        let w = WeingartenMatrix::new(2, 4.0).unwrap();
        let expected = mat(&[&[16.0 / 15.0, -4.0 / 15.0], &[-4.0 / 15.0, 16.0 / 15.0]]);
        assert_abs_diff_eq!(w.entries(), &expected, epsilon = 1e-12);
    }

    #[test]
    fn pseudoinverse_axioms_hold() {
        for t in 1..=4 {
            for &r in &[2.0, 3.0, 2.5] {
                let g = GramMatrix::new(t, r).unwrap();
                let w = WeingartenMatrix::from_gram(&g, DEFAULT_CUTOFF).unwrap();
                let gm = g.entries();
                let wm = w.entries();
                let gwg = gm * wm * gm;
                let wgw = wm * gm * wm;
                assert_abs_diff_eq!(&gwg, gm, epsilon = 1e-10);
                assert_abs_diff_eq!(&wgw, wm, epsilon = 1e-10);
                let gw = gm * wm;
                let wg = wm * gm;
                assert_abs_diff_eq!(&gw, &gw.transpose(), epsilon = 1e-10);
                assert_abs_diff_eq!(&wg, &wg.transpose(), epsilon = 1e-10);
            }
        }
    }

    #[test]
    fn frame_orthonormalizes_the_metric() {
        for (t, r, rank) in [(2usize, 2.0, 2usize), (3, 2.0, 5), (2, 4.0, 2), (3, 2.5, 6)] {
            let f = OrthoFrame::new(t, r, 1e-12).unwrap();
            assert_eq!(f.rank(), rank, "t={t} r={r}");
            let g = GramMatrix::new(t, r).unwrap();
            let prod = f.frame() * g.entries() * f.frame().transpose();
            assert_abs_diff_eq!(&prod, &DMatrix::identity(rank, rank), epsilon = 1e-12);
            // embed carries the metric to Euclidean inner products
            let overlaps = f.embed().transpose() * f.embed();
            assert_abs_diff_eq!(&overlaps, g.entries(), epsilon = 1e-12);
        }
    }

    #[test]
    fn frame_rejects_bad_cutoff() {
        assert!(matches!(OrthoFrame::new(2, 2.0, 0.0), Err(PermError::InvalidCutoff(_))));
    }

    proptest! {
        #[test]
        fn inverse_composes_to_identity(t in 1usize..6, seed in any::<u64>()) {
            use rand::prelude::*;
            let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(seed);
            let mut line: Vec<usize> = (0..t).collect();
            line.shuffle(&mut rng);
            let p = Permutation::from_one_line(line).unwrap();
            prop_assert_eq!(p.compose(&p.inverse()).unwrap(), Permutation::identity(t));
            prop_assert_eq!(p.inverse().compose(&p).unwrap(), Permutation::identity(t));
        }

        #[test]
        fn composition_is_associative(t in 1usize..5, s1 in any::<u64>(), s2 in any::<u64>(), s3 in any::<u64>()) {
            use rand::prelude::*;
            let sample = |seed: u64| {
                let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(seed);
                let mut line: Vec<usize> = (0..t).collect();
                line.shuffle(&mut rng);
                Permutation::from_one_line(line).unwrap()
            };
            let (a, b, c) = (sample(s1), sample(s2), sample(s3));
            let left = a.compose(&b).unwrap().compose(&c).unwrap();
            let right = a.compose(&b.compose(&c).unwrap()).unwrap();
            prop_assert_eq!(left, right);
        }
    }
}
