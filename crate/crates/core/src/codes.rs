//! Rank-ordered N-of-M codes.
//!
//! A burst of `N` spikes out of a population of `M` neurons where the firing
//! order carries information. The dense representation is a significance
//! vector: the neuron firing at rank `k` receives weight `alpha^k`, every
//! silent neuron receives zero. Similarity between codes is the cosine of
//! their significance vectors.

use rand::Rng;

use crate::error::{Error, Result};

/// Population size, burst size and significance ratio of a code space.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct CodeParams {
    m_total: usize,
    n_active: usize,
    alpha: f64,
}

impl CodeParams {
    pub fn new(m_total: usize, n_active: usize, alpha: f64) -> Result<Self> {
        if n_active == 0 || n_active > m_total {
            return Err(Error::Parameter(format!(
                "need 1 <= n_active <= m_total, got n_active={n_active}, m_total={m_total}"
            )));
        }
        if !(alpha > 0.0 && alpha < 1.0) {
            return Err(Error::Parameter(format!("alpha must lie in (0, 1), got {alpha}")));
        }
        Ok(Self {
            m_total,
            n_active,
            alpha,
        })
    }

    pub fn m_total(&self) -> usize {
        self.m_total
    }

    pub fn n_active(&self) -> usize {
        self.n_active
    }

    pub fn alpha(&self) -> f64 {
        self.alpha
    }

    /// Squared L2 norm shared by every canonical significance vector,
    /// `sum_k alpha^(2k)` accumulated in rank order.
    pub fn canonical_norm_sq(&self) -> f64 {
        (0..self.n_active).map(|k| self.alpha.powi(2 * k as i32)).sum()
    }
}

/// Ordered list of distinct firing neurons, earliest first.
#[derive(Debug, Clone, PartialEq)]
pub struct RankOrderCode {
    params: CodeParams,
    firing_order: Vec<usize>,
}

impl RankOrderCode {
    pub fn new(params: CodeParams, firing_order: Vec<usize>) -> Result<Self> {
        if firing_order.len() != params.n_active {
            return Err(Error::Parameter(format!(
                "firing order has {} entries, code expects {}",
                firing_order.len(),
                params.n_active
            )));
        }
        let mut seen = vec![false; params.m_total];
        for &i in &firing_order {
            if i >= params.m_total {
                return Err(Error::Parameter(format!(
                    "neuron index {i} outside population of {}",
                    params.m_total
                )));
            }
            if seen[i] {
                return Err(Error::Parameter(format!("neuron {i} fires twice")));
            }
            seen[i] = true;
        }
        Ok(Self { params, firing_order })
    }

    /// Uniformly random code: a random N-subset in random order.
    pub fn random<R: Rng + ?Sized>(params: CodeParams, rng: &mut R) -> Self {
        let firing_order = rand::seq::index::sample(rng, params.m_total, params.n_active).into_vec();
        Self { params, firing_order }
    }

    pub fn params(&self) -> CodeParams {
        self.params
    }

    pub fn firing_order(&self) -> &[usize] {
        &self.firing_order
    }

    pub fn to_significance(&self) -> SignificanceVector {
        to_significance(self)
    }
}

/// Dense non-negative vector over the whole population.
#[derive(Debug, Clone, PartialEq)]
pub struct SignificanceVector {
    values: Vec<f64>,
}

impl SignificanceVector {
    /// Wraps arbitrary non-negative values. Canonical vectors come from
    /// [`to_significance`]; readouts and blends may be non-canonical.
    pub fn from_values(values: Vec<f64>) -> Result<Self> {
        if let Some(v) = values.iter().find(|v| !(v.is_finite() && **v >= 0.0)) {
            return Err(Error::Parameter(format!(
                "significance values must be finite and non-negative, found {v}"
            )));
        }
        Ok(Self { values })
    }

    pub fn zeros(len: usize) -> Self {
        Self { values: vec![0.0; len] }
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }

    pub fn is_zero(&self) -> bool {
        self.values.iter().all(|&v| v == 0.0)
    }

    pub fn norm_sq(&self) -> f64 {
        self.values.iter().map(|v| v * v).sum()
    }

    /// True when the vector holds exactly the weights `alpha^0..alpha^(N-1)`,
    /// each once, on N distinct neurons.
    pub fn is_canonical(&self, params: &CodeParams) -> bool {
        if self.values.len() != params.m_total {
            return false;
        }
        let mut nz: Vec<f64> = self.values.iter().copied().filter(|&v| v != 0.0).collect();
        if nz.len() != params.n_active {
            return false;
        }
        nz.sort_by(|a, b| b.total_cmp(a));
        nz.iter().enumerate().all(|(k, &v)| v == params.alpha.powi(k as i32))
    }
}

/// Places `alpha^k` on the neuron firing at rank `k`.
pub fn to_significance(code: &RankOrderCode) -> SignificanceVector {
    let mut values = vec![0.0; code.params.m_total];
    for (k, &i) in code.firing_order.iter().enumerate() {
        values[i] = code.params.alpha.powi(k as i32);
    }
    SignificanceVector { values }
}

/// Normalised dot product of two significance vectors.
pub fn cosine_sim(a: &SignificanceVector, b: &SignificanceVector) -> Result<f64> {
    cosine(a.values(), b.values())
}

/// Cosine similarity of two dense real vectors.
pub fn cosine(a: &[f64], b: &[f64]) -> Result<f64> {
    if a.len() != b.len() {
        return Err(Error::Dimension {
            op: "cosine",
            expected: a.len(),
            got: b.len(),
        });
    }
    let (mut dot, mut na, mut nb) = (0.0, 0.0, 0.0);
    for (x, y) in a.iter().zip(b) {
        dot += x * y;
        na += x * x;
        nb += y * y;
    }
    if na == 0.0 || nb == 0.0 {
        return Err(Error::Degenerate("cosine similarity of a zero vector".into()));
    }
    Ok(dot / (na * nb).sqrt())
}

/// Indices of the `n` largest entries of `v`, largest first. Equal values
/// resolve to the lower index.
pub fn top_n(v: &[f64], n: usize) -> Result<Vec<usize>> {
    if n > v.len() {
        return Err(Error::Parameter(format!(
            "cannot select {n} components from a vector of length {}",
            v.len()
        )));
    }
    if v.iter().any(|x| x.is_nan()) {
        return Err(Error::Degenerate("NaN component in nofm input".into()));
    }
    let mut idx: Vec<usize> = (0..v.len()).collect();
    idx.sort_by(|&a, &b| v[b].total_cmp(&v[a]).then(a.cmp(&b)));
    idx.truncate(n);
    Ok(idx)
}

/// N-of-M selection: the `n` strongest components become a rank-order code.
pub fn nofm(v: &[f64], n: usize, params: CodeParams) -> Result<RankOrderCode> {
    let firing_order = top_n(v, n)?;
    if v.len() != params.m_total {
        return Err(Error::Dimension {
            op: "nofm",
            expected: params.m_total,
            got: v.len(),
        });
    }
    let params = CodeParams::new(params.m_total, n, params.alpha)?;
    Ok(RankOrderCode { params, firing_order })
}

fn check_info_args(n: usize, m: usize) -> Result<()> {
    if n == 0 || n > m {
        return Err(Error::Parameter(format!(
            "information content needs 1 <= n <= m, got n={n}, m={m}"
        )));
    }
    Ok(())
}

/// `log2(M! / (M-N)!)`: bits carried by an ordered choice of N of M.
pub fn info_bits_ordered(n: usize, m: usize) -> Result<f64> {
    check_info_args(n, m)?;
    Ok(((m - n + 1)..=m).map(|k| (k as f64).log2()).sum())
}

/// `log2(C(M, N))`: bits carried by an unordered choice of N of M.
pub fn info_bits_unordered(n: usize, m: usize) -> Result<f64> {
    check_info_args(n, m)?;
    // C(M,N) = prod_{k=1..N} (M-N+k)/k, with the smaller of N and M-N terms.
    let r = n.min(m - n);
    Ok((1..=r).map(|k| ((m - r + k) as f64).log2() - (k as f64).log2()).sum())
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn p(m: usize, n: usize, a: f64) -> CodeParams {
        CodeParams::new(m, n, a).unwrap()
    }

    #[test]
    fn params_reject_bad_values() {
        assert!(CodeParams::new(4, 0, 0.5).is_err());
        assert!(CodeParams::new(4, 5, 0.5).is_err());
        assert!(CodeParams::new(4, 2, 1.0).is_err());
        assert!(CodeParams::new(4, 2, 0.0).is_err());
        assert!(CodeParams::new(4, 4, 0.5).is_ok());
    }

    #[test]
    fn code_rejects_duplicates_and_out_of_range() {
        let params = p(4, 2, 0.5);
        assert!(RankOrderCode::new(params, vec![1, 1]).is_err());
        assert!(RankOrderCode::new(params, vec![1, 4]).is_err());
        assert!(RankOrderCode::new(params, vec![1]).is_err());
    }

    #[test]
    fn significance_small_cases() {
        let c = RankOrderCode::new(p(4, 2, 0.5), vec![2, 0]).unwrap();
        assert_eq!(to_significance(&c).values(), &[0.5, 0.0, 1.0, 0.0]);
        let c = RankOrderCode::new(p(3, 1, 0.9), vec![1]).unwrap();
        assert_eq!(to_significance(&c).values(), &[0.0, 1.0, 0.0]);
    }

    #[test]
    fn significance_norm_matches_geometric_sum() {
        let params = p(256, 11, 0.9);
        let mut rng = ChaCha8Rng::seed_from_u64(7);
        let s = RankOrderCode::random(params, &mut rng).to_significance();
        let closed = (1.0 - 0.9f64.powi(22)) / (1.0 - 0.81);
        let direct: f64 = (0..11).map(|k| 0.9f64.powi(2 * k)).sum();
        assert!((s.norm_sq() - closed).abs() < 1e-12);
        assert!((direct - closed).abs() < 1e-12);
        assert!(s.is_canonical(&params));
    }

    #[test]
    fn cosine_small_cases() {
        let params = p(4, 2, 0.5);
        let a = RankOrderCode::new(params, vec![0, 1]).unwrap().to_significance();
        let b = RankOrderCode::new(params, vec![1, 0]).unwrap().to_significance();
        let c = RankOrderCode::new(params, vec![2, 3]).unwrap().to_significance();
        assert_eq!(cosine_sim(&a, &a).unwrap(), 1.0);
        assert_eq!(cosine_sim(&a, &c).unwrap(), 0.0);
        assert!((cosine_sim(&a, &b).unwrap() - 0.8).abs() < 1e-15);
        assert!(matches!(
            cosine_sim(&a, &SignificanceVector::zeros(4)),
            Err(Error::Degenerate(_))
        ));
    }

    #[test]
    fn nofm_small_cases() {
        let params = p(4, 2, 0.5);
        let c = nofm(&[0.1, 0.9, 0.4, 0.7], 2, params).unwrap();
        assert_eq!(c.firing_order(), &[1, 3]);
        let c = nofm(&[0.5, 0.5, 0.0], 1, p(3, 1, 0.5)).unwrap();
        assert_eq!(c.firing_order(), &[0]);
        assert!(nofm(&[0.1, 0.2], 3, params).is_err());
    }

    #[test]
    fn nofm_full_selection_is_sorting_permutation() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let v: Vec<f64> = (0..16).map(|_| rng.random::<f64>()).collect();
        let c = nofm(&v, 16, p(16, 16, 0.5)).unwrap();
        let mut reference: Vec<(f64, usize)> = v.iter().copied().zip(0..).collect();
        reference.sort_by(|a, b| b.0.partial_cmp(&a.0).unwrap());
        let expected: Vec<usize> = reference.into_iter().map(|(_, i)| i).collect();
        assert_eq!(c.firing_order(), expected.as_slice());
    }

    /// Counts ordered and unordered selections by direct enumeration.
    fn enumerate_selections(n: usize, m: usize) -> (usize, usize) {
        fn rec(n: usize, m: usize, used: &mut Vec<bool>, depth: usize, ordered: &mut usize) {
            if depth == n {
                *ordered += 1;
                return;
            }
            for i in 0..m {
                if !used[i] {
                    used[i] = true;
                    rec(n, m, used, depth + 1, ordered);
                    used[i] = false;
                }
            }
        }
        let mut ordered = 0;
        rec(n, m, &mut vec![false; m], 0, &mut ordered);
        let unordered = (0u32..(1 << m)).filter(|s| s.count_ones() as usize == n).count();
        (ordered, unordered)
    }

    #[test]
    fn info_bits_match_enumeration() {
        for m in 1..=7 {
            for n in 1..=m {
                let (o, u) = enumerate_selections(n, m);
                assert!((info_bits_ordered(n, m).unwrap() - (o as f64).log2()).abs() < 1e-12);
                assert!((info_bits_unordered(n, m).unwrap() - (u as f64).log2()).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn info_bits_edge_values() {
        assert_eq!(info_bits_ordered(1, 8).unwrap(), 3.0);
        assert_eq!(info_bits_unordered(1, 8).unwrap(), 3.0);
        assert!((info_bits_ordered(2, 4).unwrap() - 12f64.log2()).abs() < 1e-12);
        assert!((info_bits_unordered(2, 4).unwrap() - 6f64.log2()).abs() < 1e-12);
        assert_eq!(info_bits_unordered(9, 9).unwrap(), 0.0);
        assert!(info_bits_ordered(5, 4).is_err());
        assert!(info_bits_unordered(0, 4).is_err());
    }

    #[test]
    fn large_population_does_not_overflow() {
        let o = info_bits_ordered(255, 256).unwrap();
        let u = info_bits_unordered(255, 256).unwrap();
        assert!(o.is_finite());
        assert!((u - 8.0).abs() < 1e-12);
        // log2(256!) is about 1683.9, so the ratio is about 210.
        assert!((o / u - 210.5).abs() < 0.5, "ratio {}", o / u);
    }

    #[test]
    fn ordered_dominates_unordered_exhaustively() {
        for m in 1..=32 {
            for n in 1..=m {
                let o = info_bits_ordered(n, m).unwrap();
                let u = info_bits_unordered(n, m).unwrap();
                if n == 1 {
                    assert!((o - u).abs() < 1e-12);
                } else {
                    assert!(o > u, "n={n} m={m}");
                }
            }
        }
    }

    fn all_codes(params: CodeParams) -> Vec<RankOrderCode> {
        let m = params.m_total();
        let mut out = Vec::new();
        for a in 0..m {
            for b in 0..m {
                for c in 0..m {
                    if a != b && b != c && a != c {
                        out.push(RankOrderCode::new(params, vec![a, b, c]).unwrap());
                    }
                }
            }
        }
        out
    }

    #[test]
    fn earlier_shared_ranks_raise_similarity() {
        // Moving a shared neuron ahead of a non-shared one always helps.
        let params = p(8, 3, 0.5);
        let codes = all_codes(params);
        assert_eq!(codes.len(), 336);
        let sigs: Vec<_> = codes.iter().map(|c| c.to_significance()).collect();
        let mut checked = 0usize;
        for a in &codes {
            let sa = a.to_significance();
            for (b, sb) in codes.iter().zip(&sigs) {
                let base = cosine_sim(&sa, sb).unwrap();
                let order = a.firing_order();
                for early in 0..3 {
                    for late in (early + 1)..3 {
                        let shared_late = b.firing_order().contains(&order[late]);
                        let shared_early = b.firing_order().contains(&order[early]);
                        if shared_late && !shared_early {
                            let mut swapped = order.to_vec();
                            swapped.swap(early, late);
                            let s2 = RankOrderCode::new(params, swapped).unwrap().to_significance();
                            assert!(cosine_sim(&s2, sb).unwrap() > base);
                            checked += 1;
                        }
                    }
                }
            }
        }
        assert!(checked > 10_000);
    }
}
