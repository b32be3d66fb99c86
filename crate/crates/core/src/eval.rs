//! Parameter accounting, clustering agreement, neighbor preservation and
//! code-group inspection.

use std::collections::{BTreeMap, HashMap};
use std::fmt;
use std::hash::Hash;

use crate::codec::{render_code, CodeBook, KdSpec};
use crate::composer::ComposerVariant;
use crate::error::{Error, Result};
use crate::numerics::{cosine, squared_distance, Matrix};

/// Embedding parameter counts of a KD model against a full `N × d` table.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct ParamCount {
    pub code_embedding_params: u64,
    pub composer_params: u64,
    pub total: u64,
    pub conventional_baseline: u64,
}

/// Code tables hold `D·K·d′` parameters. The linear composer adds `H`
/// (`d′·d`); the recurrent one adds four `d′ × d′` recurrences, four biases
/// and `H`.
pub fn param_count(spec: KdSpec, code_width: u64, out_dim: u64, variant: ComposerVariant) -> ParamCount {
    let (k, d, n) = (spec.k() as u64, spec.d() as u64, spec.n() as u64);
    let code_embedding_params = d * k * code_width;
    let composer_params = match variant {
        ComposerVariant::Linear => code_width * out_dim,
        ComposerVariant::Lstm => 4 * (code_width * code_width + code_width) + code_width * out_dim,
    };
    ParamCount {
        code_embedding_params,
        composer_params,
        total: code_embedding_params + composer_params,
        conventional_baseline: n * out_dim,
    }
}

/// KD parameters over the conventional table size.
pub fn compression_rate(count: &ParamCount, include_composer: bool) -> f64 {
    let kd = if include_composer {
        count.total
    } else {
        count.code_embedding_params
    };
    kd as f64 / count.conventional_baseline as f64
}

/// Normalizer for mutual information.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Default)]
pub enum NmiNorm {
    #[default]
    Geometric,
    Arithmetic,
    Max,
}

impl std::str::FromStr for NmiNorm {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "geometric" => Ok(NmiNorm::Geometric),
            "arithmetic" => Ok(NmiNorm::Arithmetic),
            "max" => Ok(NmiNorm::Max),
            other => Err(Error::InvalidArgument(format!(
                "unknown NMI normalization {other:?} (expected geometric|arithmetic|max)"
            ))),
        }
    }
}

impl fmt::Display for NmiNorm {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            NmiNorm::Geometric => "geometric",
            NmiNorm::Arithmetic => "arithmetic",
            NmiNorm::Max => "max",
        })
    }
}

fn entropy(counts: impl Iterator<Item = usize>, n: f64) -> f64 {
    counts
        .filter(|&c| c > 0)
        .map(|c| {
            let p = c as f64 / n;
            -p * p.ln()
        })
        .sum()
}

/// Normalized mutual information with the geometric-mean normalizer.
pub fn nmi<A: Eq + Hash, B: Eq + Hash>(a: &[A], b: &[B]) -> Result<f64> {
    nmi_with(a, b, NmiNorm::Geometric)
}

/// Normalized mutual information from the exact contingency table.
///
/// Two constant labelings score 1; a constant labeling against a
/// non-constant one scores 0.
pub fn nmi_with<A: Eq + Hash, B: Eq + Hash>(a: &[A], b: &[B], norm: NmiNorm) -> Result<f64> {
    if a.len() != b.len() {
        return Err(Error::ShapeMismatch(format!(
            "label vectors of length {} and {}",
            a.len(),
            b.len()
        )));
    }
    if a.is_empty() {
        return Err(Error::InvalidArgument("NMI of empty labelings".into()));
    }
    let n = a.len() as f64;
    let ia = dense_ids(a);
    let ib = dense_ids(b);
    let ka = ia.iter().max().unwrap() + 1;
    let kb = ib.iter().max().unwrap() + 1;
    let mut row = vec![0usize; ka];
    let mut col = vec![0usize; kb];
    let mut joint: HashMap<(usize, usize), usize> = HashMap::new();
    for (&x, &y) in ia.iter().zip(&ib) {
        row[x] += 1;
        col[y] += 1;
        *joint.entry((x, y)).or_insert(0) += 1;
    }
    let ha = entropy(row.iter().copied(), n);
    let hb = entropy(col.iter().copied(), n);
    if ha == 0.0 && hb == 0.0 {
        return Ok(1.0);
    }
    if ha == 0.0 || hb == 0.0 {
        return Ok(0.0);
    }
    // Sum in a fixed order so that nmi(a, b) and nmi(b, a) agree bitwise.
    let mut cells: Vec<(usize, usize, usize)> = joint.into_iter().map(|((x, y), c)| (c, row[x].min(col[y]), row[x].max(col[y]))).collect();
    cells.sort_unstable();
    let mi: f64 = cells
        .iter()
        .map(|&(c, r1, r2)| {
            let p = c as f64 / n;
            p * ((c as f64 * n) / (r1 as f64 * r2 as f64)).ln()
        })
        .sum();
    let denom = match norm {
        NmiNorm::Geometric => (ha * hb).sqrt(),
        NmiNorm::Arithmetic => 0.5 * (ha + hb),
        NmiNorm::Max => ha.max(hb),
    };
    Ok((mi / denom).clamp(0.0, 1.0))
}

fn dense_ids<T: Eq + Hash>(xs: &[T]) -> Vec<usize> {
    let mut map: HashMap<&T, usize> = HashMap::new();
    xs.iter()
        .map(|x| {
            let next = map.len();
            *map.entry(x).or_insert(next)
        })
        .collect()
}

/// Similarity used to rank neighbors.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Default)]
pub enum Similarity {
    #[default]
    Cosine,
    /// Negative squared Euclidean distance.
    Euclidean,
}

fn top_k(data: &Matrix, i: usize, k: usize, sim: Similarity) -> Vec<usize> {
    let q = data.row(i);
    let mut scored: Vec<(f64, usize)> = (0..data.rows())
        .filter(|&j| j != i)
        .map(|j| {
            let s = match sim {
                Similarity::Cosine => cosine(q, data.row(j)),
                Similarity::Euclidean => -squared_distance(q, data.row(j)),
            };
            (s, j)
        })
        .collect();
    // Descending similarity, ties by index.
    let order = |a: &(f64, usize), b: &(f64, usize)| b.0.total_cmp(&a.0).then(a.1.cmp(&b.1));
    if k < scored.len() {
        scored.select_nth_unstable_by(k, order);
        scored.truncate(k);
    }
    scored.sort_by(order);
    scored.into_iter().map(|(_, j)| j).collect()
}

/// Mean over symbols of the overlap between the top-`k` cosine neighbors in
/// `original` and in `reconstructed`, divided by `k`.
pub fn neighbor_preservation(original: &Matrix, reconstructed: &Matrix, k: usize) -> Result<f64> {
    neighbor_preservation_with(original, reconstructed, k, Similarity::Cosine)
}

pub fn neighbor_preservation_with(original: &Matrix, reconstructed: &Matrix, k: usize, sim: Similarity) -> Result<f64> {
    if original.rows() != reconstructed.rows() || original.cols() != reconstructed.cols() {
        return Err(Error::ShapeMismatch(format!(
            "original {:?} vs reconstructed {:?}",
            original.shape(),
            reconstructed.shape()
        )));
    }
    let n = original.rows();
    if k == 0 || k >= n {
        return Err(Error::InvalidArgument(format!("need 0 < k < N, got k = {k}, N = {n}")));
    }
    let mut total = 0.0;
    for i in 0..n {
        let a = top_k(original, i, k, sim);
        let b = top_k(reconstructed, i, k, sim);
        let shared = a.iter().filter(|j| b.contains(j)).count();
        total += shared as f64 / k as f64;
    }
    Ok(total / n as f64)
}

/// Symbols grouped by identical code.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct CodeGroup {
    pub code: Vec<usize>,
    pub labels: Vec<String>,
}

impl CodeGroup {
    pub fn rendered_code(&self) -> String {
        render_code(&self.code)
    }
}

/// Groups ordered by size (largest first), then by code.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct CodeGroupReport {
    pub groups: Vec<CodeGroup>,
}

impl CodeGroupReport {
    pub fn total_symbols(&self) -> usize {
        self.groups.iter().map(|g| g.labels.len()).sum()
    }

    /// Tab-separated listing: code, group size, space-joined labels.
    pub fn render(&self, min_group_size: usize) -> String {
        let mut out = String::new();
        for g in self.groups.iter().filter(|g| g.labels.len() >= min_group_size) {
            out.push_str(&format!("{}\t{}\t{}\n", g.rendered_code(), g.labels.len(), g.labels.join(" ")));
        }
        out
    }
}

pub fn code_groups(codebook: &CodeBook, labels: &[String]) -> Result<CodeGroupReport> {
    if labels.len() != codebook.len() {
        return Err(Error::ShapeMismatch(format!(
            "{} labels for {} symbols",
            labels.len(),
            codebook.len()
        )));
    }
    let mut map: BTreeMap<&[usize], Vec<String>> = BTreeMap::new();
    for (code, label) in codebook.codes().zip(labels) {
        map.entry(code).or_default().push(label.clone());
    }
    let mut groups: Vec<CodeGroup> = map
        .into_iter()
        .map(|(code, labels)| CodeGroup {
            code: code.to_vec(),
            labels,
        })
        .collect();
    // Stable sort keeps lexicographic code order within equal sizes.
    groups.sort_by_key(|g| std::cmp::Reverse(g.labels.len()));
    Ok(CodeGroupReport { groups })
}

/// Symbol indices grouped by identical code.
pub fn group_indices(codebook: &CodeBook) -> Vec<Vec<usize>> {
    let mut map: BTreeMap<&[usize], Vec<usize>> = BTreeMap::new();
    for (i, code) in codebook.codes().enumerate() {
        map.entry(code).or_default().push(i);
    }
    map.into_values().collect()
}

/// Mean cosine similarity over all unordered pairs of distinct rows.
pub fn mean_pairwise_cosine(data: &Matrix) -> f64 {
    let n = data.rows();
    let mut total = 0.0;
    let mut pairs = 0usize;
    for i in 0..n {
        for j in i + 1..n {
            total += cosine(data.row(i), data.row(j));
            pairs += 1;
        }
    }
    if pairs == 0 {
        0.0
    } else {
        total / pairs as f64
    }
}

/// Mean cosine similarity over pairs of symbols sharing a code. `None` when
/// no code is shared.
pub fn mean_intra_group_cosine(data: &Matrix, codebook: &CodeBook) -> Option<f64> {
    let mut total = 0.0;
    let mut pairs = 0usize;
    for group in group_indices(codebook) {
        for (a, &i) in group.iter().enumerate() {
            for &j in &group[a + 1..] {
                total += cosine(data.row(i), data.row(j));
                pairs += 1;
            }
        }
    }
    (pairs > 0).then(|| total / pairs as f64)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::numerics::Rng;

    #[test]
    fn param_count_examples() {
        let spec = KdSpec::new(50, 10, 10_000).unwrap();
        let pc = param_count(spec, 200, 200, ComposerVariant::Linear);
        assert_eq!(pc.conventional_baseline, 2_000_000);
        assert_eq!(pc.code_embedding_params, 100_000);
        assert_eq!(pc.composer_params, 40_000);
        assert_eq!(pc.total, 140_000);
        assert_eq!(compression_rate(&pc, false), 0.05);

        let spec = KdSpec::new(2, 1, 2).unwrap();
        assert_eq!(param_count(spec, 3, 1, ComposerVariant::Linear).code_embedding_params, 6);

        let spec = KdSpec::new(50, 10, 10_000).unwrap();
        let lstm = param_count(spec, 200, 200, ComposerVariant::Lstm);
        assert_eq!(lstm.composer_params, 4 * (200 * 200 + 200) + 200 * 200);
        assert_eq!(lstm.total - pc.total, 4 * (200 * 200 + 200));
    }

    #[test]
    fn lstm_count_matches_parameter_enumeration() {
        use crate::composer::ComposerParams;
        let mut rng = Rng::new(0);
        for (w, d) in [(3, 5), (7, 2), (16, 16)] {
            let p = ComposerParams::random(ComposerVariant::Lstm, w, d, &mut rng);
            let spec = KdSpec::new(2, 1, 1).unwrap();
            let pc = param_count(spec, w as u64, d as u64, ComposerVariant::Lstm);
            assert_eq!(pc.composer_params, p.param_count() as u64);
        }
    }

    #[test]
    fn rate_identity() {
        let pc = ParamCount {
            code_embedding_params: 10,
            composer_params: 0,
            total: 10,
            conventional_baseline: 10,
        };
        assert_eq!(compression_rate(&pc, false), 1.0);
        assert_eq!(compression_rate(&pc, true), 1.0);
    }

    #[test]
    fn small_lstm_table_rate() {
        // 0.37M embedding parameters against the 10K x 200 table.
        let pc = ParamCount {
            code_embedding_params: 370_000,
            composer_params: 0,
            total: 370_000,
            conventional_baseline: 2_000_000,
        };
        assert!((compression_rate(&pc, false) - 0.185).abs() < 1e-15);
    }

    #[test]
    fn nmi_examples() {
        assert_eq!(nmi(&[0, 1, 2, 2], &[0, 1, 2, 2]).unwrap(), 1.0);
        assert!((nmi(&[0, 0, 1, 1], &[1, 1, 0, 0]).unwrap() - 1.0).abs() < 1e-15);
        assert!(nmi(&[0, 0, 1, 1], &[0, 1, 0, 1]).unwrap().abs() < 1e-15);
        assert_eq!(nmi(&[3, 3, 3], &[1, 1, 1]).unwrap(), 1.0);
        assert_eq!(nmi(&[3, 3, 3], &[1, 2, 1]).unwrap(), 0.0);
        assert!(nmi(&[0, 1], &[0]).is_err());
    }

    #[test]
    fn nmi_normalizers_order() {
        let a = [0, 0, 0, 1, 1, 2, 2, 2];
        let b = [0, 0, 1, 1, 1, 1, 2, 2];
        let g = nmi_with(&a, &b, NmiNorm::Geometric).unwrap();
        let ar = nmi_with(&a, &b, NmiNorm::Arithmetic).unwrap();
        let m = nmi_with(&a, &b, NmiNorm::Max).unwrap();
        assert!(m <= ar + 1e-15 && ar <= g + 1e-15);
    }

    #[test]
    fn neighbor_examples() {
        let mut rng = Rng::new(1);
        let x = Matrix::gaussian(20, 5, 1.0, &mut rng);
        assert_eq!(neighbor_preservation(&x, &x, 3).unwrap(), 1.0);
        let mut scaled = x.clone();
        for v in scaled.as_mut_slice() {
            *v *= 2.0;
        }
        assert_eq!(neighbor_preservation(&x, &scaled, 3).unwrap(), 1.0);
        assert!(neighbor_preservation(&x, &x, 20).is_err());
        assert!(neighbor_preservation(&x, &Matrix::zeros(20, 4), 3).is_err());
    }

    /// Exhaustive pairwise oracle: for each i, count j ≠ i whose cosine
    /// rank (number of strictly better candidates, ties by index) is below
    /// k in both spaces.
    fn brute_force_preservation(a: &Matrix, b: &Matrix, k: usize) -> f64 {
        let n = a.rows();
        let rank = |m: &Matrix, i: usize, j: usize| -> usize {
            let s = cosine(m.row(i), m.row(j));
            (0..n)
                .filter(|&l| l != i && l != j)
                .filter(|&l| {
                    let t = cosine(m.row(i), m.row(l));
                    t > s || (t == s && l < j)
                })
                .count()
        };
        let mut total = 0.0;
        for i in 0..n {
            let shared = (0..n)
                .filter(|&j| j != i && rank(a, i, j) < k && rank(b, i, j) < k)
                .count();
            total += shared as f64 / k as f64;
        }
        total / n as f64
    }

    #[test]
    fn neighbor_preservation_matches_brute_force() {
        let mut rng = Rng::new(50);
        let a = Matrix::gaussian(50, 6, 1.0, &mut rng);
        let mut perm: Vec<usize> = (0..50).collect();
        rng.shuffle(&mut perm);
        let mut b = Matrix::zeros(50, 6);
        for (i, &p) in perm.iter().enumerate() {
            b.row_mut(i).copy_from_slice(a.row(p));
        }
        for k in [1, 5, 10] {
            let got = neighbor_preservation(&a, &b, k).unwrap();
            let want = brute_force_preservation(&a, &b, k);
            assert!((got - want).abs() < 1e-15, "k={k}: {got} vs {want}");
        }
    }

    #[test]
    fn neighbor_preservation_is_rotation_invariant() {
        let mut rng = Rng::new(2);
        let a = Matrix::gaussian(30, 2, 1.0, &mut rng);
        let b = Matrix::gaussian(30, 2, 1.0, &mut rng);
        let (s, c) = 0.7f64.sin_cos();
        let rotate = |m: &Matrix| {
            let mut r = m.clone();
            for i in 0..m.rows() {
                let (x, y) = (m.get(i, 0), m.get(i, 1));
                r.set(i, 0, c * x - s * y);
                r.set(i, 1, s * x + c * y);
            }
            r
        };
        let before = neighbor_preservation(&a, &b, 5).unwrap();
        let after = neighbor_preservation(&rotate(&a), &rotate(&b), 5).unwrap();
        assert!((before - after).abs() < 1e-12);
    }

    #[test]
    fn code_group_examples() {
        let spec = KdSpec::new(6, 4, 4).unwrap();
        let labels: Vec<String> = ["monday", "up", "tuesday", "year"].iter().map(|s| s.to_string()).collect();
        let book = CodeBook::new(spec, vec![3, 1, 0, 4, 3, 1, 0, 3, 3, 1, 0, 4, 3, 1, 1, 1]).unwrap();
        let report = code_groups(&book, &labels).unwrap();
        assert_eq!(report.groups.len(), 3);
        assert_eq!(report.groups[0].rendered_code(), "3-1-0-4");
        assert_eq!(report.groups[0].labels, vec!["monday", "tuesday"]);
        assert_eq!(report.groups[1].rendered_code(), "3-1-0-3");
        assert_eq!(report.total_symbols(), 4);
        assert_eq!(report.render(2), "3-1-0-4\t2\tmonday tuesday\n");
        assert!(code_groups(&book, &labels[..3]).is_err());

        let distinct = CodeBook::new(KdSpec::new(4, 1, 4).unwrap(), vec![0, 1, 2, 3]).unwrap();
        let labels: Vec<String> = (0..4).map(|i| i.to_string()).collect();
        let r = code_groups(&distinct, &labels).unwrap();
        assert_eq!(r.groups.len(), 4);
        assert!(r.groups.iter().all(|g| g.labels.len() == 1));
    }

    #[test]
    fn intra_group_cosine() {
        let data = Matrix::from_rows(&[vec![1.0, 0.0], vec![2.0, 0.0], vec![0.0, 1.0], vec![0.0, 3.0]]).unwrap();
        let book = CodeBook::new(KdSpec::new(2, 2, 4).unwrap(), vec![0, 0, 0, 0, 1, 1, 1, 1]).unwrap();
        assert_eq!(mean_intra_group_cosine(&data, &book), Some(1.0));
        assert!((mean_pairwise_cosine(&data) - 2.0 / 6.0).abs() < 1e-15);
        let distinct = CodeBook::new(KdSpec::new(4, 1, 4).unwrap(), vec![0, 1, 2, 3]).unwrap();
        assert_eq!(mean_intra_group_cosine(&data, &distinct), None);
    }

    mod props {
        use super::*;
        use proptest::prelude::*;
        use crate::numerics::Rng;

        proptest! {
            #![proptest_config(ProptestConfig::with_cases(1000))]

            #[test]
            fn nmi_bounded_symmetric_relabel_invariant(
                pairs in prop::collection::vec((0u8..5, 0u8..4), 1..60),
                perm_seed in any::<u64>(),
            ) {
                let a: Vec<u8> = pairs.iter().map(|p| p.0).collect();
                let b: Vec<u8> = pairs.iter().map(|p| p.1).collect();
                let ab = nmi(&a, &b).unwrap();
                prop_assert!((0.0..=1.0).contains(&ab));
                prop_assert_eq!(ab, nmi(&b, &a).unwrap());

                let mut perm: Vec<u8> = (0..5).collect();
                Rng::new(perm_seed).shuffle(&mut perm);
                let relabeled: Vec<u8> = a.iter().map(|x| perm[*x as usize]).collect();
                prop_assert!((nmi(&relabeled, &b).unwrap() - ab).abs() < 1e-12);
            }

            #[test]
            fn groups_partition_symbols(codes in prop::collection::vec(0usize..3, 2..19)) {
                let n = codes.len() / 2;
                let spec = KdSpec::new(3, 2, n).unwrap();
                let book = CodeBook::new(spec, codes[..2 * n].to_vec()).unwrap();
                let labels: Vec<String> = (0..n).map(|i| format!("s{i}")).collect();
                let report = code_groups(&book, &labels).unwrap();
                prop_assert_eq!(report.total_symbols(), n);
                for w in report.groups.windows(2) {
                    prop_assert!(w[0].labels.len() > w[1].labels.len()
                        || (w[0].labels.len() == w[1].labels.len() && w[0].code < w[1].code));
                }
            }
        }
    }
}
