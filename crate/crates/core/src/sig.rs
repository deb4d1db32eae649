//! Permutation-surrogate significance for transfer-entropy measurements.
//!
//! Surrogates shuffle whole embedded source rows, keeping each row's source
//! history intact while destroying its alignment with the target. The target
//! rows (next value and own history) are untouched, so the target's own
//! transition structure is preserved.

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;

use crate::engine::TeEngine;
use crate::error::{Error, Result};
use crate::ksg::{condition_pair, embed, estimate_embedded, EmbeddedPanel, EmbeddingConfig, TeOptions};

pub const DEFAULT_SURROGATES: usize = 100;
pub const DEFAULT_ALPHA: f64 = 0.05;

#[derive(Debug, Clone, PartialEq)]
pub struct SurrogateResult {
    pub observed: f64,
    pub surrogate_values: Vec<f64>,
    pub p_value: f64,
    pub alpha: f64,
    pub significant: bool,
}

impl SurrogateResult {
    pub fn new(observed: f64, surrogate_values: Vec<f64>, alpha: f64) -> Self {
        let p_value = p_value(observed, &surrogate_values);
        SurrogateResult {
            observed,
            surrogate_values,
            p_value,
            alpha,
            significant: p_value <= alpha,
        }
    }
}

/// Add-one permutation p-value: `(1 + #{s >= observed}) / (S + 1)`.
pub fn p_value(observed: f64, surrogates: &[f64]) -> f64 {
    let exceed = surrogates.iter().filter(|s| **s >= observed).count();
    (1 + exceed) as f64 / (surrogates.len() + 1) as f64
}

/// The `index`-th surrogate permutation of `n` rows under `seed`.
///
/// Every surrogate draws from its own ChaCha stream, so surrogate `i` is the
/// same whether it is computed alone, in sequence, or on another worker.
pub fn surrogate_permutation(n: usize, seed: u64, index: u64) -> Vec<usize> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(index);
    let mut perm: Vec<usize> = (0..n).collect();
    perm.shuffle(&mut rng);
    perm
}

/// Places source row `perm[r]` at row `r`.
pub fn permute_source_with(panel: &EmbeddedPanel, perm: &[usize]) -> Result<EmbeddedPanel> {
    let n = panel.n_effective();
    if perm.len() != n {
        return Err(Error::Shape(format!("permutation of length {} for {n} rows", perm.len())));
    }
    let mut seen = vec![false; n];
    for &p in perm {
        if p >= n || std::mem::replace(&mut seen[p], true) {
            return Err(Error::InvalidArgument("not a permutation".into()));
        }
    }
    let l = panel.source_order;
    let mut source_past = Vec::with_capacity(panel.source_past.len());
    for &p in perm {
        source_past.extend_from_slice(&panel.source_past[p * l..(p + 1) * l]);
    }
    Ok(EmbeddedPanel {
        source_past,
        ..panel.clone()
    })
}

/// Seeded uniform shuffle of the source rows.
pub fn permute_source(panel: &EmbeddedPanel, seed: u64) -> EmbeddedPanel {
    let perm = surrogate_permutation(panel.n_effective(), seed, 0);
    permute_source_with(panel, &perm).expect("generated permutation is valid")
}

/// Permutation test of `TE(y → x)` with `surrogates` shuffled sources.
pub fn permutation_test(
    x: &[f64],
    y: &[f64],
    cfg: &EmbeddingConfig,
    surrogates: usize,
    alpha: f64,
    seed: u64,
) -> Result<SurrogateResult> {
    permutation_test_with(x, y, cfg, surrogates, alpha, seed, &TeOptions::default())
}

pub fn permutation_test_with(
    x: &[f64],
    y: &[f64],
    cfg: &EmbeddingConfig,
    surrogates: usize,
    alpha: f64,
    seed: u64,
    opts: &TeOptions,
) -> Result<SurrogateResult> {
    check_params(surrogates, alpha)?;
    let (xc, yc) = condition_pair(x, y, opts)?;
    let panel = embed(&xc, &yc, cfg)?;
    let observed = estimate_embedded(&panel, cfg.neighbours)?.global;
    let n = panel.n_effective();
    let values: Vec<f64> = (0..surrogates as u64)
        .into_par_iter()
        .map(|s| {
            let perm = surrogate_permutation(n, seed, s);
            let shuffled = permute_source_with(&panel, &perm)?;
            Ok(estimate_embedded(&shuffled, cfg.neighbours)?.global)
        })
        .collect::<Result<_>>()?;
    Ok(SurrogateResult::new(observed, values, alpha))
}

/// Same test through the dense pairwise engine; bit-identical to
/// [`permutation_test_with`] and faster on short series.
pub fn permutation_test_dense(
    x: &[f64],
    y: &[f64],
    cfg: &EmbeddingConfig,
    surrogates: usize,
    alpha: f64,
    seed: u64,
    opts: &TeOptions,
) -> Result<SurrogateResult> {
    check_params(surrogates, alpha)?;
    cfg.validate()?;
    embed(x, y, cfg)?;
    let engine = TeEngine::new(x, y, opts)?;
    let tables = engine.orders(cfg.target_order, cfg.source_order)?;
    let ks = [cfg.neighbours];
    let observed = tables.estimate(&ks, None)?[0].global;
    let n = tables.n_effective();
    let values: Vec<f64> = (0..surrogates as u64)
        .into_par_iter()
        .map(|s| {
            let perm = surrogate_permutation(n, seed, s);
            Ok(tables.estimate(&ks, Some(&perm))?[0].global)
        })
        .collect::<Result<_>>()?;
    Ok(SurrogateResult::new(observed, values, alpha))
}

pub(crate) fn check_params(surrogates: usize, alpha: f64) -> Result<()> {
    if surrogates == 0 {
        return Err(Error::InvalidArgument("surrogate count must be at least 1".into()));
    }
    if !(alpha > 0.0 && alpha < 1.0) {
        return Err(Error::InvalidArgument(format!("significance level {alpha} not in (0, 1)")));
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::oracle::{simulate, SourceModel, Var1Spec};

    fn panel(n: usize) -> EmbeddedPanel {
        let x: Vec<f64> = (0..n).map(|t| (t as f64 * 0.7).sin()).collect();
        let y: Vec<f64> = (0..n).map(|t| (t as f64 * 1.3).cos()).collect();
        embed(&x, &y, &EmbeddingConfig::new(2, 2, 1)).unwrap()
    }

    #[test]
    fn p_value_add_one_rule() {
        assert_eq!(p_value(1.0, &[0.0; 100]), 1.0 / 101.0);
        assert_eq!(p_value(0.0, &[0.0; 4]), 1.0);
        assert_eq!(p_value(0.5, &[0.1, 0.6, 0.5, 0.2]), 3.0 / 5.0);
    }

    #[test]
    fn identity_permutation_reproduces_observed() {
        let p = panel(60);
        let id: Vec<usize> = (0..p.n_effective()).collect();
        let same = permute_source_with(&p, &id).unwrap();
        assert_eq!(estimate_embedded(&same, 3).unwrap(), estimate_embedded(&p, 3).unwrap());
    }

    #[test]
    fn shuffle_preserves_rows_and_target() {
        let p = panel(40);
        let s = permute_source(&p, 17);
        assert_eq!(s.next, p.next);
        assert_eq!(s.target_past, p.target_past);
        let mut a: Vec<Vec<u64>> = (0..p.n_effective())
            .map(|r| p.source_row(r).iter().map(|v| v.to_bits()).collect())
            .collect();
        let mut b: Vec<Vec<u64>> = (0..s.n_effective())
            .map(|r| s.source_row(r).iter().map(|v| v.to_bits()).collect())
            .collect();
        assert_ne!(a, b);
        a.sort();
        b.sort();
        assert_eq!(a, b);
    }

    #[test]
    fn two_rows_reach_both_orders() {
        let p = embed(&[1.0, 2.0, 3.0], &[5.0, 6.0, 7.0], &EmbeddingConfig::new(1, 1, 1)).unwrap();
        let outcomes: std::collections::BTreeSet<Vec<u64>> = (0..64)
            .map(|seed| permute_source(&p, seed).source_past.iter().map(|v| v.to_bits()).collect())
            .collect();
        assert_eq!(outcomes.len(), 2);
    }

    #[test]
    fn rejects_zero_surrogates() {
        let x: Vec<f64> = (0..50).map(|t| (t as f64).sin()).collect();
        let cfg = EmbeddingConfig::new(1, 1, 4);
        assert!(permutation_test(&x, &x, &cfg, 0, 0.05, 1).is_err());
        assert!(permutation_test(&x, &x, &cfg, 10, 0.0, 1).is_err());
    }

    #[test]
    fn dense_and_tree_tests_agree() {
        let spec = Var1Spec::new(0.5, 0.3, 1.0, SourceModel::IidNormal).unwrap();
        let (x, y) = simulate(&spec, 150, 4).unwrap();
        let cfg = EmbeddingConfig::new(2, 1, 4);
        let opts = TeOptions::default();
        let a = permutation_test_with(&x, &y, &cfg, 20, 0.05, 9, &opts).unwrap();
        let b = permutation_test_dense(&x, &y, &cfg, 20, 0.05, 9, &opts).unwrap();
        assert_eq!(a, b);
    }

    #[test]
    fn deterministic_regardless_of_pool_size() {
        let spec = Var1Spec::new(0.5, 0.3, 1.0, SourceModel::IidNormal).unwrap();
        let (x, y) = simulate(&spec, 200, 5).unwrap();
        let cfg = EmbeddingConfig::new(1, 1, 4);
        let run = |threads| {
            rayon::ThreadPoolBuilder::new()
                .num_threads(threads)
                .build()
                .unwrap()
                .install(|| permutation_test(&x, &y, &cfg, 30, 0.05, 3).unwrap())
        };
        assert_eq!(run(1), run(3));
    }
}
