//! Turning per-degree correlations into confidences, z-scores and a vote.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::projection::FeatureSphere;
use crate::taper::{MultitaperAnalyzer, TaperedSpectra};

/// Probabilities fed to the quantile are kept inside `[ε, 1 − ε]`.
pub const QUANTILE_EPS: f64 = 1e-9;

/// How the confidence recursion carries the previous degree.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum CarryMode {
    /// `G_l = G_{l−1} + increment(l)`.
    #[default]
    Accumulated,
    /// `G_l = Q(l−1) + increment(l)`, the recursion as typeset.
    Literal,
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ZScoreMode {
    /// `s = Φ⁻¹(g)`: zero at 50 %, negative below, positive above.
    #[default]
    Described,
    /// `s = Φ⁻¹((1 − (1 − g))/2) = Φ⁻¹(g/2)`.
    Literal,
}

/// Standard normal quantile (Wichura's AS241, relative error ~1e−16).
pub fn normal_quantile(p: f64) -> f64 {
    debug_assert!(p > 0.0 && p < 1.0);
    let q = p - 0.5;
    if q.abs() <= 0.425 {
        let r = 0.180625 - q * q;
        return q
            * (((((((2509.0809287301226727 * r + 33430.575583588128105) * r + 67265.770927008700853) * r
                + 45921.953931549871457)
                * r
                + 13731.693765509461125)
                * r
                + 1971.5909503065514427)
                * r
                + 133.14166789178437745)
                * r
                + 3.387132872796366608)
            / (((((((5226.495278852545925 * r + 28729.085735721942674) * r + 39307.89580009271061) * r
                + 21213.794301586595867)
                * r
                + 5394.1960214247511077)
                * r
                + 687.1870074920579083)
                * r
                + 42.313330701600911252)
                * r
                + 1.0);
    }
    let mut r = if q < 0.0 { p } else { 1.0 - p };
    r = (-r.ln()).sqrt();
    let val = if r <= 5.0 {
        r -= 1.6;
        (((((((7.7454501427834140764e-4 * r + 0.0227238449892691845833) * r + 0.24178072517745061177) * r
            + 1.27045825245236838258)
            * r
            + 3.64784832476320460504)
            * r
            + 5.7694972214606914055)
            * r
            + 4.6303378461565452959)
            * r
            + 1.42343711074968357734)
            / (((((((1.05075007164441684324e-9 * r + 5.475938084995344946e-4) * r + 0.0151986665636164571966)
                * r
                + 0.14810397642748007459)
                * r
                + 0.68976733498510000455)
                * r
                + 1.6763848301838038494)
                * r
                + 2.05319162663775882187)
                * r
                + 1.0)
    } else {
        r -= 5.0;
        (((((((2.01033439929228813265e-7 * r + 2.71155556874348757815e-5) * r + 0.0012426609473880784386)
            * r
            + 0.026532189526576123093)
            * r
            + 0.29656057182850489123)
            * r
            + 1.7848265399172913358)
            * r
            + 5.4637849111641143699)
            * r
            + 6.6579046435011037772)
            / (((((((2.04426310338993978564e-15 * r + 1.4215117583164458887e-7) * r
                + 1.8463183175100546818e-5)
                * r
                + 7.868691311456132591e-4)
                * r
                + 0.0148753612908506148525)
                * r
                + 0.13692988092273580531)
                * r
                + 0.59983220655588793769)
                * r
                + 1.0)
    };
    if q < 0.0 {
        -val
    } else {
        val
    }
}

/// Confidence series `G_l` for `l < lmax`. Entry 0 is unused and set to 0;
/// `Q` values are clamped to `[−1, 1]` first.
///
/// `G_1 = Q(1)`, and for `l ≥ 2`
/// `G_l = carry + Q(l)(1 − Q(l)²)^{l−1} ∏_{i=1}^{l−1} (2i−1)/(2i)`.
///
/// A running sum over varying `Q` can step past ±1, so every `G_l` is
/// saturated to `[−1, 1]` and the saturated value is what gets carried.
pub fn correlation_confidence(q: &[f64], lmax: usize, mode: CarryMode) -> Vec<f64> {
    let lmax = lmax.min(q.len());
    let mut g = vec![0.0; lmax];
    if lmax < 2 {
        return g;
    }
    let qc = |l: usize| q[l].clamp(-1.0, 1.0);
    g[1] = qc(1);
    let mut product = 1.0;
    for l in 2..lmax {
        product *= (2.0 * (l - 1) as f64 - 1.0) / (2.0 * (l - 1) as f64);
        let ql = qc(l);
        let increment = ql * (1.0 - ql * ql).powi(l as i32 - 1) * product;
        let carry = match mode {
            CarryMode::Accumulated => g[l - 1],
            CarryMode::Literal => qc(l - 1),
        };
        g[l] = (carry + increment).clamp(-1.0, 1.0);
    }
    g
}

/// z-score of a confidence `g ∈ [0, 1]`.
pub fn z_score(g: f64, mode: ZScoreMode) -> Result<f64> {
    if !(0.0..=1.0).contains(&g) {
        return Err(Error::invalid(format!("confidence {g} outside [0, 1]")));
    }
    let p = match mode {
        ZScoreMode::Described => g,
        ZScoreMode::Literal => (1.0 - (1.0 - g)) / 2.0,
    };
    Ok(normal_quantile(p.clamp(QUANTILE_EPS, 1.0 - QUANTILE_EPS)))
}

/// Maps a confidence in `[−1, 1]` to `[0, 1]` (values outside are clamped).
#[inline]
pub fn confidence_to_probability(g: f64) -> f64 {
    ((g.clamp(-1.0, 1.0)) + 1.0) / 2.0
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Serialize, Deserialize)]
pub struct VoteConfig {
    pub zscore: ZScoreMode,
    pub carry: CarryMode,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct VoteResult {
    /// Accumulated z-score per candidate.
    pub scores: Vec<f64>,
    /// Per candidate, `G_l` for `l < L_eval` (entry 0 unused).
    pub confidences: Vec<Vec<f64>>,
    pub selected: usize,
    /// Best minus runner-up score; infinite for a single candidate.
    pub margin: f64,
}

/// `Σ_{l=1}^{L−1} s(g_l)` for one correlation series.
pub fn accumulate_score(q: &[f64], config: VoteConfig) -> (f64, Vec<f64>) {
    let g = correlation_confidence(q, q.len(), config.carry);
    let score = g
        .iter()
        .skip(1)
        .map(|&gl| z_score(confidence_to_probability(gl), config.zscore).expect("probability in range"))
        .sum();
    (score, g)
}

/// Index of the largest score; ties go to the lowest index.
pub fn argmax(scores: &[f64]) -> Option<usize> {
    let mut best: Option<usize> = None;
    for (i, s) in scores.iter().enumerate() {
        match best {
            Some(b) if *s <= scores[b] => {}
            _ => best = Some(i),
        }
    }
    best
}

/// Builds a [`VoteResult`] from per-candidate correlation series.
pub fn vote_on_correlations(correlations: &[Vec<f64>], config: VoteConfig) -> Result<VoteResult> {
    if correlations.is_empty() {
        return Err(Error::invalid("voting needs at least one candidate"));
    }
    let (scores, confidences): (Vec<f64>, Vec<Vec<f64>>) =
        correlations.iter().map(|q| accumulate_score(q, config)).unzip();
    let selected = argmax(&scores).expect("non-empty");
    let runner_up = scores
        .iter()
        .enumerate()
        .filter(|(i, _)| *i != selected)
        .map(|(_, s)| *s)
        .fold(f64::NEG_INFINITY, f64::max);
    Ok(VoteResult {
        margin: scores[selected] - runner_up,
        scores,
        confidences,
        selected,
    })
}

/// Full voting: multitaper correlation of the query against each candidate,
/// confidences, z-scores, argmax.
pub fn vote(
    query: &FeatureSphere,
    candidates: &[FeatureSphere],
    analyzer: &MultitaperAnalyzer,
    config: VoteConfig,
) -> Result<VoteResult> {
    if candidates.is_empty() {
        return Err(Error::invalid("voting needs at least one candidate"));
    }
    let q = analyzer.prepare(query)?;
    let prepared = candidates
        .iter()
        .map(|c| analyzer.prepare(c))
        .collect::<Result<Vec<_>>>()?;
    vote_prepared(&q, &prepared, analyzer, config)
}

pub fn vote_prepared(
    query: &TaperedSpectra,
    candidates: &[TaperedSpectra],
    analyzer: &MultitaperAnalyzer,
    config: VoteConfig,
) -> Result<VoteResult> {
    let correlations: Vec<Vec<f64>> = candidates.iter().map(|c| analyzer.correlate(query, c)).collect();
    vote_on_correlations(&correlations, config)
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;
    use statrs::function::erf::erfc;

    /// Φ by way of erfc, inverted by bisection: independent of AS241.
    fn quantile_oracle(p: f64) -> f64 {
        if p > 0.5 {
            return -quantile_oracle(1.0 - p);
        }
        let cdf = |x: f64| 0.5 * erfc(-x / std::f64::consts::SQRT_2);
        let (mut lo, mut hi) = (-40.0, 40.0);
        for _ in 0..200 {
            let mid = 0.5 * (lo + hi);
            if cdf(mid) < p {
                lo = mid;
            } else {
                hi = mid;
            }
        }
        0.5 * (lo + hi)
    }

    #[test]
    fn quantile_matches_oracle() {
        for p in [1e-9, 1e-6, 0.001, 0.02, 0.1, 0.3, 0.5, 0.7, 0.9772, 0.999, 1.0 - 1e-9] {
            let got = normal_quantile(p);
            let want = quantile_oracle(p);
            assert!((got - want).abs() <= 1e-9 * want.abs().max(1e-3), "p={p}: {got} vs {want}");
        }
        assert_eq!(normal_quantile(0.5), 0.0);
    }

    #[test]
    fn z_score_examples() {
        assert_eq!(z_score(0.5, ZScoreMode::Described).unwrap(), 0.0);
        // frozen from the bisection oracle above
        assert!((z_score(0.9772, ZScoreMode::Described).unwrap() - 1.999_077_214_971_769_3).abs() < 1e-9);
        assert_eq!(z_score(1.0, ZScoreMode::Literal).unwrap(), 0.0);
        assert!(z_score(1.5, ZScoreMode::Described).is_err());
        assert!(z_score(-0.1, ZScoreMode::Literal).is_err());
        assert!(z_score(0.0, ZScoreMode::Described).unwrap().is_finite());
    }

    #[test]
    fn confidence_closed_forms() {
        let mut q = vec![0.0; 15];
        q[1] = 0.7;
        assert_eq!(correlation_confidence(&q, 15, CarryMode::Accumulated)[1], 0.7);
        let zeros = correlation_confidence(&[0.0; 15], 15, CarryMode::Accumulated);
        assert!(zeros.iter().all(|g| *g == 0.0));
        for mode in [CarryMode::Accumulated, CarryMode::Literal] {
            let ones = correlation_confidence(&[1.0; 15], 15, mode);
            assert!(ones[1..].iter().all(|g| *g == 1.0));
        }
    }

    #[test]
    fn constant_correlation_partial_sums_stay_below_one() {
        // With a fixed Q the increments are the series of sign(Q).
        for &qv in &[-0.9, -0.3, 0.05, 0.5, 0.99] {
            let g = correlation_confidence(&[qv; 40], 40, CarryMode::Accumulated);
            assert!(g[1..].windows(2).all(|w| w[1].abs() >= w[0].abs() - 1e-15));
            assert!(g.iter().all(|v| v.abs() <= 1.0));
        }
    }

    #[test]
    fn unsaturated_sum_overshoots_and_is_clipped() {
        let mut q = vec![0.0; 15];
        q[1] = 1.0;
        q[2] = (1.0f64 / 3.0).sqrt();
        let raw = q[1] + q[2] * (1.0 - q[2] * q[2]) * 0.5;
        assert!(raw > 1.0);
        let g = correlation_confidence(&q, 15, CarryMode::Accumulated);
        assert_eq!(g[2], 1.0);
    }

    #[test]
    fn confidences_bounded_over_random_vectors() {
        let mut rng = ChaCha8Rng::seed_from_u64(99);
        for mode in [CarryMode::Accumulated, CarryMode::Literal] {
            for _ in 0..100_000 {
                let q: Vec<f64> = (0..15).map(|_| rng.gen_range(-1.0..=1.0)).collect();
                let g = correlation_confidence(&q, 15, mode);
                assert!(g.iter().all(|v| v.abs() <= 1.0));
            }
        }
    }

    #[test]
    fn argmax_ties_and_monotone_invariance() {
        assert_eq!(argmax(&[1.0, 3.0, 3.0, 2.0]), Some(1));
        assert_eq!(argmax(&[]), None);
        let scores = [-4.0, 2.5, 1.0, 2.5, -0.1];
        let t: Vec<f64> = scores.iter().map(|s: &f64| s.exp() * 3.0 + 1.0).collect();
        assert_eq!(argmax(&scores), argmax(&t));
    }

    #[test]
    fn empty_candidates_rejected() {
        assert!(vote_on_correlations(&[], VoteConfig::default()).is_err());
        let single = vote_on_correlations(&[vec![0.0; 15]], VoteConfig::default()).unwrap();
        assert_eq!(single.selected, 0);
        assert!(single.margin.is_infinite());
    }

    proptest! {
        #[test]
        fn z_score_strictly_increasing(a in 0.0f64..1.0, b in 0.0f64..1.0) {
            prop_assume!((a - b).abs() > 1e-6);
            let (lo, hi) = if a < b { (a, b) } else { (b, a) };
            prop_assume!(hi > QUANTILE_EPS && lo < 1.0 - QUANTILE_EPS);
            for mode in [ZScoreMode::Described, ZScoreMode::Literal] {
                prop_assert!(z_score(lo, mode).unwrap() < z_score(hi, mode).unwrap());
            }
        }

        #[test]
        fn duplicate_loser_never_changes_winner(seed in any::<u64>(), n in 2usize..10, dup in 0usize..10) {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let mut qs: Vec<Vec<f64>> = (0..n).map(|_| (0..15).map(|_| rng.gen_range(-1.0..1.0)).collect()).collect();
            let base = vote_on_correlations(&qs, VoteConfig::default()).unwrap();
            let dup = dup % n;
            prop_assume!(dup != base.selected);
            qs.push(qs[dup].clone());
            let after = vote_on_correlations(&qs, VoteConfig::default()).unwrap();
            prop_assert_eq!(after.selected, base.selected);
        }
    }
}
