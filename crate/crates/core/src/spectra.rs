//! Per-degree power, cross-power and correlation series, and the
//! highest-power-per-degree fusion of several modality spectra.

use num_complex::Complex64;

use crate::error::{Error, Result};
use crate::sht::Spectrum;

/// Products below this are treated as zero power when normalizing.
pub const CORRELATION_EPS: f64 = 1e-12;

/// `S(l) = Σ_{m=0}^{l} |F_lm|²` for `l < lmax` (non-negative orders only).
pub fn power_spectrum(spec: &Spectrum, lmax: usize) -> Vec<f64> {
    let lmax = lmax.min(spec.bandwidth());
    (0..lmax)
        .map(|l| spec.row(l).iter().map(|c| c.norm_sqr()).sum())
        .collect()
}

/// `S_fg(l) = Σ_{m=0}^{l} F_lm · conj(G_lm)`.
pub fn cross_power_spectrum(f: &Spectrum, g: &Spectrum, lmax: usize) -> Result<Vec<Complex64>> {
    if f.bandwidth() != g.bandwidth() {
        return Err(Error::shape(format!(
            "cross power of spectra with bandwidths {} and {}",
            f.bandwidth(),
            g.bandwidth()
        )));
    }
    let lmax = lmax.min(f.bandwidth());
    Ok((0..lmax)
        .map(|l| {
            f.row(l)
                .iter()
                .zip(g.row(l))
                .map(|(a, b)| a * b.conj())
                .sum()
        })
        .collect())
}

/// `Q(l) = Re S_fg(l) / sqrt(S_ff(l) S_gg(l))`, zero where the power
/// product is below [`CORRELATION_EPS`]. The result is clamped to `[−1, 1]`
/// against rounding.
pub fn degree_correlation(s_ff: &[f64], s_gg: &[f64], s_fg: &[Complex64]) -> Vec<f64> {
    debug_assert!(s_ff.len() == s_gg.len() && s_gg.len() == s_fg.len());
    s_ff.iter()
        .zip(s_gg)
        .zip(s_fg)
        .map(|((pf, pg), x)| {
            let denom = pf * pg;
            if denom < CORRELATION_EPS {
                0.0
            } else {
                (x.re / denom.sqrt()).clamp(-1.0, 1.0)
            }
        })
        .collect()
}

/// Convenience: correlation series of two spectra.
pub fn spectrum_correlation(f: &Spectrum, g: &Spectrum, lmax: usize) -> Result<Vec<f64>> {
    let s_fg = cross_power_spectrum(f, g, lmax)?;
    Ok(degree_correlation(
        &power_spectrum(f, lmax),
        &power_spectrum(g, lmax),
        &s_fg,
    ))
}

/// Fuses modality spectra by selecting, per degree, the full row of the
/// modality with the highest power. Ties go to the lowest index.
pub fn fuse_spectra(spectra: &[Spectrum], lmax: usize) -> Result<Spectrum> {
    fuse_spectra_by(spectra, spectra, lmax)
}

/// Like [`fuse_spectra`] but ranks modalities by the power of `selectors`
/// (e.g. spectra of standardized channels) while copying rows from
/// `spectra`.
pub fn fuse_spectra_by(spectra: &[Spectrum], selectors: &[Spectrum], lmax: usize) -> Result<Spectrum> {
    let choice = fusion_choice(selectors, lmax)?;
    if spectra.len() != selectors.len() {
        return Err(Error::shape(format!(
            "{} spectra but {} selectors",
            spectra.len(),
            selectors.len()
        )));
    }
    let lmax = choice.len();
    if spectra.iter().any(|s| s.bandwidth() < lmax) {
        return Err(Error::shape("modality spectra have unequal bandwidths"));
    }
    let mut fused = Spectrum::zeros(lmax);
    for (l, &idx) in choice.iter().enumerate() {
        fused.row_mut(l).copy_from_slice(spectra[idx].row(l));
    }
    Ok(fused)
}

/// Index of the winning modality for each degree `l < lmax`.
pub fn fusion_choice(selectors: &[Spectrum], lmax: usize) -> Result<Vec<usize>> {
    let first = selectors
        .first()
        .ok_or_else(|| Error::invalid("fusion needs at least one modality"))?;
    if selectors.iter().any(|s| s.bandwidth() != first.bandwidth()) {
        return Err(Error::shape("modality spectra have unequal bandwidths"));
    }
    let lmax = lmax.min(first.bandwidth());
    let powers: Vec<Vec<f64>> = selectors.iter().map(|s| power_spectrum(s, lmax)).collect();
    Ok((0..lmax)
        .map(|l| {
            let mut best = 0;
            for (i, p) in powers.iter().enumerate().skip(1) {
                if p[l] > powers[best][l] {
                    best = i;
                }
            }
            best
        })
        .collect())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::sht::yaw_rotate;
    use proptest::prelude::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;
    use std::f64::consts::PI;

    fn random_spectrum(rng: &mut impl Rng, bandwidth: usize) -> Spectrum {
        let coeffs = (0..bandwidth * (bandwidth + 1) / 2)
            .map(|_| Complex64::new(rng.gen_range(-1.0..1.0), rng.gen_range(-1.0..1.0)))
            .collect();
        Spectrum::from_coeffs(bandwidth, coeffs).unwrap()
    }

    fn negate(s: &Spectrum) -> Spectrum {
        Spectrum::from_coeffs(s.bandwidth(), s.coeffs().iter().map(|c| -c).collect()).unwrap()
    }

    #[test]
    fn constant_power() {
        let mut s = Spectrum::zeros(4);
        s.set(0, 0, Complex64::new(2.0 * PI.sqrt(), 0.0));
        let p = power_spectrum(&s, 4);
        assert!((p[0] - 4.0 * PI).abs() < 1e-12);
        assert!(p[1..].iter().all(|v| *v == 0.0));
        assert!(power_spectrum(&Spectrum::zeros(6), 6).iter().all(|v| *v == 0.0));
    }

    #[test]
    fn cross_power_of_self_and_negation() {
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let f = random_spectrum(&mut rng, 15);
        let p = power_spectrum(&f, 15);
        let s = cross_power_spectrum(&f, &f, 15).unwrap();
        let n = cross_power_spectrum(&f, &negate(&f), 15).unwrap();
        for l in 0..15 {
            assert!((s[l].re - p[l]).abs() < 1e-12 && s[l].im.abs() < 1e-12);
            assert!((n[l].re + p[l]).abs() < 1e-12);
        }
        assert!(cross_power_spectrum(&f, &Spectrum::zeros(4), 4).is_err());
    }

    #[test]
    fn swapping_arguments_conjugates() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let f = random_spectrum(&mut rng, 10);
        let g = random_spectrum(&mut rng, 10);
        let fg = cross_power_spectrum(&f, &g, 10).unwrap();
        let gf = cross_power_spectrum(&g, &f, 10).unwrap();
        for (a, b) in fg.iter().zip(&gf) {
            assert!((a - b.conj()).norm() < 1e-12);
        }
    }

    #[test]
    fn correlation_signs_and_orthogonality() {
        let mut rng = ChaCha8Rng::seed_from_u64(9);
        let f = random_spectrum(&mut rng, 8);
        let q_self = spectrum_correlation(&f, &f, 8).unwrap();
        assert!(q_self.iter().all(|q| (q - 1.0).abs() < 1e-12));
        let q_neg = spectrum_correlation(&f, &negate(&f), 8).unwrap();
        assert!(q_neg.iter().all(|q| (q + 1.0).abs() < 1e-12));

        let mut a = Spectrum::zeros(5);
        let mut b = Spectrum::zeros(5);
        a.set(3, 0, Complex64::new(1.5, 0.0));
        b.set(3, 1, Complex64::new(0.4, -2.0));
        let q = spectrum_correlation(&a, &b, 5).unwrap();
        assert_eq!(q[3], 0.0);
        // degrees without power are defined as zero
        assert_eq!(q[0], 0.0);
    }

    #[test]
    fn fusion_single_modality_and_dominance() {
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        let a = random_spectrum(&mut rng, 6);
        assert_eq!(fuse_spectra(std::slice::from_ref(&a), 6).unwrap(), a);
        let small = Spectrum::from_coeffs(6, a.coeffs().iter().map(|c| c * 0.1).collect()).unwrap();
        assert_eq!(fuse_spectra(&[small.clone(), a.clone()], 6).unwrap(), a);
        assert!(matches!(fuse_spectra(&[], 6), Err(Error::InvalidParameter(_))));
    }

    #[test]
    fn fusion_ties_go_to_lowest_index() {
        let mut rng = ChaCha8Rng::seed_from_u64(8);
        let a = random_spectrum(&mut rng, 5);
        let b = yaw_rotate(&a, 0.7); // same power, different phases
        let fused = fuse_spectra(&[b.clone(), a], 5).unwrap();
        assert_eq!(fused.coeffs(), b.coeffs());
    }

    #[test]
    fn fusion_matches_per_degree_argmax_oracle() {
        let mut rng = ChaCha8Rng::seed_from_u64(12);
        let mods: Vec<Spectrum> = (0..3).map(|_| random_spectrum(&mut rng, 12)).collect();
        let fused = fuse_spectra(&mods, 12).unwrap();
        for l in 0..12 {
            let mut best = (0usize, -1.0f64);
            for (i, s) in mods.iter().enumerate() {
                let mut p = 0.0;
                for m in 0..=l {
                    let c = s.get(l, m);
                    p += c.re * c.re + c.im * c.im;
                }
                if p > best.1 {
                    best = (i, p);
                }
            }
            assert_eq!(fused.row(l), mods[best.0].row(l), "degree {l}");
        }
    }

    proptest! {
        #[test]
        fn correlation_is_bounded_and_symmetric(seed in any::<u64>(), bw in 1usize..20) {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let f = random_spectrum(&mut rng, bw);
            let g = random_spectrum(&mut rng, bw);
            let q_fg = spectrum_correlation(&f, &g, bw).unwrap();
            let q_gf = spectrum_correlation(&g, &f, bw).unwrap();
            for (a, b) in q_fg.iter().zip(&q_gf) {
                prop_assert!(a.abs() <= 1.0 + 1e-12);
                prop_assert!((a - b).abs() < 1e-12);
            }
        }

        #[test]
        fn power_is_yaw_invariant(seed in any::<u64>(), alpha in -10.0f64..10.0) {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let f = random_spectrum(&mut rng, 16);
            let p = power_spectrum(&f, 16);
            let r = power_spectrum(&yaw_rotate(&f, alpha), 16);
            for (a, b) in p.iter().zip(&r) {
                prop_assert!((a - b).abs() <= 1e-12 * a.max(1.0));
            }
        }

        #[test]
        fn fusion_is_idempotent(seed in any::<u64>()) {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let mods: Vec<Spectrum> = (0..3).map(|_| random_spectrum(&mut rng, 9)).collect();
            let fused = fuse_spectra(&mods, 9).unwrap();
            let again = fuse_spectra(&[fused.clone(), fused.clone()], 9).unwrap();
            prop_assert_eq!(again, fused);
        }
    }
}
