//! Zonal spherical-cap concentration windows and multitaper correlation.
//!
//! A taper is a band-limited zonal function `h(θ) = Σ_{l<L_h} g_l Y_l0(θ)`
//! whose energy is maximally concentrated in the cap `θ ≤ θ0`. The optimal
//! coefficient vectors are eigenvectors of the cap kernel
//! `D_{ll'} = ∫_cap Y_l0 Y_l'0 dΩ`; the eigenvalue is the fraction of the
//! taper's energy inside the cap.

use std::f64::consts::PI;
use std::path::Path;

use nalgebra::{DMatrix, SymmetricEigen};

use crate::binio::{checked_u16, PutLe, Reader};
use crate::error::{Error, Result};
use crate::grid::{Channel, SphericalGrid};
use crate::projection::{FeatureSphere, Modality};
use crate::quad::{gauss_legendre, legendre_polys};
use crate::sht::{ShtPlan, Spectrum};
use crate::spectra::{cross_power_spectrum, degree_correlation, fuse_spectra_by, power_spectrum};

pub const TAPER_MAGIC: &[u8; 4] = b"TAPR";
pub const TAPER_VERSION: u16 = 1;

/// At most this many tapers are used by default.
pub const MAX_DEFAULT_TAPERS: usize = 8;

#[derive(Debug, Clone, Copy, PartialEq, serde::Serialize, serde::Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct TaperParams {
    /// Cap half-angle in radians.
    pub cap_angle: f64,
    /// Taper bandwidth: degrees `0..bandwidth`.
    pub bandwidth: usize,
    /// Number of tapers; `0` selects the clamped Shannon number.
    pub count: usize,
}

impl Default for TaperParams {
    fn default() -> Self {
        Self {
            cap_angle: PI / 6.0,
            bandwidth: 20,
            count: 0,
        }
    }
}

impl TaperParams {
    pub fn resolved_count(&self) -> usize {
        if self.count > 0 {
            self.count
        } else {
            shannon_count(self.cap_angle, self.bandwidth)
        }
    }
}

/// `⌊(L_h + 1)² · (1 − cos θ0)/2⌋` clamped to `[1, min(8, L_h)]`.
pub fn shannon_count(cap_angle: f64, bandwidth: usize) -> usize {
    let area_fraction = 0.5 * (1.0 - cap_angle.cos());
    let n = ((bandwidth + 1) as f64).powi(2) * area_fraction;
    (n.floor() as usize).clamp(1, MAX_DEFAULT_TAPERS.min(bandwidth.max(1)))
}

#[inline]
fn zonal_norm(l: usize) -> f64 {
    (((2 * l + 1) as f64) / (4.0 * PI)).sqrt()
}

/// Orthonormal zonal harmonics `Y_l0` for `l < n` at `cos θ = x`.
fn zonal_basis(n: usize, x: f64) -> Vec<f64> {
    legendre_polys(n, x)
        .into_iter()
        .enumerate()
        .map(|(l, p)| zonal_norm(l) * p)
        .collect()
}

/// Cap kernel in the orthonormal zonal basis. The full sphere gives the
/// identity exactly.
pub fn cap_kernel(cap_angle: f64, bandwidth: usize) -> DMatrix<f64> {
    if cap_angle >= PI {
        return DMatrix::identity(bandwidth, bandwidth);
    }
    let (nodes, weights) = gauss_legendre(bandwidth + 1, cap_angle.cos(), 1.0);
    let mut d = DMatrix::zeros(bandwidth, bandwidth);
    for (x, w) in nodes.iter().zip(&weights) {
        let y = zonal_basis(bandwidth, *x);
        for a in 0..bandwidth {
            for b in 0..=a {
                d[(a, b)] += 2.0 * PI * w * y[a] * y[b];
            }
        }
    }
    for a in 0..bandwidth {
        for b in 0..a {
            d[(b, a)] = d[(a, b)];
        }
    }
    d
}

#[derive(Debug, Clone, PartialEq)]
pub struct TaperBank {
    cap_angle: f64,
    taper_bandwidth: usize,
    grid_bandwidth: usize,
    coefficients: Vec<Vec<f64>>,
    concentrations: Vec<f64>,
    ring_values: Vec<Vec<f64>>,
}

impl TaperBank {
    /// Solves the zonal concentration problem and keeps the `count` best
    /// tapers, sorted by decreasing concentration.
    pub fn build(cap_angle: f64, taper_bandwidth: usize, count: usize, grid: &SphericalGrid) -> Result<Self> {
        validate(cap_angle, taper_bandwidth, count, grid)?;
        let kernel = cap_kernel(cap_angle, taper_bandwidth);
        let eig = SymmetricEigen::new(kernel);
        let mut order: Vec<usize> = (0..taper_bandwidth).collect();
        // stable: equal eigenvalues keep their basis order
        order.sort_by(|&a, &b| eig.eigenvalues[b].total_cmp(&eig.eigenvalues[a]));
        let coefficients = order[..count]
            .iter()
            .map(|&i| {
                let mut g: Vec<f64> = eig.eigenvectors.column(i).iter().copied().collect();
                canonical_sign(&mut g);
                g
            })
            .collect();
        Self::from_coefficients(cap_angle, coefficients, grid)
    }

    pub fn from_params(params: &TaperParams, grid: &SphericalGrid) -> Result<Self> {
        Self::build(params.cap_angle, params.bandwidth, params.resolved_count(), grid)
    }

    /// Assembles a bank from known coefficient vectors; concentrations are
    /// recomputed as `gᵀ D g`.
    pub fn from_coefficients(cap_angle: f64, coefficients: Vec<Vec<f64>>, grid: &SphericalGrid) -> Result<Self> {
        let taper_bandwidth = coefficients.first().map(|c| c.len()).unwrap_or(0);
        validate(cap_angle, taper_bandwidth, coefficients.len(), grid)?;
        if coefficients.iter().any(|c| c.len() != taper_bandwidth) {
            return Err(Error::shape("taper coefficient vectors differ in length"));
        }
        let kernel = cap_kernel(cap_angle, taper_bandwidth);
        let concentrations = coefficients
            .iter()
            .map(|g| {
                let v = nalgebra::DVector::from_column_slice(g);
                let energy = v.dot(&v);
                // round-off can push the ratio just outside (0, 1]
                ((v.transpose() * &kernel * &v)[(0, 0)] / energy).clamp(f64::MIN_POSITIVE, 1.0)
            })
            .collect();
        let ring_values = coefficients
            .iter()
            .map(|g| {
                grid.colatitudes()
                    .iter()
                    .map(|t| {
                        zonal_basis(taper_bandwidth, t.cos())
                            .iter()
                            .zip(g)
                            .map(|(y, c)| y * c)
                            .sum()
                    })
                    .collect()
            })
            .collect();
        Ok(Self {
            cap_angle,
            taper_bandwidth,
            grid_bandwidth: grid.bandwidth(),
            coefficients,
            concentrations,
            ring_values,
        })
    }

    pub fn cap_angle(&self) -> f64 {
        self.cap_angle
    }

    pub fn taper_bandwidth(&self) -> usize {
        self.taper_bandwidth
    }

    pub fn grid_bandwidth(&self) -> usize {
        self.grid_bandwidth
    }

    pub fn len(&self) -> usize {
        self.coefficients.len()
    }

    pub fn is_empty(&self) -> bool {
        self.coefficients.is_empty()
    }

    /// Zonal coefficients `g_l` of taper `i`.
    pub fn coefficients(&self, i: usize) -> &[f64] {
        &self.coefficients[i]
    }

    pub fn concentrations(&self) -> &[f64] {
        &self.concentrations
    }

    /// Value of taper `i` on every ring of the grid.
    pub fn ring_values(&self, i: usize) -> &[f64] {
        &self.ring_values[i]
    }

    /// Taper `i` sampled on the full grid.
    pub fn sampled(&self, i: usize) -> Channel {
        let side = 2 * self.grid_bandwidth;
        let data = self.ring_values[i]
            .iter()
            .flat_map(|v| std::iter::repeat_n(*v, side))
            .collect();
        Channel::from_vec(self.grid_bandwidth, data).expect("grid-sized")
    }

    /// Pointwise product of `channel` with taper `i`.
    pub fn apply(&self, channel: &Channel, i: usize) -> Result<Channel> {
        if channel.bandwidth() != self.grid_bandwidth {
            return Err(Error::shape(format!(
                "channel bandwidth {} but taper grid bandwidth {}",
                channel.bandwidth(),
                self.grid_bandwidth
            )));
        }
        let side = channel.side();
        let data = channel
            .as_slice()
            .chunks_exact(side)
            .zip(&self.ring_values[i])
            .flat_map(|(ring, h)| ring.iter().map(move |v| v * h))
            .collect();
        Channel::from_vec(self.grid_bandwidth, data)
    }

    /// `TAPR` binary: magic, u16 version, f64 θ0, u16 L_h, u16 n, then
    /// `n × L_h` f64 coefficients, all little-endian.
    pub fn to_bytes(&self) -> Result<Vec<u8>> {
        let mut out = Vec::new();
        out.extend_from_slice(TAPER_MAGIC);
        out.put_u16(TAPER_VERSION);
        out.put_f64(self.cap_angle);
        out.put_u16(checked_u16(self.taper_bandwidth, "taper bandwidth")?);
        out.put_u16(checked_u16(self.len(), "taper count")?);
        for g in &self.coefficients {
            for c in g {
                out.put_f64(*c);
            }
        }
        Ok(out)
    }

    /// Parses a `TAPR` file and resamples the tapers on `grid`.
    pub fn from_bytes(bytes: &[u8], grid: &SphericalGrid) -> Result<Self> {
        let mut r = Reader::new(bytes);
        r.expect_magic(TAPER_MAGIC)?;
        let version = r.u16("version")?;
        if version != TAPER_VERSION {
            return Err(Error::UnsupportedVersion {
                what: "taper file",
                found: version.into(),
                expected: TAPER_VERSION.into(),
            });
        }
        let cap_angle = r.f64("cap angle")?;
        let lh = r.u16("taper bandwidth")? as usize;
        let n = r.u16("taper count")? as usize;
        let coefficients = (0..n)
            .map(|i| r.f64_vec(lh, &format!("taper {i}")))
            .collect::<Result<Vec<_>>>()?;
        r.finish()?;
        Self::from_coefficients(cap_angle, coefficients, grid)
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        std::fs::write(path, self.to_bytes()?)?;
        Ok(())
    }

    pub fn load(path: impl AsRef<Path>, grid: &SphericalGrid) -> Result<Self> {
        Self::from_bytes(&std::fs::read(path)?, grid)
    }
}

fn validate(cap_angle: f64, taper_bandwidth: usize, count: usize, grid: &SphericalGrid) -> Result<()> {
    if !(cap_angle > 0.0 && cap_angle <= PI) {
        return Err(Error::invalid(format!("cap angle {cap_angle} outside (0, π]")));
    }
    if count == 0 {
        return Err(Error::invalid("taper bank must hold at least one taper"));
    }
    if count > taper_bandwidth {
        return Err(Error::invalid(format!(
            "{count} tapers requested but taper bandwidth is {taper_bandwidth}"
        )));
    }
    if taper_bandwidth > grid.bandwidth() {
        return Err(Error::invalid(format!(
            "taper bandwidth {taper_bandwidth} exceeds grid bandwidth {}",
            grid.bandwidth()
        )));
    }
    Ok(())
}

/// Makes the value at the north pole positive, falling back to the first
/// non-negligible coefficient.
fn canonical_sign(g: &mut [f64]) {
    let pole: f64 = g.iter().enumerate().map(|(l, c)| c * zonal_norm(l)).sum();
    let sign = if pole.abs() > 1e-10 {
        pole.signum()
    } else {
        g.iter().find(|c| c.abs() > 1e-12).map_or(1.0, |c| c.signum())
    };
    if sign < 0.0 {
        g.iter_mut().for_each(|c| *c = -*c);
    }
}

/// Windowed, fused spectra of one feature sphere, one entry per taper.
#[derive(Debug, Clone)]
pub struct TaperedSpectra {
    fused: Vec<Spectrum>,
    powers: Vec<Vec<f64>>,
}

impl TaperedSpectra {
    /// Wraps per-taper fused spectra, all truncated to `lmax` degrees.
    pub fn from_fused(fused: Vec<Spectrum>, lmax: usize) -> Self {
        let powers = fused.iter().map(|f| power_spectrum(f, lmax)).collect();
        Self { fused, powers }
    }

    pub fn powers(&self) -> &[Vec<f64>] {
        &self.powers
    }

    pub fn fused(&self) -> &[Spectrum] {
        &self.fused
    }
}

/// Multitaper cross-spectral correlation between feature spheres.
///
/// Each modality channel is windowed by every taper and transformed up to
/// `lmax`; the per-degree fusion picks, for each taper, the modality with the
/// highest power (optionally measured on the standardized channel). The
/// per-taper correlations `Q_i(l)` are averaged.
#[derive(Debug)]
pub struct MultitaperAnalyzer {
    plan: ShtPlan,
    bank: TaperBank,
    lmax: usize,
    standardize: bool,
}

impl MultitaperAnalyzer {
    pub fn new(grid: &SphericalGrid, bank: TaperBank, lmax: usize, standardize: bool) -> Result<Self> {
        if bank.is_empty() {
            return Err(Error::invalid("empty taper bank"));
        }
        if bank.grid_bandwidth() != grid.bandwidth() {
            return Err(Error::shape("taper bank sampled on a different grid"));
        }
        if lmax == 0 || lmax > grid.bandwidth() {
            return Err(Error::invalid(format!(
                "evaluation degree limit {lmax} outside [1, {}]",
                grid.bandwidth()
            )));
        }
        Ok(Self {
            plan: ShtPlan::new(grid),
            bank,
            lmax,
            standardize,
        })
    }

    pub fn bank(&self) -> &TaperBank {
        &self.bank
    }

    pub fn lmax(&self) -> usize {
        self.lmax
    }

    pub fn prepare(&self, sphere: &FeatureSphere) -> Result<TaperedSpectra> {
        if sphere.bandwidth() != self.plan.grid().bandwidth() {
            return Err(Error::shape("feature sphere sampled on a different grid"));
        }
        let raw: Vec<&Channel> = Modality::ALL.iter().map(|m| sphere.channel(*m)).collect();
        let standardized: Vec<Channel> = if self.standardize {
            raw.iter().map(|c| c.standardized()).collect()
        } else {
            Vec::new()
        };
        let mut fused = Vec::with_capacity(self.bank.len());
        let mut powers = Vec::with_capacity(self.bank.len());
        for i in 0..self.bank.len() {
            let spectra = raw
                .iter()
                .map(|c| self.plan.forward(&self.bank.apply(c, i)?, self.lmax))
                .collect::<Result<Vec<_>>>()?;
            let f = if self.standardize {
                let selectors = standardized
                    .iter()
                    .map(|c| self.plan.forward(&self.bank.apply(c, i)?, self.lmax))
                    .collect::<Result<Vec<_>>>()?;
                fuse_spectra_by(&spectra, &selectors, self.lmax)?
            } else {
                fuse_spectra_by(&spectra, &spectra, self.lmax)?
            };
            powers.push(power_spectrum(&f, self.lmax));
            fused.push(f);
        }
        Ok(TaperedSpectra { fused, powers })
    }

    /// Prepares a single channel (no fusion).
    pub fn prepare_channel(&self, channel: &Channel) -> Result<TaperedSpectra> {
        let mut fused = Vec::with_capacity(self.bank.len());
        let mut powers = Vec::with_capacity(self.bank.len());
        for i in 0..self.bank.len() {
            let s = self.plan.forward(&self.bank.apply(channel, i)?, self.lmax)?;
            powers.push(power_spectrum(&s, self.lmax));
            fused.push(s);
        }
        Ok(TaperedSpectra { fused, powers })
    }

    /// `Q̄(l) = (1/n) Σ_i Q_i(l)` for `l < lmax`.
    pub fn correlate(&self, f: &TaperedSpectra, g: &TaperedSpectra) -> Vec<f64> {
        let n = f.fused.len();
        let mut mean = vec![0.0; self.lmax];
        for i in 0..n {
            let s_fg = cross_power_spectrum(&f.fused[i], &g.fused[i], self.lmax).expect("equal bandwidths");
            let q = degree_correlation(&f.powers[i], &g.powers[i], &s_fg);
            for (m, v) in mean.iter_mut().zip(q) {
                *m += v;
            }
        }
        mean.iter_mut().for_each(|v| *v /= n as f64);
        mean
    }
}

/// One-shot multitaper correlation of two feature spheres.
pub fn multitaper_correlation(
    f: &FeatureSphere,
    g: &FeatureSphere,
    bank: &TaperBank,
    grid: &SphericalGrid,
    lmax: usize,
    standardize: bool,
) -> Result<Vec<f64>> {
    let analyzer = MultitaperAnalyzer::new(grid, bank.clone(), lmax, standardize)?;
    Ok(analyzer.correlate(&analyzer.prepare(f)?, &analyzer.prepare(g)?))
}

/// One-shot multitaper correlation of two already fused channels.
pub fn multitaper_correlation_channels(
    f: &Channel,
    g: &Channel,
    bank: &TaperBank,
    grid: &SphericalGrid,
    lmax: usize,
) -> Result<Vec<f64>> {
    f.check_grid(grid)?;
    g.check_grid(grid)?;
    let analyzer = MultitaperAnalyzer::new(grid, bank.clone(), lmax, false)?;
    Ok(analyzer.correlate(&analyzer.prepare_channel(f)?, &analyzer.prepare_channel(g)?))
}
