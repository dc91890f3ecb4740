//! Driscoll–Healy equiangular sampling grids and real-valued grid channels.
//!
//! A grid of bandwidth `B` has `2B` colatitude rings `θ_j = πj/(2B)` and `2B`
//! azimuth columns `φ_k = πk/B`. Channels are stored ring-major: sample
//! `(j, k)` lives at `j * 2B + k`.

use std::f64::consts::PI;

use nalgebra::Vector3;

use crate::error::{Error, Result};

pub const MAX_BANDWIDTH: usize = 512;

#[derive(Debug, Clone, PartialEq)]
pub struct SphericalGrid {
    bandwidth: usize,
    colatitudes: Vec<f64>,
    azimuths: Vec<f64>,
    weights: Vec<f64>,
}

impl SphericalGrid {
    pub fn new(bandwidth: usize) -> Result<Self> {
        if bandwidth == 0 || bandwidth > MAX_BANDWIDTH {
            return Err(Error::invalid(format!(
                "bandwidth {bandwidth} outside [1, {MAX_BANDWIDTH}]"
            )));
        }
        let b = bandwidth as f64;
        let n = 2 * bandwidth;
        let colatitudes: Vec<f64> = (0..n).map(|j| PI * j as f64 / (2.0 * b)).collect();
        let azimuths: Vec<f64> = (0..n).map(|k| PI * k as f64 / b).collect();
        let weights = colatitudes
            .iter()
            .map(|&theta| {
                let series: f64 = (0..bandwidth)
                    .map(|q| {
                        let odd = (2 * q + 1) as f64;
                        (odd * theta).sin() / odd
                    })
                    .sum();
                (2.0 / b) * theta.sin() * series
            })
            .collect();
        Ok(Self {
            bandwidth,
            colatitudes,
            azimuths,
            weights,
        })
    }

    #[inline]
    pub fn bandwidth(&self) -> usize {
        self.bandwidth
    }

    /// Number of rings (and of columns): `2B`.
    #[inline]
    pub fn side(&self) -> usize {
        2 * self.bandwidth
    }

    #[inline]
    pub fn len(&self) -> usize {
        self.side() * self.side()
    }

    #[inline]
    pub fn is_empty(&self) -> bool {
        false
    }

    pub fn colatitudes(&self) -> &[f64] {
        &self.colatitudes
    }

    pub fn azimuths(&self) -> &[f64] {
        &self.azimuths
    }

    /// Per-ring quadrature weights; they sum to 2 (the integral of `sin θ`).
    pub fn weights(&self) -> &[f64] {
        &self.weights
    }

    /// Azimuthal spacing `π/B`.
    #[inline]
    pub fn azimuth_step(&self) -> f64 {
        PI / self.bandwidth as f64
    }

    /// Unit direction of sample `(j, k)`.
    pub fn direction(&self, ring: usize, column: usize) -> Vector3<f64> {
        let (st, ct) = self.colatitudes[ring].sin_cos();
        let (sp, cp) = self.azimuths[column].sin_cos();
        Vector3::new(st * cp, st * sp, ct)
    }

    /// All sample directions in storage order.
    pub fn directions(&self) -> Vec<Vector3<f64>> {
        let side = self.side();
        let mut out = Vec::with_capacity(self.len());
        for j in 0..side {
            for k in 0..side {
                out.push(self.direction(j, k));
            }
        }
        out
    }

    /// Quadrature of a sampled function over the sphere.
    pub fn integrate(&self, values: &[f64]) -> f64 {
        let side = self.side();
        let dphi = self.azimuth_step();
        values
            .chunks_exact(side)
            .zip(&self.weights)
            .map(|(ring, w)| w * dphi * ring.iter().sum::<f64>())
            .sum()
    }

    pub fn zeros(&self) -> Channel {
        Channel::zeros(self.bandwidth)
    }
}

/// A real function sampled on a `2B × 2B` grid.
#[derive(Debug, Clone, PartialEq)]
pub struct Channel {
    bandwidth: usize,
    data: Vec<f64>,
}

impl Channel {
    pub fn zeros(bandwidth: usize) -> Self {
        Self {
            bandwidth,
            data: vec![0.0; 4 * bandwidth * bandwidth],
        }
    }

    pub fn from_vec(bandwidth: usize, data: Vec<f64>) -> Result<Self> {
        let expected = 4 * bandwidth * bandwidth;
        if data.len() != expected {
            return Err(Error::shape(format!(
                "channel of {} samples does not fit a {}x{} grid",
                data.len(),
                2 * bandwidth,
                2 * bandwidth
            )));
        }
        Ok(Self { bandwidth, data })
    }

    /// Samples `f(θ, φ)` on every grid point.
    pub fn from_fn(grid: &SphericalGrid, mut f: impl FnMut(f64, f64) -> f64) -> Self {
        let mut data = Vec::with_capacity(grid.len());
        for &theta in grid.colatitudes() {
            for &phi in grid.azimuths() {
                data.push(f(theta, phi));
            }
        }
        Self {
            bandwidth: grid.bandwidth(),
            data,
        }
    }

    #[inline]
    pub fn bandwidth(&self) -> usize {
        self.bandwidth
    }

    #[inline]
    pub fn side(&self) -> usize {
        2 * self.bandwidth
    }

    /// `(rows, cols)`
    pub fn shape(&self) -> (usize, usize) {
        (self.side(), self.side())
    }

    pub fn as_slice(&self) -> &[f64] {
        &self.data
    }

    pub fn as_mut_slice(&mut self) -> &mut [f64] {
        &mut self.data
    }

    pub fn into_vec(self) -> Vec<f64> {
        self.data
    }

    #[inline]
    pub fn get(&self, ring: usize, column: usize) -> f64 {
        self.data[ring * self.side() + column]
    }

    #[inline]
    pub fn set(&mut self, ring: usize, column: usize, value: f64) {
        let side = self.side();
        self.data[ring * side + column] = value;
    }

    pub fn ring(&self, ring: usize) -> &[f64] {
        let side = self.side();
        &self.data[ring * side..(ring + 1) * side]
    }

    pub fn check_grid(&self, grid: &SphericalGrid) -> Result<()> {
        if self.bandwidth != grid.bandwidth() {
            return Err(Error::shape(format!(
                "channel is {0}x{0} but grid is {1}x{1}",
                self.side(),
                grid.side()
            )));
        }
        Ok(())
    }

    /// Cyclic shift of every ring by `steps` columns: the result at column
    /// `k` holds the input at column `k - steps`. This is the exact grid
    /// rotation about the polar axis by `steps · π/B`.
    pub fn roll_columns(&self, steps: isize) -> Self {
        let side = self.side();
        let shift = steps.rem_euclid(side as isize) as usize;
        let mut data = vec![0.0; self.data.len()];
        for (src, dst) in self.data.chunks_exact(side).zip(data.chunks_exact_mut(side)) {
            for k in 0..side {
                dst[(k + shift) % side] = src[k];
            }
        }
        Self {
            bandwidth: self.bandwidth,
            data,
        }
    }

    pub fn scaled(&self, factor: f64) -> Self {
        Self {
            bandwidth: self.bandwidth,
            data: self.data.iter().map(|v| v * factor).collect(),
        }
    }

    /// Zero-mean, unit-variance rescaling over the non-zero support.
    /// Cells outside the support stay zero; a channel with fewer than two
    /// support cells or zero variance is returned unchanged.
    pub fn standardized(&self) -> Self {
        let support: Vec<f64> = self.data.iter().copied().filter(|v| *v != 0.0).collect();
        if support.len() < 2 {
            return self.clone();
        }
        let n = support.len() as f64;
        let mean = support.iter().sum::<f64>() / n;
        let var = support.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / n;
        if var <= f64::EPSILON * mean.abs().max(1.0) {
            return self.clone();
        }
        let inv_std = var.sqrt().recip();
        let data = self
            .data
            .iter()
            .map(|&v| if v == 0.0 { 0.0 } else { (v - mean) * inv_std })
            .collect();
        Self {
            bandwidth: self.bandwidth,
            data,
        }
    }

    pub fn count_nonzero(&self) -> usize {
        self.data.iter().filter(|v| **v != 0.0).count()
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn bandwidth_one_grid() {
        let grid = SphericalGrid::new(1).unwrap();
        assert_eq!(grid.colatitudes(), &[0.0, PI / 2.0]);
        assert_eq!(grid.azimuths(), &[0.0, PI]);
        assert_eq!(grid.len(), 4);
    }

    #[test]
    fn default_grid_is_200_by_200() {
        let grid = SphericalGrid::new(100).unwrap();
        assert_eq!(grid.side(), 200);
        assert_eq!(grid.directions().len(), 40_000);
    }

    #[test]
    fn rejects_out_of_range_bandwidth() {
        assert!(matches!(SphericalGrid::new(0), Err(Error::InvalidParameter(_))));
        assert!(matches!(SphericalGrid::new(513), Err(Error::InvalidParameter(_))));
        assert!(SphericalGrid::new(512).is_ok());
    }

    #[test]
    fn constant_quadrature_is_sphere_area() {
        for b in [1, 2, 7, 16, 64, 100] {
            let grid = SphericalGrid::new(b).unwrap();
            let area = grid.weights().iter().sum::<f64>() * (2.0 * PI / (2 * b) as f64) * (2 * b) as f64;
            assert!((area - 4.0 * PI).abs() / (4.0 * PI) < 1e-8, "B={b}: {area}");
            let ones = vec![1.0; grid.len()];
            assert!((grid.integrate(&ones) - 4.0 * PI).abs() < 1e-10);
        }
    }

    #[test]
    fn quadrature_integrates_polynomials_in_cos_theta() {
        // ∫ cos^p θ dΩ = 4π/(p+1) for even p, 0 for odd p; exact below degree 2B.
        let grid = SphericalGrid::new(8).unwrap();
        for p in 0..16 {
            let f = Channel::from_fn(&grid, |t, _| t.cos().powi(p));
            let expected = if p % 2 == 0 { 4.0 * PI / (p as f64 + 1.0) } else { 0.0 };
            assert!((grid.integrate(f.as_slice()) - expected).abs() < 1e-12, "p={p}");
        }
    }

    #[test]
    fn coordinates_strictly_increasing() {
        let grid = SphericalGrid::new(13).unwrap();
        assert!(grid.colatitudes().windows(2).all(|w| w[0] < w[1]));
        assert!(grid.azimuths().windows(2).all(|w| w[0] < w[1]));
        assert!(*grid.colatitudes().last().unwrap() < PI);
        assert!(*grid.azimuths().last().unwrap() < 2.0 * PI);
    }

    #[test]
    fn roll_columns_wraps() {
        let c = Channel::from_vec(1, vec![1.0, 2.0, 3.0, 4.0]).unwrap();
        assert_eq!(c.roll_columns(1).as_slice(), &[2.0, 1.0, 4.0, 3.0]);
        assert_eq!(c.roll_columns(-3).as_slice(), c.roll_columns(1).as_slice());
    }

    #[test]
    fn standardize_ignores_empty_cells() {
        let c = Channel::from_vec(1, vec![0.0, 2.0, 4.0, 0.0]).unwrap();
        let s = c.standardized();
        assert_eq!(s.as_slice(), &[0.0, -1.0, 1.0, 0.0]);
        let z = Channel::zeros(2);
        assert_eq!(z.standardized(), z);
    }
}
