//! Uniform cell-centered grids and the nested measurement geometry.
//!
//! Three radii are carried everywhere: the measurement surface radius
//! `r_omega` (sources live strictly inside it), the recovery ball radius `r0`
//! and the truncation radius `r_sim` of the computational box, with
//! `r_omega < r0 < r_sim`. Full runs use `dim == 3`; the radially symmetric
//! reduction uses `dim == 1` with cells at `r_i = (i + 1/2) h`.
//!
//! The measurement surface is sampled as the set of cell faces separating
//! inside-Omega cells from outside-Omega cells; a trace sample on a face is
//! the average of the two adjacent cell values (second order at the face
//! midpoint).

use crate::error::{Error, Result};

/// Shape of the source region Omega (centered at the origin).
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum OmegaShape {
    /// Ball of radius `r_omega` (the default).
    Ball,
    /// Axis-aligned cube of half-width `r_omega`.
    Box,
}

/// Geometry of a uniform cell-centered grid together with the nested radii.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct GridSpec {
    /// 3 for full runs, 1 for the radial reduction.
    pub dim: usize,
    /// Cells per axis.
    pub n: usize,
    /// Cell spacing.
    pub h: f64,
    /// Radius (or half-width) of the source region Omega.
    pub r_omega: f64,
    /// Radius of the recovery ball; moments and spectral data live on it.
    pub r0: f64,
    /// Truncation radius of the simulated domain.
    pub r_sim: f64,
    /// Shape of Omega.
    pub omega: OmegaShape,
}

/// A face of the sampled measurement surface: the interface between a cell
/// inside Omega and its neighbor outside.
#[derive(Clone, Copy, Debug)]
pub struct Face {
    /// Flat index of the cell inside Omega.
    pub inner: usize,
    /// Flat index of the adjacent cell outside Omega.
    pub outer: usize,
    /// Axis (0..dim) the face is orthogonal to.
    pub axis: usize,
    /// +1 if the outward direction points along +axis, else -1.
    pub sign: f64,
    /// Coordinates of the face midpoint.
    pub midpoint: [f64; 3],
}

impl GridSpec {
    /// Full 3-d grid of `n^3` cells with spacing `h`, centered at the origin,
    /// with a ball-shaped Omega.
    pub fn cube(n: usize, h: f64, r_omega: f64, r0: f64, r_sim: f64) -> Result<Self> {
        Self::build(3, n, h, r_omega, r0, r_sim, OmegaShape::Ball)
    }

    /// Same as [`GridSpec::cube`] with a cube-shaped Omega of half-width
    /// `r_omega`. The corner of the cube must stay strictly inside the
    /// recovery ball.
    pub fn cube_with_box_omega(n: usize, h: f64, r_omega: f64, r0: f64, r_sim: f64) -> Result<Self> {
        if 3.0_f64.sqrt() * r_omega >= r0 {
            return Err(Error::InvalidGrid(format!(
                "box Omega corner sqrt(3)*{r_omega} reaches outside the recovery ball r0 = {r0}"
            )));
        }
        Self::build(3, n, h, r_omega, r0, r_sim, OmegaShape::Box)
    }

    /// Radial grid: cells at `r_i = (i + 1/2) h` covering `(0, n h]`.
    pub fn radial(n: usize, h: f64, r_omega: f64, r0: f64, r_sim: f64) -> Result<Self> {
        Self::build(1, n, h, r_omega, r0, r_sim, OmegaShape::Ball)
    }

    fn build(
        dim: usize,
        n: usize,
        h: f64,
        r_omega: f64,
        r0: f64,
        r_sim: f64,
        omega: OmegaShape,
    ) -> Result<Self> {
        if !(h > 0.0 && h.is_finite()) {
            return Err(Error::InvalidGrid(format!("spacing h = {h} must be positive")));
        }
        if n < 4 {
            return Err(Error::InvalidGrid(format!("n = {n} is too small (need >= 4)")));
        }
        if !(0.0 < r_omega && r_omega < r0 && r0 < r_sim) {
            return Err(Error::InvalidGrid(format!(
                "need 0 < r_omega < r0 < r_sim, got ({r_omega}, {r0}, {r_sim})"
            )));
        }
        let span = n as f64 * h;
        let needed = if dim == 3 { 2.0 * r_sim } else { r_sim };
        if span < needed - 1e-12 {
            return Err(Error::InvalidGrid(format!(
                "grid span {span} does not cover the truncated domain (need {needed})"
            )));
        }
        Ok(GridSpec { dim, n, h, r_omega, r0, r_sim, omega })
    }

    /// Total number of cells, `n^dim`.
    pub fn cell_count(&self) -> usize {
        self.n.pow(self.dim as u32)
    }

    /// Cell volume element used in quadrature, `h^dim`.
    pub fn cell_volume(&self) -> f64 {
        self.h.powi(self.dim as i32)
    }

    /// Half-extent of the 3-d box, `n h / 2`.
    pub fn half_extent(&self) -> f64 {
        0.5 * self.n as f64 * self.h
    }

    /// Coordinate of index `i` along one axis.
    #[inline]
    pub fn coord(&self, i: usize) -> f64 {
        if self.dim == 3 {
            (i as f64 + 0.5) * self.h - self.half_extent()
        } else {
            (i as f64 + 0.5) * self.h
        }
    }

    /// Flat index of cell `(i, j, k)`.
    #[inline]
    pub fn idx(&self, i: usize, j: usize, k: usize) -> usize {
        (i * self.n + j) * self.n + k
    }

    /// Inverse of [`GridSpec::idx`]; for `dim == 1` returns `[i, 0, 0]`.
    #[inline]
    pub fn decode(&self, cell: usize) -> [usize; 3] {
        if self.dim == 3 {
            let k = cell % self.n;
            let j = (cell / self.n) % self.n;
            let i = cell / (self.n * self.n);
            [i, j, k]
        } else {
            [cell, 0, 0]
        }
    }

    /// Center coordinates of a cell (radial grids report `[r, 0, 0]`).
    #[inline]
    pub fn center(&self, cell: usize) -> [f64; 3] {
        let ijk = self.decode(cell);
        if self.dim == 3 {
            [self.coord(ijk[0]), self.coord(ijk[1]), self.coord(ijk[2])]
        } else {
            [self.coord(ijk[0]), 0.0, 0.0]
        }
    }

    /// Distance of a cell center from the origin.
    #[inline]
    pub fn radius(&self, cell: usize) -> f64 {
        let c = self.center(cell);
        (c[0] * c[0] + c[1] * c[1] + c[2] * c[2]).sqrt()
    }

    /// Whether a cell center lies inside Omega.
    #[inline]
    pub fn inside_omega(&self, cell: usize) -> bool {
        match self.omega {
            OmegaShape::Ball => self.radius(cell) < self.r_omega,
            OmegaShape::Box => {
                let c = self.center(cell);
                c.iter().take(self.dim).all(|x| x.abs() < self.r_omega)
            }
        }
    }

    /// Flat indices of all cells with center strictly inside radius `r`.
    pub fn cells_within(&self, r: f64) -> Vec<usize> {
        (0..self.cell_count()).filter(|&c| self.radius(c) < r).collect()
    }

    /// Face-neighbor of `cell` along `axis` in direction `dir` (+1/-1), or
    /// `None` at the edge of the box.
    #[inline]
    pub fn neighbor(&self, cell: usize, axis: usize, dir: i64) -> Option<usize> {
        let ijk = self.decode(cell);
        let v = ijk[axis] as i64 + dir;
        if v < 0 || v >= self.n as i64 {
            return None;
        }
        let mut out = ijk;
        out[axis] = v as usize;
        Some(if self.dim == 3 { self.idx(out[0], out[1], out[2]) } else { out[0] })
    }

    /// Faces sampling the measurement surface: all interfaces between a cell
    /// inside Omega and a neighbor outside (including, at the box edge, none —
    /// Omega never touches the edge by the radius nesting).
    pub fn boundary_faces(&self) -> Vec<Face> {
        let mut faces = Vec::new();
        for cell in 0..self.cell_count() {
            if !self.inside_omega(cell) {
                continue;
            }
            for axis in 0..self.dim {
                for dir in [-1i64, 1] {
                    let Some(nb) = self.neighbor(cell, axis, dir) else { continue };
                    if self.inside_omega(nb) {
                        continue;
                    }
                    let mut midpoint = self.center(cell);
                    midpoint[axis] += 0.5 * dir as f64 * self.h;
                    faces.push(Face {
                        inner: cell,
                        outer: nb,
                        axis,
                        sign: dir as f64,
                        midpoint,
                    });
                }
            }
        }
        faces
    }

    /// Checks whether `cells` form a 6-connected set covering all of
    /// `universe` when flood-filled from `seed`. Used for the
    /// complement-connectivity hypothesis of the localized discriminator.
    pub fn connected(&self, universe: &[bool], seed: usize) -> bool {
        assert_eq!(universe.len(), self.cell_count());
        if !universe[seed] {
            return false;
        }
        let mut seen = vec![false; universe.len()];
        let mut stack = vec![seed];
        seen[seed] = true;
        let mut reached = 1usize;
        while let Some(c) = stack.pop() {
            for axis in 0..self.dim {
                for dir in [-1i64, 1] {
                    if let Some(nb) = self.neighbor(c, axis, dir) {
                        if universe[nb] && !seen[nb] {
                            seen[nb] = true;
                            reached += 1;
                            stack.push(nb);
                        }
                    }
                }
            }
        }
        reached == universe.iter().filter(|&&b| b).count()
    }
}

/// Trace samples on the measurement faces: average of the two adjacent cells.
pub fn face_trace(values: &[f64], faces: &[Face], out: &mut [f64]) {
    assert_eq!(faces.len(), out.len());
    for (o, f) in out.iter_mut().zip(faces) {
        *o = 0.5 * (values[f.inner] + values[f.outer]);
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn grid64() -> GridSpec {
        GridSpec::cube(64, 6.0 / 64.0, 1.0, 1.5, 3.0).unwrap()
    }

    #[test]
    fn rejects_bad_nesting() {
        assert!(GridSpec::cube(16, 0.5, 1.5, 1.0, 3.0).is_err());
        assert!(GridSpec::cube(16, 0.1, 1.0, 1.5, 3.0).is_err()); // span too small
        assert!(GridSpec::radial(16, 0.1, 1.0, 1.2, 1.5).is_ok());
    }

    #[test]
    fn box_omega_must_fit_inside_recovery_ball() {
        assert!(GridSpec::cube_with_box_omega(64, 6.0 / 64.0, 1.0, 1.5, 3.0).is_err());
        assert!(GridSpec::cube_with_box_omega(64, 6.0 / 64.0, 0.8, 1.5, 3.0).is_ok());
    }

    #[test]
    fn centers_are_symmetric_about_origin() {
        let g = grid64();
        // Cells come in +/- pairs, so the coordinate sum vanishes.
        let mut sx = 0.0;
        for i in 0..g.n {
            sx += g.coord(i);
        }
        assert!(sx.abs() < 1e-12);
    }

    #[test]
    fn decode_inverts_idx() {
        let g = grid64();
        for &(i, j, k) in &[(0, 0, 0), (5, 17, 63), (63, 0, 31)] {
            assert_eq!(g.decode(g.idx(i, j, k)), [i, j, k]);
        }
    }

    #[test]
    fn every_omega_cell_lies_inside_recovery_ball() {
        let g = grid64();
        for c in 0..g.cell_count() {
            if g.inside_omega(c) {
                assert!(g.radius(c) < g.r0);
            }
        }
    }

    #[test]
    fn boundary_faces_straddle_the_sphere() {
        let g = grid64();
        let faces = g.boundary_faces();
        assert!(!faces.is_empty());
        for f in &faces {
            assert!(g.radius(f.inner) < g.r_omega);
            assert!(g.radius(f.outer) >= g.r_omega);
            // Face midpoints sit within half a cell diagonal of the sphere.
            let r = (f.midpoint[0].powi(2) + f.midpoint[1].powi(2) + f.midpoint[2].powi(2)).sqrt();
            assert!((r - g.r_omega).abs() < g.h * 0.9);
        }
        // Staircase area tends to 1.5x the sphere area; just sanity-check the
        // count scale: area / h^2 within a broad window.
        let sphere_area = 4.0 * std::f64::consts::PI * g.r_omega * g.r_omega;
        let ratio = faces.len() as f64 * g.h * g.h / sphere_area;
        assert!(ratio > 1.0 && ratio < 2.0, "face-count ratio {ratio}");
    }

    #[test]
    fn ball_complement_is_connected_and_split_ball_is_not() {
        let g = GridSpec::cube(20, 0.32, 1.0, 1.5, 3.0).unwrap();
        let inside: Vec<bool> = (0..g.cell_count()).map(|c| g.radius(c) < g.r0).collect();
        let seed = inside.iter().position(|&b| b).unwrap();
        assert!(g.connected(&inside, seed));

        // Remove the central slab: the ball splits into two components.
        let mut cut = inside.clone();
        for c in 0..g.cell_count() {
            if g.center(c)[0].abs() < 0.32 {
                cut[c] = false;
            }
        }
        let seed = cut.iter().position(|&b| b).unwrap();
        assert!(!g.connected(&cut, seed));
    }

    #[test]
    fn radial_grid_centers() {
        let g = GridSpec::radial(32, 3.2 / 32.0, 1.0, 1.5, 3.0).unwrap();
        assert_eq!(g.cell_count(), 32);
        assert!((g.coord(0) - 0.05).abs() < 1e-15);
        assert!(g.radius(31) <= 3.2);
    }
}
