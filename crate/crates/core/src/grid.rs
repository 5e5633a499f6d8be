//! Uniform cell-centred grids on boxes in one or two dimensions, and the
//! two-point-flux diffusion operator with Robin boundary faces.

use crate::error::{Contract, Error, Result};
use crate::linalg::SymBand;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct InteriorFace {
    /// Lower-index cell.
    pub a: usize,
    /// Higher-index cell.
    pub b: usize,
    pub area: f64,
    /// Centre-to-centre distance.
    pub dist: f64,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct BoundaryFace {
    pub owner: usize,
    pub normal: [f64; 2],
    pub area: f64,
}

#[derive(Debug, Clone)]
pub struct Grid {
    dim: usize,
    lengths: Vec<f64>,
    cells: Vec<usize>,
    h: Vec<f64>,
    centers: Vec<[f64; 2]>,
    volumes: Vec<f64>,
    interior: Vec<InteriorFace>,
    boundary: Vec<BoundaryFace>,
}

impl Grid {
    /// Cells are numbered row-major: in 2D cell `(i, j)` has index `i * n1 + j`.
    pub fn build(dim: usize, lengths: &[f64], cells_per_axis: &[usize]) -> Result<Grid> {
        if dim != 1 && dim != 2 {
            return Err(Error::Config(format!("grid dimension must be 1 or 2, got {dim}")));
        }
        if lengths.len() != dim || cells_per_axis.len() != dim {
            return Err(Error::Config(format!(
                "expected {dim} lengths and cell counts, got {} and {}",
                lengths.len(),
                cells_per_axis.len()
            )));
        }
        if let Some(l) = lengths.iter().find(|l| !(**l > 0.0 && l.is_finite())) {
            return Err(Error::Config(format!("axis length must be positive, got {l}")));
        }
        if cells_per_axis.contains(&0) {
            return Err(Error::Config("cells per axis must be at least 1".into()));
        }
        let h: Vec<f64> = lengths.iter().zip(cells_per_axis).map(|(l, n)| l / *n as f64).collect();
        let (n0, n1) = if dim == 1 { (cells_per_axis[0], 1) } else { (cells_per_axis[0], cells_per_axis[1]) };
        let (h0, h1) = if dim == 1 { (h[0], 1.0) } else { (h[0], h[1]) };
        let vol = h0 * h1;
        let m = n0 * n1;
        let mut centers = Vec::with_capacity(m);
        for i in 0..n0 {
            for j in 0..n1 {
                let x = (i as f64 + 0.5) * h0;
                let y = if dim == 2 { (j as f64 + 0.5) * h1 } else { 0.0 };
                centers.push([x, y]);
            }
        }
        let mut interior = Vec::new();
        let mut boundary = Vec::new();
        for i in 0..n0 {
            for j in 0..n1 {
                let c = i * n1 + j;
                // Axis 0 faces have area h1 (1 in 1D), axis 1 faces have area h0.
                if i == 0 {
                    boundary.push(BoundaryFace { owner: c, normal: [-1.0, 0.0], area: h1 });
                }
                if i + 1 == n0 {
                    boundary.push(BoundaryFace { owner: c, normal: [1.0, 0.0], area: h1 });
                } else {
                    interior.push(InteriorFace { a: c, b: c + n1, area: h1, dist: h0 });
                }
                if dim == 2 {
                    if j == 0 {
                        boundary.push(BoundaryFace { owner: c, normal: [0.0, -1.0], area: h0 });
                    }
                    if j + 1 == n1 {
                        boundary.push(BoundaryFace { owner: c, normal: [0.0, 1.0], area: h0 });
                    } else {
                        interior.push(InteriorFace { a: c, b: c + 1, area: h0, dist: h1 });
                    }
                }
            }
        }
        Ok(Grid {
            dim,
            lengths: lengths.to_vec(),
            cells: cells_per_axis.to_vec(),
            h,
            centers,
            volumes: vec![vol; m],
            interior,
            boundary,
        })
    }

    pub fn dim(&self) -> usize {
        self.dim
    }
    pub fn lengths(&self) -> &[f64] {
        &self.lengths
    }
    pub fn cells_per_axis(&self) -> &[usize] {
        &self.cells
    }
    pub fn h(&self) -> &[f64] {
        &self.h
    }
    pub fn len(&self) -> usize {
        self.volumes.len()
    }
    pub fn is_empty(&self) -> bool {
        self.volumes.is_empty()
    }
    pub fn centers(&self) -> &[[f64; 2]] {
        &self.centers
    }
    pub fn volumes(&self) -> &[f64] {
        &self.volumes
    }
    pub fn interior_faces(&self) -> &[InteriorFace] {
        &self.interior
    }
    pub fn boundary_faces(&self) -> &[BoundaryFace] {
        &self.boundary
    }
    pub fn measure(&self) -> f64 {
        self.lengths.iter().product()
    }

    /// Bandwidth of the cell adjacency in row-major numbering.
    pub fn bandwidth(&self) -> usize {
        if self.dim == 1 {
            1
        } else {
            self.cells[1]
        }
    }

    /// Volume-weighted sum with index-ascending accumulation.
    pub fn integrate(&self, f: &[f64]) -> f64 {
        self.volumes.iter().zip(f).map(|(w, v)| w * v).sum()
    }
}

/// Time profile of the external temperature: `theta_gamma(t) = base * (1 + ramp * t)`.
#[derive(Debug, Clone)]
pub struct BoundaryData {
    pub gamma: Vec<f64>,
    pub theta_gamma: Vec<f64>,
    pub ramp: f64,
}

impl BoundaryData {
    pub fn uniform(grid: &Grid, gamma: f64, theta_gamma: f64) -> Self {
        let nf = grid.boundary_faces().len();
        BoundaryData {
            gamma: vec![gamma; nf],
            theta_gamma: vec![theta_gamma; nf],
            ramp: 0.0,
        }
    }

    pub fn validate(&self, grid: &Grid, horizon: f64) -> Result<()> {
        let nf = grid.boundary_faces().len();
        if self.gamma.len() != nf || self.theta_gamma.len() != nf {
            return Err(Error::Config(format!(
                "boundary data must have {nf} faces, got {} and {}",
                self.gamma.len(),
                self.theta_gamma.len()
            )));
        }
        if let Some(g) = self.gamma.iter().find(|g| !(**g >= 0.0 && g.is_finite())) {
            return Err(Error::Config(format!("heat transfer coefficient must be nonnegative, got {g}")));
        }
        for t in [0.0, horizon] {
            if let Some(v) = self.theta_at(t).iter().find(|v| !(**v > 0.0 && v.is_finite())) {
                return Err(Error::Config(format!("external temperature must be positive, got {v} at t={t}")));
            }
        }
        Ok(())
    }

    pub fn theta_at(&self, t: f64) -> Vec<f64> {
        self.theta_gamma.iter().map(|b| b * (1.0 + self.ramp * t)).collect()
    }

    pub fn is_insulated(&self) -> bool {
        self.gamma.iter().all(|g| *g == 0.0)
    }
}

/// Harmonic mean of two cell conductivities.
pub fn harmonic_mean(a: f64, b: f64) -> f64 {
    if a + b == 0.0 {
        0.0
    } else {
        2.0 * a * b / (a + b)
    }
}

/// Assembled `-div(k grad)` plus the Robin term, stored as face
/// transmissibilities. `apply` returns per-volume values; the unscaled
/// form is the symmetric matrix used by the implicit solver.
#[derive(Debug, Clone)]
pub struct DiffusionOperator {
    volumes: Vec<f64>,
    faces: Vec<(usize, usize, f64)>,
    robin: Vec<(usize, usize, f64)>,
    bandwidth: usize,
}

impl DiffusionOperator {
    /// `face_k` holds one conductivity per interior face, in grid order.
    pub fn assemble(grid: &Grid, face_k: &[f64], boundary: &BoundaryData, k_bounds: (f64, f64)) -> Result<Self> {
        if face_k.len() != grid.interior_faces().len() {
            return Err(Error::Usage(format!(
                "expected {} face conductivities, got {}",
                grid.interior_faces().len(),
                face_k.len()
            )));
        }
        let (k0, k1) = k_bounds;
        let tol = 1e-12 * k1.abs().max(1.0);
        let mut faces = Vec::with_capacity(face_k.len());
        for (f, &k) in grid.interior_faces().iter().zip(face_k) {
            if !(k >= k0 - tol && k <= k1 + tol) {
                return Err(Error::contract(
                    Contract::ConductivityBounds,
                    format!("face conductivity {k} outside [{k0}, {k1}] between cells {} and {}", f.a, f.b),
                ));
            }
            faces.push((f.a, f.b, k * f.area / f.dist));
        }
        let robin = grid
            .boundary_faces()
            .iter()
            .zip(&boundary.gamma)
            .enumerate()
            .filter(|(_, (_, g))| **g > 0.0)
            .map(|(fi, (f, g))| (fi, f.owner, g * f.area))
            .collect();
        Ok(DiffusionOperator {
            volumes: grid.volumes().to_vec(),
            faces,
            robin,
            bandwidth: grid.bandwidth(),
        })
    }

    /// Face conductivities by harmonic mean of cell values.
    pub fn face_conductivities(grid: &Grid, cell_k: &[f64]) -> Vec<f64> {
        grid.interior_faces().iter().map(|f| harmonic_mean(cell_k[f.a], cell_k[f.b])).collect()
    }

    /// Unscaled conduction part, without Robin terms.
    pub fn flux_sum(&self, theta: &[f64]) -> Vec<f64> {
        let mut out = vec![0.0; self.volumes.len()];
        for &(a, b, t) in &self.faces {
            let q = t * (theta[a] - theta[b]);
            out[a] += q;
            out[b] -= q;
        }
        out
    }

    /// Unscaled Robin contribution `gamma * area * (theta - theta_gamma)`,
    /// evaluated with the owner cell value.
    pub fn robin_sum(&self, theta: &[f64], theta_gamma_faces: &[f64]) -> Vec<f64> {
        let mut out = vec![0.0; self.volumes.len()];
        for &(fi, c, w) in &self.robin {
            out[c] += w * (theta[c] - theta_gamma_faces[fi]);
        }
        out
    }

    /// Unscaled source `gamma * area * theta_gamma` collected per cell.
    pub fn robin_source(&self, theta_gamma_faces: &[f64]) -> Vec<f64> {
        let mut out = vec![0.0; self.volumes.len()];
        for &(fi, c, w) in &self.robin {
            out[c] += w * theta_gamma_faces[fi];
        }
        out
    }

    /// `(-div(k grad theta) + robin)` per unit volume.
    pub fn apply(&self, theta: &[f64], robin_terms: Option<&[f64]>) -> Vec<f64> {
        let mut out = self.flux_sum(theta);
        if let Some(r) = robin_terms {
            for (o, v) in out.iter_mut().zip(r) {
                *o += v;
            }
        }
        out.iter().zip(&self.volumes).map(|(v, w)| v / w).collect()
    }

    /// Symmetric matrix of the conduction part plus `gamma * area` on the diagonal.
    pub fn matrix(&self) -> SymBand {
        let n = self.volumes.len();
        let mut m = SymBand::zeros(n, self.bandwidth.min(n.saturating_sub(1)).max(1));
        for &(a, b, t) in &self.faces {
            m.add(a, a, t);
            m.add(b, b, t);
            m.add(b, a, -t);
        }
        for &(_, c, w) in &self.robin {
            m.add(c, c, w);
        }
        m
    }

    pub fn faces(&self) -> &[(usize, usize, f64)] {
        &self.faces
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn one_dimensional_partition() {
        let g = Grid::build(1, &[1.0], &[4]).unwrap();
        let xs: Vec<f64> = g.centers().iter().map(|c| c[0]).collect();
        assert_eq!(xs, vec![0.125, 0.375, 0.625, 0.875]);
        assert!(g.volumes().iter().all(|v| *v == 0.25));
        assert_eq!(g.boundary_faces().len(), 2);
    }

    #[test]
    fn two_dimensional_partition() {
        let g = Grid::build(2, &[1.0, 1.0], &[2, 2]).unwrap();
        assert_eq!(g.len(), 4);
        assert!(g.volumes().iter().all(|v| *v == 0.25));
        assert_eq!(g.boundary_faces().len(), 8);
        assert!(g.boundary_faces().iter().all(|f| f.area == 0.5));
        assert_eq!(g.interior_faces().len(), 4);
    }

    #[test]
    fn rejects_bad_input() {
        assert!(Grid::build(3, &[1.0; 3], &[2; 3]).is_err());
        assert!(Grid::build(1, &[0.0], &[2]).is_err());
        assert!(Grid::build(1, &[-1.0], &[2]).is_err());
        assert!(Grid::build(2, &[1.0, 1.0], &[2, 0]).is_err());
    }

    #[test]
    fn two_cell_flux() {
        let g = Grid::build(1, &[1.0], &[2]).unwrap();
        let bd = BoundaryData::uniform(&g, 0.0, 1.0);
        let op = DiffusionOperator::assemble(&g, &[1.0], &bd, (0.5, 2.0)).unwrap();
        let div = op.apply(&[0.0, 1.0], None);
        // div(k grad theta) = -apply
        assert_eq!(div.iter().map(|v| -v).collect::<Vec<_>>(), vec![4.0, -4.0]);
    }

    #[test]
    fn conductivity_out_of_bounds_is_named() {
        let g = Grid::build(1, &[1.0], &[2]).unwrap();
        let bd = BoundaryData::uniform(&g, 0.0, 1.0);
        match DiffusionOperator::assemble(&g, &[3.0], &bd, (0.5, 2.0)) {
            Err(Error::ModelContract { contract, .. }) => assert_eq!(contract, Contract::ConductivityBounds),
            other => panic!("unexpected {other:?}"),
        }
    }

    #[test]
    fn robin_equilibrium() {
        let g = Grid::build(2, &[1.0, 2.0], &[3, 4]).unwrap();
        let bd = BoundaryData::uniform(&g, 1.0, 1.7);
        let k = vec![1.0; g.interior_faces().len()];
        let op = DiffusionOperator::assemble(&g, &k, &bd, (0.5, 2.0)).unwrap();
        let th = vec![1.7; g.len()];
        let r = op.robin_sum(&th, &bd.theta_at(0.0));
        let out = op.apply(&th, Some(&r));
        assert!(out.iter().all(|v| v.abs() < 1e-14));
    }
}
