//! Long-range interaction `B[χ]_i = Σ_j w_j K_ij G(χ_i - χ_j)` and its
//! companion `b[χ]_i = 2 Σ_j w_j K_ij G'(χ_i - χ_j)`.

use rayon::prelude::*;

use crate::error::{Error, Result};
use crate::grid::Grid;
use crate::quad;

/// Even interaction potential `G` on `R^d`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum Interaction {
    /// `|η|^2 / 2`
    Quadratic,
    /// `a2 |η|^2 / 2 + a4 |η|^4 / 4`
    EvenQuartic { a2: f64, a4: f64 },
}

impl Interaction {
    pub fn g(&self, eta: &[f64]) -> f64 {
        let r2: f64 = eta.iter().map(|v| v * v).sum();
        match *self {
            Interaction::Quadratic => 0.5 * r2,
            Interaction::EvenQuartic { a2, a4 } => 0.5 * a2 * r2 + 0.25 * a4 * r2 * r2,
        }
    }

    /// Writes `∇G(η)` into `out`.
    pub fn grad(&self, eta: &[f64], out: &mut [f64]) {
        let factor = match *self {
            Interaction::Quadratic => 1.0,
            Interaction::EvenQuartic { a2, a4 } => a2 + a4 * eta.iter().map(|v| v * v).sum::<f64>(),
        };
        for (o, e) in out.iter_mut().zip(eta) {
            *o = factor * e;
        }
    }

    /// `sup |∇G|` over `|η| <= range`.
    pub fn sup_grad(&self, range: f64) -> f64 {
        match *self {
            Interaction::Quadratic => range,
            Interaction::EvenQuartic { a2, a4 } => a2.abs() * range + a4.abs() * range.powi(3),
        }
    }

    /// Lipschitz constant of `∇G` on `|η| <= range`.
    pub fn grad_lipschitz(&self, range: f64) -> f64 {
        match *self {
            Interaction::Quadratic => 1.0,
            Interaction::EvenQuartic { a2, a4 } => a2.abs() + 3.0 * a4.abs() * range * range,
        }
    }
}

/// Kernel families.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum KernelSpec {
    Constant { amplitude: f64 },
    /// `A exp(-|x - y|^2 / (2 w^2))`
    Gaussian { amplitude: f64, width: f64 },
    /// `A n^(N+2) 1{|n (x - y)|^2 <= 1}`; entries are cell averages.
    TopHat { amplitude: f64, n: f64 },
}

impl KernelSpec {
    pub fn sup(&self, dim: usize) -> f64 {
        match *self {
            KernelSpec::Constant { amplitude } => amplitude.abs(),
            KernelSpec::Gaussian { amplitude, .. } => amplitude.abs(),
            KernelSpec::TopHat { amplitude, n } => amplitude.abs() * n.powi(dim as i32 + 2),
        }
    }

    /// Lipschitz constant of `κ` in each argument (`+∞` for the discontinuous top-hat).
    pub fn lipschitz(&self) -> f64 {
        match *self {
            KernelSpec::Constant { .. } => 0.0,
            KernelSpec::Gaussian { amplitude, width } => amplitude.abs() / (width * std::f64::consts::E.sqrt()),
            KernelSpec::TopHat { .. } => f64::INFINITY,
        }
    }

    fn value(&self, dim: usize, r2: f64) -> f64 {
        match *self {
            KernelSpec::Constant { amplitude } => amplitude,
            KernelSpec::Gaussian { amplitude, width } => amplitude * (-r2 / (2.0 * width * width)).exp(),
            KernelSpec::TopHat { amplitude, n } => {
                if n * n * r2 <= 1.0 {
                    amplitude * n.powi(dim as i32 + 2)
                } else {
                    0.0
                }
            }
        }
    }

    fn validate(&self) -> Result<()> {
        let ok = match *self {
            KernelSpec::Constant { amplitude } => amplitude.is_finite(),
            KernelSpec::Gaussian { amplitude, width } => amplitude.is_finite() && width > 0.0 && width.is_finite(),
            KernelSpec::TopHat { amplitude, n } => amplitude.is_finite() && amplitude >= 0.0 && n > 0.0 && n.is_finite(),
        };
        if ok {
            Ok(())
        } else {
            Err(Error::Config(format!("invalid kernel parameters {self:?}")))
        }
    }
}

/// Sub-samples per axis when a top-hat support edge cuts a cell pair.
const TOPHAT_SUBSAMPLES_1D: usize = 16;
const TOPHAT_SUBSAMPLES_2D: usize = 4;

fn tophat_entry(grid: &Grid, i: usize, j: usize, n: f64, height: f64) -> f64 {
    let ci = grid.centers()[i];
    let cj = grid.centers()[j];
    let h = grid.h();
    let dim = grid.dim();
    let hx = h[0];
    let hy = if dim == 2 { h[1] } else { 0.0 };
    let dx = (ci[0] - cj[0]).abs();
    let dy = (ci[1] - cj[1]).abs();
    let rad = 1.0 / n;
    let near = (dx.powi(2) + dy.powi(2)).sqrt();
    let diag = (hx * hx + hy * hy).sqrt();
    if near + diag < rad {
        return height;
    }
    if near - diag > rad {
        return 0.0;
    }
    let s = if dim == 1 { TOPHAT_SUBSAMPLES_1D } else { TOPHAT_SUBSAMPLES_2D };
    let off = |k: usize, step: f64| ((k as f64 + 0.5) / s as f64 - 0.5) * step;
    let mut hits = 0usize;
    let mut total = 0usize;
    if dim == 1 {
        for a in 0..s {
            for b in 0..s {
                let x = ci[0] + off(a, hx) - cj[0] - off(b, hx);
                total += 1;
                if n * n * x * x <= 1.0 {
                    hits += 1;
                }
            }
        }
    } else {
        for a in 0..s {
            for b in 0..s {
                for c in 0..s {
                    for d in 0..s {
                        let x = ci[0] + off(a, hx) - cj[0] - off(c, hx);
                        let y = ci[1] + off(b, hy) - cj[1] - off(d, hy);
                        total += 1;
                        if n * n * (x * x + y * y) <= 1.0 {
                            hits += 1;
                        }
                    }
                }
            }
        }
    }
    height * hits as f64 / total as f64
}

/// Dense discrete kernel with quadrature weights.
#[derive(Debug, Clone)]
pub struct NonlocalOperator {
    m: usize,
    d: usize,
    weights: Vec<f64>,
    k: Vec<f64>,
    interaction: Interaction,
    sup_kappa: f64,
}

impl NonlocalOperator {
    /// Builds `K_ij` from a kernel family; the matrix is mirrored so symmetry is exact.
    pub fn build(grid: &Grid, spec: &KernelSpec, interaction: Interaction, d: usize) -> Result<Self> {
        spec.validate()?;
        let m = grid.len();
        let dim = grid.dim();
        let rows: Vec<Vec<f64>> = (0..m)
            .into_par_iter()
            .map(|i| {
                (0..=i)
                    .map(|j| match *spec {
                        KernelSpec::TopHat { amplitude, n } => {
                            tophat_entry(grid, i, j, n, amplitude * n.powi(dim as i32 + 2))
                        }
                        _ => {
                            let a = grid.centers()[i];
                            let b = grid.centers()[j];
                            let r2 = (a[0] - b[0]).powi(2) + (a[1] - b[1]).powi(2);
                            spec.value(dim, r2)
                        }
                    })
                    .collect()
            })
            .collect();
        let mut k = vec![0.0; m * m];
        for (i, row) in rows.iter().enumerate() {
            for (j, v) in row.iter().enumerate() {
                k[i * m + j] = *v;
                k[j * m + i] = *v;
            }
        }
        Ok(NonlocalOperator {
            m,
            d,
            weights: grid.volumes().to_vec(),
            k,
            interaction,
            sup_kappa: spec.sup(dim),
        })
    }

    /// Takes a row-major matrix as given, without symmetrising it.
    pub fn from_matrix(weights: Vec<f64>, k: Vec<f64>, interaction: Interaction, d: usize) -> Result<Self> {
        let m = weights.len();
        if k.len() != m * m {
            return Err(Error::Usage(format!("kernel matrix must be {m}x{m}")));
        }
        let sup_kappa = k.iter().fold(0.0f64, |a, v| a.max(v.abs()));
        Ok(NonlocalOperator { m, d, weights, k, interaction, sup_kappa })
    }

    pub fn len(&self) -> usize {
        self.m
    }
    pub fn is_empty(&self) -> bool {
        self.m == 0
    }
    pub fn components(&self) -> usize {
        self.d
    }
    pub fn interaction(&self) -> Interaction {
        self.interaction
    }
    pub fn entry(&self, i: usize, j: usize) -> f64 {
        self.k[i * self.m + j]
    }
    pub fn sup_kappa(&self) -> f64 {
        self.sup_kappa
    }
    pub fn is_zero(&self) -> bool {
        self.k.iter().all(|v| *v == 0.0)
    }

    pub fn symmetry_residual(&self) -> f64 {
        let mut r: f64 = 0.0;
        for i in 0..self.m {
            for j in 0..i {
                r = r.max((self.entry(i, j) - self.entry(j, i)).abs());
            }
        }
        r
    }

    /// `C_b = 2 sup|κ| sup|G'| |Ω|` with `G'` bounded over `|η| <= range`.
    pub fn c_b(&self, range: f64) -> f64 {
        let measure: f64 = self.weights.iter().sum();
        2.0 * self.sup_kappa * self.interaction.sup_grad(range) * measure
    }

    fn check(&self, chi: &[f64]) -> Result<()> {
        if chi.len() != self.m * self.d {
            return Err(Error::Usage(format!(
                "field has {} entries, expected {} cells x {} components",
                chi.len(),
                self.m,
                self.d
            )));
        }
        Ok(())
    }

    /// `B[χ]` per cell. `chi` is cell-major with `d` components per cell.
    pub fn b_potential(&self, chi: &[f64]) -> Result<Vec<f64>> {
        self.check(chi)?;
        let d = self.d;
        Ok((0..self.m)
            .into_par_iter()
            .map(|i| {
                let xi = &chi[i * d..(i + 1) * d];
                let mut eta = vec![0.0; d];
                let mut acc = 0.0;
                for j in 0..self.m {
                    let kij = self.k[i * self.m + j];
                    if kij == 0.0 {
                        continue;
                    }
                    for c in 0..d {
                        eta[c] = xi[c] - chi[j * d + c];
                    }
                    acc += self.weights[j] * kij * self.interaction.g(&eta);
                }
                acc
            })
            .collect())
    }

    /// `b[χ]` per cell, cell-major.
    pub fn b_operator(&self, chi: &[f64]) -> Result<Vec<f64>> {
        self.check(chi)?;
        let d = self.d;
        let rows: Vec<Vec<f64>> = (0..self.m)
            .into_par_iter()
            .map(|i| {
                let xi = &chi[i * d..(i + 1) * d];
                let mut eta = vec![0.0; d];
                let mut gp = vec![0.0; d];
                let mut acc = vec![0.0; d];
                for j in 0..self.m {
                    let kij = self.k[i * self.m + j];
                    if kij == 0.0 {
                        continue;
                    }
                    for c in 0..d {
                        eta[c] = xi[c] - chi[j * d + c];
                    }
                    self.interaction.grad(&eta, &mut gp);
                    for c in 0..d {
                        acc[c] += self.weights[j] * kij * gp[c];
                    }
                }
                acc.iter().map(|v| 2.0 * v).collect()
            })
            .collect();
        Ok(rows.concat())
    }

    /// `Σ_i w_i B_i`.
    pub fn total_potential(&self, chi: &[f64]) -> Result<f64> {
        let b = self.b_potential(chi)?;
        Ok(self.weights.iter().zip(&b).map(|(w, v)| w * v).sum())
    }

    /// Pairing of `b[χ]` with a rate `χ̇` against the chain rule for `d/dt Σ w B`.
    pub fn pairing_identity(&self, chi: &[f64], chi_dot: &[f64]) -> Result<PairingCheck> {
        self.check(chi)?;
        self.check(chi_dot)?;
        let d = self.d;
        let b = self.b_operator(chi)?;
        let mut lhs = 0.0;
        let mut scale = 0.0;
        for i in 0..self.m {
            for c in 0..d {
                lhs += self.weights[i] * b[i * d + c] * chi_dot[i * d + c];
                scale += self.weights[i] * (b[i * d + c] * chi_dot[i * d + c]).abs();
            }
        }
        let row_terms: Vec<f64> = (0..self.m)
            .into_par_iter()
            .map(|i| {
                let mut eta = vec![0.0; d];
                let mut gp = vec![0.0; d];
                let mut acc = 0.0;
                for j in 0..self.m {
                    let kij = self.k[i * self.m + j];
                    if kij == 0.0 {
                        continue;
                    }
                    for c in 0..d {
                        eta[c] = chi[i * d + c] - chi[j * d + c];
                    }
                    self.interaction.grad(&eta, &mut gp);
                    let mut dot = 0.0;
                    for c in 0..d {
                        dot += gp[c] * (chi_dot[i * d + c] - chi_dot[j * d + c]);
                    }
                    acc += self.weights[j] * kij * dot;
                }
                self.weights[i] * acc
            })
            .collect();
        let rhs: f64 = row_terms.iter().sum();
        Ok(PairingCheck { lhs, rhs, residual: lhs - rhs, scale })
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PairingCheck {
    pub lhs: f64,
    pub rhs: f64,
    pub residual: f64,
    /// `Σ w |b · χ̇|`, the natural size of both sides.
    pub scale: f64,
}

/// `ν = (1/N) ∫_{R^N} κ̃(|z|^2) |z|^2 dz` for `κ̃` supported in `[0, 1]`.
pub fn local_limit_nu<F: Fn(f64) -> f64>(kappa_tilde: F, dim: usize) -> Result<f64> {
    let sphere = match dim {
        1 => 2.0,
        2 => 2.0 * std::f64::consts::PI,
        3 => 4.0 * std::f64::consts::PI,
        _ => return Err(Error::Usage(format!("local limit supports N <= 3, got {dim}"))),
    };
    let radial = quad::integrate(|r| kappa_tilde(r * r) * r.powi(dim as i32 + 1), 0.0, 1.0, 1e-13)?;
    Ok(sphere * radial / dim as f64)
}

#[derive(Debug, Clone, PartialEq)]
pub struct LocalLimitReport {
    pub n: f64,
    pub nu: f64,
    /// Volume-weighted mean over all cells of `|I_n(x) - ν |∇χ|^2|`.
    pub mean_error: f64,
    /// Largest error among cells whose kernel support lies inside the domain.
    pub bulk_sup_error: f64,
    /// Volume-weighted mean of `ν |∇χ|^2`.
    pub reference: f64,
    /// Set when the support radius `1/n` is below one cell.
    pub resolution_warning: bool,
}

/// Compares `∫ κ_n(x, y) |χ(x) - χ(y)|^2 dy` with `ν |∇χ(x)|^2` for the top-hat family.
pub fn local_limit_error<C, G>(grid: &Grid, n: f64, chi: C, grad_sq: G) -> Result<LocalLimitReport>
where
    C: Fn(&[f64; 2]) -> f64,
    G: Fn(&[f64; 2]) -> f64,
{
    let dim = grid.dim();
    let nu = local_limit_nu(|r| if r <= 1.0 { 1.0 } else { 0.0 }, dim)?;
    let op = NonlocalOperator::build(grid, &KernelSpec::TopHat { amplitude: 1.0, n }, Interaction::Quadratic, 1)?;
    let vals: Vec<f64> = grid.centers().iter().map(&chi).collect();
    // 2 B[χ] = ∫ κ |χ(x) - χ(y)|^2 for G = |η|^2 / 2.
    let b = op.b_potential(&vals)?;
    let rad = 1.0 / n;
    let mut mean = 0.0;
    let mut reference = 0.0;
    let mut bulk: f64 = 0.0;
    let measure = grid.measure();
    let h_min = grid.h().iter().cloned().fold(f64::INFINITY, f64::min);
    for (i, c) in grid.centers().iter().enumerate() {
        let target = nu * grad_sq(c);
        let err = (2.0 * b[i] - target).abs();
        let w = grid.volumes()[i];
        mean += w * err;
        reference += w * target;
        let inside = (0..dim).all(|a| c[a] - rad >= 0.0 && c[a] + rad <= grid.lengths()[a]);
        if inside {
            bulk = bulk.max(err);
        }
    }
    Ok(LocalLimitReport {
        n,
        nu,
        mean_error: mean / measure,
        bulk_sup_error: bulk,
        reference: reference / measure,
        resolution_warning: rad < h_min,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn two_cells() -> NonlocalOperator {
        NonlocalOperator::from_matrix(vec![0.5, 0.5], vec![1.0; 4], Interaction::Quadratic, 1).unwrap()
    }

    #[test]
    fn two_cell_potential_and_operator() {
        let op = two_cells();
        assert_eq!(op.b_potential(&[0.0, 1.0]).unwrap(), vec![0.25, 0.25]);
        assert_eq!(op.b_operator(&[0.0, 1.0]).unwrap(), vec![-1.0, 1.0]);
    }

    #[test]
    fn two_cell_pairing() {
        let p = two_cells().pairing_identity(&[0.0, 1.0], &[1.0, 0.0]).unwrap();
        assert_eq!(p.lhs, -0.5);
        assert_eq!(p.rhs, -0.5);
    }

    #[test]
    fn constant_field_is_inert() {
        let g = Grid::build(1, &[1.0], &[7]).unwrap();
        let op = NonlocalOperator::build(&g, &KernelSpec::Gaussian { amplitude: 2.0, width: 0.3 }, Interaction::Quadratic, 1).unwrap();
        let chi = vec![0.3; 7];
        assert!(op.b_potential(&chi).unwrap().iter().all(|v| *v == 0.0));
        assert!(op.b_operator(&chi).unwrap().iter().all(|v| *v == 0.0));
    }

    #[test]
    fn shape_mismatch_is_usage_error() {
        assert!(matches!(two_cells().b_operator(&[0.0]), Err(Error::Usage(_))));
    }

    #[test]
    fn nu_values() {
        let top = |r: f64| if r <= 1.0 { 1.0 } else { 0.0 };
        assert!((local_limit_nu(top, 1).unwrap() - 2.0 / 3.0).abs() < 1e-12);
        assert!((local_limit_nu(top, 2).unwrap() - std::f64::consts::FRAC_PI_4).abs() < 1e-12);
        assert_eq!(local_limit_nu(|_| 0.0, 1).unwrap(), 0.0);
    }
}
