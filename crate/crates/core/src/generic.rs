//! Building blocks `E`, `S`, `L(f)`, `M(f)` of the GENERIC form
//! `∂_t f = L dE + M dS` and its degeneracy checks.

use std::f64::consts::PI;

use rayon::prelude::*;
use serde::Serialize;

use crate::collision::CollisionOperator;
use crate::dissipation::log_mean_unchecked;
use crate::error::{Error, Result};
use crate::state::{entropy, moments, Density, PhaseGrid};

/// `E(f) = ½∫|v|²f`.
pub fn energy(f: &Density) -> f64 {
    moments(f, 0.0, 0.0).kinetic_energy
}

/// `S(f) = -H(f)`.
pub fn entropy_s(f: &Density) -> f64 {
    -entropy(f)
}

/// `dE = ½|v|²`.
pub fn d_energy(grid: &PhaseGrid) -> Vec<f64> {
    grid.speed_squared_field().into_iter().map(|x| 0.5 * x).collect()
}

/// `dS = -(log f + 1)`; requires `f > 0`.
pub fn d_entropy(f: &Density) -> Result<Vec<f64>> {
    if !f.is_strictly_positive() {
        return Err(Error::InvalidDensity("dS needs a strictly positive density".into()));
    }
    Ok(f.values().iter().map(|x| -(x.ln() + 1.0)).collect())
}

/// First row of the periodic spectral differentiation matrix on `n` points
/// of a circle of length `side`: `D[i][k] = row[(i - k) mod n]`.
fn spectral_row(n: usize, side: f64) -> Vec<f64> {
    let scale = 2.0 * PI / side;
    (0..n)
        .map(|m| {
            if m == 0 {
                return 0.0;
            }
            let sign = if m % 2 == 0 { 1.0 } else { -1.0 };
            let arg = m as f64 * PI / n as f64;
            let base = if n % 2 == 0 { 1.0 / arg.tan() } else { 1.0 / arg.sin() };
            0.5 * sign * base * scale
        })
        .collect()
}

/// Spectral derivative along spatial axis `axis`.
pub fn spectral_dx(grid: &PhaseGrid, field: &[f64], axis: usize) -> Vec<f64> {
    let nx = grid.nx;
    let nvd = grid.n_vel();
    let row = spectral_row(nx, grid.torus_side);
    let stride = nx.pow(axis as u32);
    (0..grid.n_space())
        .into_par_iter()
        .flat_map_iter(|i| {
            let c = (i / stride) % nx;
            let base = i - c * stride;
            let row = &row;
            (0..nvd).map(move |j| {
                (0..nx)
                    .map(|k| row[(c + nx - k) % nx] * field[(base + k * stride) * nvd + j])
                    .sum::<f64>()
            })
        })
        .collect()
}

/// Centred difference along velocity axis `axis`, one-sided at the box
/// faces (exact on affine functions).
pub fn centred_dv(grid: &PhaseGrid, field: &[f64], axis: usize) -> Vec<f64> {
    let nv = grid.nv;
    let nvd = grid.n_vel();
    let h = grid.dv();
    let stride = nv.pow(axis as u32);
    field
        .par_chunks_exact(nvd)
        .flat_map_iter(|row| {
            (0..nvd).map(move |j| {
                let a = (j / stride) % nv;
                if a == 0 {
                    (row[j + stride] - row[j]) / h
                } else if a + 1 == nv {
                    (row[j] - row[j - stride]) / h
                } else {
                    (row[j + stride] - row[j - stride]) / (2.0 * h)
                }
            })
        })
        .collect()
}

/// Transpose of [`centred_dv`].
pub fn centred_dv_transpose(grid: &PhaseGrid, field: &[f64], axis: usize) -> Vec<f64> {
    let nv = grid.nv;
    let nvd = grid.n_vel();
    let h = grid.dv();
    let stride = nv.pow(axis as u32);
    field
        .par_chunks_exact(nvd)
        .flat_map_iter(|row| {
            let mut out = vec![0.0; nvd];
            for (j, &x) in row.iter().enumerate() {
                let a = (j / stride) % nv;
                if a == 0 {
                    out[j + stride] += x / h;
                    out[j] -= x / h;
                } else if a + 1 == nv {
                    out[j] += x / h;
                    out[j - stride] -= x / h;
                } else {
                    out[j + stride] += x / (2.0 * h);
                    out[j - stride] -= x / (2.0 * h);
                }
            }
            out
        })
        .collect()
}

fn mul(a: &[f64], b: &[f64]) -> Vec<f64> {
    a.iter().zip(b).map(|(x, y)| x * y).collect()
}

/// `L(f)g = -∇_x·(f∇_v g) + ∇_v·(f∇_x g)`, with the velocity divergence
/// taken as minus the transpose of the velocity gradient. This keeps `L`
/// exactly skew and makes it vanish on constants.
pub fn apply_l(f: &Density, g: &[f64]) -> Result<Vec<f64>> {
    let grid = f.grid();
    if g.len() != grid.len() {
        return Err(Error::InvalidInput("grid function has the wrong length".into()));
    }
    let fv = f.values();
    let mut out = vec![0.0; grid.len()];
    for axis in 0..grid.d {
        let a = spectral_dx(grid, &mul(fv, &centred_dv(grid, g, axis)), axis);
        let b = centred_dv_transpose(grid, &mul(fv, &spectral_dx(grid, g, axis)), axis);
        for ((o, x), y) in out.iter_mut().zip(&a).zip(&b) {
            *o -= x + y;
        }
    }
    Ok(out)
}

/// `M(f)g = ∇̄·(Λ(ff_*, f'f'_*) ∇̄g)`, so that `M dS = Q(f)` and
/// `⟨g, M g⟩ = ¼ Σ Λ (∇̄g)² w`.
pub fn apply_m(op: &CollisionOperator, f: &Density, g: &[f64]) -> Result<Vec<f64>> {
    let grid = op.grid();
    if g.len() != grid.len() || f.grid() != grid {
        return Err(Error::InvalidInput("grid function does not match the operator".into()));
    }
    let fv = f.values();
    let g_hom = grid.is_homogeneous(g);
    let subset = if g_hom { Some(op.active_tuples(&g[..grid.n_vel()])) } else { None };
    Ok(op.assemble_divergence(g_hom && f.is_homogeneous(), subset.as_deref(), |t| {
        let gb = t.gradbar(g);
        if gb == 0.0 {
            return 0.0;
        }
        let (s, u) = t.products(fv);
        log_mean_unchecked(s, u) * gb
    }))
}

fn max_abs(v: &[f64]) -> f64 {
    v.iter().fold(0.0f64, |m, x| m.max(x.abs()))
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct DegeneracyReport {
    pub norm_l_ds: f64,
    pub norm_m_de: f64,
}

/// `‖L(f) dS‖_∞` and `‖M(f) dE‖_∞`.
pub fn degeneracy_report(op: &CollisionOperator, f: &Density) -> Result<DegeneracyReport> {
    let ds = d_entropy(f)?;
    let de = d_energy(f.grid());
    Ok(DegeneracyReport {
        norm_l_ds: max_abs(&apply_l(f, &ds)?),
        norm_m_de: max_abs(&apply_m(op, f, &de)?),
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct BilinearChecks {
    /// `|⟨g1, L g2⟩ + ⟨g2, L g1⟩|`.
    pub antisym_defect: f64,
    /// `|⟨g1, M g2⟩ - ⟨g2, M g1⟩|`.
    pub sym_defect: f64,
    /// `⟨g1, M g1⟩`.
    pub psd_value: f64,
}

pub fn bilinear_form_checks(op: &CollisionOperator, f: &Density, g1: &[f64], g2: &[f64]) -> Result<BilinearChecks> {
    if !f.is_strictly_positive() {
        return Err(Error::InvalidDensity("bilinear checks need a strictly positive density".into()));
    }
    let grid = f.grid();
    let l1 = apply_l(f, g1)?;
    let l2 = apply_l(f, g2)?;
    let m1 = apply_m(op, f, g1)?;
    let m2 = apply_m(op, f, g2)?;
    Ok(BilinearChecks {
        antisym_defect: (grid.inner(g1, &l2) + grid.inner(g2, &l1)).abs(),
        sym_defect: (grid.inner(g1, &m2) - grid.inner(g2, &m1)).abs(),
        psd_value: grid.inner(g1, &m1),
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::collision::Backend;
    use crate::dissipation::entropy_dissipation;
    use crate::kernels::{CollisionKernel, SpatialKernel};
    use crate::state::two_bump;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn op(nx: usize, nv: usize, vmax: f64) -> CollisionOperator {
        let grid = PhaseGrid::new(2, 4.0, nx, vmax, nv).unwrap();
        CollisionOperator::new(grid, CollisionKernel::default(), SpatialKernel::new(1.0, 1.0, 2).unwrap(), Backend::Dvm).unwrap()
    }

    fn random_positive(grid: PhaseGrid, seed: u64) -> Density {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        Density::normalized(grid, (0..grid.len()).map(|_| rng.gen_range(0.1..1.0)).collect()).unwrap()
    }

    #[test]
    fn spectral_derivative_is_exact_on_trigonometric_modes() {
        for nx in [6usize, 7] {
            let grid = PhaseGrid::new(2, 4.0, nx, 1.0, 2).unwrap();
            let k = 2.0 * PI / 4.0;
            let field: Vec<f64> = (0..grid.len()).map(|idx| (k * grid.position(idx / 4)[1]).sin()).collect();
            let d = spectral_dx(&grid, &field, 1);
            for idx in 0..grid.len() {
                let y = grid.position(idx / 4)[1];
                assert!((d[idx] - k * (k * y).cos()).abs() < 1e-13);
            }
            assert!(max_abs(&spectral_dx(&grid, &field, 0)) < 1e-13);
        }
    }

    #[test]
    fn constants_are_annihilated() {
        let o = op(4, 6, 3.0);
        let f = random_positive(*o.grid(), 1);
        let c = vec![2.5; o.grid().len()];
        assert!(max_abs(&apply_l(&f, &c).unwrap()) < 1e-14);
        assert_eq!(max_abs(&apply_m(&o, &f, &c).unwrap()), 0.0);
    }

    #[test]
    fn m_of_entropy_differential_is_q_and_m_kills_energy() {
        let o = op(4, 6, 3.0);
        let f = random_positive(*o.grid(), 2);
        let ds = d_entropy(&f).unwrap();
        let mds = apply_m(&o, &f, &ds).unwrap();
        let q = o.apply_q(&f);
        let scale = max_abs(&q);
        assert!(mds.iter().zip(&q).all(|(a, b)| (a - b).abs() <= 1e-12 * scale));
        let d = entropy_dissipation(&o, &f).value;
        assert!((o.grid().inner(&ds, &mds) - d).abs() <= 1e-10 * d);
        let rep = degeneracy_report(&o, &f).unwrap();
        assert!(rep.norm_m_de <= 1e-12);
    }

    #[test]
    fn bilinear_forms_have_the_right_symmetry() {
        let o = op(4, 6, 3.0);
        let grid = *o.grid();
        let f = random_positive(grid, 3);
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        let g1: Vec<f64> = (0..grid.len()).map(|_| rng.gen_range(-1.0..1.0)).collect();
        let g2: Vec<f64> = (0..grid.len()).map(|_| rng.gen_range(-1.0..1.0)).collect();
        let c = bilinear_form_checks(&o, &f, &g1, &g2).unwrap();
        assert!(c.antisym_defect <= 1e-10 && c.sym_defect <= 1e-12 && c.psd_value >= -1e-12);
    }

    #[test]
    fn l_of_energy_is_free_transport() {
        let grid = PhaseGrid::new(2, 4.0, 8, 6.0, 24).unwrap();
        let f = two_bump(&grid, &[1.0, 0.0], 0.5, 0.3).unwrap();
        let lde = apply_l(&f, &d_energy(&grid)).unwrap();
        let mut expect = vec![0.0; grid.len()];
        for axis in 0..2 {
            let dxf = spectral_dx(&grid, f.values(), axis);
            let v = grid.velocity_field(axis);
            for ((e, a), b) in expect.iter_mut().zip(&dxf).zip(&v) {
                *e -= a * b;
            }
        }
        let scale = max_abs(&expect);
        assert!(lde.iter().zip(&expect).all(|(a, b)| (a - b).abs() <= 1e-10 * scale));
        // zero total mass
        assert!(lde.iter().sum::<f64>().abs() * grid.cell_volume() < 1e-12);
    }

    #[test]
    fn l_of_entropy_differential_converges_at_second_order() {
        let norm = |nv: usize| {
            let grid = PhaseGrid::new(2, 4.0, 8, 6.0, nv).unwrap();
            let f = two_bump(&grid, &[1.0, -0.5], 0.6, 0.3).unwrap();
            max_abs(&apply_l(&f, &d_entropy(&f).unwrap()).unwrap())
        };
        let (a, b) = (norm(16), norm(32));
        assert!(a / b >= 3.5, "{a} {b}");
    }

    #[test]
    fn maxwellian_is_degenerate() {
        let o = op(4, 16, 6.0);
        let m = crate::state::maxwellian(o.grid(), &[0.3, 0.0], 0.6).unwrap();
        let r = degeneracy_report(&o, &m).unwrap();
        assert!(r.norm_l_ds <= 1e-10 && r.norm_m_de <= 1e-10);
        let e = energy(&m);
        assert!((e - (0.6 + 0.045)).abs() < 1e-3, "{e}");
        assert!((entropy_s(&m) + entropy(&m)).abs() == 0.0);
    }
}
