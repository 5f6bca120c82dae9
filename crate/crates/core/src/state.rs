//! Phase-space grid, densities, moments, entropies and snapshots.

use std::io::{BufRead, Write};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::geometry::{parse_header, VelocityLattice};
use crate::kernels::bracket_unchecked;

/// Tolerance on the unit-mass normalisation of a [`Density`].
pub const MASS_TOL: f64 = 1e-12;

/// Torus `[-L/2, L/2)^d` times velocity box `[-vmax, vmax]^d`, with `nx`
/// cells per spatial axis and `nv` velocity nodes per axis.
///
/// Values are stored spatial-major: index `i * nv^d + j` for spatial cell
/// `i` and velocity node `j`, axis 0 varying fastest inside each block.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PhaseGrid {
    pub d: usize,
    pub torus_side: f64,
    pub nx: usize,
    pub vmax: f64,
    pub nv: usize,
}

impl PhaseGrid {
    pub fn new(d: usize, torus_side: f64, nx: usize, vmax: f64, nv: usize) -> Result<Self> {
        if !(2..=3).contains(&d) {
            return Err(Error::UnsupportedDimension(d));
        }
        if !(torus_side > 0.0 && torus_side.is_finite()) {
            return Err(Error::InvalidInput(format!("torus side must be positive, got {torus_side}")));
        }
        if nx == 0 {
            return Err(Error::InvalidInput("nx must be at least 1".into()));
        }
        VelocityLattice::new(d, nv, vmax)?;
        Ok(PhaseGrid { d, torus_side, nx, vmax, nv })
    }

    pub fn velocity(&self) -> VelocityLattice {
        VelocityLattice { dimension: self.d, nv: self.nv, vmax: self.vmax }
    }

    pub fn n_space(&self) -> usize {
        self.nx.pow(self.d as u32)
    }

    pub fn n_vel(&self) -> usize {
        self.nv.pow(self.d as u32)
    }

    pub fn len(&self) -> usize {
        self.n_space() * self.n_vel()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn dx(&self) -> f64 {
        self.torus_side / self.nx as f64
    }

    pub fn dv(&self) -> f64 {
        2.0 * self.vmax / self.nv as f64
    }

    /// `Δx^d`.
    pub fn space_volume(&self) -> f64 {
        self.dx().powi(self.d as i32)
    }

    /// `Δv^d`.
    pub fn vel_volume(&self) -> f64 {
        self.dv().powi(self.d as i32)
    }

    pub fn cell_volume(&self) -> f64 {
        self.space_volume() * self.vel_volume()
    }

    pub fn phase_volume(&self) -> f64 {
        (self.torus_side * 2.0 * self.vmax).powi(self.d as i32)
    }

    pub fn space_axis_index(&self, i: usize, axis: usize) -> usize {
        (i / self.nx.pow(axis as u32)) % self.nx
    }

    /// Centre of spatial cell `i`.
    pub fn position(&self, i: usize) -> Vec<f64> {
        (0..self.d)
            .map(|a| -0.5 * self.torus_side + (self.space_axis_index(i, a) as f64 + 0.5) * self.dx())
            .collect()
    }

    /// All velocities, `d` components per node.
    pub fn velocities(&self) -> Vec<f64> {
        let lat = self.velocity();
        (0..self.n_vel()).flat_map(|j| lat.velocity(j)).collect()
    }

    /// Velocity component `axis` at every phase cell.
    pub fn velocity_field(&self, axis: usize) -> Vec<f64> {
        let lat = self.velocity();
        let row: Vec<f64> = (0..self.n_vel())
            .map(|j| lat.node_coordinate(lat.axis_index(j, axis)))
            .collect();
        self.broadcast_row(&row)
    }

    /// `|v|²` at every phase cell.
    pub fn speed_squared_field(&self) -> Vec<f64> {
        let lat = self.velocity();
        let row: Vec<f64> = (0..self.n_vel())
            .map(|j| lat.velocity(j).iter().map(|c| c * c).sum())
            .collect();
        self.broadcast_row(&row)
    }

    /// Repeats a velocity row over every spatial cell.
    pub fn broadcast_row(&self, row: &[f64]) -> Vec<f64> {
        let mut out = Vec::with_capacity(self.len());
        for _ in 0..self.n_space() {
            out.extend_from_slice(row);
        }
        out
    }

    /// `Σ a·b·cellvol`.
    pub fn inner(&self, a: &[f64], b: &[f64]) -> f64 {
        a.iter().zip(b).map(|(x, y)| x * y).sum::<f64>() * self.cell_volume()
    }

    /// `Σ |a - b|·cellvol`.
    pub fn l1_distance(&self, a: &[f64], b: &[f64]) -> f64 {
        a.iter().zip(b).map(|(x, y)| (x - y).abs()).sum::<f64>() * self.cell_volume()
    }

    /// True when every spatial row of `values` is bitwise equal to the first.
    pub fn is_homogeneous(&self, values: &[f64]) -> bool {
        let nvd = self.n_vel();
        let first = &values[..nvd];
        values.chunks_exact(nvd).all(|row| row.iter().zip(first).all(|(a, b)| a.to_bits() == b.to_bits()))
    }
}

/// Nonnegative piecewise-constant phase-space density.
#[derive(Debug, Clone, PartialEq)]
pub struct Density {
    grid: PhaseGrid,
    values: Vec<f64>,
}

impl Density {
    /// Validates finiteness, nonnegativity and unit mass.
    pub fn new(grid: PhaseGrid, values: Vec<f64>) -> Result<Self> {
        let f = Self::nonnegative(grid, values)?;
        let mass = f.mass();
        if (mass - 1.0).abs() > MASS_TOL {
            return Err(Error::InvalidDensity(format!("mass {mass} differs from 1")));
        }
        Ok(f)
    }

    /// Validates finiteness and nonnegativity only (sub-probability iterates,
    /// externally loaded snapshots).
    pub fn nonnegative(grid: PhaseGrid, values: Vec<f64>) -> Result<Self> {
        if values.len() != grid.len() {
            return Err(Error::InvalidDensity(format!(
                "expected {} values, got {}",
                grid.len(),
                values.len()
            )));
        }
        if let Some(pos) = values.iter().position(|v| !v.is_finite()) {
            return Err(Error::NonFinite(format!("density value at index {pos}")));
        }
        if let Some(pos) = values.iter().position(|&v| v < 0.0) {
            return Err(Error::InvalidDensity(format!("negative value {} at index {pos}", values[pos])));
        }
        Ok(Density { grid, values })
    }

    /// Rescales nonnegative values to unit mass.
    pub fn normalized(grid: PhaseGrid, mut values: Vec<f64>) -> Result<Self> {
        let mass: f64 = values.iter().sum::<f64>() * grid.cell_volume();
        if !(mass > 0.0 && mass.is_finite()) {
            return Err(Error::InvalidDensity(format!("cannot normalise mass {mass}")));
        }
        values.iter_mut().for_each(|v| *v /= mass);
        Self::new(grid, values)
    }

    /// Uniform density `1/V` on the phase box.
    pub fn uniform(grid: PhaseGrid) -> Self {
        let v = 1.0 / (grid.len() as f64 * grid.cell_volume());
        Density { grid, values: vec![v; grid.len()] }
    }

    pub fn grid(&self) -> &PhaseGrid {
        &self.grid
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn into_values(self) -> Vec<f64> {
        self.values
    }

    pub fn mass(&self) -> f64 {
        self.values.iter().sum::<f64>() * self.grid.cell_volume()
    }

    pub fn is_homogeneous(&self) -> bool {
        self.grid.is_homogeneous(&self.values)
    }

    pub fn is_strictly_positive(&self) -> bool {
        self.values.iter().all(|&v| v > 0.0)
    }
}

/// Midpoint-rule moments of a density.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct MomentReport {
    pub mass: f64,
    pub momentum: Vec<f64>,
    /// `½∫|v|² f`.
    pub kinetic_energy: f64,
    pub p: f64,
    pub q: f64,
    /// `∫(⟨x⟩^p + ⟨v⟩^q) f`.
    pub e_pq: f64,
    pub entropy: f64,
}

/// Fraction of a Gaussian with the given mean and temperature that lies
/// outside `[-vmax, vmax]^d`.
pub fn truncated_gaussian_mass(vmax: f64, mean: &[f64], temperature: f64) -> f64 {
    let s = (2.0 * temperature).sqrt();
    let inside: f64 = mean
        .iter()
        .map(|u| 0.5 * (libm::erfc((-vmax - u) / s) - libm::erfc((vmax - u) / s)))
        .product();
    1.0 - inside
}

/// Spatially uniform discrete Gaussian in `v`, renormalised to unit mass.
pub fn maxwellian(grid: &PhaseGrid, mean_velocity: &[f64], temperature: f64) -> Result<Density> {
    if mean_velocity.len() != grid.d {
        return Err(Error::InvalidInput("mean velocity has the wrong dimension".into()));
    }
    if !(temperature > 0.0 && temperature.is_finite()) || mean_velocity.iter().any(|u| !u.is_finite()) {
        return Err(Error::InvalidInput(format!("temperature must be positive, got {temperature}")));
    }
    let truncated = truncated_gaussian_mass(grid.vmax, mean_velocity, temperature);
    if truncated > 1e-8 {
        return Err(Error::ExcessiveTruncation { truncated });
    }
    let lat = grid.velocity();
    let row: Vec<f64> = (0..grid.n_vel())
        .map(|j| {
            let v = lat.velocity(j);
            let r2: f64 = v.iter().zip(mean_velocity).map(|(a, b)| (a - b) * (a - b)).sum();
            (-r2 / (2.0 * temperature)).exp()
        })
        .collect();
    Density::normalized(*grid, grid.broadcast_row(&row))
}

/// Sum of two spatially uniform Gaussian bumps in velocity (equal weights),
/// optionally modulated in space by `1 + amplitude·Π cos(2π x_a / L)`.
pub fn two_bump(
    grid: &PhaseGrid,
    centre: &[f64],
    temperature: f64,
    spatial_amplitude: f64,
) -> Result<Density> {
    if centre.len() != grid.d {
        return Err(Error::InvalidInput("bump centre has the wrong dimension".into()));
    }
    if spatial_amplitude.abs() >= 1.0 {
        return Err(Error::InvalidInput("spatial modulation must keep the density positive".into()));
    }
    let neg: Vec<f64> = centre.iter().map(|c| -c).collect();
    let a = maxwellian(grid, centre, temperature)?;
    let b = maxwellian(grid, &neg, temperature)?;
    let nvd = grid.n_vel();
    let two_pi = 2.0 * std::f64::consts::PI;
    let values: Vec<f64> = (0..grid.len())
        .map(|idx| {
            let i = idx / nvd;
            let modulation = if spatial_amplitude == 0.0 {
                1.0
            } else {
                let x = grid.position(i);
                1.0 + spatial_amplitude * x.iter().map(|c| (two_pi * c / grid.torus_side).cos()).product::<f64>()
            };
            0.5 * (a.values[idx] + b.values[idx]) * modulation
        })
        .collect();
    Density::normalized(*grid, values)
}

/// Midpoint-rule moments with `𝓔_{p,q}`.
pub fn moments(f: &Density, p: f64, q: f64) -> MomentReport {
    let g = f.grid();
    let nvd = g.n_vel();
    let lat = g.velocity();
    let vel: Vec<Vec<f64>> = (0..nvd).map(|j| lat.velocity(j)).collect();
    let vbr: Vec<f64> = vel.iter().map(|v| bracket_unchecked(v).powf(q)).collect();
    let cv = g.cell_volume();
    let mut mass = 0.0;
    let mut momentum = vec![0.0; g.d];
    let mut energy = 0.0;
    let mut e_pq = 0.0;
    for (i, row) in f.values.chunks_exact(nvd).enumerate() {
        let xb = bracket_unchecked(&g.position(i)).powf(p);
        for (j, &val) in row.iter().enumerate() {
            mass += val;
            for (m, c) in momentum.iter_mut().zip(&vel[j]) {
                *m += c * val;
            }
            energy += vel[j].iter().map(|c| c * c).sum::<f64>() * val;
            e_pq += (xb + vbr[j]) * val;
        }
    }
    momentum.iter_mut().for_each(|m| *m *= cv);
    MomentReport {
        mass: mass * cv,
        momentum,
        kinetic_energy: 0.5 * energy * cv,
        p,
        q,
        e_pq: e_pq * cv,
        entropy: entropy(f),
    }
}

#[inline]
pub(crate) fn xlogx(x: f64) -> f64 {
    if x > 0.0 {
        x * x.ln()
    } else {
        0.0
    }
}

/// `Σ f log f · cellvol` with `0 log 0 = 0`.
pub fn entropy(f: &Density) -> f64 {
    f.values.iter().map(|&v| xlogx(v)).sum::<f64>() * f.grid.cell_volume()
}

/// `Σ f log(f/g) · cellvol` against arbitrary positive reference values.
pub fn relative_entropy_wrt(f: &Density, reference: &[f64]) -> Result<f64> {
    if reference.len() != f.values.len() {
        return Err(Error::InvalidInput("reference has the wrong length".into()));
    }
    let cells = f
        .values
        .iter()
        .zip(reference)
        .filter(|(a, b)| **a > 0.0 && !(**b > 0.0))
        .count();
    if cells > 0 {
        return Err(Error::SupportViolation { cells });
    }
    let sum: f64 = f
        .values
        .iter()
        .zip(reference)
        .map(|(&a, &b)| if a > 0.0 { a * (a / b).ln() } else { 0.0 })
        .sum();
    Ok(sum * f.grid.cell_volume())
}

/// `𝓗(f|g)` for two densities on the same grid.
pub fn relative_entropy(f: &Density, g: &Density) -> Result<f64> {
    if f.grid != g.grid {
        return Err(Error::InvalidInput("densities live on different grids".into()));
    }
    relative_entropy_wrt(f, &g.values)
}

/// Spatially uniform discrete Maxwellian `exp(α + β·v + γ|v|²)` with the
/// same mass, momentum and energy as `f` on the velocity lattice.
pub fn fit_maxwellian(f: &Density) -> Result<Density> {
    let g = *f.grid();
    let d = g.d;
    let nvd = g.n_vel();
    let lat = g.velocity();
    let vel: Vec<Vec<f64>> = (0..nvd).map(|j| lat.velocity(j)).collect();
    // basis 1, v_1..v_d, |v|²
    let nb = d + 2;
    let basis = |j: usize| -> Vec<f64> {
        let mut b = Vec::with_capacity(nb);
        b.push(1.0);
        b.extend_from_slice(&vel[j]);
        b.push(vel[j].iter().map(|c| c * c).sum());
        b
    };
    let phi: Vec<Vec<f64>> = (0..nvd).map(basis).collect();
    // target moments of the x-integrated velocity profile
    let mut profile = vec![0.0; nvd];
    for row in f.values.chunks_exact(nvd) {
        for (p, v) in profile.iter_mut().zip(row) {
            *p += v;
        }
    }
    let sv = g.space_volume();
    let vv = g.vel_volume();
    let target: Vec<f64> = (0..nb)
        .map(|a| (0..nvd).map(|j| phi[j][a] * profile[j]).sum::<f64>() * sv * vv)
        .collect();
    let mass = target[0];
    if !(mass > 0.0) {
        return Err(Error::InvalidDensity("cannot fit a Maxwellian to zero mass".into()));
    }
    let mean: Vec<f64> = target[1..=d].iter().map(|m| m / mass).collect();
    let temp = ((target[d + 1] / mass - mean.iter().map(|u| u * u).sum::<f64>()) / d as f64).max(1e-3);
    // initial guess from the continuum Gaussian
    let mut coef = vec![0.0; nb];
    coef[d + 1] = -0.5 / temp;
    for a in 0..d {
        coef[1 + a] = mean[a] / temp;
    }
    let vol = (g.torus_side).powi(d as i32);
    let eval = |coef: &[f64], j: usize| -> f64 { phi[j].iter().zip(coef).map(|(p, c)| p * c).sum::<f64>().exp() };
    coef[0] = (mass / (vol * vv * (0..nvd).map(|j| eval(&coef, j)).sum::<f64>())).ln();
    for _ in 0..200 {
        let m: Vec<f64> = (0..nvd).map(|j| eval(&coef, j)).collect();
        let mut resid = vec![0.0; nb];
        let mut jac = vec![vec![0.0; nb]; nb];
        for j in 0..nvd {
            let w = m[j] * vol * vv;
            for a in 0..nb {
                resid[a] += phi[j][a] * w;
                for b in 0..nb {
                    jac[a][b] += phi[j][a] * phi[j][b] * w;
                }
            }
        }
        for a in 0..nb {
            resid[a] -= target[a];
        }
        let step = solve_dense(jac, resid.clone())?;
        let size: f64 = step.iter().map(|s| s.abs()).fold(0.0, f64::max);
        // damped Newton keeps the exponent from overshooting
        let scale = if size > 1.0 { 1.0 / size } else { 1.0 };
        for a in 0..nb {
            coef[a] -= scale * step[a];
        }
        if size < 1e-15 {
            break;
        }
    }
    let row: Vec<f64> = (0..nvd).map(|j| eval(&coef, j)).collect();
    Density::nonnegative(g, g.broadcast_row(&row))
}

/// Gaussian elimination with partial pivoting.
pub(crate) fn solve_dense(mut a: Vec<Vec<f64>>, mut b: Vec<f64>) -> Result<Vec<f64>> {
    let n = b.len();
    for col in 0..n {
        let piv = (col..n)
            .max_by(|&x, &y| a[x][col].abs().total_cmp(&a[y][col].abs()))
            .unwrap();
        if a[piv][col].abs() < 1e-300 {
            return Err(Error::InvalidInput("singular moment system".into()));
        }
        a.swap(col, piv);
        b.swap(col, piv);
        for row in col + 1..n {
            let factor = a[row][col] / a[col][col];
            for k in col..n {
                a[row][k] -= factor * a[col][k];
            }
            b[row] -= factor * b[col];
        }
    }
    let mut x = vec![0.0; n];
    for row in (0..n).rev() {
        let s: f64 = (row + 1..n).map(|k| a[row][k] * x[k]).sum();
        x[row] = (b[row] - s) / a[row][row];
    }
    Ok(x)
}

/// Snapshot encodings.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SnapshotFormat {
    /// Header line, then one value per line.
    Text,
    /// Header line, then raw little-endian `f64` values.
    Binary,
}

fn snapshot_header(grid: &PhaseGrid, time: f64, format: SnapshotFormat) -> String {
    format!(
        "fbe-snapshot v1 d={} L={:?} nx={} vmax={:?} nv={} time={:?} format={}\n",
        grid.d,
        grid.torus_side,
        grid.nx,
        grid.vmax,
        grid.nv,
        time,
        match format {
            SnapshotFormat::Text => "text",
            SnapshotFormat::Binary => "binary",
        }
    )
}

/// Writes a snapshot of `f` at `time`.
pub fn write_snapshot<W: Write>(mut out: W, f: &Density, time: f64, format: SnapshotFormat) -> Result<()> {
    out.write_all(snapshot_header(f.grid(), time, format).as_bytes())?;
    match format {
        SnapshotFormat::Text => {
            let mut buf = String::with_capacity(f.values.len() * 24);
            for v in &f.values {
                buf.push_str(&format!("{v:?}\n"));
            }
            out.write_all(buf.as_bytes())?;
        }
        SnapshotFormat::Binary => {
            let mut buf = Vec::with_capacity(f.values.len() * 8);
            for v in &f.values {
                buf.extend_from_slice(&v.to_le_bytes());
            }
            out.write_all(&buf)?;
        }
    }
    Ok(())
}

/// Reads a snapshot; returns the density (mass not renormalised) and time.
pub fn read_snapshot<R: BufRead>(mut input: R) -> Result<(Density, f64)> {
    let mut header = String::new();
    input.read_line(&mut header)?;
    let fields = parse_header(header.trim_end(), "fbe-snapshot")?;
    let get = |k: &str| -> Result<&String> {
        fields.get(k).ok_or(Error::Parse { line: 1, msg: format!("header lacks {k}") })
    };
    let num = |k: &str| -> Result<f64> {
        get(k)?.parse::<f64>().map_err(|e| Error::Parse { line: 1, msg: format!("{k}: {e}") })
    };
    let grid = PhaseGrid::new(
        num("d")? as usize,
        num("L")?,
        num("nx")? as usize,
        num("vmax")?,
        num("nv")? as usize,
    )?;
    let time = num("time")?;
    let n = grid.len();
    let values = match get("format")?.as_str() {
        "text" => {
            let mut values = Vec::with_capacity(n);
            for (idx, line) in input.lines().enumerate() {
                let line = line?;
                if line.trim().is_empty() {
                    continue;
                }
                values.push(line.trim().parse::<f64>().map_err(|e| Error::Parse {
                    line: idx + 2,
                    msg: format!("value: {e}"),
                })?);
            }
            values
        }
        "binary" => {
            let mut bytes = Vec::with_capacity(8 * n);
            input.read_to_end(&mut bytes)?;
            if bytes.len() != 8 * n {
                return Err(Error::Parse {
                    line: 2,
                    msg: format!("expected {} bytes of data, got {}", 8 * n, bytes.len()),
                });
            }
            bytes
                .chunks_exact(8)
                .map(|c| f64::from_le_bytes(c.try_into().unwrap()))
                .collect()
        }
        other => return Err(Error::Parse { line: 1, msg: format!("unknown format {other}") }),
    };
    if values.len() != n {
        return Err(Error::Parse { line: 2, msg: format!("expected {n} values, got {}", values.len()) });
    }
    Ok((Density::nonnegative(grid, values)?, time))
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;
    use std::f64::consts::PI;

    fn grid(nx: usize, vmax: f64, nv: usize) -> PhaseGrid {
        PhaseGrid::new(2, 4.0, nx, vmax, nv).unwrap()
    }

    fn random_density(g: &PhaseGrid, seed: u64) -> Density {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let v: Vec<f64> = (0..g.len()).map(|_| rng.gen_range(0.1..1.0)).collect();
        Density::normalized(*g, v).unwrap()
    }

    #[test]
    fn grid_geometry() {
        let g = grid(8, 6.0, 16);
        assert_eq!(g.len(), 64 * 256);
        assert_eq!(g.dx(), 0.5);
        assert_eq!(g.dv(), 0.75);
        let v = g.velocities();
        let s: f64 = v.iter().sum();
        assert_eq!(s, 0.0);
        assert!(PhaseGrid::new(4, 1.0, 2, 1.0, 2).is_err());
    }

    #[test]
    fn density_validation() {
        let g = grid(2, 1.0, 2);
        assert!(Density::new(g, vec![0.0; g.len()]).is_err());
        let mut v = vec![1.0; g.len()];
        v[0] = -1.0;
        assert!(Density::nonnegative(g, v).is_err());
        assert!(Density::nonnegative(g, vec![f64::NAN; g.len()]).is_err());
        assert!((Density::uniform(g).mass() - 1.0).abs() < 1e-14);
    }

    #[test]
    fn maxwellian_moments() {
        let g = grid(2, 6.0, 16);
        let m = maxwellian(&g, &[0.0, 0.0], 1.0).unwrap();
        let r = moments(&m, 2.0, 2.0);
        assert!(r.momentum.iter().all(|p| p.abs() < 1e-12));
        let g32 = grid(2, 3.0, 32);
        let m = maxwellian(&g32, &[0.0, 0.0], 0.25).unwrap();
        let r = moments(&m, 0.0, 0.0);
        assert!((r.kinetic_energy - 0.25).abs() < 1e-3);
        assert_eq!(maxwellian(&g32, &[0.0, 0.0], 0.25).unwrap(), m);
        assert!(matches!(maxwellian(&g, &[0.0, 0.0], 9.0), Err(Error::ExcessiveTruncation { .. })));
    }

    #[test]
    fn moment_examples() {
        let g = grid(4, 2.0, 4);
        let u = Density::uniform(g);
        let r = moments(&u, 0.0, 0.0);
        assert!((r.mass - 1.0).abs() < 1e-14);
        assert!(r.momentum.iter().all(|p| p.abs() < 1e-14));
        assert!((r.e_pq - 2.0).abs() < 1e-14);
        let mut last = f64::INFINITY;
        for n in [4usize, 8, 16, 32] {
            let g = PhaseGrid::new(2, 4.0, n, 2.0, n).unwrap();
            let mut v = vec![0.0; g.len()];
            // cell touching the origin from above in every coordinate
            let i = (n / 2) * (1 + n);
            let j = (n / 2) * (1 + n);
            v[i * g.n_vel() + j] = 1.0;
            let f = Density::normalized(g, v).unwrap();
            let e = moments(&f, 2.0, 2.0).e_pq;
            assert!(e > 2.0 && e < last);
            last = e;
        }
        assert!(last - 2.0 < 0.02);
    }

    #[test]
    fn entropy_examples() {
        let g = grid(4, 2.0, 4);
        let u = Density::uniform(g);
        assert!((entropy(&u) + g.phase_volume().ln()).abs() < 1e-12);
        let a = random_density(&g, 1);
        let b = random_density(&g, 2);
        let mid: Vec<f64> = a.values().iter().zip(b.values()).map(|(x, y)| 0.5 * (x + y)).collect();
        let mid = Density::new(g, mid).unwrap();
        assert!(entropy(&mid) <= 0.5 * entropy(&a) + 0.5 * entropy(&b));
    }

    #[test]
    fn maxwellian_entropy_closed_form() {
        let g = PhaseGrid::new(2, 4.0, 2, 3.0, 64).unwrap();
        let m = maxwellian(&g, &[0.0, 0.0], 0.25).unwrap();
        let exact = -(16.0f64).ln() - (2.0 * PI * 0.25).ln() - 1.0;
        assert!((entropy(&m) - exact).abs() < 1e-3);
    }

    #[test]
    fn relative_entropy_properties() {
        let g = grid(2, 2.0, 4);
        let a = random_density(&g, 3);
        assert_eq!(relative_entropy(&a, &a).unwrap(), 0.0);
        for seed in 0..100 {
            let b = random_density(&g, 100 + seed);
            assert!(relative_entropy(&a, &b).unwrap() >= 0.0);
        }
        let mut z = a.values().to_vec();
        z[0] = 0.0;
        let z = Density::nonnegative(g, z).unwrap();
        assert!(matches!(relative_entropy_wrt(&a, z.values()), Err(Error::SupportViolation { cells: 1 })));
    }

    #[test]
    fn relative_entropy_second_order() {
        let g = grid(2, 6.0, 16);
        let m = maxwellian(&g, &[0.0, 0.0], 1.0).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(7);
        let mut h: Vec<f64> = (0..g.len()).map(|_| rng.gen_range(-1.0..1.0)).collect();
        // project out the mean so the perturbation keeps unit mass
        let mean = g.inner(&h, m.values()) / m.mass();
        h.iter_mut().for_each(|x| *x -= mean);
        let eps = 1e-3;
        let f: Vec<f64> = m.values().iter().zip(&h).map(|(a, b)| a * (1.0 + eps * b)).collect();
        let f = Density::new(g, f).unwrap();
        let chi2: f64 = m.values().iter().zip(&h).map(|(a, b)| a * (eps * b).powi(2)).sum::<f64>() * g.cell_volume();
        let re = relative_entropy(&f, &m).unwrap();
        assert!((re - 0.5 * chi2).abs() < 1e-3 * chi2);
    }

    #[test]
    fn entropy_moment_identity() {
        let g = grid(4, 6.0, 16);
        let f = random_density(&g, 11);
        let lat = g.velocity();
        let mut gauss = Vec::with_capacity(g.len());
        for i in 0..g.n_space() {
            let x = g.position(i);
            for j in 0..g.n_vel() {
                let v = lat.velocity(j);
                let r2: f64 = x.iter().chain(&v).map(|c| c * c).sum();
                gauss.push((-0.5 * r2).exp() / (2.0 * PI).powi(2));
            }
        }
        let h = entropy(&f);
        let rel = relative_entropy_wrt(&f, &gauss).unwrap();
        let e22 = moments(&f, 2.0, 2.0).e_pq;
        let rhs = rel - 0.5 * e22 + 1.0 - 2.0 * (2.0 * PI).ln();
        assert!((h - rhs).abs() < 1e-12 * h.abs().max(1.0));
    }

    #[test]
    fn fit_matches_moments_and_fixes_maxwellians() {
        let g = grid(2, 6.0, 16);
        let f = two_bump(&g, &[1.0, 0.5], 0.6, 0.3).unwrap();
        let m = fit_maxwellian(&f).unwrap();
        let (a, b) = (moments(&f, 0.0, 0.0), moments(&m, 0.0, 0.0));
        assert!((a.mass - b.mass).abs() < 1e-13);
        assert!((a.kinetic_energy - b.kinetic_energy).abs() < 1e-12);
        for k in 0..2 {
            assert!((a.momentum[k] - b.momentum[k]).abs() < 1e-13);
        }
        let mx = maxwellian(&g, &[0.3, -0.2], 0.9).unwrap();
        let fit = fit_maxwellian(&mx).unwrap();
        assert!(g.l1_distance(mx.values(), fit.values()) < 1e-12);
    }

    #[test]
    fn snapshot_round_trip() {
        let g = grid(2, 2.0, 4);
        let f = random_density(&g, 5);
        for fmt in [SnapshotFormat::Text, SnapshotFormat::Binary] {
            let mut buf = Vec::new();
            write_snapshot(&mut buf, &f, 0.125, fmt).unwrap();
            let (back, t) = read_snapshot(&buf[..]).unwrap();
            assert_eq!(t, 0.125);
            assert_eq!(back, f);
        }
        let bad = b"fbe-snapshot v1 d=2 L=4 nx=2 vmax=2 nv=4 time=0 format=text\n1.0\nxyz\n";
        assert!(matches!(read_snapshot(&bad[..]), Err(Error::Parse { line: 3, .. })));
    }
}
