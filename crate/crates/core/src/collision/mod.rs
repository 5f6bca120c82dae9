//! Collision difference `∇̄`, its adjoint divergence, the fuzzy collision
//! operator `Q` and tuple sweeps for both velocity backends.
//!
//! A collision tuple is `(i, o, r)`: a spatial cell `i`, a spatial offset `o`
//! (partner cell `k = i - o`) and a velocity tuple `r`, which is a listed DVM
//! quadruple or a sphere-quadrature triple `(j, l, ω_m)`. Its weight is
//! `w = K(o) Δx^{2d} · W_r Δv^{2d}`. Divergences follow the convention
//! `⟨φ, ∇̄·U⟩ = ¼ Σ ∇̄φ · U · w`, so `Q = ∇̄·(ff_* - f'f'_*)`.

pub(crate) mod dvm;
pub(crate) mod quadrature;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::geometry::{build_dvm_table, sphere_quadrature, DvmTable, SphereQuadrature};
use crate::kernels::{CollisionKernel, SpatialKernel};
use crate::state::{Density, PhaseGrid};
use quadrature::{QuadTuple, QuadTuples};

/// Offsets whose folded kernel falls below this fraction of `k(0)` are dropped.
pub const KERNEL_CUTOFF: f64 = 1e-14;

/// Velocity discretisation of the collision integral.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum Backend {
    /// Exactly conservative discrete velocity model.
    Dvm,
    /// Sphere quadrature with multilinear interpolation of post velocities.
    Quadrature { n_omega: usize },
}

enum VelocityTuples {
    Dvm { table: DvmTable, canonical: Vec<u32> },
    Quad(QuadTuples),
}

/// Flux values on the collision tuples.
#[derive(Debug, Clone, PartialEq)]
pub enum CollisionFlux {
    /// One value per tuple in `(i, o, r)` order.
    Dense(Vec<f64>),
    /// `scale · (ff_* - f'f'_*)` of a density, evaluated on demand.
    True { density: Density, scale: f64 },
}

impl CollisionFlux {
    pub fn scaled(&self, factor: f64) -> CollisionFlux {
        match self {
            CollisionFlux::Dense(v) => CollisionFlux::Dense(v.iter().map(|x| x * factor).collect()),
            CollisionFlux::True { density, scale } => CollisionFlux::True {
                density: density.clone(),
                scale: scale * factor,
            },
        }
    }

    #[inline]
    pub fn value(&self, t: &TupleRef) -> f64 {
        match self {
            CollisionFlux::Dense(v) => v[t.index()],
            CollisionFlux::True { density, scale } => {
                let (s, u) = t.products(density.values());
                scale * (s - u)
            }
        }
    }

    /// Whether the flux is identical on every spatial pair (enables the
    /// homogeneous fast path).
    pub fn is_homogeneous(&self) -> bool {
        match self {
            CollisionFlux::Dense(_) => false,
            CollisionFlux::True { density, .. } => density.is_homogeneous(),
        }
    }

    /// Checks that the flux lives on `op`'s tuple set.
    pub fn check(&self, op: &CollisionOperator) -> Result<()> {
        match self {
            CollisionFlux::Dense(v) if v.len() != op.tuple_count() => Err(Error::InconsistentTuples(format!(
                "flux has {} values, tuple set has {}",
                v.len(),
                op.tuple_count()
            ))),
            CollisionFlux::True { density, .. } if density.grid() != op.grid() => {
                Err(Error::InconsistentTuples("flux density lives on a different grid".into()))
            }
            CollisionFlux::Dense(v) if v.iter().any(|x| !x.is_finite()) => {
                Err(Error::NonFinite("flux value".into()))
            }
            _ => Ok(()),
        }
    }
}

/// One collision tuple during a sweep.
pub struct TupleRef<'a> {
    pub i: usize,
    pub k: usize,
    pub offset: usize,
    pub r: usize,
    op: &'a CollisionOperator,
}

impl TupleRef<'_> {
    /// Position of this tuple in a dense flux.
    #[inline]
    pub fn index(&self) -> usize {
        (self.i * self.op.kvals.len() + self.offset) * self.op.n_velocity_tuples() + self.r
    }

    /// `w = K(o) Δx^{2d} W_r Δv^{2d}`.
    pub fn weight(&self) -> f64 {
        let g = &self.op.grid;
        self.op.kvals[self.offset] * self.op.velocity_weight(self.r) * (g.space_volume() * g.vel_volume()).powi(2)
    }

    /// `(φ(x_i, v_j), φ(x_k, v_l))`.
    #[inline]
    pub fn pre(&self, field: &[f64]) -> (f64, f64) {
        let nvd = self.op.nvd;
        let (j, l) = self.op.pre_nodes(self.r);
        (field[self.i * nvd + j], field[self.k * nvd + l])
    }

    /// `(φ(x_i, v'), φ(x_k, v'_*))`, interpolated on the quadrature backend.
    #[inline]
    pub fn post(&self, field: &[f64]) -> (f64, f64) {
        let nvd = self.op.nvd;
        let ri = &field[self.i * nvd..(self.i + 1) * nvd];
        let rk = &field[self.k * nvd..(self.k + 1) * nvd];
        match &self.op.vel {
            VelocityTuples::Dvm { table, .. } => {
                let q = table.quadruples[self.r];
                (ri[q[2] as usize], rk[q[3] as usize])
            }
            VelocityTuples::Quad(qt) => {
                let t = &qt.tuples[self.r];
                let (d, nv) = (self.op.grid.d, self.op.grid.nv);
                (t.post.eval(d, nv, ri), t.post_star.eval(d, nv, rk))
            }
        }
    }

    /// `∇̄φ = φ' + φ'_* - φ - φ_*`.
    #[inline]
    pub fn gradbar(&self, field: &[f64]) -> f64 {
        let (a, b) = self.pre(field);
        let (c, d) = self.post(field);
        c + d - a - b
    }

    /// `(s, t) = (ff_*, f'f'_*)`.
    #[inline]
    pub fn products(&self, f: &[f64]) -> (f64, f64) {
        let (a, b) = self.pre(f);
        let (c, d) = self.post(f);
        (a * b, c * d)
    }
}

/// Tuple set, kernels and fast evaluators of the collision operator.
pub struct CollisionOperator {
    grid: PhaseGrid,
    kernel: CollisionKernel,
    spatial: SpatialKernel,
    backend: Backend,
    nvd: usize,
    /// Folded spatial kernel per retained offset.
    kvals: Vec<f64>,
    /// `nbr[i * n_off + o]`: partner cell of `i` under offset `o`.
    nbr: Vec<u32>,
    /// `nbr_inv[c * n_off + o]`: the cell whose partner under `o` is `c`.
    nbr_inv: Vec<u32>,
    vel: VelocityTuples,
    /// `max_{n,l} A(n,l)` with `A` the loss coefficient of the pair.
    loss_coeff_max: f64,
}

impl CollisionOperator {
    pub fn new(grid: PhaseGrid, kernel: CollisionKernel, spatial: SpatialKernel, backend: Backend) -> Result<Self> {
        kernel.validate()?;
        spatial.validate()?;
        let vel = match backend {
            Backend::Dvm => {
                let table = build_dvm_table(&grid.velocity(), &kernel)?;
                VelocityTuples::Dvm { canonical: dvm::canonical(&table), table }
            }
            Backend::Quadrature { n_omega } => {
                let sphere = sphere_quadrature(grid.d, n_omega)?;
                VelocityTuples::Quad(QuadTuples::build(&grid.velocity(), &kernel, sphere))
            }
        };
        Self::assemble_parts(grid, kernel, spatial, backend, vel)
    }

    /// Operator on a previously built (or loaded) DVM table.
    pub fn with_dvm_table(grid: PhaseGrid, kernel: CollisionKernel, spatial: SpatialKernel, table: DvmTable) -> Result<Self> {
        if table.lattice != grid.velocity() {
            return Err(Error::InvalidInput("DVM table lattice does not match the grid".into()));
        }
        if table.is_empty() {
            return Err(Error::EmptyTable);
        }
        let vel = VelocityTuples::Dvm { canonical: dvm::canonical(&table), table };
        Self::assemble_parts(grid, kernel, spatial, Backend::Dvm, vel)
    }

    fn assemble_parts(
        grid: PhaseGrid,
        kernel: CollisionKernel,
        spatial: SpatialKernel,
        backend: Backend,
        vel: VelocityTuples,
    ) -> Result<Self> {
        let d = grid.d;
        let nx = grid.nx;
        let ns = grid.n_space();
        let dx = grid.dx();
        let k0 = spatial.eval_torus(&vec![0.0; d], grid.torus_side)?;
        let mut kvals = Vec::new();
        let mut shifts = Vec::new();
        for flat in 0..ns {
            let e: Vec<i64> = (0..d)
                .map(|a| {
                    let c = grid.space_axis_index(flat, a) as i64;
                    if 2 * c >= nx as i64 { c - nx as i64 } else { c }
                })
                .collect();
            let z: Vec<f64> = e.iter().map(|&c| c as f64 * dx).collect();
            let kv = spatial.eval_torus(&z, grid.torus_side)?;
            if kv >= KERNEL_CUTOFF * k0 {
                kvals.push(kv);
                shifts.push(e);
            }
        }
        let n_off = kvals.len();
        let wrap = |i: usize, e: &[i64], sign: i64| -> usize {
            let mut out = 0usize;
            let mut stride = 1usize;
            for (a, &ea) in e.iter().enumerate() {
                let c = grid.space_axis_index(i, a) as i64;
                let m = (c - sign * ea).rem_euclid(nx as i64) as usize;
                out += m * stride;
                stride *= nx;
            }
            out
        };
        let mut nbr = vec![0u32; ns * n_off];
        let mut nbr_inv = vec![0u32; ns * n_off];
        for i in 0..ns {
            for (o, e) in shifts.iter().enumerate() {
                nbr[i * n_off + o] = wrap(i, e, 1) as u32;
                nbr_inv[i * n_off + o] = wrap(i, e, -1) as u32;
            }
        }
        let loss_coeff_max = match &vel {
            VelocityTuples::Dvm { table, .. } => dvm::max_pair_coefficient(table),
            VelocityTuples::Quad(qt) => quad_max_pair_coefficient(&qt.tuples),
        };
        Ok(CollisionOperator {
            grid,
            kernel,
            spatial,
            backend,
            nvd: grid.n_vel(),
            kvals,
            nbr,
            nbr_inv,
            vel,
            loss_coeff_max,
        })
    }

    pub fn grid(&self) -> &PhaseGrid {
        &self.grid
    }

    pub fn backend(&self) -> Backend {
        self.backend
    }

    pub fn kernel(&self) -> &CollisionKernel {
        &self.kernel
    }

    pub fn spatial_kernel(&self) -> &SpatialKernel {
        &self.spatial
    }

    pub fn dvm_table(&self) -> Option<&DvmTable> {
        match &self.vel {
            VelocityTuples::Dvm { table, .. } => Some(table),
            VelocityTuples::Quad(_) => None,
        }
    }

    pub fn sphere(&self) -> Option<&SphereQuadrature> {
        match &self.vel {
            VelocityTuples::Quad(qt) => Some(&qt.sphere),
            VelocityTuples::Dvm { .. } => None,
        }
    }

    /// Fraction of quadrature kernel weight dropped at the velocity box.
    pub fn dropped_fraction(&self) -> f64 {
        match &self.vel {
            VelocityTuples::Quad(qt) => qt.dropped_fraction,
            VelocityTuples::Dvm { .. } => 0.0,
        }
    }

    pub fn n_offsets(&self) -> usize {
        self.kvals.len()
    }

    pub fn n_velocity_tuples(&self) -> usize {
        match &self.vel {
            VelocityTuples::Dvm { table, .. } => table.len(),
            VelocityTuples::Quad(qt) => qt.tuples.len(),
        }
    }

    /// Number of collision tuples `(i, o, r)`.
    pub fn tuple_count(&self) -> usize {
        self.grid.n_space() * self.n_offsets() * self.n_velocity_tuples()
    }

    /// Folded spatial kernel values of the retained offsets.
    pub fn kernel_values(&self) -> &[f64] {
        &self.kvals
    }

    /// `Σ_o K(o)`.
    fn kernel_sum(&self) -> f64 {
        self.kvals.iter().sum()
    }

    /// `W_r`: table weight (DVM) or `B · ω-weight` (quadrature).
    #[inline]
    pub fn velocity_weight(&self, r: usize) -> f64 {
        match &self.vel {
            VelocityTuples::Dvm { table, .. } => table.weights[r],
            VelocityTuples::Quad(qt) => qt.tuples[r].weight,
        }
    }

    #[inline]
    fn pre_nodes(&self, r: usize) -> (usize, usize) {
        match &self.vel {
            VelocityTuples::Dvm { table, .. } => {
                let q = table.quadruples[r];
                (q[0] as usize, q[1] as usize)
            }
            VelocityTuples::Quad(qt) => {
                let t = &qt.tuples[r];
                (t.j as usize, t.l as usize)
            }
        }
    }

    fn check_len(&self, field: &[f64]) -> Result<()> {
        if field.len() != self.grid.len() {
            return Err(Error::InvalidInput(format!(
                "grid function has {} values, expected {}",
                field.len(),
                self.grid.len()
            )));
        }
        Ok(())
    }

    /// Velocity tuples visited by sweeps: all, or one per pre/post pair (DVM,
    /// symmetric integrands) with a factor 2.
    fn sweep_list(&self, symmetric: bool) -> (Option<&[u32]>, f64) {
        match &self.vel {
            VelocityTuples::Dvm { canonical, .. } if symmetric => (Some(canonical), 2.0),
            _ => (None, 1.0),
        }
    }

    /// Number of tuples each visited tuple stands for in [`Self::sweep`].
    pub fn sweep_multiplicity(&self, homogeneous: bool, symmetric: bool) -> usize {
        let sym = self.sweep_list(symmetric).1 as usize;
        if homogeneous { sym * self.grid.n_space() * self.n_offsets() } else { sym }
    }

    /// `Σ_tuples w · term(tuple)`.
    ///
    /// `homogeneous` promises that every field read by `term` has identical
    /// spatial rows; `symmetric` promises invariance under pre/post exchange.
    /// Partial sums are reduced in a fixed cell order, so the result does not
    /// depend on the number of workers.
    pub fn sweep<F>(&self, homogeneous: bool, symmetric: bool, term: F) -> f64
    where
        F: Fn(&TupleRef) -> f64 + Sync,
    {
        let (list, sym) = self.sweep_list(symmetric);
        let nr = self.n_velocity_tuples();
        let vol2 = (self.grid.space_volume() * self.grid.vel_volume()).powi(2);
        let row_sum = |i: usize, k: usize, offset: usize| -> f64 {
            let mut acc = 0.0;
            let mut visit = |r: usize| {
                let t = TupleRef { i, k, offset, r, op: self };
                let v = term(&t);
                if v != 0.0 {
                    acc += self.velocity_weight(r) * v;
                }
            };
            match list {
                Some(l) => l.iter().for_each(|&r| visit(r as usize)),
                None => (0..nr).for_each(&mut visit),
            }
            acc
        };
        if homogeneous {
            let s = row_sum(0, 0, 0);
            return s * self.kernel_sum() * self.grid.n_space() as f64 * vol2 * sym;
        }
        let n_off = self.n_offsets();
        let partial: Vec<f64> = (0..self.grid.n_space())
            .into_par_iter()
            .map(|i| {
                (0..n_off)
                    .map(|o| {
                        let s = row_sum(i, self.nbr[i * n_off + o] as usize, o);
                        if s == 0.0 { 0.0 } else { self.kvals[o] * s }
                    })
                    .sum::<f64>()
            })
            .collect();
        partial.iter().sum::<f64>() * vol2 * sym
    }

    /// Divergence of the tuple function `U = coeff(tuple)`:
    /// the grid function with `⟨φ, ∇̄·U⟩ = ¼ Σ ∇̄φ U w` for every `φ`.
    /// `subset` restricts the velocity tuples (tuples outside carry `U = 0`).
    pub fn assemble_divergence<F>(&self, homogeneous: bool, subset: Option<&[u32]>, coeff: F) -> Vec<f64>
    where
        F: Fn(&TupleRef) -> f64 + Sync,
    {
        let nvd = self.nvd;
        let nr = self.n_velocity_tuples();
        let n_off = self.n_offsets();
        let (d, nv) = (self.grid.d, self.grid.nv);
        let scale = 0.25 * self.grid.space_volume() * self.grid.vel_volume();
        // adds the first-slot (or second-slot) contributions of (i, k, o) to `row`
        let slot = |i: usize, k: usize, o: usize, first: bool, factor: f64, row: &mut [f64]| {
            let mut visit = |r: usize| {
                let t = TupleRef { i, k, offset: o, r, op: self };
                let u = coeff(&t);
                if u == 0.0 {
                    return;
                }
                let c = factor * self.velocity_weight(r) * u;
                match &self.vel {
                    VelocityTuples::Dvm { table, .. } => {
                        let q = table.quadruples[r];
                        let (pre, post) = if first { (q[0], q[2]) } else { (q[1], q[3]) };
                        row[post as usize] += c;
                        row[pre as usize] -= c;
                    }
                    VelocityTuples::Quad(qt) => {
                        let tq: &QuadTuple = &qt.tuples[r];
                        if first {
                            tq.post.scatter(d, nv, c, row);
                            row[tq.j as usize] -= c;
                        } else {
                            tq.post_star.scatter(d, nv, c, row);
                            row[tq.l as usize] -= c;
                        }
                    }
                }
            };
            match subset {
                Some(s) => s.iter().for_each(|&r| visit(r as usize)),
                None => (0..nr).for_each(&mut visit),
            }
        };
        if homogeneous {
            let mut row = vec![0.0; nvd];
            let ks = self.kernel_sum();
            slot(0, 0, 0, true, ks, &mut row);
            slot(0, 0, 0, false, ks, &mut row);
            row.iter_mut().for_each(|x| *x *= scale);
            return self.grid.broadcast_row(&row);
        }
        let rows: Vec<Vec<f64>> = (0..self.grid.n_space())
            .into_par_iter()
            .map(|c| {
                let mut row = vec![0.0; nvd];
                for o in 0..n_off {
                    let kv = self.kvals[o];
                    slot(c, self.nbr[c * n_off + o] as usize, o, true, kv, &mut row);
                    slot(self.nbr_inv[c * n_off + o] as usize, c, o, false, kv, &mut row);
                }
                row.iter_mut().for_each(|x| *x *= scale);
                row
            })
            .collect();
        rows.concat()
    }

    /// `g_i(l) = Σ_o K(o) Δx^d f_{i-o}(l)`, summed in offset order.
    pub fn smooth(&self, f: &[f64]) -> Vec<f64> {
        let nvd = self.nvd;
        let n_off = self.n_offsets();
        let sv = self.grid.space_volume();
        let rows: Vec<Vec<f64>> = (0..self.grid.n_space())
            .into_par_iter()
            .map(|i| {
                let mut row = vec![0.0; nvd];
                for o in 0..n_off {
                    let k = self.nbr[i * n_off + o] as usize;
                    let kv = self.kvals[o] * sv;
                    for (acc, x) in row.iter_mut().zip(&f[k * nvd..(k + 1) * nvd]) {
                        *acc += kv * x;
                    }
                }
                row
            })
            .collect();
        rows.concat()
    }

    fn q_row(&self, f: &[f64], g: &[f64], out: &mut [f64]) {
        match &self.vel {
            VelocityTuples::Dvm { table, canonical } => dvm::q_row(table, canonical, self.grid.vel_volume(), f, g, out),
            VelocityTuples::Quad(qt) => {
                quadrature::q_row(&qt.tuples, self.grid.d, self.grid.nv, self.grid.vel_volume(), f, g, out)
            }
        }
    }

    /// `Q(f)` for an arbitrary grid function (bilinear in `f`).
    pub fn apply_q_values(&self, f: &[f64]) -> Vec<f64> {
        let nvd = self.nvd;
        if self.grid.is_homogeneous(f) {
            let row = &f[..nvd];
            let ks = self.kernel_sum() * self.grid.space_volume();
            let g: Vec<f64> = row.iter().map(|x| ks * x).collect();
            let mut out = vec![0.0; nvd];
            self.q_row(row, &g, &mut out);
            return self.grid.broadcast_row(&out);
        }
        let g = self.smooth(f);
        let rows: Vec<Vec<f64>> = (0..self.grid.n_space())
            .into_par_iter()
            .map(|i| {
                let mut out = vec![0.0; nvd];
                self.q_row(&f[i * nvd..(i + 1) * nvd], &g[i * nvd..(i + 1) * nvd], &mut out);
                out
            })
            .collect();
        rows.concat()
    }

    /// Fuzzy collision operator `Q(f) = ∇̄·(ff_* - f'f'_*)`.
    pub fn apply_q(&self, f: &Density) -> Vec<f64> {
        self.apply_q_values(f.values())
    }

    /// Reference evaluation of `Q` through the generic divergence assembly.
    pub fn apply_q_assembled(&self, f: &Density) -> Vec<f64> {
        let vals = f.values();
        self.assemble_divergence(f.is_homogeneous(), None, |t| {
            let (s, u) = t.products(vals);
            s - u
        })
    }

    /// `-¼ Σ ∇̄φ (f'f'_* - ff_*) w`.
    pub fn weak_form(&self, f: &Density, phi: &[f64]) -> Result<f64> {
        self.check_len(phi)?;
        let vals = f.values();
        let homogeneous = f.is_homogeneous() && self.grid.is_homogeneous(phi);
        Ok(-0.25
            * self.sweep(homogeneous, false, |t| {
                let (s, u) = t.products(vals);
                t.gradbar(phi) * (u - s)
            }))
    }

    /// `U = ff_* - f'f'_*`, evaluated lazily.
    pub fn true_flux(&self, f: &Density) -> CollisionFlux {
        CollisionFlux::True { density: f.clone(), scale: 1.0 }
    }

    /// `U = ff_* - f'f'_*` stored per tuple.
    pub fn true_flux_dense(&self, f: &Density) -> CollisionFlux {
        let vals = f.values();
        let nr = self.n_velocity_tuples();
        let n_off = self.n_offsets();
        let rows: Vec<Vec<f64>> = (0..self.grid.n_space())
            .into_par_iter()
            .map(|i| {
                let mut out = Vec::with_capacity(n_off * nr);
                for o in 0..n_off {
                    let k = self.nbr[i * n_off + o] as usize;
                    for r in 0..nr {
                        let (s, u) = TupleRef { i, k, offset: o, r, op: self }.products(vals);
                        out.push(s - u);
                    }
                }
                out
            })
            .collect();
        CollisionFlux::Dense(rows.concat())
    }

    /// `∇̄·U`.
    pub fn divergence(&self, flux: &CollisionFlux) -> Result<Vec<f64>> {
        flux.check(self)?;
        Ok(match flux {
            CollisionFlux::True { density, scale } => {
                self.apply_q(density).into_iter().map(|x| x * scale).collect()
            }
            CollisionFlux::Dense(_) => self.assemble_divergence(false, None, |t| flux.value(t)),
        })
    }

    /// `¼ Σ ∇̄φ U w`; equals `⟨φ, ∇̄·U⟩`.
    pub fn pairing(&self, phi: &[f64], flux: &CollisionFlux) -> Result<f64> {
        self.check_len(phi)?;
        flux.check(self)?;
        Ok(match flux {
            CollisionFlux::True { density, scale } => scale * self.grid.inner(phi, &self.apply_q(density)),
            CollisionFlux::Dense(_) => 0.25 * self.sweep(false, false, |t| t.gradbar(phi) * flux.value(t)),
        })
    }

    /// Brute-force `¼ Σ ∇̄φ U w` by tuple sweep, bypassing fast paths.
    pub fn pairing_sweep(&self, phi: &[f64], flux: &CollisionFlux) -> Result<f64> {
        self.check_len(phi)?;
        flux.check(self)?;
        let homogeneous = flux.is_homogeneous() && self.grid.is_homogeneous(phi);
        Ok(0.25 * self.sweep(homogeneous, false, |t| t.gradbar(phi) * flux.value(t)))
    }

    /// `¼ Σ |∇̄φ U| w`, the scale against which pairing roundoff is judged.
    pub fn pairing_magnitude(&self, phi: &[f64], flux: &CollisionFlux) -> f64 {
        let homogeneous = flux.is_homogeneous() && self.grid.is_homogeneous(phi);
        0.25 * self.sweep(homogeneous, false, |t| (t.gradbar(phi) * flux.value(t)).abs())
    }

    /// `Σ |U| w`.
    pub fn total_variation(&self, flux: &CollisionFlux) -> f64 {
        let sym = matches!(flux, CollisionFlux::True { .. });
        self.sweep(flux.is_homogeneous(), sym, |t| flux.value(t).abs())
    }

    /// Largest per-node loss rate `Σ_* B k f_*` weights over all cells.
    pub fn max_loss_rate(&self, f: &[f64]) -> f64 {
        let nvd = self.nvd;
        let vv = self.grid.vel_volume();
        let row_max = |g: &[f64]| -> f64 {
            let mut loss = vec![0.0; nvd];
            match &self.vel {
                VelocityTuples::Dvm { table, .. } => {
                    for (q, w) in table.quadruples.iter().zip(&table.weights) {
                        loss[q[0] as usize] += w * vv * g[q[1] as usize];
                    }
                }
                VelocityTuples::Quad(qt) => {
                    for t in &qt.tuples {
                        loss[t.j as usize] += 0.5 * t.weight * vv * g[t.l as usize];
                    }
                }
            }
            loss.into_iter().fold(0.0, f64::max)
        };
        if self.grid.is_homogeneous(f) {
            let sv = self.grid.space_volume();
            let ks = self.kernel_sum();
            let g: Vec<f64> = f[..nvd].iter().map(|x| ks * sv * x).collect();
            return row_max(&g);
        }
        let g = self.smooth(f);
        (0..self.grid.n_space())
            .into_par_iter()
            .map(|i| row_max(&g[i * nvd..(i + 1) * nvd]))
            .collect::<Vec<f64>>()
            .into_iter()
            .fold(0.0, f64::max)
    }

    /// `C_B = max_{n,l} A(n,l) · max K`: loss rates never exceed `C_B · mass`.
    pub fn loss_bound_constant(&self) -> f64 {
        self.loss_coeff_max * self.kvals.iter().cloned().fold(0.0, f64::max)
    }

    /// Entropy dissipation through the separable per-cell formula
    /// `½Δx^dΔv^{2d} Σ_i Σ_r W (F'G' - fg)(log F' - log f)`; `None` unless `f > 0`.
    pub fn dissipation_fast(&self, f: &Density) -> Option<f64> {
        if !f.is_strictly_positive() {
            return None;
        }
        let vals = f.values();
        let nvd = self.nvd;
        let (d, nv) = (self.grid.d, self.grid.nv);
        let row = |fr: &[f64], gr: &[f64]| -> f64 {
            let logf: Vec<f64> = fr.iter().map(|x| x.ln()).collect();
            match &self.vel {
                VelocityTuples::Dvm { table, canonical } => 2.0 * dvm::dissipation_row(table, canonical, fr, &logf, gr),
                VelocityTuples::Quad(qt) => quadrature::dissipation_row(&qt.tuples, d, nv, fr, &logf, gr),
            }
        };
        let pref = 0.5 * self.grid.space_volume() * self.grid.vel_volume().powi(2);
        if f.is_homogeneous() {
            let ks = self.kernel_sum() * self.grid.space_volume();
            let g: Vec<f64> = vals[..nvd].iter().map(|x| ks * x).collect();
            return Some(pref * self.grid.n_space() as f64 * row(&vals[..nvd], &g));
        }
        let g = self.smooth(vals);
        let parts: Vec<f64> = (0..self.grid.n_space())
            .into_par_iter()
            .map(|i| row(&vals[i * nvd..(i + 1) * nvd], &g[i * nvd..(i + 1) * nvd]))
            .collect();
        Some(pref * parts.iter().sum::<f64>())
    }

    /// Velocity tuples on which a spatially constant field has nonzero `∇̄`.
    pub fn active_tuples(&self, row: &[f64]) -> Vec<u32> {
        let field = row;
        (0..self.n_velocity_tuples())
            .filter(|&r| {
                let t = TupleRef { i: 0, k: 0, offset: 0, r, op: self };
                t.gradbar(field) != 0.0
            })
            .map(|r| r as u32)
            .collect()
    }
}

fn quad_max_pair_coefficient(tuples: &[QuadTuple]) -> f64 {
    let mut best = 0.0f64;
    let mut idx = 0;
    while idx < tuples.len() {
        let key = (tuples[idx].j, tuples[idx].l);
        let mut acc = 0.0;
        while idx < tuples.len() && (tuples[idx].j, tuples[idx].l) == key {
            acc += 0.5 * tuples[idx].weight;
            idx += 1;
        }
        best = best.max(acc);
    }
    best
}
