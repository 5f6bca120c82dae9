//! Collision map, sphere quadrature and discrete-velocity-model tables.

use std::collections::HashMap;
use std::f64::consts::PI;
use std::fmt::Write as _;
use std::io::{BufRead, Write};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::kernels::{check_unit, dot, CollisionKernel};

/// Post-collision velocities `v' = v - ⟨v - v_*, ω⟩ω`, `v'_* = v_* + ⟨v - v_*, ω⟩ω`.
pub fn collide(v: &[f64], v_star: &[f64], omega: &[f64]) -> Result<(Vec<f64>, Vec<f64>)> {
    if v.len() != v_star.len() || v.len() != omega.len() {
        return Err(Error::InvalidInput("collide: dimension mismatch".into()));
    }
    if v.iter().chain(v_star).chain(omega).any(|c| !c.is_finite()) {
        return Err(Error::NonFinite("collide arguments".into()));
    }
    check_unit(omega)?;
    let mut vp = v.to_vec();
    let mut vsp = v_star.to_vec();
    collide_into(v, v_star, omega, &mut vp, &mut vsp);
    Ok((vp, vsp))
}

#[inline]
pub(crate) fn collide_into(v: &[f64], v_star: &[f64], omega: &[f64], vp: &mut [f64], vsp: &mut [f64]) {
    let proj: f64 = v
        .iter()
        .zip(v_star)
        .zip(omega)
        .map(|((a, b), w)| (a - b) * w)
        .sum();
    for a in 0..v.len() {
        vp[a] = v[a] - proj * omega[a];
        vsp[a] = v_star[a] + proj * omega[a];
    }
}

/// Surface measure of `S^{d-1}`.
pub fn sphere_area(d: usize) -> Result<f64> {
    match d {
        2 => Ok(2.0 * PI),
        3 => Ok(4.0 * PI),
        _ => Err(Error::UnsupportedDimension(d)),
    }
}

/// Quadrature on `S^{d-1}` with weights summing to the surface measure.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SphereQuadrature {
    pub dimension: usize,
    /// Flattened nodes, `dimension` components each.
    pub nodes: Vec<f64>,
    pub weights: Vec<f64>,
}

impl SphereQuadrature {
    pub fn len(&self) -> usize {
        self.weights.len()
    }

    pub fn is_empty(&self) -> bool {
        self.weights.is_empty()
    }

    pub fn node(&self, m: usize) -> &[f64] {
        &self.nodes[m * self.dimension..(m + 1) * self.dimension]
    }

    pub fn integrate(&self, f: impl Fn(&[f64]) -> f64) -> f64 {
        (0..self.len()).map(|m| self.weights[m] * f(self.node(m))).sum()
    }
}

/// d = 2: `n` equispaced angles starting at 0 (n even). d = 3: Gauss–Legendre
/// in `cos θ` with `p = ceil(sqrt(n/2))` nodes times `2p` equispaced azimuths.
pub fn sphere_quadrature(d: usize, n: usize) -> Result<SphereQuadrature> {
    if n < 4 {
        return Err(Error::InvalidInput(format!("sphere quadrature needs n >= 4, got {n}")));
    }
    match d {
        2 => {
            if n % 2 != 0 {
                return Err(Error::InvalidInput(format!(
                    "circle quadrature needs an even node count for antipodal symmetry, got {n}"
                )));
            }
            let mut nodes = Vec::with_capacity(2 * n);
            for m in 0..n {
                let a = 2.0 * PI * m as f64 / n as f64;
                nodes.push(a.cos());
                nodes.push(a.sin());
            }
            Ok(SphereQuadrature {
                dimension: 2,
                nodes,
                weights: vec![2.0 * PI / n as f64; n],
            })
        }
        3 => {
            let p = ((n as f64 / 2.0).sqrt().ceil() as usize).max(2);
            let n_az = 2 * p;
            let (z, wz) = gauss_legendre(p);
            let mut nodes = Vec::with_capacity(3 * p * n_az);
            let mut weights = Vec::with_capacity(p * n_az);
            for (zc, wc) in z.iter().zip(&wz) {
                let r = (1.0 - zc * zc).max(0.0).sqrt();
                for k in 0..n_az {
                    let phi = 2.0 * PI * (k as f64 + 0.5) / n_az as f64;
                    nodes.extend_from_slice(&[r * phi.cos(), r * phi.sin(), *zc]);
                    weights.push(wc * 2.0 * PI / n_az as f64);
                }
            }
            Ok(SphereQuadrature {
                dimension: 3,
                nodes,
                weights,
            })
        }
        _ => Err(Error::UnsupportedDimension(d)),
    }
}

/// Gauss–Legendre nodes and weights on `[-1, 1]`, antisymmetric node order.
pub(crate) fn gauss_legendre(n: usize) -> (Vec<f64>, Vec<f64>) {
    let mut x = vec![0.0; n];
    let mut w = vec![0.0; n];
    let nf = n as f64;
    for i in 0..n.div_ceil(2) {
        let mut z = (PI * (i as f64 + 0.75) / (nf + 0.5)).cos();
        let mut dp = 1.0;
        for _ in 0..100 {
            let mut p0 = 1.0;
            let mut p1 = 0.0;
            for j in 0..n {
                let p2 = p1;
                p1 = p0;
                let jf = j as f64;
                p0 = ((2.0 * jf + 1.0) * z * p1 - jf * p2) / (jf + 1.0);
            }
            dp = nf * (z * p0 - p1) / (z * z - 1.0);
            let z1 = z;
            z = z1 - p0 / dp;
            if (z - z1).abs() <= 1e-16 {
                break;
            }
        }
        x[i] = -z;
        x[n - 1 - i] = z;
        w[i] = 2.0 / ((1.0 - z * z) * dp * dp);
        w[n - 1 - i] = w[i];
    }
    if n % 2 == 1 {
        x[n / 2] = 0.0;
    }
    (x, w)
}

/// Uniform velocity lattice with `nv` nodes per axis at `-vmax + (a + 1/2) h`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct VelocityLattice {
    pub dimension: usize,
    pub nv: usize,
    pub vmax: f64,
}

impl VelocityLattice {
    pub fn new(dimension: usize, nv: usize, vmax: f64) -> Result<Self> {
        if !(2..=3).contains(&dimension) {
            return Err(Error::UnsupportedDimension(dimension));
        }
        if nv < 2 {
            return Err(Error::InvalidInput(format!("need at least 2 velocity nodes per axis, got {nv}")));
        }
        if !(vmax > 0.0 && vmax.is_finite()) {
            return Err(Error::InvalidInput(format!("vmax must be positive, got {vmax}")));
        }
        Ok(VelocityLattice { dimension, nv, vmax })
    }

    pub fn spacing(&self) -> f64 {
        2.0 * self.vmax / self.nv as f64
    }

    pub fn len(&self) -> usize {
        self.nv.pow(self.dimension as u32)
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn axis_index(&self, j: usize, axis: usize) -> usize {
        (j / self.nv.pow(axis as u32)) % self.nv
    }

    pub fn node_coordinate(&self, a: usize) -> f64 {
        -self.vmax + (a as f64 + 0.5) * self.spacing()
    }

    /// Velocity of node `j`.
    pub fn velocity(&self, j: usize) -> Vec<f64> {
        (0..self.dimension)
            .map(|axis| self.node_coordinate(self.axis_index(j, axis)))
            .collect()
    }

    /// Integer coordinates `2a - (nv - 1)`; the velocity equals `h/2` times these.
    pub fn integer_coords(&self, j: usize) -> [i64; 3] {
        let mut c = [0i64; 3];
        for (axis, slot) in c.iter_mut().enumerate().take(self.dimension) {
            *slot = 2 * self.axis_index(j, axis) as i64 - (self.nv as i64 - 1);
        }
        c
    }
}

/// Conserving quadruples `(j, l, j', l')` with positive weights.
#[derive(Debug, Clone, PartialEq)]
pub struct DvmTable {
    pub lattice: VelocityLattice,
    /// Geometric calibration factor included in every weight.
    pub lambda: f64,
    pub quadruples: Vec<[u32; 4]>,
    pub weights: Vec<f64>,
}

fn orbit(q: [u32; 4]) -> [[u32; 4]; 4] {
    let [j, l, jp, lp] = q;
    [[j, l, jp, lp], [jp, lp, j, l], [l, j, lp, jp], [lp, jp, l, j]]
}

/// Pairs grouped by integer momentum and energy.
fn pair_classes(lattice: &VelocityLattice) -> Vec<Vec<(u32, u32)>> {
    let n = lattice.len();
    let coords: Vec<[i64; 3]> = (0..n).map(|j| lattice.integer_coords(j)).collect();
    let mut classes: HashMap<([i64; 3], i64), Vec<(u32, u32)>> = HashMap::new();
    for j in 0..n {
        for l in 0..n {
            let (a, b) = (coords[j], coords[l]);
            let p = [a[0] + b[0], a[1] + b[1], a[2] + b[2]];
            let e: i64 = a.iter().chain(&b).map(|c| c * c).sum();
            classes.entry((p, e)).or_default().push((j as u32, l as u32));
        }
    }
    let mut out: Vec<Vec<(u32, u32)>> = classes.into_values().filter(|c| c.len() > 1).collect();
    for c in out.iter_mut() {
        c.sort_unstable();
    }
    out.sort_unstable();
    out
}

/// Ratio between the continuum loss rate of a unit-temperature lattice
/// Gaussian (unit kernel) and its loss rate through conserving partners only.
fn geometric_calibration(lattice: &VelocityLattice, classes: &[Vec<(u32, u32)>]) -> f64 {
    let n = lattice.len();
    let gauss: Vec<f64> = (0..n)
        .map(|j| {
            let v = lattice.velocity(j);
            (-0.5 * dot(&v, &v)).exp()
        })
        .collect();
    let total: f64 = gauss.iter().sum::<f64>().powi(2);
    let partnered: f64 = classes
        .iter()
        .flat_map(|c| c.iter())
        .map(|&(j, l)| gauss[j as usize] * gauss[l as usize])
        .sum();
    total / partnered
}

/// Enumerates every conserving quadruple on the lattice.
///
/// A pair `(j, l)` whose momentum/energy class holds `m` ordered pairs
/// scatters to each of the other `m - 1` with weight
/// `λ |S^{d-1}| B(v_j - v_l, ω) / (m - 1)`, `ω ∝ v_j - v_j'`.
pub fn build_dvm_table(lattice: &VelocityLattice, kernel: &CollisionKernel) -> Result<DvmTable> {
    kernel.validate()?;
    let area = sphere_area(lattice.dimension)?;
    let classes = pair_classes(lattice);
    if classes.is_empty() {
        return Err(Error::EmptyTable);
    }
    let lambda = geometric_calibration(lattice, &classes);
    let vel: Vec<Vec<f64>> = (0..lattice.len()).map(|j| lattice.velocity(j)).collect();
    let weight_of = |q: [u32; 4], m: usize| -> f64 {
        // evaluated on the orbit representative so that all symmetric
        // images carry bitwise identical weights
        let rep = orbit(q).into_iter().min().unwrap();
        let [j, l, jp, _] = rep.map(|x| x as usize);
        let rel: Vec<f64> = vel[j].iter().zip(&vel[l]).map(|(a, b)| a - b).collect();
        let mut omega: Vec<f64> = vel[j].iter().zip(&vel[jp]).map(|(a, b)| a - b).collect();
        let norm = dot(&omega, &omega).sqrt();
        omega.iter_mut().for_each(|c| *c /= norm);
        lambda * area * kernel.eval_unchecked(&rel, &omega) / (m - 1) as f64
    };
    let mut rows: Vec<([u32; 4], f64)> = Vec::new();
    for class in &classes {
        let m = class.len();
        for &(j, l) in class {
            for &(jp, lp) in class {
                if (j, l) != (jp, lp) {
                    let q = [j, l, jp, lp];
                    rows.push((q, weight_of(q, m)));
                }
            }
        }
    }
    rows.sort_unstable_by(|a, b| a.0.cmp(&b.0));
    Ok(DvmTable {
        lattice: *lattice,
        lambda,
        quadruples: rows.iter().map(|r| r.0).collect(),
        weights: rows.iter().map(|r| r.1).collect(),
    })
}

impl DvmTable {
    pub fn len(&self) -> usize {
        self.quadruples.len()
    }

    pub fn is_empty(&self) -> bool {
        self.quadruples.is_empty()
    }

    /// Exact integer re-check of momentum and energy conservation.
    pub fn conserves_exactly(&self, q: [u32; 4]) -> bool {
        let c = q.map(|j| self.lattice.integer_coords(j as usize));
        let mom = (0..3).all(|a| c[0][a] + c[1][a] == c[2][a] + c[3][a]);
        let sq = |x: [i64; 3]| x.iter().map(|v| v * v).sum::<i64>();
        mom && sq(c[0]) + sq(c[1]) == sq(c[2]) + sq(c[3])
    }

    /// Index of a quadruple, if listed.
    pub fn find(&self, q: [u32; 4]) -> Option<usize> {
        self.quadruples.binary_search(&q).ok()
    }

    /// Writes the flat text format: one header line, then `j l j' l' weight` rows.
    pub fn write_text<W: Write>(&self, mut out: W) -> Result<()> {
        let lat = &self.lattice;
        writeln!(
            out,
            "fbe-dvm v1 d={} nv={} vmax={:?} lambda={:?} rows={}",
            lat.dimension,
            lat.nv,
            lat.vmax,
            self.lambda,
            self.len()
        )?;
        let mut line = String::new();
        for (q, w) in self.quadruples.iter().zip(&self.weights) {
            line.clear();
            let _ = writeln!(line, "{} {} {} {} {:?}", q[0], q[1], q[2], q[3], w);
            out.write_all(line.as_bytes())?;
        }
        Ok(())
    }

    /// Reads the text format written by [`DvmTable::write_text`] and
    /// re-validates conservation and swap closure.
    pub fn read_text<R: BufRead>(input: R) -> Result<DvmTable> {
        let mut lines = input.lines();
        let header = lines
            .next()
            .ok_or(Error::Parse { line: 1, msg: "missing header".into() })??;
        let fields = parse_header(&header, "fbe-dvm")?;
        let get = |k: &str| -> Result<&str> {
            fields
                .get(k)
                .map(|s| s.as_str())
                .ok_or(Error::Parse { line: 1, msg: format!("header lacks {k}") })
        };
        let num = |k: &str| -> Result<f64> {
            get(k)?.parse::<f64>().map_err(|e| Error::Parse { line: 1, msg: format!("{k}: {e}") })
        };
        let lattice = VelocityLattice::new(num("d")? as usize, num("nv")? as usize, num("vmax")?)?;
        let lambda = num("lambda")?;
        let rows = num("rows")? as usize;
        let mut quadruples = Vec::with_capacity(rows);
        let mut weights = Vec::with_capacity(rows);
        let n = lattice.len() as u32;
        for (idx, line) in lines.enumerate() {
            let line = line?;
            let lineno = idx + 2;
            if line.trim().is_empty() {
                continue;
            }
            let parts: Vec<&str> = line.split_whitespace().collect();
            if parts.len() != 5 {
                return Err(Error::Parse { line: lineno, msg: "expected 5 fields".into() });
            }
            let mut q = [0u32; 4];
            for (slot, p) in q.iter_mut().zip(&parts[..4]) {
                *slot = p
                    .parse()
                    .map_err(|e| Error::Parse { line: lineno, msg: format!("index: {e}") })?;
                if *slot >= n {
                    return Err(Error::Parse { line: lineno, msg: "index out of range".into() });
                }
            }
            let w: f64 = parts[4]
                .parse()
                .map_err(|e| Error::Parse { line: lineno, msg: format!("weight: {e}") })?;
            if !(w > 0.0 && w.is_finite()) {
                return Err(Error::Parse { line: lineno, msg: "weight must be positive".into() });
            }
            quadruples.push(q);
            weights.push(w);
        }
        if quadruples.len() != rows {
            return Err(Error::Parse {
                line: 1,
                msg: format!("header declares {rows} rows, found {}", quadruples.len()),
            });
        }
        if quadruples.is_empty() {
            return Err(Error::EmptyTable);
        }
        let table = DvmTable { lattice, lambda, quadruples, weights };
        if !table.quadruples.windows(2).all(|w| w[0] < w[1]) {
            return Err(Error::InvalidInput("DVM rows must be strictly sorted".into()));
        }
        for (idx, q) in table.quadruples.iter().enumerate() {
            if !table.conserves_exactly(*q) {
                return Err(Error::Parse { line: idx + 2, msg: "quadruple does not conserve".into() });
            }
            let rev = [q[2], q[3], q[0], q[1]];
            match table.find(rev) {
                Some(r) if table.weights[r] == table.weights[idx] => {}
                _ => {
                    return Err(Error::Parse { line: idx + 2, msg: "table not closed under pre/post swap".into() })
                }
            }
        }
        Ok(table)
    }
}

/// Parses `tag v1 key=value ...`.
pub(crate) fn parse_header(header: &str, tag: &str) -> Result<HashMap<String, String>> {
    let mut parts = header.split_whitespace();
    if parts.next() != Some(tag) || parts.next() != Some("v1") {
        return Err(Error::Parse { line: 1, msg: format!("expected '{tag} v1' header") });
    }
    let mut map = HashMap::new();
    for p in parts {
        let (k, v) = p
            .split_once('=')
            .ok_or(Error::Parse { line: 1, msg: format!("malformed header field '{p}'") })?;
        map.insert(k.to_string(), v.to_string());
    }
    Ok(map)
}
