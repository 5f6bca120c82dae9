//! Discrete velocity model evaluators over the quadruple table.

use crate::geometry::DvmTable;

/// Indices of quadruples with `(j, l) < (j', l')`: one per pre/post pair.
pub(crate) fn canonical(table: &DvmTable) -> Vec<u32> {
    table
        .quadruples
        .iter()
        .enumerate()
        .filter(|(_, q)| (q[0], q[1]) < (q[2], q[3]))
        .map(|(r, _)| r as u32)
        .collect()
}

/// `max_{j,l} Σ_{(j,l,·,·)} W`.
pub(crate) fn max_pair_coefficient(table: &DvmTable) -> f64 {
    let q = &table.quadruples;
    let mut best = 0.0f64;
    let mut idx = 0;
    while idx < q.len() {
        let key = (q[idx][0], q[idx][1]);
        let mut acc = 0.0;
        while idx < q.len() && (q[idx][0], q[idx][1]) == key {
            acc += table.weights[idx];
            idx += 1;
        }
        best = best.max(acc);
    }
    best
}

/// Collision operator row for one cell:
/// `Q(n) = Δv^d Σ_canonical W [f(j')g(l') - f(j)g(l)](δ_jn - δ_j'n)`.
pub(crate) fn q_row(table: &DvmTable, canonical: &[u32], vel_vol: f64, f: &[f64], g: &[f64], out: &mut [f64]) {
    for &r in canonical {
        let [j, l, jp, lp] = table.quadruples[r as usize].map(|x| x as usize);
        let c = table.weights[r as usize] * vel_vol * (f[jp] * g[lp] - f[j] * g[l]);
        out[j] += c;
        out[jp] -= c;
    }
}

/// Half of `Σ_r W (f(j')g(l') - f(j)g(l))(log f(j') - log f(j))` for one cell.
pub(crate) fn dissipation_row(table: &DvmTable, canonical: &[u32], f: &[f64], logf: &[f64], g: &[f64]) -> f64 {
    let mut sum = 0.0;
    for &r in canonical {
        let [j, l, jp, lp] = table.quadruples[r as usize].map(|x| x as usize);
        sum += table.weights[r as usize] * (f[jp] * g[lp] - f[j] * g[l]) * (logf[jp] - logf[j]);
    }
    sum
}
