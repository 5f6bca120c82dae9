use std::io::{BufRead, Write};
use std::path::Path;

use anyhow::{bail, Context};
use fbe_core::collision::CollisionFlux;
use fbe_core::dissipation::{big_r, d_psi_star};
use fbe_core::generic::degeneracy_report;
use fbe_core::solver::StepRecord;
use fbe_core::{CollisionOperator, Density, DissipationStructure};
use serde::{Deserialize, Serialize};

/// One line of the diagnostics stream.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DiagRecord {
    pub step: usize,
    pub time: f64,
    pub mass: f64,
    pub momentum: Vec<f64>,
    pub energy: f64,
    pub entropy: f64,
    pub dissipation: f64,
    #[serde(skip_serializing_if = "Option::is_none", default)]
    pub d_psi_star: Option<f64>,
    /// `R(f_n, U)` of the flux recorded for the step ending here.
    #[serde(skip_serializing_if = "Option::is_none", default)]
    pub r_flux: Option<f64>,
    pub e22: f64,
    pub e0_moment: f64,
    #[serde(skip_serializing_if = "Option::is_none", default)]
    pub norm_l_ds: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none", default)]
    pub norm_m_de: Option<f64>,
}

/// Optional columns to evaluate per record.
#[derive(Debug, Clone, Copy)]
pub struct Extras {
    pub structure: Option<DissipationStructure>,
    pub degeneracy: bool,
}

impl DiagRecord {
    pub fn build(
        op: &CollisionOperator,
        f: &Density,
        rec: &StepRecord,
        flux: Option<&CollisionFlux>,
        extras: Extras,
    ) -> fbe_core::Result<DiagRecord> {
        let (mut d_ps, mut r_flux) = (None, None);
        if let Some(s) = extras.structure {
            d_ps = Some(d_psi_star(op, f, s).value);
            if let Some(u) = flux {
                r_flux = Some(big_r(op, f, u, s)?.value);
            }
        }
        let (mut l_ds, mut m_de) = (None, None);
        if extras.degeneracy && f.is_strictly_positive() {
            let d = degeneracy_report(op, f)?;
            l_ds = Some(d.norm_l_ds);
            m_de = Some(d.norm_m_de);
        }
        Ok(DiagRecord {
            step: rec.step,
            time: rec.time,
            mass: rec.mass,
            momentum: rec.momentum.clone(),
            energy: rec.energy,
            entropy: rec.entropy,
            dissipation: rec.dissipation,
            d_psi_star: d_ps,
            r_flux,
            e22: rec.e22,
            e0_moment: rec.e0_moment,
            norm_l_ds: l_ds,
            norm_m_de: m_de,
        })
    }

    pub fn write_line<W: Write>(&self, mut out: W) -> std::io::Result<()> {
        let line = serde_json::to_string(self).expect("record serialises");
        writeln!(out, "{line}")
    }
}

/// Parses a newline-delimited stream; blank lines are skipped.
pub fn read_stream<R: BufRead>(input: R) -> anyhow::Result<Vec<DiagRecord>> {
    let mut out = Vec::new();
    for (n, line) in input.lines().enumerate() {
        let line = line.with_context(|| format!("reading line {}", n + 1))?;
        if line.trim().is_empty() {
            continue;
        }
        let rec: DiagRecord = serde_json::from_str(&line).with_context(|| format!("malformed record at line {}", n + 1))?;
        out.push(rec);
    }
    Ok(out)
}

type Column = (&'static str, fn(&DiagRecord) -> Option<f64>);

const COLUMNS: &[Column] = &[
    ("mass", |r| Some(r.mass)),
    ("energy", |r| Some(r.energy)),
    ("entropy", |r| Some(r.entropy)),
    ("dissipation", |r| Some(r.dissipation)),
    ("d_psi_star", |r| r.d_psi_star),
    ("r_flux", |r| r.r_flux),
    ("e22", |r| Some(r.e22)),
    ("e0_moment", |r| Some(r.e0_moment)),
    ("norm_l_ds", |r| r.norm_l_ds),
    ("norm_m_de", |r| r.norm_m_de),
];

fn fmt(x: Option<f64>) -> String {
    x.map_or(String::new(), |v| format!("{v:e}"))
}

/// Writes one CSV per quantity into `dir`; returns the file names.
pub fn write_tables(records: &[DiagRecord], dir: &Path) -> anyhow::Result<Vec<String>> {
    std::fs::create_dir_all(dir).with_context(|| format!("creating {}", dir.display()))?;
    let d = records.first().map_or(0, |r| r.momentum.len());
    if records.iter().any(|r| r.momentum.len() != d) {
        bail!("momentum dimension changes within the stream");
    }
    let mut names = Vec::new();
    for (name, get) in COLUMNS {
        let mut buf = String::from("step,time,value\n");
        for r in records {
            buf.push_str(&format!("{},{:e},{}\n", r.step, r.time, fmt(get(r))));
        }
        let file = format!("{name}.csv");
        std::fs::write(dir.join(&file), buf)?;
        names.push(file);
    }
    let mut buf = String::from("step,time");
    for a in 0..d {
        buf.push_str(&format!(",p{a}"));
    }
    buf.push('\n');
    for r in records {
        buf.push_str(&format!("{},{:e}", r.step, r.time));
        for p in &r.momentum {
            buf.push_str(&format!(",{p:e}"));
        }
        buf.push('\n');
    }
    std::fs::write(dir.join("momentum.csv"), buf)?;
    names.push("momentum.csv".into());
    Ok(names)
}
