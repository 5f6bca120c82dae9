//! Configuration, scenarios and diagnostics for the `fbe` command.

pub mod config;
pub mod criteria;
pub mod diagnostics;
pub mod scenarios;

use std::path::Path;

use fbe_core::geometry::{build_dvm_table, DvmTable};
use fbe_core::kernels::CollisionKernel;
use fbe_core::PhaseGrid;

/// Reads the table at `path` when it exists, otherwise builds it and writes
/// it there. A cached table must match the velocity lattice and conserve
/// exactly; its weights are trusted to belong to `kernel`.
pub fn load_or_build_table(path: &Path, grid: &PhaseGrid, kernel: &CollisionKernel) -> fbe_core::Result<DvmTable> {
    if path.exists() {
        let file = std::fs::File::open(path)?;
        let table = DvmTable::read_text(std::io::BufReader::new(file))?;
        if table.lattice != grid.velocity() {
            return Err(fbe_core::Error::InvalidInput(format!(
                "cached DVM table {} was built for a different velocity lattice",
                path.display()
            )));
        }
        if let Some(q) = table.quadruples.iter().find(|q| !table.conserves_exactly(**q)) {
            return Err(fbe_core::Error::InvalidInput(format!("cached DVM table row {q:?} does not conserve")));
        }
        return Ok(table);
    }
    let table = build_dvm_table(&grid.velocity(), kernel)?;
    if let Some(dir) = path.parent().filter(|d| !d.as_os_str().is_empty()) {
        std::fs::create_dir_all(dir)?;
    }
    table.write_text(std::io::BufWriter::new(std::fs::File::create(path)?))?;
    Ok(table)
}
