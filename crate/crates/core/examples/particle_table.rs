//! A small version of the particle-count efficiency table: median IACT per
//! parameter group as the number of particles grows.

use factor_garch::experiments::{sweep_table, write_table, Experiment, TableStat, Varied};

fn main() -> factor_garch::Result<()> {
    let mut base = Experiment::simulated_design(1500, 500);
    base.replications = 2;
    let rows = sweep_table(&base, Varied::Particles, &[5.0, 10.0, 20.0])?;
    for row in &rows {
        let cells: Vec<String> = row.groups.iter().map(|g| format!("{}={:.2}", g.label, g.median)).collect();
        println!("M = {:>2}: {}", row.particles, cells.join("  "));
    }
    let path = std::env::temp_dir().join("factor-garch-table.csv");
    write_table(&path, Varied::Particles, &rows, TableStat::Median)?;
    println!("table written to {}", path.display());
    Ok(())
}
