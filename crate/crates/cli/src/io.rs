//! File plumbing: atomic output writes, bulk CSV formatting, and titer
//! dataset ingestion.

use hvdvg::{CloudReport, Trajectory};
use std::fmt::Write as _;
use std::io::Write as _;
use std::path::Path;

/// Writes through a temp file in the destination directory and renames into
/// place, so readers never observe a half-written artifact.
pub fn write_atomic(path: &Path, bytes: &[u8]) -> std::io::Result<()> {
    let dir = match path.parent() {
        Some(p) if !p.as_os_str().is_empty() => p,
        _ => Path::new("."),
    };
    std::fs::create_dir_all(dir)?;
    let mut tmp = tempfile::NamedTempFile::new_in(dir)?;
    tmp.write_all(bytes)?;
    tmp.as_file().sync_all()?;
    tmp.persist(path).map_err(|e| e.error)?;
    Ok(())
}

pub fn trajectory_csv(traj: &Trajectory) -> String {
    let mut s = String::from("t,C,Cv,Cd,Cdv,V,D\n");
    for smp in &traj.samples {
        let y = &smp.state;
        let _ = writeln!(
            s,
            "{:.16e},{:.16e},{:.16e},{:.16e},{:.16e},{:.16e},{:.16e}",
            smp.t, y.cells, y.cells_v, y.cells_d, y.cells_dv, y.virions, y.dvgs
        );
    }
    s
}

pub fn cloud_csv(report: &CloudReport) -> String {
    let mut s = String::from("m,qV0,Vf,Df\n");
    for p in &report.points {
        let _ = writeln!(s, "{:.16e},{:.16e},{:.16e},{:.16e}", p.m, p.qv0, p.vf, p.df);
    }
    s
}

/// Reads a titer series CSV. The header must be exactly
/// `t_hpi,pfu_per_ml`; every row two numbers. Ordering and positivity are
/// the dataset's own invariants and get checked downstream, so a
/// non-monotone file is an error, never silently sorted.
pub fn load_points(path: &Path) -> Result<Vec<(f64, f64)>, String> {
    let mut rdr = csv::ReaderBuilder::new()
        .trim(csv::Trim::All)
        .from_path(path)
        .map_err(|e| format!("{}: {e}", path.display()))?;
    let headers = rdr.headers().map_err(|e| format!("{}: {e}", path.display()))?;
    let expected = ["t_hpi", "pfu_per_ml"];
    if headers.len() != 2 || headers.iter().zip(expected).any(|(h, e)| h != e) {
        return Err(format!(
            "{}: expected header `t_hpi,pfu_per_ml`, found `{}`",
            path.display(),
            headers.iter().collect::<Vec<_>>().join(",")
        ));
    }
    let mut points = Vec::new();
    for (i, rec) in rdr.records().enumerate() {
        let rec = rec.map_err(|e| format!("{}: row {i}: {e}", path.display()))?;
        if rec.len() != 2 {
            return Err(format!("{}: row {i}: expected 2 fields, found {}", path.display(), rec.len()));
        }
        let t: f64 = rec[0].parse().map_err(|_| format!("{}: row {i}: bad time `{}`", path.display(), &rec[0]))?;
        let v: f64 = rec[1].parse().map_err(|_| format!("{}: row {i}: bad titer `{}`", path.display(), &rec[1]))?;
        points.push((t, v));
    }
    Ok(points)
}
