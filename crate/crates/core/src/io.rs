//! File formats: binary field snapshots with a text sidecar, the energy log
//! and convergence tables as CSV. Every file is written to a temporary name
//! and renamed into place.

use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};
use std::time::{SystemTime, UNIX_EPOCH};

use crate::error::{FilmError, Result};
use crate::experiments::{ConvergenceTable, EnergyRecord};
use crate::field::CellField;
use crate::grid::Grid;

pub const SNAPSHOT_MAGIC: &[u8; 4] = b"TFGF";
pub const SNAPSHOT_VERSION: u32 = 1;
/// Bytes before the first value.
pub const SNAPSHOT_HEADER_LEN: usize = 32;

pub const ENERGY_HEADER: &str = "t,energy,modified_energy,mass,min_phi,psd_iters,residual";

/// A field together with the time it belongs to.
#[derive(Debug, Clone, PartialEq)]
pub struct FieldSnapshot {
    pub field: CellField,
    pub t: f64,
}

/// Writes `bytes` to a sibling temporary file, then renames it over `path`.
pub fn write_atomic(path: &Path, bytes: &[u8]) -> Result<()> {
    let mut tmp = path.as_os_str().to_owned();
    tmp.push(".tmp");
    let tmp = PathBuf::from(tmp);
    fs::write(&tmp, bytes)?;
    fs::rename(&tmp, path)?;
    Ok(())
}

/// Sidecar path `<name>.meta` next to a snapshot.
pub fn meta_path(path: &Path) -> PathBuf {
    path.with_extension("meta")
}

/// Serializes a snapshot: magic, version, dim and `n` as little-endian
/// `u32`, then `L` and `t` as little-endian `f64`, then the values in flat
/// (x fastest) order.
pub fn encode_snapshot(field: &CellField, t: f64) -> Vec<u8> {
    let g = field.grid();
    let mut out = Vec::with_capacity(SNAPSHOT_HEADER_LEN + 8 * field.len());
    out.extend_from_slice(SNAPSHOT_MAGIC);
    out.extend_from_slice(&SNAPSHOT_VERSION.to_le_bytes());
    out.extend_from_slice(&(g.dim() as u32).to_le_bytes());
    out.extend_from_slice(&(g.n() as u32).to_le_bytes());
    out.extend_from_slice(&g.l().to_le_bytes());
    out.extend_from_slice(&t.to_le_bytes());
    for v in field.values() {
        out.extend_from_slice(&v.to_le_bytes());
    }
    out
}

pub fn decode_snapshot(bytes: &[u8]) -> Result<FieldSnapshot> {
    let bad = |m: String| Err(FilmError::Format(m));
    if bytes.len() < SNAPSHOT_HEADER_LEN {
        return bad(format!("snapshot has {} bytes, shorter than its header", bytes.len()));
    }
    if &bytes[0..4] != SNAPSHOT_MAGIC {
        return bad(format!("bad magic {:?}", &bytes[0..4]));
    }
    let u32_at = |o: usize| u32::from_le_bytes(bytes[o..o + 4].try_into().expect("4 bytes"));
    let f64_at = |o: usize| f64::from_le_bytes(bytes[o..o + 8].try_into().expect("8 bytes"));
    let version = u32_at(4);
    if version != SNAPSHOT_VERSION {
        return bad(format!("unsupported snapshot version {version}"));
    }
    let (dim, n) = (u32_at(8) as usize, u32_at(12) as usize);
    let (l, t) = (f64_at(16), f64_at(24));
    let grid = Grid::new(dim, n, l).map_err(|e| FilmError::Format(format!("bad header: {e}")))?;
    let expect = SNAPSHOT_HEADER_LEN + 8 * grid.len();
    if bytes.len() != expect {
        return bad(format!("snapshot has {} bytes, header implies {expect}", bytes.len()));
    }
    let values = bytes[SNAPSHOT_HEADER_LEN..]
        .chunks_exact(8)
        .map(|c| f64::from_le_bytes(c.try_into().expect("8 bytes")))
        .collect();
    Ok(FieldSnapshot { field: CellField::from_values(grid, values)?, t })
}

/// Text repeat of the snapshot header. The write time appears only here.
pub fn snapshot_meta(field: &CellField, t: f64) -> String {
    let g = field.grid();
    let stamp = SystemTime::now().duration_since(UNIX_EPOCH).map_or(0, |d| d.as_secs());
    format!(
        "format=TFGF\nversion={SNAPSHOT_VERSION}\ndim={}\nn={}\nL={:?}\nt={:?}\nvalues={}\nwritten_unix={stamp}\n",
        g.dim(),
        g.n(),
        g.l(),
        t,
        field.len()
    )
}

/// Writes the binary snapshot and its `.meta` sidecar.
pub fn write_field_snapshot(field: &CellField, t: f64, path: &Path) -> Result<()> {
    write_atomic(path, &encode_snapshot(field, t))?;
    write_atomic(&meta_path(path), snapshot_meta(field, t).as_bytes())
}

pub fn read_field_snapshot(path: &Path) -> Result<FieldSnapshot> {
    decode_snapshot(&fs::read(path)?)
}

/// Shortest decimal that is not round-trip exact is avoided by always
/// printing 17 significant digits.
fn fmt_f64(out: &mut String, v: f64) {
    write!(out, "{v:.16e}").expect("writing to a String");
}

pub fn format_energy_log(records: &[EnergyRecord]) -> String {
    let mut s = String::with_capacity(ENERGY_HEADER.len() + 1 + records.len() * 140);
    s.push_str(ENERGY_HEADER);
    s.push('\n');
    for r in records {
        fmt_f64(&mut s, r.t);
        s.push(',');
        fmt_f64(&mut s, r.energy);
        s.push(',');
        if let Some(m) = r.modified_energy {
            fmt_f64(&mut s, m);
        }
        s.push(',');
        fmt_f64(&mut s, r.mass);
        s.push(',');
        fmt_f64(&mut s, r.min_phi);
        write!(s, ",{},", r.psd_iters).expect("writing to a String");
        fmt_f64(&mut s, r.residual);
        s.push('\n');
    }
    s
}

pub fn parse_energy_log(text: &str) -> Result<Vec<EnergyRecord>> {
    let mut lines = text.lines();
    match lines.next() {
        Some(h) if h.trim_end() == ENERGY_HEADER => {}
        other => return Err(FilmError::Format(format!("unexpected energy log header {other:?}"))),
    }
    let mut out = Vec::new();
    for (k, line) in lines.enumerate() {
        if line.is_empty() {
            continue;
        }
        let ctx = |m: &str| FilmError::Format(format!("energy log row {}: {m}", k + 1));
        let cols: Vec<&str> = line.split(',').collect();
        if cols.len() != 7 {
            return Err(ctx(&format!("expected 7 columns, got {}", cols.len())));
        }
        let num = |i: usize| cols[i].parse::<f64>().map_err(|e| ctx(&format!("column {i}: {e}")));
        out.push(EnergyRecord {
            t: num(0)?,
            energy: num(1)?,
            modified_energy: if cols[2].is_empty() { None } else { Some(num(2)?) },
            mass: num(3)?,
            min_phi: num(4)?,
            psd_iters: cols[5].parse().map_err(|e| ctx(&format!("column 5: {e}")))?,
            residual: num(6)?,
        });
    }
    Ok(out)
}

pub fn write_energy_log(records: &[EnergyRecord], path: &Path) -> Result<()> {
    write_atomic(path, format_energy_log(records).as_bytes())
}

pub fn read_energy_log(path: &Path) -> Result<Vec<EnergyRecord>> {
    parse_energy_log(&fs::read_to_string(path)?)
}

/// CSV rows of a convergence study.
pub fn format_convergence_table(table: &ConvergenceTable) -> String {
    let mut s = format!("{},n,dt,err_l2,err_linf,psd_iters\n", table.variable);
    for r in &table.rows {
        write!(s, "{},{},", r.resolution, r.n).expect("writing to a String");
        fmt_f64(&mut s, r.dt);
        s.push(',');
        fmt_f64(&mut s, r.err_l2);
        s.push(',');
        fmt_f64(&mut s, r.err_linf);
        writeln!(s, ",{}", r.psd_iters).expect("writing to a String");
    }
    s
}

/// Fitted lines of a convergence study as `key=value` lines.
pub fn format_convergence_fit(table: &ConvergenceTable) -> String {
    format!(
        "variable={}\nslope_l2={:?}\nintercept_l2={:?}\nslope_linf={:?}\nintercept_linf={:?}\n",
        table.variable, table.slope_l2, table.intercept_l2, table.slope_linf, table.intercept_linf
    )
}

/// Writes `<path>` (rows) and `<path>.fit` with extension replaced (fits).
pub fn write_convergence_table(table: &ConvergenceTable, path: &Path) -> Result<()> {
    write_atomic(path, format_convergence_table(table).as_bytes())?;
    write_atomic(&path.with_extension("fit"), format_convergence_fit(table).as_bytes())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::random::random_field;

    #[test]
    fn header_layout() {
        let g = Grid::new(2, 4, 1.5).unwrap();
        let f = random_field(g, 1, 0.0, 1.0);
        let bytes = encode_snapshot(&f, 0.25);
        assert_eq!(bytes.len(), 32 + 16 * 8);
        assert_eq!(&bytes[0..4], b"TFGF");
        assert_eq!(&bytes[4..8], &1u32.to_le_bytes());
        assert_eq!(&bytes[8..12], &2u32.to_le_bytes());
        assert_eq!(&bytes[12..16], &4u32.to_le_bytes());
        assert_eq!(&bytes[16..24], &1.5f64.to_le_bytes());
        assert_eq!(&bytes[24..32], &0.25f64.to_le_bytes());
        assert_eq!(&bytes[32..40], &f[0].to_le_bytes());
    }

    #[test]
    fn corrupted_headers_are_format_errors() {
        let g = Grid::new(1, 4, 1.0).unwrap();
        let good = encode_snapshot(&CellField::constant(g, 1.0), 0.0);
        let mut magic = good.clone();
        magic[0] = b'X';
        assert!(matches!(decode_snapshot(&magic), Err(FilmError::Format(_))));
        let mut version = good.clone();
        version[4] = 9;
        assert!(matches!(decode_snapshot(&version), Err(FilmError::Format(_))));
        assert!(matches!(decode_snapshot(&good[..good.len() - 1]), Err(FilmError::Format(_))));
        assert!(matches!(decode_snapshot(&good[..10]), Err(FilmError::Format(_))));
        let mut dim = good;
        dim[8] = 7;
        assert!(matches!(decode_snapshot(&dim), Err(FilmError::Format(_))));
    }

    #[test]
    fn empty_energy_log_is_header_only() {
        assert_eq!(format_energy_log(&[]), format!("{ENERGY_HEADER}\n"));
        assert!(parse_energy_log(&format!("{ENERGY_HEADER}\n")).unwrap().is_empty());
        assert!(parse_energy_log("t,energy\n").is_err());
    }

    #[test]
    fn energy_rows_keep_missing_modified_energy() {
        let recs = [
            EnergyRecord { t: 0.0, energy: -1.0, modified_energy: None, mass: 2.0, min_phi: 1.0, psd_iters: 0, residual: 0.0 },
            EnergyRecord {
                t: 0.1,
                energy: -1.0 / 3.0,
                modified_energy: Some(f64::MIN_POSITIVE),
                mass: 2.0,
                min_phi: 0.9,
                psd_iters: 12,
                residual: 3e-10,
            },
        ];
        let text = format_energy_log(&recs);
        assert!(text.lines().nth(1).unwrap().split(',').nth(2).unwrap().is_empty());
        assert_eq!(parse_energy_log(&text).unwrap(), recs);
    }
}
