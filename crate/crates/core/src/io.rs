//! File formats used by the command-line tool.
//!
//! A field file is CSV with a geometric header:
//!
//! ```text
//! nx,ny,dx,dy,x0,y0
//! 80,40,0.1,0.1,0,0
//! v(0,0),v(1,0),...,v(nx-1,0)
//! ...                              (ny rows, row 0 at y0)
//! ```
//!
//! Sensor files hold `x,y,value` rows, optionally preceded by that header.
//! Numbers are written with 17 significant digits so a write/read cycle is
//! value-identical.

use std::fs;
use std::io::{BufWriter, Write};
use std::path::{Path, PathBuf};

use thiserror::Error;

use crate::problem::{GridLayout, Sensor};
use crate::synth::SyntheticCase;

pub const FIELD_HEADER: &str = "nx,ny,dx,dy,x0,y0";
pub const SENSOR_HEADER: &str = "x,y,value";

#[derive(Debug, Error)]
pub enum IoError {
    #[error("{path}: {message}")]
    Malformed { path: PathBuf, message: String },

    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
}

fn malformed(path: &Path, message: impl Into<String>) -> IoError {
    IoError::Malformed { path: path.to_path_buf(), message: message.into() }
}

fn io_err(path: &Path) -> impl FnOnce(std::io::Error) -> IoError + '_ {
    move |source| IoError::Io { path: path.to_path_buf(), source }
}

/// A scalar field on a regular grid, row-major.
#[derive(Debug, Clone, PartialEq)]
pub struct FieldFile {
    pub grid: GridLayout,
    pub values: Vec<f64>,
}

impl FieldFile {
    pub fn new(grid: GridLayout, values: Vec<f64>) -> Self {
        assert_eq!(grid.len(), values.len(), "field size must match its grid");
        FieldFile { grid, values }
    }

    pub fn row(&self, r: usize) -> &[f64] {
        &self.values[r * self.grid.nx..(r + 1) * self.grid.nx]
    }
}

/// Formats a real with 17 significant digits.
pub fn fmt_real(v: f64) -> String {
    format!("{v:.16e}")
}

fn parse_real(path: &Path, line: usize, token: &str, what: &str) -> Result<f64, IoError> {
    let v: f64 = token
        .trim()
        .parse()
        .map_err(|_| malformed(path, format!("line {line}: {what} '{}' is not a number", token.trim())))?;
    if !v.is_finite() {
        return Err(malformed(path, format!("line {line}: {what} is not finite")));
    }
    Ok(v)
}

pub fn read_field(path: &Path) -> Result<FieldFile, IoError> {
    let text = fs::read_to_string(path).map_err(io_err(path))?;
    parse_field(path, &text)
}

pub fn parse_field(path: &Path, text: &str) -> Result<FieldFile, IoError> {
    let mut lines = text.lines().enumerate().filter(|(_, l)| !l.trim().is_empty());
    let (_, first) = lines.next().ok_or_else(|| malformed(path, "empty field file"))?;
    let header_line = if first.trim().eq_ignore_ascii_case(FIELD_HEADER) {
        lines.next().ok_or_else(|| malformed(path, "missing header values"))?
    } else {
        (0, first)
    };
    let (hl, header) = header_line;
    let tokens: Vec<&str> = header.split(',').collect();
    if tokens.len() != 6 {
        return Err(malformed(path, format!("line {}: header needs 6 fields ({FIELD_HEADER})", hl + 1)));
    }
    let dim = |t: &str, name: &str| -> Result<usize, IoError> {
        t.trim()
            .parse::<usize>()
            .ok()
            .filter(|&v| v > 0)
            .ok_or_else(|| malformed(path, format!("line {}: {name} '{}' must be a positive integer", hl + 1, t.trim())))
    };
    let nx = dim(tokens[0], "nx")?;
    let ny = dim(tokens[1], "ny")?;
    let dx = parse_real(path, hl + 1, tokens[2], "dx")?;
    let dy = parse_real(path, hl + 1, tokens[3], "dy")?;
    let x0 = parse_real(path, hl + 1, tokens[4], "x0")?;
    let y0 = parse_real(path, hl + 1, tokens[5], "y0")?;
    let grid = GridLayout::new(nx, ny, dx, dy, x0, y0).map_err(|e| malformed(path, e.to_string()))?;

    let mut values = Vec::with_capacity(nx * ny);
    let mut rows = 0;
    for (ln, line) in lines {
        let before = values.len();
        for token in line.split(',') {
            values.push(parse_real(path, ln + 1, token, "value")?);
        }
        if values.len() - before != nx {
            return Err(malformed(
                path,
                format!("line {}: expected {nx} values, found {}", ln + 1, values.len() - before),
            ));
        }
        rows += 1;
    }
    if rows != ny {
        return Err(malformed(path, format!("expected {ny} rows, found {rows}")));
    }
    Ok(FieldFile { grid, values })
}

pub fn write_field(path: &Path, field: &FieldFile) -> Result<(), IoError> {
    let file = fs::File::create(path).map_err(io_err(path))?;
    let mut w = BufWriter::new(file);
    let g = &field.grid;
    let mut out = String::new();
    out.push_str(FIELD_HEADER);
    out.push('\n');
    out.push_str(&format!(
        "{},{},{},{},{},{}\n",
        g.nx,
        g.ny,
        fmt_real(g.dx),
        fmt_real(g.dy),
        fmt_real(g.x0),
        fmt_real(g.y0)
    ));
    w.write_all(out.as_bytes()).map_err(io_err(path))?;
    for r in 0..g.ny {
        let line: Vec<String> = field.row(r).iter().map(|&v| fmt_real(v)).collect();
        writeln!(w, "{}", line.join(",")).map_err(io_err(path))?;
    }
    w.flush().map_err(io_err(path))
}

/// A sensor given by coordinates before snapping to the mesh.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SensorRecord {
    pub x: f64,
    pub y: f64,
    pub value: f64,
}

pub fn read_sensors(path: &Path) -> Result<Vec<SensorRecord>, IoError> {
    let text = fs::read_to_string(path).map_err(io_err(path))?;
    parse_sensors(path, &text)
}

pub fn parse_sensors(path: &Path, text: &str) -> Result<Vec<SensorRecord>, IoError> {
    let mut out = Vec::new();
    for (ln, line) in text.lines().enumerate() {
        let line = line.trim();
        if line.is_empty() || (ln == 0 && line.eq_ignore_ascii_case(SENSOR_HEADER)) {
            continue;
        }
        let tokens: Vec<&str> = line.split(',').collect();
        if tokens.len() != 3 {
            return Err(malformed(path, format!("line {}: expected x,y,value", ln + 1)));
        }
        out.push(SensorRecord {
            x: parse_real(path, ln + 1, tokens[0], "x")?,
            y: parse_real(path, ln + 1, tokens[1], "y")?,
            value: parse_real(path, ln + 1, tokens[2], "value")?,
        });
    }
    if out.is_empty() {
        return Err(malformed(path, "no sensor rows"));
    }
    Ok(out)
}

pub fn write_sensors(path: &Path, sensors: &[SensorRecord]) -> Result<(), IoError> {
    let mut out = String::from(SENSOR_HEADER);
    out.push('\n');
    for s in sensors {
        out.push_str(&format!("{},{},{}\n", fmt_real(s.x), fmt_real(s.y), fmt_real(s.value)));
    }
    fs::write(path, out).map_err(io_err(path))
}

/// A sensor attached to its nearest mesh point.
#[derive(Debug, Clone, Copy, PartialEq, serde::Serialize)]
pub struct SnappedSensor {
    pub x: f64,
    pub y: f64,
    pub observed: f64,
    pub mesh_index: usize,
    pub snap_distance: f64,
}

impl SnappedSensor {
    pub fn sensor(&self) -> Sensor {
        Sensor::new(self.mesh_index, self.observed)
    }
}

/// Nearest grid coordinate along one axis; an exact half goes to the lower cell.
fn snap_axis(t: f64, len: usize) -> usize {
    ((t - 0.5).ceil().max(0.0) as usize).min(len - 1)
}

/// Snaps sensor coordinates onto the grid, rejecting points outside its bounding box.
pub fn snap_sensors(
    path: &Path,
    grid: &GridLayout,
    records: &[SensorRecord],
) -> Result<Vec<SnappedSensor>, IoError> {
    let (x1, y1) = grid.extent();
    let tol = 1e-9 * (x1 - grid.x0).abs().max(y1 - grid.y0).max(1.0);
    records
        .iter()
        .enumerate()
        .map(|(k, r)| {
            if r.x < grid.x0 - tol || r.x > x1 + tol || r.y < grid.y0 - tol || r.y > y1 + tol {
                return Err(malformed(
                    path,
                    format!(
                        "sensor {k} at ({}, {}) lies outside the field [{}, {}] x [{}, {}]",
                        r.x, r.y, grid.x0, x1, grid.y0, y1
                    ),
                ));
            }
            let col = snap_axis((r.x - grid.x0) / grid.dx, grid.nx);
            let row = snap_axis((r.y - grid.y0) / grid.dy, grid.ny);
            let mesh_index = grid.index(col, row);
            let (px, py) = grid.position(mesh_index);
            Ok(SnappedSensor {
                x: r.x,
                y: r.y,
                observed: r.value,
                mesh_index,
                snap_distance: ((px - r.x).powi(2) + (py - r.y).powi(2)).sqrt(),
            })
        })
        .collect()
}

/// Minimum and maximum of a field; both zero for an empty slice.
pub fn value_range(values: &[f64]) -> (f64, f64) {
    if values.is_empty() {
        return (0.0, 0.0);
    }
    values
        .iter()
        .fold((f64::INFINITY, f64::NEG_INFINITY), |(lo, hi), &v| (lo.min(v), hi.max(v)))
}

/// Min-max normalized 8-bit gray levels; constant fields map to 128.
pub fn gray_levels(values: &[f64]) -> Vec<u8> {
    let (lo, hi) = value_range(values);
    if hi <= lo {
        return vec![128; values.len()];
    }
    values
        .iter()
        .map(|&v| (((v - lo) / (hi - lo)) * 255.0 + 0.5).floor().clamp(0.0, 255.0) as u8)
        .collect()
}

/// Sidecar path holding the min/max of a heatmap.
pub fn heatmap_sidecar(path: &Path) -> PathBuf {
    let mut name = path.file_name().map(|n| n.to_os_string()).unwrap_or_default();
    name.push(".range.txt");
    path.with_file_name(name)
}

/// Writes a binary PGM (P5) of `field`, one image row per field row in file order.
pub fn write_heatmap(field: &FieldFile, path: &Path) -> Result<(), IoError> {
    if field.values.iter().any(|v| !v.is_finite()) {
        return Err(malformed(path, "heatmap values must be finite"));
    }
    let g = &field.grid;
    let mut bytes = format!("P5\n{} {}\n255\n", g.nx, g.ny).into_bytes();
    bytes.extend(gray_levels(&field.values));
    fs::write(path, bytes).map_err(io_err(path))?;
    let (lo, hi) = value_range(&field.values);
    let sidecar = heatmap_sidecar(path);
    fs::write(&sidecar, format!("min {}\nmax {}\n", fmt_real(lo), fmt_real(hi))).map_err(io_err(&sidecar))
}

/// Writes `truth.csv`, `field.csv`, `sensors.csv` and `holdout.csv` into `dir`.
pub fn write_case(dir: &Path, case: &SyntheticCase) -> Result<(), IoError> {
    fs::create_dir_all(dir).map_err(io_err(dir))?;
    let grid = *case.grid();
    write_field(&dir.join("truth.csv"), &FieldFile::new(grid, case.ground_truth.clone()))?;
    write_field(&dir.join("field.csv"), &FieldFile::new(grid, case.problem.values()))?;
    let records = |idx: &[usize]| -> Vec<SensorRecord> {
        idx.iter()
            .map(|&i| {
                let (x, y) = grid.position(i);
                SensorRecord { x, y, value: case.ground_truth[i] }
            })
            .collect()
    };
    write_sensors(&dir.join("sensors.csv"), &records(&case.calib_sensors))?;
    write_sensors(&dir.join("holdout.csv"), &records(&case.holdout_sensors))
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn p() -> PathBuf {
        PathBuf::from("mem.csv")
    }

    #[test]
    fn parse_reports_bad_rows() {
        let ok = "nx,ny,dx,dy,x0,y0\n2,2,1,1,0,0\n1,2\n3,4\n";
        let f = parse_field(&p(), ok).unwrap();
        assert_eq!(f.values, vec![1.0, 2.0, 3.0, 4.0]);
        // header line is optional
        assert_eq!(parse_field(&p(), "2,2,1,1,0,0\n1,2\n3,4\n").unwrap(), f);
        let short = "nx,ny,dx,dy,x0,y0\n2,2,1,1,0,0\n1,2\n3\n";
        assert!(parse_field(&p(), short).unwrap_err().to_string().contains("expected 2 values"));
        let rows = "nx,ny,dx,dy,x0,y0\n2,3,1,1,0,0\n1,2\n3,4\n";
        assert!(parse_field(&p(), rows).unwrap_err().to_string().contains("expected 3 rows"));
        let nan = "nx,ny,dx,dy,x0,y0\n2,1,1,1,0,0\n1,NaN\n";
        assert!(parse_field(&p(), nan).is_err());
        let word = "nx,ny,dx,dy,x0,y0\n2,1,1,1,0,0\n1,abc\n";
        assert!(parse_field(&p(), word).unwrap_err().to_string().contains("abc"));
    }

    #[test]
    fn sensors_parse_and_snap() {
        let grid = GridLayout::new(4, 3, 0.5, 0.5, 1.0, 0.0).unwrap();
        let recs = parse_sensors(&p(), "x,y,value\n1.0,0.0,20\n1.26,0.74,21\n1.25,0.25,22\n").unwrap();
        let s = snap_sensors(&p(), &grid, &recs).unwrap();
        assert_eq!(s[0].mesh_index, 0);
        assert_eq!(s[0].snap_distance, 0.0);
        assert_eq!(s[1].mesh_index, grid.index(1, 1));
        // exact half on both axes goes to the lowest row-major index
        assert_eq!(s[2].mesh_index, 0);
        let outside = parse_sensors(&p(), "2.7,0.5,20\n").unwrap();
        let msg = snap_sensors(&p(), &grid, &outside).unwrap_err().to_string();
        assert!(msg.contains("2.7"), "{msg}");
        assert!(parse_sensors(&p(), "x,y,value\n").is_err());
        assert!(parse_sensors(&p(), "1,2\n").is_err());
    }

    #[test]
    fn gray_level_rules() {
        assert_eq!(gray_levels(&[3.0, 3.0, 3.0]), vec![128, 128, 128]);
        assert_eq!(gray_levels(&[0.0, 1.0, 1.0, 0.0]), vec![0, 255, 255, 0]);
        assert_eq!(gray_levels(&[0.0, 0.5, 0.5, 1.0]), vec![0, 128, 128, 255]);
    }

    #[test]
    fn heatmap_file_layout() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("err.pgm");
        let grid = GridLayout::new(2, 2, 1.0, 1.0, 0.0, 0.0).unwrap();
        write_heatmap(&FieldFile::new(grid, vec![0.0, 0.5, 0.5, 1.0]), &path).unwrap();
        let bytes = fs::read(&path).unwrap();
        assert_eq!(&bytes[..11], b"P5\n2 2\n255\n");
        assert_eq!(&bytes[11..], &[0, 128, 128, 255]);
        let side = fs::read_to_string(heatmap_sidecar(&path)).unwrap();
        assert!(side.starts_with("min 0.0"));
    }

    proptest! {
        #[test]
        fn field_round_trip(nx in 1usize..6, ny in 1usize..6, seed in prop::collection::vec(-1e6..1e6f64, 36), dx in 1e-3..10.0f64, x0 in -100.0..100.0f64) {
            let grid = GridLayout::new(nx, ny, dx, dx * 0.7, x0, -x0).unwrap();
            let values: Vec<f64> = seed.iter().take(nx * ny).map(|v| v / 7.0).collect();
            let field = FieldFile::new(grid, values);
            let dir = tempfile::tempdir().unwrap();
            let path = dir.path().join("f.csv");
            write_field(&path, &field).unwrap();
            prop_assert_eq!(read_field(&path).unwrap(), field);
        }
    }
}
