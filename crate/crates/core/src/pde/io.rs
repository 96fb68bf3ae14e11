//! Versioned CSV bundle: `meta.json` plus one `t,z,w,value` file per field.

use std::fs::{self, File};
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::Path;

use serde::{Deserialize, Serialize};

use super::{PdeError, PdeModel, PicardDiagnostics, Result, SolvedFields};
use crate::dynamics::Model2Params;
use crate::strategy::ControlParams;

pub const FIELD_BUNDLE_VERSION: u32 = 1;
const FIELDS: [&str; 3] = ["theta0", "theta1", "theta2"];

#[derive(Serialize, Deserialize)]
struct Meta {
    version: u32,
    model: PdeModel,
    control: ControlParams,
    model2: Option<Model2Params>,
    z: Vec<f64>,
    w: Vec<f64>,
    times: Vec<f64>,
    diagnostics: PicardDiagnostics,
}

fn header(f: &SolvedFields) -> String {
    format!(
        "# version={} model={:?} nt={} nz={} nw={}",
        FIELD_BUNDLE_VERSION,
        f.model,
        f.times.len(),
        f.z.len(),
        f.w.len()
    )
}

/// Writes the bundle into `dir`, creating it if needed.
pub fn write_bundle(fields: &SolvedFields, dir: &Path) -> Result<()> {
    fs::create_dir_all(dir)?;
    let meta = Meta {
        version: FIELD_BUNDLE_VERSION,
        model: fields.model,
        control: fields.control,
        model2: fields.model2,
        z: fields.z.clone(),
        w: fields.w.clone(),
        times: fields.times.clone(),
        diagnostics: fields.diagnostics.clone(),
    };
    let meta_json = serde_json::to_string_pretty(&meta).map_err(|e| PdeError::Bundle(e.to_string()))?;
    fs::write(dir.join("meta.json"), meta_json)?;
    for (name, data) in FIELDS.iter().zip([&fields.theta0, &fields.theta1, &fields.theta2]) {
        let mut out = BufWriter::new(File::create(dir.join(format!("{name}.csv")))?);
        writeln!(out, "{}", header(fields))?;
        let mut w = csv::Writer::from_writer(out);
        w.write_record(["t", "z", "w", "value"])?;
        for (k, &t) in fields.times.iter().enumerate() {
            for (iw, &wv) in fields.w.iter().enumerate() {
                for (iz, &z) in fields.z.iter().enumerate() {
                    let v = data[fields.index(k, iw, iz)];
                    w.write_record([t.to_string(), z.to_string(), wv.to_string(), v.to_string()])?;
                }
            }
        }
        w.flush()?;
    }
    Ok(())
}

/// Reads one field file, checking its header and node order against `meta`.
fn read_values(path: &Path, expect_header: &str, f: &SolvedFields) -> Result<Vec<f64>> {
    let mut reader = BufReader::new(File::open(path)?);
    let mut first = String::new();
    reader.read_line(&mut first)?;
    if first.trim_end() != expect_header {
        return Err(PdeError::Bundle(format!("{}: header {:?}, expected {:?}", path.display(), first.trim_end(), expect_header)));
    }
    let mut rdr = csv::Reader::from_reader(reader);
    let mut values = Vec::with_capacity(f.times.len() * f.slice_len());
    for (row, rec) in rdr.records().enumerate() {
        let rec = rec?;
        let num = |col: usize| -> Result<f64> {
            rec.get(col)
                .and_then(|s| s.parse().ok())
                .ok_or_else(|| PdeError::Bundle(format!("{}: row {} column {} unparsable", path.display(), row + 2, col + 1)))
        };
        let n = values.len();
        let (k, rem) = (n / f.slice_len(), n % f.slice_len());
        let expected = (f.times.get(k), f.z.get(rem % f.z.len()), f.w.get(rem / f.z.len()));
        if expected != (Some(&num(0)?), Some(&num(1)?), Some(&num(2)?)) {
            return Err(PdeError::Bundle(format!("{}: row {} out of grid order", path.display(), row + 2)));
        }
        values.push(num(3)?);
    }
    if values.len() != f.times.len() * f.slice_len() {
        return Err(PdeError::Bundle(format!("{}: {} rows, expected {}", path.display(), values.len(), f.times.len() * f.slice_len())));
    }
    Ok(values)
}

pub fn read_bundle(dir: &Path) -> Result<SolvedFields> {
    let meta: Meta = serde_json::from_str(&fs::read_to_string(dir.join("meta.json"))?).map_err(|e| PdeError::Bundle(e.to_string()))?;
    if meta.version != FIELD_BUNDLE_VERSION {
        return Err(PdeError::Bundle(format!("unsupported bundle version {}", meta.version)));
    }
    let mut f = SolvedFields {
        model: meta.model,
        control: meta.control,
        model2: meta.model2,
        z: meta.z,
        w: meta.w,
        times: meta.times,
        theta0: Vec::new(),
        theta1: Vec::new(),
        theta2: Vec::new(),
        diagnostics: meta.diagnostics,
    };
    let h = header(&f);
    f.theta0 = read_values(&dir.join("theta0.csv"), &h, &f)?;
    f.theta1 = read_values(&dir.join("theta1.csv"), &h, &f)?;
    f.theta2 = read_values(&dir.join("theta2.csv"), &h, &f)?;
    Ok(f)
}

#[cfg(test)]
mod tests {
    use super::super::{log_spaced, solve_model1, GridSpec, SolverConfig, TimeMesh};
    use super::*;

    #[test]
    fn bundle_round_trip() {
        let p = ControlParams::benchmark();
        let grid = GridSpec { n_t: 12, z: log_spaced(1000.0, 4000.0, 5), w: log_spaced(1000.0, 4000.0, 4), time_mesh: TimeMesh::Auto };
        let f = solve_model1(&p, &grid, &SolverConfig { snapshot_stride: 2, ..Default::default() }).unwrap();
        let dir = tempfile::tempdir().unwrap();
        write_bundle(&f, dir.path()).unwrap();
        assert_eq!(read_bundle(dir.path()).unwrap(), f);

        let path = dir.path().join("theta1.csv");
        let text = fs::read_to_string(&path).unwrap();
        fs::write(&path, text.replacen("version=1", "version=9", 1)).unwrap();
        assert!(matches!(read_bundle(dir.path()), Err(PdeError::Bundle(_))));
    }
}
