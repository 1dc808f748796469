use std::io::Write;

use super::{DensityPaths, FieldPaths, ItoError, PathBundle};

/// Writes one row per `(path, time)` with the fixed column order
/// `path, t, S, Z_<label>..., inv_gamma, A`. At most `max_paths` paths are
/// written when given.
pub fn write_paths_csv<W: Write>(
    out: W,
    bundle: &PathBundle,
    field: &FieldPaths,
    densities: &[(String, DensityPaths)],
    max_paths: Option<usize>,
) -> Result<(), ItoError> {
    if field.n_paths != bundle.n_paths || field.n_steps != bundle.n_steps() {
        return Err(ItoError::Argument("field paths do not match the bundle".into()));
    }
    if densities.iter().any(|(_, d)| d.n_steps != bundle.n_steps()) {
        return Err(ItoError::Argument("density paths do not match the bundle".into()));
    }
    let mut w = csv::Writer::from_writer(out);
    let mut header = vec!["path".to_string(), "t".into(), "S".into()];
    header.extend(densities.iter().map(|(l, _)| format!("Z_{l}")));
    header.extend(["inv_gamma".to_string(), "A".into()]);
    w.write_record(&header).map_err(export_err)?;

    let times = bundle.grid.times();
    let n_paths = max_paths.map_or(bundle.n_paths, |m| m.min(bundle.n_paths));
    let mut row = Vec::with_capacity(header.len());
    for p in 0..n_paths {
        for (k, t) in times.iter().enumerate() {
            row.clear();
            row.push(p.to_string());
            row.push(t.to_string());
            row.push(bundle.s(p)[k].to_string());
            row.extend(densities.iter().map(|(_, d)| d.z(p)[k].to_string()));
            row.push(field.inv_gamma(p)[k].to_string());
            row.push(field.a(p)[k].to_string());
            w.write_record(&row).map_err(export_err)?;
        }
    }
    w.flush().map_err(|e| ItoError::Export(e.to_string()))?;
    Ok(())
}

fn export_err(e: csv::Error) -> ItoError {
    ItoError::Export(e.to_string())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::ito_engine::{
        build_forward_exponential, density_path, simulate_paths, CoefficientSpec, PiecewiseConstant,
    };

    #[test]
    fn header_and_row_count() {
        let spec = CoefficientSpec::constant(1.0, 0.5, 0.0, 0.3, 0.1).unwrap();
        let b = simulate_paths(&spec, 4, 6, 1).unwrap();
        let f = build_forward_exponential(&b, 1.0, 0.0).unwrap();
        let nu = PiecewiseConstant::constant(1.0, 0.5).unwrap();
        let zero = PiecewiseConstant::constant(1.0, 0.0).unwrap();
        let z = density_path(&b, &nu, &zero).unwrap();
        let mut buf = Vec::new();
        write_paths_csv(&mut buf, &b, &f, &[("theta".into(), z)], Some(2)).unwrap();
        let text = String::from_utf8(buf).unwrap();
        let lines: Vec<&str> = text.lines().collect();
        assert_eq!(lines[0], "path,t,S,Z_theta,inv_gamma,A");
        assert_eq!(lines.len(), 1 + 2 * 5);
        assert!(lines[1].starts_with("0,0,0,1,1,0"));
    }
}
