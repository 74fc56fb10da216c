//! CSV and JSON export for paths, ensembles, and reports.
//!
//! All payloads are deterministic: field order comes from struct
//! definitions, floats print in Rust's shortest round-trip form, and no
//! timestamps enter report files.

use std::io::{self, Write};

use serde::Serialize;
use sha1::{Digest, Sha1};

use crate::grid::TimeGrid;
use crate::sde::{Ensemble, SdePath};

pub const SCHEMA_VERSION: u32 = 1;

/// One row per node: `t, x_1..x_n`.
pub fn write_path_csv<W: Write>(path: &SdePath, mut w: W) -> io::Result<()> {
    writeln!(w, "# schema_version: {SCHEMA_VERSION}")?;
    let header: Vec<String> = (1..=path.dim()).map(|j| format!("x_{j}")).collect();
    writeln!(w, "t,{}", header.join(","))?;
    for node in 0..path.grid().n_nodes() {
        let mut row = vec![format!("{}", path.grid().node(node))];
        row.extend(path.state(node).iter().map(|v| format!("{v}")));
        writeln!(w, "{}", row.join(","))?;
    }
    Ok(())
}

/// Long format: `path_index, t, x_1..x_n`.
pub fn write_ensemble_csv<W: Write>(ensemble: &Ensemble, mut w: W) -> io::Result<()> {
    writeln!(w, "# schema_version: {SCHEMA_VERSION}")?;
    let header: Vec<String> = (1..=ensemble.dim()).map(|j| format!("x_{j}")).collect();
    writeln!(w, "path_index,t,{}", header.join(","))?;
    for (i, path) in ensemble.paths().iter().enumerate() {
        for node in 0..path.grid().n_nodes() {
            let mut row = vec![format!("{i}"), format!("{}", path.grid().node(node))];
            row.extend(path.state(node).iter().map(|v| format!("{v}")));
            writeln!(w, "{}", row.join(","))?;
        }
    }
    Ok(())
}

/// Git-style blob hash of a byte payload (`sha1("blob <len>\0" + bytes)`).
pub fn content_hash(bytes: &[u8]) -> String {
    let mut hasher = Sha1::new();
    hasher.update(format!("blob {}\0", bytes.len()).as_bytes());
    hasher.update(bytes);
    let digest = hasher.finalize();
    let mut out = String::with_capacity(40);
    for byte in digest {
        out.push_str(&format!("{byte:02x}"));
    }
    out
}

#[derive(Debug, Clone, Serialize)]
pub struct EnsembleManifest {
    pub schema_version: u32,
    pub system_id: String,
    pub seed: u64,
    pub grid: TimeGrid,
    pub m: usize,
    pub dim: usize,
    /// Blob hash of the ensemble CSV payload.
    pub content_hash: String,
}

/// Manifest + CSV bytes for an ensemble, hash-linked.
pub fn ensemble_manifest(
    ensemble: &Ensemble,
    system_id: &str,
) -> io::Result<(EnsembleManifest, Vec<u8>)> {
    let mut csv = Vec::new();
    write_ensemble_csv(ensemble, &mut csv)?;
    let manifest = EnsembleManifest {
        schema_version: SCHEMA_VERSION,
        system_id: system_id.to_string(),
        seed: ensemble.base_seed(),
        grid: *ensemble.grid(),
        m: ensemble.len(),
        dim: ensemble.dim(),
        content_hash: content_hash(&csv),
    };
    Ok((manifest, csv))
}

/// Pretty JSON with a trailing newline; byte-stable for fixed input.
pub fn to_json_bytes<T: Serialize>(value: &T) -> Vec<u8> {
    let mut bytes = serde_json::to_vec_pretty(value).expect("report serialization cannot fail");
    bytes.push(b'\n');
    bytes
}

/// Histogram rows `bin_lo, bin_hi, count` over equal-width bins.
pub fn write_histogram_csv<W: Write>(values: &[f64], n_bins: usize, mut w: W) -> io::Result<()> {
    writeln!(w, "# schema_version: {SCHEMA_VERSION}")?;
    writeln!(w, "bin_lo,bin_hi,count")?;
    if values.is_empty() || n_bins == 0 {
        return Ok(());
    }
    let lo = values.iter().copied().fold(f64::INFINITY, f64::min);
    let hi = values.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let width = if hi > lo {
        (hi - lo) / n_bins as f64
    } else {
        1.0
    };
    let mut counts = vec![0usize; n_bins];
    for v in values {
        let bin = (((v - lo) / width) as usize).min(n_bins - 1);
        counts[bin] += 1;
    }
    for (i, count) in counts.iter().enumerate() {
        let a = lo + i as f64 * width;
        let b = lo + (i + 1) as f64 * width;
        writeln!(w, "{a},{b},{count}")?;
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::field::{DiffusionField, VectorField};
    use crate::sde::simulate_ensemble;

    fn tiny_ensemble() -> Ensemble {
        let grid = TimeGrid::to_horizon(1.0, 4).unwrap();
        let f = VectorField::scalar(|x| -x);
        let sigma = DiffusionField::scalar(|_| 1.0);
        simulate_ensemble(&f, &sigma, 1.0, &[1.0], grid, 3, 7).unwrap()
    }

    #[test]
    fn path_csv_has_header_and_rows() {
        let ens = tiny_ensemble();
        let mut buf = Vec::new();
        write_path_csv(ens.path(0), &mut buf).unwrap();
        let text = String::from_utf8(buf).unwrap();
        let lines: Vec<&str> = text.lines().collect();
        assert_eq!(lines[0], "# schema_version: 1");
        assert_eq!(lines[1], "t,x_1");
        assert_eq!(lines.len(), 2 + 5);
        assert!(lines[2].starts_with("0,1"));
    }

    #[test]
    fn content_hash_matches_git_blob() {
        // `echo -n 'hello' | git hash-object --stdin` -> b6fc4c62...
        assert_eq!(
            content_hash(b"hello"),
            "b6fc4c620b67d95f953a5c1c1230aaab5db5a1b0"
        );
    }

    #[test]
    fn manifest_is_reproducible() {
        let a = ensemble_manifest(&tiny_ensemble(), "ou").unwrap();
        let b = ensemble_manifest(&tiny_ensemble(), "ou").unwrap();
        assert_eq!(a.0.content_hash, b.0.content_hash);
        assert_eq!(a.1, b.1);
        assert_eq!(to_json_bytes(&a.0), to_json_bytes(&b.0));
    }

    #[test]
    fn histogram_covers_all_values() {
        let values: Vec<f64> = (0..100).map(|i| i as f64 / 10.0).collect();
        let mut buf = Vec::new();
        write_histogram_csv(&values, 8, &mut buf).unwrap();
        let text = String::from_utf8(buf).unwrap();
        let total: usize = text
            .lines()
            .skip(2)
            .map(|l| l.rsplit(',').next().unwrap().parse::<usize>().unwrap())
            .sum();
        assert_eq!(total, 100);
    }
}
