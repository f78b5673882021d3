//! Feature-matrix CSV files and audit-report JSON.
//!
//! Feature CSV: UTF-8, header `f0,f1,...,f{d-1}`, then one line of `d`
//! decimal fields per sample. Header labels are not interpreted; their
//! count fixes `d`. Values are written with 17 significant digits so a
//! write/load cycle reproduces every `f64` exactly.

use std::collections::BTreeMap;
use std::fs::File;
use std::io::{BufWriter, Write};
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{AuditError, Result};
use crate::kernel::KernelSpec;
use crate::matrix::FeatureMatrix;

pub fn load_feature_matrix(path: impl AsRef<Path>) -> Result<FeatureMatrix> {
    let path = path.as_ref();
    if !path.exists() {
        return Err(AuditError::MissingFile(path.to_path_buf()));
    }
    let csv_err = |source| AuditError::Csv {
        path: path.to_path_buf(),
        source,
    };
    let mut reader = csv::ReaderBuilder::new()
        .has_headers(true)
        .flexible(true)
        .trim(csv::Trim::All)
        .from_path(path)
        .map_err(csv_err)?;
    let d = reader.headers().map_err(csv_err)?.len();
    let mut data = Vec::new();
    let mut n = 0;
    for (row, record) in reader.records().enumerate() {
        let record = record.map_err(csv_err)?;
        // A header-only file parses as a single empty header record.
        if d == 0 {
            break;
        }
        if record.len() != d {
            return Err(AuditError::RaggedRow {
                path: path.to_path_buf(),
                row,
                expected: d,
                found: record.len(),
            });
        }
        for (col, field) in record.iter().enumerate() {
            match field.parse::<f64>() {
                Ok(v) if v.is_finite() => data.push(v),
                _ => {
                    return Err(AuditError::NonFiniteValue {
                        path: path.to_path_buf(),
                        row,
                        col,
                        value: field.to_string(),
                    })
                }
            }
        }
        n += 1;
    }
    if n == 0 || d == 0 {
        return Err(AuditError::EmptyMatrix);
    }
    FeatureMatrix::new(data, n, d)
}

pub fn write_feature_matrix(m: &FeatureMatrix, path: impl AsRef<Path>) -> Result<()> {
    let path = path.as_ref();
    let io_err = |source| AuditError::Io {
        path: path.to_path_buf(),
        source,
    };
    let mut out = BufWriter::new(File::create(path).map_err(io_err)?);
    let header: Vec<String> = (0..m.d()).map(|j| format!("f{j}")).collect();
    writeln!(out, "{}", header.join(",")).map_err(io_err)?;
    let mut line = String::new();
    for row in m.rows() {
        line.clear();
        for (j, v) in row.iter().enumerate() {
            if j > 0 {
                line.push(',');
            }
            line.push_str(&format_value(*v));
        }
        line.push('\n');
        out.write_all(line.as_bytes()).map_err(io_err)?;
    }
    out.flush().map_err(io_err)
}

/// 17 significant digits in scientific notation.
fn format_value(v: f64) -> String {
    format!("{v:.16e}")
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Method {
    Smia0,
    SmiaM,
    SmiaW,
}

impl Method {
    pub fn as_str(self) -> &'static str {
        match self {
            Method::Smia0 => "smia0",
            Method::SmiaM => "smia_m",
            Method::SmiaW => "smia_w",
        }
    }
}

/// Output of a bootstrap audit. Field order here is the key order of the
/// emitted JSON.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AuditReport {
    pub method: Method,
    pub alpha_p5: f64,
    pub alpha_p50: f64,
    pub alpha_p95: f64,
    pub k_bootstrap: usize,
    pub seed: u64,
    pub n_member: usize,
    pub n_nonmember: usize,
    pub n_audit: usize,
    pub kernel: Option<KernelSpec>,
    pub epsilon: Option<f64>,
    pub diagnostics: BTreeMap<String, f64>,
}

impl AuditReport {
    pub fn validate(&self) -> Result<()> {
        let bad = |msg: String| Err(AuditError::Validation(msg));
        for (name, a) in [
            ("alpha_p5", self.alpha_p5),
            ("alpha_p50", self.alpha_p50),
            ("alpha_p95", self.alpha_p95),
        ] {
            if !(0.0..=1.0).contains(&a) {
                return bad(format!("{name} = {a} is outside [0, 1]"));
            }
        }
        if !(self.alpha_p5 <= self.alpha_p50 && self.alpha_p50 <= self.alpha_p95) {
            return bad(format!(
                "percentiles out of order: {} / {} / {}",
                self.alpha_p5, self.alpha_p50, self.alpha_p95
            ));
        }
        if self.k_bootstrap == 0 {
            return bad("k_bootstrap must be positive".into());
        }
        if self.n_member == 0 || self.n_nonmember == 0 || self.n_audit == 0 {
            return bad("sample counts must be positive".into());
        }
        if let Some(eps) = self.epsilon {
            if !(eps > 0.0 && eps.is_finite()) {
                return bad(format!("epsilon = {eps} must be positive"));
            }
        }
        if let Some((k, v)) = self.diagnostics.iter().find(|(_, v)| !v.is_finite()) {
            return bad(format!("diagnostic {k} = {v} is not finite"));
        }
        Ok(())
    }

    pub fn to_json(&self) -> Result<String> {
        self.validate()?;
        serde_json::to_string_pretty(self).map_err(|e| AuditError::Validation(e.to_string()))
    }
}

pub fn write_report(r: &AuditReport, path: impl AsRef<Path>) -> Result<()> {
    let path = path.as_ref();
    let mut json = r.to_json()?;
    json.push('\n');
    std::fs::write(path, json).map_err(|source| AuditError::Io {
        path: path.to_path_buf(),
        source,
    })
}

pub fn read_report(path: impl AsRef<Path>) -> Result<AuditReport> {
    let path = path.as_ref();
    let text = std::fs::read_to_string(path).map_err(|source| AuditError::Io {
        path: path.to_path_buf(),
        source,
    })?;
    serde_json::from_str(&text).map_err(|e| AuditError::Validation(e.to_string()))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::kernel::KernelFamily;
    use proptest::prelude::*;

    fn write(dir: &tempfile::TempDir, name: &str, body: &str) -> std::path::PathBuf {
        let p = dir.path().join(name);
        std::fs::write(&p, body).unwrap();
        p
    }

    #[test]
    fn parses_simple_file() {
        let dir = tempfile::tempdir().unwrap();
        let p = write(&dir, "a.csv", "f0,f1\n0,0\n2,0\n");
        let m = load_feature_matrix(&p).unwrap();
        assert_eq!((m.n(), m.d()), (2, 2));
        assert_eq!(m.as_slice(), &[0.0, 0.0, 2.0, 0.0]);
    }

    #[test]
    fn accepts_crlf() {
        let dir = tempfile::tempdir().unwrap();
        let p = write(&dir, "a.csv", "f0,f1\r\n1.5,-2\r\n3e-1,4\r\n");
        let m = load_feature_matrix(&p).unwrap();
        assert_eq!(m.as_slice(), &[1.5, -2.0, 0.3, 4.0]);
    }

    #[test]
    fn error_paths() {
        let dir = tempfile::tempdir().unwrap();
        assert!(matches!(
            load_feature_matrix(dir.path().join("nope.csv")),
            Err(AuditError::MissingFile(_))
        ));
        let p = write(&dir, "h.csv", "f0,f1\n");
        assert!(matches!(load_feature_matrix(&p), Err(AuditError::EmptyMatrix)));
        let p = write(&dir, "e.csv", "");
        assert!(matches!(load_feature_matrix(&p), Err(AuditError::EmptyMatrix)));
        let p = write(&dir, "r.csv", "f0,f1\n1,2\n3\n");
        assert!(matches!(
            load_feature_matrix(&p),
            Err(AuditError::RaggedRow { row: 1, expected: 2, found: 1, .. })
        ));
        let p = write(&dir, "n.csv", "f0\n1\nNaN\n");
        assert!(matches!(
            load_feature_matrix(&p),
            Err(AuditError::NonFiniteValue { row: 1, col: 0, .. })
        ));
        let p = write(&dir, "i.csv", "f0\ninf\n");
        assert!(matches!(load_feature_matrix(&p), Err(AuditError::NonFiniteValue { .. })));
        let p = write(&dir, "x.csv", "f0\nabc\n");
        assert!(matches!(load_feature_matrix(&p), Err(AuditError::NonFiniteValue { .. })));
    }

    #[test]
    fn one_by_one_file_layout() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("one.csv");
        write_feature_matrix(&FeatureMatrix::from_column(&[1.0]).unwrap(), &p).unwrap();
        let text = std::fs::read_to_string(&p).unwrap();
        let lines: Vec<&str> = text.lines().collect();
        assert_eq!(lines[0], "f0");
        assert_eq!(lines[1].parse::<f64>().unwrap(), 1.0);
        assert_eq!(lines.len(), 2);
        assert!(text.ends_with('\n'));
    }

    #[test]
    fn unwritable_path_is_io_error() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("missing-dir").join("x.csv");
        let m = FeatureMatrix::from_column(&[1.0]).unwrap();
        assert!(matches!(write_feature_matrix(&m, &p), Err(AuditError::Io { .. })));
    }

    fn sample_report() -> AuditReport {
        let mut diagnostics = BTreeMap::new();
        diagnostics.insert("failed_groups".to_string(), 0.0);
        diagnostics.insert("residual_at_opt".to_string(), 1.234_567_890_123_456_7e-7);
        AuditReport {
            method: Method::SmiaM,
            alpha_p5: 0.1,
            alpha_p50: 0.3,
            alpha_p95: 0.5,
            k_bootstrap: 200,
            seed: u64::MAX,
            n_member: 10,
            n_nonmember: 11,
            n_audit: 12,
            kernel: Some(KernelSpec {
                family: KernelFamily::Rbf,
                sigma: Some(0.123_456_789_012_345_67),
                ..KernelSpec::default()
            }),
            epsilon: None,
            diagnostics,
        }
    }

    #[test]
    fn report_json_keys_and_values() {
        let r = sample_report();
        let json = r.to_json().unwrap();
        let v: serde_json::Value = serde_json::from_str(&json).unwrap();
        assert_eq!(v["alpha_p50"], 0.3);
        assert_eq!(v["method"], "smia_m");
        assert!(v["epsilon"].is_null());
        let order = [
            "method", "alpha_p5", "alpha_p50", "alpha_p95", "k_bootstrap", "seed",
            "n_member", "n_nonmember", "n_audit", "kernel", "epsilon", "diagnostics",
        ];
        assert_eq!(v.as_object().unwrap().len(), order.len());
        let pos: Vec<usize> = order.iter().map(|k| json.find(&format!("\"{k}\"")).unwrap()).collect();
        assert!(pos.windows(2).all(|w| w[0] < w[1]), "{json}");
        assert_eq!(v["kernel"].as_object().unwrap().len(), 5);
        let kernel = json.find("\"family\"").unwrap();
        assert!(kernel < json.find("\"alpha_rq\"").unwrap());
        // emitted key order is stable across calls
        assert_eq!(json, r.to_json().unwrap());
    }

    #[test]
    fn report_round_trip_is_exact() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("r.json");
        let r = sample_report();
        write_report(&r, &p).unwrap();
        assert_eq!(read_report(&p).unwrap(), r);
    }

    #[test]
    fn misordered_report_rejected_before_write() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("r.json");
        let mut r = sample_report();
        r.alpha_p5 = 0.6;
        assert!(matches!(write_report(&r, &p), Err(AuditError::Validation(_))));
        assert!(!p.exists());
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(100))]
        #[test]
        fn csv_round_trip(
            (n, d, vals) in (1usize..12, 1usize..6).prop_flat_map(|(n, d)| {
                (Just(n), Just(d), prop::collection::vec(
                    prop_oneof![-1e300f64..1e300, -1.0f64..1.0, Just(0.0), Just(-0.0)],
                    n * d,
                ))
            })
        ) {
            let m = FeatureMatrix::new(vals, n, d).unwrap();
            let dir = tempfile::tempdir().unwrap();
            let p = dir.path().join("m.csv");
            write_feature_matrix(&m, &p).unwrap();
            let back = load_feature_matrix(&p).unwrap();
            prop_assert_eq!(back.n(), n);
            prop_assert_eq!(back.d(), d);
            for (a, b) in m.as_slice().iter().zip(back.as_slice()) {
                prop_assert!((a - b).abs() <= 1e-12 * a.abs().max(1.0));
                prop_assert_eq!(a, b);
            }
        }

        #[test]
        fn report_json_round_trip(a in 0.0f64..1.0, b in 0.0f64..1.0, c in 0.0f64..1.0, seed: u64, eps in 1e-9f64..1e3) {
            let mut v = [a, b, c];
            v.sort_by(f64::total_cmp);
            let mut r = sample_report();
            r.alpha_p5 = v[0];
            r.alpha_p50 = v[1];
            r.alpha_p95 = v[2];
            r.seed = seed;
            r.epsilon = Some(eps);
            let back: AuditReport = serde_json::from_str(&r.to_json().unwrap()).unwrap();
            prop_assert_eq!(back, r);
        }
    }
}
