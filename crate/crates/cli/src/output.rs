//! Plot-ready artifact writers. Floats use 17 significant digits so every
//! value round-trips exactly.

use std::fs::File;
use std::io::{self, BufWriter, Write};
use std::path::Path;

use mfnuts_core::diagnostics::prefix_cost;
use mfnuts_core::samplers::ChainRecord;

pub fn fmt_f64(v: f64) -> String {
    format!("{v:.16e}")
}

/// `index, theta_0..theta_{d-1}, log_density, accepted, hf_evals_cumulative`,
/// where the cost column includes offline and adaptation evaluations.
pub fn write_samples_csv(path: &Path, record: &ChainRecord) -> io::Result<()> {
    let mut w = BufWriter::new(File::create(path)?);
    let d = record.dim();
    let mut header = vec!["index".to_string()];
    header.extend((0..d).map(|i| format!("theta_{i}")));
    header.extend(["log_density", "accepted", "hf_evals_cumulative"].map(String::from));
    writeln!(w, "{}", header.join(","))?;
    for (i, theta) in record.samples.iter().enumerate() {
        write!(w, "{i}")?;
        for v in theta {
            write!(w, ",{}", fmt_f64(*v))?;
        }
        writeln!(w, ",{},{},{}", fmt_f64(record.logp[i]), u8::from(record.accepted[i]), prefix_cost(record, i + 1))?;
    }
    w.flush()
}

pub fn write_curve_csv(path: &Path, curve: &[(u64, f64)]) -> io::Result<()> {
    let mut w = BufWriter::new(File::create(path)?);
    writeln!(w, "hf_evals,mess")?;
    for (x, m) in curve {
        writeln!(w, "{x},{}", fmt_f64(*m))?;
    }
    w.flush()
}

/// Concatenated `(sampler, hf_evals, mess)` rows for several labelled curves.
pub fn write_compare_csv(path: &Path, curves: &[(String, Vec<(u64, f64)>)]) -> io::Result<()> {
    let mut w = BufWriter::new(File::create(path)?);
    writeln!(w, "sampler,hf_evals,mess")?;
    for (label, curve) in curves {
        for (x, m) in curve {
            writeln!(w, "{label},{x},{}", fmt_f64(*m))?;
        }
    }
    w.flush()
}

pub fn write_manifest(path: &Path, complete: bool, files: &[String], error: Option<&str>) -> io::Result<()> {
    let mut w = BufWriter::new(File::create(path)?);
    writeln!(w, "status: {}", if complete { "complete" } else { "incomplete" })?;
    if let Some(e) = error {
        writeln!(w, "error: {}", e.replace('\n', " "))?;
    }
    for f in files {
        writeln!(w, "file: {f}")?;
    }
    w.flush()
}
