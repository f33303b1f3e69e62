use std::io::{self, Write};

use serde::Serialize;

pub const CSV_HEADER: &str = "prune_ratio,predicted_speedup,measured_wall_speedup,baseline_tokens,kept_tokens,cache_sizes,thread_count,precision,valid";

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct BenchRow {
    /// Fraction of tokens pruned by the map.
    pub prune_ratio: f64,
    pub predicted_speedup: f64,
    pub measured_wall_speedup: f64,
    pub baseline_tokens: usize,
    pub kept_tokens: usize,
    /// Final cache length, baseline then pruned.
    pub cache_sizes: (usize, usize),
    pub thread_count: usize,
    pub precision: &'static str,
    /// False when the run was too short for the timer to resolve.
    pub valid: bool,
    /// Median wall times in seconds, baseline then pruned; not in the CSV.
    #[serde(skip)]
    pub median_secs: (f64, f64),
}

#[derive(Clone, Debug, Default, PartialEq, Serialize)]
pub struct BenchReport {
    pub rows: Vec<BenchRow>,
}

impl BenchReport {
    pub fn write_csv<W: Write>(&self, mut w: W) -> io::Result<()> {
        writeln!(w, "{CSV_HEADER}")?;
        for r in &self.rows {
            writeln!(
                w,
                "{:.6},{:.6},{:.6},{},{},{};{},{},{},{}",
                r.prune_ratio,
                r.predicted_speedup,
                r.measured_wall_speedup,
                r.baseline_tokens,
                r.kept_tokens,
                r.cache_sizes.0,
                r.cache_sizes.1,
                r.thread_count,
                r.precision,
                r.valid
            )?;
        }
        Ok(())
    }

    pub fn to_csv(&self) -> String {
        let mut buf = Vec::new();
        self.write_csv(&mut buf).expect("writing to a Vec cannot fail");
        String::from_utf8(buf).expect("CSV is ASCII")
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn csv_layout() {
        let report = BenchReport {
            rows: vec![BenchRow {
                prune_ratio: 0.3125,
                predicted_speedup: 1.25,
                measured_wall_speedup: 1.2,
                baseline_tokens: 384,
                kept_tokens: 264,
                cache_sizes: (384, 264),
                thread_count: 1,
                precision: "f64",
                valid: true,
                median_secs: (0.2, 0.16),
            }],
        };
        let csv = report.to_csv();
        assert_eq!(
            csv,
            format!("{CSV_HEADER}\n0.312500,1.250000,1.200000,384,264,384;264,1,f64,true\n")
        );
        assert!(!csv.contains('\r'));
    }
}
