use std::fmt::Write;
use std::str::FromStr;

use super::bench::BenchResult;
use super::report::EvalReport;
use crate::error::{Error, Result};

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Format {
    Text,
    Csv,
    Json,
}

impl FromStr for Format {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "text" => Ok(Format::Text),
            "csv" => Ok(Format::Csv),
            "json" => Ok(Format::Json),
            other => Err(Error::UnknownFormat(other.to_string())),
        }
    }
}

fn json<S: serde::Serialize>(v: &S) -> Result<String> {
    serde_json::to_string_pretty(v).map_err(|e| Error::Data(e.to_string()))
}

/// Classification report as a text table, CSV
/// (`class,precision,recall,f1,support`) or JSON with the full confusion
/// matrix.
pub fn render_report(r: &EvalReport, format: Format) -> Result<String> {
    match format {
        Format::Json => json(r),
        Format::Csv => {
            let mut w = csv::Writer::from_writer(Vec::new());
            let err = |e: csv::Error| Error::Data(e.to_string());
            w.write_record(["class", "precision", "recall", "f1", "support"]).map_err(err)?;
            for c in 0..r.num_classes() {
                w.write_record([
                    r.class_names[c].clone(),
                    r.precision[c].to_string(),
                    r.recall[c].to_string(),
                    r.f1[c].to_string(),
                    r.support[c].to_string(),
                ])
                .map_err(err)?;
            }
            String::from_utf8(w.into_inner().map_err(|e| Error::Data(e.to_string()))?)
                .map_err(|e| Error::Data(e.to_string()))
        }
        Format::Text => {
            let width = r.class_names.iter().map(String::len).max().unwrap_or(5).max(5);
            let mut s = String::new();
            writeln!(s, "{:>width$}  precision     recall         f1    support", "class").unwrap();
            for c in 0..r.num_classes() {
                writeln!(
                    s,
                    "{:>width$}  {:>9.4}  {:>9.4}  {:>9.4}  {:>9}",
                    r.class_names[c], r.precision[c], r.recall[c], r.f1[c], r.support[c]
                )
                .unwrap();
            }
            writeln!(s).unwrap();
            writeln!(s, "{:>width$}  {:>31.4}  {:>9}", "accuracy", r.overall_accuracy, r.total()).unwrap();
            writeln!(s, "{:>width$}  {:>31.4}  {:>9}", "macro f1", r.macro_f1, r.total()).unwrap();
            Ok(s)
        }
    }
}

/// Benchmarks side by side; JSON carries the raw latency samples.
pub fn render_bench(results: &[BenchResult], format: Format) -> Result<String> {
    match format {
        Format::Json => json(&results),
        Format::Csv => {
            let mut s = String::from("model,seq_len,features,measured,mean_latency,median_latency,p95_latency,average_fps\n");
            for b in results {
                writeln!(
                    s,
                    "{},{},{},{},{},{},{},{}",
                    b.model, b.seq_len, b.features, b.measured, b.mean_latency, b.median_latency, b.p95_latency, b.average_fps
                )
                .unwrap();
            }
            Ok(s)
        }
        Format::Text => {
            let mut s = String::new();
            writeln!(s, "{:<10} {:>7} {:>8} {:>12} {:>12} {:>12} {:>10}", "model", "seq", "features", "mean ms", "median ms", "p95 ms", "avg fps").unwrap();
            for b in results {
                writeln!(
                    s,
                    "{:<10} {:>7} {:>8} {:>12.3} {:>12.3} {:>12.3} {:>10.1}",
                    b.model,
                    b.seq_len,
                    b.features,
                    b.mean_latency * 1e3,
                    b.median_latency * 1e3,
                    b.p95_latency * 1e3,
                    b.average_fps
                )
                .unwrap();
            }
            if results.len() >= 2 {
                let mut order: Vec<&BenchResult> = results.iter().collect();
                order.sort_by(|a, b| b.average_fps.total_cmp(&a.average_fps));
                let names: Vec<String> = order.iter().map(|b| format!("{} ({:.1})", b.model, b.average_fps)).collect();
                writeln!(s, "fps ordering: {}", names.join(" > ")).unwrap();
            }
            if let Some(b) = results.first() {
                writeln!(s, "hardware: {}", b.hardware).unwrap();
            }
            Ok(s)
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn fixture() -> EvalReport {
        let names = vec!["alpha".into(), "beta".into(), "gamma".into()];
        EvalReport::from_confusion(vec![vec![2, 1, 0], vec![0, 2, 0], vec![1, 0, 4]], names).unwrap()
    }

    #[test]
    fn unknown_format() {
        assert!(matches!("xml".parse::<Format>(), Err(Error::UnknownFormat(_))));
    }

    #[test]
    fn text_lists_classes_in_id_order() {
        let t = render_report(&fixture(), Format::Text).unwrap();
        let a = t.find("alpha").unwrap();
        let b = t.find("beta").unwrap();
        let g = t.find("gamma").unwrap();
        assert!(a < b && b < g);
        assert!(t.contains("accuracy"));
    }

    #[test]
    fn csv_round_trips() {
        let r = fixture();
        let text = render_report(&r, Format::Csv).unwrap();
        let mut rd = csv::Reader::from_reader(text.as_bytes());
        assert_eq!(rd.headers().unwrap(), vec!["class", "precision", "recall", "f1", "support"]);
        for (c, rec) in rd.records().enumerate() {
            let rec = rec.unwrap();
            assert_eq!(&rec[0], r.class_names[c]);
            assert_eq!(rec[1].parse::<f64>().unwrap(), r.precision[c]);
            assert_eq!(rec[2].parse::<f64>().unwrap(), r.recall[c]);
            assert_eq!(rec[3].parse::<f64>().unwrap(), r.f1[c]);
            assert_eq!(rec[4].parse::<usize>().unwrap(), r.support[c]);
        }
    }

    #[test]
    fn json_round_trips() {
        let r = fixture();
        let back: EvalReport = serde_json::from_str(&render_report(&r, Format::Json).unwrap()).unwrap();
        assert_eq!(back, r);
    }

    #[test]
    fn bench_table_states_ordering() {
        let mk = |name: &str, lat: f64| BenchResult {
            model: name.into(),
            seq_len: 1,
            features: 1,
            warmup: 0,
            measured: 30,
            latencies_seconds: vec![lat; 30],
            mean_latency: lat,
            median_latency: lat,
            p95_latency: lat,
            average_fps: 1.0 / lat,
            hardware: "test".into(),
        };
        let t = render_bench(&[mk("cnntrans", 0.02), mk("lstm", 0.01)], Format::Text).unwrap();
        assert!(t.contains("fps ordering: lstm (100.0) > cnntrans (50.0)"), "{t}");
        let parsed: Vec<BenchResult> = serde_json::from_str(&render_bench(&[mk("lstm", 0.01)], Format::Json).unwrap()).unwrap();
        assert_eq!(parsed[0].latencies_seconds.len(), 30);
    }
}
