use std::io::Write;

use super::experiment::{EvalReport, SweepRow};
use crate::error::Result;

fn finish<W: Write>(mut w: csv::Writer<W>) -> Result<()> {
    w.flush().map_err(csv::Error::from)?;
    Ok(())
}

/// One row per fold:
/// `server,malware,fold,f1,accuracy,auc,precision,recall,tp,fp,fn,tn,threshold`.
pub fn write_report_csv<W: Write>(out: W, reports: &[EvalReport]) -> Result<()> {
    let mut w = csv::Writer::from_writer(out);
    w.write_record([
        "server", "malware", "fold", "f1", "accuracy", "auc", "precision", "recall", "tp", "fp",
        "fn", "tn", "threshold",
    ])?;
    for r in reports {
        for f in &r.folds {
            let m = &f.metrics;
            let c = &m.confusion;
            w.write_record([
                r.server.clone(),
                r.malware.clone(),
                f.fold.to_string(),
                m.f1.to_string(),
                m.accuracy.to_string(),
                m.auc.to_string(),
                m.precision.to_string(),
                m.recall.to_string(),
                c.tp.to_string(),
                c.fp.to_string(),
                c.fn_.to_string(),
                c.tn.to_string(),
                f.threshold.value.to_string(),
            ])?;
        }
    }
    finish(w)
}

/// Median ± std per report:
/// `detector,server,malware,f1_median,f1_std,...,recall_std`.
pub fn write_summary_csv<W: Write>(out: W, reports: &[EvalReport]) -> Result<()> {
    let mut w = csv::Writer::from_writer(out);
    let mut header = vec!["detector".to_string(), "server".into(), "malware".into()];
    if let Some(r) = reports.first() {
        for (name, _) in r.summary.columns() {
            header.push(format!("{name}_median"));
            header.push(format!("{name}_std"));
        }
    }
    w.write_record(&header)?;
    for r in reports {
        let mut row = vec![r.detector.to_string(), r.server.clone(), r.malware.clone()];
        for (_, a) in r.summary.columns() {
            row.push(a.median.to_string());
            row.push(a.std.to_string());
        }
        w.write_record(&row)?;
    }
    finish(w)
}

/// Median F1 grid: one row per benign source, one column per malware type,
/// both in first-appearance order.
pub fn write_heatmap_csv<W: Write>(out: W, reports: &[EvalReport]) -> Result<()> {
    let mut servers: Vec<&str> = Vec::new();
    let mut malware: Vec<&str> = Vec::new();
    for r in reports {
        if !servers.contains(&r.server.as_str()) {
            servers.push(&r.server);
        }
        if !malware.contains(&r.malware.as_str()) {
            malware.push(&r.malware);
        }
    }
    let mut w = csv::Writer::from_writer(out);
    let mut header = vec!["server"];
    header.extend(&malware);
    w.write_record(&header)?;
    for s in &servers {
        let mut row = vec![s.to_string()];
        for m in &malware {
            let cell = reports
                .iter()
                .find(|r| r.server == *s && r.malware == *m)
                .map(|r| r.summary.f1.median.to_string())
                .unwrap_or_default();
            row.push(cell);
        }
        w.write_record(&row)?;
    }
    finish(w)
}

/// `architecture,f1_median,f1_std,accuracy_median,...,recall_std`, in the
/// order given (already ranked by the sweep).
pub fn write_sweep_csv<W: Write>(out: W, rows: &[SweepRow]) -> Result<()> {
    let mut w = csv::Writer::from_writer(out);
    let mut header = vec!["architecture".to_string()];
    for name in ["f1", "accuracy", "auc", "precision", "recall"] {
        header.push(format!("{name}_median"));
        header.push(format!("{name}_std"));
    }
    w.write_record(&header)?;
    for r in rows {
        let mut row = vec![r.architecture.to_string()];
        for (_, a) in r.summary.columns() {
            row.push(a.median.to_string());
            row.push(a.std.to_string());
        }
        w.write_record(&row)?;
    }
    finish(w)
}
