//! CSV outputs.

use std::io::Write;

use setconv_core::train::EpochRecord;

use crate::error::Result;

/// `epoch,lr,train_loss,val_metric@size<n>...`, one row per epoch. The
/// validation columns come from the first record.
pub fn write_history(records: &[EpochRecord], w: impl Write) -> Result<()> {
    let mut out = csv::Writer::from_writer(w);
    let sizes: Vec<usize> = records.first().map(|r| r.val.iter().map(|v| v.0).collect()).unwrap_or_default();
    let mut header = vec!["epoch".to_owned(), "lr".to_owned(), "train_loss".to_owned()];
    header.extend(sizes.iter().map(|n| format!("val_metric@size{n}")));
    out.write_record(&header)?;
    for r in records {
        let mut row = vec![r.epoch.to_string(), r.lr.to_string(), r.train_loss.to_string()];
        row.extend(r.val.iter().map(|v| v.1.to_string()));
        out.write_record(&row)?;
    }
    out.flush().map_err(csv::Error::from)?;
    Ok(())
}

/// `set_size,accuracy`.
pub fn write_accuracy(rows: &[(usize, f64)], w: impl Write) -> Result<()> {
    let mut out = csv::Writer::from_writer(w);
    out.write_record(["set_size", "accuracy"])?;
    for (n, a) in rows {
        out.write_record([n.to_string(), a.to_string()])?;
    }
    out.flush().map_err(csv::Error::from)?;
    Ok(())
}

/// `set_size,prevalence,auprc`.
pub fn write_auprc_grid(rows: &[(usize, f64, f64)], w: impl Write) -> Result<()> {
    let mut out = csv::Writer::from_writer(w);
    out.write_record(["set_size", "prevalence", "auprc"])?;
    for (n, p, v) in rows {
        out.write_record([n.to_string(), p.to_string(), v.to_string()])?;
    }
    out.flush().map_err(csv::Error::from)?;
    Ok(())
}

#[derive(Debug, Clone, PartialEq, serde::Serialize, serde::Deserialize)]
pub struct LocalizationRow {
    pub checkpoint: String,
    pub layer: usize,
    pub seed: u64,
    pub set_size: usize,
    pub anomalies: usize,
    pub score: f64,
}

/// Appends one row, writing the header only when `write_header` is set.
pub fn write_localization(row: &LocalizationRow, write_header: bool, w: impl Write) -> Result<()> {
    let mut out = csv::WriterBuilder::new().has_headers(write_header).from_writer(w);
    out.serialize(row)?;
    out.flush().map_err(csv::Error::from)?;
    Ok(())
}
