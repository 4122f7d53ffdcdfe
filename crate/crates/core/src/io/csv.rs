//! CSV outputs: scores, loss logs, histograms and feature dumps.

use std::fs::File;
use std::io::{Read, Write};
use std::path::Path;

use crate::error::{Error, Result};
use crate::metrics::{Label, ScoreRecord, SimilarityHistogram};
use crate::numeric::Tensor;
use crate::trainer::EpochLog;

pub const SCORE_HEADER: [&str; 3] = ["id", "score", "label"];
pub const LOSS_HEADER: [&str; 6] = ["epoch", "l_z", "l_c", "l_m", "l_r", "total"];
pub const HISTOGRAM_HEADER: [&str; 5] = ["bin", "lo", "hi", "inliers", "outliers"];

fn csv_err(e: csv::Error) -> Error {
    if e.is_io_error() {
        match e.into_kind() {
            csv::ErrorKind::Io(io) => Error::Io(io),
            _ => unreachable!("checked is_io_error"),
        }
    } else {
        Error::Format(e.to_string())
    }
}

fn writer<W: Write>(out: W) -> csv::Writer<W> {
    csv::WriterBuilder::new().has_headers(false).from_writer(out)
}

fn flush<W: Write>(w: csv::Writer<W>) -> Result<()> {
    w.into_inner().map_err(|e| Error::Io(e.into_error()))?.flush()?;
    Ok(())
}

/// `id,score,label` with an empty label when it is unknown.
pub fn write_scores<W: Write>(out: W, records: &[ScoreRecord]) -> Result<()> {
    let mut w = writer(out);
    w.write_record(SCORE_HEADER).map_err(csv_err)?;
    for r in records {
        let label = r.label.map(|l| l.to_string()).unwrap_or_default();
        w.write_record([r.id.to_string(), r.score.to_string(), label]).map_err(csv_err)?;
    }
    flush(w)
}

pub fn read_scores<R: Read>(input: R) -> Result<Vec<ScoreRecord>> {
    let mut r = csv::ReaderBuilder::new().has_headers(true).from_reader(input);
    let header = r.headers().map_err(csv_err)?.clone();
    if header.iter().collect::<Vec<_>>() != SCORE_HEADER {
        return Err(Error::Format(format!("score file header {header:?}, expected id,score,label")));
    }
    let mut records = Vec::new();
    for (line, row) in r.records().enumerate() {
        let row = row.map_err(csv_err)?;
        let bad = |what: &str| Error::Format(format!("score row {}: bad {what}", line + 1));
        let id = row[0].parse().map_err(|_| bad("id"))?;
        let score: f64 = row[1].parse().map_err(|_| bad("score"))?;
        let label = match &row[2] {
            "" => None,
            s => Some(s.parse::<Label>()?),
        };
        records.push(ScoreRecord { id, score, label });
    }
    Ok(records)
}

pub fn write_loss_log<W: Write>(out: W, logs: &[EpochLog]) -> Result<()> {
    let mut w = writer(out);
    w.write_record(LOSS_HEADER).map_err(csv_err)?;
    for log in logs {
        append_loss_row(&mut w, log)?;
    }
    flush(w)
}

fn append_loss_row<W: Write>(w: &mut csv::Writer<W>, log: &EpochLog) -> Result<()> {
    let l = &log.losses;
    w.write_record([
        log.epoch.to_string(),
        l.l_z.to_string(),
        l.l_c.to_string(),
        l.l_m.to_string(),
        l.l_r.to_string(),
        l.total.to_string(),
    ])
    .map_err(csv_err)
}

/// Appends loss rows to an open log, writing the header first if asked.
pub struct LossLogWriter<W: Write> {
    inner: csv::Writer<W>,
}

impl<W: Write> LossLogWriter<W> {
    pub fn new(out: W, header: bool) -> Result<Self> {
        let mut inner = writer(out);
        if header {
            inner.write_record(LOSS_HEADER).map_err(csv_err)?;
        }
        inner.flush()?;
        Ok(Self { inner })
    }

    pub fn append(&mut self, log: &EpochLog) -> Result<()> {
        append_loss_row(&mut self.inner, log)?;
        self.inner.flush()?;
        Ok(())
    }
}

pub fn write_histogram<W: Write>(out: W, hist: &SimilarityHistogram) -> Result<()> {
    let mut w = writer(out);
    w.write_record(HISTOGRAM_HEADER).map_err(csv_err)?;
    for (b, (i, o)) in hist.inliers.iter().zip(&hist.outliers).enumerate() {
        let (lo, hi) = SimilarityHistogram::bin_edges(b);
        w.write_record([b.to_string(), lo.to_string(), hi.to_string(), i.to_string(), o.to_string()])
            .map_err(csv_err)?;
    }
    flush(w)
}

/// `id,label,f0,f1,...` with one row per sample.
pub fn write_features<W: Write>(out: W, features: &Tensor, labels: Option<&[Label]>) -> Result<()> {
    let mut w = writer(out);
    let mut header = vec!["id".to_string(), "label".to_string()];
    header.extend((0..features.cols()).map(|j| format!("f{j}")));
    w.write_record(&header).map_err(csv_err)?;
    for (i, row) in features.row_iter().enumerate() {
        let label = labels.map(|l| l[i].to_string()).unwrap_or_default();
        let mut rec = vec![i.to_string(), label];
        rec.extend(row.iter().map(f64::to_string));
        w.write_record(&rec).map_err(csv_err)?;
    }
    flush(w)
}

pub fn create(path: &Path) -> Result<File> {
    Ok(File::create(path)?)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn scores_round_trip_exactly() {
        let records = vec![
            ScoreRecord { id: 0, score: 0.1 + 0.2, label: Some(Label::Inlier) },
            ScoreRecord { id: 7, score: 1e-300, label: Some(Label::Outlier) },
            ScoreRecord { id: 3, score: 12345.678901234567, label: None },
        ];
        let mut buf = Vec::new();
        write_scores(&mut buf, &records).unwrap();
        let text = String::from_utf8(buf.clone()).unwrap();
        assert!(text.starts_with("id,score,label\n"));
        assert_eq!(read_scores(buf.as_slice()).unwrap(), records);
    }

    #[test]
    fn bad_score_files() {
        assert!(matches!(read_scores("a,b,c\n".as_bytes()), Err(Error::Format(_))));
        assert!(matches!(
            read_scores("id,score,label\n0,x,inlier\n".as_bytes()),
            Err(Error::Format(_))
        ));
        assert!(matches!(
            read_scores("id,score,label\n0,1.0,maybe\n".as_bytes()),
            Err(Error::Format(_))
        ));
    }
}
