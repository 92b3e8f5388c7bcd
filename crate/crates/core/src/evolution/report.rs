use crate::error::{Error, Result};
use crate::evolution::log::{EvolutionLog, LogEvent};
use crate::evolution::Pool;
use crate::metrics::merge_gain;

pub const REPORT_HEADER: [&str; 5] = ["model", "avg", "gain", "delta_to_top", "kinship"];

/// One line of the per-model report. Foundations leave the merge columns
/// empty.
#[derive(Clone, Debug, PartialEq)]
pub struct ReportRow {
    pub model: String,
    pub avg: Option<f64>,
    pub gain: Option<f64>,
    /// ATP minus the best ATP among models from earlier generations.
    pub delta_to_top: Option<f64>,
    /// Similarity of the parents' deltas.
    pub kinship: Option<f64>,
}

pub fn report_rows(pool: &Pool, log: &EvolutionLog) -> Result<Vec<ReportRow>> {
    let kinship_of = |id: &str| {
        log.events.iter().find_map(|e| match e {
            LogEvent::Merged {
                child,
                parent_kinship,
                ..
            } if child == id => Some(*parent_kinship),
            _ => None,
        })
    };
    let mut rows = Vec::with_capacity(pool.len());
    for r in pool.records() {
        let mut row = ReportRow {
            model: r.id.clone(),
            avg: r.atp,
            gain: None,
            delta_to_top: None,
            kinship: None,
        };
        if let (false, Some(atp)) = (r.parents.is_empty(), r.atp) {
            let parent_atps = r
                .parents
                .iter()
                .map(|p| {
                    pool.atp(p)
                        .ok_or_else(|| Error::Validation(format!("parent `{p}` has no score")))
                })
                .collect::<Result<Vec<_>>>()?;
            row.gain = Some(merge_gain(atp, &parent_atps)?);
            row.delta_to_top = pool
                .records()
                .iter()
                .filter(|o| o.generation < r.generation)
                .filter_map(|o| o.atp)
                .reduce(f64::max)
                .map(|top| atp - top);
            row.kinship = kinship_of(&r.id).flatten();
        }
        rows.push(row);
    }
    Ok(rows)
}

/// CSV with columns `model,avg,gain,delta_to_top,kinship`, one row per
/// model in pool order.
pub fn report_csv(pool: &Pool, log: &EvolutionLog) -> Result<String> {
    let mut w = csv::Writer::from_writer(Vec::new());
    let fmt = |v: Option<f64>| v.map(|x| x.to_string()).unwrap_or_default();
    let csv_err = |e: csv::Error| Error::Validation(format!("report: {e}"));
    w.write_record(REPORT_HEADER).map_err(csv_err)?;
    for row in report_rows(pool, log)? {
        w.write_record([
            row.model,
            fmt(row.avg),
            fmt(row.gain),
            fmt(row.delta_to_top),
            fmt(row.kinship),
        ])
        .map_err(csv_err)?;
    }
    let bytes = w
        .into_inner()
        .map_err(|e| Error::Validation(format!("report: {e}")))?;
    Ok(String::from_utf8(bytes).expect("csv output is utf-8"))
}
