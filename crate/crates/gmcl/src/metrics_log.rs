//! Per-iteration CSV log.

use std::fmt::Write as _;

use gmcl_core::training::IterationLog;

pub const HEADER: &str = "meta_iter,teach_loss_mean,meta_loss,eval_acc,eval_auc,eval_sens,eval_spec";

/// One CSV row; absent values are empty fields.
pub fn row(log: &IterationLog) -> String {
    let opt = |v: Option<f64>| v.map(|x| x.to_string()).unwrap_or_default();
    let r = &log.record;
    let mut s = format!("{},{},{}", r.meta_iter, opt(r.teach_loss_mean), r.meta_loss);
    match &log.eval {
        Some(e) => {
            let _ = write!(s, ",{},{},{},{}", e.accuracy, e.auc, e.sensitivity, e.specificity);
        }
        None => s.push_str(",,,,"),
    }
    s
}

/// Keeps the header and the rows up to `meta_iter`, for resuming.
pub fn truncate_to(text: &str, meta_iter: usize) -> String {
    let mut out = String::from(HEADER);
    out.push('\n');
    for line in text.lines().skip(1) {
        let iter = line.split(',').next().and_then(|f| f.parse::<usize>().ok());
        if iter.is_some_and(|i| i <= meta_iter) {
            out.push_str(line);
            out.push('\n');
        }
    }
    out
}
