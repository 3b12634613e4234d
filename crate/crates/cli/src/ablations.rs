//! `list-ablations`: the switchable model variants and the flags that select
//! them, as a plain text table.

use anyhow::Result;

use crate::common::emit_stdout;

struct Row {
    flag: &'static str,
    value: &'static str,
    what: &'static str,
}

const ROWS: &[Row] = &[
    Row {
        flag: "--fusion",
        value: "xattn",
        what: "token summary cross-attends to the time embedding (default)",
    },
    Row {
        flag: "--fusion",
        value: "additive",
        what: "token summary plus projected time embedding",
    },
    Row {
        flag: "--fusion",
        value: "concat",
        what: "concatenate token summary and time embedding, project back down",
    },
    Row {
        flag: "--fusion",
        value: "none",
        what: "ignore event times in the representation entirely",
    },
    Row {
        flag: "--bias-mode",
        value: "full",
        what: "per-head learned attention bias from signed log-bucketed gaps (default)",
    },
    Row {
        flag: "--bias-mode",
        value: "nolog",
        what: "bias buckets on raw gaps instead of log gaps",
    },
    Row {
        flag: "--bias-mode",
        value: "shared",
        what: "one bias table shared by all heads",
    },
    Row {
        flag: "--bias-mode",
        value: "none",
        what: "no attention bias over gaps",
    },
    Row {
        flag: "--time-embed",
        value: "linear",
        what: "learned linear map of the scalar gap (default)",
    },
    Row {
        flag: "--time-embed",
        value: "sin",
        what: "fixed sinusoidal features of the gap",
    },
    Row {
        flag: "--time-embed",
        value: "interval",
        what: "two-layer MLP on (gap, log gap)",
    },
    Row {
        flag: "--route",
        value: "heads",
        what: "predict next type/gap with the auxiliary linear heads (default)",
    },
    Row {
        flag: "--route",
        value: "mbr",
        what: "predict next time by intensity quadrature, type by intensity argmax",
    },
];

pub fn run() -> Result<()> {
    let flag_w = ROWS.iter().map(|r| r.flag.len()).max().unwrap_or(0);
    let val_w = ROWS.iter().map(|r| r.value.len()).max().unwrap_or(0);
    let mut table = String::new();
    table.push_str(&format!(
        "{:<flag_w$}  {:<val_w$}  {}\n",
        "flag", "value", "effect"
    ));
    table.push_str(&format!("{:-<flag_w$}  {:-<val_w$}  {:-<6}\n", "", "", ""));
    for row in ROWS {
        table.push_str(&format!(
            "{:<flag_w$}  {:<val_w$}  {}\n",
            row.flag, row.value, row.what
        ));
    }
    table.push_str("\nAll flags apply to `train`; --route also works on `eval` and `predict`.");
    emit_stdout(&table);
    Ok(())
}
