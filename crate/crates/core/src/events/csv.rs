//! JODIE-style interaction CSV.
//!
//! Layout: one header line (ignored), then
//! `user_id,item_id,timestamp,state_label,f_1,...,f_{d_e}` per row. Users and
//! items share one id space after remapping `item := item_id + max_user_id + 1`.

use std::fmt::Write as _;
use std::io::BufRead;

use super::{EventLog, TemporalEvent};
use crate::error::{ApanError, Result};

struct Row {
    line: usize,
    user: usize,
    item: usize,
    timestamp: f64,
    label: Option<bool>,
    feat: Vec<f64>,
}

fn parse_err(line: usize, message: impl Into<String>) -> ApanError {
    ApanError::Parse {
        line,
        message: message.into(),
    }
}

fn parse_row(line_no: usize, line: &str) -> Result<Row> {
    let mut fields = line.split(',');
    let mut next = |what: &str| {
        fields
            .next()
            .ok_or_else(|| parse_err(line_no, format!("missing {what}")))
    };
    let user = next("user_id")?;
    let item = next("item_id")?;
    let ts = next("timestamp")?;
    let label = next("state_label")?;
    let user: usize = user
        .trim()
        .parse()
        .map_err(|_| parse_err(line_no, format!("bad user id `{user}`")))?;
    let item: usize = item
        .trim()
        .parse()
        .map_err(|_| parse_err(line_no, format!("bad item id `{item}`")))?;
    let timestamp: f64 = ts
        .trim()
        .parse()
        .map_err(|_| parse_err(line_no, format!("bad timestamp `{ts}`")))?;
    if !timestamp.is_finite() {
        return Err(parse_err(line_no, "non-finite timestamp"));
    }
    let label = match label.trim() {
        "" => None,
        "0" | "0.0" => Some(false),
        "1" | "1.0" => Some(true),
        other => return Err(parse_err(line_no, format!("bad label `{other}`"))),
    };
    let feat = fields
        .map(|f| {
            f.trim()
                .parse::<f64>()
                .map_err(|_| parse_err(line_no, format!("bad feature `{f}`")))
        })
        .collect::<Result<Vec<_>>>()?;
    Ok(Row {
        line: line_no,
        user,
        item,
        timestamp,
        label,
        feat,
    })
}

/// Parses a JODIE interaction file into a bipartite [`EventLog`].
pub fn parse_jodie_csv<R: BufRead>(reader: R) -> Result<EventLog> {
    let mut rows: Vec<Row> = Vec::new();
    let mut d_e: Option<usize> = None;
    for (idx, line) in reader.lines().enumerate() {
        let line = line?;
        let line_no = idx + 1;
        if idx == 0 {
            continue;
        }
        let line = line.trim_end_matches('\r');
        if line.trim().is_empty() {
            continue;
        }
        let row = parse_row(line_no, line)?;
        match d_e {
            None => d_e = Some(row.feat.len()),
            Some(d) if d != row.feat.len() => {
                return Err(parse_err(
                    line_no,
                    format!("expected {d} features, found {}", row.feat.len()),
                ))
            }
            Some(_) => {}
        }
        if let Some(prev) = rows.last() {
            if row.timestamp < prev.timestamp {
                return Err(parse_err(
                    line_no,
                    format!(
                        "timestamp {} precedes {} on line {}",
                        row.timestamp, prev.timestamp, prev.line
                    ),
                ));
            }
        }
        rows.push(row);
    }

    let num_users = rows.iter().map(|r| r.user + 1).max().unwrap_or(0);
    let num_items = rows.iter().map(|r| r.item + 1).max().unwrap_or(0);
    let events = rows
        .into_iter()
        .map(|r| TemporalEvent {
            src: r.user,
            dst: r.item + num_users,
            edge_feat: r.feat,
            timestamp: r.timestamp,
            label: r.label,
        })
        .collect();
    EventLog::new(events, num_users + num_items, d_e.unwrap_or(0), Some(num_users))
}

/// Serializes a bipartite log back to the JODIE layout.
pub fn write_jodie_csv(log: &EventLog) -> Result<String> {
    let num_users = log.num_users().ok_or_else(|| {
        ApanError::InvalidArgument("JODIE layout needs a bipartite log".into())
    })?;
    let mut out = String::from("user_id,item_id,timestamp,state_label,comma_separated_list_of_features\n");
    for ev in log.events() {
        if ev.src >= num_users || ev.dst < num_users {
            return Err(ApanError::InvalidArgument(format!(
                "event {} -> {} crosses the user/item partition",
                ev.src, ev.dst
            )));
        }
        let label = match ev.label {
            None => "",
            Some(false) => "0",
            Some(true) => "1",
        };
        write!(out, "{},{},{},{}", ev.src, ev.dst - num_users, ev.timestamp, label).unwrap();
        for f in &ev.edge_feat {
            write!(out, ",{f}").unwrap();
        }
        out.push('\n');
    }
    Ok(out)
}

/// Sidecar written next to an ingested dataset.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct DatasetMeta {
    pub num_users: usize,
    pub num_items: usize,
    pub d_e: usize,
    pub num_events: usize,
}

impl DatasetMeta {
    pub fn of(log: &EventLog) -> Self {
        let num_users = log.num_users().unwrap_or(log.num_nodes());
        Self {
            num_users,
            num_items: log.num_nodes() - num_users,
            d_e: log.d_e(),
            num_events: log.len(),
        }
    }
}

pub fn write_metadata(meta: &DatasetMeta) -> String {
    format!(
        "num_users={}\nnum_items={}\nd_e={}\nnum_events={}\n",
        meta.num_users, meta.num_items, meta.d_e, meta.num_events
    )
}

pub fn parse_metadata(text: &str) -> Result<DatasetMeta> {
    let get = |key: &str| -> Result<usize> {
        let value = text
            .lines()
            .filter_map(|l| l.split_once('='))
            .find(|(k, _)| k.trim() == key)
            .map(|(_, v)| v.trim())
            .ok_or_else(|| ApanError::Config {
                key: key.into(),
                message: "missing".into(),
            })?;
        value.parse().map_err(|_| ApanError::Config {
            key: key.into(),
            message: format!("not an integer: `{value}`"),
        })
    };
    Ok(DatasetMeta {
        num_users: get("num_users")?,
        num_items: get("num_items")?,
        d_e: get("d_e")?,
        num_events: get("num_events")?,
    })
}
