use apan::events::{batches, parse_jodie_csv, split_chronological, write_jodie_csv, TemporalAdjacency};
use apan::ApanError;
use proptest::prelude::*;

type Row = (usize, usize, f64, Option<bool>, Vec<f64>);

fn csv_text(rows: &[Row]) -> String {
    let mut out = String::from("user_id,item_id,timestamp,state_label,features\n");
    for (u, i, t, label, feat) in rows {
        let label = match label {
            None => String::new(),
            Some(b) => (*b as u8).to_string(),
        };
        out.push_str(&format!("{u},{i},{t},{label}"));
        for f in feat {
            out.push_str(&format!(",{f}"));
        }
        out.push('\n');
    }
    out
}

fn rows_strategy() -> impl Strategy<Value = Vec<Row>> {
    (0usize..4).prop_flat_map(|d| {
        prop::collection::vec(
            (
                0usize..12,
                0usize..9,
                0.0f64..5.0,
                prop::option::of(any::<bool>()),
                prop::collection::vec(-1e3f64..1e3, d..=d),
            ),
            1..60,
        )
        .prop_map(|mut rows| {
            let mut t = 0.0;
            for r in rows.iter_mut() {
                t += r.2;
                r.2 = t;
            }
            rows
        })
    })
}

proptest! {
    #[test]
    fn parse_serialize_parse_is_identity(rows in rows_strategy()) {
        let first = parse_jodie_csv(csv_text(&rows).as_bytes()).unwrap();
        let text = write_jodie_csv(&first).unwrap();
        let second = parse_jodie_csv(text.as_bytes()).unwrap();
        prop_assert_eq!(&first, &second);
        let users = rows.iter().map(|r| r.0).max().unwrap() + 1;
        prop_assert_eq!(first.num_users(), Some(users));
        for (ev, row) in first.events().iter().zip(&rows) {
            prop_assert_eq!(ev.src, row.0);
            prop_assert_eq!(ev.dst, row.1 + users);
            prop_assert_eq!(ev.timestamp, row.2);
            prop_assert_eq!(&ev.edge_feat, &row.4);
        }
    }

    #[test]
    fn split_ranges_partition_the_log(len in 3usize..5000, train in 0.05f64..0.8, val in 0.05f64..0.15) {
        let rows: Vec<_> = (0..len).map(|k| (k % 5, k % 3, k as f64, None, vec![])).collect();
        let log = parse_jodie_csv(csv_text(&rows).as_bytes()).unwrap();
        let s = split_chronological(&log, train, val).unwrap();
        prop_assert_eq!(s.train.start, 0);
        prop_assert_eq!(s.train.end, s.val.start);
        prop_assert_eq!(s.val.end, s.test.start);
        prop_assert_eq!(s.test.end, len);
        prop_assert_eq!(s.train.end, (train * len as f64).floor() as usize);
    }

    #[test]
    fn batches_cover_the_range(start in 0usize..100, len in 0usize..500, size in 1usize..64) {
        let got: Vec<_> = batches(start..start + len, size).unwrap().collect();
        let mut next = start;
        for (k, b) in got.iter().enumerate() {
            prop_assert_eq!(b.start, next);
            prop_assert!(b.len() == size || (k + 1 == got.len() && b.len() <= size && !b.is_empty()));
            next = b.end;
        }
        prop_assert_eq!(next, start + len);
    }

    #[test]
    fn adjacency_lists_stay_sorted(events in prop::collection::vec((0usize..6, 0usize..6, 0u8..3), 0..80)) {
        let mut adj = TemporalAdjacency::new(6);
        let mut t = 0.0;
        for (k, (a, b, dt)) in events.iter().enumerate() {
            t += *dt as f64;
            adj.record(*a, *b, t, k).unwrap();
        }
        for node in 0..6 {
            let h = adj.history(node);
            prop_assert!(h.windows(2).all(|w| w[0].timestamp <= w[1].timestamp));
        }
        prop_assert_eq!(adj.total_entries(), 2 * events.len());
    }
}

#[test]
fn single_prior_user_offsets_items() {
    let log = parse_jodie_csv("u,i,t,l,f1,f2\n0,0,1.0,0,0.5,0.5\n".as_bytes()).unwrap();
    let ev = &log.events()[0];
    assert_eq!((ev.src, ev.dst, ev.timestamp), (0, 1, 1.0));
    assert_eq!(ev.edge_feat, vec![0.5, 0.5]);
    assert_eq!(ev.label, Some(false));
}

#[test]
fn ragged_and_unordered_rows_name_the_line() {
    let ragged = "h\n0,0,1,0,0.1,0.2\n1,0,2,0,0.1,0.2,0.3\n";
    assert!(matches!(parse_jodie_csv(ragged.as_bytes()), Err(ApanError::Parse { line: 3, .. })));
    let backwards = "h\n0,0,5,0\n1,0,2,0\n";
    assert!(matches!(parse_jodie_csv(backwards.as_bytes()), Err(ApanError::Parse { line: 3, .. })));
}

#[test]
fn strict_cutoff_and_truncation() {
    let mut adj = TemporalAdjacency::new(3);
    adj.record(0, 1, 1.0, 0).unwrap();
    adj.record(0, 2, 2.0, 1).unwrap();
    adj.record(0, 1, 3.0, 2).unwrap();
    assert_eq!(adj.recent_neighbors(0, 2, 4.0), vec![(1, 3.0), (2, 2.0)]);
    assert_eq!(adj.recent_neighbors(0, 2, 2.0), vec![(1, 1.0)]);
    assert!(adj.recent_neighbors(2, 5, 1.0).is_empty());
}

#[test]
fn split_examples() {
    let rows: Vec<_> = (0..100).map(|k| (0, 0, k as f64, None, vec![])).collect();
    let log = parse_jodie_csv(csv_text(&rows).as_bytes()).unwrap();
    let s = split_chronological(&log, 0.7, 0.15).unwrap();
    assert_eq!((s.train, s.val, s.test), (0..70, 70..85, 85..100));
    let log = parse_jodie_csv(csv_text(&rows[..10]).as_bytes()).unwrap();
    assert_eq!(split_chronological(&log, 0.7, 0.15).unwrap().val, 7..8);
    assert!(split_chronological(&log, 0.9, 0.2).is_err());
    let sizes: Vec<usize> = batches(0..110_231, 200).unwrap().map(|r| r.len()).collect();
    assert_eq!(sizes.len(), 552);
}
