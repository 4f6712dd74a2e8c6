//! The JSON report layout is a published interface: its key set is pinned.

use std::collections::BTreeSet;

use serde_json::Value;

use fhenav::harness::{self, RunConfig, REPORT_SCHEMA};
use fhenav::layers::ArchConfig;

fn keys(v: &Value, prefix: &str, out: &mut BTreeSet<String>) {
    match v {
        Value::Object(map) => {
            for (k, child) in map {
                let path = if prefix.is_empty() { k.clone() } else { format!("{prefix}.{k}") };
                out.insert(path.clone());
                keys(child, &path, out);
            }
        }
        Value::Array(items) => {
            for item in items {
                keys(item, &format!("{prefix}[]"), out);
            }
        }
        _ => {}
    }
}

#[test]
fn report_keys_match_golden() {
    let arch = ArchConfig {
        frame_height: 16,
        frame_width: 16,
        row_slots: 64,
        grid_rows: 16,
        conv_channels: vec![1, 2, 2, 2],
        strides: vec![2, 2, 1],
        ..ArchConfig::default()
    };
    let config = RunConfig { arch, n_inputs: 2, blocks: vec!["linear3".into(), "head".into()], ..RunConfig::default() };
    let report = harness::run(&config).unwrap();
    assert_eq!(report.schema, REPORT_SCHEMA);
    let json: Value = serde_json::from_str(&report.to_json().unwrap()).unwrap();
    let mut found = BTreeSet::new();
    keys(&json, "", &mut found);
    let golden: BTreeSet<String> =
        include_str!("golden/report_keys.txt").lines().filter(|l| !l.is_empty()).map(String::from).collect();
    assert_eq!(found, golden);
}
