//! Sliding windows over a time-ordered matrix with majority-vote labels,
//! device context, and the seeded cap.

use bridge::ingest::CanonicalMatrix;
use bridge::vocab::SLOT_COUNT;
use bridge::windows::{build_windows, cap_windows, majority_label, window_count, WindowConfig, WindowSet};

pub fn run_example() -> bridge::Result<WindowSet> {
    // 100 rows: benign except an attack burst on rows 40..57.
    let labels: Vec<u8> = (0..100).map(|r| (40..57).contains(&r) as u8).collect();
    let matrix = CanonicalMatrix {
        dataset_id: 1,
        values: (0..100 * SLOT_COUNT).map(|v| (v % 97) as f32).collect(),
        labels,
        sanitation_count: 0,
    };
    let mut cfg = WindowConfig::default();
    cfg.device_category_map.insert(1, 4);
    let ws = build_windows(&matrix, &cfg)?;
    println!("{} windows (expected {})", ws.len(), window_count(100, 32, 4));
    for (i, o) in ws.origins.iter().enumerate().step_by(3) {
        println!("  window {i:>2} rows {:>2}..{:>3} label {}", o.start_row, o.start_row + 32, ws.labels[i]);
    }
    println!("context of window 0: {:?}", ws.contexts[0]);

    let mut tie = vec![0u8; 16];
    tie.extend([1u8; 16]);
    println!("16/32 attack rows vote {}, 17/32 vote {}", majority_label(&tie), majority_label(&[&tie[..], &[1]].concat()[1..]));

    let capped = cap_windows(&ws, 5, 11);
    println!("capped to {}: starts {:?}", capped.len(), capped.origins.iter().map(|o| o.start_row).collect::<Vec<_>>());
    Ok(ws)
}

fn main() {
    run_example().expect("windowing example");
}
