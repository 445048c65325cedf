//! Re-runs the calibration pilots and prints the resulting file.
//!
//! `cargo run --release -p torsionlab --example calibrate > crates/core/calibration.json`

use torsionlab::calibration::{recalibrate, Calibration};

fn main() {
    let base = Calibration::builtin();
    let fresh = recalibrate(&base).expect("pilot runs succeed");
    println!("{}", serde_json::to_string_pretty(&fresh).expect("serializable"));
}
