//! Generate a dataset, write it as CSV, and reload it bit-exactly.
//!
//! ```text
//! cargo run --example dataset_io
//! ```

use msrs_lab::tasks::{gen_teacher_regression, load_csv, save_csv, TargetKind, TeacherSpec};

fn main() {
    let ds = gen_teacher_regression(
        21,
        8,
        3,
        &TeacherSpec {
            d_out: 1,
            ..TeacherSpec::default()
        },
    )
    .expect("generator runs");

    let path = std::env::temp_dir().join("msrs_lab_example_dataset.csv");
    save_csv(&ds, &path).expect("csv written");
    println!("wrote {} rows to {}", ds.len(), path.display());
    for line in std::fs::read_to_string(&path).unwrap().lines().take(3) {
        println!("  {line}");
    }

    let back = load_csv(&path, 3, TargetKind::Regression, false).expect("csv parsed");
    println!(
        "reload bit-exact: {}",
        back.inputs == ds.inputs && back.targets == ds.targets
    );
}
