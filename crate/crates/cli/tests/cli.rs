mod common;

use std::fs;

use common::*;

const LOGIC: &str = r#"{"Fields":{"dc.title":{"action":["copyData"]}}}"#;

fn bundle() -> Bundle {
    let b = Bundle::new();
    b.write("logic.json", LOGIC);
    b.sip_folder(
        "src",
        &[
            rec(&[("Handle_ID", "c/1"), ("dc.title", "One")]),
            rec(&[("Handle_ID", "c/2"), ("dc.title", "Two")]),
            rec(&[("Handle_ID", "c/3"), ("dc.title", "Three")]),
        ],
    );
    b.write("b.run.properties", "sourceData=src\nsourceType=SIP-FOLDER\ntargetData=out\nlogic=logic.json\n");
    b
}

#[test]
fn end_to_end_copy() {
    let b = bundle();
    let r = b.run("-c", "b.run.properties");
    assert_eq!(r.code, 0, "{}", r.stderr);
    let items = b.items("out");
    assert_eq!(items.len(), 3);
    assert_eq!(items["c_2"], render(&rec(&[("Handle_ID", "c/2"), ("dc.title", "Two")])));
}

#[test]
fn both_modes_rejected() {
    let b = bundle();
    let r = b.run_with_input(&["-c", "b.run.properties", "-h", "b.run.properties"], "");
    assert_eq!(r.code, 1);
    assert!(!b.path("out").exists());
}

#[test]
fn no_mode_rejected() {
    let b = bundle();
    assert_eq!(b.run_with_input(&["b.run.properties"], "").code, 1);
}

#[test]
fn missing_runfile_exits_1() {
    let b = bundle();
    assert_eq!(b.run("-c", "nope.run.properties").code, 1);
}

#[test]
fn missing_source_exits_1() {
    let b = bundle();
    fs::remove_dir_all(b.path("src")).unwrap();
    assert_eq!(b.run("-c", "b.run.properties").code, 1);
}

#[test]
fn malformed_item_exits_2() {
    let b = bundle();
    b.write("src/c_2/metadata.json", "[1, 2");
    assert_eq!(b.run("-c", "b.run.properties").code, 2);
}

#[test]
fn bad_logic_exits_1() {
    let b = bundle();
    b.write("logic.json", "{not json");
    assert_eq!(b.run("-c", "b.run.properties").code, 1);
}

#[test]
fn declining_schema_prompt_aborts() {
    let b = bundle();
    // handle format prompt, then the schema prompt
    let r = b.run_with_input(&["-c", "b.run.properties"], "yes\nno\n");
    assert_eq!(r.code, 1, "{}", r.stderr);
    assert!(r.stderr.contains("Schema file and type are not defined"));
    assert!(!b.path("out").exists());
}

#[test]
fn eof_counts_as_no() {
    let b = bundle();
    let r = b.run_with_input(&["-c", "b.run.properties"], "");
    assert_eq!(r.code, 1);
    assert!(!b.path("out").exists());
}

#[test]
fn interactive_yes_declines_csv() {
    let b = bundle();
    let r = b.run_with_input(&["-c", "b.run.properties"], "y\nyes\nyes\nno\n");
    assert_eq!(r.code, 0, "{}", r.stderr);
    assert!(r.stderr.contains("Matched #:0 UnMatched #:3"));
    assert!(r.stderr.contains("Report Destination:"));
    let report = fs::read_dir(b.path("data-report")).unwrap().next().unwrap().unwrap().path();
    assert!(report.join("summary.txt").is_file());
    assert!(!report.join("export.csv").exists());
}

#[test]
fn yes_flag_answers_everything() {
    let b = bundle();
    let r = b.run_with_input(&["-c", "b.run.properties", "--yes"], "");
    assert_eq!(r.code, 0, "{}", r.stderr);
    assert!(r.stderr.contains("Do you want a CSV of the data?"));
    let report = fs::read_dir(b.path("data-report")).unwrap().next().unwrap().unwrap().path();
    let csv = fs::read_to_string(report.join("export.csv")).unwrap();
    assert_eq!(csv.lines().count(), 4);
}

#[test]
fn quiet_suppresses_console() {
    let b = bundle();
    let r = b.run("-c", "b.run.properties");
    assert_eq!(r.code, 0);
    assert!(!r.stderr.contains("Matched #"), "{}", r.stderr);
}

#[test]
fn help_exits_0() {
    let b = bundle();
    assert_eq!(b.run_with_input(&["--help"], "").code, 0);
}
