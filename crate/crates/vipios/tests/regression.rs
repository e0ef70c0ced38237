mod common;

use vipios::regress;

fn all_pass(servers: u32) {
    let (_d, c) = common::cluster(servers, 16 * 1024);
    let results = regress::run(&c, &[]);
    assert_eq!(results.len(), regress::SUITES.len());
    let failed: Vec<String> = results
        .iter()
        .filter(|r| !r.passed)
        .map(|r| r.to_string())
        .collect();
    assert!(failed.is_empty(), "{servers} servers: {failed:#?}");
    c.shutdown().unwrap();
}

#[test]
fn suites_pass_on_one_server() {
    all_pass(1);
}

#[test]
fn suites_pass_on_two_servers() {
    all_pass(2);
}

#[test]
fn suites_pass_on_four_servers() {
    all_pass(4);
}

#[test]
fn selected_suites_only() {
    let (_d, c) = common::cluster(2, 64 * 1024);
    let r = regress::run(&c, &["rdwr".to_string(), "localpointer".to_string()]);
    let names: Vec<&str> = r.iter().map(|r| r.name).collect();
    assert_eq!(names, ["rdwr", "localpointer"]);
    assert!(r.iter().all(|r| r.passed), "{r:?}");
}
