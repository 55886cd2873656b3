use std::fs;
use std::path::Path;
use std::process::{Command, Output};

use opensql::gateway::ReplayStore;
use rusqlite::Connection;
use serde_json::json;

const MODEL: &str = "fixture-model";

fn opensql(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_opensql"))
        .args(args)
        .env_remove("OPENSQL_ENDPOINT_URL")
        .env_remove("OPENSQL_MODEL")
        .env_remove("OPENSQL_API_KEY")
        .env_remove("OPENSQL_EMBEDDING_URL")
        .output()
        .unwrap()
}

fn stdout(output: &Output) -> String {
    assert!(output.status.success(), "stderr: {}", String::from_utf8_lossy(&output.stderr));
    String::from_utf8(output.stdout.clone()).unwrap()
}

fn benchmark(root: &Path) {
    let dir = root.join("databases/shop");
    fs::create_dir_all(dir.join("database_description")).unwrap();
    let conn = Connection::open(dir.join("shop.sqlite")).unwrap();
    conn.execute_batch(
        "CREATE TABLE items (ItemId int PRIMARY KEY, Label text, Price real);
         INSERT INTO items VALUES (1, 'pen', 1.5), (2, 'book', 12.0), (3, 'lamp', 30.0);",
    )
    .unwrap();
    fs::write(
        dir.join("database_description/items.csv"),
        "original_column_name,column_name,column_description,data_format,value_description\n\
         Label,,item name,text,\n\
         Price,,price in euros,real,\n",
    )
    .unwrap();
    let questions = json!([
        {"question_id": 0, "db_id": "shop", "question": "How many items are there?", "evidence": "",
         "SQL": "SELECT COUNT(*) FROM items", "difficulty": "simple"},
        {"question_id": 1, "db_id": "shop", "question": "Which item costs the most?", "evidence": "",
         "SQL": "SELECT Label FROM items ORDER BY Price DESC LIMIT 1", "difficulty": "moderate"},
    ]);
    fs::write(root.join("dev.json"), questions.to_string()).unwrap();
}

#[test]
fn ingest_check_reports_the_database() {
    let dir = tempfile::tempdir().unwrap();
    benchmark(dir.path());
    let root = dir.path().to_str().unwrap();
    let text = stdout(&opensql(&["ingest-check", "--benchmark-root", root]));
    assert!(text.contains('2'), "{text}");
}

#[test]
fn serialize_schema_writes_nine_variants() {
    let dir = tempfile::tempdir().unwrap();
    benchmark(dir.path());
    let out = dir.path().join("out");
    let root = dir.path().to_str().unwrap();
    stdout(&opensql(&["serialize-schema", "--benchmark-root", root, "--output-dir", out.to_str().unwrap()]));
    assert_eq!(fs::read_dir(out.join("schemas/shop")).unwrap().count(), 9);
    let full = fs::read_to_string(out.join("schemas/shop/C_A.txt")).unwrap();
    assert!(full.contains("price in euros"), "{full}");
}

#[test]
fn replayed_run_scores_and_reports() {
    let dir = tempfile::tempdir().unwrap();
    let bench = dir.path().join("bench");
    benchmark(&bench);
    let root = bench.to_str().unwrap();
    let store_path = dir.path().join("store.jsonl");
    let store = ReplayStore::open(&store_path).unwrap();
    for (id, answer) in [("0", " COUNT(ItemId) FROM items"), ("1", " Label FROM items ORDER BY Price ASC LIMIT 1")] {
        let prompt = stdout(&opensql(&["build-prompt", "--benchmark-root", root, "--model", MODEL, "--question-id", id]));
        assert!(prompt.ends_with("SELECT"), "{prompt}");
        store.insert_completion(MODEL, &prompt, answer).unwrap();
    }
    drop(store);

    let out = dir.path().join("out");
    let args = [
        "run",
        "--benchmark-root",
        root,
        "--model",
        MODEL,
        "--gateway-mode",
        "replay",
        "--replay-store",
        store_path.to_str().unwrap(),
        "--output-dir",
        out.to_str().unwrap(),
    ];
    stdout(&opensql(&args));
    let report: serde_json::Value = serde_json::from_str(&fs::read_to_string(out.join("report.json")).unwrap()).unwrap();
    assert_eq!(report["ex_by_split"]["sum"], 50.0);
    assert_eq!(report["ex_by_split"]["simple"], 100.0);
    assert_eq!(report["ex_by_split"]["moderate"], 0.0);

    let printed = stdout(&opensql(&["report", out.join("report.json").to_str().unwrap()]));
    assert!(printed.contains("50.00"), "{printed}");
}

#[test]
fn invalid_configuration_exits_with_failure() {
    let dir = tempfile::tempdir().unwrap();
    benchmark(dir.path());
    let root = dir.path().to_str().unwrap();
    let output = opensql(&["run", "--benchmark-root", root, "--shots", "2"]);
    assert!(!output.status.success());
    assert!(String::from_utf8_lossy(&output.stderr).contains("error"));

    let output = opensql(&["run", "--benchmark-root", root, "--gateway-mode", "replay"]);
    assert!(!output.status.success());
}

#[test]
fn config_file_fields_are_overridden_by_flags() {
    let dir = tempfile::tempdir().unwrap();
    benchmark(dir.path());
    let config = dir.path().join("run.toml");
    fs::write(&config, format!("benchmark_root = {:?}\nsplit = \"missing\"\n", dir.path().to_str().unwrap())).unwrap();
    let cfg = config.to_str().unwrap();
    assert!(!opensql(&["ingest-check", "--config", cfg]).status.success());
    stdout(&opensql(&["ingest-check", "--config", cfg, "--split", "dev"]));
}
