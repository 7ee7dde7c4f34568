//! The shipped fixture must equal the procedural generator's output.
//! Set `RAYCAL_REGENERATE_FIXTURE=1` to rewrite the file.

use raycal::lens_db::{synthetic_fixture, LensDatabase, BUNDLED_FIXTURE};

#[test]
fn shipped_fixture_matches_generator() {
    let generated = LensDatabase::new(synthetic_fixture().unwrap())
        .unwrap()
        .to_jsonl()
        .unwrap();
    if std::env::var_os("RAYCAL_REGENERATE_FIXTURE").is_some() {
        let path = concat!(env!("CARGO_MANIFEST_DIR"), "/data/lens_fixture.jsonl");
        std::fs::write(path, &generated).unwrap();
        return;
    }
    assert!(
        BUNDLED_FIXTURE == generated,
        "data/lens_fixture.jsonl is stale; regenerate it"
    );
}

#[test]
fn shipped_fixture_loads_twelve_records() {
    let path = concat!(env!("CARGO_MANIFEST_DIR"), "/data/lens_fixture.jsonl");
    let db = raycal::lens_db::load_database(path).unwrap();
    assert_eq!(db.len(), 12);
}
