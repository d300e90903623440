use graspda::datapipe::{
    collect_indiscriminate, read_dataset, read_dataset_bytes, write_dataset, write_dataset_bytes, CollectConfig,
    CollectPolicy, DataError,
};
use graspda::simenv::Domain;

#[test]
fn thousand_random_episodes_roundtrip() {
    let cfg = CollectConfig {
        height: 16,
        width: 16,
        ..Default::default()
    };
    let ds = collect_indiscriminate(CollectPolicy::Random, 1000, Domain::RealProxy, 7, &cfg).unwrap();
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("real.gad");
    write_dataset(&ds, &path).unwrap();
    let back = read_dataset(&path).unwrap();
    assert_eq!(back, ds);
    let bytes = std::fs::read(&path).unwrap();
    assert_eq!(write_dataset_bytes(&back).unwrap(), bytes);

    // every strict prefix past the magic is rejected as truncated
    for cut in (7..bytes.len()).step_by(bytes.len() / 97) {
        match read_dataset_bytes(&bytes[..cut]) {
            Err(DataError::Truncated(_)) | Err(DataError::BadMagic) => {}
            other => panic!("cut {cut}: {other:?}"),
        }
    }
}
