use std::time::Duration;

use sls_core::detection::dataset::{
    generate_dataset, load_manifest, read_png, DatasetRequest, Split,
};
use sls_core::detection::eval::{evaluate_detector, EvalOptions};
use sls_core::detection::external::DetectorServer;
use sls_core::detection::{BlobDetector, DetectorSpec, ExternalDetector, MarkerDetector};

fn small() -> DatasetRequest {
    DatasetRequest {
        train: 6,
        test: 4,
        validation: 5,
        negatives: 4,
        width: 160,
        height: 120,
    }
}

#[test]
fn manifest_survives_reload_and_images_match_ground_truth() {
    let dir = tempfile::tempdir().unwrap();
    let written = generate_dataset(dir.path(), 5, &small()).unwrap();
    let loaded = load_manifest(dir.path()).unwrap();
    assert_eq!(written, loaded);
    assert_eq!(loaded.total, 15);
    assert_eq!(loaded.count(Split::Negative), 4);

    let mut detector = BlobDetector::default();
    for gt in loaded.split(Split::Validation) {
        let frame = read_png(&dir.path().join(&gt.path)).unwrap();
        assert_eq!((frame.width(), frame.height()), (160, 120));
        let m = gt.marker.expect("validation images carry a marker");
        let d = detector.detect(&frame).unwrap().expect("marker detected");
        assert!(((d.center_x - m.cx).powi(2) + (d.center_y - m.cy).powi(2)).sqrt() < 1.5);
    }
}

#[test]
fn same_seed_same_bytes() {
    let a = tempfile::tempdir().unwrap();
    let b = tempfile::tempdir().unwrap();
    let ma = generate_dataset(a.path(), 9, &small()).unwrap();
    generate_dataset(b.path(), 9, &small()).unwrap();
    for gt in &ma.entries {
        let x = std::fs::read(a.path().join(&gt.path)).unwrap();
        let y = std::fs::read(b.path().join(&gt.path)).unwrap();
        assert_eq!(x, y, "{}", gt.path);
    }
}

#[test]
fn evaluation_reports_recall_and_no_false_positives() {
    let dir = tempfile::tempdir().unwrap();
    let manifest = generate_dataset(dir.path(), 21, &small()).unwrap();
    let spec = DetectorSpec::default();
    let val = evaluate_detector(
        &spec,
        dir.path(),
        &manifest,
        Split::Validation,
        EvalOptions::default(),
    )
    .unwrap();
    assert_eq!(val.images, 5);
    assert_eq!(val.recall, 1.0);
    assert!(val.mean_centroid_error_px <= 1.5);
    let neg = evaluate_detector(
        &spec,
        dir.path(),
        &manifest,
        Split::Negative,
        EvalOptions::default(),
    )
    .unwrap();
    assert_eq!(neg.marker_images, 0);
    assert_eq!(neg.false_positives, 0);
}

#[test]
fn external_detector_matches_in_process_detector() {
    let dir = tempfile::tempdir().unwrap();
    let manifest = generate_dataset(dir.path(), 3, &small()).unwrap();
    let server = DetectorServer::spawn("127.0.0.1:0", BlobDetector::default).unwrap();
    let spec = DetectorSpec::External {
        endpoint: server.local_addr().to_string(),
        timeout_ms: 2_000,
    };
    let remote = evaluate_detector(
        &spec,
        dir.path(),
        &manifest,
        Split::Test,
        EvalOptions::default(),
    )
    .unwrap();
    let local = evaluate_detector(
        &DetectorSpec::default(),
        dir.path(),
        &manifest,
        Split::Test,
        EvalOptions::default(),
    )
    .unwrap();
    assert_eq!(remote, local);
}

#[test]
fn external_detector_reports_unreachable_endpoint() {
    let listener = std::net::TcpListener::bind("127.0.0.1:0").unwrap();
    let addr = listener.local_addr().unwrap();
    drop(listener);
    let mut d = ExternalDetector::new(addr.to_string(), Duration::from_millis(200));
    let frame = sls_core::Frame::filled(8, 8, [0, 0, 0], 0);
    assert!(d.detect(&frame).is_err());
}
