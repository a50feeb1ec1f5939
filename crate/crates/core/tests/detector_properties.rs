use proptest::prelude::*;
use sls_core::detection::blob::reference_blob_detect;
use sls_core::detection::synth::{render_marker_frame, Background, MarkerStyle};
use sls_core::detection::BlobParams;

const W: u32 = 160;
const H: u32 = 120;

fn detect_at(cx: f64, cy: f64, r: f64, bg: &Background) -> Option<(f64, f64)> {
    let frame = render_marker_frame(W, H, Some((cx, cy, r)), bg, &MarkerStyle::default());
    reference_blob_detect(&frame, &BlobParams::default()).map(|d| (d.center_x, d.center_y))
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(200))]

    #[test]
    fn integer_translation_moves_detection_equally(
        cx in 30.0..80.0f64,
        cy in 30.0..60.0f64,
        dx in -20i32..40,
        dy in -20i32..40,
        r in 4.0..12.0f64,
    ) {
        let bg = Background::plain([70, 70, 70]);
        let (ax, ay) = detect_at(cx, cy, r, &bg).expect("marker found");
        let (bx, by) = detect_at(cx + f64::from(dx), cy + f64::from(dy), r, &bg).expect("shifted marker found");
        prop_assert!((bx - ax - f64::from(dx)).abs() <= 0.1);
        prop_assert!((by - ay - f64::from(dy)).abs() <= 0.1);
    }

    #[test]
    fn centroid_error_small_across_scales(
        r in 4.0..40.0f64,
        fx in 0.0..1.0f64,
        fy in 0.0..1.0f64,
    ) {
        let bg = Background::plain([60, 60, 60]);
        let cx = 45.0 + fx * 70.0;
        let cy = 45.0 + fy * 30.0;
        let (x, y) = detect_at(cx, cy, r, &bg).expect("marker found");
        prop_assert!(((x - cx).powi(2) + (y - cy).powi(2)).sqrt() <= 0.5, "r={r} got ({x},{y}) want ({cx},{cy})");
    }

    #[test]
    fn non_blue_scenes_have_no_detection(rgb in proptest::array::uniform3(0u8..=255)) {
        let hsv = sls_core::detection::hsv::rgb_to_hsv(rgb);
        prop_assume!(!(200.0..260.0).contains(&hsv.hue) || hsv.saturation < 0.45 || hsv.value < 0.25);
        let frame = render_marker_frame(W, H, None, &Background::plain(rgb), &MarkerStyle::default());
        prop_assert!(reference_blob_detect(&frame, &BlobParams::default()).is_none());
    }
}

#[test]
fn textured_background_does_not_disturb_centroid() {
    let bg = Background::Textured {
        seed: 11,
        a: [150, 70, 60],
        b: [210, 170, 140],
        cell: 18.0,
    };
    let (x, y) = detect_at(77.3, 52.8, 8.0, &bg).unwrap();
    assert!((x - 77.3).abs() < 0.5 && (y - 52.8).abs() < 0.5);
}
