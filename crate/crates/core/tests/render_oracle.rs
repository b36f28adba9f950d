mod common;

use tpa3d::render::{mask_iou, RenderSettings};

#[test]
fn sphere_area_and_sharpness() {
    common::render_oracle().assert();
}

#[test]
fn area_holds_across_radii_and_sample_counts() {
    for (radius, samples) in [(0.5, 16), (0.5, 32), (0.7, 16), (0.7, 64)] {
        let err = common::sphere_area_error(radius, 64, &RenderSettings { samples, ..RenderSettings::default() }).unwrap();
        assert!(err < 0.05, "radius {radius} samples {samples}: {err}");
    }
}

#[test]
fn iou_of_a_render_with_itself_is_one() {
    let v = common::sphere_view(0.5, 32, &RenderSettings::default()).unwrap();
    assert_eq!(mask_iou(v.mask.data(), v.mask.data()), 1.0);
    let smaller = common::sphere_view(0.35, 32, &RenderSettings::default()).unwrap();
    let iou = mask_iou(v.mask.data(), smaller.mask.data());
    assert!((iou - 0.49).abs() < 0.08, "{iou}");
}
