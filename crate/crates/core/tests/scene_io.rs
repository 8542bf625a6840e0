mod support;

use nalgebra::Vector3;
use proptest::prelude::*;
use splatcost::scene::{load_dataset, save_dataset, View};
use splatcost::{CameraPose, Dataset, Image};

fn dataset_from(poses: Vec<(Vector3<f64>, f64)>, pixels: &[u8], w: usize, h: usize) -> Dataset {
    let views = poses
        .into_iter()
        .enumerate()
        .map(|(k, (eye, focal))| {
            let data = (0..w * h * 3).map(|i| pixels[(i + 7 * k) % pixels.len()] as f64 / 255.0).collect();
            View {
                image: Image::from_data(w, h, data).unwrap(),
                pose: CameraPose::look_at(eye, Vector3::zeros(), Vector3::new(0.0, -1.0, 0.0), focal, w, h),
            }
        })
        .collect();
    Dataset::new("prop", views).unwrap()
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(24))]
    #[test]
    fn save_load_round_trip(
        eyes in prop::collection::vec((-5.0..5.0f64, -5.0..5.0f64, 1.0..5.0f64), 1..4),
        focal in 10.0..80.0f64,
        pixels in prop::collection::vec(any::<u8>(), 1..64),
        w in 16usize..24,
        h in 16usize..24,
    ) {
        let poses = eyes.into_iter().map(|(x, y, z)| (Vector3::new(x, y, z), focal)).collect();
        let ds = dataset_from(poses, &pixels, w, h);
        let dir = tempfile::tempdir().unwrap();
        save_dataset(&ds, dir.path()).unwrap();
        let back = load_dataset(dir.path()).unwrap();
        prop_assert_eq!(back.len(), ds.len());
        for (a, b) in ds.views.iter().zip(&back.views) {
            prop_assert_eq!(a.image.to_bytes(), b.image.to_bytes());
            prop_assert!((a.pose.world_to_camera - b.pose.world_to_camera).abs().max() < 1e-6);
            prop_assert!((a.pose.fx - b.pose.fx).abs() < 1e-6);
            prop_assert_eq!((a.pose.width, a.pose.height), (b.pose.width, b.pose.height));
        }
    }
}

#[test]
fn identity_transform_gives_expected_focal() {
    let dir = tempfile::tempdir().unwrap();
    std::fs::create_dir(dir.path().join("train")).unwrap();
    splatcost::scene::write_png(&dir.path().join("train/a.png"), &Image::filled(64, 64, [0.5; 3])).unwrap();
    let json = serde_json::json!({
        "camera_angle_x": std::f64::consts::FRAC_PI_2,
        "frames": [{ "file_path": "./train/a", "transform_matrix": [[1,0,0,0],[0,1,0,0],[0,0,1,0],[0,0,0,1]] }]
    });
    std::fs::write(dir.path().join("transforms.json"), json.to_string()).unwrap();
    let ds = load_dataset(dir.path()).unwrap();
    assert!((ds.views[0].pose.fx - 32.0).abs() < 1e-12);
    assert_eq!(ds.views[0].image.to_bytes()[0], 128);
    // file looks down −z; internally the camera looks down +z
    assert!((ds.views[0].pose.forward() - Vector3::new(0.0, 0.0, -1.0)).norm() < 1e-12);
}

#[test]
fn zero_frames_is_an_error() {
    let dir = tempfile::tempdir().unwrap();
    std::fs::write(dir.path().join("transforms.json"), r#"{"camera_angle_x": 0.7, "frames": []}"#).unwrap();
    assert!(load_dataset(dir.path()).is_err());
}
