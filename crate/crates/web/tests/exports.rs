use detkit_web::{anchor_layout, compare_suppression, crowded_scene, DEMO_SIZE};
use serde_json::Value;

fn parse(s: Result<String, String>) -> Value {
    serde_json::from_str(&s.unwrap()).unwrap()
}

#[test]
fn scene_is_seeded() {
    let a = crowded_scene(4, 0.6, 1.5).unwrap();
    assert_eq!(a, crowded_scene(4, 0.6, 1.5).unwrap());
    let v: Value = serde_json::from_str(&a).unwrap();
    assert_eq!(v["width"], DEMO_SIZE);
    assert_eq!(v["objects"].as_array().unwrap().len(), 20);
    assert!(v["detections"].as_array().unwrap().len() >= 20);
}

#[test]
fn soft_keeps_at_least_as_many() {
    let v = parse(compare_suppression(1, 0.8, 1.0, 0.5));
    let (hard, soft) = (&v["hard"], &v["soft"]);
    assert!(soft["kept"].as_array().unwrap().len() >= hard["kept"].as_array().unwrap().len());
    assert!(hard["ap"].as_f64().unwrap() <= 1.0);
}

#[test]
fn bad_inputs_are_reported() {
    assert!(compare_suppression(1, 0.5, 1.0, 1.5).is_err());
    assert!(crowded_scene(1, 2.0, 1.0).is_err());
    assert!(anchor_layout(100, 100, "a9").is_err());
}

#[test]
fn anchor_layout_counts() {
    let v = parse(anchor_layout(800, 800, "a2"));
    let levels = v.as_array().unwrap();
    assert_eq!(levels.len(), 5);
    assert_eq!(levels[0]["size"], 8.0);
    assert_eq!(levels[0]["count"], 200 * 200 * 3);
    assert_eq!(levels[0]["center_cell"].as_array().unwrap().len(), 3);
}
