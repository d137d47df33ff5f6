use mriseg_web::{routes_to_segmenter, Demo, SIDE};

#[test]
fn buffers_have_canvas_sizes() {
    let demo = Demo::new(3, "ellipse").unwrap();
    assert_eq!(demo.image_rgba().len(), SIDE * SIDE * 4);
    assert_eq!(demo.mask_rgba().len(), SIDE * SIDE * 4);
    assert_eq!(demo.uncertainty_rgba().unwrap().len(), SIDE * SIDE * 4);
    assert_eq!(demo.overlay_rgba().unwrap().len(), (5 * SIDE + 4) * SIDE * 4);
    assert!(demo.image_rgba().chunks(4).all(|p| p[3] == 255));
}

#[test]
fn training_improves_the_sample_fit() {
    let mut demo = Demo::new(7, "rectangle").unwrap();
    let first = demo.train(1).unwrap();
    let later = demo.train(15).unwrap();
    assert_eq!(demo.epochs_done(), 16);
    assert!(later > first, "train dice {first} -> {later}");
    demo.sample(2, "rectangle").unwrap();
    assert!((0.0..=1.0).contains(&demo.dice().unwrap()));
}

#[test]
fn gate_matches_router() {
    let demo = Demo::new(1, "blob").unwrap();
    assert_eq!(demo.route(0.005, 0.99).unwrap(), 0);
    assert_ne!(demo.route(0.5, 0.99).unwrap(), 0);
    for p in [0.0, 0.005, 0.01, 0.3, 0.5, 0.99, 1.0] {
        for g in [0.0, 0.5, 0.99, 1.0] {
            assert_eq!(routes_to_segmenter(p, g), demo.route(p, g).unwrap() != 0, "p {p} gate {g}");
        }
    }
}
