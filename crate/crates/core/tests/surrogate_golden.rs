use texcamo_core::{Image, Surrogate};

const GOLDEN_SCORE: f64 = 0.23594997816413457;

fn golden_image() -> Image {
    Image::read_ppm(concat!(env!("CARGO_MANIFEST_DIR"), "/tests/data/golden32.ppm")).unwrap()
}

#[test]
fn shipped_image_scores_golden_value() {
    let img = golden_image();
    assert_eq!(img.dims(), (32, 32));
    let score = Surrogate::new(42).score(&img).unwrap();
    assert!(
        (score - GOLDEN_SCORE).abs() <= 1e-12 * GOLDEN_SCORE,
        "score {score:?} drifted from {GOLDEN_SCORE:?}"
    );
}

#[test]
fn golden_forward_backward_repeatable() {
    let img = golden_image();
    let s = Surrogate::new(42);
    let (a, ca) = s.forward(&img).unwrap();
    let (b, cb) = s.forward(&img).unwrap();
    assert_eq!(a.to_bits(), b.to_bits());
    let ga = s.backward(&ca).unwrap();
    let gb = s.backward(&cb).unwrap();
    assert!(ga.data.iter().zip(&gb.data).all(|(x, y)| x.to_bits() == y.to_bits()));
}

#[test]
fn other_seed_scores_differently() {
    let img = golden_image();
    assert_ne!(Surrogate::new(43).score(&img).unwrap(), GOLDEN_SCORE);
}
