#[test]
fn dbg_f64_roundtrip() {
    // Mirror the golden fixture's q02 second-candidate probability path.
    use rand::{RngExt, SeedableRng};
    let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(0x601d);
    let mut worst: Option<(f64, String, f64)> = None;
    for _ in 0..100000 {
        let p: f64 = rng.random_range(0.10..0.90);
        let lp = p.ln();
        let json = serde_json::to_string(&lp).unwrap();
        let back: f64 = serde_json::from_str(&json).unwrap();
        if back.to_bits() != lp.to_bits() {
            worst = Some((lp, json.clone(), back));
            break;
        }
    }
    if let Some((lp, json, back)) = worst {
        panic!("drift: {lp:?} ({:x}) -> {json} -> {back:?} ({:x})", lp.to_bits(), back.to_bits());
    }
}
