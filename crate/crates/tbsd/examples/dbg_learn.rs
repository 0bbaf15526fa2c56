use tbsd::decompose::{low_rank_decompose, Image};
use tbsd::quasi_detect::{detect_directions, lsera_sample, DirectionRule, SamplingConfig};
use tbsd::simulate::{generate, SimSpec};
use tbsd::smooth_basis::SmoothBasis;

fn main() {
    for (name, spec) in [
        ("cross", SimSpec::default_cross(41)),
        ("one-dir-0", SimSpec::default_one_direction(0.0, 42)),
        ("one-dir-90", SimSpec::default_one_direction(90.0, 43)),
    ] {
        let data = generate(&spec).unwrap();
        let image: &Image = &data.image;
        let smooth = SmoothBasis::auto(image.height(), image.width()).unwrap();
        let dec = low_rank_decompose(image, &smooth, 0.1, 0.2, 1).unwrap();
        let samples = lsera_sample(&dec.texture, &SamplingConfig::for_image(image.height(), image.width())).unwrap();
        let dirs = detect_directions(&samples, 0.5, DirectionRule::ProfileStd).unwrap();
        let s = dirs.profile_std();
        println!("--- {name}: threshold {:.4}", dirs.threshold());
        for (k, v) in s.iter().enumerate() {
            let mark = if dirs.extension().iter().any(|e| (e - k as f64 * dirs.unit_angle()).abs() < 1e-9) { " <== ext peak" } else { "" };
            println!("  {:>3}deg std {:.4}{}", k * 5, v, mark);
        }
    }
}
