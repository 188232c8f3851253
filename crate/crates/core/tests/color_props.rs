use chromactl_core::color::{
    apply_modifier, color_distance, density_to_rgb, hsv_to_rgb, parse_color_literal, rgb_to_density, rgb_to_hsv,
};
use chromactl_core::{Color, Modifier};
use proptest::prelude::*;

fn unit() -> impl Strategy<Value = f64> {
    0.0..=1.0f64
}

fn color() -> impl Strategy<Value = Color> {
    (unit(), unit(), unit()).prop_map(|(r, g, b)| Color::new(r, g, b).unwrap())
}

/// Closed-form modifier results that never pass through HSV.
///
/// Scaling V multiplies every channel by the same factor. Scaling S by `t`
/// moves every channel toward the max: `c' = max - t * (max - c)`.
fn modifier_oracle(c: Color, m: Modifier) -> Color {
    let ch = c.channels();
    let max = ch.iter().cloned().fold(0.0, f64::max);
    let min = ch.iter().cloned().fold(1.0, f64::min);
    let out = match m {
        Modifier::Bright if max > 0.0 => ch.map(|x| x * (1.25f64).min(1.0 / max)),
        Modifier::Bright => ch,
        Modifier::Dark => ch.map(|x| x * 0.6),
        Modifier::Pale => ch.map(|x| max - 0.5 * (max - x)),
        Modifier::Deep => {
            let t = if max > min { 1.25f64.min(max / (max - min)) } else { 1.0 };
            ch.map(|x| max - t * (max - x))
        }
    };
    Color::clamped(out[0], out[1], out[2])
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(10_000))]

    #[test]
    fn density_round_trip(c in color()) {
        let back = density_to_rgb(rgb_to_density(c));
        prop_assert!(color_distance(c, back) <= 1e-12);
    }

    #[test]
    fn distance_is_a_metric(a in color(), b in color(), c in color()) {
        let ab = color_distance(a, b);
        prop_assert!(ab >= 0.0);
        prop_assert_eq!(ab, color_distance(b, a));
        prop_assert_eq!(color_distance(a, a), 0.0);
        prop_assert!(ab <= color_distance(a, c) + color_distance(c, b) + 1e-12);
        prop_assert!(ab <= 3f64.sqrt() + 1e-12);
    }

    #[test]
    fn modifiers_stay_in_cube_and_match_oracle(c in color(), i in 0usize..4) {
        let m = Modifier::ALL[i];
        let got = apply_modifier(c, m);
        prop_assert!(got.is_valid());
        let want = modifier_oracle(c, m);
        prop_assert!(color_distance(got, want) < 1e-9, "{m:?} {c:?}: {got:?} vs {want:?}");
    }

    #[test]
    fn pale_twice_quarters_saturation(c in color()) {
        let once = rgb_to_hsv(c);
        let twice = rgb_to_hsv(apply_modifier(apply_modifier(c, Modifier::Pale), Modifier::Pale));
        prop_assert!((twice.s - 0.25 * once.s).abs() < 1e-9);
    }

    #[test]
    fn hsv_round_trip(c in color()) {
        prop_assert!(color_distance(c, hsv_to_rgb(rgb_to_hsv(c))) < 1e-12);
    }

    #[test]
    fn literals_re_render(r: u8, g: u8, b: u8) {
        let c = Color::from_rgb8(r, g, b);
        prop_assert_eq!(parse_color_literal(&c.to_hex()).unwrap(), c);
        let functional = format!("rgb({r}, {g}, {b})");
        prop_assert_eq!(parse_color_literal(&functional).unwrap(), c);
        prop_assert_eq!(c.to_rgb8(), [r, g, b]);
    }
}

#[test]
fn modifier_oracle_on_known_points() {
    let orange = parse_color_literal("orange").unwrap();
    let bright = apply_modifier(orange, Modifier::Bright);
    assert!(color_distance(bright, Color::new(1.0, 0.647_058_823_529_411_8, 0.0).unwrap()) < 1e-12);
    let gray = parse_color_literal("gray").unwrap();
    let dark = apply_modifier(gray, Modifier::Dark);
    assert!((dark.r - 0.6 * 128.0 / 255.0).abs() < 1e-12);
    assert_eq!(apply_modifier(gray, Modifier::Pale), gray);
    assert_eq!(apply_modifier(Color::BLACK, Modifier::Bright), Color::BLACK);
}
