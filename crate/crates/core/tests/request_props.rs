use chromactl_core::color::{apply_modifier, parse_color_literal};
use chromactl_core::request::{color_names, parse_request, render_sentence, understand, SENTENCE_TEMPLATES};
use chromactl_core::{Color, Modifier};
use proptest::prelude::*;
use proptest::sample::{select, subsequence};

fn base() -> impl Strategy<Value = String> {
    let names: Vec<String> = color_names().map(str::to_string).collect();
    prop_oneof![
        8 => select(names),
        1 => any::<[u8; 3]>().prop_map(|[r, g, b]| format!("#{r:02x}{g:02x}{b:02x}")),
        1 => any::<[u8; 3]>().prop_map(|[r, g, b]| format!("rgb({r},{g},{b})")),
    ]
}

fn volume() -> impl Strategy<Value = Option<f64>> {
    prop_oneof![Just(None), (1u32..=1000).prop_map(|t| Some(t as f64 / 10.0))]
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(2_000))]

    #[test]
    fn rendered_sentences_parse_back(
        base in base(),
        mods in subsequence(Modifier::ALL.to_vec(), 0..=2),
        vol in volume(),
        template in 0..SENTENCE_TEMPLATES.len(),
    ) {
        let text = render_sentence(template, &base, &mods, vol);
        let req = parse_request(&text).unwrap();
        prop_assert_eq!(&req.base_color_text, &base);
        prop_assert_eq!(&req.modifiers, &mods);
        prop_assert_eq!(req.volume_ml, vol);

        let again = parse_request(&req.render()).unwrap();
        prop_assert_eq!(&again.base_color_text, &req.base_color_text);
        prop_assert_eq!(&again.modifiers, &req.modifiers);
        prop_assert_eq!(again.volume_ml, req.volume_ml);

        let norm = understand(&text, 5.0).unwrap();
        let expected = mods
            .iter()
            .fold(parse_color_literal(&base).unwrap(), |c, m| apply_modifier(c, *m));
        prop_assert_eq!(norm.target, expected);
        prop_assert_eq!(norm.volume_ml, vol.unwrap_or(5.0));
        prop_assert_eq!(understand(&text, 5.0).unwrap(), norm);
    }

    #[test]
    fn arbitrary_text_never_panics(text in ".{0,200}") {
        let _ = understand(&text, 5.0);
    }
}

#[test]
fn headline_request() {
    let n = understand("I need a bright orange", 5.0).unwrap();
    assert_eq!(n.volume_ml, 5.0);
    assert_eq!(n.source.modifiers, vec![Modifier::Bright]);
    // orange already has V = 1, so brightening leaves it unchanged
    assert!((n.target.g - 165.0 / 255.0).abs() < 1e-12);
    assert_eq!(n.target.r, 1.0);
    assert_eq!(n.target.b, 0.0);
    assert_eq!(understand("make 5 ml of cyan", 5.0).unwrap().target, Color::new(0.0, 1.0, 1.0).unwrap());
}
