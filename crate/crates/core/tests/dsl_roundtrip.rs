mod common;

use archforge::dsl::{parse_block, parse_expr, Block};
use proptest::prelude::*;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use common::gen;

fn seeded(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(512))]

    #[test]
    fn print_then_parse_is_identity(seed in any::<u64>()) {
        let b = gen::block(&mut seeded(seed), 14);
        let text = b.print();
        let back = parse_block(&text).unwrap_or_else(|e| panic!("{e}\n{text}"));
        prop_assert_eq!(&back, &b);
        prop_assert_eq!(back.print(), text);
    }

    #[test]
    fn expressions_round_trip(seed in any::<u64>()) {
        let e = gen::expr(&mut seeded(seed), 4);
        prop_assert_eq!(parse_expr(&e.to_string()).unwrap(), e);
    }

    #[test]
    fn damaged_text_never_panics(seed in any::<u64>()) {
        let mut rng = seeded(seed);
        let b = gen::block(&mut rng, 8);
        let text = gen::mutate_text(&mut rng, &b.print());
        let _ = parse_block(&text);
    }

    #[test]
    fn arbitrary_text_never_panics(text in "\\PC{0,200}") {
        let _ = parse_block(&text);
    }
}

#[test]
fn positional_and_named_spellings_agree() {
    let a = parse_block("##cell##\n0:input\n1:Conv2d(C,3,1,1,1)\n2:output\n0->1\n1->2").unwrap();
    let b = parse_block("##cell##\n0:input\n1:Conv2d(out_channels=C,kernel_size=3)\n2:output\n0->1\n1->2").unwrap();
    assert_eq!(a, b);
    assert_eq!(a.print(), b.print());
}

#[test]
fn blank_lines_are_ignored() {
    let plain: Block = parse_block("##cell##\n0:input\n1:ReLU\n2:output\n0->1\n1->2").unwrap();
    let noisy = parse_block("\n##cell##\n\n0:input\n1:ReLU\n\n2:output\n0->1\n1->2\n\n").unwrap();
    assert_eq!(plain, noisy);
}
