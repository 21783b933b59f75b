use proptest::prelude::*;
use vscreen_core::backends::ProbabilityMask;
use vscreen_core::grid::BinaryMask;
use vscreen_core::imaging::{close, dilate, erode, erode_with_border, open, remove_small_components, StructuringElement};
use vscreen_core::stages::{refine_mask, VlrConfig};

/// Random masks up to 128x128: noise, blobs, or a mix.
fn mask_strategy() -> impl Strategy<Value = BinaryMask> {
    (1usize..=128, 1usize..=128, 0.0f64..1.0, 0u64..u64::MAX).prop_map(|(w, h, density, seed)| {
        // cheap deterministic hash noise, smoothed into blobs on odd seeds
        let noise = |x: usize, y: usize| {
            let mut z = seed ^ ((x as u64) << 32 | y as u64).wrapping_mul(0x9E37_79B9_7F4A_7C15);
            z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
            z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
            ((z ^ (z >> 31)) >> 11) as f64 / (1u64 << 53) as f64
        };
        if seed % 2 == 0 {
            BinaryMask::from_fn(w, h, |x, y| noise(x, y) < density)
        } else {
            BinaryMask::from_fn(w, h, |x, y| {
                let (bx, by) = (x / 8, y / 8);
                noise(bx, by) < density && noise(x, y) < 0.9
            })
        }
    })
}

fn radius() -> impl Strategy<Value = usize> {
    1usize..=4
}

fn pair() -> impl Strategy<Value = (BinaryMask, BinaryMask)> {
    mask_strategy().prop_flat_map(|a| {
        let (w, h) = (a.width(), a.height());
        let a2 = a.clone();
        prop::collection::vec(prop::bool::weighted(0.3), w * h).prop_map(move |extra| {
            let b = BinaryMask::new(w, h, extra).unwrap().or(&a2).unwrap();
            (a2.clone(), b)
        })
    })
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(200))]

    #[test]
    fn erosion_and_opening_are_anti_extensive(a in mask_strategy(), r in radius()) {
        let se = StructuringElement::disc(r);
        prop_assert!(erode(&a, &se).is_subset_of(&a));
        prop_assert!(open(&a, &se).is_subset_of(&a));
    }

    #[test]
    fn dilation_and_closing_are_extensive(a in mask_strategy(), r in radius()) {
        let se = StructuringElement::disc(r);
        prop_assert!(a.is_subset_of(&dilate(&a, &se)));
        prop_assert!(a.is_subset_of(&close(&a, &se)));
    }

    #[test]
    fn opening_and_closing_are_idempotent(a in mask_strategy(), r in radius()) {
        let se = StructuringElement::disc(r);
        let o = open(&a, &se);
        prop_assert_eq!(open(&o, &se), o);
        let c = close(&a, &se);
        prop_assert_eq!(close(&c, &se), c);
    }

    #[test]
    fn operators_are_monotone((a, b) in pair(), r in radius()) {
        let se = StructuringElement::disc(r);
        prop_assert!(a.is_subset_of(&b));
        prop_assert!(erode(&a, &se).is_subset_of(&erode(&b, &se)));
        prop_assert!(dilate(&a, &se).is_subset_of(&dilate(&b, &se)));
        prop_assert!(open(&a, &se).is_subset_of(&open(&b, &se)));
        prop_assert!(close(&a, &se).is_subset_of(&close(&b, &se)));
    }

    #[test]
    fn erosion_dilation_duality(a in mask_strategy(), r in radius()) {
        // the complement of a frame's content is foreground off-frame
        let se = StructuringElement::disc(r);
        prop_assert_eq!(dilate(&a, &se).not(), erode_with_border(&a.not(), &se, true));
        let near_edge = erode(&BinaryMask::full(a.width(), a.height()), &se).not();
        prop_assert_eq!(erode(&a, &se).not(), dilate(&a.not(), &se).or(&near_edge).unwrap());
    }

    #[test]
    fn remove_small_is_contractive_and_idempotent(a in mask_strategy(), min in 1usize..40) {
        let once = remove_small_components(&a, min);
        prop_assert!(once.is_subset_of(&a));
        prop_assert_eq!(remove_small_components(&once, min), once);
    }

    #[test]
    fn refinement_is_contractive_and_idempotent(a in mask_strategy(), fov in mask_strategy(), r in 1usize..=3) {
        let (w, h) = (a.width(), a.height());
        let fov = fov.resize_nearest(w, h).or(&BinaryMask::from_fn(w, h, |x, y| (x + y) % 3 != 0)).unwrap();
        let raw = ProbabilityMask::new(w, h, a.bits().iter().map(|&b| if b { 0.9 } else { 0.1 }).collect()).unwrap();
        let cfg = VlrConfig { open_radius: r, ..VlrConfig::default() };
        let refined = refine_mask(&raw, &fov, &cfg).unwrap();
        prop_assert!(refined.is_subset_of(&a));
        prop_assert!(refined.is_subset_of(&fov));
        let again = ProbabilityMask::new(w, h, refined.bits().iter().map(|&b| if b { 1.0 } else { 0.0 }).collect()).unwrap();
        prop_assert_eq!(refine_mask(&again, &fov, &cfg).unwrap(), refined);
    }
}
