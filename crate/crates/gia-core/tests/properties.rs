//! Property tests for the pipeline invariants: packing bijectivity,
//! normalization monotonicity, container round trips and forward
//! determinism.

use gia_core::container;
use gia_core::raw::{
    normalize_amplify, pack_bayer, pack_xtrans, unpack_bayer, unpack_xtrans, Cfa, RawFrame,
};
use gia_core::tensor::{Shape, Tensor};
use proptest::prelude::*;

fn arb_bayer_frame() -> impl Strategy<Value = RawFrame> {
    (1usize..=6, 1usize..=6).prop_flat_map(|(h2, w2)| {
        let (h, w) = (h2 * 2, w2 * 2);
        (
            proptest::collection::vec(any::<u16>(), h * w),
            0.0f32..1000.0,
            0.01f32..10.0,
        )
            .prop_map(move |(mosaic, black, exposure)| {
                RawFrame::new(mosaic, h, w, Cfa::Bayer, black, black + 1000.0, exposure).unwrap()
            })
    })
}

fn arb_xtrans_frame() -> impl Strategy<Value = RawFrame> {
    (1usize..=3, 1usize..=3).prop_flat_map(|(h6, w6)| {
        let (h, w) = (h6 * 6, w6 * 6);
        proptest::collection::vec(any::<u16>(), h * w).prop_map(move |mosaic| {
            RawFrame::new(mosaic, h, w, Cfa::XTrans, 0.0, 16383.0, 0.1).unwrap()
        })
    })
}

proptest! {
    #[test]
    fn bayer_packing_is_a_bijection(frame in arb_bayer_frame()) {
        let packed = pack_bayer(&frame).unwrap();
        prop_assert_eq!(packed.shape().c, 4);
        prop_assert_eq!(unpack_bayer(&packed).unwrap(), frame.mosaic);
    }

    #[test]
    fn xtrans_packing_is_a_bijection(frame in arb_xtrans_frame()) {
        let packed = pack_xtrans(&frame).unwrap();
        prop_assert_eq!(packed.shape().c, 9);
        prop_assert_eq!(unpack_xtrans(&packed).unwrap(), frame.mosaic);
    }

    #[test]
    fn normalization_is_monotone_and_linear_above_black(
        counts in proptest::collection::vec(0u16..=16383, 16),
        target in 0.1f32..20.0,
    ) {
        let frame = RawFrame::new(counts, 4, 4, Cfa::Bayer, 512.0, 16383.0, 0.1).unwrap();
        let packed = pack_bayer(&frame).unwrap();
        let out = normalize_amplify(&packed, &frame, target, 300.0).unwrap();
        let span = 16383.0 - 512.0;
        for (i, &c) in packed.data().iter().enumerate() {
            let v = out.tensor.data()[i];
            prop_assert!(v >= 0.0);
            if c > 512.0 {
                // linear above black level
                let expect = (c - 512.0) / span * out.ratio;
                prop_assert!((v - expect).abs() <= 1e-4 * expect.max(1.0));
            } else {
                prop_assert_eq!(v, 0.0);
            }
        }
        // monotone: sort by counts, outputs must be sorted too
        let mut idx: Vec<usize> = (0..16).collect();
        idx.sort_by(|&a, &b| packed.data()[a].partial_cmp(&packed.data()[b]).unwrap());
        for pair in idx.windows(2) {
            prop_assert!(out.tensor.data()[pair[0]] <= out.tensor.data()[pair[1]]);
        }
    }

    #[test]
    fn raw_container_roundtrip_is_bit_exact(frame in arb_bayer_frame()) {
        let dir = std::env::temp_dir().join("gia-props");
        std::fs::create_dir_all(&dir).unwrap();
        let path = dir.join(format!("prop-{}.giar", std::process::id()));
        container::write_raw(&path, &frame).unwrap();
        match container::read(&path).unwrap() {
            container::Payload::Raw(f) => {
                prop_assert_eq!(f.mosaic, frame.mosaic);
                prop_assert_eq!(f.black_level.to_bits(), frame.black_level.to_bits());
                prop_assert_eq!(f.exposure_s.to_bits(), frame.exposure_s.to_bits());
            }
            _ => prop_assert!(false, "wrong payload kind"),
        }
    }

    #[test]
    fn rgb_container_roundtrip_is_bit_exact(
        data in proptest::collection::vec(any::<f32>().prop_filter("finite", |v| v.is_finite()), 48)
    ) {
        let t = Tensor::from_vec(Shape::new(1, 3, 4, 4), data).unwrap();
        let dir = std::env::temp_dir().join("gia-props");
        std::fs::create_dir_all(&dir).unwrap();
        let path = dir.join(format!("rgb-{}.giar", std::process::id()));
        container::write_rgb(&path, &t, 10.0).unwrap();
        match container::read(&path).unwrap() {
            container::Payload::Rgb { tensor, .. } => {
                for (a, b) in tensor.data().iter().zip(t.data()) {
                    prop_assert_eq!(a.to_bits(), b.to_bits());
                }
            }
            _ => prop_assert!(false, "wrong payload kind"),
        }
    }
}
