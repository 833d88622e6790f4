use attriforge::losses::{d_adv_loss, d_att_loss, gradient_penalty, rec_loss, InterpolatedSample};
use attriforge::networks::{ArchConfig, Generator, SkipMode};
use attriforge::nn::{gaussian, Mode};
use attriforge::stu::{attribute_var, inject_attribute, stu_forward, AttributeValue, FeatureMap, HiddenState, StuCellParams};
use attriforge::tensor::{DType, Tensor, Var};
use proptest::prelude::*;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

fn cell_case(seed: u64, c: usize, hin: usize, half: usize, std: f64, att: f64) -> (StuCellParams, FeatureMap, HiddenState, Var) {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let p = StuCellParams::new(hin, c, DType::F64, &mut rng);
    for conv in [&p.inject, &p.update, &p.reset, &p.candidate] {
        conv.weight.set(gaussian(conv.weight.tensor().shape(), std, DType::F64, &mut rng));
        conv.bias.set(gaussian(conv.bias.tensor().shape(), std, DType::F64, &mut rng));
    }
    let f = FeatureMap { data: Var::constant(gaussian(&[1, c, 2 * half, 2 * half], 1.0, DType::F64, &mut rng)), layer_index: 1 };
    let s = HiddenState { data: Var::constant(gaussian(&[1, hin, half, half], 1.0, DType::F64, &mut rng)), layer_index: 2 };
    let att = attribute_var(&[AttributeValue::new(att).unwrap()], DType::F64);
    (p, f, s, att)
}

fn scores(v: &[f64]) -> Var {
    Var::constant(Tensor::from_vec(v.to_vec(), &[v.len()]))
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(48))]

    #[test]
    fn stu_gates_and_candidate_stay_in_range(
        seed in any::<u64>(), c in 1usize..=4, hin in 1usize..=4, half in 1usize..=2,
        std in 0.05f64..0.4, att in 0.0f64..=1.0,
    ) {
        // Scales keep pre-activations well below where f64 sigmoid/tanh round to their limits.
        let (p, f, s, att) = cell_case(seed, c, hin, half, std, att);
        let s_hat = inject_attribute(&s, &att, &p).unwrap();
        let out = stu_forward(&f, &s_hat, &p).unwrap();
        for gate in [&out.trace.update_gate, &out.trace.reset_gate] {
            prop_assert!(gate.value().to_vec_f64().iter().all(|&g| g > 0.0 && g < 1.0));
        }
        prop_assert!(out.trace.candidate.value().to_vec_f64().iter().all(|&v| v > -1.0 && v < 1.0));

        let (sh, fh, ft) = (s_hat.data.value().to_vec_f64(), out.trace.candidate.value().to_vec_f64(), out.edited.data.value().to_vec_f64());
        for ((a, b), t) in sh.iter().zip(&fh).zip(&ft) {
            let slack = 1e-12 * (1.0 + a.abs().max(b.abs()));
            prop_assert!(*t >= a.min(*b) - slack && *t <= a.max(*b) + slack);
        }
    }

    #[test]
    fn stu_forward_is_deterministic(seed in any::<u64>(), att in 0.0f64..=1.0) {
        let (p, f, s, att) = cell_case(seed, 3, 2, 2, 0.4, att);
        let s_hat = inject_attribute(&s, &att, &p).unwrap();
        let a = stu_forward(&f, &s_hat, &p).unwrap();
        let b = stu_forward(&f, &s_hat, &p).unwrap();
        prop_assert!(a.edited.data.value().bit_eq(b.edited.data.value()));
        prop_assert!(a.hidden.data.value().bit_eq(b.hidden.data.value()));
    }

    #[test]
    fn non_adversarial_losses_are_non_negative(seed in any::<u64>(), scale in 0.01f64..5.0) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let a = gaussian(&[3, 2], scale, DType::F64, &mut rng);
        let b = gaussian(&[3, 2], scale, DType::F64, &mut rng);
        prop_assert!(rec_loss(&Var::constant(a.clone()), &Var::constant(b.clone())).item() >= 0.0);
        let (ta, tb) = (a.reshape(&[6]), b.reshape(&[6]));
        prop_assert!(d_att_loss(&Var::constant(ta), &Var::constant(tb)).item() >= 0.0);
        let w = Var::constant(gaussian(&[2, 1], scale, DType::F64, &mut rng));
        let sample = InterpolatedSample::new(&a, &b, &[0.2, 0.5, 0.9]).unwrap();
        let gp = gradient_penalty(|x| Ok(x.matmul(&w).square().reshape(&[3])), &sample, 10.0).unwrap();
        prop_assert!(gp.item() >= 0.0);
    }

    #[test]
    fn critic_loss_falls_as_real_scores_rise(
        real in prop::collection::vec(-5.0f64..5.0, 4),
        fake in prop::collection::vec(-5.0f64..5.0, 4),
        k in 0usize..4, bump in 0.01f64..3.0,
    ) {
        let gp = Var::scalar(0.3, DType::F64);
        let before = d_adv_loss(&scores(&real), &scores(&fake), &gp).item();
        let mut higher = real.clone();
        higher[k] += bump;
        let after = d_adv_loss(&scores(&higher), &scores(&fake), &gp).item();
        prop_assert!(after < before);
        // Pure: identical inputs, identical value.
        prop_assert_eq!(before.to_bits(), d_adv_loss(&scores(&real), &scores(&fake), &gp).item().to_bits());
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(6))]

    #[test]
    fn generator_output_matches_input_size(log2 in 5u32..=6, stu in any::<bool>(), seed in any::<u64>()) {
        let size = 1usize << log2;
        let mode = if stu { SkipMode::Stu } else { SkipMode::Concat };
        let g = Generator::new(&ArchConfig { image_size: size, widths: [2, 3, 4, 5, 6] }, mode, DType::F32, &mut ChaCha8Rng::seed_from_u64(seed)).unwrap();
        let x = Var::constant(gaussian(&[1, 3, size, size], 0.5, DType::F32, &mut ChaCha8Rng::seed_from_u64(seed ^ 1)));
        let y = g.forward(&x, &[AttributeValue::new(0.4).unwrap()], Mode::Eval).unwrap();
        prop_assert_eq!(y.shape(), x.shape());
    }
}
