use proptest::prelude::*;
use proptest::sample::select;

use bitsys::accel::{run_layer, run_network, schedule_cycles, AcceleratorTopology};
use bitsys::bitmath::{
    self, decode_product, mask_pattern, pack, sign_actions, unpack, PackedOperand, PrecisionMode,
    SignAction,
};
use bitsys::fabric::{run_stream, FabricState, MULTIPLIER_LATENCY};
use bitsys::mac::{activate, convert_channels, Accumulator, ThresholdSet};
use bitsys::refnet::{
    generate_random_input, generate_random_model, parse_model, reference_layer, reference_network,
    write_model, LayerConfig,
};
use bitsys::verify::native_product;

fn any_mode() -> impl Strategy<Value = PrecisionMode> {
    select(PrecisionMode::ALL.to_vec())
}

fn any_topology() -> impl Strategy<Value = AcceleratorTopology> {
    select(vec![
        AcceleratorTopology::SINGLE_LAYER,
        AcceleratorTopology::SYSTOLIC,
    ])
}

/// Values admitted by `mode`, `len` of them.
fn values(mode: PrecisionMode, len: usize) -> impl Strategy<Value = Vec<i32>> {
    let range = mode.value_range();
    prop::collection::vec(range, len).prop_map(move |v| {
        v.into_iter()
            .map(|x| if mode.is_bipolar() && x == 0 { 1 } else { x })
            .collect()
    })
}

fn random_layer() -> impl Strategy<Value = (LayerConfig, Vec<i32>)> {
    (
        any_mode(),
        1usize..70,
        1usize..20,
        any::<u64>(),
        any::<bool>(),
    )
        .prop_map(|(mode, in_f, out_f, seed, hidden)| {
            let modes = if hidden {
                vec![mode, PrecisionMode::U4]
            } else {
                vec![mode]
            };
            let mut widths = vec![in_f, out_f];
            if hidden {
                widths.push(3);
            }
            let model = generate_random_model(&widths, &modes, seed).unwrap();
            let input = generate_random_input(&model, seed ^ 0x5555);
            (model.layers[0].clone(), input)
        })
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(256))]

    #[test]
    fn multiply_matches_native_oracle(a: u8, b: u8, mode in any_mode()) {
        let (a, b) = (PackedOperand(a), PackedOperand(b));
        prop_assert_eq!(bitmath::multiply(a, b, mode), native_product(a, b, mode));
    }

    #[test]
    fn multiply_is_commutative(a: u8, b: u8, mode in any_mode()) {
        let (a, b) = (PackedOperand(a), PackedOperand(b));
        prop_assert_eq!(bitmath::multiply(a, b, mode), bitmath::multiply(b, a, mode));
    }

    #[test]
    fn pack_unpack_round_trip(word: u8, mode in any_mode()) {
        let v = unpack(PackedOperand(word), mode);
        prop_assert_eq!(v.len(), mode.channels());
        prop_assert!(v.iter().all(|&x| mode.admits(x)));
        prop_assert_eq!(pack(&v, mode).unwrap(), PackedOperand(word));
    }

    #[test]
    fn sign_actions_are_symmetric(mode in any_mode(), i in 0usize..8, j in 0usize..8) {
        let grid = sign_actions(mode);
        prop_assert_eq!(grid[i][j], grid[j][i]);
        prop_assert_eq!(grid[i][j] == SignAction::Inactive, !mask_pattern(mode).is_active(i, j));
    }

    #[test]
    fn wider_modes_enable_a_superset_of_cells(m1 in any_mode(), m2 in any_mode()) {
        if m1.bits() <= m2.bits() {
            prop_assert!(mask_pattern(m1).is_subset_of(mask_pattern(m2)));
        }
    }

    #[test]
    fn negating_one_operand_negates_products(x in -127i32..=127, y in -128i32..=127) {
        let m = PrecisionMode::S8;
        let p = |a: i32| decode_product(
            bitmath::multiply(pack(&[a], m).unwrap(), pack(&[y], m).unwrap(), m), m)[0];
        prop_assert_eq!(p(-x), -p(x));
    }

    #[test]
    fn converter_sums_channels(word: u16, mode in any_mode()) {
        let w = bitsys::ProductWord(word);
        prop_assert_eq!(convert_channels(w, mode), decode_product(w, mode).iter().sum::<i32>());
    }

    #[test]
    fn mac_equals_flat_dot_product(mode in any_mode(), pairs in prop::collection::vec((any::<u8>(), any::<u8>()), 1..64)) {
        let mut acc = Accumulator::new();
        let mut flat = 0i64;
        for &(a, b) in &pairs {
            let (a, b) = (PackedOperand(a), PackedOperand(b));
            acc.accumulate(bitmath::multiply(a, b, mode), mode).unwrap();
            flat += unpack(a, mode).iter().zip(unpack(b, mode)).map(|(x, y)| (x * y) as i64).sum::<i64>();
        }
        prop_assert_eq!(acc.value() as i64, flat);
    }

    #[test]
    fn activation_is_monotone(
        mut t in prop::collection::btree_set(-1000i32..1000, 15),
        a in -1100i32..1100,
        b in -1100i32..1100,
    ) {
        let set = ThresholdSet::new(std::mem::take(&mut t).into_iter().collect()).unwrap();
        let (lo, hi) = (a.min(b), a.max(b));
        prop_assert!(activate(lo, &set) <= activate(hi, &set));
        prop_assert!(activate(hi, &set) as usize <= set.len());
    }

    #[test]
    fn unsigned_networks_are_monotone_in_each_input(seed: u64, coord in 0usize..16, raise in 1i32..=255) {
        let model = generate_random_model(&[16, 8, 8, 4], &[PrecisionMode::U8; 3], seed).unwrap();
        let input = generate_random_input(&model, seed);
        let mut raised = input.clone();
        raised[coord] = (raised[coord] + raise).min(255);
        let before = reference_network(&model, &input).unwrap();
        let after = reference_network(&model, &raised).unwrap();
        for (x, y) in before.layer_outputs.iter().zip(&after.layer_outputs) {
            prop_assert!(x.iter().zip(y).all(|(a, b)| a <= b));
        }
    }

    #[test]
    fn schedule_matches_simulated_layer(topology in any_topology(), (layer, input) in random_layer()) {
        let run = run_layer(topology, &layer, &input).unwrap();
        prop_assert_eq!(run.cycles, schedule_cycles(topology, &layer));
        let reference = reference_layer(&layer, &input).unwrap();
        prop_assert_eq!(run.outputs.iter().map(|&v| v as i64).collect::<Vec<_>>(), reference);
    }

    #[test]
    fn accelerator_matches_reference_on_small_networks(
        topology in any_topology(),
        modes in prop::collection::vec(any_mode(), 1..4),
        seed: u64,
    ) {
        let mut widths = vec![24];
        widths.extend(std::iter::repeat_n(9, modes.len()));
        let model = generate_random_model(&widths, &modes, seed).unwrap();
        let input = generate_random_input(&model, seed);
        let run = run_network(topology, &model, &input).unwrap();
        let reference = reference_network(&model, &input).unwrap();
        prop_assert_eq!(run.class, reference.class);
        let logits: Vec<i64> = run.logits().iter().map(|&v| v as i64).collect();
        prop_assert_eq!(logits.as_slice(), reference.logits());
    }

    #[test]
    fn fabric_stream_matches_bitmath(mode in any_mode(), pairs in prop::collection::vec((any::<u8>(), any::<u8>()), 1..40)) {
        let done = run_stream(mode, pairs.iter().copied());
        prop_assert_eq!(done.len(), pairs.len());
        for (c, &(a, b)) in done.iter().zip(&pairs) {
            prop_assert_eq!(c.word, bitmath::multiply(PackedOperand(a), PackedOperand(b), mode));
            prop_assert_eq!(c.completed_at - c.accepted_at, MULTIPLIER_LATENCY);
        }
        prop_assert_eq!(done.last().unwrap().completed_at - done[0].accepted_at, pairs.len() as u64 + 21);
    }

    #[test]
    fn inactive_pes_stay_zero(mode in any_mode(), pairs in prop::collection::vec((any::<u8>(), any::<u8>()), 1..12)) {
        let mask = mask_pattern(mode);
        let mut fabric = FabricState::with_mode(mode);
        let check = |f: &FabricState| {
            (0..8).all(|i| (0..8).all(|j| mask.is_active(i, j) || !f.pe_output(i, j).bit))
        };
        for &(a, b) in &pairs {
            fabric.offer_input(PackedOperand(a), PackedOperand(b));
            fabric.step();
            prop_assert!(check(&fabric));
        }
        while fabric.in_flight() > 0 {
            fabric.step();
            prop_assert!(check(&fabric));
        }
    }

    #[test]
    fn fabric_runs_are_deterministic(mode in any_mode(), pairs in prop::collection::vec((any::<u8>(), any::<u8>()), 1..20)) {
        prop_assert_eq!(run_stream(mode, pairs.clone()), run_stream(mode, pairs));
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(100))]

    #[test]
    fn model_text_round_trips(seed: u64, modes in prop::collection::vec(any_mode(), 1..4)) {
        let mut widths = vec![11];
        widths.extend(std::iter::repeat_n(5, modes.len()));
        let model = generate_random_model(&widths, &modes, seed).unwrap();
        prop_assert_eq!(parse_model(&write_model(&model)).unwrap(), model);
    }

    #[test]
    fn random_values_pack((m, v) in any_mode().prop_flat_map(|m| values(m, m.channels()).prop_map(move |v| (m, v)))) {
        prop_assert_eq!(unpack(pack(&v, m).unwrap(), m), v);
    }
}
