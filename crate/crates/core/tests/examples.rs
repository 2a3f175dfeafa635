//! Worked examples checked through the public API, one module at a time.

use bitsys::accel::{
    run_layer, run_network, schedule_cycles, schedule_network, AcceleratorTopology, CSV_HEADER,
};
use bitsys::bitmath::{
    mask_pattern, multiply, pack, partial_products, sub_partial_grid, unpack, PackedOperand,
    PrecisionMode, ProductWord,
};
use bitsys::fabric::{pe_input, pe_truth_table, CarryCutters, FabricState, PeOutput, PeType};
use bitsys::mac::{activate, convert_channels, Accumulator, MacState, ThresholdSet};
use bitsys::refnet::{
    generate_random_input, generate_random_model, load_model, reference_network, save_model,
    tfc_shape, LayerConfig,
};

fn m(label: &str) -> PrecisionMode {
    label.parse().unwrap()
}

fn word(a: u8, b: u8, mode: &str) -> ProductWord {
    multiply(PackedOperand(a), PackedOperand(b), m(mode))
}

#[test]
fn packing() {
    assert_eq!(pack(&[0, 0], m("4u")).unwrap(), PackedOperand(0x00));
    assert_eq!(pack(&[3, 7], m("4u")).unwrap(), PackedOperand(0x73));
    assert_eq!(
        pack(&[-1, 1, -1, 1, -1, 1, -1, 1], m("1bnn")).unwrap(),
        PackedOperand(0xAA)
    );
    assert_eq!(unpack(PackedOperand(0xFF), m("8s")), vec![-1]);
    assert_eq!(unpack(PackedOperand(0xFF), m("8u")), vec![255]);
    assert_eq!(unpack(PackedOperand(0x9C), m("2s")), vec![0, -1, 1, -2]);
    assert!(pack(&[16, 0], m("4u")).is_err());
    assert!(pack(&[1], m("4u")).is_err());
}

#[test]
fn masks() {
    let counts: Vec<u32> = ["8u", "4u", "2u", "1u"]
        .iter()
        .map(|l| mask_pattern(m(l)).active_count())
        .collect();
    assert_eq!(counts, vec![64, 32, 16, 8]);
    let four = mask_pattern(m("4s"));
    for i in 0..8 {
        for j in 0..8 {
            assert_eq!(four.is_active(i, j), (i < 4 && j < 4) || (i >= 4 && j >= 4));
            assert_eq!(mask_pattern(m("1bnn")).is_active(i, j), i == j);
        }
    }
}

#[test]
fn sub_partial_grids() {
    assert_eq!(
        sub_partial_grid(PackedOperand(0x00), PackedOperand(0xFF), m("8u")).ones(),
        0
    );
    assert_eq!(
        sub_partial_grid(PackedOperand(0xFF), PackedOperand(0xFF), m("8u")).ones(),
        64
    );
    let g = sub_partial_grid(PackedOperand(0), PackedOperand(0), m("1bnn"));
    for i in 0..8 {
        for j in 0..8 {
            assert_eq!(g.cell(i, j), i == j);
        }
    }
}

#[test]
fn partial_product_sums() {
    let zero = sub_partial_grid(PackedOperand(0), PackedOperand(0), m("8u"));
    assert_eq!(partial_products(&zero).sums, [0; 15]);
    let full = sub_partial_grid(PackedOperand(0xFF), PackedOperand(0xFF), m("8u"));
    assert_eq!(
        partial_products(&full).sums,
        [1, 2, 3, 4, 5, 6, 7, 8, 7, 6, 5, 4, 3, 2, 1]
    );
    let signed = sub_partial_grid(PackedOperand(0x81), PackedOperand(0x81), m("8s"));
    let total: i64 = partial_products(&signed)
        .sums
        .iter()
        .enumerate()
        .map(|(k, &p)| (p as i64) << k)
        .sum();
    assert_eq!(total, 16129);
}

#[test]
fn products() {
    assert_eq!(word(0xFF, 0xFF, "8u"), ProductWord(0xFE01));
    assert_eq!(word(0x73, 0x25, "4u"), ProductWord(0x0E0F));
    assert_eq!(word(0x01, 0x01, "8u"), ProductWord(0x0001));
    assert_eq!(word(0xAA, 0x55, "1bnn"), ProductWord(0xFFFF));
    assert_eq!(word(0x9C, 0x9C, "2s"), ProductWord(0x4110));
    assert_eq!(word(0x81, 0x81, "8s"), ProductWord(16129));
}

#[test]
fn pe_tables() {
    use pe_input::*;
    let on = ENABLE | A_VALID | B_VALID;
    let t1 = pe_truth_table(PeType::TypeI);
    assert_eq!(
        t1[on | A | B],
        PeOutput {
            bit: true,
            valid: true
        }
    );
    assert_eq!(
        t1[on | PATTERN],
        PeOutput {
            bit: true,
            valid: true
        }
    );
    for ty in [PeType::TypeI, PeType::TypeII] {
        let table = pe_truth_table(ty);
        for (idx, out) in table.iter().enumerate() {
            if idx & A_VALID == 0 || idx & B_VALID == 0 {
                assert!(!out.valid);
            }
        }
    }
}

#[test]
fn fabric_examples() {
    let mut fabric = FabricState::with_mode(m("4u"));
    assert!(fabric.step().is_empty());

    let mut fabric = FabricState::with_mode(m("4u"));
    assert!(fabric.offer_input(PackedOperand(0x73), PackedOperand(0x25)));
    let mut out = Vec::new();
    for _ in 0..22 {
        out.extend(fabric.step());
    }
    assert_eq!(out.len(), 1);
    assert_eq!(out[0].word, ProductWord(0x0E0F));

    let mut fabric = FabricState::with_mode(m("4u"));
    fabric.configure(m("8s"));
    for _ in 0..3 {
        assert!(!fabric.offer_input(PackedOperand(1), PackedOperand(1)));
        fabric.step();
    }
    assert!(fabric.offer_input(PackedOperand(1), PackedOperand(1)));

    let mut fabric = FabricState::with_mode(m("2u"));
    let t = fabric.cycle();
    let mut done = Vec::new();
    for n in 0..100u8 {
        assert!(fabric.offer_input(PackedOperand(n), PackedOperand(n)));
        done.extend(fabric.step());
    }
    done.extend(fabric.drain());
    let at: Vec<u64> = done.iter().map(|c| c.completed_at).collect();
    assert_eq!(at, (t + 22..=t + 121).collect::<Vec<_>>());

    let mut fabric = FabricState::new();
    fabric.configure(m("1bnn"));
    assert_eq!(fabric.carry_cutters(), CarryCutters::for_mode(m("1bnn")));
    assert_eq!(fabric.carry_cutters().enabled_after().len(), 7);
}

#[test]
fn mac_examples() {
    for mode in PrecisionMode::ALL {
        assert_eq!(convert_channels(ProductWord(0), mode), 0);
    }
    assert_eq!(convert_channels(ProductWord(0x0E0F), m("4u")), 29);
    assert_eq!(convert_channels(ProductWord(0xFFFF), m("1bnn")), -8);

    let mut acc = Accumulator::new();
    for _ in 0..10 {
        acc.accumulate(ProductWord(0), m("8s")).unwrap();
    }
    assert_eq!(acc.value(), 0);
    acc.accumulate(ProductWord(0x0E0F), m("4u")).unwrap();
    acc.accumulate(ProductWord(0x0E0F), m("4u")).unwrap();
    assert_eq!(acc.value(), 58);

    let mut mac = MacState::with_mode(m("4u"));
    let t = mac.cycle();
    mac.offer_input(PackedOperand(0x73), PackedOperand(0x25));
    let update = loop {
        if let Some(u) = mac.step().unwrap() {
            break u;
        }
    };
    assert_eq!((update.sum, update.visible_at), (29, t + 27));

    let t = ThresholdSet::new(vec![0]).unwrap();
    assert_eq!(
        (activate(5, &t), activate(0, &t), activate(i32::MIN, &t)),
        (1, 0, 0)
    );
    assert_eq!(activate(1, &ThresholdSet::new(vec![-2, 0, 3]).unwrap()), 2);
}

fn uniform_layer(
    mode: &str,
    in_f: usize,
    weight: i32,
    thresholds: Option<Vec<i32>>,
) -> LayerConfig {
    LayerConfig {
        in_features: in_f,
        out_features: 1,
        mode: m(mode),
        weights: vec![weight; in_f],
        thresholds: thresholds.map(|t| vec![ThresholdSet::new(t).unwrap()]),
    }
}

#[test]
fn accelerator_layer_examples() {
    for topology in [
        AcceleratorTopology::SINGLE_LAYER,
        AcceleratorTopology::SYSTOLIC,
    ] {
        let layer = uniform_layer("8u", 8, 1, Some((0..255).collect()));
        let run = run_layer(topology, &layer, &[1; 8]).unwrap();
        assert_eq!((run.accumulators[0], run.outputs[0]), (8, 8));

        let run = run_layer(topology, &uniform_layer("4s", 13, 0, None), &[-3; 13]).unwrap();
        assert_eq!(run.accumulators, vec![0]);

        let w = vec![1, -1, 1, 1, -1, -1, 1, -1, 1];
        let mut bnn = uniform_layer("1bnn", 9, 1, None);
        bnn.weights = w.clone();
        assert_eq!(run_layer(topology, &bnn, &w).unwrap().accumulators, vec![9]);
    }

    let deg = uniform_layer("8u", 1, 1, Some(vec![0]));
    let c = schedule_cycles(AcceleratorTopology::SINGLE_LAYER, &deg);
    assert_eq!(
        c.total(),
        AcceleratorTopology::SINGLE_LAYER.pipe_fill() + 1 + 1
    );

    let model =
        generate_random_model(&tfc_shape(), &[m("8s"), m("8s"), m("8s"), m("8s")], 1).unwrap();
    let c = schedule_cycles(AcceleratorTopology::SINGLE_LAYER, &model.layers[0]);
    let fill = AcceleratorTopology::SINGLE_LAYER.pipe_fill();
    assert_eq!(c.compute + c.activation, 8 * (98 + fill + 255));
    let model =
        generate_random_model(&tfc_shape(), &[m("1bnn"), m("8s"), m("8s"), m("8s")], 1).unwrap();
    let c = schedule_cycles(AcceleratorTopology::SINGLE_LAYER, &model.layers[0]);
    assert_eq!(
        c.compute + c.activation,
        8 * (784u64.div_ceil(64) + fill + 255)
    );
}

#[test]
fn network_examples() {
    let one = generate_random_model(&[20, 6], &[m("4s")], 3).unwrap();
    let report = run_network(
        AcceleratorTopology::SYSTOLIC,
        &one,
        &generate_random_input(&one, 3),
    )
    .unwrap()
    .report;
    assert_eq!(report.reconfig_cycles(), 0);
    assert_eq!(report.to_csv().lines().count(), 3);
    assert_eq!(
        report.to_csv().lines().next().unwrap(),
        CSV_HEADER.join(",")
    );
    assert_eq!(
        CSV_HEADER.join(","),
        "layer,mode,compute_cycles,reconfig_cycles,activation_cycles,mult_busy_cycles"
    );

    let mixed =
        generate_random_model(&tfc_shape(), &[m("1bnn"), m("2s"), m("4s"), m("8s")], 4).unwrap();
    let uniform = generate_random_model(&tfc_shape(), &[m("8s"); 4], 4).unwrap();
    for topology in [
        AcceleratorTopology::SINGLE_LAYER,
        AcceleratorTopology::SYSTOLIC,
    ] {
        let rm = schedule_network(topology, &mixed);
        let ru = schedule_network(topology, &uniform);
        let reconfig: Vec<u64> = rm.layers.iter().map(|l| l.reconfig_cycles).collect();
        assert_eq!(reconfig, vec![0, 3, 3, 3]);
        assert!(rm.compute_cycles() < ru.compute_cycles());
        assert!(rm.total_cycles() < ru.total_cycles());
        assert_eq!(
            rm.layers[0].mult_busy_cycles * 8,
            ru.layers[0].mult_busy_cycles
        );
    }

    let input = generate_random_input(&mixed, 8);
    let single = run_network(AcceleratorTopology::SINGLE_LAYER, &mixed, &input).unwrap();
    let systolic = run_network(AcceleratorTopology::SYSTOLIC, &mixed, &input).unwrap();
    assert_eq!(single.layer_outputs, systolic.layer_outputs);
    assert_ne!(single.report.total_cycles(), systolic.report.total_cycles());
    assert_eq!(
        single.class,
        reference_network(&mixed, &input).unwrap().class
    );
}

#[test]
fn model_files() {
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("tfc.model");
    let model =
        generate_random_model(&tfc_shape(), &[m("1bnn"), m("2s"), m("4s"), m("8s")], 12).unwrap();
    save_model(&model, &path).unwrap();
    let loaded = load_model(&path).unwrap();
    assert_eq!(loaded, model);
    let ins: Vec<usize> = loaded.layers.iter().map(|l| l.in_features).collect();
    let outs: Vec<usize> = loaded.layers.iter().map(|l| l.out_features).collect();
    assert_eq!((ins, outs), (vec![784, 64, 64, 64], vec![64, 64, 64, 10]));

    let text = std::fs::read_to_string(&path)
        .unwrap()
        .replacen("bits=8", "bits=3", 1);
    std::fs::write(&path, text).unwrap();
    assert!(load_model(&path)
        .unwrap_err()
        .to_string()
        .contains("unsupported precision"));
}
