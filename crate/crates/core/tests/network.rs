use dsd_snn::data::EncodedBatch;
use dsd_snn::snn::{
    cross_entropy_on_rates, sgd_update, ArchitectureSpec, HiddenSpec, LifParams, SpikingNetwork, Tensor,
};
use dsd_snn::structure::{
    HeadInit,
    add_output_head, freeze_task, grow_for_task, remove_neuron, wire_new_neurons, PruningState, SlotStatus,
    WiringMode,
};
use dsd_snn::Error;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

fn small_conv() -> ArchitectureSpec {
    ArchitectureSpec {
        input: [1, 6, 6],
        hidden: vec![
            HiddenSpec::Conv2d {
                channels: 4,
                kernel: 3,
                stride: 1,
                padding: 1,
                pool: 2,
            },
            HiddenSpec::Dense { units: 8 },
        ],
    }
}

fn start_task(net: &mut SpikingNetwork, task: u32, rho: f64, rng: &mut ChaCha8Rng) -> usize {
    grow_for_task(net, rho, 100 + task as u64).unwrap();
    for l in 0..net.layers().len() {
        wire_new_neurons(net, l, WiringMode::Reuse, 1.0, rng);
    }
    add_output_head(net, 3, task, WiringMode::Reuse, HeadInit::Glorot(1.0), rng).unwrap()
}

fn random_batch(net: &SpikingNetwork, b: usize, t: usize, rng: &mut ChaCha8Rng) -> EncodedBatch {
    let frame = (0..b * net.input_features()).map(|_| rng.gen_range(0.0f32..1.0)).collect();
    EncodedBatch::constant(frame, b, t).unwrap()
}

#[test]
fn no_heads_is_a_state_error() {
    let net = SpikingNetwork::new(&small_conv()).unwrap();
    let batch = EncodedBatch::constant(vec![0.5; 36], 1, 8).unwrap();
    assert!(matches!(net.forward(&batch, &LifParams::default(), false), Err(Error::State(_))));
}

#[test]
fn zero_weights_give_zero_rates() {
    let mut rng = ChaCha8Rng::seed_from_u64(1);
    let mut net = SpikingNetwork::new(&small_conv()).unwrap();
    let head = start_task(&mut net, 0, 50.0, &mut rng);
    for l in 0..net.layers().len() {
        let spec = *net.layer(l).spec();
        for o in 0..spec.out_units {
            for i in 0..spec.in_units {
                if net.layer(l).is_connected(o, i) {
                    for q in 0..spec.inner() {
                        net.set_weight(l, o, i, q, 0.0).unwrap();
                    }
                }
            }
        }
    }
    let batch = random_batch(&net, 4, 8, &mut rng);
    let pass = net.forward(&batch, &LifParams::default(), false).unwrap();
    assert!(pass.rates()[head].data().iter().all(|&r| r == 0.0));
}

#[test]
fn large_positive_weight_fires_every_step() {
    let arch = ArchitectureSpec {
        input: [1, 1, 1],
        hidden: vec![HiddenSpec::Dense { units: 1 }],
    };
    let mut rng = ChaCha8Rng::seed_from_u64(2);
    let mut net = SpikingNetwork::new(&arch).unwrap();
    grow_for_task(&mut net, 100.0, 0).unwrap();
    wire_new_neurons(&mut net, 0, WiringMode::Reuse, 1.0, &mut rng);
    add_output_head(&mut net, 1, 0, WiringMode::Reuse, HeadInit::Glorot(1.0), &mut rng).unwrap();
    net.set_weight(0, 0, 0, 0, 10.0).unwrap();
    net.set_head_weight(0, 0, 0, 10.0).unwrap();
    let batch = EncodedBatch::constant(vec![1.0], 1, 8).unwrap();
    let pass = net.forward(&batch, &LifParams::default(), false).unwrap();
    assert_eq!(pass.rates()[0].data(), &[1.0]);
}

#[test]
fn rates_are_spike_counts_over_t() {
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    let mut net = SpikingNetwork::new(&small_conv()).unwrap();
    start_task(&mut net, 0, 50.0, &mut rng);
    let params = LifParams::default();
    let batch = random_batch(&net, 5, params.t_steps, &mut rng);
    let pass = net.forward(&batch, &params, false).unwrap();
    for &r in pass.rates()[0].data() {
        let count = r * params.t_steps as f32;
        assert_eq!(count, count.round());
        assert!((0.0..=1.0).contains(&r));
    }
}

#[test]
fn empty_neuron_matches_zero_outgoing_weights() {
    let mut rng = ChaCha8Rng::seed_from_u64(4);
    let mut net = SpikingNetwork::new(&small_conv()).unwrap();
    start_task(&mut net, 0, 50.0, &mut rng);
    let slot = net.layer(0).pool().slots_with(SlotStatus::New)[0];

    let mut silenced = net.clone();
    let next = *silenced.layer(1).spec();
    for o in 0..next.out_units {
        if silenced.layer(1).is_connected(o, slot) {
            for q in 0..next.inner() {
                silenced.set_weight(1, o, slot, q, 0.0).unwrap();
            }
        }
    }
    let mut emptied = net.clone();
    remove_neuron(&mut emptied, 0, slot);

    let params = LifParams::default();
    let batch = random_batch(&net, 6, params.t_steps, &mut rng);
    let a = silenced.forward(&batch, &params, false).unwrap();
    let b = emptied.forward(&batch, &params, false).unwrap();
    assert_eq!(a.rates()[0], b.rates()[0]);
}

#[test]
fn backward_needs_a_recorded_pass() {
    let mut rng = ChaCha8Rng::seed_from_u64(5);
    let mut net = SpikingNetwork::new(&small_conv()).unwrap();
    start_task(&mut net, 0, 50.0, &mut rng);
    let batch = random_batch(&net, 2, 8, &mut rng);
    let pass = net.forward(&batch, &LifParams::default(), false).unwrap();
    let g = Tensor::zeros(vec![2, 3]).unwrap();
    assert!(matches!(net.backward(&pass, 0, &g), Err(Error::State(_))));
}

#[test]
fn zero_loss_gradient_gives_zero_gradients() {
    let mut rng = ChaCha8Rng::seed_from_u64(6);
    let mut net = SpikingNetwork::new(&small_conv()).unwrap();
    start_task(&mut net, 0, 50.0, &mut rng);
    let batch = random_batch(&net, 3, 8, &mut rng);
    let pass = net.forward(&batch, &LifParams::default(), true).unwrap();
    let grads = net.backward(&pass, 0, &Tensor::zeros(vec![3, 3]).unwrap()).unwrap();
    assert!(grads.is_zero());
}

#[test]
fn frozen_weights_get_no_gradient_and_never_move() {
    let mut rng = ChaCha8Rng::seed_from_u64(7);
    let mut net = SpikingNetwork::new(&small_conv()).unwrap();
    let mut state = PruningState::new(2, 0.5, 1.0, 10.0);
    start_task(&mut net, 0, 25.0, &mut rng);
    freeze_task(&mut net, &mut state, 0);
    let before = net.clone();
    let head = start_task(&mut net, 1, 25.0, &mut rng);

    let params = LifParams::default();
    for _ in 0..5 {
        let batch = random_batch(&net, 4, params.t_steps, &mut rng);
        let labels: Vec<usize> = (0..4).map(|i| i % 3).collect();
        let pass = net.forward(&batch, &params, true).unwrap();
        let (_, g) = cross_entropy_on_rates(&pass.rates()[head], &labels, 5.0).unwrap();
        let grads = net.backward(&pass, head, &g).unwrap();
        for (l, lg) in grads.layers.iter().enumerate() {
            for &o in &lg.rows {
                assert_eq!(net.layer(l).pool().status(o), SlotStatus::New);
            }
            for o in net.layer(l).pool().slots_with(SlotStatus::Frozen) {
                for i in 0..net.layer(l).spec().in_units {
                    assert_eq!(lg.get(o, i, 0), 0.0);
                }
            }
        }
        let mask = net.connectivity_mask();
        sgd_update(&mut net, &grads, 0.5, &mask).unwrap();
    }
    for l in 0..net.layers().len() {
        let spec = *net.layer(l).spec();
        for o in before.layer(l).pool().slots_with(SlotStatus::Frozen) {
            assert_eq!(
                before.layer(l).input_weights(o),
                net.layer(l).input_weights(o),
                "layer {l} slot {o}"
            );
            assert!(net.layer(l).input_weights(o).len() == spec.in_units * spec.inner());
        }
    }
    assert_eq!(before.heads()[0], net.heads()[0]);
}

#[test]
fn sgd_update_examples() {
    let arch = ArchitectureSpec {
        input: [1, 1, 1],
        hidden: vec![HiddenSpec::Dense { units: 1 }],
    };
    let mut rng = ChaCha8Rng::seed_from_u64(8);
    let mut net = SpikingNetwork::new(&arch).unwrap();
    grow_for_task(&mut net, 100.0, 0).unwrap();
    wire_new_neurons(&mut net, 0, WiringMode::Reuse, 1.0, &mut rng);
    add_output_head(&mut net, 2, 0, WiringMode::Reuse, HeadInit::Glorot(1.0), &mut rng).unwrap();
    net.set_weight(0, 0, 0, 0, 1.0).unwrap();
    net.set_head_weight(0, 0, 0, 1.0).unwrap();
    net.set_head_weight(0, 1, 0, 1.0).unwrap();

    let params = LifParams::default();
    let batch = EncodedBatch::constant(vec![0.7], 1, params.t_steps).unwrap();
    let pass = net.forward(&batch, &params, true).unwrap();
    let mut grads = net.backward(&pass, 0, &Tensor::new(vec![1, 2], vec![0.3, -0.2]).unwrap()).unwrap();
    grads.layers[0].values[0] = 0.5;
    let mask = net.connectivity_mask();

    let snapshot = net.clone();
    sgd_update(&mut net, &grads, 0.0, &mask).unwrap();
    assert_eq!(net, snapshot);
    sgd_update(&mut net, &grads, 0.1, &mask.frozen_like()).unwrap();
    assert_eq!(net, snapshot);
    sgd_update(&mut net, &grads, 0.1, &mask).unwrap();
    assert_eq!(net.layer(0).weights()[0], 0.95);
}

#[test]
fn identical_inputs_give_identical_passes() {
    let mut rng = ChaCha8Rng::seed_from_u64(9);
    let mut net = SpikingNetwork::new(&small_conv()).unwrap();
    start_task(&mut net, 0, 50.0, &mut rng);
    let batch = random_batch(&net, 3, 8, &mut rng);
    let a = net.forward(&batch, &LifParams::default(), false).unwrap();
    let b = net.forward(&batch, &LifParams::default(), true).unwrap();
    assert_eq!(a.rates(), b.rates());
}
