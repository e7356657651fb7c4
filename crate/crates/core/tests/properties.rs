use std::path::PathBuf;

use proptest::prelude::*;
use rand::Rng;

use fscd_sim::control::{
    decode_message, encode_message, measure_response_time, AckStatus, Body, ControlLogKind,
    ControlMessage, ControlPlane, Layer, Policy, StateAction, Topology, TopologyBuilder,
};
use fscd_sim::fscd::{Fscd, FscdConfig, FscdState, ObscuringWindow};
use fscd_sim::otdr::{
    apply_gate, detect_features, distance_to_obscuring_window, obscuring_window_to_distance,
    raw_trace, GateSchedule, GateTechnology, OtdrConfig, OtdrTrace,
};
use fscd_sim::plant::{ConnectorEvent, FibrePath, FibreSegment, ReflectiveKind};
use fscd_sim::scenario::{parse_scenario, parse_scenario_str, to_json};
use fscd_sim::sim::{ComponentId, Engine, RngStream, SimTime};
use fscd_sim::sop::{Rotation3, ScramblerConfig, StokesVector};

const N_GROUP: f64 = 1.468;

fn plant(length_m: f64, connector_m: Option<f64>) -> FibrePath {
    let seg = FibreSegment::new(length_m, 0.2, N_GROUP).unwrap();
    let connectors = connector_m
        .map(|z| vec![ConnectorEvent { position_m: z, insertion_loss_db: 0.3, return_loss_db: 45.0 }])
        .unwrap_or_default();
    FibrePath::new("p", vec![seg], connectors, 14.7).unwrap()
}

fn trace(path: &FibrePath, seed: u64, averages: Option<u32>) -> OtdrTrace {
    let cfg = OtdrConfig { num_averages: averages, ..OtdrConfig::default() };
    raw_trace(&cfg, path, &mut RngStream::new(seed, "otdr")).unwrap()
}

fn eo() -> GateTechnology {
    GateTechnology::eo_switch()
}

fn arb_state() -> impl Strategy<Value = FscdState> {
    prop::sample::select(FscdState::ALL.to_vec())
}

fn arb_windows() -> impl Strategy<Value = Vec<ObscuringWindow>> {
    prop::collection::vec((0i64..1_000_000, 1i64..1_000_000), 0..5).prop_map(|gaps| {
        let mut t = 0;
        gaps.into_iter()
            .map(|(gap, dur)| {
                let w = ObscuringWindow { delay: SimTime::from_ps(t + gap), duration: SimTime::from_ps(dur) };
                t += gap + dur;
                w
            })
            .collect()
    })
}

fn arb_policy() -> impl Strategy<Value = Policy> {
    (any::<u32>(), any::<bool>(), any::<bool>(), arb_windows(), prop::collection::vec(any::<u32>(), 0..6))
        .prop_map(|(path_id, sops_allowed, bls_allowed, obscured_sections, interrogators)| Policy {
            path_id,
            sops_allowed,
            bls_allowed,
            obscured_sections,
            interrogators,
        })
}

fn arb_layer() -> impl Strategy<Value = Layer> {
    prop::sample::select(Layer::ALL.to_vec())
}

fn arb_body() -> impl Strategy<Value = Body> {
    prop_oneof![
        arb_policy().prop_map(Body::PolicySet),
        (any::<u32>(), any::<u32>(), any::<bool>()).prop_map(|(path_id, acked_seq, ok)| Body::PolicyAck {
            path_id,
            acked_seq,
            status: if ok { AckStatus::Applied } else { AckStatus::Rejected },
        }),
        (any::<u32>(), any::<u32>(), any::<i32>(), 0..i64::MAX, any::<u32>()).prop_map(
            |(device_id, interrogator_id, pulse_power_mdbm, t, trigger_id)| Body::AlertPulse {
                device_id,
                interrogator_id,
                pulse_power_mdbm,
                detected_at: SimTime::from_ps(t),
                trigger_id,
            }
        ),
        (any::<u32>(), arb_state()).prop_map(|(device_id, state)| Body::StateReport { device_id, state }),
        (any::<u32>(), prop::option::of(arb_state()), arb_layer(), any::<u32>()).prop_map(
            |(device_id, set, origin, trigger_id)| Body::StateCmd {
                device_id,
                action: set.map_or(StateAction::BlockBls, StateAction::Set),
                origin,
                trigger_id,
            }
        ),
    ]
}

fn arb_message() -> impl Strategy<Value = ControlMessage> {
    (arb_layer(), any::<u32>(), any::<u32>(), any::<u32>(), arb_body()).prop_map(
        |(src_layer, dst_id, seq, timestamp_ps_low32, body)| ControlMessage {
            src_layer,
            dst_id,
            seq,
            timestamp_ps_low32,
            body,
        },
    )
}

fn device(name: &str, state: FscdState) -> Fscd {
    let cfg = FscdConfig {
        gate: eo(),
        scrambler: ScramblerConfig {
            rate_hz: 10_000.0,
            activation_delay: SimTime::from_us(350),
            enabled: true,
            max_rate_hz: 1.0e6,
        },
        detector_threshold_dbm: -30.0,
        agent_decision_time: SimTime::from_ns(50),
        obscuring: Vec::new(),
    };
    Fscd::new(name, cfg, state).unwrap()
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(256))]

    #[test]
    fn engine_pops_in_time_then_insertion_order(times in prop::collection::vec(0i64..50, 1..200)) {
        let mut e = Engine::new();
        for (i, t) in times.iter().enumerate() {
            e.schedule(SimTime::from_ps(*t), ComponentId(0), i).unwrap();
        }
        let log = e.run_until(SimTime::from_ps(100));
        prop_assert_eq!(log.len(), times.len());
        let mut expected: Vec<(i64, usize)> = times.iter().copied().zip(0..).collect();
        expected.sort();
        let got: Vec<(i64, usize)> = log.iter().map(|ev| (ev.time.as_ps(), ev.kind)).collect();
        prop_assert_eq!(got, expected);
    }

    #[test]
    fn open_gate_is_identity(seed in any::<u64>(), len in 1_000.0f64..5_000.0) {
        let raw = trace(&plant(len, None), seed, Some(256));
        let gated = apply_gate(&raw, &GateSchedule::open(eo()));
        prop_assert_eq!(gated.power_db(), raw.power_db());
    }

    #[test]
    fn gate_only_touches_bins_inside_its_window(
        seed in any::<u64>(),
        start_ns in 0i64..40_000,
        dur_ns in 0i64..20_000,
        att in 0.0f64..40.0,
    ) {
        let raw = trace(&plant(4_000.0, Some(1_500.0)), seed, Some(256));
        let (start, end) = (SimTime::from_ns(start_ns), SimTime::from_ns(start_ns + dur_ns));
        let gated = apply_gate(&raw, &GateSchedule::window(start, end, att, eo()).unwrap());
        let floor = raw.noise_floor_dbm();
        for i in 0..raw.len() {
            let t = raw.arrival_times()[i];
            let (a, b) = (gated.power_db()[i], raw.power_db()[i]);
            if t >= start && t < end {
                prop_assert_eq!(a, (b - att).max(floor));
            } else {
                prop_assert_eq!(a, b);
            }
        }
    }

    #[test]
    fn more_attenuation_never_raises_a_bin(seed in any::<u64>(), a1 in 0.0f64..40.0, extra in 0.0f64..20.0) {
        let raw = trace(&plant(3_000.0, Some(700.0)), seed, Some(64));
        let lo = apply_gate(&raw, &GateSchedule::constant(a1, eo()).unwrap());
        let hi = apply_gate(&raw, &GateSchedule::constant(a1 + extra, eo()).unwrap());
        let floor = raw.noise_floor_dbm();
        for (h, l) in hi.power_db().iter().zip(lo.power_db()) {
            prop_assert!(h <= l);
            prop_assert!(*h >= floor);
        }
    }

    #[test]
    fn connector_is_found_within_one_bin(z in 300.0f64..4_500.0) {
        let raw = trace(&plant(5_000.0, Some(z)), 0, None);
        let found: Vec<f64> = detect_features(&raw)
            .into_iter()
            .filter(|f| f.kind == ReflectiveKind::Connector)
            .map(|f| f.position_m)
            .collect();
        prop_assert!(found.iter().any(|p| (p - z).abs() <= 10.0), "connector at {} found at {:?}", z, found);
        prop_assert!(found.iter().all(|p| (p - z).abs() <= 10.0), "spurious connectors {:?}", found);
    }

    #[test]
    fn obscuring_window_maps_back_to_its_section(z1 in 0.0f64..12_000.0, span in 0.0f64..800.0) {
        let path = plant(12_800.0, None);
        let (delay, dur) = distance_to_obscuring_window(z1, z1 + span, &path).unwrap();
        let (a, b) = obscuring_window_to_distance(delay, dur, &path);
        // One picosecond of round trip is about 0.1 mm.
        prop_assert!((a - z1).abs() < 1e-3 && (b - z1 - span).abs() < 1e-3, "{} {} -> {} {}", z1, z1 + span, a, b);
    }

    #[test]
    fn rotations_preserve_norm_and_invert(
        axis in prop::array::uniform3(-1.0f64..1.0),
        angle in -10.0f64..10.0,
        s in prop::array::uniform3(-1.0f64..1.0),
    ) {
        prop_assume!(axis.iter().map(|v| v * v).sum::<f64>() > 1e-6);
        prop_assume!(s.iter().map(|v| v * v).sum::<f64>() > 1e-6);
        let r = Rotation3::from_axis_angle(axis, angle).unwrap();
        let v = StokesVector::normalized(s[0], s[1], s[2]).unwrap();
        let w = r.apply(&v);
        prop_assert!((w.norm() - 1.0).abs() < 1e-12);
        let back = r.inverse().apply(&w);
        prop_assert!(back.angle_to(&v) < 1e-7);
    }

    #[test]
    fn codec_round_trips(msg in arb_message()) {
        let bytes = encode_message(&msg);
        prop_assert_eq!(decode_message(&bytes).unwrap(), msg);
    }

    #[test]
    fn mutated_frames_decode_to_an_error_or_a_canonical_message(
        msg in arb_message(),
        flips in prop::collection::vec((any::<prop::sample::Index>(), any::<u8>()), 1..4),
        cut in any::<prop::sample::Index>(),
        truncate in any::<bool>(),
    ) {
        let mut bytes = encode_message(&msg);
        for (i, v) in flips {
            let k = i.index(bytes.len());
            bytes[k] = v;
        }
        if truncate {
            bytes.truncate(cut.index(bytes.len()));
        }
        if let Ok(decoded) = decode_message(&bytes) {
            prop_assert_eq!(encode_message(&decoded), bytes);
        }
    }

    #[test]
    fn random_bytes_never_panic_the_decoder(bytes in prop::collection::vec(any::<u8>(), 0..64)) {
        if let Ok(decoded) = decode_message(&bytes) {
            prop_assert_eq!(encode_message(&decoded), bytes);
        }
    }

    #[test]
    fn each_sequence_number_is_applied_at_most_once(seqs in prop::collection::vec(1u32..8, 1..12)) {
        let mut b = TopologyBuilder::new("msm", SimTime::ZERO);
        let sr = b.add_region("sr", SimTime::ZERO).unwrap();
        let f = b.add_agent("f", sr).unwrap();
        b.link(sr, Topology::MSM, "c0", 2.0, N_GROUP).unwrap();
        b.link(f, sr, "c1", 2.0, N_GROUP).unwrap();
        b.add_path("p", vec![f]).unwrap();
        let mut plane = ControlPlane::new(b.build().unwrap(), vec![device("f", FscdState::AllEnabled)]).unwrap();
        for (k, seq) in seqs.iter().enumerate() {
            let frame = encode_message(&ControlMessage {
                src_layer: Layer::Src,
                dst_id: f.0,
                seq: *seq,
                timestamp_ps_low32: 0,
                body: Body::PolicySet(Policy {
                    path_id: 0,
                    sops_allowed: k % 2 == 0,
                    bls_allowed: k % 3 == 0,
                    obscured_sections: Vec::new(),
                    interrogators: Vec::new(),
                }),
            });
            plane.inject_frame(sr, f, frame, SimTime::from_us(k as i64)).unwrap();
        }
        plane.run_until(SimTime::from_ms(1)).unwrap();
        let mut high = 0;
        let expected = seqs.iter().filter(|&&s| { let new = s > high; high = high.max(s); new }).count();
        let applied = plane.log().iter().filter(|e| matches!(e.kind, ControlLogKind::PolicyApplied { .. })).count();
        prop_assert_eq!(applied, expected);
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(24))]

    #[test]
    fn response_times_are_ordered_by_layer(seed in any::<u64>()) {
        let mut rng = RngStream::new(seed, "ladder");
        let mut b = TopologyBuilder::new("msm", SimTime::from_ps(rng.random_range(0..3_000_000_000)));
        let mut agents = Vec::new();
        let mut devices = Vec::new();
        for r in 0..rng.random_range(1..=3) {
            let src = b.add_region(format!("sr{r}"), SimTime::from_ps(rng.random_range(0..5_000_000))).unwrap();
            b.link(src, Topology::MSM, format!("c-sr{r}"), rng.random_range(0.0..20_000.0), N_GROUP).unwrap();
            for a in 0..rng.random_range(1..=3) {
                let name = format!("f{r}_{a}");
                let id = b.add_agent(name.clone(), src).unwrap();
                b.link(id, src, format!("c-{name}"), rng.random_range(0.0..20_000.0), N_GROUP).unwrap();
                devices.push(device(&name, FscdState::ALL[rng.random_range(0..4)]));
                agents.push(name);
            }
        }
        let mut plane = ControlPlane::new(b.build().unwrap(), devices).unwrap();
        let target = agents[rng.random_range(0..agents.len())].clone();
        plane.schedule_pulse(&target, SimTime::from_ms(1), 0.0, 7).unwrap();
        plane.run_until(SimTime::from_secs_f64(1.0).unwrap()).unwrap();
        let [a, s, m] = Layer::ALL.map(|l| measure_response_time(plane.log(), l).unwrap());
        prop_assert!(a <= s && s <= m, "{} {} {}", a, s, m);
    }

    #[test]
    fn scenario_survives_a_serialize_round_trip(seed in any::<u64>(), duration_ms in 40.0f64..1_000.0, fig1 in any::<bool>()) {
        let name = if fig1 { "paper_fig1.scenario" } else { "paper_fig5.scenario" };
        let p = PathBuf::from(env!("CARGO_MANIFEST_DIR")).join("../../scenarios").join(name);
        let mut s = parse_scenario(&p).unwrap();
        s.seed = seed;
        s.duration_ms = duration_ms;
        let again = parse_scenario_str(&to_json(&s)).unwrap();
        prop_assert_eq!(again, s);
    }
}
