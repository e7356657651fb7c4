use criterion::{criterion_group, criterion_main, BenchmarkId, Criterion};

use fscd_sim::otdr::{attenuation_sweep, raw_trace, GateTechnology, OtdrConfig};
use fscd_sim::par::Execution;
use fscd_sim::plant::{ConnectorEvent, FibrePath, FibreSegment};
use fscd_sim::sim::{RngStream, SimTime};
use fscd_sim::sop::{DisturbanceProfile, SopExperiment, StokesVector};

fn modes() -> [(&'static str, Execution); 2] {
    [("sequential", Execution::Sequential), ("parallel", Execution::default())]
}

fn sop_ensemble(c: &mut Criterion) {
    let exp = SopExperiment {
        s0: StokesVector::horizontal(),
        sampling_period: SimTime::from_ms(5),
        n_samples: 400,
        disturbance: DisturbanceProfile {
            start: SimTime::from_ms(500),
            end: SimTime::from_ms(1500),
            f_lo_hz: 1.0,
            f_hi_hz: 100.0,
            peak_rate_rad_s: 50.0,
        },
        ambient_rate_rad_s: 0.1,
        scrambler: None,
        threshold_rad_s: 2.0,
    };
    let mut g = c.benchmark_group("sop_ensemble");
    g.sample_size(10);
    for (name, exec) in modes() {
        g.bench_with_input(BenchmarkId::new(name, 100), &exec, |b, &exec| {
            b.iter(|| exp.ensemble(7, "bench", 100, exec).unwrap())
        });
    }
    g.finish();
}

fn otdr_sweep(c: &mut Criterion) {
    let seg = FibreSegment::new(40_000.0, 0.2, 1.468).unwrap();
    let conn = ConnectorEvent { position_m: 1_100.0, insertion_loss_db: 0.3, return_loss_db: 45.0 };
    let path = FibrePath::new("bench", vec![seg], vec![conn], 14.7).unwrap();
    let cfg = OtdrConfig {
        num_averages: Some(4096),
        bin_size_m: 1.0,
        pulse_period: SimTime::from_us(500),
        ..OtdrConfig::default()
    };
    let raw = raw_trace(&cfg, &path, &mut RngStream::new(1, "bench")).unwrap();
    let levels: Vec<f64> = (0..=40).map(f64::from).collect();
    let tech = GateTechnology::eo_switch();
    let mut g = c.benchmark_group("attenuation_sweep");
    for (name, exec) in modes() {
        g.bench_with_input(BenchmarkId::new(name, levels.len()), &exec, |b, &exec| {
            b.iter(|| attenuation_sweep(&raw, &levels, &tech, exec).unwrap())
        });
    }
    g.finish();
}

criterion_group!(benches, sop_ensemble, otdr_sweep);
criterion_main!(benches);
