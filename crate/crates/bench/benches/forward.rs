use criterion::{black_box, criterion_group, criterion_main, Criterion};
use lwdinv::em::{layered_coupling, FrequencyConfig, LayeredMedium, MediumProperties};
use lwdinv::formation::{local_three_layer, FormationModel, TrajectoryPoint};
use lwdinv::instrument::{simulate_sets, ChannelSet, Instruments};

fn formation() -> FormationModel {
    FormationModel {
        rho_h: 5.0,
        rho_v: 15.0,
        rho_u: 1.0,
        rho_l: 80.0,
        d_u: 1.2,
        d_l: 2.7,
        beta: 4.0,
    }
}

fn coupling(c: &mut Criterion) {
    let medium = LayeredMedium::new(
        vec![
            MediumProperties::isotropic(1.0),
            MediumProperties::anisotropic(5.0, 15.0),
            MediumProperties::isotropic(80.0),
        ],
        vec![-1.2, 2.7],
    )
    .unwrap();
    let mut g = c.benchmark_group("coupling");
    for (name, f, tx, rx) in [
        ("coaxial_500khz", 500e3, [-0.9, 0.0, 0.1], [0.2, 0.0, 0.15]),
        ("deep_10khz", 10e3, [-5.9, 0.0, 0.3], [5.9, 0.0, -0.4]),
    ] {
        let freq = FrequencyConfig::new(f);
        g.bench_function(name, |b| b.iter(|| layered_coupling(black_box(&medium), tx, rx, &freq).unwrap()));
    }
    g.finish();
}

fn position(c: &mut Criterion) {
    let model = local_three_layer(&formation(), (0.0, 0.0)).unwrap();
    let instruments = Instruments::default();
    let state = TrajectoryPoint {
        horizontal: 0.0,
        tvd: 0.0,
        dip: 88.0,
    };
    c.bench_function("position_all_sets", |b| {
        b.iter(|| simulate_sets(&instruments, black_box(&model), &state, &ChannelSet::ALL).unwrap())
    });
}

criterion_group!(benches, coupling, position);
criterion_main!(benches);
