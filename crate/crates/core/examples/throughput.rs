use star422::circuit::{build_experiment, compile_noise, ExperimentKind, NoiseOptions, ProductState, StabOrder};
use star422::device::DeviceModel;
use star422::engine::run_shots;

fn main() {
    let dev = DeviceModel::preset("configA").unwrap();
    let kind = ExperimentKind::Lifetime { psi_in: ProductState::parse("0000").unwrap(), cycles: 20 };
    let prog = build_experiment(&kind, &dev, StabOrder::XThenZ).unwrap();
    let compiled = compile_noise(&prog, &dev, &NoiseOptions::default()).unwrap();
    let shots = 1_000_000;
    let t0 = std::time::Instant::now();
    let batch = run_shots(&compiled, shots, 42).unwrap();
    let dt = t0.elapsed().as_secs_f64();
    println!("{} shots in {:.3} s -> {:.2e} shots/s", batch.shots, dt, shots as f64 / dt);
}
