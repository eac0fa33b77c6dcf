use star422::analysis::*;
use star422::circuit::*;
use star422::device::{DeviceModel, T2Choice};
use star422::engine::*;

fn main() {
    let dev_a = DeviceModel::preset("configA").unwrap();
    let dev_b = DeviceModel::preset("configB").unwrap();
    let echo = NoiseOptions { t2: T2Choice::Echo, ..Default::default() };
    let ns: Vec<usize> = (1..=20).collect();

    // Criterion 4 key numbers with echo for the four Z states.
    for state in ["0000", "0011", "0101", "1001", "++++", "+-+-", "++--", "-++-"] {
        let psi = ProductState::parse(state).unwrap();
        let series = run_cycle_series(
            &dev_a, |n| ExperimentKind::Lifetime { psi_in: psi, cycles: n }, &ns,
            |_| 100_000, derive_seed(4, "echo", state.len() as u64 + state.as_bytes()[0] as u64 * 7 + state.as_bytes()[1] as u64), StabOrder::XThenZ, &echo,
            PostselectRule::CleanAndFinalSubspace,
        ).unwrap();
        let fit = acceptance_fit(&acceptance_curve(&series), EncodingKind::Probabilistic).unwrap();
        let f1 = logical_decay_fit(&series, 0, 2.05).unwrap();
        let f2 = logical_decay_fit(&series, 1, 2.05).unwrap();
        println!("{state}: P_S {:.3} P_L {:.3} eps ({:.3}%, {:.3}%) tau ({:.0}, {:.0})",
            fit.p_s, fit.p_l, f1.epsilon*100.0, f2.epsilon*100.0, f1.tau_us, f2.tau_us);
    }

    // Criterion 8 bell noisy first-cycle sigma with echo, config B.
    let bell = build_experiment(&ExperimentKind::BellLifetime { cycles: 4 }, &dev_b, StabOrder::XThenZ).unwrap();
    let noisy = compile_noise(&bell, &dev_b, &echo).unwrap();
    let batch = run_shots(&noisy, 100_000, 82).unwrap();
    let (nx, nz) = detection_fractions(&batch, SigmaVariant::Composed);
    println!("bell noisy first-cycle sigma (echo): X {:.4} Z {:.4}", nx[0], nz[0]);
    // Per-kind breakdown with star for comparison.
    for kind in ErrorKind::ALL {
        let opts = NoiseOptions { disabled: ErrorKind::ALL.iter().copied().filter(|k| *k != kind).collect(), ..Default::default() };
        let c = compile_noise(&bell, &dev_b, &opts).unwrap();
        let b = run_shots(&c, 100_000, 83).unwrap();
        let (kx, kz) = detection_fractions(&b, SigmaVariant::Composed);
        println!("  bell sigma(1) from {} alone (star): X {:.4} Z {:.4}", kind.name(), kx[0], kz[0]);
    }
}
