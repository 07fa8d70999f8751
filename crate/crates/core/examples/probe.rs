use rstq_core::chain::*;
use rstq_core::dynamics::*;
use rstq_core::pulse::*;
use rstq_core::units::*;
use nalgebra::Complex;

fn main() {
    let spec = ChainSpec::table1(Topology::Direct4);
    let cal = calibrate_x90(&spec, 1, 3, false).unwrap();
    let schedule = &cal.schedule;
    let initial = QuantumState::from_product(ProductState(0b1010), 4);
    for steps in [4096usize, 8192, 16384, 32768] {
        let tau = schedule.total_duration;
        let grid = TimeGrid { t0: 0.0, dt: tau / steps as f64, n_steps: steps };
        let (a, _) = propagate(&spec, schedule, &grid, None, &initial).unwrap();
        let (b, _) = propagate(&spec, schedule, &grid.halved(), None, &initial).unwrap();
        let (QuantumState::Vector(va), QuantumState::Vector(vb)) = (a, b) else { panic!() };
        let diff = (va - vb).iter().map(|c| c.norm()).fold(0.0, f64::max);
        println!("steps {steps}: halving diff = {diff:.3e}  (tau = {:.3} ns, dt = {:.3} ps)", tau*1e9, tau/steps as f64*1e12);
    }
}
