use shmls::grid::Grid;
use shmls::ir::ScalarType;
use shmls::stencil::interp::ArgValue;

fn main() {
    let src = std::fs::read_to_string("crates/shmls/tests/fixtures/listing1.mlir").unwrap();
    let m = shmls::ir::parse(&src).expect("parse");
    assert!(shmls::ir::verify(&m).is_empty());
    let cfg = shmls::Config::default();
    let lowered = shmls::lower::lower_stencil_to_hls(&m, &cfg).expect("lower");

    let program = shmls::stencil::extract_program(&m).expect("extract");
    let mut input = Grid::zeros(vec![128], ScalarType::F64);
    for (i, v) in input.data.iter_mut().enumerate() {
        *v = (i as f64 * 0.37).sin() * 3.0 + 1.0;
    }
    let args = vec![ArgValue::Grid(input.clone()), ArgValue::None];
    let interp = shmls::stencil::interpret(&program, &args).expect("interpret");

    // Hand oracle: out[i] = g[i-1] + g[i+1] over [1,127).
    let out = &interp.outputs[0].1;
    for i in 0..128usize {
        let want = if (1..127).contains(&i) {
            input.data[i - 1] + input.data[i + 1]
        } else {
            0.0
        };
        assert_eq!(out.data[i].to_bits(), want.to_bits(), "at {i}");
    }
    println!("interpreter matches the hand oracle");

    let (sim_out, trace) = shmls::sim::simulate(&lowered.module, &args, &cfg).expect("simulate");
    assert_eq!(sim_out.len(), 1);
    assert!(sim_out[0].1.bits_equal(out), "simulator != interpreter");
    println!("simulator bit-equal to interpreter");
    println!("{}", trace.summary());
    let ii = shmls::sim::measure_ii(&trace, "compute_0").expect("ii");
    println!("compute II = {ii}");
    assert_eq!(ii, 1);

    // Baseline: no pipelining, sequential schedule.
    let mut base_cfg = cfg.clone();
    base_cfg.pipeline = false;
    let base = shmls::lower::lower_stencil_to_hls(&m, &base_cfg).expect("lower baseline");
    let (bout, btrace) = shmls::sim::simulate(&base.module, &args, &base_cfg).expect("sim baseline");
    assert!(bout[0].1.bits_equal(out), "baseline != interpreter");
    let bii = shmls::sim::measure_ii(&btrace, "compute_0").expect("bii");
    println!("baseline compute II = {bii}, cycles {} vs {}", btrace.total_cycles, trace.total_cycles);
    assert!(bii > 1);
}
