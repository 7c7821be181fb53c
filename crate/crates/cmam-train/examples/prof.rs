// scratch: profile one sample forward/backward by stage
use cmam_core::ctc::ctc_loss;
use cmam_core::model::*;
use cmam_core::nn::ConvStack;
use cmam_core::params::Binder;
use cmam_core::tensor::Tape;
use cmam_core::memory::MemoryConfig;
use std::time::Instant;

fn main() {
    let cfg = CmamConfig {
        feature: 64, hidden: 64,
        mem: MemoryConfig { slots: 16, width: 16, read_heads: 4 },
        refinements: 1, vocab: 20,
    };
    let stack = ConvStack::default_ocr();
    let store = init_cmam_params(&cfg, &stack, 7);
    let w = 220usize;
    let image: Vec<f64> = (0..32 * w).map(|i| ((i * 37) % 101) as f64 / 101.0).collect();
    let label: Vec<usize> = (0..15).map(|i| (i % 20) + 1).collect();

    // stage timings
    for round in 0..3 {
        let tape = Tape::new();
        let bind = Binder::new(&tape, &store);
        let t0 = Instant::now();
        let img = tape.leaf(&[1, 32, w], image.clone()).unwrap();
        let xs = stack.encode(&tape, &bind, "cnn", img).unwrap();
        let t1 = Instant::now();
        let (ys, rs, _) = run_refinements(&tape, &bind, &cfg, &xs).unwrap();
        let t2 = Instant::now();
        let logits = output_project(&tape, &bind, &cfg, &ys, &rs).unwrap();
        let loss = ctc_loss(&tape, logits, &label).unwrap();
        let t3 = Instant::now();
        tape.backward(loss).unwrap();
        let t4 = Instant::now();
        println!(
            "round {round}: encode {:5.1}ms refine {:5.1}ms head+ctc {:5.1}ms backward {:5.1}ms total {:5.1}ms nodes {}",
            (t1 - t0).as_secs_f64() * 1e3,
            (t2 - t1).as_secs_f64() * 1e3,
            (t3 - t2).as_secs_f64() * 1e3,
            (t4 - t3).as_secs_f64() * 1e3,
            (t4 - t0).as_secs_f64() * 1e3,
            tape.len(),
        );
    }
}
