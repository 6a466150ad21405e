use std::time::Instant;

use copsd::diffcore::{kernels, Graph};
use copsd::model::{sample_sequence, Binding, Model, ModelConfig, SamplingParams};

fn main() {
    let m = Model::init(ModelConfig::default(), 0).unwrap();
    let tokens: Vec<u32> = (0..45).map(|i| (i * 7 % 120) as u32).collect();
    let n = 50;
    let (mut tf, mut tb) = (0.0, 0.0);
    for _ in 0..n {
        let t = Instant::now();
        let mut g = Graph::new();
        let vars = m.bind(&mut g, Binding::Trainable).unwrap();
        let lp = m.rollout_log_probs(&mut g, &vars, &tokens[..1], &tokens[1..]).unwrap();
        let tgt: Vec<usize> = tokens[1..].iter().map(|&t| t as usize).collect();
        let p = g.pick(lp, &tgt).unwrap();
        let l = g.mean(p).unwrap();
        tf += t.elapsed().as_secs_f64();
        let t = Instant::now();
        g.backward(l).unwrap();
        tb += t.elapsed().as_secs_f64();
    }
    println!("fwd {:.2} ms, bwd {:.2} ms", tf / n as f64 * 1e3, tb / n as f64 * 1e3);
    // raw kernels
    let a = vec![0.5; 45 * 64];
    let b = vec![0.25; 64 * 256];
    let mut o = vec![0.0; 45 * 256];
    let t = Instant::now();
    for _ in 0..200 { kernels::matmul_acc(&a, &b, &mut o, 45, 64, 256); }
    let s = t.elapsed().as_secs_f64() / 200.0;
    println!("matmul 45x64x256: {:.3} ms = {:.2} GFLOP/s", s * 1e3, 2.0 * 45.0 * 64.0 * 256.0 / s / 1e9);
    let b2 = vec![0.25; 256 * 64];
    let mut o2 = vec![0.0; 45 * 64];
    let t = Instant::now();
    for _ in 0..200 { kernels::matmul_nt_acc(&o, &b2, &mut o2, 45, 256, 64); }
    let s = t.elapsed().as_secs_f64() / 200.0;
    println!("matmul_nt: {:.2} GFLOP/s", 2.0 * 45.0 * 64.0 * 256.0 / s / 1e9);
    let mut o3 = vec![0.0; 64 * 256];
    let t = Instant::now();
    for _ in 0..200 { kernels::matmul_tn_acc(&a, &o, &mut o3, 45, 64, 256); }
    let s = t.elapsed().as_secs_f64() / 200.0;
    println!("matmul_tn: {:.2} GFLOP/s", 2.0 * 45.0 * 64.0 * 256.0 / s / 1e9);
    let t = Instant::now();
    let sp = SamplingParams { temperature: 1.0, top_p: 0.95, budget: 40, stop_token: 999 };
    for s in 0..50 {
        sample_sequence(&m, &tokens[..15], &sp, s).unwrap();
    }
    println!("sample 40 tokens: {:.2} ms/seq", t.elapsed().as_secs_f64() / 50.0 * 1e3);
}
