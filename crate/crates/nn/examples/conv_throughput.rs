//! Measures forward+backward convolution throughput on this machine.

use std::time::Instant;

use incogni_nn::{Graph, Tensor};

fn main() {
    for &(c, h, w, n) in &[
        (16usize, 64usize, 32usize, 4usize),
        (32, 64, 32, 4),
        (32, 32, 56, 1),
        (3, 128, 224, 1),
    ] {
        let cout = if c == 3 { 16 } else { c };
        let x = Tensor::<f32>::full(&[n, c, h, w], 0.1);
        let wt = Tensor::<f32>::full(&[cout, c, 3, 3], 0.01);
        let reps = 20;
        let t0 = Instant::now();
        for _ in 0..reps {
            let mut g = Graph::new();
            let xv = g.input_with_grad(x.clone());
            let wv = g.input_with_grad(wt.clone());
            let y = g.conv2d(xv, wv, None, 1, 1);
            let l = g.sum(y);
            let _ = g.backward(l);
        }
        let dt = t0.elapsed().as_secs_f64() / reps as f64;
        let macs = (n * cout * c * 9 * h * w) as f64;
        println!(
            "c={c} {h}x{w} n={n}: {:.2} ms fwd+bwd, {:.1} GFLOP/s",
            dt * 1e3,
            3.0 * 2.0 * macs / dt / 1e9
        );
    }
}
