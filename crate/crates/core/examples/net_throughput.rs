//! Rough forward/backward throughput of the standard network.

use std::time::Instant;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use wlnav::nn::{Arch, ObsBatch, PolicyNet};

fn main() {
    let arch = Arch::standard();
    let mut rng = ChaCha8Rng::seed_from_u64(0);
    let net = PolicyNet::<f32>::init(arch.clone(), &mut rng);
    for &n in &[1usize, 20, 256] {
        let mut b = ObsBatch::<f32>::new(arch.input, arch.proprio);
        for _ in 0..n {
            let m: Vec<f32> = (0..1024).map(|_| rng.gen()).collect();
            let p: Vec<f32> = (0..6).map(|_| rng.gen()).collect();
            b.push_raw(&m, &p);
        }
        let reps = (2000 / n).max(4);
        let t = Instant::now();
        for _ in 0..reps {
            std::hint::black_box(net.forward(&b).unwrap());
        }
        let fwd = t.elapsed().as_secs_f64() / (reps * n) as f64;
        let mut grads = vec![0.0f32; net.param_count()];
        let dl = vec![0.01f32; n * arch.logits_len()];
        let dv = vec![0.01f32; n];
        let t = Instant::now();
        for _ in 0..reps {
            let f = net.forward(&b).unwrap();
            net.backward(&f, &dl, &dv, &mut grads).unwrap();
        }
        let both = t.elapsed().as_secs_f64() / (reps * n) as f64;
        println!("batch {n:4}: forward {:.1} us/sample, forward+backward {:.1} us/sample", fwd * 1e6, both * 1e6);
    }
}
