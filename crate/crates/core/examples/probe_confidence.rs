//! Inspects teacher confidence and pseudo-label class balance of trained
//! checkpoints on target images, comparing healthy and collapsed runs.

use segadapt::ops::softmax_channels;
use segadapt::synth::generate_synthetic_pair;
use segadapt::teacher::quality_scalar;
use segadapt::trainer::load_inference_net;

fn main() {
    let pair = generate_synthetic_pair::<f32>(1234, 4, 20, 64).unwrap();
    for path in std::env::args().skip(1) {
        let (cfg, params) = load_inference_net::<f32>(std::path::Path::new(&path), true).unwrap();
        let mut class_counts = [0usize; 4];
        let mut conf_hist = [0usize; 5]; // <0.9, 0.9-0.968, 0.968-0.99, 0.99-0.999, >0.999
        let mut w_base_sum = 0.0;
        for img in &pair.target_train.images {
            let logits = segadapt::net::forward_logits(&cfg, &params, img).unwrap();
            let probs = softmax_channels(&logits).unwrap();
            w_base_sum += quality_scalar(&probs, 0.968).unwrap();
            for y in 0..img.height() {
                for x in 0..img.width() {
                    let pix = probs.pixel(y, x);
                    let (mut best, mut max) = (0usize, pix[0]);
                    for (i, &v) in pix.iter().enumerate() {
                        if v > max {
                            max = v;
                            best = i;
                        }
                    }
                    class_counts[best] += 1;
                    let b = if max < 0.9 {
                        0
                    } else if max < 0.968 {
                        1
                    } else if max < 0.99 {
                        2
                    } else if max < 0.999 {
                        3
                    } else {
                        4
                    };
                    conf_hist[b] += 1;
                }
            }
        }
        let total: usize = class_counts.iter().sum();
        println!("{path}");
        println!(
            "  class fractions: {:?}",
            class_counts.iter().map(|&c| (c as f64 / total as f64 * 100.0).round() / 100.0).collect::<Vec<_>>()
        );
        println!(
            "  confidence bins [<.9, .9-.968, .968-.99, .99-.999, >.999]: {:?}",
            conf_hist.iter().map(|&c| (c as f64 / total as f64 * 100.0).round() / 100.0).collect::<Vec<_>>()
        );
        println!("  mean w_base(0.968) = {:.3}", w_base_sum / pair.target_train.len() as f64);
    }
}
