//! Central-difference check of a convolution's weight gradient and of the
//! whole detection loss on a tiny two-tap network.

use mdcn::kernels::{conv2d, conv2d_grad, ConvGeometry};
use mdcn::multibox::{anchors_for_graph, AnchorConfig};
use mdcn::trainer::{check_gradient, grad_check_network, gradcheck_batch, gradcheck_network, Objective, DEFAULT_STEP};
use mdcn::Tensor;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

fn main() -> mdcn::Result<()> {
    let mut rng = ChaCha8Rng::seed_from_u64(7);
    let mut rand_tensor = |shape: &[usize]| Tensor::from_fn(shape, |_| rng.gen_range(-1.0..1.0));
    let x = rand_tensor(&[2, 3, 7, 7]);
    let w = rand_tensor(&[4, 3, 3, 3]);
    let b = rand_tensor(&[4]);
    let up = rand_tensor(&[2, 4, 4, 4]);
    let g = ConvGeometry::new(2, 1, 1);

    // scalar objective <up, conv(x, w)>, whose gradient is conv2d_grad's dW
    let grads = conv2d_grad(&x, &w, g, &up, false)?;
    let all: Vec<usize> = (0..w.len()).collect();
    let report = check_gradient(
        |wv| {
            let w = Tensor::new(vec![4, 3, 3, 3], wv.to_vec())?;
            let y = conv2d(&x, &w, &b, g)?;
            Ok(y.data().iter().zip(up.data()).map(|(a, b)| a * b).sum())
        },
        w.data(),
        grads.weights.data(),
        &all,
        DEFAULT_STEP,
        1e-4,
    )?;
    println!(
        "conv weights: max relative error {:.2e} over {} entries",
        report.max_rel_error, report.checked
    );

    let mut rng = ChaCha8Rng::seed_from_u64(11);
    let net = gradcheck_network(&mut rng, 16, 3)?;
    let anchors = anchors_for_graph(net.graph(), &AnchorConfig::default())?;
    let batch = gradcheck_batch(&mut rng, 16);
    let report = grad_check_network(&net, &anchors, &batch, &Objective::default(), 8, DEFAULT_STEP, &mut rng)?;
    println!(
        "network loss: max relative error {:.2e} at {} ({} checked, {} skipped at kinks)",
        report.max_rel_error, report.worst, report.checked, report.skipped
    );
    Ok(())
}
