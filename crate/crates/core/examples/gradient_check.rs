//! Compares the analytic gradients of each network with central finite
//! differences on small instances.
//!
//! ```text
//! cargo run --example gradient_check
//! ```

use rigsync::audio::MelWindow;
use rigsync::neural::{
    audionet_loss, gradient_check, keynet_loss, AudioArch, ConvRecurrentNet, Cvae, CvaeArch, FnObjective, KeyTargets,
};

fn main() -> rigsync::Result<()> {
    let cvae = Cvae::new(CvaeArch {
        n_controllers: 3,
        n_conditions: 6,
        z_dim: 2,
        hidden: vec![6, 4],
    })?;
    let p = cvae.init_params(1);
    let (x, c) = ([0.2, -0.4, 0.7], [0.0, 1.0, 0.0, 0.0, 0.0, 0.0]);
    let eps = [0.3, -1.1];
    let obj = FnObjective::new(cvae.n_params(), |p: &[f64], g: Option<&mut [f64]>| {
        cvae.loss_grad(p, &x, &c, Some(&eps), 0.05, g)
    });
    println!("C-VAE   ({:4} params): max relative error {:.2e}", cvae.n_params(), gradient_check(&obj, &p, usize::MAX, 1)?);

    let net = ConvRecurrentNet::new(AudioArch {
        conv_channels: [3, 3, 2],
        gru_hidden: 4,
        dense_hidden: 5,
        ..AudioArch::new(4, 9, 6)
    })?;
    let p = net.init_params(2);
    let window = MelWindow {
        data: (0..36).map(|i| (i as f64 * 0.37).sin()).collect(),
        mel_bins: 4,
        window_frames: 9,
        center_anim_frame: 0,
    };
    let z = [0.1, -0.2, 0.3, 0.0, 0.5, -0.6];
    let obj = FnObjective::new(net.n_params(), |p: &[f64], g: Option<&mut [f64]>| {
        net.loss_grad(p, &window, |o| audionet_loss(o, &z), g)
    });
    println!("AudioNet ({:4} params): max relative error {:.2e}", net.n_params(), gradient_check(&obj, &p, usize::MAX, 2)?);

    let targets = KeyTargets {
        key_flag: &[1.0, 0.0],
        in_tangent: &[0.4, 0.0],
        out_tangent: &[-0.1, 0.0],
        pos_weight: &[4.0, 2.5],
        tangent_weight: 1.0,
    };
    let obj = FnObjective::new(net.n_params(), |p: &[f64], g: Option<&mut [f64]>| {
        net.loss_grad(p, &window, |o| keynet_loss(o, targets), g)
    });
    println!("KeyNet  ({:4} params): max relative error {:.2e}", net.n_params(), gradient_check(&obj, &p, usize::MAX, 3)?);
    Ok(())
}
