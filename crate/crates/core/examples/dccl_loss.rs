//! The dual-centroid contrastive loss on a few hand-placed latents.
//!
//!     cargo run --example dccl_loss

use sculpt::dccl::{centroids, dccl_loss, DcclConfig};
use sculpt::ndiff::Tensor;

fn main() -> sculpt::Result<()> {
    let cfg = DcclConfig::default();
    let benign = Tensor::from_rows(&[vec![0.0, 0.0], vec![2.0, 2.0]])?;
    for shift in [0.0, 1.0, 1.5811388300841898, 5.0, 10.0] {
        let anomaly = Tensor::from_rows(&[vec![shift, shift], vec![shift + 2.0, shift + 2.0]])?;
        let c = centroids(&benign, &anomaly)?;
        let l = dccl_loss(&benign, &anomaly, &cfg)?;
        println!(
            "shift {shift:>6.3}: |cB - cA|^2 {:>7.3}  l_cb {:.3}  l_ca {:.3}  l_s {:.3}  total {:.3}",
            c.separation_sq(),
            l.l_cb,
            l.l_ca,
            l.l_s,
            l.total
        );
    }
    Ok(())
}
