//! Chamfer and earth mover's distances between point sets, and the 1-NNA
//! two-sample accuracy between lists of sets.
//!
//!     cargo run --release --example point_metrics

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use softflow::metrics::{chamfer, emd, one_nna, Metric};
use softflow::pointflow::{Shape, ShapeFamily};
use softflow::{Result, Tensor};

fn main() -> Result<()> {
    let mut rng = ChaCha8Rng::seed_from_u64(0);
    let chair = Shape::chair().sample(256, &mut rng);
    let other = Shape::chair().sample(256, &mut rng);
    let cross = Shape::cross().sample(256, &mut rng);
    println!("chair vs chair: CD {:.4}  EMD {:.4}", chamfer(&chair, &other)?, emd(&chair, &other)?);
    println!("chair vs cross: CD {:.4}  EMD {:.4}", chamfer(&chair, &cross)?, emd(&chair, &cross)?);

    let mut draw = |family: ShapeFamily, n: usize| -> Vec<Tensor> {
        (0..n).map(|_| family.draw(&mut rng).sample(32, &mut rng)).collect()
    };
    let a = draw(ShapeFamily::Chair, 60);
    let b = draw(ShapeFamily::Chair, 60);
    let c = draw(ShapeFamily::Cross, 60);
    for metric in [Metric::Cd, Metric::Emd] {
        println!(
            "1-NNA {}: chairs vs chairs {:.1}%, chairs vs crosses {:.1}%, chairs vs themselves {:.1}%",
            metric.name(),
            one_nna(&a, &b, metric)?,
            one_nna(&a, &c, metric)?,
            one_nna(&a, &a, metric)?,
        );
    }
    Ok(())
}
