//! Talks to an in-process mock score server over TCP with the wire client.
//!
//! `cargo run --release --example remote_scorer -- [endpoint]`
//!
//! With an endpoint the example connects there instead of spawning a mock.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use texdistill::gradtape::Tensor;
use texdistill::score::mock::{MockMode, MockServer};
use texdistill::score::{predict_x0, RemoteScorer, ScoreModel, ScoreRequest};

fn main() -> Result<(), Box<dyn std::error::Error>> {
    let target = Tensor::from_fn(vec![16, 16, 3], |i| ((i % 7) as f32 / 3.0) - 1.0);
    let (_server, endpoint) = match std::env::args().nth(1) {
        Some(e) => (None, e),
        None => {
            let server = MockServer::spawn(MockMode::Degenerate(target.clone()))?;
            let endpoint = server.endpoint();
            (Some(server), endpoint)
        }
    };

    let mut client = RemoteScorer::connect(&endpoint)?;
    let hello = client.hello().clone();
    println!(
        "{endpoint}: model {:?}, {} schedule entries, max {}x{}",
        hello.model,
        hello.schedule.len(),
        hello.max_height,
        hello.max_width
    );

    let mut rng = ChaCha8Rng::seed_from_u64(0);
    let x = Tensor::from_fn(vec![16, 16, 3], |_| rand::Rng::random_range(&mut rng, -1.0..1.0));
    for t in [0.1, 0.5, 0.9] {
        let eps = client.eps(&ScoreRequest::new(&x, t))?;
        let alpha_bar = client.schedule().alpha_bar(t)?;
        let x0 = predict_x0(&x, alpha_bar, &eps)?;
        println!(
            "t {t}: |eps| {:.3}, denoised rel err to mock target {:.2e}",
            eps.norm(),
            x0.rel_err(&target)?
        );
    }
    Ok(())
}
