//! Serve both models over TCP and decode through the line protocol; the
//! result is identical to decoding in-process.

use std::net::TcpListener;

use wordfuse::fixtures::adversarial_pair;
use wordfuse::protocol::{serve_tcp, Endpoint, RemoteScorer, Service, DEFAULT_TIMEOUT};
use wordfuse::{decode_online, EnsembleConfig, ModelInput, Scorer};

fn spawn(model: wordfuse::scoring::TableModel) -> std::io::Result<String> {
    let listener = TcpListener::bind("127.0.0.1:0")?;
    let addr = listener.local_addr()?;
    std::thread::spawn(move || serve_tcp(Service::Scorer(&model), listener, Some(1)));
    Ok(format!("tcp://{addr}"))
}

fn main() -> wordfuse::Result<()> {
    let (generator, ranker) = adversarial_pair();
    let g_remote = RemoteScorer::connect(&Endpoint::parse(&spawn(generator.clone())?)?, DEFAULT_TIMEOUT)?;
    let r_remote = RemoteScorer::connect(&Endpoint::parse(&spawn(ranker.clone())?)?, DEFAULT_TIMEOUT)?;
    println!("connected to {} and {}", g_remote.identity(), r_remote.identity());

    let inputs = (&ModelInput::generator(""), &ModelInput::ranker(""));
    let cfg = EnsembleConfig::default();
    let local = decode_online(&generator, &ranker, inputs, &cfg)?;
    let remote = decode_online(&g_remote, &r_remote, inputs, &cfg)?;
    for (l, r) in local.hypotheses.iter().zip(&remote.hypotheses) {
        println!("{:<22} {:.6} {}", r.surface, r.score, if l.score.to_bits() == r.score.to_bits() { "=" } else { "!=" });
    }
    Ok(())
}
